//! The `.xrc` compressed image container.
//!
//! All integers are little-endian.
//!
//! ```text
//! offset  size  field
//! 0       4     magic "XRC1"
//! 4       1     version (1)
//! 5       4     original height            u32
//! 9       4     original width             u32
//! 13      2     tile size N                u16
//! 15      2     beta                       u16
//! 17      1     quantizer bits             u8
//! 18      2     tile count                 u16
//! 20      32    model checksum (SHA-256 of the checkpoint)
//! 52      ...   tile records, row-major:
//!                 q_min    f64
//!                 q_scale  f64
//!                 length   u32
//!                 payload  `length` bytes of raw DEFLATE over the codes
//! ```
//!
//! Images whose sides are not multiples of `N` are padded on the right and
//! bottom by edge replication before tiling; the grid is
//! `ceil(height / N) x ceil(width / N)` and decoding crops back to the
//! original size.

use crate::error::{Error, Result};
use crate::tiling::padded_dims;

pub const MAGIC: &[u8; 4] = b"XRC1";
pub const VERSION: u8 = 1;
pub const HEADER_LEN: usize = 52;
/// Bytes of a tile record besides its payload.
pub const TILE_OVERHEAD: usize = 20;

#[derive(Clone, Debug, PartialEq)]
pub struct TileRecord {
    pub q_min: f64,
    pub q_scale: f64,
    pub payload: Vec<u8>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Container {
    pub height: u32,
    pub width: u32,
    pub tile_size: u16,
    pub beta: u16,
    pub bits: u8,
    pub model_checksum: [u8; 32],
    pub tiles: Vec<TileRecord>,
}

impl Container {
    /// Tile grid `(rows, cols)` implied by the header.
    pub fn grid(&self) -> (usize, usize) {
        let n = self.tile_size.max(1) as usize;
        let (w, h) = padded_dims(self.width as usize, self.height as usize, n);
        (h / n, w / n)
    }

    pub fn encoded_len(&self) -> usize {
        HEADER_LEN
            + self
                .tiles
                .iter()
                .map(|t| TILE_OVERHEAD + t.payload.len())
                .sum::<usize>()
    }

    /// `256 / beta` generalized to other quantizer depths:
    /// `N^2 * 8 / ((N/16)^2 * beta * bits)`.
    pub fn nominal_ratio(&self) -> f64 {
        2048.0 / (self.beta as f64 * self.bits as f64)
    }

    /// Original 8-bit pixel bytes over container bytes.
    pub fn effective_ratio(&self) -> f64 {
        (self.width as f64 * self.height as f64) / self.encoded_len() as f64
    }

    fn check(&self) -> Result<()> {
        if self.height == 0 || self.width == 0 {
            return Err(Error::format("container", "zero image dimension"));
        }
        if self.tile_size == 0 || self.tile_size % 16 != 0 {
            return Err(Error::format("container", format!("tile size {}", self.tile_size)));
        }
        if !(1..=256).contains(&self.beta) || !(1..=16).contains(&self.bits) {
            return Err(Error::format(
                "container",
                format!("beta {} / bits {} out of range", self.beta, self.bits),
            ));
        }
        let (rows, cols) = self.grid();
        if rows * cols != self.tiles.len() {
            return Err(Error::format(
                "container",
                format!("{} tiles for a {rows}x{cols} grid", self.tiles.len()),
            ));
        }
        Ok(())
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        self.check()?;
        let count = u16::try_from(self.tiles.len())
            .map_err(|_| Error::format("container", format!("{} tiles exceed u16", self.tiles.len())))?;
        let mut out = Vec::with_capacity(self.encoded_len());
        out.extend_from_slice(MAGIC);
        out.push(VERSION);
        out.extend_from_slice(&self.height.to_le_bytes());
        out.extend_from_slice(&self.width.to_le_bytes());
        out.extend_from_slice(&self.tile_size.to_le_bytes());
        out.extend_from_slice(&self.beta.to_le_bytes());
        out.push(self.bits);
        out.extend_from_slice(&count.to_le_bytes());
        out.extend_from_slice(&self.model_checksum);
        for t in &self.tiles {
            out.extend_from_slice(&t.q_min.to_le_bytes());
            out.extend_from_slice(&t.q_scale.to_le_bytes());
            let len = u32::try_from(t.payload.len())
                .map_err(|_| Error::format("container", "tile payload exceeds u32"))?;
            out.extend_from_slice(&len.to_le_bytes());
            out.extend_from_slice(&t.payload);
        }
        Ok(out)
    }

    /// Parses and validates a container. The magic and version are checked
    /// before anything else is read.
    pub fn parse(bytes: &[u8]) -> Result<Container> {
        let mut r = Reader { bytes, pos: 0 };
        if r.take(4)? != MAGIC {
            return Err(Error::format("container", "bad magic (not an XRC1 file)"));
        }
        let version = r.u8()?;
        if version != VERSION {
            return Err(Error::format("container", format!("unsupported version {version}")));
        }
        let height = r.u32()?;
        let width = r.u32()?;
        let tile_size = r.u16()?;
        let beta = r.u16()?;
        let bits = r.u8()?;
        let count = r.u16()? as usize;
        let model_checksum: [u8; 32] = r.take(32)?.try_into().unwrap();
        let mut tiles = Vec::with_capacity(count);
        for _ in 0..count {
            let q_min = r.f64()?;
            let q_scale = r.f64()?;
            let len = r.u32()? as usize;
            tiles.push(TileRecord {
                q_min,
                q_scale,
                payload: r.take(len)?.to_vec(),
            });
        }
        if r.pos != bytes.len() {
            return Err(Error::format(
                "container",
                format!("{} trailing bytes at offset {}", bytes.len() - r.pos, r.pos),
            ));
        }
        let c = Container {
            height,
            width,
            tile_size,
            beta,
            bits,
            model_checksum,
            tiles,
        };
        c.check()?;
        Ok(c)
    }
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len()).ok_or_else(|| {
            Error::format(
                "container",
                format!("truncated: need {n} bytes at offset {}, have {}", self.pos, self.bytes.len() - self.pos),
            )
        })?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }

    fn u16(&mut self) -> Result<u16> {
        Ok(u16::from_le_bytes(self.take(2)?.try_into().unwrap()))
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
}
