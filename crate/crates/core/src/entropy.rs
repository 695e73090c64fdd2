//! Lossless entropy stage: raw DEFLATE streams (RFC 1951).

use flate2::{Compress, Compression, Decompress, FlushCompress, FlushDecompress, Status};

use crate::error::{Error, Result};

pub fn entropy_encode(bytes: &[u8]) -> Vec<u8> {
    let mut enc = Compress::new(Compression::best(), false);
    let mut out = Vec::with_capacity(bytes.len() / 2 + 64);
    loop {
        let consumed = enc.total_in() as usize;
        if out.capacity() - out.len() < 64 {
            out.reserve(out.capacity().max(256));
        }
        let status = enc
            .compress_vec(&bytes[consumed..], &mut out, FlushCompress::Finish)
            .expect("in-memory deflate cannot fail");
        if status == Status::StreamEnd {
            return out;
        }
    }
}

/// Inverse of [`entropy_encode`]. Malformed or truncated streams report the
/// input offset the decoder had reached.
pub fn entropy_decode(bytes: &[u8]) -> Result<Vec<u8>> {
    let mut dec = Decompress::new(false);
    let mut out = Vec::with_capacity(bytes.len() * 4 + 64);
    loop {
        let consumed = dec.total_in() as usize;
        if out.capacity() - out.len() < 64 {
            out.reserve(out.capacity().max(256));
        }
        let before = (dec.total_in(), dec.total_out());
        let status = dec
            .decompress_vec(&bytes[consumed..], &mut out, FlushDecompress::None)
            .map_err(|e| Error::CorruptStream {
                offset: dec.total_in() as usize,
                reason: e.to_string(),
            })?;
        match status {
            Status::StreamEnd => {
                let used = dec.total_in() as usize;
                if used != bytes.len() {
                    return Err(Error::CorruptStream {
                        offset: used,
                        reason: format!("{} trailing bytes after end of stream", bytes.len() - used),
                    });
                }
                return Ok(out);
            }
            Status::Ok | Status::BufError => {
                let stalled = (dec.total_in(), dec.total_out()) == before;
                if stalled && out.len() < out.capacity() {
                    return Err(Error::CorruptStream {
                        offset: dec.total_in() as usize,
                        reason: "stream truncated".into(),
                    });
                }
            }
        }
    }
}
