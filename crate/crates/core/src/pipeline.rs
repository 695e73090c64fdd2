//! End-to-end image compression: tile, encode, quantize, entropy-code.

use std::fs;
use std::path::Path;

use rayon::prelude::*;

use crate::checkpoint;
use crate::codec::CodecModel;
use crate::container::{Container, TileRecord};
use crate::entropy::{entropy_decode, entropy_encode};
use crate::error::{Error, Result};
use crate::image::{read_image, write_image, GrayImage};
use crate::quantize::{dequantize, quantize, QuantizedLatent};
use crate::tiling::{padded_dims, tile_image, untile, Tile, TileGrid};

/// Environment variable capping the worker threads used for tiles.
pub const THREADS_ENV: &str = "XRC_THREADS";

/// Sizes the global thread pool from [`THREADS_ENV`] when it is set. Has no
/// effect once the pool is running.
pub fn configure_threads() {
    if let Some(n) = std::env::var(THREADS_ENV).ok().and_then(|v| v.parse::<usize>().ok()) {
        let _ = rayon::ThreadPoolBuilder::new().num_threads(n.max(1)).build_global();
    }
}

/// Encodes and quantizes one `N x N` patch.
pub fn encode_tile(model: &CodecModel, tile: &GrayImage) -> Result<QuantizedLatent> {
    let latent = model.encode(&tile.to_tensor())?;
    quantize(&latent, model.config().quantizer_bits)
}

/// Dequantizes and decodes one latent back to 8-bit pixels.
pub fn decode_tile(model: &CodecModel, q: &QuantizedLatent) -> Result<GrayImage> {
    let image = model.decode(&dequantize(q))?;
    GrayImage::from_tensor(&image, 0)
}

fn pack(q: &QuantizedLatent) -> TileRecord {
    TileRecord {
        q_min: q.q_min,
        q_scale: q.q_scale,
        payload: entropy_encode(&q.code_bytes()),
    }
}

fn unpack(model: &CodecModel, record: &TileRecord) -> Result<QuantizedLatent> {
    let config = model.config();
    let codes = entropy_decode(&record.payload)?;
    QuantizedLatent::from_code_bytes(
        config.latent_shape(1),
        config.quantizer_bits,
        record.q_min,
        record.q_scale,
        &codes,
    )
}

/// Full codec round trip of one patch: the reconstruction and the tile
/// record that would be stored for it.
pub fn roundtrip_tile(model: &CodecModel, tile: &GrayImage) -> Result<(GrayImage, TileRecord)> {
    let record = pack(&encode_tile(model, tile)?);
    let recon = decode_tile(model, &unpack(model, &record)?)?;
    Ok((recon, record))
}

/// Compresses an 8-bit image of any size with the model's patch size as
/// the tile size.
pub fn compress_image(model: &CodecModel, image: &GrayImage) -> Result<Container> {
    let config = model.config();
    let n = config.patch_size;
    let (pw, ph) = padded_dims(image.width(), image.height(), n);
    let padded;
    let source = if (pw, ph) == (image.width(), image.height()) {
        image
    } else {
        padded = image.pad_replicate(pw, ph)?;
        &padded
    };
    let grid = tile_image(source, n)?;
    let tiles = grid
        .tiles
        .par_iter()
        .map(|t| encode_tile(model, &t.image).map(|q| pack(&q)))
        .collect::<Result<Vec<_>>>()?;
    let narrow = |v: usize, what: &str| {
        u16::try_from(v).map_err(|_| Error::Config(format!("{what} {v} does not fit the container header")))
    };
    let dim = |v: usize| u32::try_from(v).map_err(|_| Error::Image(format!("dimension {v} too large")));
    Ok(Container {
        height: dim(image.height())?,
        width: dim(image.width())?,
        tile_size: narrow(n, "tile size")?,
        beta: narrow(config.beta, "beta")?,
        bits: config.quantizer_bits,
        model_checksum: checkpoint::fingerprint(model)?,
        tiles,
    })
}

/// Checks that `container` was produced by `model`.
pub fn check_model(model: &CodecModel, container: &Container) -> Result<()> {
    let c = model.config();
    if container.model_checksum != checkpoint::fingerprint(model)? {
        return Err(Error::ModelMismatch("container was written by a different checkpoint".into()));
    }
    if container.tile_size as usize != c.patch_size
        || container.beta as usize != c.beta
        || container.bits != c.quantizer_bits
    {
        return Err(Error::ModelMismatch(format!(
            "container N={} beta={} bits={} vs checkpoint N={} beta={} bits={}",
            container.tile_size, container.beta, container.bits, c.patch_size, c.beta, c.quantizer_bits
        )));
    }
    Ok(())
}

pub fn decompress_container(model: &CodecModel, container: &Container) -> Result<GrayImage> {
    check_model(model, container)?;
    let (rows, cols) = container.grid();
    let n = model.config().patch_size;
    let images = container
        .tiles
        .par_iter()
        .map(|record| decode_tile(model, &unpack(model, record)?))
        .collect::<Result<Vec<_>>>()?;
    let grid = TileGrid {
        size: n,
        rows,
        cols,
        tiles: images
            .into_iter()
            .enumerate()
            .map(|(i, image)| Tile {
                row: i / cols,
                col: i % cols,
                image,
            })
            .collect(),
    };
    let full = untile(&grid)?;
    full.crop(0, 0, container.width as usize, container.height as usize)
}

/// Outcome of [`compress_file`].
#[derive(Clone, Debug)]
pub struct CompressSummary {
    pub width: usize,
    pub height: usize,
    pub tiles: usize,
    pub container_bytes: usize,
    /// Latent bytes before the entropy stage, summed over tiles.
    pub raw_latent_bytes: usize,
    pub nominal_ratio: f64,
    pub effective_ratio: f64,
}

pub fn compress_file(input: impl AsRef<Path>, model: &CodecModel, output: impl AsRef<Path>) -> Result<CompressSummary> {
    let image = read_image(input)?;
    let container = compress_image(model, &image)?;
    let bytes = container.to_bytes()?;
    fs::write(output, &bytes)?;
    Ok(CompressSummary {
        width: image.width(),
        height: image.height(),
        tiles: container.tiles.len(),
        container_bytes: bytes.len(),
        raw_latent_bytes: container.tiles.len() * model.config().raw_latent_bytes(),
        nominal_ratio: container.nominal_ratio(),
        effective_ratio: container.effective_ratio(),
    })
}

pub fn decompress_file(input: impl AsRef<Path>, model: &CodecModel, output: impl AsRef<Path>) -> Result<GrayImage> {
    let container = Container::parse(&fs::read(input)?)?;
    let image = decompress_container(model, &container)?;
    write_image(&image, output)?;
    Ok(image)
}

/// [`compress_file`] with the model loaded from a checkpoint file.
pub fn compress_with_checkpoint(
    input: impl AsRef<Path>,
    checkpoint_path: impl AsRef<Path>,
    output: impl AsRef<Path>,
) -> Result<CompressSummary> {
    let model = checkpoint::load(checkpoint_path)?;
    compress_file(input, &model, output)
}

/// [`decompress_file`] with the model loaded from a checkpoint file.
pub fn decompress_with_checkpoint(
    input: impl AsRef<Path>,
    checkpoint_path: impl AsRef<Path>,
    output: impl AsRef<Path>,
) -> Result<GrayImage> {
    let model = checkpoint::load(checkpoint_path)?;
    decompress_file(input, &model, output)
}
