//! Binary checkpoint format.
//!
//! ```text
//! offset  size  field
//! 0       4     magic "XRCW"
//! 4       1     format version (1)
//! 5       4     patch size N            u32 LE
//! 9       4     beta                    u32 LE
//! 13      4     front width             u32 LE
//! 17      12    encoder ConvLSTM widths 3 x u32 LE
//! 29      4     decoder width           u32 LE
//! 33      4     recurrence steps T      u32 LE
//! 37      1     quantizer bits          u8
//! 38      1     flags (bit 0: peephole) u8
//! 39      4*P   parameters, declaration order, f32 LE
//! 39+4*P  4     CRC-32 (IEEE) of bytes 5 .. 39+4*P
//! ```
//!
//! Parameters are computed in `f64` and stored rounded to `f32`.

use std::fs;
use std::path::Path;

use sha2::{Digest, Sha256};

use crate::codec::{CodecConfig, CodecModel};
use crate::error::{Error, Result};
use crate::tensor::Tensor;

pub const MAGIC: &[u8; 4] = b"XRCW";
pub const VERSION: u8 = 1;
const CONFIG_END: usize = 39;
const FLAG_PEEPHOLE: u8 = 1;

fn put_u32(out: &mut Vec<u8>, v: usize) -> Result<()> {
    let v = u32::try_from(v).map_err(|_| Error::Config(format!("{v} does not fit in 32 bits")))?;
    out.extend_from_slice(&v.to_le_bytes());
    Ok(())
}

pub fn to_bytes(model: &CodecModel) -> Result<Vec<u8>> {
    let c = model.config();
    let mut out = Vec::with_capacity(CONFIG_END + 4 * model.params().count() + 4);
    out.extend_from_slice(MAGIC);
    out.push(VERSION);
    for v in [c.patch_size, c.beta, c.front_width]
        .into_iter()
        .chain(c.rnn_widths)
        .chain([c.decoder_width, c.steps])
    {
        put_u32(&mut out, v)?;
    }
    out.push(c.quantizer_bits);
    out.push(if c.peephole { FLAG_PEEPHOLE } else { 0 });
    for t in model.params().tensors() {
        for &v in t.data() {
            out.extend_from_slice(&(v as f32).to_le_bytes());
        }
    }
    let crc = crc32fast::hash(&out[5..]);
    out.extend_from_slice(&crc.to_le_bytes());
    Ok(out)
}

pub fn from_bytes(bytes: &[u8]) -> Result<CodecModel> {
    if bytes.len() < CONFIG_END + 4 {
        return Err(Error::format("checkpoint", format!("truncated at {} bytes", bytes.len())));
    }
    if &bytes[..4] != MAGIC {
        return Err(Error::format("checkpoint", "bad magic"));
    }
    if bytes[4] != VERSION {
        return Err(Error::format("checkpoint", format!("unsupported version {}", bytes[4])));
    }
    let body_end = bytes.len() - 4;
    let stored = u32::from_le_bytes(bytes[body_end..].try_into().unwrap());
    let actual = crc32fast::hash(&bytes[5..body_end]);
    if stored != actual {
        return Err(Error::format(
            "checkpoint",
            format!("checksum mismatch (stored {stored:08x}, computed {actual:08x})"),
        ));
    }
    let u = |i: usize| u32::from_le_bytes(bytes[5 + 4 * i..9 + 4 * i].try_into().unwrap()) as usize;
    let flags = bytes[38];
    let config = CodecConfig {
        patch_size: u(0),
        beta: u(1),
        front_width: u(2),
        rnn_widths: [u(3), u(4), u(5)],
        decoder_width: u(6),
        steps: u(7),
        quantizer_bits: bytes[37],
        peephole: flags & FLAG_PEEPHOLE != 0,
    };
    config.validate()?;

    // Shapes come from a freshly declared model of the same config.
    let template = CodecModel::build(config, 0)?;
    let expected = CONFIG_END + 4 * template.params().count() + 4;
    if bytes.len() != expected {
        return Err(Error::format(
            "checkpoint",
            format!("{} bytes, config implies {expected}", bytes.len()),
        ));
    }
    let mut floats = bytes[CONFIG_END..body_end]
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes(c.try_into().unwrap()) as f64);
    let mut tensors = Vec::with_capacity(template.params().len());
    for t in template.params().tensors() {
        let data: Vec<f64> = floats.by_ref().take(t.len()).collect();
        tensors.push(Tensor::new(t.shape(), data)?);
    }
    CodecModel::from_parameters(config, tensors)
}

pub fn save(model: &CodecModel, path: impl AsRef<Path>) -> Result<()> {
    fs::write(path, to_bytes(model)?)?;
    Ok(())
}

pub fn load(path: impl AsRef<Path>) -> Result<CodecModel> {
    from_bytes(&fs::read(path)?)
}

/// SHA-256 of the serialized checkpoint. Containers record it so that a
/// file can only be decoded with the network that produced it.
pub fn fingerprint(model: &CodecModel) -> Result<[u8; 32]> {
    Ok(Sha256::digest(to_bytes(model)?).into())
}
