//! Affine min-max quantization of latent tensors.

use crate::error::{Error, Result};
use crate::tensor::{Shape, Tensor};

/// Integer codes plus the affine map back to reals:
/// `value = q_min + code * q_scale`.
#[derive(Clone, Debug, PartialEq)]
pub struct QuantizedLatent {
    pub shape: Shape,
    pub bits: u8,
    pub q_min: f64,
    pub q_scale: f64,
    pub codes: Vec<u16>,
}

fn check_bits(bits: u8) -> Result<()> {
    if !(1..=16).contains(&bits) {
        return Err(Error::Config(format!("quantizer bits {bits} outside 1..=16")));
    }
    Ok(())
}

pub fn max_code(bits: u8) -> u16 {
    ((1u32 << bits) - 1) as u16
}

/// Quantization step for values spanning `[min, max]`. A constant tensor
/// gets step 1 so that the scale stays positive.
pub fn step_size(min: f64, max: f64, bits: u8) -> f64 {
    let range = max - min;
    if range > 0.0 {
        range / max_code(bits) as f64
    } else {
        1.0
    }
}

/// Per-tensor min-max quantization to `bits` bits.
pub fn quantize(latent: &Tensor, bits: u8) -> Result<QuantizedLatent> {
    check_bits(bits)?;
    let q_min = latent.min();
    let q_max = latent.max();
    if !q_min.is_finite() || !q_max.is_finite() {
        return Err(Error::Config("cannot quantize non-finite latent values".into()));
    }
    let q_scale = step_size(q_min, q_max, bits);
    let top = max_code(bits) as f64;
    let codes = latent
        .data()
        .iter()
        .map(|&x| ((x - q_min) / q_scale).round().clamp(0.0, top) as u16)
        .collect();
    Ok(QuantizedLatent {
        shape: latent.shape(),
        bits,
        q_min,
        q_scale,
        codes,
    })
}

pub fn dequantize(q: &QuantizedLatent) -> Tensor {
    let data = q
        .codes
        .iter()
        .map(|&c| q.q_min + c as f64 * q.q_scale)
        .collect();
    Tensor::new(q.shape, data).expect("codes match shape")
}

impl QuantizedLatent {
    pub fn bytes_per_code(&self) -> usize {
        if self.bits <= 8 {
            1
        } else {
            2
        }
    }

    /// Codes as one byte each for `bits <= 8`, otherwise as little-endian
    /// 16-bit words.
    pub fn code_bytes(&self) -> Vec<u8> {
        if self.bits <= 8 {
            self.codes.iter().map(|&c| c as u8).collect()
        } else {
            self.codes.iter().flat_map(|c| c.to_le_bytes()).collect()
        }
    }

    /// Inverse of [`QuantizedLatent::code_bytes`].
    pub fn from_code_bytes(shape: Shape, bits: u8, q_min: f64, q_scale: f64, bytes: &[u8]) -> Result<Self> {
        check_bits(bits)?;
        let n = shape.numel();
        let codes: Vec<u16> = if bits <= 8 {
            if bytes.len() != n {
                return Err(Error::format("latent payload", format!("{} bytes for {n} codes", bytes.len())));
            }
            bytes.iter().map(|&b| b as u16).collect()
        } else {
            if bytes.len() != 2 * n {
                return Err(Error::format("latent payload", format!("{} bytes for {n} 16-bit codes", bytes.len())));
            }
            bytes.chunks_exact(2).map(|c| u16::from_le_bytes([c[0], c[1]])).collect()
        };
        let top = max_code(bits);
        if let Some(c) = codes.iter().find(|&&c| c > top) {
            return Err(Error::format("latent payload", format!("code {c} exceeds {bits}-bit range")));
        }
        if !(q_scale > 0.0) || !q_scale.is_finite() || !q_min.is_finite() {
            return Err(Error::format("latent payload", format!("bad affine map ({q_min}, {q_scale})")));
        }
        Ok(QuantizedLatent {
            shape,
            bits,
            q_min,
            q_scale,
            codes,
        })
    }
}
