//! Corpus-level evaluation of the quantized codec.

use std::fmt::Write as _;

use rayon::prelude::*;

use crate::checkpoint;
use crate::codec::{compression_ratio, CodecModel};
use crate::container::TILE_OVERHEAD;
use crate::corpus::{Corpus, Split};
use crate::error::{Error, Result};
use crate::image::GrayImage;
use crate::metrics::{format_db, psnr, ssim, Plane, SsimParams};
use crate::pipeline::roundtrip_tile;

#[derive(Clone, Debug, PartialEq)]
pub struct EvalRecord {
    pub name: String,
    pub ssim: f64,
    pub psnr_db: f64,
    pub nominal_ratio: f64,
    /// Patch bytes over its stored tile record (entropy-coded codes plus
    /// the per-tile affine parameters and length).
    pub effective_ratio: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct EvalReport {
    /// Leading bytes of the checkpoint fingerprint, in hex.
    pub config_id: String,
    pub records: Vec<EvalRecord>,
    pub mean_ssim: f64,
    pub mean_psnr: f64,
    pub nominal_ratio: f64,
    pub mean_effective_ratio: f64,
}

fn mean(values: impl Iterator<Item = f64>) -> f64 {
    let (sum, n) = values.fold((0.0, 0usize), |(s, n), v| (s + v, n + 1));
    if n == 0 {
        f64::NAN
    } else {
        sum / n as f64
    }
}

impl EvalReport {
    pub fn from_records(config_id: String, nominal_ratio: f64, records: Vec<EvalRecord>) -> Self {
        EvalReport {
            config_id,
            mean_ssim: mean(records.iter().map(|r| r.ssim)),
            mean_psnr: mean(records.iter().map(|r| r.psnr_db)),
            mean_effective_ratio: mean(records.iter().map(|r| r.effective_ratio)),
            nominal_ratio,
            records,
        }
    }

    /// One tab-separated line per image:
    /// `path  ssim  psnr_db  nominal_ratio  effective_ratio`.
    pub fn to_lines(&self) -> String {
        let mut out = String::new();
        for r in &self.records {
            writeln!(
                out,
                "{}\t{:.6}\t{}\t{:.4}\t{:.4}",
                r.name,
                r.ssim,
                format_db(r.psnr_db),
                r.nominal_ratio,
                r.effective_ratio
            )
            .unwrap();
        }
        out
    }

    pub fn to_table(&self) -> String {
        let width = self.records.iter().map(|r| r.name.len()).max().unwrap_or(4).max(4);
        let mut out = String::new();
        writeln!(out, "model {}  nominal ratio {:.2}", self.config_id, self.nominal_ratio).unwrap();
        writeln!(out, "{:<width$}  {:>8}  {:>10}  {:>9}", "path", "SSIM", "PSNR (dB)", "eff.ratio").unwrap();
        for r in &self.records {
            writeln!(
                out,
                "{:<width$}  {:>8.4}  {:>10}  {:>9.2}",
                r.name,
                r.ssim,
                format_db(r.psnr_db),
                r.effective_ratio
            )
            .unwrap();
        }
        writeln!(
            out,
            "{:<width$}  {:>8.4}  {:>10}  {:>9.2}",
            "mean",
            self.mean_ssim,
            format_db(self.mean_psnr),
            self.mean_effective_ratio
        )
        .unwrap();
        out
    }
}

/// Scores an already reconstructed patch against its original.
pub fn score(original: &GrayImage, reconstruction: &GrayImage, params: &SsimParams) -> Result<(f64, f64)> {
    let a = Plane::from(original);
    let b = Plane::from(reconstruction);
    Ok((ssim(&a, &b, params)?, psnr(&a, &b, 255.0)?))
}

/// Runs every patch through encode, quantize, entropy coding, dequantize and
/// decode, and scores the 8-bit reconstruction against the original.
pub fn evaluate(model: &CodecModel, patches: &[(String, GrayImage)], params: &SsimParams) -> Result<EvalReport> {
    let n = model.config().patch_size;
    if let Some((name, p)) = patches.iter().find(|(_, p)| p.width() != n || p.height() != n) {
        return Err(Error::ModelMismatch(format!(
            "{name} is {}x{}, checkpoint expects {n}x{n} patches",
            p.width(),
            p.height()
        )));
    }
    let nominal = compression_ratio(model.config());
    let records = patches
        .par_iter()
        .map(|(name, patch)| {
            let (recon, record) = roundtrip_tile(model, patch)?;
            let (s, p) = score(patch, &recon, params)?;
            Ok(EvalRecord {
                name: name.clone(),
                ssim: s,
                psnr_db: p,
                nominal_ratio: nominal,
                effective_ratio: (n * n) as f64 / (TILE_OVERHEAD + record.payload.len()) as f64,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let fp = checkpoint::fingerprint(model)?;
    let id: String = fp[..6].iter().map(|b| format!("{b:02x}")).collect();
    Ok(EvalReport::from_records(id, nominal, records))
}

/// Every full `n x n` tile of every image in `split`, named
/// `path@row,col`. Partial tiles at the right and bottom edges are left out
/// so that no patch contains padding.
pub fn corpus_patches(corpus: &Corpus, split: Split, n: usize) -> Result<Vec<(String, GrayImage)>> {
    let mut out = Vec::new();
    for i in corpus.eligible(split, n)? {
        let record = &corpus.index().records()[i];
        let img = corpus.image(i);
        for row in 0..img.height() / n {
            for col in 0..img.width() / n {
                let name = format!("{}@{row},{col}", record.path.display());
                out.push((name, img.crop(col * n, row * n, n, n)?));
            }
        }
    }
    Ok(out)
}
