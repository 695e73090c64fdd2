//! Synthetic radiograph-like images for tests and desk-scale training.
//!
//! Each image is smooth low-frequency background plus two dark elliptical
//! fields, a brighter vertical band and a set of thin curved bright lines.

use std::f64::consts::PI;
use std::fs;
use std::path::Path;

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::corpus::{CorpusIndex, CorpusRecord};
use crate::error::Result;
use crate::image::{write_image, GrayImage};

struct Wave {
    fx: f64,
    fy: f64,
    phase: f64,
    amp: f64,
}

struct Ellipse {
    cx: f64,
    cy: f64,
    rx: f64,
    ry: f64,
    depth: f64,
}

/// A `width x height` image, fully determined by `seed`.
pub fn radiograph(width: usize, height: usize, seed: u64) -> GrayImage {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let waves: Vec<Wave> = (0..6)
        .map(|_| Wave {
            fx: rng.gen_range(0.2..2.5),
            fy: rng.gen_range(0.2..2.5),
            phase: rng.gen_range(0.0..2.0 * PI),
            amp: rng.gen_range(0.02..0.06),
        })
        .collect();
    let ellipses: Vec<Ellipse> = [0.3, 0.7]
        .iter()
        .map(|&cx| Ellipse {
            cx: cx + rng.gen_range(-0.05..0.05),
            cy: rng.gen_range(0.4..0.6),
            rx: rng.gen_range(0.12..0.2),
            ry: rng.gen_range(0.2..0.32),
            depth: rng.gen_range(0.15..0.3),
        })
        .collect();
    let spine_x = rng.gen_range(0.45..0.55);
    let spine_w = rng.gen_range(0.04..0.08);
    let ribs: Vec<(f64, f64)> = (0..rng.gen_range(3..7))
        .map(|_| (rng.gen_range(0.1..0.9), rng.gen_range(0.2..0.6)))
        .collect();
    let base = rng.gen_range(0.45..0.6);

    GrayImage::from_fn(width, height, |x, y| {
        let u = (x as f64 + 0.5) / width as f64;
        let v = (y as f64 + 0.5) / height as f64;
        let mut val = base;
        for w in &waves {
            val += w.amp * (2.0 * PI * (w.fx * u + w.fy * v) + w.phase).sin();
        }
        for e in &ellipses {
            let d = ((u - e.cx) / e.rx).powi(2) + ((v - e.cy) / e.ry).powi(2);
            // soft-edged dark field
            val -= e.depth / (1.0 + (8.0 * (d - 1.0)).exp());
        }
        let s = ((u - spine_x) / spine_w).powi(2);
        val += 0.2 * (-s).exp();
        for &(y0, bend) in &ribs {
            let curve = y0 + bend * (u - 0.5).powi(2);
            let dist = (v - curve).abs() * height as f64;
            val += 0.08 * (-dist * dist / 4.0).exp();
        }
        crate::image::to_u8(val)
    })
}

/// Writes `patients x images_per_patient` PGM images into `dir` together
/// with an `index.tsv` assigning whole patients to splits. Returns the index.
pub fn write_corpus(
    dir: impl AsRef<Path>,
    patients: usize,
    images_per_patient: usize,
    size: usize,
    seed: u64,
) -> Result<CorpusIndex> {
    let dir = dir.as_ref();
    fs::create_dir_all(dir)?;
    let ids: Vec<String> = (0..patients).map(|p| format!("patient{p:04}")).collect();
    let splits = crate::corpus::assign_splits(&ids, 0.7, 0.15, seed);
    let mut records = Vec::new();
    for (p, id) in ids.iter().enumerate() {
        for k in 0..images_per_patient {
            let name = format!("{id}_{k:02}.pgm");
            let img_seed = seed
                .wrapping_mul(0x9e37_79b9_7f4a_7c15)
                .wrapping_add((p * images_per_patient + k) as u64);
            write_image(&radiograph(size, size, img_seed), dir.join(&name))?;
            records.push(CorpusRecord {
                path: name.into(),
                patient: id.clone(),
                split: splits[id],
            });
        }
    }
    let index = CorpusIndex::new(records)?;
    fs::write(dir.join("index.tsv"), index.to_text())?;
    Ok(index)
}
