//! PSNR and SSIM.
//!
//! Both operate on [`Plane`]s of `f64` samples. Images stored as 8 bits are
//! compared on the 0..=255 scale with `max_value = 255`.

use crate::error::{Error, Result};
use crate::image::GrayImage;

/// A single-channel image of real samples.
#[derive(Clone, Debug, PartialEq)]
pub struct Plane {
    pub width: usize,
    pub height: usize,
    pub data: Vec<f64>,
}

impl Plane {
    pub fn new(width: usize, height: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != width * height || width == 0 || height == 0 {
            return Err(Error::Image(format!("{} samples for a {width}x{height} plane", data.len())));
        }
        Ok(Plane { width, height, data })
    }

    pub fn get(&self, x: usize, y: usize) -> f64 {
        self.data[y * self.width + x]
    }
}

impl From<&GrayImage> for Plane {
    fn from(img: &GrayImage) -> Self {
        Plane {
            width: img.width(),
            height: img.height(),
            data: img.pixels().iter().map(|&p| p as f64).collect(),
        }
    }
}

fn check_same(a: &Plane, b: &Plane, op: &'static str) -> Result<()> {
    if a.width != b.width {
        return Err(Error::ShapeMismatch {
            op,
            dim: "width",
            got: b.width,
            expected: a.width,
        });
    }
    if a.height != b.height {
        return Err(Error::ShapeMismatch {
            op,
            dim: "height",
            got: b.height,
            expected: a.height,
        });
    }
    Ok(())
}

pub fn mse(a: &Plane, b: &Plane) -> Result<f64> {
    check_same(a, b, "mse")?;
    let sum: f64 = a.data.iter().zip(&b.data).map(|(x, y)| (x - y) * (x - y)).sum();
    Ok(sum / a.data.len() as f64)
}

/// `10 log10(max^2 / MSE)` in dB; identical inputs give `+inf`.
pub fn psnr(a: &Plane, b: &Plane, max_value: f64) -> Result<f64> {
    if !(max_value > 0.0) {
        return Err(Error::Config(format!("PSNR max value {max_value} must be positive")));
    }
    let m = mse(a, b)?;
    Ok(psnr_from_mse(m, max_value))
}

pub fn psnr_from_mse(mse: f64, max_value: f64) -> f64 {
    if mse == 0.0 {
        f64::INFINITY
    } else {
        10.0 * (max_value * max_value / mse).log10()
    }
}

/// Formats a PSNR value, writing `inf` for identical images.
pub fn format_db(v: f64) -> String {
    if v.is_infinite() && v > 0.0 {
        "inf".to_string()
    } else {
        format!("{v:.4}")
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum SsimWindow {
    /// Normalized Gaussian with the given size and standard deviation.
    Gaussian { size: usize, sigma: f64 },
    /// Flat `size x size` box.
    Uniform { size: usize },
}

impl SsimWindow {
    pub fn size(&self) -> usize {
        match *self {
            SsimWindow::Gaussian { size, .. } | SsimWindow::Uniform { size } => size,
        }
    }

    /// Normalized separable 1D weights; the 2D window is their outer product.
    pub fn weights_1d(&self) -> Vec<f64> {
        let w: Vec<f64> = match *self {
            SsimWindow::Gaussian { size, sigma } => {
                let c = (size as f64 - 1.0) / 2.0;
                (0..size)
                    .map(|i| {
                        let d = i as f64 - c;
                        (-d * d / (2.0 * sigma * sigma)).exp()
                    })
                    .collect()
            }
            SsimWindow::Uniform { size } => vec![1.0; size],
        };
        let total: f64 = w.iter().sum();
        w.into_iter().map(|v| v / total).collect()
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SsimParams {
    pub window: SsimWindow,
    pub k1: f64,
    pub k2: f64,
    /// Dynamic range `L` of the samples.
    pub dynamic_range: f64,
}

impl Default for SsimParams {
    /// 11x11 Gaussian window with sigma 1.5, `K1 = 0.01`, `K2 = 0.03`, `L = 255`.
    fn default() -> Self {
        SsimParams {
            window: SsimWindow::Gaussian { size: 11, sigma: 1.5 },
            k1: 0.01,
            k2: 0.03,
            dynamic_range: 255.0,
        }
    }
}

impl SsimParams {
    pub fn uniform8() -> Self {
        SsimParams {
            window: SsimWindow::Uniform { size: 8 },
            ..SsimParams::default()
        }
    }

    pub fn c1(&self) -> f64 {
        (self.k1 * self.dynamic_range).powi(2)
    }

    pub fn c2(&self) -> f64 {
        (self.k2 * self.dynamic_range).powi(2)
    }
}

/// Local SSIM from window statistics. The expression is symmetric in `a`
/// and `b` term by term, so swapping inputs gives the identical value and
/// equal inputs give exactly 1.
pub fn ssim_local(mu_a: f64, mu_b: f64, var_a: f64, var_b: f64, cov: f64, c1: f64, c2: f64) -> f64 {
    let num = (2.0 * (mu_a * mu_b) + c1) * (2.0 * cov + c2);
    let den = (mu_a * mu_a + mu_b * mu_b + c1) * (var_a + var_b + c2);
    num / den
}

/// Separable weighted sums of `f` over every window position (no padding).
fn filter_valid(src: &[f64], width: usize, height: usize, w: &[f64]) -> Vec<f64> {
    let k = w.len();
    let ow = width - k + 1;
    let oh = height - k + 1;
    let mut rows = vec![0.0; ow * height];
    for y in 0..height {
        let line = &src[y * width..(y + 1) * width];
        for x in 0..ow {
            rows[y * ow + x] = w.iter().zip(&line[x..x + k]).map(|(a, b)| a * b).sum();
        }
    }
    let mut out = vec![0.0; ow * oh];
    for y in 0..oh {
        for x in 0..ow {
            let mut acc = 0.0;
            for (j, wj) in w.iter().enumerate() {
                acc += wj * rows[(y + j) * ow + x];
            }
            out[y * ow + x] = acc;
        }
    }
    out
}

/// Map of local SSIM values over every position where the window fits.
pub fn ssim_map(a: &Plane, b: &Plane, params: &SsimParams) -> Result<Plane> {
    check_same(a, b, "ssim")?;
    let k = params.window.size();
    if k == 0 || a.width < k || a.height < k {
        return Err(Error::shape(
            "ssim",
            format!("{}x{} image smaller than {k}x{k} window", a.width, a.height),
        ));
    }
    let w = params.window.weights_1d();
    let (width, height) = (a.width, a.height);
    let prod = |x: &[f64], y: &[f64]| -> Vec<f64> { x.iter().zip(y).map(|(p, q)| p * q).collect() };
    let mu_a = filter_valid(&a.data, width, height, &w);
    let mu_b = filter_valid(&b.data, width, height, &w);
    let e_aa = filter_valid(&prod(&a.data, &a.data), width, height, &w);
    let e_bb = filter_valid(&prod(&b.data, &b.data), width, height, &w);
    let e_ab = filter_valid(&prod(&a.data, &b.data), width, height, &w);
    let (c1, c2) = (params.c1(), params.c2());
    let data = (0..mu_a.len())
        .map(|i| {
            let (ma, mb) = (mu_a[i], mu_b[i]);
            ssim_local(ma, mb, e_aa[i] - ma * ma, e_bb[i] - mb * mb, e_ab[i] - ma * mb, c1, c2)
        })
        .collect();
    Plane::new(width - k + 1, height - k + 1, data)
}

/// Mean of the local SSIM map.
pub fn ssim(a: &Plane, b: &Plane, params: &SsimParams) -> Result<f64> {
    let map = ssim_map(a, b, params)?;
    Ok(map.data.iter().sum::<f64>() / map.data.len() as f64)
}
