//! Oracles shared by the integration tests and the acceptance target.

#![allow(dead_code)]

pub mod fd;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use xray_codec::{Graph, Result, Tensor, Var};

pub const STEP: f64 = 1e-5;
pub const REL_TOL: f64 = 1e-4;
pub const ABS_FLOOR: f64 = 1e-8;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn rand_tensor(shape: [usize; 4], r: &mut ChaCha8Rng) -> Tensor {
    Tensor::uniform(shape, -1.0, 1.0, r)
}

/// Values kept at least `gap` away from zero, for ops with a kink there.
pub fn away_from_zero(shape: [usize; 4], gap: f64, r: &mut ChaCha8Rng) -> Tensor {
    rand_tensor(shape, r).map(|v| if v.abs() < gap { v.signum() * gap + v } else { v })
}

pub type Build<'a> = dyn Fn(&mut Graph, &[Var]) -> Result<Var> + 'a;

fn weighted_loss(inputs: &[Tensor], build: &Build, weights: Option<&Tensor>) -> Result<(Graph, Var, Vec<Var>, Tensor)> {
    let mut g = Graph::new();
    let vars: Vec<Var> = inputs.iter().map(|t| g.param(t.clone())).collect();
    let out = build(&mut g, &vars)?;
    let w = match weights {
        Some(w) => w.clone(),
        None => rand_tensor(g.shape(out).dims(), &mut rng(99)),
    };
    let wv = g.constant(w.clone());
    let prod = g.mul(out, wv)?;
    let loss = g.sum(prod);
    Ok((g, loss, vars, w))
}

/// Central-difference check of the input gradients of `sum(build(inputs) * r)`
/// for a fixed random `r`, so every output coordinate contributes.
/// Returns the largest violation ratio; `<= 1` passes. A coordinate passes when `|a - n| <= max(REL_TOL * max(|a|, |n|), ABS_FLOOR)`.
/// `coords` limits the number of coordinates probed per input (`None` for all).
/// Panics naming the coordinate on the first failure.
pub fn check(name: &str, inputs: &[Tensor], build: &Build, coords: Option<usize>) -> f64 {
    let (g, loss, vars, w) = weighted_loss(inputs, build, None).unwrap();
    let grads = g.backward(loss).unwrap();
    let mut worst: f64 = 0.0;
    let mut pick = rng(7);
    for (i, input) in inputs.iter().enumerate() {
        let analytic = grads.get(vars[i]).unwrap();
        let idx: Vec<usize> = match coords {
            Some(k) if k < input.len() => (0..k).map(|_| pick.gen_range(0..input.len())).collect(),
            _ => (0..input.len()).collect(),
        };
        for j in idx {
            let eval = |delta: f64| {
                let mut moved = inputs.to_vec();
                moved[i].data_mut()[j] += delta;
                let (g, loss, _, _) = weighted_loss(&moved, build, Some(&w)).unwrap();
                g.value(loss).data()[0]
            };
            let numeric = (eval(STEP) - eval(-STEP)) / (2.0 * STEP);
            let a = analytic.data()[j];
            let allowed = (REL_TOL * a.abs().max(numeric.abs())).max(ABS_FLOOR);
            let ratio = (a - numeric).abs() / allowed;
            assert!(ratio <= 1.0, "{name}: input {i} coord {j}: analytic {a:e} numeric {numeric:e}");
            worst = worst.max(ratio);
        }
    }
    worst
}

// ConvLSTM

pub fn sigmoid(z: f64) -> f64 {
    1.0 / (1.0 + (-z).exp())
}

/// Plain dense LSTM on vectors. `wx[k][j]`, `wh[k][j]` with rows stacked as
/// input, forget, output, candidate blocks of `h` rows each.
pub struct ScalarLstm {
    pub h: usize,
    pub wx: Vec<Vec<f64>>,
    pub wh: Vec<Vec<f64>>,
    pub b: Vec<f64>,
    pub peep: Option<Vec<f64>>,
}

impl ScalarLstm {
    pub fn step(&self, x: &[f64], hid: &[f64], cell: &[f64]) -> (Vec<f64>, Vec<f64>) {
        let h = self.h;
        let z: Vec<f64> = (0..4 * h)
            .map(|k| {
                let mut s = self.b[k];
                for (w, v) in self.wx[k].iter().zip(x) {
                    s += w * v;
                }
                for (w, v) in self.wh[k].iter().zip(hid) {
                    s += w * v;
                }
                s
            })
            .collect();
        let mut new_h = vec![0.0; h];
        let mut new_c = vec![0.0; h];
        for u in 0..h {
            let (pi, pf, po) = match &self.peep {
                Some(p) => (p[u], p[h + u], p[2 * h + u]),
                None => (0.0, 0.0, 0.0),
            };
            let i = sigmoid(z[u] + pi * cell[u]);
            let f = sigmoid(z[h + u] + pf * cell[u]);
            let g = z[3 * h + u].tanh();
            new_c[u] = f * cell[u] + i * g;
            let o = sigmoid(z[2 * h + u] + po * new_c[u]);
            new_h[u] = o * new_c[u].tanh();
        }
        (new_h, new_c)
    }
}

pub fn draw(r: &mut ChaCha8Rng, n: usize, scale: f64) -> Vec<f64> {
    (0..n).map(|_| r.gen_range(-scale..scale)).collect()
}

// Metrics

/// Direct SSIM: full 2D Gaussian window, centered moments, mean over every
/// window position that fits inside the image.
pub fn ssim_direct(a: &[f64], b: &[f64], w: usize, h: usize) -> f64 {
    let (k, sigma) = (11usize, 1.5f64);
    let c = (k as f64 - 1.0) / 2.0;
    let mut win = vec![0.0; k * k];
    for y in 0..k {
        for x in 0..k {
            let (dx, dy) = (x as f64 - c, y as f64 - c);
            win[y * k + x] = (-(dx * dx + dy * dy) / (2.0 * sigma * sigma)).exp();
        }
    }
    let total: f64 = win.iter().sum();
    win.iter_mut().for_each(|v| *v /= total);
    let c1 = (0.01f64 * 255.0).powi(2);
    let c2 = (0.03f64 * 255.0).powi(2);
    let mut acc = 0.0;
    let mut count = 0;
    for oy in 0..=h - k {
        for ox in 0..=w - k {
            let at = |img: &[f64], x: usize, y: usize| img[(oy + y) * w + ox + x];
            let (mut ma, mut mb) = (0.0, 0.0);
            for y in 0..k {
                for x in 0..k {
                    ma += win[y * k + x] * at(a, x, y);
                    mb += win[y * k + x] * at(b, x, y);
                }
            }
            let (mut va, mut vb, mut cov) = (0.0, 0.0, 0.0);
            for y in 0..k {
                for x in 0..k {
                    let (da, db) = (at(a, x, y) - ma, at(b, x, y) - mb);
                    va += win[y * k + x] * da * da;
                    vb += win[y * k + x] * db * db;
                    cov += win[y * k + x] * da * db;
                }
            }
            acc += ((2.0 * ma * mb + c1) * (2.0 * cov + c2)) / ((ma * ma + mb * mb + c1) * (va + vb + c2));
            count += 1;
        }
    }
    acc / count as f64
}

pub fn psnr_direct(a: &[f64], b: &[f64]) -> f64 {
    let mse = a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>() / a.len() as f64;
    10.0 * (255.0 * 255.0 / mse).log10()
}

pub fn random_pair(r: &mut ChaCha8Rng) -> (Vec<f64>, Vec<f64>) {
    let a: Vec<f64> = (0..256).map(|_| r.gen_range(0..=255) as f64).collect();
    // correlated partner: mixes of copies, noise and independent draws
    let mix = r.gen_range(0.0..1.0);
    let b = a
        .iter()
        .map(|&v| {
            let other = r.gen_range(0..=255) as f64;
            (mix * v + (1.0 - mix) * other).round().clamp(0.0, 255.0)
        })
        .collect();
    (a, b)
}
