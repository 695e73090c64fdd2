//! One PASS/FAIL line per acceptance criterion.
//!
//! `cargo test --release -p xray-codec --test acceptance`

mod common;

use std::panic::{catch_unwind, AssertUnwindSafe};
use std::process::ExitCode;
use std::time::Instant;

use common::{draw, fd, psnr_direct, random_pair, rng, ssim_direct, ScalarLstm};
use rand::Rng;
use xray_codec::container::{Container, TileRecord};
use xray_codec::convlstm::{cell_step, ConvLstmParams, ConvLstmSpec, ConvLstmState};
use xray_codec::corpus::{Corpus, CropSampler, Split};
use xray_codec::entropy::{entropy_decode, entropy_encode};
use xray_codec::eval::evaluate;
use xray_codec::metrics::{format_db, psnr, ssim, Plane, SsimParams};
use xray_codec::synthetic::radiograph;
use xray_codec::tiling::{tile_image, untile};
use xray_codec::train::{moving_average, FixedBatch};
use xray_codec::{
    checkpoint, compression_ratio, dequantize, quantize, train, AdamConfig, AdamState, CodecConfig, CodecModel,
    Tensor, TrainRunConfig,
};

/// Learning rate and bottleneck depth for the smoke run.
const SMOKE_LR: f64 = 1.5e-3;
const SMOKE_BETA: usize = 32;

type Outcome = Result<String, String>;

fn ensure(ok: bool, detail: String) -> Outcome {
    if ok {
        Ok(detail)
    } else {
        Err(detail)
    }
}

fn gradients() -> Outcome {
    let start = Instant::now();
    let worst = fd::primitives().max(fd::convlstm_two_steps());
    let secs = start.elapsed().as_secs_f64();
    ensure(
        worst <= 1.0 && secs <= 60.0,
        format!("worst error/tolerance {worst:.3} (limit 1, rel 1e-4), {secs:.1}s (limit 60s)"),
    )
}

fn lstm_oracle() -> Outcome {
    let mut r = rng(2024);
    let mut worst: f64 = 0.0;
    for n in 0..1000 {
        let (cin, h) = (r.gen_range(1..=4), r.gen_range(1..=4));
        let mut spec = ConvLstmSpec::new(cin, h, 1, 1);
        spec.peephole = n % 2 == 1;
        let wx: Vec<Vec<f64>> = (0..4 * h).map(|_| draw(&mut r, cin, 2.0)).collect();
        let wh: Vec<Vec<f64>> = (0..4 * h).map(|_| draw(&mut r, h, 2.0)).collect();
        let b = draw(&mut r, 4 * h, 1.0);
        let peep = spec.peephole.then(|| draw(&mut r, 3 * h, 1.0));
        let (x, hid, cell) = (draw(&mut r, cin, 3.0), draw(&mut r, h, 1.0), draw(&mut r, h, 3.0));
        let t = |v: &[f64]| Tensor::new([1, v.len(), 1, 1], v.to_vec()).unwrap();
        let params = ConvLstmParams {
            spec,
            w_x: Tensor::new([4 * h, cin, 1, 1], wx.concat()).unwrap(),
            w_h: Tensor::new([4 * h, h, 1, 1], wh.concat()).unwrap(),
            bias: t(&b),
            peephole: peep.as_deref().map(t),
        };
        let state = ConvLstmState {
            hidden: t(&hid),
            cell: t(&cell),
        };
        let got = cell_step(&t(&x), &state, &params).unwrap();
        let (eh, ec) = ScalarLstm { h, wx, wh, b, peep }.step(&x, &hid, &cell);
        for (a, e) in got.hidden.data().iter().zip(&eh).chain(got.cell.data().iter().zip(&ec)) {
            worst = worst.max((a - e).abs());
        }
    }
    ensure(worst <= 1e-12, format!("1000 draws, max deviation {worst:.2e} (limit 1e-12)"))
}

fn identities() -> Outcome {
    let mut checked = 0;
    for n in [32, 64, 128, 256] {
        for beta in [32, 64, 128] {
            let config = CodecConfig {
                front_width: 2,
                rnn_widths: [2, 2, 2],
                steps: 1,
                ..CodecConfig::desk(n, beta)
            };
            let model = CodecModel::build(config, 1).unwrap();
            let latent = model.encode(&Tensor::full([1, 1, n, n], 0.5)).unwrap();
            let recon = model.decode(&latent).unwrap();
            let bytes = quantize(&latent, 8).unwrap().code_bytes().len();
            let ok = latent.shape().dims() == [1, beta, n / 16, n / 16]
                && recon.shape().dims() == [1, 1, n, n]
                && bytes * 256 == n * n * beta
                && compression_ratio(&config) == 256.0 / beta as f64;
            if !ok {
                return Err(format!("N={n} beta={beta}: latent {:?}, {bytes} bytes", latent.shape().dims()));
            }
            checked += 1;
        }
    }
    Ok(format!("{checked} (N, beta) pairs, payload exactly N^2*beta/256 bytes"))
}

fn metric_oracles() -> Outcome {
    let mut r = rng(77);
    let params = SsimParams::default();
    let (mut ws, mut wp): (f64, f64) = (0.0, 0.0);
    for _ in 0..200 {
        let (a, b) = random_pair(&mut r);
        let pa = Plane::new(16, 16, a.clone()).unwrap();
        let pb = Plane::new(16, 16, b.clone()).unwrap();
        ws = ws.max((ssim(&pa, &pb, &params).unwrap() - ssim_direct(&a, &b, 16, 16)).abs());
        if a != b {
            wp = wp.max((psnr(&pa, &pb, 255.0).unwrap() - psnr_direct(&a, &b)).abs());
        }
    }
    let (a, _) = random_pair(&mut r);
    let pa = Plane::new(16, 16, a).unwrap();
    let black = Plane::new(16, 16, vec![0.0; 256]).unwrap();
    let white = Plane::new(16, 16, vec![255.0; 256]).unwrap();
    let refs = ssim(&pa, &pa, &params).unwrap() == 1.0
        && format_db(psnr(&pa, &pa, 255.0).unwrap()) == "inf"
        && psnr(&black, &white, 255.0).unwrap() == 0.0;
    ensure(
        ws <= 1e-8 && wp <= 1e-8 && refs,
        format!("ssim dev {ws:.2e}, psnr dev {wp:.2e} (limit 1e-8), reference values {}", if refs { "ok" } else { "wrong" }),
    )
}

fn lossless() -> Outcome {
    let mut r = rng(5);
    let mut worst: f64 = 0.0;
    for bits in 1..=16u8 {
        for _ in 0..20 {
            let len = r.gen_range(1..300);
            let spread = 10f64.powi(r.gen_range(-3..4));
            let values: Vec<f64> = (0..len).map(|_| r.gen_range(-spread..spread)).collect();
            let q = quantize(&Tensor::new([1, len, 1, 1], values.clone()).unwrap(), bits).unwrap();
            let back = dequantize(&q);
            for (a, b) in values.iter().zip(back.data()) {
                if q.q_scale > 0.0 {
                    worst = worst.max((a - b).abs() / (q.q_scale / 2.0));
                }
            }
        }
    }
    let mut payloads: Vec<Vec<u8>> = (0..20).map(|_| (0..r.gen_range(0..20_000)).map(|_| r.gen()).collect()).collect();
    payloads.push(vec![0; 100_000]);
    payloads.push((0..65_536u32).map(|i| (i % 256) as u8).collect());
    payloads.push(radiograph(128, 128, 4).pixels().to_vec());
    let deflate = payloads.iter().all(|p| entropy_decode(&entropy_encode(p)).is_ok_and(|d| &d == p));
    let c = Container {
        height: 300,
        width: 200,
        tile_size: 128,
        beta: 64,
        bits: 8,
        model_checksum: std::array::from_fn(|i| i as u8),
        tiles: (0..6)
            .map(|i| TileRecord {
                q_min: -(i as f64) / 3.0,
                q_scale: 0.1 + i as f64,
                payload: entropy_encode(&vec![i as u8; 256]),
            })
            .collect(),
    };
    let bytes = c.to_bytes().unwrap();
    let back = Container::parse(&bytes).unwrap();
    let container = back == c && back.to_bytes().unwrap() == bytes;
    let img = radiograph(1024, 1024, 9);
    let grid = tile_image(&img, 256).unwrap();
    let tiles = grid.tiles.len();
    let tiling = tiles == 16 && untile(&grid).unwrap() == img;
    // 1e-9 relative slack covers rounding in q_min + code * q_scale
    ensure(
        worst <= 1.0 + 1e-9 && deflate && container && tiling,
        format!(
            "quant err/(q_scale/2) {worst:.6}, deflate {}, container {}, 1024^2 at N=256 -> {tiles} tiles",
            if deflate { "exact" } else { "MISMATCH" },
            if container { "exact" } else { "MISMATCH" },
        ),
    )
}

fn smoke_training() -> Outcome {
    let start = Instant::now();
    let images = [radiograph(64, 64, 1), radiograph(64, 64, 2)];
    let batch = Tensor::stack(&images.iter().map(|i| i.to_tensor()).collect::<Vec<_>>()).unwrap();
    let mut model = CodecModel::build(CodecConfig::desk(64, SMOKE_BETA), 0).unwrap();
    let cfg = TrainRunConfig {
        batch_size: 2,
        max_steps: 500,
        adam: AdamConfig {
            learning_rate: SMOKE_LR,
            ..AdamConfig::default()
        },
        ..TrainRunConfig::default()
    };
    let report = train(&mut model, &mut FixedBatch(batch), &[], &cfg, None).unwrap();
    let losses: Vec<f64> = report.log.iter().map(|l| l.loss).collect();
    let ratio = report.final_loss.unwrap() / losses[0];
    let rise = moving_average(&losses, 50)
        .windows(2)
        .map(|w| w[1] - w[0])
        .fold(f64::NEG_INFINITY, f64::max);
    let named: Vec<_> = images.iter().enumerate().map(|(i, im)| (format!("img{i}"), im.clone())).collect();
    let eval = evaluate(&model, &named, &SsimParams::default()).unwrap();
    let min_psnr = eval.records.iter().map(|r| r.psnr_db).fold(f64::INFINITY, f64::min);
    let secs = start.elapsed().as_secs_f64();
    ensure(
        ratio <= 0.1 && min_psnr >= 30.0 && rise <= 0.0 && secs <= 600.0,
        format!(
            "final/initial L1 {ratio:.3} (limit 0.1), min PSNR {min_psnr:.2} dB (limit 30), \
             max 50-step MA rise {rise:.2e} (limit 0), {secs:.0}s (limit 600s)"
        ),
    )
}

fn adam_closed_form() -> Outcome {
    // g = 0.5 throughout: m_hat = g and v_hat = g^2 at every step, so each
    // update is 1e-3 * 0.5 / (0.5 + 1e-8)
    let config = AdamConfig {
        learning_rate: 1e-3,
        ..AdamConfig::default()
    };
    let mut params = vec![Tensor::scalar(1.0)];
    let mut state = AdamState::new(config, &params);
    let grads = vec![Tensor::scalar(0.5)];
    let names = vec!["theta".to_string()];
    let mut worst: f64 = 0.0;
    for (theta, m, v) in [(0.999_000_000_02, 0.05, 0.000_25), (0.998_000_000_04, 0.095, 0.000_499_75)] {
        state.step(&mut params, &grads, &names).unwrap();
        worst = worst
            .max((params[0].data()[0] - theta).abs())
            .max((state.first_moment()[0].data()[0] - m).abs())
            .max((state.second_moment()[0].data()[0] - v).abs());
    }
    ensure(worst <= 1e-15, format!("max deviation {worst:.2e} (limit 1e-15)"))
}

fn determinism() -> Outcome {
    let run = |seed: u64| {
        let entries = (0..5)
            .map(|i| {
                let split = if i < 4 { Split::Train } else { Split::Val };
                (radiograph(48, 40, i as u64), format!("p{i}"), split)
            })
            .collect();
        let corpus = Corpus::from_images(entries).unwrap();
        let config = CodecConfig {
            front_width: 2,
            rnn_widths: [3, 3, 3],
            ..CodecConfig::desk(32, 8)
        };
        let mut model = CodecModel::build(config, seed).unwrap();
        let mut sampler = CropSampler::new(&corpus, Split::Train, 32, seed).unwrap();
        let validation = vec![radiograph(32, 32, 100)];
        let cfg = TrainRunConfig {
            batch_size: 2,
            max_steps: 6,
            seed,
            quantization_noise: true,
            validate_every: 3,
            ..TrainRunConfig::default()
        };
        let mut log = Vec::new();
        train(&mut model, &mut sampler, &validation, &cfg, Some(&mut log)).unwrap();
        (checkpoint::to_bytes(&model).unwrap(), log)
    };
    let (a, b) = (run(4), run(4));
    let other = run(5);
    ensure(
        a == b && a.0 != other.0,
        format!(
            "seed 4 twice: checkpoint {}, log {}; seed 5 differs: {}",
            if a.0 == b.0 { "identical" } else { "DIFFERENT" },
            if a.1 == b.1 { "identical" } else { "DIFFERENT" },
            a.0 != other.0
        ),
    )
}

fn main() -> ExitCode {
    let _ = rayon::ThreadPoolBuilder::new().num_threads(1).build_global();
    let criteria: [(&str, fn() -> Outcome); 8] = [
        ("finite-difference gradients", gradients),
        ("ConvLSTM scalar oracle", lstm_oracle),
        ("shape and ratio identities", identities),
        ("metric oracles", metric_oracles),
        ("lossless stack", lossless),
        ("training smoke", smoke_training),
        ("Adam closed form", adam_closed_form),
        ("determinism", determinism),
    ];
    let mut failed = 0;
    for (i, (name, f)) in criteria.iter().enumerate() {
        let outcome = catch_unwind(AssertUnwindSafe(f)).unwrap_or_else(|e| {
            let msg = e
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| e.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_default();
            Err(format!("panicked: {msg}"))
        });
        match outcome {
            Ok(detail) => println!("PASS {} {name}: {detail}", i + 1),
            Err(detail) => {
                failed += 1;
                println!("FAIL {} {name}: {detail}", i + 1);
            }
        }
    }
    println!(
        "SKIP 9 full-scale tables: needs the ChestX-ray8 corpus and paper-scale training; \
         run scripts/reproduce_tables.sh (targets SSIM 0.9579 / PSNR 35.9325 dB at N=128, ratio 8)"
    );
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
