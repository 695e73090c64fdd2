//! Overfits the desk profile to two synthetic 64x64 radiographs.
//!
//! `cargo run --release --example smoke_train -- [beta] [lr] [steps]`

use std::time::Instant;

use xray_codec::eval::evaluate;
use xray_codec::synthetic::radiograph;
use xray_codec::train::{moving_average, FixedBatch};
use xray_codec::{train, AdamConfig, CodecConfig, CodecModel, SsimParams, Tensor, TrainRunConfig};

fn main() -> xray_codec::Result<()> {
    let args: Vec<String> = std::env::args().skip(1).collect();
    let beta = args.first().and_then(|a| a.parse().ok()).unwrap_or(32);
    let lr = args.get(1).and_then(|a| a.parse().ok()).unwrap_or(1.5e-3);
    let steps = args.get(2).and_then(|a| a.parse().ok()).unwrap_or(500);

    let images = [radiograph(64, 64, 1), radiograph(64, 64, 2)];
    let batch = Tensor::stack(&images.iter().map(|i| i.to_tensor()).collect::<Vec<_>>())?;
    let mut model = CodecModel::build(CodecConfig::desk(64, beta), 0)?;
    let cfg = TrainRunConfig {
        batch_size: 2,
        max_steps: steps,
        adam: AdamConfig {
            learning_rate: lr,
            ..AdamConfig::default()
        },
        ..TrainRunConfig::default()
    };
    let start = Instant::now();
    let report = train(&mut model, &mut FixedBatch(batch), &[], &cfg, None)?;
    let losses: Vec<f64> = report.log.iter().map(|l| l.loss).collect();
    for (i, l) in losses.iter().enumerate().step_by(25) {
        println!("step {i:4}  loss {l:.5}");
    }
    let ma = moving_average(&losses, 50);
    let worst_rise = ma.windows(2).map(|w| w[1] - w[0]).fold(f64::NEG_INFINITY, f64::max);
    let rises: Vec<usize> = ma.windows(2).enumerate().filter(|(_, w)| w[1] > w[0]).map(|(i, _)| i + 50).collect();
    if !rises.is_empty() {
        println!("moving average rises ending at steps {rises:?}");
    }
    let named: Vec<_> = images.iter().enumerate().map(|(i, im)| (format!("img{i}"), im.clone())).collect();
    let eval = evaluate(&model, &named, &SsimParams::default())?;
    println!(
        "initial {:.5} final {:.5} ratio {:.3} worst MA rise {worst_rise:.2e} psnr {:.2} ssim {:.4} in {:.1}s",
        losses[0],
        report.final_loss.unwrap(),
        report.final_loss.unwrap() / losses[0],
        eval.mean_psnr,
        eval.mean_ssim,
        start.elapsed().as_secs_f64()
    );
    Ok(())
}
