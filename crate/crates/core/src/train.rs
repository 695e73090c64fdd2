//! Joint encoder/decoder training with L1 loss and Adam.

use std::fs;
use std::io::Write;
use std::path::PathBuf;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::adam::{AdamConfig, AdamState};
use crate::autodiff::Graph;
use crate::checkpoint;
use crate::codec::CodecModel;
use crate::corpus::CropSampler;
use crate::error::{Error, Result};
use crate::eval::{evaluate, EvalReport};
use crate::image::GrayImage;
use crate::metrics::{format_db, SsimParams};
use crate::quantize::step_size;
use crate::tensor::Tensor;

/// Mean absolute difference. The subgradient at zero difference is zero.
pub fn l1_loss(reconstruction: &Tensor, target: &Tensor) -> Result<f64> {
    reconstruction.expect_shape(target.shape(), "l1_loss")?;
    let sum: f64 = reconstruction
        .data()
        .iter()
        .zip(target.data())
        .map(|(a, b)| (a - b).abs())
        .sum();
    Ok(sum / reconstruction.len() as f64)
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrainRunConfig {
    pub batch_size: usize,
    pub max_steps: usize,
    pub adam: AdamConfig,
    pub seed: u64,
    /// Add uniform noise of half a quantizer step to the latent.
    pub quantization_noise: bool,
    /// Rescale gradients whose global L2 norm exceeds this value.
    pub clip_norm: Option<f64>,
    pub validate_every: usize,
    pub checkpoint_every: usize,
    pub checkpoint_dir: Option<PathBuf>,
}

impl Default for TrainRunConfig {
    fn default() -> Self {
        TrainRunConfig {
            batch_size: 16,
            max_steps: 1000,
            adam: AdamConfig::default(),
            seed: 0,
            quantization_noise: false,
            clip_norm: None,
            validate_every: 100,
            checkpoint_every: 1000,
            checkpoint_dir: None,
        }
    }
}

impl TrainRunConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 {
            return Err(Error::Config("batch size must be >= 1".into()));
        }
        if self.validate_every == 0 || self.checkpoint_every == 0 {
            return Err(Error::Config("validation and checkpoint intervals must be >= 1".into()));
        }
        Ok(())
    }
}

/// Supplies training batches of shape `(batch, 1, N, N)` in `[0, 1]`.
pub trait BatchSource {
    fn next_batch(&mut self, batch_size: usize) -> Result<Tensor>;
}

/// Always yields the same tensor.
#[derive(Clone, Debug)]
pub struct FixedBatch(pub Tensor);

impl BatchSource for FixedBatch {
    fn next_batch(&mut self, batch_size: usize) -> Result<Tensor> {
        if self.0.shape().batch != batch_size {
            return Err(Error::ShapeMismatch {
                op: "fixed batch",
                dim: "batch",
                got: self.0.shape().batch,
                expected: batch_size,
            });
        }
        Ok(self.0.clone())
    }
}

impl BatchSource for CropSampler<'_> {
    fn next_batch(&mut self, batch_size: usize) -> Result<Tensor> {
        self.sample(batch_size)?.tensor()
    }
}

/// One line of the metrics log.
#[derive(Clone, Debug, PartialEq)]
pub struct StepLog {
    pub step: usize,
    pub loss: f64,
    pub val_psnr: Option<f64>,
    pub val_ssim: Option<f64>,
}

impl StepLog {
    /// `step \t loss \t val_psnr \t val_ssim`, with `-` for steps without
    /// validation.
    pub fn to_line(&self) -> String {
        let psnr = self.val_psnr.map_or("-".to_string(), format_db);
        let ssim = self.val_ssim.map_or("-".to_string(), |v| format!("{v:.6}"));
        format!("{}\t{:.9}\t{psnr}\t{ssim}", self.step, self.loss)
    }
}

#[derive(Clone, Debug)]
pub struct TrainReport {
    pub log: Vec<StepLog>,
    /// L1 of the clamped reconstruction of the last batch after the final
    /// update (`None` without steps).
    pub final_loss: Option<f64>,
    pub last_validation: Option<EvalReport>,
}

impl TrainReport {
    pub fn initial_loss(&self) -> Option<f64> {
        self.log.first().map(|l| l.loss)
    }
}

/// Loss and parameter gradients for one batch.
pub fn loss_and_gradients(
    model: &CodecModel,
    batch: &Tensor,
    noise_rng: Option<&mut ChaCha8Rng>,
) -> Result<(f64, Vec<Tensor>)> {
    let mut g = Graph::new();
    let vars = model.params().bind(&mut g);
    let x = g.constant(batch.clone());
    let mut z = model.encode_vars(&mut g, &vars, x)?;
    if let Some(rng) = noise_rng {
        let latent = g.value(z);
        let half = step_size(latent.min(), latent.max(), model.config().quantizer_bits) / 2.0;
        let noise = Tensor::uniform(latent.shape(), -half, half.max(f64::MIN_POSITIVE), rng);
        let n = g.constant(noise);
        z = g.add(z, n)?;
    }
    let y = model.decode_vars(&mut g, &vars, z)?;
    let loss = g.l1_loss(y, x)?;
    let grads = g.backward(loss)?;
    let loss_value = g.value(loss).data()[0];
    let grads = vars
        .iter()
        .map(|&v| grads.get(v).expect("every parameter has a gradient").clone())
        .collect();
    Ok((loss_value, grads))
}

fn clip(grads: &mut [Tensor], max_norm: f64) {
    let norm = grads
        .iter()
        .flat_map(|t| t.data())
        .map(|v| v * v)
        .sum::<f64>()
        .sqrt();
    if norm > max_norm {
        let k = max_norm / norm;
        for t in grads {
            t.data_mut().iter_mut().for_each(|v| *v *= k);
        }
    }
}

/// Trains `model` in place.
///
/// Each step samples a batch, runs `decode(encode(x))`, takes the L1 loss
/// against `x`, backpropagates and applies Adam. Every `validate_every`
/// steps the validation patches (if any) are evaluated through the full
/// quantized codec, and every `checkpoint_every` steps a checkpoint is
/// written to `checkpoint_dir`. If `log_sink` is given, each [`StepLog`] is
/// appended to it as a line.
///
/// A non-finite loss aborts before the update, leaving `model` at the last
/// good parameters.
pub fn train(
    model: &mut CodecModel,
    source: &mut dyn BatchSource,
    validation: &[GrayImage],
    cfg: &TrainRunConfig,
    mut log_sink: Option<&mut dyn Write>,
) -> Result<TrainReport> {
    cfg.validate()?;
    if let Some(dir) = &cfg.checkpoint_dir {
        fs::create_dir_all(dir)?;
    }
    let mut adam = AdamState::new(cfg.adam, model.params().tensors());
    let mut noise_rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ 0x5eed_0f_9015e);
    let named: Vec<(String, GrayImage)> = validation
        .iter()
        .enumerate()
        .map(|(i, p)| (format!("val{i}"), p.clone()))
        .collect();
    let mut report = TrainReport {
        log: Vec::with_capacity(cfg.max_steps),
        final_loss: None,
        last_validation: None,
    };
    let mut last_batch = None;

    for step in 0..cfg.max_steps {
        let batch = source.next_batch(cfg.batch_size)?;
        let rng = cfg.quantization_noise.then_some(&mut noise_rng);
        let (loss, mut grads) = loss_and_gradients(model, &batch, rng)?;
        if !loss.is_finite() {
            return Err(Error::NonFiniteLoss { step });
        }
        if let Some(max) = cfg.clip_norm {
            clip(&mut grads, max);
        }
        let names = model.params().names().to_vec();
        adam.step(model.params_mut().tensors_mut(), &grads, &names)?;

        let mut entry = StepLog {
            step,
            loss,
            val_psnr: None,
            val_ssim: None,
        };
        let done = step + 1;
        if !named.is_empty() && (done % cfg.validate_every == 0 || done == cfg.max_steps) {
            let r = evaluate(model, &named, &SsimParams::default())?;
            entry.val_psnr = Some(r.mean_psnr);
            entry.val_ssim = Some(r.mean_ssim);
            report.last_validation = Some(r);
        }
        if let Some(dir) = &cfg.checkpoint_dir {
            if done % cfg.checkpoint_every == 0 {
                checkpoint::save(model, dir.join(format!("step{done:07}.xrcw")))?;
            }
        }
        log::debug!("{}", entry.to_line());
        if let Some(w) = log_sink.as_mut() {
            writeln!(w, "{}", entry.to_line())?;
        }
        report.log.push(entry);
        last_batch = Some(batch);
    }

    if let Some(batch) = last_batch {
        let recon = model.decode(&model.encode(&batch)?)?;
        report.final_loss = Some(l1_loss(&recon, &batch)?);
    }
    Ok(report)
}

/// Moving average over windows of `window` consecutive losses.
pub fn moving_average(losses: &[f64], window: usize) -> Vec<f64> {
    if window == 0 || losses.len() < window {
        return Vec::new();
    }
    losses
        .windows(window)
        .map(|w| w.iter().sum::<f64>() / window as f64)
        .collect()
}
