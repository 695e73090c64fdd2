use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand, ValueEnum};

use xray_codec::container::Container;
use xray_codec::corpus::{Corpus, CorpusIndex, CropSampler, Split};
use xray_codec::eval::{corpus_patches, evaluate};
use xray_codec::metrics::format_db;
use xray_codec::pipeline::{compress_file, configure_threads, decompress_file};
use xray_codec::{checkpoint, synthetic, train, AdamConfig, CodecConfig, CodecModel, SsimParams, TrainRunConfig};

#[derive(Parser)]
#[command(name = "xrc", version, about = "Learned lossy compression for grayscale radiographs")]
#[command(after_help = "Set XRC_THREADS to cap the number of worker threads.")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum Profile {
    Desk,
    Paper,
}

#[derive(Subcommand)]
enum Command {
    /// Train a codec on random patches from a corpus's train split.
    Train {
        #[arg(long)]
        corpus: PathBuf,
        /// Patch side N (multiple of 16).
        #[arg(long)]
        size: usize,
        /// Latent channels; nominal ratio is 256 / beta.
        #[arg(long)]
        beta: usize,
        #[arg(long)]
        steps: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, value_enum, default_value_t = Profile::Desk)]
        profile: Profile,
        #[arg(long, default_value_t = 16)]
        batch: usize,
        #[arg(long, default_value_t = 1e-4)]
        lr: f64,
        /// Train against uniform noise of half a quantizer step.
        #[arg(long)]
        quantization_noise: bool,
        #[arg(long, default_value_t = 100)]
        validate_every: usize,
        /// Validation patches drawn from the val split (0 disables).
        #[arg(long, default_value_t = 32)]
        val_patches: usize,
        /// Write periodic checkpoints here.
        #[arg(long)]
        checkpoint_dir: Option<PathBuf>,
        #[arg(long, default_value_t = 1000)]
        checkpoint_every: usize,
        /// Append per-step metrics to this file.
        #[arg(long)]
        log: Option<PathBuf>,
    },
    /// Compress an 8-bit PGM or PNG image to an .xrc container.
    Compress {
        #[arg(long = "in")]
        input: PathBuf,
        #[arg(long)]
        ckpt: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Reconstruct an image from an .xrc container (PNG if the output ends in .png, PGM otherwise).
    Decompress {
        #[arg(long = "in")]
        input: PathBuf,
        #[arg(long)]
        ckpt: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Score the quantized codec on every full N x N tile of a split.
    Eval {
        #[arg(long)]
        corpus: PathBuf,
        #[arg(long, default_value = "test")]
        split: Split,
        #[arg(long)]
        ckpt: PathBuf,
        /// Line-per-patch report (path, ssim, psnr_db, nominal, effective).
        #[arg(long)]
        report: PathBuf,
    },
    /// Print the header of an .xrc container.
    Info { file: PathBuf },
    /// Write a synthetic corpus of radiograph-like PGMs plus its index.
    Synth {
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 20)]
        patients: usize,
        #[arg(long, default_value_t = 2)]
        per_patient: usize,
        #[arg(long, default_value_t = 256)]
        size: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
}

fn load_corpus(path: &PathBuf) -> Result<Corpus> {
    let index = CorpusIndex::load(path).with_context(|| format!("reading corpus index {}", path.display()))?;
    Ok(Corpus::load(index)?)
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Train {
            corpus,
            size,
            beta,
            steps,
            seed,
            out,
            profile,
            batch,
            lr,
            quantization_noise,
            validate_every,
            val_patches,
            checkpoint_dir,
            checkpoint_every,
            log,
        } => {
            let config = match profile {
                Profile::Desk => CodecConfig::desk(size, beta),
                Profile::Paper => CodecConfig::paper(size, beta),
            };
            let corpus = load_corpus(&corpus)?;
            let mut model = CodecModel::build(config, seed)?;
            let mut sampler = CropSampler::new(&corpus, Split::Train, size, seed)?;
            let validation: Vec<_> = if val_patches == 0 {
                Vec::new()
            } else {
                match corpus_patches(&corpus, Split::Val, size) {
                    Ok(p) => p.into_iter().take(val_patches).map(|(_, img)| img).collect(),
                    Err(e) => {
                        log::warn!("no validation patches: {e}");
                        Vec::new()
                    }
                }
            };
            let cfg = TrainRunConfig {
                batch_size: batch,
                max_steps: steps,
                adam: AdamConfig {
                    learning_rate: lr,
                    ..AdamConfig::default()
                },
                seed,
                quantization_noise,
                validate_every,
                checkpoint_every,
                checkpoint_dir,
                ..TrainRunConfig::default()
            };
            let mut sink = match &log {
                Some(p) => Some(BufWriter::new(
                    File::create(p).with_context(|| format!("creating log {}", p.display()))?,
                )),
                None => None,
            };
            let report = train(
                &mut model,
                &mut sampler,
                &validation,
                &cfg,
                sink.as_mut().map(|w| w as &mut dyn Write),
            )?;
            if let Some(mut w) = sink {
                w.flush()?;
            }
            checkpoint::save(&model, &out)?;
            if let (Some(first), Some(last)) = (report.initial_loss(), report.final_loss) {
                println!("loss {first:.5} -> {last:.5}");
            }
            if let Some(v) = &report.last_validation {
                println!("val ssim {:.4} psnr {} dB", v.mean_ssim, format_db(v.mean_psnr));
            }
            println!("wrote {}", out.display());
        }
        Command::Compress { input, ckpt, out } => {
            let model = checkpoint::load(&ckpt)?;
            let s = compress_file(&input, &model, &out)?;
            println!(
                "{}x{} in {} tiles -> {} bytes (nominal {:.2}, effective {:.2})",
                s.width, s.height, s.tiles, s.container_bytes, s.nominal_ratio, s.effective_ratio
            );
        }
        Command::Decompress { input, ckpt, out } => {
            let model = checkpoint::load(&ckpt)?;
            let img = decompress_file(&input, &model, &out)?;
            println!("{}x{} -> {}", img.width(), img.height(), out.display());
        }
        Command::Eval {
            corpus,
            split,
            ckpt,
            report,
        } => {
            let model = checkpoint::load(&ckpt)?;
            let corpus = load_corpus(&corpus)?;
            let patches = corpus_patches(&corpus, split, model.config().patch_size)?;
            let r = evaluate(&model, &patches, &SsimParams::default())?;
            fs::write(&report, r.to_lines()).with_context(|| format!("writing {}", report.display()))?;
            print!("{}", r.to_table());
        }
        Command::Info { file } => {
            let bytes = fs::read(&file).with_context(|| format!("reading {}", file.display()))?;
            let c = Container::parse(&bytes)?;
            let (rows, cols) = c.grid();
            let checksum: String = c.model_checksum.iter().map(|b| format!("{b:02x}")).collect();
            println!("dims       {}x{}", c.width, c.height);
            println!("tile size  {}", c.tile_size);
            println!("tiles      {} ({rows}x{cols})", c.tiles.len());
            println!("beta       {}", c.beta);
            println!("bits       {}", c.bits);
            println!("nominal    {:.4}", c.nominal_ratio());
            println!("effective  {:.4}", c.effective_ratio());
            println!("bytes      {}", bytes.len());
            println!("model      {checksum}");
        }
        Command::Synth {
            out,
            patients,
            per_patient,
            size,
            seed,
        } => {
            if patients == 0 || per_patient == 0 || size == 0 {
                bail!("patients, per-patient and size must be positive");
            }
            let index = synthetic::write_corpus(&out, patients, per_patient, size, seed)?;
            println!("{} images -> {}", index.records().len(), out.join("index.tsv").display());
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    configure_threads();
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            let chain: Vec<String> = e.chain().map(|c| c.to_string()).collect();
            eprintln!("xrc: {}", chain.join(": "));
            ExitCode::FAILURE
        }
    }
}
