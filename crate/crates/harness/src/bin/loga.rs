use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand};
use loga_core::gradcheck::{gradcheck, GradCheckOptions};
use loga_core::objectives::Mining;
use loga_datagen::{generate_dataset, load_dataset, DatasetManifest, Split};
use loga_harness::ablate::{ablate, format_table, strategy_names};
use loga_harness::eval::{evaluate, model_from_checkpoint, DEFAULT_RANKS};
use loga_harness::inspect::{format_scores, inspect_clips, noise_separation};
use loga_harness::train::strategy;
use loga_harness::{Checkpoint, TrainConfig, Trainer};

#[derive(Parser)]
#[command(name = "loga", version, about = "Tracklet assembling model: data, training and evaluation")]
struct Cli {
    /// Overrides the seed of the manifest, training config or gradient check.
    #[arg(long, global = true)]
    seed: Option<u64>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Render a synthetic dataset described by a manifest.
    GenerateData {
        manifest: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Train a model; step losses are printed as JSON lines.
    Train {
        config: PathBuf,
        data: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Continue from this checkpoint instead of a fresh model.
        #[arg(long)]
        resume: Option<PathBuf>,
    },
    /// Retrieval metrics of a checkpoint on the query/gallery split.
    Eval {
        checkpoint: PathBuf,
        data: PathBuf,
        #[arg(long, value_delimiter = ',', default_values_t = DEFAULT_RANKS)]
        ranks: Vec<usize>,
        /// Print the full result as JSON.
        #[arg(long)]
        json: bool,
    },
    /// Dump per-frame scores of the given clips.
    Inspect {
        checkpoint: PathBuf,
        data: PathBuf,
        #[arg(long, value_delimiter = ',', required = true)]
        clips: Vec<usize>,
        /// Multiply every score, e.g. by 1000.
        #[arg(long, default_value_t = 1.0)]
        scale: f64,
    },
    /// How often scores of occluded or switched frames fall below clean ones.
    Separation { checkpoint: PathBuf, data: PathBuf },
    /// Compare analytic and finite-difference gradients on a tiny model.
    Gradcheck {
        #[arg(long, default_value = "float64")]
        dtype: String,
        #[arg(long, default_value = "associative")]
        strategy: String,
        #[arg(long, value_enum, default_value = "random")]
        mining: MiningArg,
    },
    /// Train and evaluate every strategy with the same settings.
    Ablate {
        data: PathBuf,
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long, value_delimiter = ',')]
        strategies: Vec<String>,
    },
}

#[derive(Clone, Copy, clap::ValueEnum)]
enum MiningArg {
    Random,
    BatchHard,
}

fn read_config(path: Option<&Path>, seed: Option<u64>) -> Result<TrainConfig> {
    let mut config = match path {
        Some(p) => TrainConfig::read(p)?,
        None => TrainConfig::default(),
    };
    if let Some(seed) = seed {
        config.seed = seed;
    }
    Ok(config)
}

fn epoch_path(out: &Path, epoch: usize) -> PathBuf {
    let stem = out.file_stem().and_then(|s| s.to_str()).unwrap_or("checkpoint");
    out.with_file_name(format!("{stem}-epoch{epoch:04}.ckpt"))
}

fn run_train(config: &Path, data: &Path, out: &Path, resume: Option<&Path>, seed: Option<u64>) -> Result<()> {
    let dataset = load_dataset(data).with_context(|| format!("loading {}", data.display()))?;
    let mut trainer = match resume {
        Some(p) => {
            let mut ckpt = Checkpoint::load(p)?;
            // settings from the file win, the stored random streams continue
            let mut fresh = read_config(Some(config), seed)?;
            fresh.seed = ckpt.train.seed;
            ckpt.train = fresh;
            Trainer::resume(ckpt, &dataset)?
        }
        None => Trainer::new(read_config(Some(config), seed)?, &dataset)?,
    };
    let every = trainer.config.checkpoint_every;
    let stdout = std::io::stdout();
    let mut lines = BufWriter::new(stdout.lock());
    let mut write_err = None;
    trainer.run(
        &mut |step| {
            if let Err(e) = serde_json::to_writer(&mut lines, step).map_err(anyhow::Error::from).and_then(|_| {
                writeln!(lines)?;
                Ok(())
            }) {
                write_err.get_or_insert(e);
            }
        },
        &mut |t, _| {
            if every > 0 && t.epoch % every == 0 && !t.finished() {
                t.checkpoint().save(&epoch_path(out, t.epoch))?;
            }
            Ok(())
        },
    )?;
    lines.flush()?;
    if let Some(e) = write_err {
        return Err(e.context("writing step log"));
    }
    trainer.checkpoint().save(out)?;
    log::info!("wrote {}", out.display());
    Ok(())
}

fn main() -> Result<()> {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    match cli.command {
        Command::GenerateData { manifest, out } => {
            let mut m = DatasetManifest::read(&manifest)?;
            if let Some(seed) = cli.seed {
                m.seed = seed;
            }
            let d = generate_dataset(&m, &out)?;
            println!(
                "{} clips ({} train, {} query, {} gallery) written to {}",
                d.clips().len(),
                d.split(Split::Train).len(),
                d.split(Split::Query).len(),
                d.split(Split::Gallery).len(),
                out.display()
            );
        }
        Command::Train {
            config,
            data,
            out,
            resume,
        } => run_train(&config, &data, &out, resume.as_deref(), cli.seed)?,
        Command::Eval {
            checkpoint,
            data,
            ranks,
            json,
        } => {
            let ckpt = Checkpoint::load(&checkpoint)?;
            let dataset = load_dataset(&data)?;
            let depth = ranks.iter().copied().max().unwrap_or(0);
            let result = evaluate(&ckpt, &dataset, depth)?;
            if json {
                println!("{}", serde_json::to_string_pretty(&result)?);
            } else {
                println!("strategy {}  epoch {}", ckpt.train.strategy, ckpt.epoch);
                println!("mAP     {:.4}", result.map);
                for k in ranks {
                    match result.rank(k) {
                        Some(v) => println!("rank-{k:<3} {v:.4}"),
                        None => bail!("rank {k} is out of range"),
                    }
                }
                println!(
                    "queries {} evaluated, {} excluded",
                    result.evaluated.len(),
                    result.excluded
                );
            }
        }
        Command::Inspect {
            checkpoint,
            data,
            clips,
            scale,
        } => {
            let ckpt = Checkpoint::load(&checkpoint)?;
            let dataset = load_dataset(&data)?;
            let mut model = model_from_checkpoint(&ckpt)?;
            let strategy = strategy(&ckpt.train.strategy)?;
            let all: Vec<_> = dataset.clips().iter().collect();
            let scores = inspect_clips(&mut model, strategy.as_ref(), &all, &clips)?;
            print!("{}", format_scores(&scores, scale));
        }
        Command::Separation { checkpoint, data } => {
            let ckpt = Checkpoint::load(&checkpoint)?;
            let dataset = load_dataset(&data)?;
            let mut model = model_from_checkpoint(&ckpt)?;
            let strategy = strategy(&ckpt.train.strategy)?;
            for split in [Split::Train, Split::Query, Split::Gallery] {
                let r = noise_separation(&mut model, strategy.as_ref(), &dataset.split(split))?;
                println!(
                    "{split:?}: {} mixed clips, local {:.3}, global {:.3}, both {:.3}",
                    r.clips,
                    r.fraction(r.local),
                    r.fraction(r.global),
                    r.fraction(r.both)
                );
            }
        }
        Command::Gradcheck {
            dtype,
            strategy,
            mining,
        } => {
            if dtype != "float64" {
                bail!("gradient checks run in float64 only, got --dtype {dtype}");
            }
            let opts = GradCheckOptions {
                seed: cli.seed.unwrap_or(0),
                strategy,
                mining: match mining {
                    MiningArg::Random => Mining::Random,
                    MiningArg::BatchHard => Mining::BatchHard,
                },
                ..GradCheckOptions::default()
            };
            let report = gradcheck(&opts)?;
            println!("loss {:.12}", report.loss);
            println!("{:<24} {:>8} {:>12} {:>12} {:>8}", "group", "entries", "max rel err", "max |grad|", "refined");
            for g in &report.groups {
                println!(
                    "{:<24} {:>8} {:>12.3e} {:>12.3e} {:>8}{}",
                    g.name,
                    g.entries,
                    g.max_relative_error,
                    g.max_abs_gradient,
                    g.refined,
                    if g.passed() { "" } else { "  FAIL" }
                );
            }
            let failures = report.failures();
            if !failures.is_empty() {
                let names: Vec<_> = failures.iter().map(|g| g.name.as_str()).collect();
                bail!("gradient check failed for {}", names.join(", "));
            }
        }
        Command::Ablate {
            data,
            config,
            strategies,
        } => {
            let dataset = load_dataset(&data)?;
            let config = read_config(config.as_deref(), cli.seed)?;
            let names: Vec<&str> = if strategies.is_empty() {
                strategy_names()
            } else {
                strategies.iter().map(String::as_str).collect()
            };
            let rows = ablate(&config, &dataset, &names)?;
            print!("{}", format_table(&rows));
        }
    }
    Ok(())
}

