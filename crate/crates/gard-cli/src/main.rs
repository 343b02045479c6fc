//! `gard`: generate synthetic propagation corpora, train and evaluate the
//! semantic-evolvement graph autoencoder, sweep loss weights, trace
//! early-detection curves, and self-check gradients.

mod commands;
mod config;
mod error;

use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};

use commands::SweepParam;
use config::RunConfig;
use error::CliError;
use gard_core::model::Activation;
use gard_core::training::Variant;

#[derive(Parser)]
#[command(
    name = "gard",
    version,
    about = "Semantic-evolvement graph autoencoder for rumor detection",
    after_help = "Exit codes: 0 ok, 1 runtime, 2 usage/config, 3 missing file, 4 schema.\n\
                  GARD_SEED sets the seed when neither --seed nor the config file does."
)]
struct Cli {
    /// Config file: key=value lines under [gen]/[train]/[paths] sections
    #[arg(long, global = true, value_name = "PATH")]
    config: Option<PathBuf>,

    /// Master seed for generation and training [default: 0]
    #[arg(long, global = true, value_name = "N")]
    seed: Option<u64>,

    /// Run directory for outputs [default: runs/<config-hash>]
    #[arg(long, global = true, value_name = "DIR")]
    out: Option<PathBuf>,

    /// Corpus file [default: <out>/corpus.jsonl]
    #[arg(long, global = true, value_name = "PATH")]
    corpus: Option<PathBuf>,

    /// Model checkpoint [default: <out>/model.json]
    #[arg(long, global = true, value_name = "PATH")]
    model: Option<PathBuf>,

    /// Parallel fold workers [default: 1]
    #[arg(long, global = true, value_name = "N")]
    jobs: Option<usize>,

    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Args, Default)]
struct TrainOverrides {
    /// Training variant: full|sup|ngs|nls|nu [default: full]
    #[arg(long, value_name = "NAME")]
    variant: Option<String>,

    /// Uniformity kernel temperature [default: 2]
    #[arg(long, value_name = "F")]
    t: Option<f64>,

    /// Node-masking ratio of the global branch [default: 0.25]
    #[arg(long, value_name = "F")]
    mask_ratio: Option<f64>,

    /// Cross-validation folds [default: 5]
    #[arg(long, value_name = "N")]
    folds: Option<usize>,

    /// Training epochs (early-stopped on stale loss) [default: 200]
    #[arg(long, value_name = "N")]
    epochs: Option<usize>,

    /// Adam learning rate [default: 0.0005]
    #[arg(long, value_name = "F")]
    lr: Option<f64>,

    /// Hidden width of every encoder/decoder [default: 64]
    #[arg(long, value_name = "N")]
    d_h: Option<usize>,

    /// Events per mini-batch [default: 32]
    #[arg(long, value_name = "N")]
    batch_size: Option<usize>,

    /// Hidden-layer activation: relu|tanh [default: relu]
    #[arg(long, value_name = "NAME")]
    activation: Option<String>,
}

#[derive(Subcommand)]
enum Cmd {
    /// Generate a synthetic planted-signal corpus
    Gen {
        /// Number of events to generate [default: 400]
        #[arg(long, value_name = "N")]
        n_events: Option<usize>,
    },
    /// K-fold cross-validation plus a final model on the full corpus
    Train {
        #[command(flatten)]
        overrides: TrainOverrides,

        /// Reconstruction-loss weight [default: 0.05]
        #[arg(long, value_name = "F")]
        alpha1: Option<f64>,

        /// Uniformity-loss weight [default: 0.5]
        #[arg(long, value_name = "F")]
        alpha2: Option<f64>,
    },
    /// Evaluate a saved model on a corpus
    Eval,
    /// Early-detection curve of a saved model over deadline slices
    Early {
        /// Comma-separated deadlines in minutes
        /// [default: 10,20,30,40,60,80,100,120]
        #[arg(long, value_name = "CSV")]
        deadlines: Option<String>,
    },
    /// Sweep alpha1 or alpha2 over a grid, one hold-out split per point
    Sweep {
        #[command(flatten)]
        overrides: TrainOverrides,

        /// Comma-separated alpha1 grid (exclusive with --alpha2)
        #[arg(long, value_name = "CSV")]
        alpha1: Option<String>,

        /// Comma-separated alpha2 grid (exclusive with --alpha1)
        #[arg(long, value_name = "CSV")]
        alpha2: Option<String>,
    },
    /// Finite-difference check of the full loss gradients
    Gradcheck,
    /// Structure-only control: logistic probe over tree statistics
    Probe,
}

fn parse_csv_f64(name: &str, csv: &str) -> Result<Vec<f64>, CliError> {
    csv.split(',')
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .map(|s| {
            s.parse::<f64>()
                .map_err(|e| CliError::Usage(format!("--{name} {s:?}: {e}")))
        })
        .collect()
}

fn apply_overrides(cfg: &mut RunConfig, o: &TrainOverrides) -> Result<(), CliError> {
    if let Some(v) = &o.variant {
        cfg.train.variant = v
            .parse::<Variant>()
            .map_err(|e| CliError::Usage(format!("--variant: {e}")))?;
    }
    if let Some(v) = &o.activation {
        cfg.train.activation = v
            .parse::<Activation>()
            .map_err(|e| CliError::Usage(format!("--activation: {e}")))?;
    }
    if let Some(t) = o.t {
        cfg.train.t = t;
    }
    if let Some(r) = o.mask_ratio {
        cfg.train.mask_ratio = r;
    }
    if let Some(f) = o.folds {
        cfg.train.folds = f;
    }
    if let Some(e) = o.epochs {
        cfg.train.epochs = e;
    }
    if let Some(lr) = o.lr {
        cfg.train.lr = lr;
    }
    if let Some(d_h) = o.d_h {
        cfg.train.d_h = d_h;
    }
    if let Some(b) = o.batch_size {
        cfg.train.batch_size = b;
    }
    Ok(())
}

fn build_config(cli: &Cli) -> Result<RunConfig, CliError> {
    let mut cfg = RunConfig::default();
    cfg.apply_env()?;
    if let Some(path) = &cli.config {
        cfg.apply_file(path)?;
    }
    if let Some(seed) = cli.seed {
        cfg.set_seed(seed);
    }
    if let Some(jobs) = cli.jobs {
        cfg.train.jobs = jobs;
    }
    if let Some(out) = &cli.out {
        cfg.out = Some(out.clone());
    }
    if let Some(corpus) = &cli.corpus {
        cfg.corpus = Some(corpus.clone());
    }
    if let Some(model) = &cli.model {
        cfg.model = Some(model.clone());
    }
    Ok(cfg)
}

fn run(cli: Cli) -> Result<(), CliError> {
    let mut cfg = build_config(&cli)?;
    match &cli.cmd {
        Cmd::Gen { n_events } => {
            if let Some(n) = n_events {
                cfg.gen.n_events = *n;
            }
            commands::cmd_gen(&cfg)?;
        }
        Cmd::Train {
            overrides,
            alpha1,
            alpha2,
        } => {
            apply_overrides(&mut cfg, overrides)?;
            if let Some(a) = alpha1 {
                cfg.train.alpha1 = *a;
            }
            if let Some(a) = alpha2 {
                cfg.train.alpha2 = *a;
            }
            commands::cmd_train(&cfg)?;
        }
        Cmd::Eval => {
            commands::cmd_eval(&cfg)?;
        }
        Cmd::Early { deadlines } => {
            if let Some(csv) = deadlines {
                cfg.train.deadlines_min = parse_csv_f64("deadlines", csv)?;
            }
            commands::cmd_early(&cfg)?;
        }
        Cmd::Sweep {
            overrides,
            alpha1,
            alpha2,
        } => {
            apply_overrides(&mut cfg, overrides)?;
            let param = match (alpha1, alpha2) {
                (Some(csv), None) => SweepParam::Alpha1(parse_csv_f64("alpha1", csv)?),
                (None, Some(csv)) => SweepParam::Alpha2(parse_csv_f64("alpha2", csv)?),
                _ => {
                    return Err(CliError::Usage(
                        "sweep needs exactly one of --alpha1 or --alpha2 (a CSV grid)".to_string(),
                    ))
                }
            };
            commands::cmd_sweep(&cfg, param)?;
        }
        Cmd::Gradcheck => {
            commands::cmd_gradcheck(&cfg)?;
        }
        Cmd::Probe => {
            commands::cmd_probe(&cfg)?;
        }
    }
    Ok(())
}

fn main() {
    let cli = Cli::parse();
    if let Err(e) = run(cli) {
        eprintln!("error: {}: {}", e.kind(), e);
        std::process::exit(e.exit_code());
    }
}
