//! `retro`: generate instances, train and evaluate search policies, and
//! check the hitting-time model.
//!
//! Exit codes: 0 success, 2 config error, 3 training starved, 4 I/O error.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use log::{error, info};
use retro_core::harness::{self, EnvKind, ExperimentConfig, Mode};
use retro_core::{Error, Result};

#[derive(Parser)]
#[command(name = "retro", version, about = "Retrospective imitation for tree search")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Write train/validation/test instances and a manifest.
    Generate {
        #[command(flatten)]
        common: Common,
        /// Curriculum sizes, overriding the config.
        #[arg(long, value_delimiter = ',')]
        sizes: Option<Vec<usize>>,
        /// Instance counts as train,validation,test.
        #[arg(long, value_delimiter = ',')]
        counts: Option<Vec<usize>>,
    },
    /// Train the selected mode over the curriculum.
    Train(Common),
    /// Same as `train`; requires at least two curriculum sizes.
    ScaleUp(Common),
    /// Score trained models (or the expert) on the test instances.
    Evaluate {
        #[command(flatten)]
        common: Common,
        /// Comma-separated modes to evaluate, or `all`.
        #[arg(long = "modes", value_delimiter = ',')]
        modes: Option<Vec<String>>,
    },
    /// Simulate biased-walk hitting times and compare with the closed form.
    ValidateTheory {
        #[arg(long, value_delimiter = ',', default_value = "0.1,0.2,0.3,0.4")]
        epsilons: Vec<f64>,
        #[arg(long, value_delimiter = ',', default_value = "10,50")]
        targets: Vec<u64>,
        #[arg(long, default_value_t = 100_000)]
        trials: u64,
        #[arg(long, default_value_t = 1)]
        seed: u64,
        #[arg(long, default_value_t = 0)]
        jobs: usize,
        #[arg(long, default_value = "runs/theory")]
        out: PathBuf,
    },
}

#[derive(Args)]
struct Common {
    /// Environment: maze or bnb. Required without --config.
    #[arg(long)]
    env: Option<EnvKind>,
    #[arg(long)]
    mode: Option<Mode>,
    /// TOML experiment config.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Root seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Worker threads (0: one per core).
    #[arg(long)]
    jobs: Option<usize>,
    /// Expansion budget for roll-outs and evaluation.
    #[arg(long)]
    budget: Option<u64>,
    /// Output directory.
    #[arg(long)]
    out: Option<PathBuf>,
}

impl Common {
    /// Config precedence: `--config`, then a config resolved earlier into
    /// `--out`, then the defaults for `--env`; flags override all three.
    fn resolve(&self) -> Result<ExperimentConfig> {
        let earlier = self.out.as_ref().map(|o| o.join("config.resolved.toml")).filter(|p| p.exists());
        let mut cfg = match (self.config.as_ref().or(earlier.as_ref()), self.env) {
            (Some(path), env) => {
                let cfg = ExperimentConfig::load(path)?;
                if env.is_some_and(|e| e != cfg.experiment.env) {
                    return Err(Error::Config(format!("--env disagrees with {}", path.display())));
                }
                cfg
            }
            (None, Some(env)) => ExperimentConfig::defaults(env),
            (None, None) => return Err(Error::Config("either --config or --env is required".into())),
        };
        if let Some(m) = self.mode {
            cfg.experiment.mode = m;
        }
        if let Some(s) = self.seed {
            cfg.experiment.seed = s;
        }
        if let Some(j) = self.jobs {
            cfg.experiment.jobs = j;
        }
        if let Some(b) = self.budget {
            cfg.search.budget = b;
        }
        if let Some(o) = &self.out {
            cfg.experiment.out = o.clone();
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

fn run(cli: Cli) -> Result<ExitCode> {
    match cli.command {
        Command::Generate { common, sizes, counts } => {
            let mut cfg = common.resolve()?;
            if let Some(s) = sizes {
                cfg.curriculum.sizes = s;
            }
            if let Some(c) = counts {
                if c.len() != 3 {
                    return Err(Error::Config("--counts takes train,validation,test".into()));
                }
                (cfg.instances.train, cfg.instances.validation, cfg.instances.test) = (c[0], c[1], c[2]);
            }
            let manifest = harness::with_jobs(cfg.experiment.jobs, || harness::run_generate(&cfg))??;
            println!("{}", manifest.display());
        }
        Command::Train(common) => train(common.resolve()?)?,
        Command::ScaleUp(common) => {
            let cfg = common.resolve()?;
            if cfg.curriculum.sizes.len() < 2 {
                return Err(Error::Config("scale-up needs at least two curriculum sizes".into()));
            }
            train(cfg)?;
        }
        Command::Evaluate { common, modes } => {
            let cfg = common.resolve()?;
            let modes: Vec<Mode> = match modes.as_deref() {
                None => vec![cfg.experiment.mode],
                Some([all]) if all == "all" => Mode::ALL
                    .into_iter()
                    .filter(|m| !m.is_learned() || cfg.experiment.out.join("models").join(m.name()).is_dir())
                    .collect(),
                Some(list) => list.iter().map(|m| m.parse()).collect::<Result<_>>()?,
            };
            let evals = harness::with_jobs(cfg.experiment.jobs, || harness::run_evaluate(&cfg, &modes))??;
            for e in &evals {
                for s in e.summaries() {
                    println!(
                        "{} size {}: mean {:.3} median {:.3} error_rate {:.4} ({} instances)",
                        s.mode, s.size, s.mean, s.median, s.error_rate.rate, s.instances
                    );
                }
            }
        }
        Command::ValidateTheory { epsilons, targets, trials, seed, jobs, out } => {
            let report = harness::with_jobs(jobs, || harness::run_validate_theory(&epsilons, &targets, trials, seed, &out))??;
            print!("{}", report.summary());
            info!("wrote {}", out.join("theory.csv").display());
        }
    }
    Ok(ExitCode::SUCCESS)
}

fn train(cfg: ExperimentConfig) -> Result<()> {
    let record = harness::with_jobs(cfg.experiment.jobs, || harness::run_train(&cfg))??;
    for s in &record.sizes {
        let model = s.model.as_ref().map_or("-".into(), |p| p.display().to_string());
        println!("size {}: {model}", s.size);
    }
    if let Some(size) = record.aborted_at {
        return Err(Error::TrainingStarved).inspect_err(|_| error!("curriculum stopped at size {size}"));
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    match run(Cli::parse()) {
        Ok(code) => code,
        Err(e) => {
            error!("{e}");
            ExitCode::from(harness::exit_code(&e) as u8)
        }
    }
}
