//! Experiment configuration: a TOML file with one table per concern, plus
//! command-line overrides. Every run writes the fully resolved config, seeds
//! included, next to its outputs.

use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::policy::LearnerConfig;
use crate::retro::{DatasetOptions, ExplorationConfig, TrainConfig};
use crate::search::{SearchBudget, StopMode};
use crate::{rng, Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EnvKind {
    Maze,
    Bnb,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Mode {
    RetroDagger,
    RetroSmile,
    DaggerExtrapolation,
    DaggerCheating,
    ExpertBaseline,
}

impl Mode {
    pub const ALL: [Mode; 5] =
        [Mode::RetroDagger, Mode::RetroSmile, Mode::DaggerExtrapolation, Mode::DaggerCheating, Mode::ExpertBaseline];

    pub fn name(self) -> &'static str {
        match self {
            Mode::RetroDagger => "retro_dagger",
            Mode::RetroSmile => "retro_smile",
            Mode::DaggerExtrapolation => "dagger_extrapolation",
            Mode::DaggerCheating => "dagger_cheating",
            Mode::ExpertBaseline => "expert_baseline",
        }
    }

    pub fn is_learned(self) -> bool {
        self != Mode::ExpertBaseline
    }
}

impl fmt::Display for Mode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Mode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Mode::ALL
            .into_iter()
            .find(|m| m.name() == s.replace('-', "_"))
            .ok_or_else(|| Error::Config(format!("unknown mode {s:?}")))
    }
}

impl fmt::Display for EnvKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            EnvKind::Maze => "maze",
            EnvKind::Bnb => "bnb",
        })
    }
}

impl FromStr for EnvKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "maze" => Ok(EnvKind::Maze),
            "bnb" => Ok(EnvKind::Bnb),
            _ => Err(Error::Config(format!("unknown environment {s:?}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentSection {
    pub env: EnvKind,
    pub mode: Mode,
    pub seed: u64,
    pub out: PathBuf,
    /// Worker threads; 0 lets rayon decide.
    #[serde(default)]
    pub jobs: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CurriculumSection {
    /// Strictly increasing; expert data is used at the first size only
    /// (every size for `dagger_cheating`).
    pub sizes: Vec<usize>,
    /// Retrospective iterations at the base size after the expert fit.
    #[serde(default)]
    pub base_iterations: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InstanceSection {
    pub train: usize,
    pub validation: usize,
    pub test: usize,
    /// Instances carrying expert demonstrations at the base size; defaults
    /// to `train`.
    #[serde(default)]
    pub expert: Option<usize>,
    /// Mean degree of the random graphs (branch-and-bound only).
    #[serde(default = "default_degree")]
    pub degree: f64,
    /// Instance directory; defaults to `<out>/instances`.
    #[serde(default)]
    pub dir: Option<PathBuf>,
}

fn default_degree() -> f64 {
    5.0
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SearchSection {
    /// Expansion budget for roll-outs and evaluation.
    pub budget: u64,
    /// Budget for the expert searches that produce demonstrations.
    pub expert_budget: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainSection {
    pub iterations: usize,
    pub alpha: f64,
    pub epsilon: f64,
    pub noise_variance: f64,
    #[serde(default)]
    pub multi_terminal: bool,
    #[serde(default = "one")]
    pub first_pass_restarts: usize,
    #[serde(default)]
    pub max_negatives: usize,
    #[serde(default)]
    pub with_pruner: bool,
}

fn one() -> usize {
    1
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LearnerSection {
    pub learning_rate: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub hidden: usize,
    pub w_opt: f64,
}

/// Seeds of the independent random streams. Missing entries are derived
/// from the root seed and written back on resolution.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SeedSection {
    pub instances: Option<u64>,
    pub expert: Option<u64>,
    pub train: Option<u64>,
    pub evaluate: Option<u64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub experiment: ExperimentSection,
    pub curriculum: CurriculumSection,
    pub instances: InstanceSection,
    pub search: SearchSection,
    pub train: TrainSection,
    pub learner: LearnerSection,
    #[serde(default)]
    pub seeds: SeedSection,
}

/// Resolved seeds, all explicit.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Seeds {
    pub instances: u64,
    pub expert: u64,
    pub train: u64,
    pub evaluate: u64,
}

impl ExperimentConfig {
    /// Defaults for one environment.
    pub fn defaults(env: EnvKind) -> Self {
        let experiment = ExperimentSection {
            env,
            mode: Mode::RetroDagger,
            seed: 20_180_101,
            out: PathBuf::from(format!("runs/{env}")),
            jobs: 0,
        };
        let learner = LearnerSection { learning_rate: 0.05, epochs: 30, batch_size: 16, hidden: 16, w_opt: 5.0 };
        match env {
            EnvKind::Maze => ExperimentConfig {
                experiment,
                curriculum: CurriculumSection { sizes: vec![11, 15, 21, 25, 31], base_iterations: 0 },
                instances: InstanceSection {
                    train: 48,
                    validation: 2,
                    test: 100,
                    expert: None,
                    degree: default_degree(),
                    dir: None,
                },
                search: SearchSection { budget: 100_000, expert_budget: 100_000 },
                train: TrainSection {
                    iterations: 3,
                    alpha: 0.5,
                    epsilon: 0.05,
                    noise_variance: 0.05,
                    multi_terminal: false,
                    first_pass_restarts: 1,
                    max_negatives: 0,
                    with_pruner: false,
                },
                learner,
                seeds: SeedSection::default(),
            },
            EnvKind::Bnb => ExperimentConfig {
                experiment,
                curriculum: CurriculumSection { sizes: vec![30, 40, 50], base_iterations: 0 },
                instances: InstanceSection {
                    train: 45,
                    validation: 5,
                    test: 100,
                    expert: Some(15),
                    degree: default_degree(),
                    dir: None,
                },
                search: SearchSection { budget: 250, expert_budget: 3000 },
                train: TrainSection {
                    iterations: 3,
                    alpha: 0.5,
                    epsilon: 0.05,
                    noise_variance: 0.05,
                    multi_terminal: true,
                    first_pass_restarts: 1,
                    max_negatives: 0,
                    with_pruner: false,
                },
                learner,
                seeds: SeedSection::default(),
            },
        }
    }

    pub fn parse(text: &str) -> Result<Self> {
        let cfg: ExperimentConfig = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::parse(&std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?)
    }

    pub fn seeds(&self) -> Seeds {
        let root = self.experiment.seed;
        let s = &self.seeds;
        // TOML integers are signed; keep derived seeds writable
        let sub = |k: u64| rng::derive(root, &[k]) >> 1;
        Seeds {
            instances: s.instances.unwrap_or_else(|| sub(1)),
            expert: s.expert.unwrap_or_else(|| sub(2)),
            train: s.train.unwrap_or_else(|| sub(3)),
            evaluate: s.evaluate.unwrap_or_else(|| sub(4)),
        }
    }

    /// Copy with every defaulted field made explicit.
    pub fn resolved(&self) -> Self {
        let mut c = self.clone();
        let s = self.seeds();
        c.seeds = SeedSection {
            instances: Some(s.instances),
            expert: Some(s.expert),
            train: Some(s.train),
            evaluate: Some(s.evaluate),
        };
        c.instances.expert = Some(self.expert_count());
        c.instances.dir = Some(self.instance_dir());
        c
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    pub fn instance_dir(&self) -> PathBuf {
        self.instances.dir.clone().unwrap_or_else(|| self.experiment.out.join("instances"))
    }

    pub fn expert_count(&self) -> usize {
        self.instances.expert.unwrap_or(self.instances.train).min(self.instances.train)
    }

    pub fn validate(&self) -> Result<()> {
        let sizes = &self.curriculum.sizes;
        if sizes.is_empty() || sizes.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::Config("curriculum.sizes must be nonempty and strictly increasing".into()));
        }
        match self.experiment.env {
            EnvKind::Maze => {
                if let Some(s) = sizes.iter().find(|&&s| s < 5 || s % 2 == 0) {
                    return Err(Error::Config(format!("maze size {s} must be odd and at least 5")));
                }
            }
            EnvKind::Bnb => {
                if let Some(s) = sizes.iter().find(|&&s| !(2..=64).contains(&s)) {
                    return Err(Error::Config(format!("graph size {s} outside 2..=64")));
                }
                if self.instances.degree.is_nan() || self.instances.degree <= 0.0 {
                    return Err(Error::Config("instances.degree must be positive".into()));
                }
            }
        }
        if self.instances.train == 0 || self.instances.test == 0 {
            return Err(Error::Config("instances.train and instances.test must be positive".into()));
        }
        if self.instances.expert == Some(0) {
            return Err(Error::Config("instances.expert must be positive".into()));
        }
        if self.search.budget == 0 || self.search.expert_budget == 0 {
            return Err(Error::Config("search budgets must be positive".into()));
        }
        if self.experiment.mode.is_learned() && self.experiment.mode != Mode::DaggerExtrapolation {
            self.train_config()?.validate().map_err(as_config)?;
        }
        self.learner().validate().map_err(as_config)
    }

    pub fn learner(&self) -> LearnerConfig {
        let l = &self.learner;
        LearnerConfig {
            learning_rate: l.learning_rate,
            epochs: l.epochs,
            batch_size: l.batch_size,
            seed: 0,
            hidden: l.hidden,
            w_opt: l.w_opt,
        }
    }

    pub fn stop_mode(&self) -> StopMode {
        match self.experiment.env {
            EnvKind::Maze => StopMode::FirstTerminal,
            EnvKind::Bnb => StopMode::ExhaustBudget,
        }
    }

    pub fn budget(&self) -> Result<SearchBudget> {
        SearchBudget::new(self.search.budget, self.stop_mode()).map_err(as_config)
    }

    pub fn expert_budget(&self) -> Result<SearchBudget> {
        SearchBudget::new(self.search.expert_budget, self.stop_mode()).map_err(as_config)
    }

    pub fn dataset_options(&self) -> DatasetOptions {
        DatasetOptions { max_negatives: self.train.max_negatives, with_pruner: self.train.with_pruner }
    }

    pub fn train_config(&self) -> Result<TrainConfig> {
        let t = &self.train;
        Ok(TrainConfig {
            iterations: t.iterations,
            alpha: t.alpha,
            exploration: ExplorationConfig {
                epsilon: t.epsilon,
                noise_variance: t.noise_variance,
                multi_terminal: t.multi_terminal,
            },
            learner: self.learner(),
            data: self.dataset_options(),
            budget: self.budget()?,
            first_pass_restarts: t.first_pass_restarts,
        })
    }

    /// FNV-1a of the resolved TOML; identifies a configuration in records.
    pub fn hash(&self) -> String {
        let text = self.resolved().to_toml();
        let h = text.bytes().fold(0xcbf2_9ce4_8422_2325u64, |h, b| (h ^ u64::from(b)).wrapping_mul(0x100_0000_01b3));
        format!("{h:016x}")
    }
}

fn as_config(e: Error) -> Error {
    match e {
        Error::Config(_) => e,
        other => Error::Config(other.to_string()),
    }
}

/// Header line for every CSV the harness writes.
pub fn csv_header_comment(seed: u64) -> String {
    format!("# rng={} seed={seed}\n", rng::RNG_ALGORITHM)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_validate_and_round_trip() {
        for env in [EnvKind::Maze, EnvKind::Bnb] {
            let c = ExperimentConfig::defaults(env);
            c.validate().unwrap();
            let r = c.resolved();
            let back = ExperimentConfig::parse(&r.to_toml()).unwrap();
            assert_eq!(back, r);
            assert_eq!(back.seeds(), c.seeds());
            assert_eq!(back.hash(), c.hash());
        }
    }

    #[test]
    fn rejects_bad_configs() {
        let mut c = ExperimentConfig::defaults(EnvKind::Maze);
        c.curriculum.sizes = vec![11, 16];
        assert!(matches!(c.validate(), Err(Error::Config(_))));
        c.curriculum.sizes = vec![21, 11];
        assert!(c.validate().is_err());
        let mut c = ExperimentConfig::defaults(EnvKind::Bnb);
        c.train.alpha = 2.0;
        assert!(matches!(c.validate(), Err(Error::Config(_))));
        let text = ExperimentConfig::defaults(EnvKind::Bnb).to_toml().replace("[learner]", "[learner]\nbogus = 1");
        assert!(matches!(ExperimentConfig::parse(&text), Err(Error::Config(_))));
    }

    #[test]
    fn mode_names() {
        for m in Mode::ALL {
            assert_eq!(m.name().parse::<Mode>().unwrap(), m);
        }
        assert_eq!("retro-smile".parse::<Mode>().unwrap(), Mode::RetroSmile);
        assert!("dagger".parse::<Mode>().is_err());
    }
}
