//! Experiment orchestration behind the `retro` CLI: instance generation,
//! the training modes, evaluation, theory validation and the files they
//! write.
//!
//! Layout of an output directory:
//!
//! ```text
//! <out>/config.resolved.toml
//! <out>/instances/manifest.csv, size-<s>/<split>/<id>.<ext>
//! <out>/models/<mode>/size-<s>.model
//! <out>/data/expert-size-<s>.dataset
//! <out>/metrics-<mode>.csv
//! <out>/run-<mode>.toml
//! <out>/eval-instances.csv, eval-summary.csv
//! ```

pub mod config;
pub mod domain;

use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::time::Instant;

use log::{info, warn};
use rayon::prelude::*;
use serde::Serialize;

use crate::bnb::{BnbEnv, BnbResult};
use crate::maze::MazeEnv;
use crate::policy::Model;
use crate::retro::{
    self, decision_errors, fit_policy, policy_dataset, retro_dagger, retrospective_oracle, rollout_seed, scale_up,
    select_target_terminal, Algorithm, Dataset, ErrorRate, ExplorationConfig, IterationMetrics, SizeInstances,
};
use crate::search::{run_search, Trace};
use crate::theory::{self, SimulationResult, TailReport, WalkConfig};
use crate::{rng, Error, Result};
pub use config::{csv_header_comment, EnvKind, ExperimentConfig, Mode, Seeds};
pub use domain::{generate_bank, load_bank, save_bank, Domain, InstanceBank, SizeSet, Split};

/// Process exit code for an error: 2 config, 3 training starved, 4 I/O.
pub fn exit_code(e: &Error) -> i32 {
    match e {
        Error::Config(_) | Error::Invalid(_) | Error::InvalidMazeSize(_) | Error::Divergent(_) => 2,
        Error::TrainingStarved => 3,
        Error::Io { .. } | Error::Parse { .. } => 4,
        _ => 1,
    }
}

/// Runs `f` on a rayon pool of `jobs` threads (0: rayon's default).
pub fn with_jobs<T: Send>(jobs: usize, f: impl FnOnce() -> T + Send) -> Result<T> {
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(jobs)
        .build()
        .map_err(|e| Error::Config(format!("thread pool: {e}")))?;
    Ok(pool.install(f))
}

fn write(path: &Path, text: &str) -> Result<()> {
    if let Some(dir) = path.parent() {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}

/// Writes the resolved config into the output directory.
pub fn write_resolved(cfg: &ExperimentConfig) -> Result<PathBuf> {
    let path = cfg.experiment.out.join("config.resolved.toml");
    let text = format!(
        "# rng={} seed={} hash={}\n{}",
        rng::RNG_ALGORITHM,
        cfg.experiment.seed,
        cfg.hash(),
        cfg.resolved().to_toml()
    );
    write(&path, &text)?;
    Ok(path)
}

// ---------------------------------------------------------------- generate

pub fn run_generate(cfg: &ExperimentConfig) -> Result<PathBuf> {
    cfg.validate()?;
    write_resolved(cfg)?;
    let dir = cfg.instance_dir();
    match cfg.experiment.env {
        EnvKind::Maze => save_bank::<MazeEnv>(&generate_bank::<MazeEnv>(cfg)?, &dir, cfg.seeds().instances),
        EnvKind::Bnb => save_bank::<BnbEnv>(&generate_bank::<BnbEnv>(cfg)?, &dir, cfg.seeds().instances),
    }
}

// ------------------------------------------------------------------- train

#[derive(Debug, Clone)]
pub struct SizeModel {
    pub size: usize,
    /// `None` for the expert baseline.
    pub model: Option<Model>,
    pub metrics: Vec<IterationMetrics>,
    pub warnings: Vec<String>,
}

#[derive(Debug, Clone)]
pub struct Trained {
    pub mode: Mode,
    pub sizes: Vec<SizeModel>,
    pub base_data: Option<Dataset>,
    /// Size at which training starved, if the curriculum stopped early.
    pub aborted_at: Option<usize>,
}

impl Trained {
    pub fn model_for(&self, size: usize) -> Option<&Model> {
        self.sizes.iter().find(|s| s.size == size).and_then(|s| s.model.as_ref())
    }
}

/// Retro-relabelled expert searches on `instances`.
pub fn expert_data<D: Domain>(cfg: &ExperimentConfig, instances: &[D::Instance], size: usize, seed: u64) -> Result<Dataset>
where
    D::Instance: Clone + Send,
{
    let expert = D::expert();
    let (mut data, _) =
        policy_dataset(&D::default(), instances, expert.as_ref(), &cfg.expert_budget()?, &cfg.dataset_options(), seed)?;
    data.size = size;
    Ok(data)
}

/// Model fitted to expert data at the first curriculum size, shared by all
/// learned modes, then optionally refined retrospectively at that size.
pub fn base_model<D: Domain>(cfg: &ExperimentConfig, bank: &InstanceBank<D::Instance>) -> Result<(Model, Dataset)>
where
    D::Instance: Clone + Send,
{
    let seeds = cfg.seeds();
    let size = cfg.curriculum.sizes[0];
    let set = bank.get(size)?;
    let n = cfg.expert_count().min(set.train.len());
    let data = expert_data::<D>(cfg, &set.train[..n], size, seeds.expert)?;
    if data.examples.iter().all(|e| e.negatives.is_empty()) {
        return Err(Error::TrainingStarved);
    }
    let env = D::default();
    let p = fit_policy(env.schema_id(), &data, &cfg.learner(), cfg.train.with_pruner, rng::derive(seeds.train, &[0]))?;
    let model = Model::Single(p.named(format!("base-s{size}")));
    if cfg.curriculum.base_iterations == 0 {
        return Ok((model, data));
    }
    let tc = retro::TrainConfig { iterations: cfg.curriculum.base_iterations, ..cfg.train_config()? };
    let out = retro_dagger(&env, &set.train, &set.validation, model, data, &tc, size, rng::derive(seeds.train, &[1]))?;
    Ok((out.model, out.dataset))
}

/// Trains `mode` over the whole curriculum in memory.
pub fn train_mode<D: Domain>(cfg: &ExperimentConfig, bank: &InstanceBank<D::Instance>, mode: Mode) -> Result<Trained>
where
    D::Instance: Clone + Send,
{
    let sizes = &cfg.curriculum.sizes;
    let entry = |size: usize, model: Option<Model>| SizeModel { size, model, metrics: Vec::new(), warnings: Vec::new() };
    if mode == Mode::ExpertBaseline {
        return Ok(Trained {
            mode,
            sizes: sizes.iter().map(|&s| entry(s, None)).collect(),
            base_data: None,
            aborted_at: None,
        });
    }
    let (base, data) = base_model::<D>(cfg, bank)?;
    let seeds = cfg.seeds();
    let env = D::default();
    let mut out = Trained { mode, sizes: Vec::new(), base_data: Some(data.clone()), aborted_at: None };
    match mode {
        Mode::DaggerExtrapolation => {
            out.sizes = sizes.iter().map(|&s| entry(s, Some(base.clone()))).collect();
        }
        Mode::DaggerCheating => {
            out.sizes.push(entry(sizes[0], Some(base)));
            for &size in &sizes[1..] {
                let set = bank.get(size)?;
                let mut d = data.clone();
                d.extend(expert_data::<D>(cfg, &set.train, size, rng::derive(seeds.expert, &[size as u64]))?);
                d.size = size;
                let s = rng::derive(seeds.train, &[size as u64, 0xC4EA7]);
                let p = fit_policy(env.schema_id(), &d, &cfg.learner(), cfg.train.with_pruner, s)?;
                out.sizes.push(entry(size, Some(Model::Single(p.named(format!("cheating-s{size}"))))));
            }
        }
        Mode::RetroDagger | Mode::RetroSmile => {
            let algorithm = if mode == Mode::RetroDagger { Algorithm::RetroDagger } else { Algorithm::RetroSmile };
            let instances_for = |size: usize| -> Result<SizeInstances<D::Instance>> {
                let set = bank.get(size)?;
                Ok(SizeInstances { train: set.train.clone(), validation: set.validation.clone() })
            };
            let tc = cfg.train_config()?;
            let o = scale_up(&env, sizes, instances_for, base, data, &tc, algorithm, seeds.train)?;
            out.aborted_at = o.aborted_at;
            out.sizes = o
                .sizes
                .into_iter()
                .map(|r| SizeModel { size: r.size, model: Some(r.model), metrics: r.metrics, warnings: r.warnings })
                .collect();
        }
        Mode::ExpertBaseline => unreachable!("handled above"),
    }
    Ok(out)
}

#[derive(Debug, Clone, Serialize)]
pub struct SizeRecord {
    pub size: usize,
    pub model: Option<PathBuf>,
    pub iterations: usize,
    pub best_validation: Option<f64>,
    pub warnings: Vec<String>,
}

/// What a training run produced.
#[derive(Debug, Clone, Serialize)]
pub struct RunRecord {
    pub config_hash: String,
    pub env: EnvKind,
    pub mode: Mode,
    pub rng: String,
    pub seed: u64,
    pub wall_time_s: f64,
    pub aborted_at: Option<usize>,
    pub metrics: PathBuf,
    pub sizes: Vec<SizeRecord>,
}

pub fn model_path(out: &Path, mode: Mode, size: usize) -> PathBuf {
    out.join("models").join(mode.name()).join(format!("size-{size}.model"))
}

pub fn metrics_csv(trained: &Trained, seed: u64) -> String {
    let mut out = csv_header_comment(seed);
    out.push_str("mode,size,iteration,dataset_size,validation_metric,error_rate,skipped\n");
    for s in &trained.sizes {
        for m in &s.metrics {
            let _ = writeln!(
                out,
                "{},{},{},{},{},{},{}",
                trained.mode, s.size, m.iteration, m.dataset_size, m.validation, m.error_rate, m.skipped
            );
        }
    }
    out
}

/// `train` / `scale-up`: loads the instance bank, trains, and writes models,
/// metrics and the run record. A curriculum cut short by starved training
/// keeps its artifacts; the record's `aborted_at` says where it stopped.
pub fn run_train(cfg: &ExperimentConfig) -> Result<RunRecord> {
    cfg.validate()?;
    match cfg.experiment.env {
        EnvKind::Maze => run_train_in::<MazeEnv>(cfg),
        EnvKind::Bnb => run_train_in::<BnbEnv>(cfg),
    }
}

fn run_train_in<D: Domain>(cfg: &ExperimentConfig) -> Result<RunRecord>
where
    D::Instance: Clone + Send,
{
    let start = Instant::now();
    let out = &cfg.experiment.out;
    let mode = cfg.experiment.mode;
    write_resolved(cfg)?;
    let bank = load_bank::<D>(&cfg.instance_dir())?;
    let trained = train_mode::<D>(cfg, &bank, mode)?;
    if let Some(d) = &trained.base_data {
        d.save(&write_dir(&out.join("data"))?.join(format!("expert-size-{}.dataset", cfg.curriculum.sizes[0])))?;
    }
    let mut sizes = Vec::new();
    for s in &trained.sizes {
        let model = match &s.model {
            Some(m) => {
                let p = model_path(out, mode, s.size);
                write_dir(p.parent().expect("model path has a parent"))?;
                m.save(&p)?;
                Some(p)
            }
            None => None,
        };
        sizes.push(SizeRecord {
            size: s.size,
            model,
            iterations: s.metrics.len(),
            best_validation: s.metrics.iter().map(|m| m.validation).min_by(f64::total_cmp),
            warnings: s.warnings.clone(),
        });
    }
    let metrics = out.join(format!("metrics-{mode}.csv"));
    write(&metrics, &metrics_csv(&trained, cfg.experiment.seed))?;
    let record = RunRecord {
        config_hash: cfg.hash(),
        env: cfg.experiment.env,
        mode,
        rng: rng::RNG_ALGORITHM.into(),
        seed: cfg.experiment.seed,
        wall_time_s: start.elapsed().as_secs_f64(),
        aborted_at: trained.aborted_at,
        metrics,
        sizes,
    };
    let text = toml::to_string(&record).map_err(|e| Error::Invalid(e.to_string()))?;
    write(&out.join(format!("run-{mode}.toml")), &text)?;
    Ok(record)
}

fn write_dir(dir: &Path) -> Result<&Path> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    Ok(dir)
}

// ---------------------------------------------------------------- evaluate

/// Policy under evaluation.
#[derive(Clone, Copy)]
pub enum Evaluated<'a> {
    Expert,
    Model(&'a Model),
}

#[derive(Debug, Clone, PartialEq)]
pub struct InstanceEval {
    pub instance: String,
    /// Explored squares (maze) or optimality gap in percent (B&B).
    pub metric: f64,
    pub expansions: u64,
    pub terminal_found: bool,
    /// Decisions off the retrospective path and decisions on it.
    pub errors: Option<(usize, usize)>,
    pub incumbent: Option<f64>,
    pub optimum: Option<usize>,
}

/// Clean roll-outs of one policy over `instances`.
pub fn evaluate_instances<D: Domain>(
    instances: &[D::Instance],
    policy: Evaluated<'_>,
    budget: &crate::search::SearchBudget,
    seed: u64,
) -> Result<Vec<InstanceEval>>
where
    D::Instance: Clone + Send,
{
    let env = D::default();
    let expert = D::expert();
    instances
        .par_iter()
        .enumerate()
        .map(|(j, inst)| {
            let s = rollout_seed(seed, 0, j);
            let none = ExplorationConfig::none();
            let trace: Trace<D::State> = match policy {
                Evaluated::Expert => run_search(&env, inst, expert.as_ref(), budget, &none, s)?,
                Evaluated::Model(m) => run_search(&env, inst, m.for_rollout(s), budget, &none, s)?,
            };
            let errors = select_target_terminal(&trace)
                .and_then(|t| retrospective_oracle(&trace, t))
                .ok()
                .map(|r| decision_errors(&trace, &r));
            Ok(InstanceEval {
                instance: env.instance_id(inst),
                metric: env.cost(inst, &trace),
                expansions: trace.expansions(),
                terminal_found: !trace.no_terminal_found(),
                errors,
                incumbent: trace.tree.incumbent(),
                optimum: D::optimum(inst),
            })
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvalSummary {
    pub mode: Mode,
    pub size: usize,
    pub instances: usize,
    pub mean: f64,
    pub median: f64,
    pub error_rate: ErrorRate,
}

pub fn summarize(mode: Mode, size: usize, rows: &[InstanceEval]) -> EvalSummary {
    let mut v: Vec<f64> = rows.iter().map(|r| r.metric).collect();
    v.sort_by(f64::total_cmp);
    let median = match v.len() {
        0 => f64::NAN,
        n if n % 2 == 1 => v[n / 2],
        n => (v[n / 2 - 1] + v[n / 2]) / 2.0,
    };
    let parts: Vec<(usize, usize)> = rows.iter().filter_map(|r| r.errors).collect();
    EvalSummary {
        mode,
        size,
        instances: rows.len(),
        mean: v.iter().sum::<f64>() / v.len().max(1) as f64,
        median,
        error_rate: ErrorRate::pooled(&parts, rows.len() - parts.len()),
    }
}

/// Per-instance results of one mode at every size it has a policy for.
#[derive(Debug, Clone, PartialEq)]
pub struct ModeEvaluation {
    pub mode: Mode,
    pub sizes: Vec<(usize, Vec<InstanceEval>)>,
}

impl ModeEvaluation {
    pub fn at(&self, size: usize) -> Option<&[InstanceEval]> {
        self.sizes.iter().find(|s| s.0 == size).map(|s| s.1.as_slice())
    }

    pub fn summaries(&self) -> Vec<EvalSummary> {
        self.sizes.iter().map(|(size, rows)| summarize(self.mode, *size, rows)).collect()
    }
}

/// Evaluates trained models (or the expert) on every size's test split.
pub fn evaluate_mode<D: Domain>(
    cfg: &ExperimentConfig,
    bank: &InstanceBank<D::Instance>,
    mode: Mode,
    models: &[(usize, Option<Model>)],
) -> Result<ModeEvaluation>
where
    D::Instance: Clone + Send,
{
    let budget = cfg.budget()?;
    let seed = cfg.seeds().evaluate;
    let mut sizes = Vec::new();
    for (size, model) in models {
        let set = bank.get(*size)?;
        let policy = match model {
            Some(m) => Evaluated::Model(m),
            None if mode == Mode::ExpertBaseline => Evaluated::Expert,
            None => continue,
        };
        let rows = evaluate_instances::<D>(&set.test, policy, &budget, rng::derive(seed, &[*size as u64]))?;
        sizes.push((*size, rows));
    }
    Ok(ModeEvaluation { mode, sizes })
}

pub fn instances_csv(evals: &[ModeEvaluation], seed: u64) -> String {
    let mut out = csv_header_comment(seed);
    out.push_str("mode,size,instance,metric,expansions,terminal_found,wrong_decisions,path_decisions\n");
    for e in evals {
        for (size, rows) in &e.sizes {
            for r in rows {
                let (w, a) = r.errors.map_or((String::new(), String::new()), |(w, a)| (w.to_string(), a.to_string()));
                let _ = writeln!(
                    out,
                    "{},{size},{},{},{},{},{w},{a}",
                    e.mode, r.instance, r.metric, r.expansions, r.terminal_found
                );
            }
        }
    }
    out
}

pub fn summary_csv(evals: &[ModeEvaluation], seed: u64) -> String {
    let mut out = csv_header_comment(seed);
    out.push_str("mode,size,instances,mean,median,error_rate\n");
    for e in evals {
        for s in e.summaries() {
            let _ = writeln!(out, "{},{},{},{},{},{}", s.mode, s.size, s.instances, s.mean, s.median, s.error_rate.rate);
        }
    }
    out
}

/// `evaluate`: loads models from `<out>/models/<mode>/` for each mode and
/// scores them on the test split. A learned mode without any model file is
/// an error; sizes missing from a stopped curriculum are skipped.
pub fn run_evaluate(cfg: &ExperimentConfig, modes: &[Mode]) -> Result<Vec<ModeEvaluation>> {
    cfg.validate()?;
    match cfg.experiment.env {
        EnvKind::Maze => run_evaluate_in::<MazeEnv>(cfg, modes),
        EnvKind::Bnb => run_evaluate_in::<BnbEnv>(cfg, modes),
    }
}

fn run_evaluate_in<D: Domain>(cfg: &ExperimentConfig, modes: &[Mode]) -> Result<Vec<ModeEvaluation>>
where
    D::Instance: Clone + Send,
{
    let out = &cfg.experiment.out;
    let bank = load_bank::<D>(&cfg.instance_dir())?;
    let mut evals = Vec::new();
    for &mode in modes {
        let mut models = Vec::new();
        for &size in &cfg.curriculum.sizes {
            if !mode.is_learned() {
                models.push((size, None));
                continue;
            }
            let p = model_path(out, mode, size);
            if p.exists() {
                models.push((size, Some(Model::load(&p)?)));
            } else {
                warn!("{mode}: no model for size {size} at {}", p.display());
            }
        }
        if models.is_empty() {
            let p = model_path(out, mode, cfg.curriculum.sizes[0]);
            return Err(Error::io(p, std::io::Error::new(std::io::ErrorKind::NotFound, "no trained models")));
        }
        let e = evaluate_mode::<D>(cfg, &bank, mode, &models)?;
        for s in e.summaries() {
            info!("{mode} size {}: mean {:.3}, median {:.3}, error rate {:.4}", s.size, s.mean, s.median, s.error_rate.rate);
        }
        if D::KIND == EnvKind::Bnb {
            for (size, rows) in &e.sizes {
                write(&out.join(format!("results-{mode}-size-{size}.csv")), &bnb_results(rows, cfg.search.budget))?;
            }
        }
        evals.push(e);
    }
    let seed = cfg.seeds().evaluate;
    write(&out.join("eval-instances.csv"), &instances_csv(&evals, seed))?;
    write(&out.join("eval-summary.csv"), &summary_csv(&evals, seed))?;
    Ok(evals)
}

fn bnb_results(rows: &[InstanceEval], budget: u64) -> String {
    let rows: Vec<BnbResult> = rows
        .iter()
        .map(|r| BnbResult {
            instance: r.instance.clone(),
            budget,
            incumbent: r.incumbent,
            optimum: r.optimum,
            gap_percent: r.metric,
            expansions: r.expansions,
        })
        .collect();
    crate::bnb::results_csv(&rows)
}

/// One-sided sign test: probability of at least `wins` successes out of
/// `wins + losses` fair coin flips. Ties are dropped before calling.
pub fn sign_test_p(wins: usize, losses: usize) -> f64 {
    let n = wins + losses;
    let ln_choose = |k: usize| -> f64 { (1..=k).map(|i| ((n - k + i) as f64 / i as f64).ln()).sum() };
    (wins..=n).map(|k| (ln_choose(k) - n as f64 * std::f64::consts::LN_2).exp()).sum::<f64>().min(1.0)
}

/// Wins, losses and ties of `a` against `b` (lower metric wins), matched by
/// position.
pub fn paired_outcomes(a: &[InstanceEval], b: &[InstanceEval]) -> (usize, usize, usize) {
    a.iter().zip(b).fold((0, 0, 0), |(w, l, t), (x, y)| {
        debug_assert_eq!(x.instance, y.instance);
        if x.metric < y.metric {
            (w + 1, l, t)
        } else if x.metric > y.metric {
            (w, l + 1, t)
        } else {
            (w, l, t + 1)
        }
    })
}

// ------------------------------------------------------------------ theory

#[derive(Debug, Clone)]
pub struct TheoryRow {
    pub sim: SimulationResult,
    pub expected: f64,
    pub relative_error: f64,
    pub tail: TailReport,
}

impl TheoryRow {
    pub fn mean_ok(&self) -> bool {
        self.relative_error <= 0.02
    }
}

#[derive(Debug, Clone)]
pub struct TheoryReport {
    pub rows: Vec<TheoryRow>,
    /// Mean at `eps_hi` over mean at `eps_lo`, and the predicted ratio.
    pub ratio: Option<(f64, f64)>,
}

impl TheoryReport {
    pub fn csv(&self) -> String {
        let mut out = String::from(theory::csv_header());
        for r in &self.rows {
            out.push_str(&theory::csv_rows(&r.sim, &r.tail));
        }
        out
    }

    pub fn summary(&self) -> String {
        let mut out = String::new();
        let verdict = |ok: bool| if ok { "PASS" } else { "FAIL" };
        for r in &self.rows {
            let c = &r.sim.config;
            let slope = r.tail.slope.map_or("n/a".into(), |s| format!("{s:.3}"));
            let _ = writeln!(
                out,
                "eps={} N={} mean={:.4} expected={:.4} rel_err={:.3}% mean:{} tail_slope={slope} tail:{} cap_hits={}",
                c.epsilon,
                c.target,
                r.sim.mean,
                r.expected,
                100.0 * r.relative_error,
                verdict(r.mean_ok()),
                verdict(r.tail.decays()),
                r.sim.cap_hits,
            );
        }
        if let Some((got, want)) = self.ratio {
            let ok = ((got - want) / want).abs() <= 0.05;
            let _ = writeln!(out, "ratio eps=0.3/eps=0.1 at N=20: {got:.4} (predicted {want:.4}) {}", verdict(ok));
        }
        out
    }
}

/// Simulates every `(epsilon, N)` pair of the grid, plus the mean ratio
/// between `epsilon = 0.1` and `0.3` at `N = 20`.
pub fn validate_theory(epsilons: &[f64], targets: &[u64], trials: u64, seed: u64) -> Result<TheoryReport> {
    let mut rows = Vec::new();
    for (i, &eps) in epsilons.iter().enumerate() {
        for (k, &n) in targets.iter().enumerate() {
            let sim = theory::simulate_hitting_time(&WalkConfig::new(eps, n, trials, rng::derive(seed, &[i as u64, k as u64])))?;
            let expected = theory::expected_hitting_time(eps, n)?;
            let relative_error = (sim.mean - expected).abs() / expected;
            let tail = theory::tail_check(&sim);
            rows.push(TheoryRow { sim, expected, relative_error, tail });
        }
    }
    let lo = theory::simulate_hitting_time(&WalkConfig::new(0.1, 20, trials, rng::derive(seed, &[0x10])))?;
    let hi = theory::simulate_hitting_time(&WalkConfig::new(0.3, 20, trials, rng::derive(seed, &[0x30])))?;
    let want = theory::expected_hitting_time(0.3, 20)? / theory::expected_hitting_time(0.1, 20)?;
    Ok(TheoryReport { rows, ratio: Some((hi.mean / lo.mean, want)) })
}

/// `validate-theory`: writes `theory.csv` and `theory-summary.txt`.
pub fn run_validate_theory(epsilons: &[f64], targets: &[u64], trials: u64, seed: u64, out: &Path) -> Result<TheoryReport> {
    let report = validate_theory(epsilons, targets, trials, seed)?;
    write(&out.join("theory.csv"), &format!("{}{}", csv_header_comment(seed), report.csv()))?;
    write(&out.join("theory-summary.txt"), &report.summary())?;
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sign_test_values() {
        assert!((sign_test_p(1, 0) - 0.5).abs() < 1e-12);
        assert!((sign_test_p(3, 0) - 0.125).abs() < 1e-12);
        assert!((sign_test_p(0, 4) - 1.0).abs() < 1e-12);
        // P(X >= 8 | n = 10) = 56 / 1024
        assert!((sign_test_p(8, 2) - 56.0 / 1024.0).abs() < 1e-12);
        assert!(sign_test_p(70, 30) < 1e-4);
    }

    #[test]
    fn exit_codes() {
        assert_eq!(exit_code(&Error::Config("x".into())), 2);
        assert_eq!(exit_code(&Error::TrainingStarved), 3);
        assert_eq!(exit_code(&Error::io("/x", std::io::Error::other("boom"))), 4);
    }

    #[test]
    fn theory_zero_epsilon_row_is_exact() {
        let r = validate_theory(&[0.0], &[10], 500, 1).unwrap();
        assert_eq!(r.rows[0].sim.mean, 10.0);
        assert!(r.rows[0].mean_ok());
        assert_eq!(r.csv().lines().count(), 1 + 4);
    }
}
