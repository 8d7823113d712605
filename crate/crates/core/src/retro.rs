//! Retrospective imitation.
//!
//! A roll-out's trace contains every detour the policy took. Following parent
//! links back from the best terminal gives the path the policy *should* have
//! walked, and every decision point along that path becomes a training
//! example. [`retro_dagger`] and [`retro_smile`] iterate this at one problem
//! size; [`scale_up`] chains them across growing sizes starting from expert
//! data at the smallest one.

use std::fmt::Write as _;
use std::path::Path;

use log::{info, warn};
use rand::seq::index;
use rand::Rng as _;
use rayon::prelude::*;

use crate::policy::{
    normalize_query, train_pruner, train_ranker, FeatureVector, LabeledExample, LearnedPolicy, LearnerConfig, Lines,
    Mixture, Model, Pruner, PruneExample, Ranker,
};
use crate::search::{run_search, Environment, NodeId, Policy, SearchBudget, SearchTree, StopMode, Trace};
use crate::{rng, Error, Result};

/// Exploration applied to a roll-out.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ExplorationConfig {
    /// Probability of popping a uniformly random frontier node.
    pub epsilon: f64,
    /// Variance of Gaussian noise added to every score before the argmax.
    pub noise_variance: f64,
    /// Keep searching after the first terminal so the best of several can be
    /// the learning target.
    pub multi_terminal: bool,
}

impl Default for ExplorationConfig {
    fn default() -> Self {
        ExplorationConfig { epsilon: 0.05, noise_variance: 0.05, multi_terminal: false }
    }
}

impl ExplorationConfig {
    pub fn none() -> Self {
        ExplorationConfig { epsilon: 0.0, noise_variance: 0.0, multi_terminal: false }
    }

    pub fn is_none(&self) -> bool {
        self.epsilon == 0.0 && self.noise_variance == 0.0
    }

    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.epsilon) {
            return Err(Error::Config(format!("epsilon {} outside [0, 1]", self.epsilon)));
        }
        if !(self.noise_variance >= 0.0 && self.noise_variance.is_finite()) {
            return Err(Error::Config(format!("noise variance {} must be >= 0", self.noise_variance)));
        }
        Ok(())
    }

    /// Same exploration with the multi-terminal flag kept but no randomness.
    fn clean(&self) -> Self {
        ExplorationConfig { multi_terminal: self.multi_terminal, ..Self::none() }
    }
}

/// Root-to-terminal path recovered from a trace.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RetroTrace {
    pub path: Vec<NodeId>,
    pub terminal: NodeId,
    pub source_trace: String,
}

pub fn retrospective_oracle<S>(trace: &Trace<S>, terminal: NodeId) -> Result<RetroTrace> {
    if !trace.tree.terminals().contains(&terminal) {
        return Err(Error::UnknownTerminal(terminal.0));
    }
    Ok(RetroTrace {
        path: trace.tree.path_from_root(terminal),
        terminal,
        source_trace: format!("{}#{}", trace.instance_id, trace.seed),
    })
}

/// Terminal with the lowest objective; ties go to the smaller id.
pub fn select_target_terminal<S>(trace: &Trace<S>) -> Result<NodeId> {
    trace
        .tree
        .terminals()
        .iter()
        .copied()
        .min_by(|&a, &b| {
            let (oa, ob) = (trace.tree.node(a).objective, trace.tree.node(b).objective);
            oa.unwrap_or(f64::INFINITY).total_cmp(&ob.unwrap_or(f64::INFINITY)).then(a.cmp(&b))
        })
        .ok_or(Error::NoTerminalFound)
}

/// Ranking and pruning examples plus where they came from.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct Dataset {
    pub feature_dim: usize,
    pub iteration: usize,
    pub size: usize,
    pub examples: Vec<LabeledExample>,
    pub prune: Vec<PruneExample>,
}

impl Dataset {
    pub fn new(feature_dim: usize, iteration: usize, size: usize) -> Self {
        Dataset { feature_dim, iteration, size, ..Default::default() }
    }

    pub fn len(&self) -> usize {
        self.examples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.examples.is_empty()
    }

    pub fn extend(&mut self, other: Dataset) {
        self.examples.extend(other.examples);
        self.prune.extend(other.prune);
    }

    pub fn to_text(&self) -> String {
        let mut out = String::from("# retro-dataset v1\n");
        let _ = writeln!(out, "feature_dim {}", self.feature_dim);
        let _ = writeln!(out, "iteration {}", self.iteration);
        let _ = writeln!(out, "size {}", self.size);
        let _ = writeln!(out, "examples {}", self.examples.len());
        let row = |out: &mut String, tag: &str, v: &FeatureVector| {
            out.push_str(tag);
            for x in &v.values {
                let _ = write!(out, " {x}");
            }
            out.push('\n');
        };
        for ex in &self.examples {
            let _ = writeln!(out, "example {} {} {}", ex.instance_id, ex.decision_step, ex.negatives.len());
            row(&mut out, "p", &ex.preferred);
            for n in &ex.negatives {
                row(&mut out, "n", n);
            }
        }
        let _ = writeln!(out, "prune {}", self.prune.len());
        for p in &self.prune {
            let _ = writeln!(out, "label {} {}", p.instance_id, u8::from(p.keep));
            row(&mut out, "x", &p.features);
        }
        out
    }

    pub fn parse(text: &str) -> Result<Self> {
        let mut lines = Lines::new(text);
        let (n, head) = lines.next()?;
        if head != "# retro-dataset v1" {
            return Err(Error::parse(n, "missing dataset header"));
        }
        let feature_dim: usize = lines.parsed("feature_dim")?;
        let iteration = lines.parsed("iteration")?;
        let size = lines.parsed("size")?;
        let row = |lines: &mut Lines<'_>, tag: &str| -> Result<FeatureVector> {
            let (n, rest) = lines.keyed(tag).or_else(|e| {
                // an empty vector is written as a bare tag
                if feature_dim == 0 {
                    Ok((0, ""))
                } else {
                    Err(e)
                }
            })?;
            let values: Vec<f64> = rest
                .split(' ')
                .filter(|t| !t.is_empty())
                .map(|t| t.parse().map_err(|e| Error::parse(n, format!("bad value: {e}"))))
                .collect::<Result<_>>()?;
            if values.len() != feature_dim {
                return Err(Error::parse(n, format!("expected {feature_dim} values, got {}", values.len())));
            }
            Ok(FeatureVector::new(values))
        };
        let count: usize = lines.parsed("examples")?;
        let mut examples = Vec::with_capacity(count);
        for _ in 0..count {
            let (n, head) = lines.keyed("example")?;
            let parts: Vec<&str> = head.split(' ').collect();
            if parts.len() != 3 {
                return Err(Error::parse(n, "example line needs instance step negatives"));
            }
            let step = parts[1].parse().map_err(|e| Error::parse(n, format!("{e}")))?;
            let negs: usize = parts[2].parse().map_err(|e| Error::parse(n, format!("{e}")))?;
            let preferred = row(&mut lines, "p")?;
            let negatives = (0..negs).map(|_| row(&mut lines, "n")).collect::<Result<_>>()?;
            examples.push(LabeledExample { preferred, negatives, instance_id: parts[0].to_string(), decision_step: step });
        }
        let count: usize = lines.parsed("prune")?;
        let mut prune = Vec::with_capacity(count);
        for _ in 0..count {
            let (n, head) = lines.keyed("label")?;
            let (id, keep) = head.rsplit_once(' ').ok_or_else(|| Error::parse(n, "label line"))?;
            let keep = match keep {
                "1" => true,
                "0" => false,
                _ => return Err(Error::parse(n, "keep flag must be 0 or 1")),
            };
            prune.push(PruneExample { features: row(&mut lines, "x")?, keep, instance_id: id.to_string() });
        }
        Ok(Dataset { feature_dim, iteration, size, examples, prune })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_text()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::parse(&std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
#[derive(Default)]
pub struct DatasetOptions {
    /// Cap on negatives per example (deterministic subsample); 0 keeps all.
    pub max_negatives: usize,
    /// Also emit keep/prune labels.
    pub with_pruner: bool,
}


/// Replays `trace` and, at every step where the next node of `retro.path`
/// sits in the frontier next to other nodes, emits an example preferring it
/// over the rest. Features are normalized over the frontier of that step.
pub fn make_dataset<E: Environment>(
    env: &E,
    inst: &E::Instance,
    trace: &Trace<E::State>,
    retro: &RetroTrace,
    opts: &DatasetOptions,
    seed: u64,
) -> Dataset {
    let mut data = Dataset::new(env.feature_dim(), 0, 0);
    if retro.path.len() <= 1 {
        return data;
    }
    let full = &trace.tree;
    let mut on_path = vec![false; full.len()];
    for &p in &retro.path {
        on_path[p.index()] = true;
    }
    let last_choice = retro.path[retro.path.len() - 2];
    let root = full.node(NodeId::ROOT);
    let mut tree = SearchTree::with_root(root.state.clone(), root.objective);
    let mut path_done = false;
    for ev in &trace.events {
        if path_done && !opts.with_pruner {
            break;
        }
        let frontier = tree.frontier().to_vec();
        let target = frontier.iter().position(|id| on_path[id.index()]);
        let want_example = target.is_some() && frontier.len() > 1;
        let want_label = opts.with_pruner && ev.popped != NodeId::ROOT;
        if want_example || want_label {
            let raw = env.batch_features(inst, &tree, &frontier);
            let (norm, _) = normalize_query(&raw);
            if let (true, Some(t)) = (want_example, target) {
                let mut negatives: Vec<FeatureVector> =
                    norm.iter().enumerate().filter(|&(i, _)| i != t).map(|(_, f)| f.clone()).collect();
                if opts.max_negatives > 0 && negatives.len() > opts.max_negatives {
                    let mut r = rng::from_seed(rng::derive(seed, &[ev.step]));
                    let mut keep = index::sample(&mut r, negatives.len(), opts.max_negatives).into_vec();
                    keep.sort_unstable();
                    negatives = keep.into_iter().map(|i| negatives[i].clone()).collect();
                }
                data.examples.push(LabeledExample {
                    preferred: norm[t].clone(),
                    negatives,
                    instance_id: trace.instance_id.clone(),
                    decision_step: ev.step,
                });
            }
            if want_label {
                let at = frontier.iter().position(|&id| id == ev.popped).expect("popped node is in the frontier");
                data.prune.push(PruneExample {
                    features: norm[at].clone(),
                    keep: on_path[ev.popped.index()],
                    instance_id: trace.instance_id.clone(),
                });
            }
        }
        if tree.take(ev.popped).is_err() {
            break;
        }
        for &c in &ev.children {
            let node = full.node(c);
            tree.insert_child(ev.popped, node.state.clone(), node.objective);
        }
        if ev.popped == last_choice {
            path_done = true;
        }
    }
    data
}

/// Disagreements between a roll-out and its own retrospective path.
///
/// Every non-root node on the path is one decision: right after it was
/// enqueued, was it the next node popped? The action count is the path's
/// depth.
pub fn decision_errors<S>(trace: &Trace<S>, retro: &RetroTrace) -> (usize, usize) {
    let actions = retro.path.len() - 1;
    let mut wrong = 0;
    for k in 1..actions {
        let parent = retro.path[k - 1];
        let at = trace.events.iter().position(|e| e.popped == parent);
        if let Some(at) = at {
            if trace.events.get(at + 1).is_none_or(|e| e.popped != retro.path[k]) {
                wrong += 1;
            }
        }
    }
    (wrong, actions)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ErrorRate {
    pub rate: f64,
    pub disagreements: usize,
    pub actions: usize,
    /// Instances skipped because the roll-out found no terminal.
    pub excluded: usize,
}

impl ErrorRate {
    pub fn pooled(parts: &[(usize, usize)], excluded: usize) -> Self {
        let disagreements = parts.iter().map(|p| p.0).sum();
        let actions: usize = parts.iter().map(|p| p.1).sum();
        let rate = if actions == 0 { 0.0 } else { disagreements as f64 / actions as f64 };
        ErrorRate { rate, disagreements, actions, excluded }
    }

    /// Mean of per-instance ratios, offered for reporting.
    pub fn per_instance_mean(parts: &[(usize, usize)]) -> f64 {
        let ratios: Vec<f64> = parts.iter().filter(|p| p.1 > 0).map(|p| p.0 as f64 / p.1 as f64).collect();
        if ratios.is_empty() {
            0.0
        } else {
            ratios.iter().sum::<f64>() / ratios.len() as f64
        }
    }
}

/// Error rate from already collected traces.
pub fn error_rate_of<S>(traces: &[Trace<S>]) -> ErrorRate {
    let mut parts = Vec::new();
    let mut excluded = 0;
    for t in traces {
        match select_target_terminal(t).and_then(|s| retrospective_oracle(t, s)) {
            Ok(r) => parts.push(decision_errors(t, &r)),
            Err(_) => excluded += 1,
        }
    }
    ErrorRate::pooled(&parts, excluded)
}

/// Rolls `model` out cleanly on every instance and pools its decision errors.
pub fn measure_error_rate<E: Environment>(
    env: &E,
    instances: &[E::Instance],
    model: &Model,
    budget: &SearchBudget,
    seed: u64,
) -> Result<ErrorRate> {
    let traces = rollouts(env, instances, model, budget, &ExplorationConfig::none(), seed)?;
    Ok(error_rate_of(&traces))
}

/// Roll-out seed for instance `j` in pass `pass` under root seed `seed`.
pub fn rollout_seed(seed: u64, pass: u64, j: usize) -> u64 {
    rng::derive(seed, &[pass, j as u64])
}

/// Clean or exploratory roll-outs of a model on every instance, in parallel
/// on the current rayon pool. Output order follows `instances`.
pub fn rollouts<E: Environment>(
    env: &E,
    instances: &[E::Instance],
    model: &Model,
    budget: &SearchBudget,
    explore: &ExplorationConfig,
    seed: u64,
) -> Result<Vec<Trace<E::State>>> {
    instances
        .par_iter()
        .enumerate()
        .map(|(j, inst)| {
            let s = rollout_seed(seed, 0, j);
            run_search(env, inst, model.for_rollout(s), budget, explore, s)
        })
        .collect()
}

/// Expert (or any fixed policy) roll-outs turned into a dataset.
pub fn policy_dataset<E: Environment>(
    env: &E,
    instances: &[E::Instance],
    policy: &dyn Policy<E::State>,
    budget: &SearchBudget,
    opts: &DatasetOptions,
    seed: u64,
) -> Result<(Dataset, Vec<Trace<E::State>>)> {
    let traces: Vec<Trace<E::State>> = instances
        .par_iter()
        .enumerate()
        .map(|(j, inst)| run_search(env, inst, policy, budget, &ExplorationConfig::none(), rollout_seed(seed, 0, j)))
        .collect::<Result<_>>()?;
    let parts: Vec<Dataset> = instances
        .par_iter()
        .zip(&traces)
        .enumerate()
        .map(|(j, (inst, t))| relabel(env, inst, t, opts, rollout_seed(seed, 1, j)))
        .collect();
    let mut data = Dataset::new(env.feature_dim(), 0, 0);
    for p in parts {
        data.extend(p);
    }
    Ok((data, traces))
}

/// Retro-relabels one trace; empty when it has no terminal.
fn relabel<E: Environment>(
    env: &E,
    inst: &E::Instance,
    trace: &Trace<E::State>,
    opts: &DatasetOptions,
    seed: u64,
) -> Dataset {
    match select_target_terminal(trace).and_then(|s| retrospective_oracle(trace, s)) {
        Ok(retro) => make_dataset(env, inst, trace, &retro, opts, seed),
        Err(_) => Dataset::new(env.feature_dim(), 0, 0),
    }
}

/// Fresh policy trained from scratch on `data`.
pub fn fit_policy(
    schema_id: &str,
    data: &Dataset,
    learner: &LearnerConfig,
    with_pruner: bool,
    seed: u64,
) -> Result<LearnedPolicy> {
    let cfg = LearnerConfig { seed: rng::derive(seed, &[1]), ..learner.clone() };
    let mut ranker = Ranker::init(data.feature_dim, learner.hidden, rng::derive(seed, &[0]));
    if data.examples.iter().any(|e| !e.negatives.is_empty()) {
        train_ranker(&mut ranker, &data.examples, &cfg)?;
    }
    let pruner = if with_pruner {
        let mut p = Pruner::zeros(data.feature_dim, learner.w_opt)?;
        if !data.prune.is_empty() {
            train_pruner(&mut p, &data.prune, &cfg)?;
        }
        Some(p)
    } else {
        None
    };
    Ok(LearnedPolicy::new(schema_id, ranker, pruner))
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub iterations: usize,
    /// Retrospective DAgger: probability a roll-out uses the clean policy
    /// rather than its exploratory version. Retrospective SMILe: the mixing
    /// coefficient of the mixture update.
    pub alpha: f64,
    pub exploration: ExplorationConfig,
    pub learner: LearnerConfig,
    pub data: DatasetOptions,
    pub budget: SearchBudget,
    /// Noisy roll-outs per instance in the first iteration; the lowest-cost
    /// one seeds the data. 1 disables restarts.
    pub first_pass_restarts: usize,
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.iterations == 0 {
            return Err(Error::Config("iterations must be >= 1".into()));
        }
        if !(0.0..=1.0).contains(&self.alpha) {
            return Err(Error::Config(format!("alpha {} outside [0, 1]", self.alpha)));
        }
        if self.first_pass_restarts == 0 {
            return Err(Error::Config("first_pass_restarts must be >= 1".into()));
        }
        self.exploration.validate()?;
        self.learner.validate()
    }

    fn rollout_budget(&self) -> SearchBudget {
        if self.exploration.multi_terminal {
            SearchBudget { stop_mode: StopMode::ExhaustBudget, ..self.budget }
        } else {
            self.budget
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct IterationMetrics {
    pub iteration: usize,
    pub dataset_size: usize,
    /// Validation metric of the policy used in this iteration's roll-outs.
    pub validation: f64,
    /// Error rate of this iteration's roll-outs against their own retro paths.
    pub error_rate: f64,
    pub skipped: bool,
}

pub fn metrics_csv(rows: &[IterationMetrics]) -> String {
    let mut out = String::from("iteration,dataset_size,validation_metric,error_rate\n");
    for r in rows {
        let _ = writeln!(out, "{},{},{},{}", r.iteration, r.dataset_size, r.validation, r.error_rate);
    }
    out
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub model: Model,
    pub metrics: Vec<IterationMetrics>,
    /// Data accumulated at this size (the aggregate for DAgger, the last
    /// iteration's for SMILe).
    pub dataset: Dataset,
    pub warnings: Vec<String>,
}

/// Mean [`Environment::cost`] of clean roll-outs.
pub fn validation_metric<E: Environment>(
    env: &E,
    instances: &[E::Instance],
    model: &Model,
    budget: &SearchBudget,
    seed: u64,
) -> Result<f64> {
    validation_scores(env, instances, model, budget, seed).map(|v| v.0)
}

/// Mean cost and mean tie-breaker of clean roll-outs.
fn validation_scores<E: Environment>(
    env: &E,
    instances: &[E::Instance],
    model: &Model,
    budget: &SearchBudget,
    seed: u64,
) -> Result<(f64, f64)> {
    if instances.is_empty() {
        return Ok((0.0, 0.0));
    }
    let traces = rollouts(env, instances, model, budget, &ExplorationConfig::none(), seed)?;
    let n = instances.len() as f64;
    let cost = instances.iter().zip(&traces).map(|(i, t)| env.cost(i, t)).sum::<f64>() / n;
    let tie = instances.iter().zip(&traces).map(|(i, t)| env.tie_break(i, t)).sum::<f64>() / n;
    Ok((cost, tie))
}

struct Harvest {
    data: Dataset,
    error: ErrorRate,
}

/// Rolls `model` out on every instance and retro-relabels the traces.
fn harvest<E: Environment>(
    env: &E,
    instances: &[E::Instance],
    model: &Model,
    cfg: &TrainConfig,
    restarts: usize,
    mix_clean: f64,
    seed: u64,
) -> Result<Harvest> {
    let budget = cfg.rollout_budget();
    let noisy = ExplorationConfig { epsilon: 0.0, noise_variance: cfg.exploration.noise_variance.max(0.05), ..cfg.exploration };
    let per: Vec<(Dataset, Option<(usize, usize)>)> = instances
        .par_iter()
        .enumerate()
        .map(|(j, inst)| -> Result<_> {
            let s = rollout_seed(seed, 0, j);
            let policy = model.for_rollout(s);
            let trace = if restarts > 1 {
                let mut best: Option<(f64, Trace<E::State>)> = None;
                for r in 0..restarts {
                    let rs = rollout_seed(seed, 1 + r as u64, j);
                    let explore = if r == 0 { cfg.exploration.clean() } else { noisy };
                    let t = run_search(env, inst, policy, &budget, &explore, rs)?;
                    let c = if t.no_terminal_found() { f64::INFINITY } else { env.cost(inst, &t) };
                    if best.as_ref().is_none_or(|(bc, _)| c < *bc) {
                        best = Some((c, t));
                    }
                }
                best.expect("at least one restart").1
            } else {
                let clean = rng::from_seed(rng::derive(s, &[0xA1FA])).random::<f64>() < mix_clean;
                let explore = if clean { cfg.exploration.clean() } else { cfg.exploration };
                run_search(env, inst, policy, &budget, &explore, s)?
            };
            match select_target_terminal(&trace).and_then(|t| retrospective_oracle(&trace, t)) {
                Ok(retro) => {
                    let d = make_dataset(env, inst, &trace, &retro, &cfg.data, rng::derive(s, &[7]));
                    Ok((d, Some(decision_errors(&trace, &retro))))
                }
                Err(_) => Ok((Dataset::new(env.feature_dim(), 0, 0), None)),
            }
        })
        .collect::<Result<_>>()?;
    let mut data = Dataset::new(env.feature_dim(), 0, 0);
    let mut parts = Vec::new();
    let mut excluded = 0;
    for (d, e) in per {
        data.extend(d);
        match e {
            Some(e) => parts.push(e),
            None => excluded += 1,
        }
    }
    Ok(Harvest { data, error: ErrorRate::pooled(&parts, excluded) })
}

/// Retrospective DAgger at one problem size.
///
/// `initial_data` seeds the aggregate dataset. Every iteration rolls out the
/// current policy (mixed with its exploratory version), relabels the traces
/// retrospectively, grows the aggregate and retrains from scratch. The
/// returned model is the best iterate on `validation`, `initial` included.
#[allow(clippy::too_many_arguments)]
pub fn retro_dagger<E: Environment>(
    env: &E,
    instances: &[E::Instance],
    validation: &[E::Instance],
    initial: Model,
    initial_data: Dataset,
    cfg: &TrainConfig,
    size: usize,
    seed: u64,
) -> Result<TrainOutcome> {
    cfg.validate()?;
    if instances.is_empty() {
        return Err(Error::Invalid("no training instances".into()));
    }
    let val_seed = rng::derive(seed, &[0x7A1]);
    let mut aggregate = initial_data;
    aggregate.feature_dim = env.feature_dim();
    aggregate.size = size;
    let schema = initial.schema_id().to_string();
    let mut current = initial;
    let mut candidates: Vec<((f64, f64), Model)> = Vec::new();
    let mut metrics = Vec::new();
    let mut warnings = Vec::new();
    let mut any_data = false;

    for i in 1..=cfg.iterations {
        let it_seed = rng::derive(seed, &[i as u64]);
        let scores = validation_scores(env, validation, &current, &cfg.budget, val_seed)?;
        let val = scores.0;
        let restarts = if i == 1 { cfg.first_pass_restarts } else { 1 };
        let h = harvest(env, instances, &current, cfg, restarts, cfg.alpha, it_seed)?;
        candidates.push((scores, current.clone()));
        let skipped = h.error.excluded == instances.len();
        if skipped {
            let msg = format!("size {size} iteration {i}: no roll-out reached a terminal, iteration skipped");
            warn!("{msg}");
            warnings.push(msg);
        } else {
            any_data = true;
            aggregate.extend(h.data);
            aggregate.iteration = i;
            let learned = fit_policy(&schema, &aggregate, &cfg.learner, cfg.data.with_pruner, it_seed)?;
            current = Model::Single(learned.named(format!("retro-dagger-s{size}-i{}", i + 1)));
        }
        info!(
            "size {size} iteration {i}: |D| = {}, validation {val:.3}, error rate {:.3}",
            aggregate.len(),
            h.error.rate
        );
        metrics.push(IterationMetrics {
            iteration: i,
            dataset_size: aggregate.len(),
            validation: val,
            error_rate: h.error.rate,
            skipped,
        });
    }
    if !any_data {
        return Err(Error::TrainingStarved);
    }
    let scores = validation_scores(env, validation, &current, &cfg.budget, val_seed)?;
    candidates.push((scores, current));
    let best = candidates
        .iter()
        .enumerate()
        .min_by(|a, b| {
            let (x, y) = (a.1 .0, b.1 .0);
            x.0.total_cmp(&y.0).then(x.1.total_cmp(&y.1)).then(a.0.cmp(&b.0))
        })
        .map(|(k, _)| k)
        .expect("at least one candidate");
    let model = candidates.swap_remove(best).1;
    Ok(TrainOutcome { model, metrics, dataset: aggregate, warnings })
}

/// Mixture weights after `i` iterations: `(1-a)^i` on the initial policy and
/// `a (1-a)^(j-1)` on the `j`-th learned one.
pub fn smile_weights(i: usize, alpha: f64) -> Vec<f64> {
    let mut w = Vec::with_capacity(i + 1);
    w.push((1.0 - alpha).powi(i as i32));
    for j in 1..=i {
        w.push(alpha * (1.0 - alpha).powi(j as i32 - 1));
    }
    w
}

/// Builds `(1-a)^i pi_1 + a sum_j (1-a)^(j-1) learned_j`, flattening `pi_1`
/// if it is itself a mixture.
pub fn smile_mixture(initial: &Mixture, learned: &[LearnedPolicy], alpha: f64) -> Mixture {
    let w = smile_weights(learned.len(), alpha);
    let mut components = Vec::new();
    let mut weights = Vec::new();
    for (c, cw) in initial.components.iter().zip(&initial.weights) {
        components.push(c.clone());
        weights.push(w[0] * cw);
    }
    for (p, &pw) in learned.iter().zip(&w[1..]) {
        components.push(p.clone());
        weights.push(pw);
    }
    Mixture { components, weights }
}

/// Retrospective SMILe at one problem size. Each iteration trains a new
/// component on that iteration's data only and returns the final mixture.
#[allow(clippy::too_many_arguments)]
pub fn retro_smile<E: Environment>(
    env: &E,
    instances: &[E::Instance],
    validation: &[E::Instance],
    initial: Model,
    initial_data: Dataset,
    cfg: &TrainConfig,
    size: usize,
    seed: u64,
) -> Result<TrainOutcome> {
    cfg.validate()?;
    if instances.is_empty() {
        return Err(Error::Invalid("no training instances".into()));
    }
    let val_seed = rng::derive(seed, &[0x7A1]);
    let schema = initial.schema_id().to_string();
    let base = initial.into_mixture();
    let mut learned: Vec<LearnedPolicy> = Vec::new();
    let mut current = Model::Mixture(base.clone());
    let mut metrics = Vec::new();
    let mut warnings = Vec::new();
    let mut last = initial_data;
    last.feature_dim = env.feature_dim();
    for i in 1..=cfg.iterations {
        let it_seed = rng::derive(seed, &[i as u64]);
        let val = validation_metric(env, validation, &current, &cfg.budget, val_seed)?;
        let restarts = if i == 1 { cfg.first_pass_restarts } else { 1 };
        let h = harvest(env, instances, &current, cfg, restarts, 0.0, it_seed)?;
        let skipped = h.error.excluded == instances.len() || h.data.is_empty();
        if skipped {
            let msg = format!("size {size} iteration {i}: no usable retro data, iteration skipped");
            warn!("{msg}");
            warnings.push(msg);
        } else {
            let mut d = h.data;
            d.iteration = i;
            d.size = size;
            let p = fit_policy(&schema, &d, &cfg.learner, cfg.data.with_pruner, it_seed)?;
            learned.push(p.named(format!("retro-smile-s{size}-h{}", learned.len() + 1)));
            current = Model::Mixture(smile_mixture(&base, &learned, cfg.alpha));
            last = d;
        }
        metrics.push(IterationMetrics {
            iteration: i,
            dataset_size: if skipped { 0 } else { last.len() },
            validation: val,
            error_rate: h.error.rate,
            skipped,
        });
    }
    if learned.is_empty() {
        return Err(Error::TrainingStarved);
    }
    Ok(TrainOutcome { model: current, metrics, dataset: last, warnings })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Algorithm {
    RetroDagger,
    RetroSmile,
}

#[derive(Debug, Clone)]
pub struct SizeResult {
    pub size: usize,
    pub model: Model,
    pub metrics: Vec<IterationMetrics>,
    pub warnings: Vec<String>,
}

#[derive(Debug)]
pub struct ScaleUpOutcome {
    /// One entry per size, the base size first.
    pub sizes: Vec<SizeResult>,
    /// Size at which training starved, if the curriculum stopped early.
    pub aborted_at: Option<usize>,
}

impl ScaleUpOutcome {
    pub fn model_for(&self, size: usize) -> Option<&Model> {
        self.sizes.iter().find(|s| s.size == size).map(|s| &s.model)
    }
}

/// Training and validation instances of one size.
pub struct SizeInstances<I> {
    pub train: Vec<I>,
    pub validation: Vec<I>,
}

/// Trains one policy per size, each starting from the previous size's policy
/// and data. No expert data is used past `sizes[0]`.
#[allow(clippy::too_many_arguments)]
pub fn scale_up<E: Environment>(
    env: &E,
    sizes: &[usize],
    mut instances_for: impl FnMut(usize) -> Result<SizeInstances<E::Instance>>,
    base: Model,
    base_data: Dataset,
    cfg: &TrainConfig,
    algorithm: Algorithm,
    seed: u64,
) -> Result<ScaleUpOutcome> {
    if sizes.is_empty() || sizes.windows(2).any(|w| w[0] >= w[1]) {
        return Err(Error::Config("curriculum sizes must be nonempty and strictly increasing".into()));
    }
    let mut out = ScaleUpOutcome {
        sizes: vec![SizeResult { size: sizes[0], model: base, metrics: Vec::new(), warnings: Vec::new() }],
        aborted_at: None,
    };
    let mut data = base_data;
    for &size in &sizes[1..] {
        let insts = instances_for(size)?;
        let prev = out.sizes.last().expect("base entry").model.clone();
        let s = rng::derive(seed, &[size as u64]);
        let run = match algorithm {
            Algorithm::RetroDagger => retro_dagger(env, &insts.train, &insts.validation, prev, data.clone(), cfg, size, s),
            Algorithm::RetroSmile => retro_smile(env, &insts.train, &insts.validation, prev, data.clone(), cfg, size, s),
        };
        match run {
            Ok(o) => {
                data = o.dataset;
                out.sizes.push(SizeResult { size, model: o.model, metrics: o.metrics, warnings: o.warnings });
            }
            Err(Error::TrainingStarved) => {
                warn!("training starved at size {size}; curriculum stopped");
                out.aborted_at = Some(size);
                break;
            }
            Err(e) => return Err(e),
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::search::testenv::*;
    use crate::search::{run_search, SearchBudget, StopMode, TraceEvent};
    use proptest::prelude::*;

    fn budget(n: u64) -> SearchBudget {
        SearchBudget::new(n, StopMode::FirstTerminal).unwrap()
    }

    #[test]
    fn oracle_on_chain_and_unknown_terminal() {
        let env = TreeEnv { branching: 1, depth: 2, terminal_paths: vec![vec![0, 0]] };
        let t = run_search(&env, &(), &dfs_left(), &budget(10), &ExplorationConfig::none(), 0).unwrap();
        let term = select_target_terminal(&t).unwrap();
        let r = retrospective_oracle(&t, term).unwrap();
        assert_eq!(r.path, vec![NodeId(0), NodeId(1), NodeId(2)]);
        assert!(matches!(retrospective_oracle(&t, NodeId(1)), Err(Error::UnknownTerminal(1))));
        let empty = TreeEnv { branching: 1, depth: 2, terminal_paths: vec![] };
        let t = run_search(&empty, &(), &dfs_left(), &budget(10), &ExplorationConfig::none(), 0).unwrap();
        assert!(matches!(select_target_terminal(&t), Err(Error::NoTerminalFound)));
    }

    #[test]
    fn target_terminal_is_best_objective() {
        // objectives are the index in terminal_paths: put the better one later
        let env = TreeEnv { branching: 2, depth: 2, terminal_paths: vec![vec![1, 1], vec![0, 1], vec![0, 0]] };
        let b = SearchBudget::new(100, StopMode::ExhaustBudget).unwrap();
        let t = run_search(&env, &(), &dfs_left(), &b, &ExplorationConfig::none(), 0).unwrap();
        let best = select_target_terminal(&t).unwrap();
        assert_eq!(t.tree.node(best).state, vec![1, 1]);
    }

    #[test]
    fn smile_weight_examples() {
        assert_eq!(smile_weights(1, 0.5), vec![0.5, 0.5]);
        let w = smile_weights(3, 0.3);
        for (a, b) in w.iter().zip([0.343, 0.3, 0.21, 0.147]) {
            assert!((a - b).abs() < 1e-12, "{w:?}");
        }
        assert!((w.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        assert_eq!(smile_weights(4, 0.0), vec![1.0, 0.0, 0.0, 0.0, 0.0]);
    }

    proptest! {
        #[test]
        fn smile_weights_are_a_distribution(i in 0usize..60, alpha in 0.0f64..=1.0) {
            let w = smile_weights(i, alpha);
            prop_assert!(w.iter().all(|&x| x >= 0.0));
            prop_assert!((w.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn error_rate_pooling() {
        assert_eq!(ErrorRate::pooled(&[(1, 4)], 0).rate, 0.25);
        assert_eq!(ErrorRate::pooled(&[(1, 4), (0, 6)], 0).rate, 0.1);
        assert_eq!(ErrorRate::per_instance_mean(&[(1, 4), (0, 6)]), 0.125);
        assert_eq!(ErrorRate::pooled(&[], 2).rate, 0.0);
    }

    /// Trace from an explicit pop sequence; node 6 is the terminal.
    fn hand_trace(pops: &[(u64, &[u64])]) -> Trace<()> {
        let mut tree = SearchTree::with_root((), None);
        let mut events = Vec::new();
        let terminal = 6;
        for (step, (p, kids)) in pops.iter().enumerate() {
            tree.take(NodeId(*p)).unwrap();
            for &k in kids.iter() {
                let id = tree.insert_child(NodeId(*p), (), (k == terminal).then_some(1.0));
                assert_eq!(id, NodeId(k));
            }
            events.push(TraceEvent { step: step as u64, popped: NodeId(*p), children: kids.iter().map(|&k| NodeId(k)).collect() });
        }
        Trace { tree, events, instance_id: "hand".into(), seed: 0, policy_tag: "hand".into() }
    }

    #[test]
    fn decision_errors_by_hand() {
        // path 0 -> 2 -> 3 -> 6; after 2 is enqueued the policy pops 1 first
        let t = hand_trace(&[(0, &[1, 2]), (1, &[]), (2, &[3, 4]), (3, &[5, 6])]);
        let r = retrospective_oracle(&t, NodeId(6)).unwrap();
        assert_eq!(r.path, vec![NodeId(0), NodeId(2), NodeId(3), NodeId(6)]);
        assert_eq!(decision_errors(&t, &r), (1, 3));
        let t = hand_trace(&[(0, &[1, 2]), (2, &[3, 4]), (3, &[5, 6])]);
        let r = retrospective_oracle(&t, NodeId(6)).unwrap();
        assert_eq!(decision_errors(&t, &r), (0, 3));
        assert_eq!(error_rate_of(&[t]).rate, 0.0);
    }

    struct Flat;
    impl Environment for Flat {
        type Instance = ();
        type State = ();
        fn instance_id(&self, _: &()) -> String {
            "flat".into()
        }
        fn schema_id(&self) -> &'static str {
            "flat"
        }
        fn feature_dim(&self) -> usize {
            1
        }
        fn root(&self, _: &()) {}
        fn terminal(&self, _: &(), _: &()) -> Option<f64> {
            None
        }
        fn children(&self, _: &(), _: &(), _: &SearchTree<()>) -> Vec<()> {
            Vec::new()
        }
        fn features(&self, _: &(), n: &crate::search::SearchNode<()>, _: &SearchTree<()>) -> FeatureVector {
            FeatureVector::new(vec![n.id.0 as f64])
        }
        fn cost(&self, _: &(), _: &Trace<()>) -> f64 {
            0.0
        }
    }

    #[test]
    fn dataset_prefers_retro_node_over_frontier() {
        // path 0 -> 2 -> 4 -> 6. Frontiers before each pop: {0}, {1,2}, {2,3}, {3,4,5}
        let t = hand_trace(&[(0, &[1, 2]), (1, &[3]), (2, &[4, 5]), (4, &[6])]);
        let r = retrospective_oracle(&t, NodeId(6)).unwrap();
        let d = make_dataset(&Flat, &(), &t, &r, &DatasetOptions::default(), 0);
        // the feature is the node id, normalized within each frontier
        let got: Vec<(u64, f64, Vec<f64>)> = d
            .examples
            .iter()
            .map(|e| (e.decision_step, e.preferred.values[0], e.negatives.iter().map(|n| n.values[0]).collect()))
            .collect();
        assert_eq!(got, vec![(1, 1.0, vec![-1.0]), (2, -1.0, vec![1.0]), (3, 0.0, vec![-1.0, 1.0])]);

        let opts = DatasetOptions { with_pruner: true, max_negatives: 1 };
        let d = make_dataset(&Flat, &(), &t, &r, &opts, 0);
        assert!(d.examples.iter().all(|e| e.negatives.len() == 1));
        let labels: Vec<bool> = d.prune.iter().map(|p| p.keep).collect();
        assert_eq!(labels, vec![false, true, true]);
    }

    #[test]
    fn root_terminal_gives_empty_dataset() {
        let t = hand_trace(&[]);
        let r = RetroTrace { path: vec![NodeId(0)], terminal: NodeId(0), source_trace: String::new() };
        assert!(make_dataset(&Flat, &(), &t, &r, &DatasetOptions::default(), 0).is_empty());
    }

    #[test]
    fn depth_two_binary_tree_examples_by_replay() {
        // complete binary tree of depth 2 explored breadth-first: pops 0,1,2,3
        let env = TreeEnv { branching: 2, depth: 2, terminal_paths: vec![vec![1, 1]] };
        let bfs = FnPolicy(|s: &Vec<u32>| -(s.len() as f64) * 10.0 - s.iter().map(|&x| x as f64).sum::<f64>() * 0.1);
        let b = SearchBudget::new(20, StopMode::FirstTerminal).unwrap();
        let t = run_search(&env, &(), &bfs, &b, &ExplorationConfig::none(), 0).unwrap();
        let pops: Vec<u64> = t.events.iter().map(|e| e.popped.0).collect();
        // 0 -> {1:[0], 2:[1]}, 1 -> {3:[0,0], 4:[0,1]}, 2 -> {5:[1,0], 6:[1,1] terminal}
        assert_eq!(pops, vec![0, 1, 2]);
        let r = retrospective_oracle(&t, select_target_terminal(&t).unwrap()).unwrap();
        assert_eq!(r.path, vec![NodeId(0), NodeId(2), NodeId(6)]);
        // node 2 was enqueued and had company at steps 1 and 2
        let d = make_dataset(&env, &(), &t, &r, &DatasetOptions::default(), 0);
        assert_eq!(d.examples.iter().map(|e| e.decision_step).collect::<Vec<_>>(), vec![1, 2]);
        assert_eq!(d.examples[0].negatives.len(), 1);
        assert_eq!(d.examples[1].negatives.len(), 2);
    }

    #[test]
    fn dataset_text_round_trip() {
        let env = TreeEnv { branching: 3, depth: 4, terminal_paths: vec![vec![2, 2, 2, 2]] };
        let b = SearchBudget::new(200, StopMode::FirstTerminal).unwrap();
        let t = run_search(&env, &(), &dfs_left(), &b, &ExplorationConfig::default(), 3).unwrap();
        let r = retrospective_oracle(&t, select_target_terminal(&t).unwrap()).unwrap();
        let mut d = make_dataset(&env, &(), &t, &r, &DatasetOptions { with_pruner: true, max_negatives: 0 }, 1);
        d.iteration = 2;
        d.size = 9;
        assert!(!d.is_empty());
        let text = d.to_text();
        let back = Dataset::parse(&text).unwrap();
        assert_eq!(back, d);
        assert_eq!(back.to_text(), text);
    }

    /// Random trees for property checks on the oracle.
    fn random_trace(seed: u64, nodes: usize) -> Trace<()> {
        let mut r = rng::from_seed(seed);
        let mut tree = SearchTree::with_root((), None);
        let mut events = Vec::new();
        let mut step = 0;
        while tree.len() < nodes && !tree.frontier().is_empty() {
            let f = tree.frontier();
            let p = f[r.random_range(0..f.len())];
            tree.take(p).unwrap();
            let k = r.random_range(0..4);
            let mut kids = Vec::new();
            for _ in 0..k {
                let term = r.random_bool(0.15).then(|| r.random_range(0..5) as f64);
                kids.push(tree.insert_child(p, (), term));
            }
            events.push(TraceEvent { step, popped: p, children: kids });
            step += 1;
        }
        Trace { tree, events, instance_id: format!("rand{seed}"), seed, policy_tag: "random".into() }
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(200))]
        #[test]
        fn oracle_matches_exhaustive_path_search(seed in any::<u64>()) {
            let t = random_trace(seed, 200);
            for &term in t.tree.terminals() {
                let r = retrospective_oracle(&t, term).unwrap();
                // oracle: depth-first enumeration of every root-to-node path
                let mut found = None;
                let mut stack = vec![vec![NodeId::ROOT]];
                while let Some(path) = stack.pop() {
                    let last = *path.last().unwrap();
                    if last == term {
                        prop_assert!(found.is_none());
                        found = Some(path.clone());
                    }
                    for n in t.tree.nodes() {
                        if n.parent == Some(last) {
                            let mut p = path.clone();
                            p.push(n.id);
                            stack.push(p);
                        }
                    }
                }
                prop_assert_eq!(Some(r.path.clone()), found);
                prop_assert_eq!(r.path.len() as u32, t.tree.node(term).depth + 1);
                prop_assert!(r.path.len() as u64 <= t.expansions() + 1);
            }
            if let Ok(best) = select_target_terminal(&t) {
                let oracle = t.tree.terminals().iter().copied().fold(None::<NodeId>, |acc, id| match acc {
                    None => Some(id),
                    Some(a) => {
                        let (oa, ob) = (t.tree.node(a).objective.unwrap(), t.tree.node(id).objective.unwrap());
                        Some(if ob < oa || (ob == oa && id < a) { id } else { a })
                    }
                });
                prop_assert_eq!(Some(best), oracle);
            }
        }
    }

    fn chain_policy() -> Model {
        Model::Single(LearnedPolicy::new("tree-v1", Ranker::init(2, 4, 0), None))
    }

    fn small_cfg(iterations: usize) -> TrainConfig {
        TrainConfig {
            iterations,
            alpha: 0.5,
            exploration: ExplorationConfig::default(),
            learner: LearnerConfig { epochs: 5, hidden: 4, ..Default::default() },
            data: DatasetOptions::default(),
            budget: budget(200),
            first_pass_restarts: 1,
        }
    }

    #[test]
    fn dagger_grows_dataset_and_picks_best() {
        let insts = vec![(); 4];
        let env = TreeEnv { branching: 2, depth: 4, terminal_paths: vec![vec![1, 0, 1, 1]] };
        let out = retro_dagger(&env, &insts, &insts, chain_policy(), Dataset::default(), &small_cfg(3), 4, 1).unwrap();
        let sizes: Vec<usize> = out.metrics.iter().map(|m| m.dataset_size).collect();
        assert!(sizes.windows(2).all(|w| w[0] <= w[1]), "{sizes:?}");
        let chosen = validation_metric(&env, &insts, &out.model, &budget(200), rng::derive(1, &[0x7A1])).unwrap();
        let min_seen = out.metrics.iter().map(|m| m.validation).fold(f64::INFINITY, f64::min);
        assert!(chosen <= min_seen);
        let again = retro_dagger(&env, &insts, &insts, chain_policy(), Dataset::default(), &small_cfg(3), 4, 1).unwrap();
        assert_eq!(again.model, out.model);
    }

    #[test]
    fn starved_training_is_reported() {
        let env = TreeEnv { branching: 2, depth: 3, terminal_paths: vec![] };
        let insts = vec![(); 2];
        let r = retro_dagger(&env, &insts, &insts, chain_policy(), Dataset::default(), &small_cfg(2), 3, 0);
        assert!(matches!(r, Err(Error::TrainingStarved)));
        let r = retro_smile(&env, &insts, &insts, chain_policy(), Dataset::default(), &small_cfg(2), 3, 0);
        assert!(matches!(r, Err(Error::TrainingStarved)));
    }

    #[test]
    fn smile_returns_formula_mixture() {
        let env = TreeEnv { branching: 2, depth: 4, terminal_paths: vec![vec![0, 1, 1, 0]] };
        let insts = vec![(); 3];
        let mut cfg = small_cfg(3);
        cfg.alpha = 0.3;
        let out = retro_smile(&env, &insts, &insts, chain_policy(), Dataset::default(), &cfg, 4, 2).unwrap();
        let Model::Mixture(m) = &out.model else { panic!("expected a mixture") };
        for (a, b) in m.weights.iter().zip([0.343, 0.3, 0.21, 0.147]) {
            assert!((a - b).abs() < 1e-12);
        }
        let mut cfg = small_cfg(2);
        cfg.alpha = 0.0;
        let out = retro_smile(&env, &insts, &insts, chain_policy(), Dataset::default(), &cfg, 4, 2).unwrap();
        let Model::Mixture(m) = &out.model else { panic!("expected a mixture") };
        for s in 0..50 {
            assert_eq!(m.sample_index(s), 0);
        }
    }

    #[test]
    fn single_size_curriculum_returns_base() {
        let env = TreeEnv { branching: 2, depth: 3, terminal_paths: vec![vec![1, 1, 1]] };
        let base = chain_policy();
        let out = scale_up(
            &env,
            &[5],
            |_| unreachable!("no scaled sizes"),
            base.clone(),
            Dataset::default(),
            &small_cfg(1),
            Algorithm::RetroDagger,
            0,
        )
        .unwrap();
        assert_eq!(out.sizes.len(), 1);
        assert_eq!(out.sizes[0].model, base);
        assert!(scale_up(&env, &[5, 5], |_| unreachable!(), base, Dataset::default(), &small_cfg(1), Algorithm::RetroDagger, 0).is_err());
    }
}
