//! Learnable node-scoring policies.
//!
//! Frontier features are normalized per query (per frontier batch) to
//! `[-1, 1]` and scored by a small feed-forward ranker trained on pairwise
//! preferences. An optional linear pruner decides whether a popped node is
//! worth branching on. Gradients are written out by hand.

use std::fmt::Write as _;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::Rng as _;

use crate::search::{Candidate, Policy};
use crate::{rng, Error, Result};

pub const LEAKY_SLOPE: f64 = 0.01;

#[derive(Debug, Clone, PartialEq)]
pub struct FeatureVector {
    pub values: Vec<f64>,
}

impl FeatureVector {
    pub fn new(values: Vec<f64>) -> Self {
        debug_assert!(values.iter().all(|v| v.is_finite()), "non-finite feature");
        FeatureVector { values }
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }
}

/// Per-feature range of one frontier batch.
#[derive(Debug, Clone, PartialEq)]
pub struct NormalizationContext {
    pub min: Vec<f64>,
    pub max: Vec<f64>,
}

impl NormalizationContext {
    pub fn of(batch: &[&[f64]]) -> Self {
        let dim = batch.first().map_or(0, |v| v.len());
        let mut min = vec![f64::INFINITY; dim];
        let mut max = vec![f64::NEG_INFINITY; dim];
        for v in batch {
            for (j, &x) in v.iter().enumerate() {
                min[j] = min[j].min(x);
                max[j] = max[j].max(x);
            }
        }
        NormalizationContext { min, max }
    }

    pub fn apply(&self, v: &[f64]) -> Vec<f64> {
        v.iter()
            .enumerate()
            .map(|(j, &x)| {
                let range = self.max[j] - self.min[j];
                if range > 0.0 {
                    2.0 * (x - self.min[j]) / range - 1.0
                } else {
                    0.0
                }
            })
            .collect()
    }
}

/// Maps every feature affinely so the batch minimum becomes -1 and the
/// maximum +1; constant features become 0.
pub fn normalize_query(batch: &[FeatureVector]) -> (Vec<FeatureVector>, NormalizationContext) {
    let rows: Vec<&[f64]> = batch.iter().map(|f| f.values.as_slice()).collect();
    let ctx = NormalizationContext::of(&rows);
    let out = rows.iter().map(|r| FeatureVector::new(ctx.apply(r))).collect();
    (out, ctx)
}

fn leaky(x: f64) -> f64 {
    if x >= 0.0 {
        x
    } else {
        LEAKY_SLOPE * x
    }
}

fn leaky_grad(x: f64) -> f64 {
    if x >= 0.0 {
        1.0
    } else {
        LEAKY_SLOPE
    }
}

/// `log(1 + exp(x))` without overflow.
pub fn softplus(x: f64) -> f64 {
    if x > 0.0 {
        x + (-x).exp().ln_1p()
    } else {
        x.exp().ln_1p()
    }
}

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// One preference: `preferred` should outscore every entry of `negatives`.
/// Features are already query-normalized.
#[derive(Debug, Clone, PartialEq)]
pub struct LabeledExample {
    pub preferred: FeatureVector,
    pub negatives: Vec<FeatureVector>,
    pub instance_id: String,
    pub decision_step: u64,
}

/// Keep/prune label for one expanded node.
#[derive(Debug, Clone, PartialEq)]
pub struct PruneExample {
    pub features: FeatureVector,
    pub keep: bool,
    pub instance_id: String,
}

/// Two-layer scorer `w2 · leaky(W1 x + b1) + b2`.
///
/// Parameters live in one flat vector laid out as `[W1 (row-major,
/// hidden × input) | b1 | w2 | b2]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Ranker {
    input_dim: usize,
    hidden: usize,
    params: Vec<f64>,
}

impl Ranker {
    pub fn param_count(input_dim: usize, hidden: usize) -> usize {
        hidden * input_dim + 2 * hidden + 1
    }

    pub fn zeros(input_dim: usize, hidden: usize) -> Self {
        Ranker { input_dim, hidden, params: vec![0.0; Self::param_count(input_dim, hidden)] }
    }

    /// Uniform Glorot-style initialization.
    pub fn init(input_dim: usize, hidden: usize, seed: u64) -> Self {
        let mut r = rng::from_seed(seed);
        let mut m = Self::zeros(input_dim, hidden);
        let a1 = (6.0 / (input_dim + hidden) as f64).sqrt();
        let a2 = (6.0 / (hidden + 1) as f64).sqrt();
        let (w1, rest) = m.params.split_at_mut(hidden * input_dim);
        for w in w1 {
            *w = r.random_range(-a1..a1);
        }
        for w in &mut rest[hidden..2 * hidden] {
            *w = r.random_range(-a2..a2);
        }
        m
    }

    pub fn from_params(input_dim: usize, hidden: usize, params: Vec<f64>) -> Result<Self> {
        let expected = Self::param_count(input_dim, hidden);
        if params.len() != expected {
            return Err(Error::DimensionMismatch { expected, got: params.len() });
        }
        if params.iter().any(|p| !p.is_finite()) {
            return Err(Error::Invalid("non-finite ranker parameter".into()));
        }
        Ok(Ranker { input_dim, hidden, params })
    }

    pub fn input_dim(&self) -> usize {
        self.input_dim
    }

    pub fn hidden(&self) -> usize {
        self.hidden
    }

    pub fn params(&self) -> &[f64] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [f64] {
        &mut self.params
    }

    fn offsets(&self) -> (usize, usize, usize) {
        let b1 = self.hidden * self.input_dim;
        (b1, b1 + self.hidden, b1 + 2 * self.hidden)
    }

    pub fn score(&self, x: &[f64]) -> Result<f64> {
        if x.len() != self.input_dim {
            return Err(Error::DimensionMismatch { expected: self.input_dim, got: x.len() });
        }
        Ok(self.forward(x, None))
    }

    /// Forward pass; stores pre-activations in `pre` when given.
    fn forward(&self, x: &[f64], mut pre: Option<&mut Vec<f64>>) -> f64 {
        let (ob1, ow2, ob2) = self.offsets();
        let p = &self.params;
        if let Some(pre) = pre.as_deref_mut() {
            pre.clear();
        }
        let mut out = p[ob2];
        for h in 0..self.hidden {
            let row = &p[h * self.input_dim..(h + 1) * self.input_dim];
            let z = row.iter().zip(x).map(|(w, v)| w * v).sum::<f64>() + p[ob1 + h];
            out += p[ow2 + h] * leaky(z);
            if let Some(pre) = pre.as_deref_mut() {
                pre.push(z);
            }
        }
        out
    }

    /// Adds `coef * d score / d params` at `x` into `grad`.
    fn backward(&self, x: &[f64], pre: &[f64], coef: f64, grad: &mut [f64]) {
        let (ob1, ow2, ob2) = self.offsets();
        grad[ob2] += coef;
        for h in 0..self.hidden {
            let z = pre[h];
            grad[ow2 + h] += coef * leaky(z);
            let dz = coef * self.params[ow2 + h] * leaky_grad(z);
            if dz != 0.0 {
                grad[ob1 + h] += dz;
                let row = &mut grad[h * self.input_dim..(h + 1) * self.input_dim];
                for (g, v) in row.iter_mut().zip(x) {
                    *g += dz * v;
                }
            }
        }
    }

    /// Summed pairwise loss `Σ log(1 + exp(-(s_p - s_n)))` over the
    /// example's negatives; the gradient is accumulated into `grad`.
    pub fn example_loss_grad(&self, ex: &LabeledExample, grad: Option<&mut [f64]>) -> f64 {
        let mut pre_p = Vec::with_capacity(self.hidden);
        let sp = self.forward(&ex.preferred.values, Some(&mut pre_p));
        let mut loss = 0.0;
        match grad {
            None => {
                for n in &ex.negatives {
                    loss += softplus(-(sp - self.forward(&n.values, None)));
                }
            }
            Some(grad) => {
                let mut pre_n = Vec::with_capacity(self.hidden);
                let mut coef_p = 0.0;
                for n in &ex.negatives {
                    let sn = self.forward(&n.values, Some(&mut pre_n));
                    let d = sp - sn;
                    loss += softplus(-d);
                    // d loss / d d = -sigmoid(-d)
                    let c = sigmoid(-d);
                    coef_p -= c;
                    self.backward(&n.values, &pre_n, c, grad);
                }
                self.backward(&ex.preferred.values, &pre_p, coef_p, grad);
            }
        }
        loss
    }

    pub fn pair_count(data: &[LabeledExample]) -> usize {
        data.iter().map(|e| e.negatives.len()).sum()
    }

    /// Mean pairwise loss over every (preferred, negative) pair.
    pub fn mean_loss(&self, data: &[LabeledExample]) -> f64 {
        let pairs = Self::pair_count(data);
        if pairs == 0 {
            return 0.0;
        }
        data.iter().map(|e| self.example_loss_grad(e, None)).sum::<f64>() / pairs as f64
    }
}

/// Linear keep/prune classifier: prune iff `sigmoid(w · x + b) < 0.5`.
#[derive(Debug, Clone, PartialEq)]
pub struct Pruner {
    /// `[w | b]`
    params: Vec<f64>,
    pub w_opt: f64,
}

impl Pruner {
    pub fn zeros(input_dim: usize, w_opt: f64) -> Result<Self> {
        Self::from_params(vec![0.0; input_dim + 1], w_opt)
    }

    pub fn from_params(params: Vec<f64>, w_opt: f64) -> Result<Self> {
        if params.is_empty() || params.iter().any(|p| !p.is_finite()) {
            return Err(Error::Invalid("pruner needs finite parameters".into()));
        }
        if !(w_opt >= 1.0 && w_opt.is_finite()) {
            return Err(Error::Invalid(format!("w_opt must be >= 1, got {w_opt}")));
        }
        Ok(Pruner { params, w_opt })
    }

    pub fn input_dim(&self) -> usize {
        self.params.len() - 1
    }

    pub fn params(&self) -> &[f64] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [f64] {
        &mut self.params
    }

    pub fn logit(&self, x: &[f64]) -> f64 {
        let d = self.input_dim();
        self.params[..d].iter().zip(x).map(|(w, v)| w * v).sum::<f64>() + self.params[d]
    }

    pub fn keep_probability(&self, x: &[f64]) -> f64 {
        sigmoid(self.logit(x))
    }

    pub fn prune(&self, x: &[f64]) -> bool {
        self.keep_probability(x) < 0.5
    }

    /// Weighted logistic loss of one example (weight `w_opt` on keep labels),
    /// gradient accumulated into `grad`. Returns `(weighted loss, weight)`.
    pub fn example_loss_grad(&self, ex: &PruneExample, grad: Option<&mut [f64]>) -> (f64, f64) {
        let z = self.logit(&ex.features.values);
        let (w, loss, dz) = if ex.keep {
            (self.w_opt, softplus(-z), -sigmoid(-z))
        } else {
            (1.0, softplus(z), sigmoid(z))
        };
        if let Some(grad) = grad {
            let d = self.input_dim();
            for (g, v) in grad[..d].iter_mut().zip(&ex.features.values) {
                *g += w * dz * v;
            }
            grad[d] += w * dz;
        }
        (w * loss, w)
    }

    /// Weighted mean loss `Σ w_i l_i / Σ w_i`.
    pub fn mean_loss(&self, data: &[PruneExample]) -> f64 {
        let (l, w) = data
            .iter()
            .map(|e| self.example_loss_grad(e, None))
            .fold((0.0, 0.0), |a, b| (a.0 + b.0, a.1 + b.1));
        if w > 0.0 {
            l / w
        } else {
            0.0
        }
    }

    pub fn accuracy(&self, data: &[PruneExample]) -> f64 {
        if data.is_empty() {
            return 1.0;
        }
        let ok = data.iter().filter(|e| self.prune(&e.features.values) != e.keep).count();
        ok as f64 / data.len() as f64
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LearnerConfig {
    pub learning_rate: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub seed: u64,
    pub hidden: usize,
    pub w_opt: f64,
}

impl Default for LearnerConfig {
    fn default() -> Self {
        LearnerConfig { learning_rate: 0.01, epochs: 40, batch_size: 1, seed: 0, hidden: 32, w_opt: 5.0 }
    }
}

impl LearnerConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::Config("learning_rate must be positive".into()));
        }
        if self.epochs == 0 || self.batch_size == 0 || self.hidden == 0 {
            return Err(Error::Config("epochs, batch_size and hidden must be positive".into()));
        }
        if self.w_opt < 1.0 {
            return Err(Error::Config("w_opt must be >= 1".into()));
        }
        Ok(())
    }
}

/// Loss after each epoch; entry 0 is the loss before training.
#[derive(Debug, Clone, PartialEq)]
pub struct LossCurve {
    pub losses: Vec<f64>,
    pub best_epoch: usize,
}

/// Shared SGD loop: seeded shuffling, mini-batches, and retention of the
/// parameters with the lowest full-dataset loss (so the result never ends
/// worse than the starting point).
fn sgd<T>(
    params: &mut Vec<f64>,
    data: &[T],
    cfg: &LearnerConfig,
    mut batch_grad: impl FnMut(&[f64], &[&T], &mut [f64]) -> f64,
    mut full_loss: impl FnMut(&[f64]) -> f64,
) -> Result<LossCurve> {
    cfg.validate()?;
    if data.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let mut r = rng::from_seed(cfg.seed);
    let mut order: Vec<usize> = (0..data.len()).collect();
    let mut grad = vec![0.0; params.len()];
    let initial = full_loss(params);
    if !initial.is_finite() {
        return Err(Error::NonFiniteLoss { epoch: 0, detail: format!("initial loss {initial}") });
    }
    let mut losses = vec![initial];
    let mut best = (initial, 0, params.clone());
    for epoch in 1..=cfg.epochs {
        order.shuffle(&mut r);
        for chunk in order.chunks(cfg.batch_size) {
            grad.iter_mut().for_each(|g| *g = 0.0);
            let batch: Vec<&T> = chunk.iter().map(|&i| &data[i]).collect();
            let norm = batch_grad(params, &batch, &mut grad);
            if norm <= 0.0 {
                continue;
            }
            let step = cfg.learning_rate / norm;
            for (p, g) in params.iter_mut().zip(&grad) {
                *p -= step * g;
            }
        }
        let loss = full_loss(params);
        if !loss.is_finite() || params.iter().any(|p| !p.is_finite()) {
            return Err(Error::NonFiniteLoss {
                epoch,
                detail: format!("loss {loss}, previous {}", losses[epoch - 1]),
            });
        }
        losses.push(loss);
        if loss < best.0 {
            best = (loss, epoch, params.clone());
        }
    }
    *params = best.2;
    Ok(LossCurve { losses, best_epoch: best.1 })
}

/// Trains `ranker` on `data`, updating each mini-batch by the mean pairwise
/// gradient.
pub fn train_ranker(ranker: &mut Ranker, data: &[LabeledExample], cfg: &LearnerConfig) -> Result<LossCurve> {
    if let Some(bad) = data.iter().find(|e| {
        e.preferred.len() != ranker.input_dim || e.negatives.iter().any(|n| n.len() != ranker.input_dim)
    }) {
        let got = std::iter::once(&bad.preferred)
            .chain(&bad.negatives)
            .map(FeatureVector::len)
            .find(|&l| l != ranker.input_dim)
            .unwrap_or(0);
        return Err(Error::DimensionMismatch { expected: ranker.input_dim, got });
    }
    let data: Vec<&LabeledExample> = data.iter().filter(|e| !e.negatives.is_empty()).collect();
    let (input_dim, hidden) = (ranker.input_dim, ranker.hidden);
    let mut params = std::mem::take(&mut ranker.params);
    let view = |p: &[f64]| Ranker { input_dim, hidden, params: p.to_vec() };
    let curve = sgd(
        &mut params,
        &data,
        cfg,
        |p, batch, grad| {
            let m = view(p);
            let mut pairs = 0;
            for ex in batch {
                m.example_loss_grad(ex, Some(grad));
                pairs += ex.negatives.len();
            }
            pairs as f64
        },
        |p| {
            let m = view(p);
            let pairs = data.iter().map(|e| e.negatives.len()).sum::<usize>();
            data.iter().map(|e| m.example_loss_grad(e, None)).sum::<f64>() / pairs.max(1) as f64
        },
    );
    ranker.params = params;
    curve
}

pub fn train_pruner(pruner: &mut Pruner, data: &[PruneExample], cfg: &LearnerConfig) -> Result<LossCurve> {
    if let Some(bad) = data.iter().find(|e| e.features.len() != pruner.input_dim()) {
        return Err(Error::DimensionMismatch { expected: pruner.input_dim(), got: bad.features.len() });
    }
    let w_opt = pruner.w_opt;
    let mut params = std::mem::take(&mut pruner.params);
    let view = |p: &[f64]| Pruner { params: p.to_vec(), w_opt };
    let curve = sgd(
        &mut params,
        data,
        cfg,
        |p, batch, grad| {
            let m = view(p);
            batch.iter().map(|ex| m.example_loss_grad(ex, Some(grad)).1).sum()
        },
        |p| view(p).mean_loss(data),
    );
    pruner.params = params;
    curve
}

/// Ranker plus optional pruner, bound to one feature schema.
#[derive(Debug, Clone, PartialEq)]
pub struct LearnedPolicy {
    pub schema_id: String,
    pub ranker: Ranker,
    pub pruner: Option<Pruner>,
    pub name: String,
}

impl LearnedPolicy {
    pub fn new(schema_id: impl Into<String>, ranker: Ranker, pruner: Option<Pruner>) -> Self {
        LearnedPolicy { schema_id: schema_id.into(), ranker, pruner, name: "learned".into() }
    }

    pub fn named(mut self, name: impl Into<String>) -> Self {
        self.name = name.into();
        self
    }

    fn normalized<S>(batch: &[Candidate<'_, S>]) -> Vec<Vec<f64>> {
        let rows: Vec<&[f64]> = batch.iter().map(|c| c.features.values.as_slice()).collect();
        let ctx = NormalizationContext::of(&rows);
        rows.iter().map(|r| ctx.apply(r)).collect()
    }
}

impl<S> Policy<S> for LearnedPolicy {
    fn tag(&self) -> String {
        self.name.clone()
    }

    fn score(&self, batch: &[Candidate<'_, S>]) -> Vec<f64> {
        Self::normalized(batch)
            .iter()
            .map(|x| self.ranker.score(x).expect("feature dimension matches schema"))
            .collect()
    }

    fn prune(&self, batch: &[Candidate<'_, S>], index: usize) -> bool {
        match &self.pruner {
            None => false,
            Some(p) => {
                let rows: Vec<&[f64]> = batch.iter().map(|c| c.features.values.as_slice()).collect();
                p.prune(&NormalizationContext::of(&rows).apply(rows[index]))
            }
        }
    }

    fn has_pruner(&self) -> bool {
        self.pruner.is_some()
    }
}

/// Convex combination of learned policies; one component is drawn per
/// roll-out.
#[derive(Debug, Clone, PartialEq)]
pub struct Mixture {
    pub components: Vec<LearnedPolicy>,
    pub weights: Vec<f64>,
}

impl Mixture {
    pub fn single(p: LearnedPolicy) -> Self {
        Mixture { components: vec![p], weights: vec![1.0] }
    }

    /// Component index drawn with probability proportional to its weight.
    pub fn sample_index(&self, seed: u64) -> usize {
        if self.components.len() == 1 {
            return 0;
        }
        let u: f64 = rng::from_seed(seed).random();
        let total: f64 = self.weights.iter().sum();
        let mut acc = 0.0;
        for (i, w) in self.weights.iter().enumerate() {
            acc += w / total;
            if u < acc {
                return i;
            }
        }
        self.weights.iter().rposition(|&w| w > 0.0).unwrap_or(0)
    }

    pub fn sample(&self, seed: u64) -> &LearnedPolicy {
        &self.components[self.sample_index(seed)]
    }
}

/// A trained model: either one policy or a mixture.
#[derive(Debug, Clone, PartialEq)]
pub enum Model {
    Single(LearnedPolicy),
    Mixture(Mixture),
}

impl Model {
    pub fn schema_id(&self) -> &str {
        match self {
            Model::Single(p) => &p.schema_id,
            Model::Mixture(m) => &m.components[0].schema_id,
        }
    }

    /// The policy to use for the roll-out seeded with `seed`.
    pub fn for_rollout(&self, seed: u64) -> &LearnedPolicy {
        match self {
            Model::Single(p) => p,
            Model::Mixture(m) => m.sample(seed),
        }
    }

    /// Mixture view; a single policy becomes a one-component mixture.
    pub fn into_mixture(self) -> Mixture {
        match self {
            Model::Single(p) => Mixture::single(p),
            Model::Mixture(m) => m,
        }
    }

    pub fn to_text(&self) -> String {
        let mut out = String::from("# retro-model v1\n");
        let (comps, weights) = match self {
            Model::Single(p) => (std::slice::from_ref(p), vec![1.0]),
            Model::Mixture(m) => (m.components.as_slice(), m.weights.clone()),
        };
        let kind = if matches!(self, Model::Single(_)) { "single" } else { "mixture" };
        let _ = writeln!(out, "kind {kind}");
        let _ = writeln!(out, "components {}", comps.len());
        for (p, w) in comps.iter().zip(&weights) {
            let _ = writeln!(out, "component {}", p.name);
            let _ = writeln!(out, "weight {w:.16e}");
            let _ = writeln!(out, "schema {}", p.schema_id);
            let r = &p.ranker;
            let _ = writeln!(out, "ranker {} {} {}", r.input_dim, r.hidden, r.params.len());
            write_values(&mut out, &r.params);
            match &p.pruner {
                None => out.push_str("pruner none\n"),
                Some(pr) => {
                    let _ = writeln!(out, "pruner {} {:.16e}", pr.params.len(), pr.w_opt);
                    write_values(&mut out, &pr.params);
                }
            }
        }
        out
    }

    pub fn parse(text: &str) -> Result<Self> {
        let mut lines = Lines::new(text);
        let (n, l) = lines.next()?;
        if l != "# retro-model v1" {
            return Err(Error::parse(n, "missing model header"));
        }
        let kind = lines.field("kind")?;
        let count: usize = lines.parsed("components")?;
        let mut comps = Vec::with_capacity(count);
        let mut weights = Vec::with_capacity(count);
        for _ in 0..count {
            let name = lines.field("component")?;
            weights.push(lines.parsed::<f64>("weight")?);
            let schema = lines.field("schema")?;
            let (n, head) = lines.keyed("ranker")?;
            let dims: Vec<usize> = head
                .split(' ')
                .map(|t| t.parse().map_err(|e| Error::parse(n, format!("{e}"))))
                .collect::<Result<_>>()?;
            if dims.len() != 3 {
                return Err(Error::parse(n, "ranker line needs input_dim hidden count"));
            }
            let params = lines.values(dims[2])?;
            let ranker = Ranker::from_params(dims[0], dims[1], params)?;
            let (n, head) = lines.keyed("pruner")?;
            let pruner = if head == "none" {
                None
            } else {
                let (len, w) = head.split_once(' ').ok_or_else(|| Error::parse(n, "pruner line"))?;
                let len: usize = len.parse().map_err(|e| Error::parse(n, format!("{e}")))?;
                let w: f64 = w.parse().map_err(|e| Error::parse(n, format!("{e}")))?;
                Some(Pruner::from_params(lines.values(len)?, w)?)
            };
            comps.push(LearnedPolicy { schema_id: schema, ranker, pruner, name });
        }
        match (kind.as_str(), comps.len()) {
            ("single", 1) => Ok(Model::Single(comps.pop().expect("one component"))),
            ("mixture", k) if k >= 1 => Ok(Model::Mixture(Mixture { components: comps, weights })),
            _ => Err(Error::parse(0, format!("bad model kind {kind} with {count} components"))),
        }
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_text()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::parse(&std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?)
    }
}

fn write_values(out: &mut String, values: &[f64]) {
    for v in values {
        let _ = writeln!(out, "{v:.16e}");
    }
}

/// Line cursor shared by the text parsers.
pub(crate) struct Lines<'a> {
    inner: std::iter::Enumerate<std::str::Lines<'a>>,
}

impl<'a> Lines<'a> {
    pub(crate) fn new(text: &'a str) -> Self {
        Lines { inner: text.lines().enumerate() }
    }

    pub(crate) fn next(&mut self) -> Result<(usize, &'a str)> {
        self.inner
            .next()
            .map(|(i, l)| (i + 1, l))
            .ok_or_else(|| Error::parse(0, "unexpected end of input"))
    }

    pub(crate) fn keyed(&mut self, key: &str) -> Result<(usize, &'a str)> {
        let (n, l) = self.next()?;
        l.strip_prefix(key)
            .and_then(|r| r.strip_prefix(' '))
            .map(|r| (n, r))
            .ok_or_else(|| Error::parse(n, format!("expected `{key}`")))
    }

    pub(crate) fn field(&mut self, key: &str) -> Result<String> {
        self.keyed(key).map(|(_, v)| v.to_string())
    }

    pub(crate) fn parsed<T: std::str::FromStr>(&mut self, key: &str) -> Result<T>
    where
        T::Err: std::fmt::Display,
    {
        let (n, v) = self.keyed(key)?;
        v.parse().map_err(|e| Error::parse(n, format!("bad {key}: {e}")))
    }

    pub(crate) fn values(&mut self, count: usize) -> Result<Vec<f64>> {
        (0..count)
            .map(|_| {
                let (n, l) = self.next()?;
                l.trim().parse().map_err(|e| Error::parse(n, format!("bad number: {e}")))
            })
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::search::{pop_best, NodeId, SearchNode};
    use proptest::prelude::*;

    fn fv(v: &[f64]) -> FeatureVector {
        FeatureVector::new(v.to_vec())
    }

    #[test]
    fn normalize_examples() {
        let (n, _) = normalize_query(&[fv(&[3.0, 7.0])]);
        assert_eq!(n[0].values, vec![0.0, 0.0]);
        let (n, _) = normalize_query(&[fv(&[2.0]), fv(&[4.0])]);
        assert_eq!((n[0].values[0], n[1].values[0]), (-1.0, 1.0));
        let (n, ctx) = normalize_query(&[fv(&[1.0]), fv(&[2.0]), fv(&[3.0])]);
        let got: Vec<f64> = n.iter().map(|v| v.values[0]).collect();
        let affine = |x: f64| (x - 1.0) / (3.0 - 1.0) * 2.0 - 1.0;
        assert_eq!(got, vec![affine(1.0), affine(2.0), affine(3.0)]);
        assert_eq!(got, vec![-1.0, 0.0, 1.0]);
        assert!(ctx.min[0] <= ctx.max[0]);
    }

    /// Forward pass written independently with explicit loops over a
    /// matrix view.
    fn reference_forward(r: &Ranker, x: &[f64]) -> f64 {
        let (d, h) = (r.input_dim(), r.hidden());
        let p = r.params();
        let w1 = |i: usize, j: usize| p[i * d + j];
        let b1 = |i: usize| p[h * d + i];
        let w2 = |i: usize| p[h * d + h + i];
        let b2 = p[h * d + 2 * h];
        let mut s = b2;
        for i in 0..h {
            let mut z = b1(i);
            for j in 0..d {
                z += w1(i, j) * x[j];
            }
            let a = if z < 0.0 { 0.01 * z } else { z };
            s += w2(i) * a;
        }
        s
    }

    #[test]
    fn score_examples() {
        let r = Ranker::zeros(4, 3);
        assert_eq!(r.score(&[1.0, -2.0, 3.0, 9.0]).unwrap(), 0.0);
        let id = Ranker::from_params(1, 1, vec![1.0, 0.0, 1.0, 0.0]).unwrap();
        assert_eq!(id.score(&[2.0]).unwrap(), 2.0);
        assert_eq!(id.score(&[-2.0]).unwrap(), -0.02);
        assert!(matches!(r.score(&[1.0]), Err(Error::DimensionMismatch { expected: 4, got: 1 })));
    }

    proptest! {
        #[test]
        fn score_matches_reference(seed in any::<u64>(), x in proptest::collection::vec(-3.0f64..3.0, 6)) {
            let r = Ranker::init(6, 5, seed);
            let a = r.score(&x).unwrap();
            let b = reference_forward(&r, &x);
            prop_assert!((a - b).abs() <= 1e-12 * (1.0 + b.abs()));
        }

        #[test]
        fn shift_invariance_after_normalization(
            rows in proptest::collection::vec(proptest::collection::vec(-5.0f64..5.0, 3), 1..12),
            shift in -100.0f64..100.0,
            seed in any::<u64>(),
        ) {
            let r = Ranker::init(3, 4, seed);
            let pick = |rows: &[Vec<f64>]| {
                let feats: Vec<FeatureVector> = rows.iter().map(|v| fv(v)).collect();
                let (n, _) = normalize_query(&feats);
                let s: Vec<f64> = n.iter().map(|v| r.score(&v.values).unwrap()).collect();
                let ids: Vec<NodeId> = (0..rows.len() as u64).map(NodeId).collect();
                pop_best(&ids, &s).unwrap()
            };
            // a column where every node has the same value, then shifted
            let mut a = rows.clone();
            let mut b = rows.clone();
            for (ra, rb) in a.iter_mut().zip(b.iter_mut()) {
                ra[1] = 0.5;
                rb[1] = 0.5 + shift;
            }
            prop_assert_eq!(pick(&a), pick(&b));
            // a shift applied to all nodes in one column
            let c: Vec<Vec<f64>> = rows.iter().map(|v| vec![v[0] + shift, v[1], v[2]]).collect();
            let na = normalize_query(&rows.iter().map(|v| fv(v)).collect::<Vec<_>>()).0;
            let nc = normalize_query(&c.iter().map(|v| fv(v)).collect::<Vec<_>>()).0;
            for (x, y) in na.iter().zip(&nc) {
                for (p, q) in x.values.iter().zip(&y.values) {
                    prop_assert!((p - q).abs() < 1e-9);
                }
            }
        }
    }

    #[test]
    fn pairwise_loss_values() {
        let r = Ranker::zeros(2, 2);
        let ex = LabeledExample {
            preferred: fv(&[1.0, 0.0]),
            negatives: vec![fv(&[0.0, 1.0])],
            instance_id: "x".into(),
            decision_step: 0,
        };
        assert!((r.example_loss_grad(&ex, None) - std::f64::consts::LN_2).abs() < 1e-15);
        let mut prev = f64::INFINITY;
        for d in [-800.0, -50.0, -1.0, 0.0, 1.0, 50.0, 800.0] {
            let l = softplus(-d);
            assert!(l.is_finite() && l < prev, "loss not decreasing at {d}");
            prev = l;
        }
        // diff -800 costs about 800, diff +800 about nothing
        assert!((softplus(800.0) - 800.0).abs() < 1e-9);
        assert!(softplus(-800.0) < 1e-300);
    }

    fn rel_err(a: f64, b: f64) -> f64 {
        (a - b).abs() / (a.abs() + b.abs()).max(1e-8)
    }

    fn fd_check(params: &mut [f64], analytic: &[f64], mut loss: impl FnMut(&[f64]) -> f64) -> f64 {
        let h = 1e-6;
        let mut worst: f64 = 0.0;
        for i in 0..params.len() {
            let orig = params[i];
            params[i] = orig + h;
            let up = loss(params);
            params[i] = orig - h;
            let down = loss(params);
            params[i] = orig;
            let numeric = (up - down) / (2.0 * h);
            if (numeric - analytic[i]).abs() > 1e-7 {
                worst = worst.max(rel_err(numeric, analytic[i]));
            }
        }
        worst
    }

    #[test]
    fn pairwise_gradient_matches_finite_differences() {
        let mut r = rng::from_seed(11);
        for trial in 0..20 {
            let mut m = Ranker::init(5, 4, trial);
            let ex = LabeledExample {
                preferred: fv(&(0..5).map(|_| r.random_range(-1.0..1.0)).collect::<Vec<_>>()),
                negatives: (0..3).map(|_| fv(&(0..5).map(|_| r.random_range(-1.0..1.0)).collect::<Vec<_>>())).collect(),
                instance_id: String::new(),
                decision_step: 0,
            };
            let mut g = vec![0.0; m.params().len()];
            m.example_loss_grad(&ex, Some(&mut g));
            let (d, h) = (m.input_dim(), m.hidden());
            let worst = fd_check(m.params_mut(), &g, |p| {
                Ranker::from_params(d, h, p.to_vec()).unwrap().example_loss_grad(&ex, None)
            });
            assert!(worst <= 1e-4, "trial {trial}: rel err {worst}");
        }
    }

    #[test]
    fn logistic_gradient_matches_finite_differences() {
        let mut r = rng::from_seed(5);
        for w_opt in [1.0, 5.0] {
            for _ in 0..20 {
                let params: Vec<f64> = (0..5).map(|_| r.random_range(-2.0..2.0)).collect();
                let mut p = Pruner::from_params(params, w_opt).unwrap();
                let ex = PruneExample {
                    features: fv(&(0..4).map(|_| r.random_range(-1.0..1.0)).collect::<Vec<_>>()),
                    keep: r.random(),
                    instance_id: String::new(),
                };
                let mut g = vec![0.0; 5];
                p.example_loss_grad(&ex, Some(&mut g));
                let worst = fd_check(p.params_mut(), &g, |q| {
                    Pruner::from_params(q.to_vec(), w_opt).unwrap().example_loss_grad(&ex, None).0
                });
                assert!(worst <= 1e-4, "rel err {worst}");
            }
        }
    }

    #[test]
    fn w_opt_one_is_plain_logistic() {
        let p = Pruner::from_params(vec![0.3, -0.7, 0.1], 1.0).unwrap();
        let x = [0.5, 0.25];
        let z: f64 = 0.3 * 0.5 - 0.7 * 0.25 + 0.1;
        let keep = PruneExample { features: fv(&x), keep: true, instance_id: String::new() };
        let prune = PruneExample { features: fv(&x), keep: false, instance_id: String::new() };
        let prob: f64 = 1.0 / (1.0 + (-z).exp());
        assert!((p.example_loss_grad(&keep, None).0 + prob.ln()).abs() < 1e-12);
        assert!((p.example_loss_grad(&prune, None).0 + (1.0 - prob).ln()).abs() < 1e-12);
    }

    #[test]
    fn zero_pruner_keeps() {
        let p = Pruner::zeros(3, 5.0).unwrap();
        assert_eq!(p.keep_probability(&[1.0, 2.0, 3.0]), 0.5);
        assert!(!p.prune(&[1.0, 2.0, 3.0]));
        assert!(Pruner::zeros(3, 0.5).is_err());
    }

    #[test]
    fn single_pair_is_learned() {
        let mut m = Ranker::init(3, 32, 1);
        let data = vec![LabeledExample {
            preferred: fv(&[1.0, -1.0, 0.5]),
            negatives: vec![fv(&[-1.0, 1.0, -0.5])],
            instance_id: String::new(),
            decision_step: 0,
        }];
        let cfg = LearnerConfig { epochs: 500, ..Default::default() };
        let curve = train_ranker(&mut m, &data, &cfg).unwrap();
        assert!(m.mean_loss(&data) < 0.1, "loss {}", m.mean_loss(&data));
        assert!(curve.losses.iter().position(|&l| l < 0.1).unwrap() <= 500);
    }

    fn synthetic(seed: u64, n: usize, truth: &[f64]) -> Vec<LabeledExample> {
        let mut r = rng::from_seed(seed);
        let d = truth.len();
        let mut out = Vec::new();
        while out.len() < n {
            let mut pts: Vec<Vec<f64>> = (0..4).map(|_| (0..d).map(|_| r.random_range(-1.0..1.0)).collect()).collect();
            let util = |v: &Vec<f64>| v.iter().zip(truth).map(|(a, b)| a * b).sum::<f64>();
            pts.sort_by(|a, b| util(b).total_cmp(&util(a)));
            let best = pts.remove(0);
            out.push(LabeledExample {
                preferred: fv(&best),
                negatives: pts.into_iter().map(|p| fv(&p)).collect(),
                instance_id: String::new(),
                decision_step: out.len() as u64,
            });
        }
        out
    }

    #[test]
    fn synthetic_ranking_generalizes() {
        let truth = [1.0, -2.0, 0.5, 0.0, 1.5];
        let train = synthetic(1, 100, &truth);
        let test = synthetic(2, 200, &truth);
        let mut m = Ranker::init(5, 32, 3);
        train_ranker(&mut m, &train, &LearnerConfig { epochs: 200, ..Default::default() }).unwrap();
        let (mut ok, mut total) = (0, 0);
        for ex in &test {
            let sp = m.score(&ex.preferred.values).unwrap();
            for n in &ex.negatives {
                ok += usize::from(sp > m.score(&n.values).unwrap());
                total += 1;
            }
        }
        let acc = ok as f64 / total as f64;
        assert!(acc >= 0.95, "held-out pairwise accuracy {acc}");
    }

    #[test]
    fn training_is_deterministic_and_never_worse() {
        let truth = [0.3, 0.3, -1.0];
        let data = synthetic(9, 40, &truth);
        let cfg = LearnerConfig { epochs: 15, seed: 4, batch_size: 4, ..Default::default() };
        let mut a = Ranker::init(3, 8, 2);
        let mut b = a.clone();
        let ca = train_ranker(&mut a, &data, &cfg).unwrap();
        let cb = train_ranker(&mut b, &data, &cfg).unwrap();
        assert_eq!(a, b);
        assert_eq!(ca, cb);
        assert!(a.mean_loss(&data) <= ca.losses[0]);
        assert!(matches!(train_ranker(&mut a, &[], &cfg), Err(Error::EmptyDataset)));
    }

    #[test]
    fn nan_features_abort_training() {
        let mut m = Ranker::init(2, 4, 0);
        let data = vec![LabeledExample {
            preferred: FeatureVector { values: vec![f64::NAN, 0.0] },
            negatives: vec![fv(&[0.0, 1.0])],
            instance_id: String::new(),
            decision_step: 0,
        }];
        assert!(matches!(
            train_ranker(&mut m, &data, &LearnerConfig::default()),
            Err(Error::NonFiniteLoss { .. })
        ));
    }

    #[test]
    fn separable_pruner_reaches_full_accuracy() {
        let mut r = rng::from_seed(8);
        let data: Vec<PruneExample> = (0..80)
            .map(|_| {
                let x: Vec<f64> = (0..3).map(|_| r.random_range(-1.0..1.0)).collect();
                let margin = x[0] - 0.5 * x[2];
                let x = if margin.abs() < 0.1 { vec![x[0] + margin.signum() * 0.2, x[1], x[2]] } else { x };
                let keep = x[0] - 0.5 * x[2] > 0.0;
                PruneExample { features: fv(&x), keep, instance_id: String::new() }
            })
            .collect();
        let mut p = Pruner::zeros(3, 1.0).unwrap();
        train_pruner(&mut p, &data, &LearnerConfig { epochs: 2000, learning_rate: 0.1, ..Default::default() }).unwrap();
        assert_eq!(p.accuracy(&data), 1.0);
    }

    #[test]
    fn model_round_trip_is_bitwise() {
        let ranker = Ranker::init(6, 7, 21);
        let pruner = Pruner::from_params(vec![0.1, -0.2, 1.0 / 3.0, 2.5e-17, -7.0, 0.0, 1e10], 5.0).unwrap();
        let p = LearnedPolicy::new("schema-x", ranker, Some(pruner)).named("pi");
        for model in [
            Model::Single(p.clone()),
            Model::Mixture(Mixture { components: vec![p.clone(), p.clone().named("b")], weights: vec![0.3, 0.7] }),
        ] {
            let text = model.to_text();
            let back = Model::parse(&text).unwrap();
            assert_eq!(back, model);
            assert_eq!(back.to_text(), text);
            let mut r = rng::from_seed(1);
            for _ in 0..1000 {
                let x: Vec<f64> = (0..6).map(|_| r.random_range(-10.0..10.0)).collect();
                let (a, b) = (model.for_rollout(0), back.for_rollout(0));
                assert_eq!(a.ranker.score(&x).unwrap().to_bits(), b.ranker.score(&x).unwrap().to_bits());
                let (pa, pb) = (a.pruner.as_ref().unwrap(), b.pruner.as_ref().unwrap());
                assert_eq!(pa.logit(&x).to_bits(), pb.logit(&x).to_bits());
            }
        }
        assert!(Model::parse("# retro-model v1\nkind single\ncomponents 1\n").is_err());
    }

    #[test]
    fn learned_policy_scores_normalized_batch() {
        let ranker = Ranker::from_params(1, 1, vec![1.0, 0.0, 1.0, 0.0]).unwrap();
        let p = LearnedPolicy::new("s", ranker, None);
        let nodes: Vec<SearchNode<()>> = (0..3)
            .map(|i| SearchNode {
                id: NodeId(i),
                parent: None,
                depth: 0,
                state: (),
                is_terminal: false,
                objective: None,
                score_at_insertion: f64::NAN,
                expanded: false,
            })
            .collect();
        let feats = [fv(&[10.0]), fv(&[20.0]), fv(&[30.0])];
        let batch: Vec<Candidate<'_, ()>> =
            nodes.iter().zip(&feats).map(|(node, features)| Candidate { node, features }).collect();
        assert_eq!(Policy::score(&p, &batch), vec![-0.01, 0.0, 1.0]);
    }

    #[test]
    fn mixture_sampling_follows_weights() {
        let p = LearnedPolicy::new("s", Ranker::zeros(1, 1), None);
        let m = Mixture { components: vec![p.clone(), p.clone(), p], weights: vec![0.2, 0.0, 0.8] };
        let mut counts = [0usize; 3];
        for s in 0..5000 {
            counts[m.sample_index(s)] += 1;
        }
        assert_eq!(counts[1], 0);
        assert!((counts[0] as f64 / 5000.0 - 0.2).abs() < 0.03, "{counts:?}");
    }
}
