//! Branch-and-bound over minimum vertex cover integer programs.
//!
//! Each search node pins some variables; its LP relaxation gives a lower
//! bound and, when integral, a cover. Branching splits on the most fractional
//! variable. Children whose rounded-up bound cannot beat the incumbent are
//! never enqueued, and a popped node whose bound has since been overtaken is
//! not branched on.

pub mod mvc;
pub mod simplex;

use std::fmt::Write as _;

use crate::policy::FeatureVector;
use crate::search::{Candidate, Environment, NodeId, Policy, SearchNode, SearchTree, Trace};
use crate::{rng, Error, Result};
pub use mvc::{brute_force_mvc, edge_probability, erdos_renyi, exact_mvc, node_relaxation, Graph};
pub use simplex::{LinearProgram, LpSolution, LpStatus};

pub const FEATURE_DIM: usize = 10;
pub const SCHEMA_ID: &str = "bnb-mvc-v1";
/// Gap charged when a run finds no feasible cover.
pub const NO_SOLUTION_GAP: f64 = 300.0;

#[derive(Debug, Clone, PartialEq)]
pub struct BnbInstance {
    pub id: String,
    pub graph: Graph,
    /// Minimum cover size when known.
    pub optimum: Option<usize>,
}

impl BnbInstance {
    pub fn new(id: impl Into<String>, graph: Graph) -> Self {
        BnbInstance { id: id.into(), graph, optimum: None }
    }

    /// Computes and stores the optimum with the exact solver.
    pub fn solved(mut self) -> Result<Self> {
        self.optimum = Some(exact_mvc(&self.graph)?);
        Ok(self)
    }
}

/// Random MVC instances of `n` nodes with mean degree `degree`; optimum
/// attached. Seeds come from `(seed, n, split, index)`.
pub fn generate_instances(n: usize, degree: f64, count: usize, split: u64, seed: u64) -> Result<Vec<BnbInstance>> {
    let p = edge_probability(n, degree);
    (0..count)
        .map(|i| {
            let s = rng::derive(seed, &[n as u64, split, i as u64]);
            BnbInstance::new(format!("er{n}-{s:016x}"), erdos_renyi(n, p, s)?).solved()
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct BnbState {
    /// Branching decisions only; implied values live in `lp.x`.
    pub fixed: Vec<Option<bool>>,
    pub lp: LpSolution,
    /// Value set by the last branching decision, if any.
    pub last_branch: Option<bool>,
}

impl BnbState {
    pub fn bound(&self) -> f64 {
        self.lp.value
    }

    pub fn is_integral(&self) -> bool {
        self.lp.is_optimal() && self.lp.x.iter().all(|v| (v - v.round()).abs() <= simplex::TOL)
    }

    /// Index of the most fractional variable, lowest index on ties.
    pub fn branch_variable(&self) -> Option<usize> {
        let mut best: Option<(f64, usize)> = None;
        for (i, &v) in self.lp.x.iter().enumerate() {
            let frac = v.min(1.0 - v);
            if frac > simplex::TOL && best.is_none_or(|(b, _)| frac > b + simplex::TOL) {
                best = Some((frac, i));
            }
        }
        best.map(|(_, i)| i)
    }

    pub fn fractional_count(&self) -> usize {
        self.lp.x.iter().filter(|&&v| (v - v.round()).abs() > simplex::TOL).count()
    }

    /// Cover size obtained by rounding every fractional value up.
    pub fn rounded_cover(&self) -> f64 {
        self.lp.x.iter().map(|&v| (v - simplex::TOL).ceil().max(0.0)).sum()
    }
}

/// Whether a node with LP bound `bound` can still beat `incumbent`.
pub fn can_improve(bound: f64, incumbent: Option<f64>) -> bool {
    incumbent.is_none_or(|inc| (bound - simplex::TOL).ceil() < inc)
}

/// Tree statistics visible to the policy.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TreeStats {
    pub incumbent: Option<f64>,
    pub global_lower: f64,
    pub global_upper: f64,
    pub integrality_gap: f64,
    pub solutions_found: usize,
    pub frontier_size: usize,
}

pub fn tree_stats(g: &Graph, tree: &SearchTree<BnbState>) -> TreeStats {
    let incumbent = tree.incumbent();
    let upper = incumbent.unwrap_or(g.n as f64);
    let lower = tree
        .frontier()
        .iter()
        .map(|&id| tree.node(id).state.bound())
        .fold(f64::INFINITY, f64::min);
    let lower = if lower.is_finite() { lower.min(upper) } else { upper };
    let gap = if upper > 0.0 { (upper - lower) / upper } else { 0.0 };
    TreeStats {
        incumbent,
        global_lower: lower,
        global_upper: upper,
        integrality_gap: gap,
        solutions_found: tree.terminals().len(),
        frontier_size: tree.frontier().len(),
    }
}

#[derive(Debug, Clone, Copy, Default)]
pub struct BnbEnv;

impl BnbEnv {
    fn state(g: &Graph, fixed: Vec<Option<bool>>, last_branch: Option<bool>) -> Result<BnbState> {
        let lp = node_relaxation(g, &fixed)?;
        Ok(BnbState { fixed, lp, last_branch })
    }

    pub fn node_features(node: &SearchNode<BnbState>, stats: &TreeStats) -> FeatureVector {
        let s = &node.state;
        FeatureVector::new(vec![
            s.bound(),
            s.rounded_cover(),
            node.depth as f64,
            s.fractional_count() as f64,
            s.last_branch.map_or(0.5, |b| f64::from(u8::from(b))),
            stats.integrality_gap,
            stats.solutions_found as f64,
            stats.global_lower,
            stats.global_upper,
            stats.frontier_size as f64,
        ])
    }
}

impl Environment for BnbEnv {
    type Instance = BnbInstance;
    type State = BnbState;

    fn instance_id(&self, inst: &BnbInstance) -> String {
        inst.id.clone()
    }

    fn schema_id(&self) -> &'static str {
        SCHEMA_ID
    }

    fn feature_dim(&self) -> usize {
        FEATURE_DIM
    }

    fn root(&self, inst: &BnbInstance) -> BnbState {
        Self::state(&inst.graph, vec![None; inst.graph.n], None).expect("root relaxation solves")
    }

    fn terminal(&self, _: &BnbInstance, s: &BnbState) -> Option<f64> {
        s.is_integral().then(|| s.bound().round())
    }

    fn children(&self, inst: &BnbInstance, s: &BnbState, tree: &SearchTree<BnbState>) -> Vec<BnbState> {
        let incumbent = tree.incumbent();
        if !s.lp.is_optimal() || s.is_integral() || !can_improve(s.bound(), incumbent) {
            return Vec::new();
        }
        let Some(var) = s.branch_variable() else {
            return Vec::new();
        };
        let mut out = Vec::with_capacity(2);
        for value in [false, true] {
            let mut fixed = s.fixed.clone();
            fixed[var] = Some(value);
            let child = Self::state(&inst.graph, fixed, Some(value)).expect("node relaxation solves");
            if child.lp.is_optimal() && can_improve(child.bound(), incumbent) {
                out.push(child);
            }
        }
        out
    }

    fn features(&self, inst: &BnbInstance, node: &SearchNode<BnbState>, tree: &SearchTree<BnbState>) -> FeatureVector {
        Self::node_features(node, &tree_stats(&inst.graph, tree))
    }

    fn batch_features(&self, inst: &BnbInstance, tree: &SearchTree<BnbState>, ids: &[NodeId]) -> Vec<FeatureVector> {
        let stats = tree_stats(&inst.graph, tree);
        ids.iter().map(|&id| Self::node_features(tree.node(id), &stats)).collect()
    }

    fn cost(&self, inst: &BnbInstance, trace: &Trace<BnbState>) -> f64 {
        let found = trace.tree.incumbent();
        match inst.optimum {
            Some(opt) => optimality_gap(found, opt as f64),
            None => found.unwrap_or(inst.graph.n as f64 * 4.0),
        }
    }

    /// How soon the best cover turned up; runs without one rank last.
    fn tie_break(&self, _: &BnbInstance, trace: &Trace<BnbState>) -> f64 {
        trace.incumbent_step().map_or(f64::INFINITY, |s| s as f64)
    }
}

/// `100 (found - opt) / opt`; no solution costs [`NO_SOLUTION_GAP`].
pub fn optimality_gap(found: Option<f64>, optimum: f64) -> f64 {
    match found {
        None => NO_SOLUTION_GAP,
        Some(_) if optimum <= 0.0 => 0.0,
        Some(f) => 100.0 * (f - optimum) / optimum,
    }
}

/// Expands the node with the lowest LP bound.
#[derive(Debug, Clone, Copy, Default)]
pub struct BestBound;

impl Policy<BnbState> for BestBound {
    fn tag(&self) -> String {
        "best-bound".into()
    }

    fn score(&self, batch: &[Candidate<'_, BnbState>]) -> Vec<f64> {
        batch.iter().map(|c| -c.node.state.bound()).collect()
    }
}

/// One row of the results table.
#[derive(Debug, Clone, PartialEq)]
pub struct BnbResult {
    pub instance: String,
    pub budget: u64,
    pub incumbent: Option<f64>,
    pub optimum: Option<usize>,
    pub gap_percent: f64,
    pub expansions: u64,
}

impl BnbResult {
    pub fn from_trace(inst: &BnbInstance, budget: u64, trace: &Trace<BnbState>) -> Self {
        BnbResult {
            instance: inst.id.clone(),
            budget,
            incumbent: trace.tree.incumbent(),
            optimum: inst.optimum,
            gap_percent: BnbEnv.cost(inst, trace),
            expansions: trace.expansions(),
        }
    }
}

pub fn results_csv(rows: &[BnbResult]) -> String {
    let mut out = String::from("instance,budget,incumbent,optimum,gap_percent,expansions\n");
    for r in rows {
        let inc = r.incumbent.map_or(String::new(), |v| v.to_string());
        let opt = r.optimum.map_or(String::new(), |v| v.to_string());
        let _ = writeln!(out, "{},{},{inc},{opt},{},{}", r.instance, r.budget, r.gap_percent, r.expansions);
    }
    out
}

/// Unbudgeted best-bound search to optimality; for small graphs and tests.
pub fn solve_exhaustive(inst: &BnbInstance, max_expansions: u64) -> Result<Trace<BnbState>> {
    use crate::retro::ExplorationConfig;
    use crate::search::{run_search, SearchBudget, StopMode};
    let budget = SearchBudget::new(max_expansions, StopMode::ExhaustBudget)?;
    let t = run_search(&BnbEnv, inst, &BestBound, &budget, &ExplorationConfig::none(), 0)?;
    if !t.tree.frontier().is_empty() {
        return Err(Error::Invalid(format!("{} not solved within {max_expansions} expansions", inst.id)));
    }
    Ok(t)
}
