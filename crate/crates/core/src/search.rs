//! Policy-driven best-first tree search.
//!
//! The search keeps an append-only tree of [`SearchNode`]s and a frontier of
//! open nodes. Each step the policy ranks the frontier, the best node is
//! popped and expanded, and its children are appended. Terminal children are
//! recorded but never enqueued. Everything that happened is kept in a
//! [`Trace`], which the retrospective oracle later relabels.

use std::fmt;
use std::fmt::Write as _;

use rand::Rng as _;
use rand_distr::{Distribution, Normal};

use crate::policy::FeatureVector;
use crate::retro::ExplorationConfig;
use crate::{rng, Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct NodeId(pub u64);

impl NodeId {
    pub const ROOT: NodeId = NodeId(0);

    pub fn index(self) -> usize {
        self.0 as usize
    }
}

impl fmt::Display for NodeId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

#[derive(Debug, Clone)]
pub struct SearchNode<S> {
    pub id: NodeId,
    pub parent: Option<NodeId>,
    pub depth: u32,
    pub state: S,
    pub is_terminal: bool,
    /// Environment-defined quality of a terminal, lower is better.
    pub objective: Option<f64>,
    /// Score the node received the first time the policy ranked it. Under
    /// [`ScoreRefresh::AtInsertion`] this is also its frozen queue key.
    pub score_at_insertion: f64,
    pub expanded: bool,
}

/// The evolving search state: nodes, open frontier, terminals found so far.
#[derive(Debug, Clone)]
pub struct SearchTree<S> {
    nodes: Vec<SearchNode<S>>,
    // kept sorted by id, which is also insertion order
    frontier: Vec<NodeId>,
    terminals: Vec<NodeId>,
    expansions: u64,
    incumbent: Option<(f64, NodeId)>,
}

impl<S> SearchTree<S> {
    /// A tree holding only the root. The root is enqueued unless `terminal`
    /// says it already is a solution.
    pub fn with_root(state: S, terminal: Option<f64>) -> Self {
        let mut tree = SearchTree {
            nodes: Vec::new(),
            frontier: Vec::new(),
            terminals: Vec::new(),
            expansions: 0,
            incumbent: None,
        };
        tree.push(None, state, terminal);
        tree
    }

    fn push(&mut self, parent: Option<NodeId>, state: S, terminal: Option<f64>) -> NodeId {
        let id = NodeId(self.nodes.len() as u64);
        let depth = parent.map_or(0, |p| self.nodes[p.index()].depth + 1);
        self.nodes.push(SearchNode {
            id,
            parent,
            depth,
            state,
            is_terminal: terminal.is_some(),
            objective: terminal,
            score_at_insertion: f64::NAN,
            expanded: false,
        });
        match terminal {
            Some(obj) => {
                self.terminals.push(id);
                if self.incumbent.is_none_or(|(best, _)| obj < best) {
                    self.incumbent = Some((obj, id));
                }
            }
            None => self.frontier.push(id),
        }
        id
    }

    /// Appends a child of an already expanded node.
    pub fn insert_child(&mut self, parent: NodeId, state: S, terminal: Option<f64>) -> NodeId {
        debug_assert!(self.nodes[parent.index()].expanded);
        self.push(Some(parent), state, terminal)
    }

    /// Removes `id` from the frontier and counts one expansion step.
    pub fn take(&mut self, id: NodeId) -> Result<()> {
        let pos = self.frontier.binary_search(&id).map_err(|_| {
            Error::Invalid(format!("node {id} is not in the frontier"))
        })?;
        self.frontier.remove(pos);
        self.nodes[id.index()].expanded = true;
        self.expansions += 1;
        Ok(())
    }

    pub fn node(&self, id: NodeId) -> &SearchNode<S> {
        &self.nodes[id.index()]
    }

    pub fn nodes(&self) -> &[SearchNode<S>] {
        &self.nodes
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn frontier(&self) -> &[NodeId] {
        &self.frontier
    }

    pub fn terminals(&self) -> &[NodeId] {
        &self.terminals
    }

    pub fn expansions(&self) -> u64 {
        self.expansions
    }

    /// Best terminal objective found so far.
    pub fn incumbent_node(&self) -> Option<NodeId> {
        self.incumbent.map(|(_, id)| id)
    }

    pub fn incumbent(&self) -> Option<f64> {
        self.incumbent.map(|(v, _)| v)
    }

    /// Node ids from the root down to `id`.
    pub fn path_from_root(&self, id: NodeId) -> Vec<NodeId> {
        let mut path = vec![id];
        let mut cur = id;
        while let Some(p) = self.nodes[cur.index()].parent {
            path.push(p);
            cur = p;
        }
        path.reverse();
        path
    }

    /// Canonical text form of the tree structure (ids, parents, depths,
    /// terminal objectives, expansion flags). States are opaque and left out.
    pub fn skeleton(&self) -> String {
        let mut out = String::new();
        for n in &self.nodes {
            let parent = n.parent.map_or("-".to_string(), |p| p.to_string());
            let obj = n.objective.map_or("-".to_string(), |o| o.to_string());
            let _ = writeln!(out, "{} {} {} {} {}", n.id, parent, n.depth, obj, u8::from(n.expanded));
        }
        let _ = writeln!(out, "frontier {:?}", self.frontier);
        let _ = writeln!(out, "expansions {}", self.expansions);
        out
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TraceEvent {
    pub step: u64,
    pub popped: NodeId,
    /// Every child appended to the tree by this expansion, terminals included.
    pub children: Vec<NodeId>,
}

/// Full chronological record of one roll-out.
#[derive(Debug, Clone)]
pub struct Trace<S> {
    pub tree: SearchTree<S>,
    pub events: Vec<TraceEvent>,
    pub instance_id: String,
    pub seed: u64,
    pub policy_tag: String,
}

impl<S> Trace<S> {
    pub fn no_terminal_found(&self) -> bool {
        self.tree.terminals.is_empty()
    }

    pub fn expansions(&self) -> u64 {
        self.tree.expansions
    }

    /// Expansions it took to generate the best terminal (0 if it is the root).
    pub fn incumbent_step(&self) -> Option<u64> {
        let id = self.tree.incumbent_node()?;
        if id == NodeId::ROOT {
            return Some(0);
        }
        self.events.iter().position(|e| e.children.contains(&id)).map(|k| k as u64 + 1)
    }

    pub fn record(&self) -> TraceRecord {
        TraceRecord {
            instance_id: self.instance_id.clone(),
            seed: self.seed,
            policy_tag: self.policy_tag.clone(),
            root_terminal: self.tree.nodes[0].objective,
            terminals: self
                .tree
                .terminals
                .iter()
                .map(|&t| (t, self.tree.node(t).objective.unwrap_or(f64::NAN)))
                .collect(),
            events: self.events.clone(),
        }
    }

    pub fn to_text(&self) -> String {
        self.record().to_text()
    }
}

/// The state-free part of a [`Trace`]: what the text format stores.
#[derive(Debug, Clone, PartialEq)]
pub struct TraceRecord {
    pub instance_id: String,
    pub seed: u64,
    pub policy_tag: String,
    pub root_terminal: Option<f64>,
    pub terminals: Vec<(NodeId, f64)>,
    pub events: Vec<TraceEvent>,
}

const TRACE_MAGIC: &str = "# retro-trace v1";

impl TraceRecord {
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "{TRACE_MAGIC}");
        let _ = writeln!(out, "instance_id {}", self.instance_id);
        let _ = writeln!(out, "seed {}", self.seed);
        let _ = writeln!(out, "policy_tag {}", self.policy_tag);
        let _ = writeln!(out, "rng {}", rng::RNG_ALGORITHM);
        let terms: Vec<String> = self.terminals.iter().map(|(id, o)| format!("{id}:{o}")).collect();
        let _ = writeln!(out, "terminals {}", if terms.is_empty() { "-".into() } else { terms.join(",") });
        let _ = writeln!(out, "events {}", self.events.len());
        for ev in &self.events {
            let kids: Vec<String> = ev.children.iter().map(|c| c.to_string()).collect();
            let kids = if kids.is_empty() { "-".to_string() } else { kids.join(",") };
            let _ = writeln!(out, "{} {} {}", ev.step, ev.popped, kids);
        }
        out
    }

    pub fn parse(text: &str) -> Result<Self> {
        let mut lines = text.lines().enumerate().map(|(i, l)| (i + 1, l));
        let mut next = |what: &str| {
            lines
                .next()
                .ok_or_else(|| Error::parse(0, format!("unexpected end of trace, wanted {what}")))
        };
        let (n, magic) = next("header")?;
        if magic != TRACE_MAGIC {
            return Err(Error::parse(n, "missing trace header"));
        }
        let field = |(n, line): (usize, &str), key: &str| -> Result<String> {
            line.strip_prefix(key)
                .and_then(|r| r.strip_prefix(' '))
                .map(str::to_string)
                .ok_or_else(|| Error::parse(n, format!("expected `{key}`")))
        };
        let instance_id = field(next("instance_id")?, "instance_id")?;
        let line = next("seed")?;
        let seed = field(line, "seed")?
            .parse()
            .map_err(|e| Error::parse(line.0, format!("bad seed: {e}")))?;
        let policy_tag = field(next("policy_tag")?, "policy_tag")?;
        let _rng = field(next("rng")?, "rng")?;
        let line = next("terminals")?;
        let raw = field(line, "terminals")?;
        let mut terminals = Vec::new();
        if raw != "-" {
            for item in raw.split(',') {
                let (id, obj) = item
                    .split_once(':')
                    .ok_or_else(|| Error::parse(line.0, "terminal entries are id:objective"))?;
                let id = id.parse().map_err(|e| Error::parse(line.0, format!("{e}")))?;
                let obj = obj.parse().map_err(|e| Error::parse(line.0, format!("{e}")))?;
                terminals.push((NodeId(id), obj));
            }
        }
        let line = next("events")?;
        let count: usize = field(line, "events")?
            .parse()
            .map_err(|e| Error::parse(line.0, format!("{e}")))?;
        let mut events = Vec::with_capacity(count);
        for _ in 0..count {
            let (n, l) = next("event")?;
            let mut parts = l.split(' ');
            let mut num = |what: &str| -> Result<u64> {
                parts
                    .next()
                    .ok_or_else(|| Error::parse(n, format!("missing {what}")))?
                    .parse()
                    .map_err(|e| Error::parse(n, format!("bad {what}: {e}")))
            };
            let step = num("step")?;
            let popped = NodeId(num("pop id")?);
            let kids = parts.next().ok_or_else(|| Error::parse(n, "missing child list"))?;
            let children = if kids == "-" {
                Vec::new()
            } else {
                kids.split(',')
                    .map(|c| c.parse().map(NodeId).map_err(|e| Error::parse(n, format!("{e}"))))
                    .collect::<Result<_>>()?
            };
            if parts.next().is_some() {
                return Err(Error::parse(n, "trailing tokens in event"));
            }
            events.push(TraceEvent { step, popped, children });
        }
        let root_terminal = terminals.iter().find(|(id, _)| *id == NodeId::ROOT).map(|&(_, o)| o);
        Ok(TraceRecord { instance_id, seed, policy_tag, root_terminal, terminals, events })
    }

    /// Rebuilds the tree structure from the events alone.
    pub fn replay(&self) -> Result<SearchTree<()>> {
        let objective = |id: NodeId| self.terminals.iter().find(|(t, _)| *t == id).map(|&(_, o)| o);
        let mut tree = SearchTree::with_root((), objective(NodeId::ROOT));
        for ev in &self.events {
            tree.take(ev.popped)?;
            for &child in &ev.children {
                let id = tree.insert_child(ev.popped, (), objective(child));
                if id != child {
                    return Err(Error::Invalid(format!(
                        "event {} lists child {child} but replay assigned {id}",
                        ev.step
                    )));
                }
            }
        }
        Ok(tree)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StopMode {
    FirstTerminal,
    ExhaustBudget,
    KTerminals(usize),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SearchBudget {
    pub max_expansions: u64,
    pub stop_mode: StopMode,
}

impl SearchBudget {
    pub fn new(max_expansions: u64, stop_mode: StopMode) -> Result<Self> {
        if max_expansions == 0 {
            return Err(Error::Invalid("max_expansions must be at least 1".into()));
        }
        if stop_mode == StopMode::KTerminals(0) {
            return Err(Error::Invalid("k_terminals needs k >= 1".into()));
        }
        Ok(SearchBudget { max_expansions, stop_mode })
    }

    fn satisfied(&self, terminals: usize) -> bool {
        match self.stop_mode {
            StopMode::FirstTerminal => terminals >= 1,
            StopMode::ExhaustBudget => false,
            StopMode::KTerminals(k) => terminals >= k,
        }
    }
}

/// When frontier scores are computed.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum ScoreRefresh {
    /// The whole frontier is re-ranked, as one normalization batch, before
    /// every pop.
    #[default]
    EveryPop,
    /// Children are scored once when inserted (batched with the frontier at
    /// that moment) and keep that score.
    AtInsertion,
}

/// What an environment must provide to be searched.
pub trait Environment: Sync {
    type Instance: Sync;
    type State: Clone + Send + Sync;

    fn instance_id(&self, inst: &Self::Instance) -> String;
    fn schema_id(&self) -> &'static str;
    fn feature_dim(&self) -> usize;

    fn root(&self, inst: &Self::Instance) -> Self::State;
    /// `Some(objective)` when `state` is a terminal; lower objectives are better.
    fn terminal(&self, inst: &Self::Instance, state: &Self::State) -> Option<f64>;
    /// Child states of an expanded node. Must be deterministic given the
    /// state and the tree.
    fn children(
        &self,
        inst: &Self::Instance,
        state: &Self::State,
        tree: &SearchTree<Self::State>,
    ) -> Vec<Self::State>;
    fn features(
        &self,
        inst: &Self::Instance,
        node: &SearchNode<Self::State>,
        tree: &SearchTree<Self::State>,
    ) -> FeatureVector;

    /// Raw features for a batch of open nodes.
    fn batch_features(
        &self,
        inst: &Self::Instance,
        tree: &SearchTree<Self::State>,
        ids: &[NodeId],
    ) -> Vec<FeatureVector> {
        ids.iter().map(|&id| self.features(inst, tree.node(id), tree)).collect()
    }

    /// Quality of a finished roll-out, lower is better. Used to pick the best
    /// policy on validation instances.
    fn cost(&self, inst: &Self::Instance, trace: &Trace<Self::State>) -> f64;

    /// Breaks ties in [`cost`](Self::cost) between policies; lower is better.
    fn tie_break(&self, _inst: &Self::Instance, _trace: &Trace<Self::State>) -> f64 {
        0.0
    }
}

pub struct Candidate<'a, S> {
    pub node: &'a SearchNode<S>,
    pub features: &'a FeatureVector,
}

/// A node-selection (and optionally pruning) policy.
pub trait Policy<S>: Sync {
    fn tag(&self) -> String;

    /// One score per candidate; the highest is expanded next.
    fn score(&self, batch: &[Candidate<'_, S>]) -> Vec<f64>;

    /// Whether to discard `batch[index]` instead of branching on it.
    fn prune(&self, _batch: &[Candidate<'_, S>], _index: usize) -> bool {
        false
    }

    fn has_pruner(&self) -> bool {
        false
    }
}

impl<S, P: Policy<S> + ?Sized> Policy<S> for &P {
    fn tag(&self) -> String {
        (**self).tag()
    }
    fn score(&self, batch: &[Candidate<'_, S>]) -> Vec<f64> {
        (**self).score(batch)
    }
    fn prune(&self, batch: &[Candidate<'_, S>], index: usize) -> bool {
        (**self).prune(batch, index)
    }
    fn has_pruner(&self) -> bool {
        (**self).has_pruner()
    }
}

/// Index of the highest score; ties go to the smallest node id, NaN ranks last.
pub fn pop_best_index(frontier: &[NodeId], scores: &[f64]) -> Result<usize> {
    if frontier.is_empty() {
        return Err(Error::EmptyFrontier);
    }
    if frontier.len() != scores.len() {
        return Err(Error::DimensionMismatch { expected: frontier.len(), got: scores.len() });
    }
    let key = |s: f64| if s.is_nan() { f64::NEG_INFINITY } else { s };
    let mut best = 0;
    for i in 1..frontier.len() {
        let (a, b) = (key(scores[i]), key(scores[best]));
        if a > b || (a == b && frontier[i] < frontier[best]) {
            best = i;
        }
    }
    Ok(best)
}

pub fn pop_best(frontier: &[NodeId], scores: &[f64]) -> Result<NodeId> {
    pop_best_index(frontier, scores).map(|i| frontier[i])
}

fn candidates<'a, S>(tree: &'a SearchTree<S>, ids: &[NodeId], feats: &'a [FeatureVector]) -> Vec<Candidate<'a, S>> {
    ids.iter()
        .zip(feats)
        .map(|(&id, f)| Candidate { node: tree.node(id), features: f })
        .collect()
}

pub fn run_search<E: Environment, P: Policy<E::State> + ?Sized>(
    env: &E,
    inst: &E::Instance,
    policy: &P,
    budget: &SearchBudget,
    explore: &ExplorationConfig,
    seed: u64,
) -> Result<Trace<E::State>> {
    run_search_with(env, inst, policy, budget, explore, seed, ScoreRefresh::EveryPop)
}

pub fn run_search_with<E: Environment, P: Policy<E::State> + ?Sized>(
    env: &E,
    inst: &E::Instance,
    policy: &P,
    budget: &SearchBudget,
    explore: &ExplorationConfig,
    seed: u64,
    refresh: ScoreRefresh,
) -> Result<Trace<E::State>> {
    explore.validate()?;
    let mut rng = rng::from_seed(seed);
    let noise = if explore.noise_variance > 0.0 {
        Some(Normal::new(0.0, explore.noise_variance.sqrt()).map_err(|e| Error::Invalid(e.to_string()))?)
    } else {
        None
    };
    let root = env.root(inst);
    let root_terminal = env.terminal(inst, &root);
    let mut tree = SearchTree::with_root(root, root_terminal);
    let mut events = Vec::new();

    if refresh == ScoreRefresh::AtInsertion && !tree.frontier.is_empty() {
        let ids = tree.frontier.clone();
        let feats = env.batch_features(inst, &tree, &ids);
        let scores = policy.score(&candidates(&tree, &ids, &feats));
        tree.nodes[0].score_at_insertion = scores[0];
    }

    while !tree.frontier.is_empty()
        && tree.expansions < budget.max_expansions
        && !budget.satisfied(tree.terminals.len())
    {
        let ids = tree.frontier.clone();
        let need_features = refresh == ScoreRefresh::EveryPop || policy.has_pruner();
        let feats = if need_features { env.batch_features(inst, &tree, &ids) } else { Vec::new() };

        let mut scores = match refresh {
            ScoreRefresh::EveryPop => {
                let s = policy.score(&candidates(&tree, &ids, &feats));
                for (&id, &v) in ids.iter().zip(&s) {
                    let node = &mut tree.nodes[id.index()];
                    if node.score_at_insertion.is_nan() {
                        node.score_at_insertion = v;
                    }
                }
                s
            }
            ScoreRefresh::AtInsertion => ids.iter().map(|&id| tree.node(id).score_at_insertion).collect(),
        };

        let chosen = if explore.epsilon > 0.0 && rng.random::<f64>() < explore.epsilon {
            rng.random_range(0..ids.len())
        } else {
            if let Some(noise) = &noise {
                for s in scores.iter_mut() {
                    *s += noise.sample(&mut rng);
                }
            }
            pop_best_index(&ids, &scores)?
        };
        let popped = ids[chosen];
        let pruned = popped != NodeId::ROOT
            && policy.has_pruner()
            && policy.prune(&candidates(&tree, &ids, &feats), chosen);

        tree.take(popped)?;
        let step = tree.expansions - 1;
        let mut children = Vec::new();
        if !pruned {
            let kids = env.children(inst, &tree.node(popped).state, &tree);
            for state in kids {
                let term = env.terminal(inst, &state);
                children.push(tree.insert_child(popped, state, term));
            }
        }

        if refresh == ScoreRefresh::AtInsertion {
            let fresh: Vec<NodeId> = children.iter().copied().filter(|c| !tree.node(*c).is_terminal).collect();
            if !fresh.is_empty() {
                let ids = tree.frontier.clone();
                let feats = env.batch_features(inst, &tree, &ids);
                let scores = policy.score(&candidates(&tree, &ids, &feats));
                for (&id, &v) in ids.iter().zip(&scores) {
                    if fresh.contains(&id) {
                        tree.nodes[id.index()].score_at_insertion = v;
                    }
                }
            }
        }
        events.push(TraceEvent { step, popped, children });
    }

    Ok(Trace {
        instance_id: env.instance_id(inst),
        seed,
        policy_tag: policy.tag(),
        tree,
        events,
    })
}

#[cfg(test)]
pub(crate) mod testenv {
    //! Tiny synthetic environments used across unit tests.
    use super::*;

    /// A complete tree of given branching and depth; leaves listed in
    /// `terminal_leaves` (by path) are terminals with objective equal to their
    /// position in that list.
    pub struct TreeEnv {
        pub branching: u32,
        pub depth: u32,
        pub terminal_paths: Vec<Vec<u32>>,
    }

    impl Environment for TreeEnv {
        type Instance = ();
        type State = Vec<u32>;

        fn instance_id(&self, _: &()) -> String {
            "tree".into()
        }
        fn schema_id(&self) -> &'static str {
            "tree-v1"
        }
        fn feature_dim(&self) -> usize {
            2
        }
        fn root(&self, _: &()) -> Vec<u32> {
            Vec::new()
        }
        fn terminal(&self, _: &(), s: &Vec<u32>) -> Option<f64> {
            self.terminal_paths.iter().position(|p| p == s).map(|i| i as f64)
        }
        fn children(&self, _: &(), s: &Vec<u32>, _: &SearchTree<Vec<u32>>) -> Vec<Vec<u32>> {
            if s.len() as u32 >= self.depth {
                return Vec::new();
            }
            (0..self.branching)
                .map(|b| {
                    let mut c = s.clone();
                    c.push(b);
                    c
                })
                .collect()
        }
        fn features(&self, _: &(), n: &SearchNode<Vec<u32>>, _: &SearchTree<Vec<u32>>) -> FeatureVector {
            let last = n.state.last().copied().unwrap_or(0) as f64;
            FeatureVector::new(vec![n.depth as f64, last])
        }
        fn cost(&self, _: &(), t: &Trace<Vec<u32>>) -> f64 {
            t.expansions() as f64
        }
    }

    /// Scores by a fixed function of the state.
    pub struct FnPolicy<F>(pub F);

    impl<F: Fn(&Vec<u32>) -> f64 + Sync> Policy<Vec<u32>> for FnPolicy<F> {
        fn tag(&self) -> String {
            "fn".into()
        }
        fn score(&self, batch: &[Candidate<'_, Vec<u32>>]) -> Vec<f64> {
            batch.iter().map(|c| (self.0)(&c.node.state)).collect()
        }
    }

    /// Prefers the lexicographically first open path: depth-first on child 0.
    pub fn dfs_left() -> FnPolicy<impl Fn(&Vec<u32>) -> f64 + Sync> {
        FnPolicy(|s: &Vec<u32>| s.len() as f64 * 10.0 - s.last().copied().unwrap_or(0) as f64)
    }
}
