//! Browser bindings for the demo page in `www/`: watch a maze search, sample
//! biased-walk hitting times, and run a small branch-and-bound.
//!
//! Each binding wraps a plain function that returns `retro_core::Result`, so
//! the logic is testable natively.

use std::cell::OnceCell;

use retro_core::bnb::{self, BestBound, BnbEnv, BnbInstance, BnbState};
use retro_core::harness::{self, EnvKind, ExperimentConfig};
use retro_core::maze::{self, FeatureManhattan, MazeEnv};
use retro_core::policy::Model;
use retro_core::retro::ExplorationConfig;
use retro_core::search::{run_search, Candidate, NodeId, Policy, SearchBudget, StopMode, Trace};
use retro_core::theory::{self, WalkConfig};
use retro_core::{Error, Result};
use wasm_bindgen::prelude::*;

fn js(e: Error) -> JsError {
    JsError::new(&e.to_string())
}

// -------------------------------------------------------------------- maze

#[wasm_bindgen]
pub struct MazeRun {
    size: usize,
    walls: Vec<u8>,
    expanded: Vec<u32>,
    path: Vec<u32>,
    explored: u32,
    found: bool,
}

#[wasm_bindgen]
impl MazeRun {
    #[wasm_bindgen(getter)]
    pub fn size(&self) -> usize {
        self.size
    }

    /// Row-major, 1 for wall.
    pub fn walls(&self) -> Vec<u8> {
        self.walls.clone()
    }

    /// Cell indices in the order they were expanded.
    pub fn expanded(&self) -> Vec<u32> {
        self.expanded.clone()
    }

    /// Cell indices from start to goal; empty if the goal was not reached.
    pub fn path(&self) -> Vec<u32> {
        self.path.clone()
    }

    #[wasm_bindgen(getter)]
    pub fn explored(&self) -> u32 {
        self.explored
    }

    #[wasm_bindgen(getter)]
    pub fn found(&self) -> bool {
        self.found
    }
}

thread_local! {
    static LEARNED: OnceCell<Model> = const { OnceCell::new() };
}

/// Ranker fitted to A* demonstrations on sixteen 11x11 mazes.
fn learned_maze_model() -> Result<Model> {
    if let Some(m) = LEARNED.with(|c| c.get().cloned()) {
        return Ok(m);
    }
    let mut cfg = ExperimentConfig::defaults(EnvKind::Maze);
    cfg.curriculum.sizes = vec![11];
    cfg.instances.train = 16;
    cfg.instances.validation = 0;
    cfg.instances.test = 1;
    let bank = harness::generate_bank::<MazeEnv>(&cfg)?;
    let (model, _) = harness::base_model::<MazeEnv>(&cfg, &bank)?;
    LEARNED.with(|c| {
        let _ = c.set(model.clone());
    });
    Ok(model)
}

pub fn run_maze(size: usize, seed: u64, policy: &str) -> Result<MazeRun> {
    let m = maze::kruskal_generate(size, seed)?;
    let budget = SearchBudget::new(100_000, StopMode::FirstTerminal)?;
    let none = ExplorationConfig::none();
    let trace = match policy {
        "astar" => run_search(&MazeEnv, &m, &FeatureManhattan, &budget, &none, seed)?,
        "learned" => {
            let model = learned_maze_model()?;
            run_search(&MazeEnv, &m, model.for_rollout(seed), &budget, &none, seed)?
        }
        other => return Err(Error::Invalid(format!("unknown maze policy {other:?}"))),
    };
    let cell = |p: maze::Pos| (p.0 * size + p.1) as u32;
    let expanded = trace.events.iter().map(|e| cell(trace.tree.node(e.popped).state.pos)).collect();
    let path = match trace.tree.terminals().first() {
        Some(&t) => trace.tree.path_from_root(t).iter().map(|&id| cell(trace.tree.node(id).state.pos)).collect(),
        None => Vec::new(),
    };
    Ok(MazeRun {
        size,
        walls: m.walls.iter().map(|&w| u8::from(w)).collect(),
        expanded,
        path,
        explored: maze::explored_squares(&trace) as u32,
        found: !trace.no_terminal_found(),
    })
}

/// Searches a fresh `size` x `size` maze with `"astar"` or `"learned"`.
#[wasm_bindgen(js_name = mazeSearch)]
pub fn maze_search(size: usize, seed: u32, policy: &str) -> Result<MazeRun, JsError> {
    run_maze(size, u64::from(seed), policy).map_err(js)
}

// -------------------------------------------------------------- hitting time

#[wasm_bindgen]
pub struct HittingRun {
    mean: f64,
    expected: f64,
    bin_width: u32,
    start: u32,
    histogram: Vec<u32>,
    tail: Vec<f64>,
    bound: Vec<f64>,
}

#[wasm_bindgen]
impl HittingRun {
    #[wasm_bindgen(getter)]
    pub fn mean(&self) -> f64 {
        self.mean
    }

    #[wasm_bindgen(getter)]
    pub fn expected(&self) -> f64 {
        self.expected
    }

    /// Left edge of the first bin.
    #[wasm_bindgen(getter)]
    pub fn start(&self) -> u32 {
        self.start
    }

    #[wasm_bindgen(js_name = binWidth, getter)]
    pub fn bin_width(&self) -> u32 {
        self.bin_width
    }

    /// Counts per bin; the last bin also holds everything beyond it.
    pub fn histogram(&self) -> Vec<u32> {
        self.histogram.clone()
    }

    /// Empirical `P[T >= aN]` for a = 2, 4, 6, 8.
    pub fn tail(&self) -> Vec<f64> {
        self.tail.clone()
    }

    /// The matching bound values.
    pub fn bound(&self) -> Vec<f64> {
        self.bound.clone()
    }
}

pub fn run_hitting(epsilon: f64, target: u64, trials: u64, seed: u64, bins: usize) -> Result<HittingRun> {
    let cfg = WalkConfig::new(epsilon, target, trials, seed);
    let times = theory::sample_hitting_times(&cfg)?;
    let expected = theory::expected_hitting_time(epsilon, target)?;
    let bins = bins.max(1);
    // cover up to four times the mean; the last bin collects the rest
    let span = ((4.0 * expected) as u64).saturating_sub(target).max(bins as u64);
    let width = span.div_ceil(bins as u64);
    let mut histogram = vec![0u32; bins];
    for &t in &times {
        histogram[(((t - target) / width) as usize).min(bins - 1)] += 1;
    }
    let n = times.len() as f64;
    let tail = theory::TAIL_ALPHAS
        .iter()
        .map(|a| times.iter().filter(|&&t| t as f64 >= a * target as f64).count() as f64 / n)
        .collect();
    Ok(HittingRun {
        mean: times.iter().sum::<u64>() as f64 / n,
        expected,
        bin_width: width as u32,
        start: target as u32,
        histogram,
        tail,
        bound: theory::TAIL_ALPHAS.iter().map(|&a| theory::tail_bound(epsilon, a)).collect(),
    })
}

/// Hitting times of a walk that steps back with probability `epsilon`.
#[wasm_bindgen(js_name = hittingTime)]
pub fn hitting_time(epsilon: f64, target: u32, trials: u32, seed: u32, bins: u32) -> Result<HittingRun, JsError> {
    run_hitting(epsilon, u64::from(target), u64::from(trials), u64::from(seed), bins as usize).map_err(js)
}

// --------------------------------------------------------- branch and bound

#[wasm_bindgen]
pub struct BnbRun {
    n: usize,
    edges: Vec<u32>,
    optimum: u32,
    incumbent: Vec<f64>,
    lower: Vec<f64>,
    cover: Vec<u8>,
}

#[wasm_bindgen]
impl BnbRun {
    #[wasm_bindgen(getter)]
    pub fn n(&self) -> usize {
        self.n
    }

    /// Flattened `u, v` pairs.
    pub fn edges(&self) -> Vec<u32> {
        self.edges.clone()
    }

    #[wasm_bindgen(getter)]
    pub fn optimum(&self) -> u32 {
        self.optimum
    }

    /// Best cover size after each expansion (NaN before the first).
    pub fn incumbent(&self) -> Vec<f64> {
        self.incumbent.clone()
    }

    /// Smallest open LP bound after each expansion (NaN once none is open).
    pub fn lower(&self) -> Vec<f64> {
        self.lower.clone()
    }

    /// 1 for vertices in the best cover found.
    pub fn cover(&self) -> Vec<u8> {
        self.cover.clone()
    }
}

/// Deepest node first, newest among equals.
struct DepthFirst;

impl Policy<BnbState> for DepthFirst {
    fn tag(&self) -> String {
        "depth-first".into()
    }

    fn score(&self, batch: &[Candidate<'_, BnbState>]) -> Vec<f64> {
        batch.iter().map(|c| c.node.depth as f64 + c.node.id.0 as f64 * 1e-9).collect()
    }
}

/// Incumbent and global lower bound after every expansion of a trace.
fn curves(trace: &Trace<BnbState>) -> (Vec<f64>, Vec<f64>) {
    let tree = &trace.tree;
    let mut open = vec![NodeId::ROOT];
    let mut best = f64::NAN;
    let (mut inc, mut low) = (Vec::new(), Vec::new());
    for e in &trace.events {
        open.retain(|&id| id != e.popped);
        for &c in &e.children {
            let node = tree.node(c);
            match node.objective {
                Some(v) if best.is_nan() || v < best => best = v,
                Some(_) => {}
                None => open.push(c),
            }
        }
        inc.push(best);
        low.push(open.iter().map(|&id| tree.node(id).state.bound()).fold(f64::NAN, f64::min));
    }
    (inc, low)
}

pub fn run_bnb(n: usize, degree: f64, seed: u64, budget: u64, policy: &str) -> Result<BnbRun> {
    let g = bnb::erdos_renyi(n, bnb::edge_probability(n, degree), seed)?;
    let inst = BnbInstance::new("demo", g).solved()?;
    let budget = SearchBudget::new(budget, StopMode::ExhaustBudget)?;
    let none = ExplorationConfig::none();
    let trace = match policy {
        "best-bound" => run_search(&BnbEnv, &inst, &BestBound, &budget, &none, seed)?,
        "depth-first" => run_search(&BnbEnv, &inst, &DepthFirst, &budget, &none, seed)?,
        other => return Err(Error::Invalid(format!("unknown branch-and-bound policy {other:?}"))),
    };
    let (incumbent, lower) = curves(&trace);
    let cover = match trace.tree.incumbent_node() {
        Some(id) => trace.tree.node(id).state.lp.x.iter().map(|&x| u8::from(x > 0.5)).collect(),
        None => vec![0; n],
    };
    Ok(BnbRun {
        n,
        edges: inst.graph.edges.iter().flat_map(|&(u, v)| [u as u32, v as u32]).collect(),
        optimum: inst.optimum.unwrap_or(0) as u32,
        incumbent,
        lower,
        cover,
    })
}

/// Minimum vertex cover of a random graph by branch-and-bound with
/// `"best-bound"` or `"depth-first"` node selection.
#[wasm_bindgen(js_name = smallBnb)]
pub fn small_bnb(n: usize, degree: f64, seed: u32, budget: u32, policy: &str) -> Result<BnbRun, JsError> {
    run_bnb(n, degree, u64::from(seed), u64::from(budget), policy).map_err(js)
}
