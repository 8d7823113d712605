//! Kruskal mazes searched square by square.
//!
//! A maze of odd size `n` is an `n × n` grid whose cells sit at odd
//! coordinates; Kruskal's algorithm knocks out walls between cells until they
//! form a spanning tree. The search moves between adjacent open squares, so a
//! node's children are its open neighbours other than the square it came
//! from. Start is `(1, 1)`, goal `(n - 2, n - 2)`.

use std::collections::HashSet;
use std::fmt::Write as _;
use std::path::Path;

use rand::seq::SliceRandom;

use crate::policy::FeatureVector;
use crate::search::{Candidate, Environment, Policy, SearchNode, SearchTree, Trace};
use crate::{rng, Error, Result};

pub type Pos = (usize, usize);

pub const WINDOW: usize = 5;
pub const FEATURE_DIM: usize = 3 + WINDOW * WINDOW;
pub const SCHEMA_ID: &str = "maze-v1";

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Maze {
    pub id: String,
    pub size: usize,
    /// Row-major, `true` for walls.
    pub walls: Vec<bool>,
    pub start: Pos,
    pub goal: Pos,
}

impl Maze {
    pub fn is_open(&self, (r, c): Pos) -> bool {
        r < self.size && c < self.size && !self.walls[r * self.size + c]
    }

    /// Open squares 4-adjacent to `p`, in up, left, right, down order.
    pub fn open_neighbors(&self, (r, c): Pos) -> Vec<Pos> {
        let mut out = Vec::with_capacity(4);
        let cand = [
            r.checked_sub(1).map(|r| (r, c)),
            c.checked_sub(1).map(|c| (r, c)),
            Some((r, c + 1)),
            Some((r + 1, c)),
        ];
        for p in cand.into_iter().flatten() {
            if self.is_open(p) {
                out.push(p);
            }
        }
        out
    }

    pub fn open_count(&self) -> usize {
        self.walls.iter().filter(|w| !**w).count()
    }

    pub fn manhattan(&self, (r, c): Pos) -> usize {
        r.abs_diff(self.goal.0) + c.abs_diff(self.goal.1)
    }

    /// Checks shape, endpoints and that the open squares form a tree.
    pub fn validate(&self) -> Result<()> {
        if self.size < 5 || self.size.is_multiple_of(2) {
            return Err(Error::InvalidMazeSize(self.size));
        }
        if self.walls.len() != self.size * self.size {
            return Err(Error::Invalid("wall grid does not match size".into()));
        }
        if self.start == self.goal || !self.is_open(self.start) || !self.is_open(self.goal) {
            return Err(Error::Invalid("start and goal must be distinct open squares".into()));
        }
        let open = self.open_count();
        let mut edges = 0;
        for r in 0..self.size {
            for c in 0..self.size {
                if self.is_open((r, c)) {
                    edges += usize::from(self.is_open((r, c + 1))) + usize::from(self.is_open((r + 1, c)));
                }
            }
        }
        let mut seen = HashSet::from([self.start]);
        let mut stack = vec![self.start];
        while let Some(p) = stack.pop() {
            for q in self.open_neighbors(p) {
                if seen.insert(q) {
                    stack.push(q);
                }
            }
        }
        if seen.len() != open || edges + 1 != open {
            return Err(Error::Invalid("open squares do not form a tree".into()));
        }
        Ok(())
    }

    pub fn to_text(&self) -> String {
        let mut out = String::with_capacity(self.size * (self.size + 1));
        for r in 0..self.size {
            for c in 0..self.size {
                out.push(if (r, c) == self.start {
                    'S'
                } else if (r, c) == self.goal {
                    'G'
                } else if self.walls[r * self.size + c] {
                    '#'
                } else {
                    '.'
                });
            }
            out.push('\n');
        }
        out
    }

    pub fn parse(id: impl Into<String>, text: &str) -> Result<Self> {
        let rows: Vec<&str> = text.lines().map(str::trim_end).filter(|l| !l.is_empty()).collect();
        let size = rows.len();
        let mut walls = Vec::with_capacity(size * size);
        let (mut start, mut goal) = (None, None);
        for (r, row) in rows.iter().enumerate() {
            if row.chars().count() != size {
                return Err(Error::parse(r + 1, format!("expected {size} columns")));
            }
            for (c, ch) in row.chars().enumerate() {
                match ch {
                    '#' => walls.push(true),
                    '.' => walls.push(false),
                    'S' => {
                        walls.push(false);
                        start = Some((r, c));
                    }
                    'G' => {
                        walls.push(false);
                        goal = Some((r, c));
                    }
                    _ => return Err(Error::parse(r + 1, format!("unexpected character {ch:?}"))),
                }
            }
        }
        let start = start.ok_or_else(|| Error::parse(0, "maze has no start"))?;
        let goal = goal.ok_or_else(|| Error::parse(0, "maze has no goal"))?;
        let maze = Maze { id: id.into(), size, walls, start, goal };
        maze.validate()?;
        Ok(maze)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_text()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let id = path.file_stem().map_or("maze".into(), |s| s.to_string_lossy().into_owned());
        Self::parse(id, &text)
    }
}

fn find(parent: &mut [usize], mut x: usize) -> usize {
    while parent[x] != x {
        parent[x] = parent[parent[x]];
        x = parent[x];
    }
    x
}

/// Perfect maze by randomized Kruskal over the cell lattice.
pub fn kruskal_generate(size: usize, seed: u64) -> Result<Maze> {
    if size < 5 || size.is_multiple_of(2) {
        return Err(Error::InvalidMazeSize(size));
    }
    let k = (size - 1) / 2;
    let cell = |i: usize, j: usize| (2 * i + 1, 2 * j + 1);
    let mut walls = vec![true; size * size];
    for i in 0..k {
        for j in 0..k {
            let (r, c) = cell(i, j);
            walls[r * size + c] = false;
        }
    }
    let mut edges = Vec::with_capacity(2 * k * (k - 1));
    for i in 0..k {
        for j in 0..k {
            if j + 1 < k {
                edges.push((i * k + j, i * k + j + 1));
            }
            if i + 1 < k {
                edges.push((i * k + j, (i + 1) * k + j));
            }
        }
    }
    edges.shuffle(&mut rng::from_seed(seed));
    let mut parent: Vec<usize> = (0..k * k).collect();
    for (a, b) in edges {
        let (ra, rb) = (find(&mut parent, a), find(&mut parent, b));
        if ra != rb {
            parent[ra] = rb;
            let (r1, c1) = cell(a / k, a % k);
            let (r2, c2) = cell(b / k, b % k);
            walls[(r1 + r2) / 2 * size + (c1 + c2) / 2] = false;
        }
    }
    Ok(Maze { id: format!("maze{size}-{seed:016x}"), size, walls, start: (1, 1), goal: (size - 2, size - 2) })
}

#[derive(Debug, Clone, PartialEq)]
pub struct MazeSplit {
    pub train: Vec<Maze>,
    pub validation: Vec<Maze>,
    pub test: Vec<Maze>,
}

/// Train / validation / test mazes of one size, each seeded independently
/// from `(seed, size, split, index)`.
pub fn maze_split(size: usize, seed: u64, counts: (usize, usize, usize)) -> Result<MazeSplit> {
    let make = |split: u64, n: usize| -> Result<Vec<Maze>> {
        (0..n).map(|i| kruskal_generate(size, rng::derive(seed, &[size as u64, split, i as u64]))).collect()
    };
    Ok(MazeSplit { train: make(0, counts.0)?, validation: make(1, counts.1)?, test: make(2, counts.2)? })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct MazeState {
    pub pos: Pos,
    pub came_from: Option<Pos>,
}

/// The maze search environment.
#[derive(Debug, Clone, Copy, Default)]
pub struct MazeEnv;

impl MazeEnv {
    pub fn children_of(maze: &Maze, s: &MazeState) -> Vec<MazeState> {
        maze.open_neighbors(s.pos)
            .into_iter()
            .filter(|&p| Some(p) != s.came_from)
            .map(|p| MazeState { pos: p, came_from: Some(s.pos) })
            .collect()
    }

    pub fn feature_vector(maze: &Maze, s: &MazeState, depth: u32) -> FeatureVector {
        let h = maze.manhattan(s.pos) as f64;
        let progress = s.came_from.map_or(0.0, |p| maze.manhattan(p) as f64 - h);
        let mut v = Vec::with_capacity(FEATURE_DIM);
        v.push(h);
        v.push(depth as f64);
        v.push(progress);
        let half = (WINDOW / 2) as isize;
        for dr in -half..=half {
            for dc in -half..=half {
                let (r, c) = (s.pos.0 as isize + dr, s.pos.1 as isize + dc);
                let open = r >= 0 && c >= 0 && maze.is_open((r as usize, c as usize));
                v.push(f64::from(u8::from(open)));
            }
        }
        FeatureVector::new(v)
    }
}

impl Environment for MazeEnv {
    type Instance = Maze;
    type State = MazeState;

    fn instance_id(&self, inst: &Maze) -> String {
        inst.id.clone()
    }

    fn schema_id(&self) -> &'static str {
        SCHEMA_ID
    }

    fn feature_dim(&self) -> usize {
        FEATURE_DIM
    }

    fn root(&self, inst: &Maze) -> MazeState {
        MazeState { pos: inst.start, came_from: None }
    }

    fn terminal(&self, inst: &Maze, s: &MazeState) -> Option<f64> {
        (s.pos == inst.goal).then_some(0.0)
    }

    fn children(&self, inst: &Maze, s: &MazeState, _: &SearchTree<MazeState>) -> Vec<MazeState> {
        Self::children_of(inst, s)
    }

    fn features(&self, inst: &Maze, node: &SearchNode<MazeState>, _: &SearchTree<MazeState>) -> FeatureVector {
        Self::feature_vector(inst, &node.state, node.depth)
    }

    /// Explored squares; a roll-out that never reaches the goal is charged
    /// every open square on top.
    fn cost(&self, inst: &Maze, trace: &Trace<MazeState>) -> f64 {
        let explored = explored_squares(trace) as f64;
        if trace.no_terminal_found() {
            explored + inst.open_count() as f64
        } else {
            explored
        }
    }
}

/// Distinct expanded squares, plus the goal when it was reached.
pub fn explored_squares(trace: &Trace<MazeState>) -> usize {
    let expanded: HashSet<Pos> = trace.events.iter().map(|e| trace.tree.node(e.popped).state.pos).collect();
    expanded.len() + usize::from(!trace.no_terminal_found())
}

/// A* priority `-(g + h)` with Manhattan `h`.
pub fn manhattan_expert_score(maze: &Maze, pos: Pos, depth: u32) -> f64 {
    -(depth as f64 + maze.manhattan(pos) as f64)
}

/// The A* expert as a search policy.
pub struct ManhattanExpert<'a> {
    pub maze: &'a Maze,
}

impl Policy<MazeState> for ManhattanExpert<'_> {
    fn tag(&self) -> String {
        "manhattan-astar".into()
    }

    fn score(&self, batch: &[Candidate<'_, MazeState>]) -> Vec<f64> {
        batch.iter().map(|c| manhattan_expert_score(self.maze, c.node.state.pos, c.node.depth)).collect()
    }
}

/// Expert that reads the maze from each candidate's features, so one value
/// serves every instance: `-(h + g)` from the first two raw features.
#[derive(Debug, Clone, Copy, Default)]
pub struct FeatureManhattan;

impl Policy<MazeState> for FeatureManhattan {
    fn tag(&self) -> String {
        "manhattan-astar".into()
    }

    fn score(&self, batch: &[Candidate<'_, MazeState>]) -> Vec<f64> {
        batch.iter().map(|c| -(c.features.values[0] + c.features.values[1])).collect()
    }
}

/// Text picture of a maze with explored squares `o` and a path `*`.
pub fn render(maze: &Maze, explored: &[Pos], path: &[Pos]) -> String {
    let explored: HashSet<Pos> = explored.iter().copied().collect();
    let path: HashSet<Pos> = path.iter().copied().collect();
    let mut out = String::new();
    for r in 0..maze.size {
        for c in 0..maze.size {
            let p = (r, c);
            let ch = if p == maze.start {
                'S'
            } else if p == maze.goal {
                'G'
            } else if !maze.is_open(p) {
                '#'
            } else if path.contains(&p) {
                '*'
            } else if explored.contains(&p) {
                'o'
            } else {
                '.'
            };
            out.push(ch);
        }
        out.push('\n');
    }
    out
}

/// Summary line of a roll-out, for logs.
pub fn describe(trace: &Trace<MazeState>) -> String {
    let mut s = String::new();
    let _ = write!(s, "{} explored {} expansions {}", trace.instance_id, explored_squares(trace), trace.expansions());
    s
}
