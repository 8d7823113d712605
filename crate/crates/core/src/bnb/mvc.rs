//! Graphs, minimum vertex cover and its LP relaxation.

use std::fmt::Write as _;
use std::path::Path;

use rand::Rng as _;

use super::simplex::{LinearProgram, LpSolution, LpStatus, Sense, TOL};
use crate::{rng, Error, Result};

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Graph {
    pub n: usize,
    /// Sorted, each pair `(u, v)` with `u < v`.
    pub edges: Vec<(usize, usize)>,
    adj: Vec<Vec<usize>>,
}

impl Graph {
    pub fn new(n: usize, edges: impl IntoIterator<Item = (usize, usize)>) -> Result<Self> {
        let mut list = Vec::new();
        for (u, v) in edges {
            if u == v {
                return Err(Error::Invalid(format!("self-loop on {u}")));
            }
            if u >= n || v >= n {
                return Err(Error::Invalid(format!("edge ({u}, {v}) out of range for {n} nodes")));
            }
            list.push((u.min(v), u.max(v)));
        }
        list.sort_unstable();
        let before = list.len();
        list.dedup();
        if list.len() != before {
            return Err(Error::Invalid("duplicate edge".into()));
        }
        let mut adj = vec![Vec::new(); n];
        for &(u, v) in &list {
            adj[u].push(v);
            adj[v].push(u);
        }
        Ok(Graph { n, edges: list, adj })
    }

    pub fn neighbors(&self, v: usize) -> &[usize] {
        &self.adj[v]
    }

    pub fn m(&self) -> usize {
        self.edges.len()
    }

    pub fn is_cover(&self, in_cover: impl Fn(usize) -> bool) -> bool {
        self.edges.iter().all(|&(u, v)| in_cover(u) || in_cover(v))
    }

    pub fn to_text(&self) -> String {
        let mut out = format!("{} {}\n", self.n, self.m());
        for (u, v) in &self.edges {
            let _ = writeln!(out, "{u} {v}");
        }
        out
    }

    pub fn parse(text: &str) -> Result<Self> {
        let mut lines = text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty());
        let pair = |(i, l): (usize, &str)| -> Result<(usize, usize)> {
            let mut it = l.split_whitespace().map(|t| t.parse::<usize>());
            match (it.next(), it.next(), it.next()) {
                (Some(Ok(a)), Some(Ok(b)), None) => Ok((a, b)),
                _ => Err(Error::parse(i + 1, "expected two non-negative integers")),
            }
        };
        let (n, m) = pair(lines.next().ok_or_else(|| Error::parse(1, "empty graph file"))?)?;
        let edges: Vec<(usize, usize)> = lines.map(pair).collect::<Result<_>>()?;
        if edges.len() != m {
            return Err(Error::parse(0, format!("header says {m} edges, found {}", edges.len())));
        }
        Graph::new(n, edges)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_text()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::parse(&std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?)
    }
}

/// G(n, p): every pair independently with probability `p`.
pub fn erdos_renyi(n: usize, p: f64, seed: u64) -> Result<Graph> {
    if n == 0 || !(0.0..=1.0).contains(&p) {
        return Err(Error::Invalid(format!("need n >= 1 and p in [0, 1], got n={n} p={p}")));
    }
    let mut r = rng::from_seed(seed);
    let mut edges = Vec::new();
    for u in 0..n {
        for v in u + 1..n {
            if r.random::<f64>() < p {
                edges.push((u, v));
            }
        }
    }
    Graph::new(n, edges)
}

/// Edge probability giving mean degree `degree` on `n` nodes.
pub fn edge_probability(n: usize, degree: f64) -> f64 {
    if n <= 1 {
        0.0
    } else {
        (degree / (n - 1) as f64).clamp(0.0, 1.0)
    }
}

/// The MVC integer program `min Σx` with `x_u + x_v >= 1` per edge, relaxed
/// to `0 <= x <= 1`, with some variables pinned.
pub fn relaxation(g: &Graph, fixed: &[Option<bool>]) -> LinearProgram {
    let mut lp = LinearProgram::new(vec![1.0; g.n]);
    for &(u, v) in &g.edges {
        let mut row = vec![0.0; g.n];
        row[u] = 1.0;
        row[v] = 1.0;
        lp.rows.push(super::simplex::Row { coef: row, sense: Sense::Ge, rhs: 1.0 });
    }
    for i in 0..g.n {
        let mut row = vec![0.0; g.n];
        row[i] = 1.0;
        let (sense, rhs) = match fixed.get(i).copied().flatten() {
            Some(b) => (Sense::Eq, f64::from(u8::from(b))),
            None => (Sense::Le, 1.0),
        };
        lp.rows.push(super::simplex::Row { coef: row, sense, rhs });
    }
    lp
}

/// Human-readable dump of the relaxation rows.
pub fn dump_ilp(g: &Graph, fixed: &[Option<bool>]) -> String {
    let mut out = String::from("minimize");
    for i in 0..g.n {
        let _ = write!(out, " + x{i}");
    }
    out.push_str("\nsubject to\n");
    for &(u, v) in &g.edges {
        let _ = writeln!(out, "  x{u} + x{v} >= 1");
    }
    for (i, f) in fixed.iter().enumerate() {
        if let Some(b) = f {
            let _ = writeln!(out, "  x{i} = {}", u8::from(*b));
        }
    }
    let _ = writeln!(out, "binary x0..x{}", g.n.saturating_sub(1));
    out
}

/// Relaxation at a node with `fixed` variables.
///
/// Fixings are propagated first (a vertex pinned to 0 forces its neighbours
/// to 1), covered edges drop out, and the residual covering LP is solved
/// through its dual, a fractional matching `max Σy, Σ_{e∋v} y_e <= 1`, whose
/// slack basis is feasible from the start. The cover values are the duals
/// of the matching rows. The upper bounds `x <= 1` are implied at the
/// optimum of a covering LP and are not needed.
pub fn node_relaxation(g: &Graph, fixed: &[Option<bool>]) -> Result<LpSolution> {
    let n = g.n;
    let mut val: Vec<Option<bool>> = fixed.to_vec();
    val.resize(n, None);
    let mut queue: Vec<usize> = (0..n).filter(|&v| val[v] == Some(false)).collect();
    while let Some(v) = queue.pop() {
        for &u in g.neighbors(v) {
            match val[u] {
                Some(false) => return Ok(LpSolution::infeasible(n, 0)),
                Some(true) => {}
                None => val[u] = Some(true),
            }
        }
    }
    let free: Vec<usize> = (0..n).filter(|&v| val[v].is_none()).collect();
    let mut slot = vec![usize::MAX; n];
    for (k, &v) in free.iter().enumerate() {
        slot[v] = k;
    }
    let residual: Vec<(usize, usize)> =
        g.edges.iter().copied().filter(|&(u, v)| val[u].is_none() && val[v].is_none()).collect();
    let mut x: Vec<f64> = val.iter().map(|b| if *b == Some(true) { 1.0 } else { 0.0 }).collect();
    if !residual.is_empty() {
        // rows: free vertices; columns: residual edges
        let mut lp = LinearProgram::new(vec![-1.0; residual.len()]);
        for &v in &free {
            let coef = residual.iter().map(|&(a, b)| if a == v || b == v { 1.0 } else { 0.0 }).collect();
            lp.rows.push(super::simplex::Row { coef, sense: Sense::Le, rhs: 1.0 });
        }
        let dual = lp.solve()?;
        debug_assert_eq!(dual.status, LpStatus::Optimal);
        for &v in &free {
            // min form: duals are <= 0; the cover value is their negation
            let y = -dual.duals[slot[v]];
            x[v] = if y.abs() < TOL { 0.0 } else if (y - 1.0).abs() < TOL { 1.0 } else { y };
        }
    }
    let value = x.iter().sum();
    Ok(LpSolution { status: LpStatus::Optimal, value, x, duals: Vec::new() })
}

/// Exact minimum cover by checking every subset; for oracles on small graphs.
pub fn brute_force_mvc(g: &Graph) -> Result<usize> {
    brute_force_mvc_fixed(g, &vec![None; g.n]).map(|v| v.expect("the full vertex set is a cover"))
}

/// Minimum cover consistent with `fixed`, or `None` if there is none.
pub fn brute_force_mvc_fixed(g: &Graph, fixed: &[Option<bool>]) -> Result<Option<usize>> {
    if g.n > 26 {
        return Err(Error::TooLarge(g.n));
    }
    let adj: Vec<u32> = (0..g.n).map(|v| g.neighbors(v).iter().fold(0u32, |m, &u| m | 1 << u)).collect();
    let (must, must_not) = fixed.iter().enumerate().fold((0u32, 0u32), |(a, b), (i, f)| match f {
        Some(true) => (a | 1 << i, b),
        Some(false) => (a, b | 1 << i),
        None => (a, b),
    });
    let mut best: Option<usize> = None;
    for mask in 0u32..(1u32 << g.n) {
        if mask & must != must || mask & must_not != 0 {
            continue;
        }
        let size = mask.count_ones() as usize;
        if best.is_some_and(|b| size >= b) {
            continue;
        }
        if (0..g.n).all(|v| mask >> v & 1 == 1 || adj[v] & !mask == 0) {
            best = Some(size);
        }
    }
    Ok(best)
}

/// Exact minimum cover for graphs up to 64 nodes by branch and reduce:
/// degree-0/1 reductions, max-degree branching (take `v` or all of `N(v)`)
/// and a greedy matching lower bound.
pub fn exact_mvc(g: &Graph) -> Result<usize> {
    if g.n > 64 {
        return Err(Error::TooLarge(g.n));
    }
    let adj: Vec<u64> = (0..g.n).map(|v| g.neighbors(v).iter().fold(0u64, |m, &u| m | 1 << u)).collect();
    let all = if g.n == 64 { u64::MAX } else { (1u64 << g.n) - 1 };
    let mut best = g.n;
    search(&adj, all, 0, &mut best);
    Ok(best)
}

fn matching_bound(adj: &[u64], alive: u64) -> usize {
    let mut left = alive;
    let mut size = 0;
    while left != 0 {
        let v = left.trailing_zeros() as usize;
        left &= !(1 << v);
        let nb = adj[v] & left;
        if nb != 0 {
            let u = nb.trailing_zeros() as usize;
            left &= !(1 << u);
            size += 1;
        }
    }
    size
}

fn search(adj: &[u64], mut alive: u64, mut taken: usize, best: &mut usize) {
    // reductions
    loop {
        let mut changed = false;
        let mut scan = alive;
        while scan != 0 {
            let v = scan.trailing_zeros() as usize;
            scan &= scan - 1;
            if alive >> v & 1 == 0 {
                continue;
            }
            let nb = adj[v] & alive;
            match nb.count_ones() {
                0 => {
                    alive &= !(1 << v);
                    changed = true;
                }
                1 => {
                    // take the single neighbour
                    alive &= !(1 << v) & !nb;
                    taken += 1;
                    changed = true;
                }
                _ => {}
            }
        }
        if !changed {
            break;
        }
    }
    if taken >= *best {
        return;
    }
    if alive == 0 {
        *best = taken;
        return;
    }
    if taken + matching_bound(adj, alive) >= *best {
        return;
    }
    let mut v = 0;
    let mut deg = 0;
    let mut scan = alive;
    while scan != 0 {
        let u = scan.trailing_zeros() as usize;
        scan &= scan - 1;
        let d = (adj[u] & alive).count_ones();
        if d > deg {
            deg = d;
            v = u;
        }
    }
    let nb = adj[v] & alive;
    search(adj, alive & !(1 << v), taken + 1, best);
    search(adj, alive & !(1 << v) & !nb, taken + nb.count_ones() as usize, best);
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn triangle() -> Graph {
        Graph::new(3, [(0, 1), (1, 2), (0, 2)]).unwrap()
    }

    #[test]
    fn er_examples() {
        assert_eq!(erdos_renyi(10, 0.0, 1).unwrap().m(), 0);
        assert_eq!(erdos_renyi(4, 1.0, 1).unwrap().m(), 6);
        assert_eq!(erdos_renyi(20, 0.3, 5).unwrap(), erdos_renyi(20, 0.3, 5).unwrap());
        assert!(erdos_renyi(0, 0.5, 0).is_err());
        assert!(erdos_renyi(5, 1.5, 0).is_err());
    }

    #[test]
    fn er_edge_count_statistics() {
        let seeds = 1000;
        let mean = (0..seeds).map(|s| erdos_renyi(50, 0.1, s).unwrap().m() as f64).sum::<f64>() / seeds as f64;
        // binomial(1225, 0.1): sd of the mean of 1000 draws
        let sd = (1225.0 * 0.1 * 0.9 / seeds as f64).sqrt();
        assert!((mean - 122.5).abs() <= 3.0 * sd, "mean {mean}");
    }

    #[test]
    fn graph_validation_and_file() {
        assert!(Graph::new(3, [(1, 1)]).is_err());
        assert!(Graph::new(3, [(0, 1), (1, 0)]).is_err());
        assert!(Graph::new(3, [(0, 3)]).is_err());
        let g = erdos_renyi(12, 0.3, 2).unwrap();
        assert_eq!(Graph::parse(&g.to_text()).unwrap(), g);
        assert!(Graph::parse("3 2\n0 1\n").is_err());
        assert!(Graph::parse("3 1\n0 x\n").is_err());
    }

    #[test]
    fn brute_force_examples() {
        assert_eq!(brute_force_mvc(&Graph::new(2, [(0, 1)]).unwrap()).unwrap(), 1);
        assert_eq!(brute_force_mvc(&triangle()).unwrap(), 2);
        assert_eq!(brute_force_mvc(&Graph::new(5, [(0, 1), (0, 2), (0, 3), (0, 4)]).unwrap()).unwrap(), 1);
        assert!(matches!(brute_force_mvc(&Graph::new(27, []).unwrap()), Err(Error::TooLarge(27))));
    }

    #[test]
    fn exact_matches_brute_force() {
        for seed in 0..150 {
            let n = 4 + (seed % 14) as usize;
            let g = erdos_renyi(n, 0.1 + 0.05 * (seed % 8) as f64, seed).unwrap();
            assert_eq!(exact_mvc(&g).unwrap(), brute_force_mvc(&g).unwrap(), "seed {seed}");
        }
    }

    #[test]
    fn relaxation_examples() {
        let edge = Graph::new(2, [(0, 1)]).unwrap();
        assert!((node_relaxation(&edge, &[None, None]).unwrap().value - 1.0).abs() < 1e-9);
        let t = node_relaxation(&triangle(), &[None; 3]).unwrap();
        assert!((t.value - 1.5).abs() < 1e-9);
        // pinning a vertex to 0 forces both neighbours
        let t = node_relaxation(&triangle(), &[Some(false), None, None]).unwrap();
        assert_eq!(t.x, vec![0.0, 1.0, 1.0]);
        let t = node_relaxation(&triangle(), &[Some(false), Some(false), None]).unwrap();
        assert_eq!(t.status, LpStatus::Infeasible);
    }

    /// LP optimum over the half-integral grid; valid because every vertex
    /// of the cover polytope is half-integral.
    fn grid_oracle(g: &Graph, fixed: &[Option<bool>]) -> Option<f64> {
        let mut best: Option<f64> = None;
        let total = 3usize.pow(g.n as u32);
        for code in 0..total {
            let mut c = code;
            let x: Vec<f64> = (0..g.n)
                .map(|_| {
                    let d = c % 3;
                    c /= 3;
                    d as f64 / 2.0
                })
                .collect();
            let ok_fix = fixed.iter().zip(&x).all(|(f, &v)| f.is_none_or(|b| v == f64::from(u8::from(b))));
            if ok_fix && g.edges.iter().all(|&(u, v)| x[u] + x[v] >= 1.0) {
                let s: f64 = x.iter().sum();
                best = Some(best.map_or(s, |b: f64| b.min(s)));
            }
        }
        best
    }

    /// Brute-force vertex enumeration: every choice of `n` tight constraints
    /// from the full row set, solved by Gaussian elimination.
    fn vertex_oracle(lp: &LinearProgram) -> Option<f64> {
        let n = lp.c.len();
        let mut rows: Vec<(Vec<f64>, f64)> = lp.rows.iter().map(|r| (r.coef.clone(), r.rhs)).collect();
        for i in 0..n {
            let mut e = vec![0.0; n];
            e[i] = 1.0;
            rows.push((e, 0.0));
        }
        let m = rows.len();
        let mut best: Option<f64> = None;
        let mut pick = (0..n).collect::<Vec<_>>();
        loop {
            let mut a: Vec<Vec<f64>> = pick.iter().map(|&i| {
                let mut r = rows[i].0.clone();
                r.push(rows[i].1);
                r
            }).collect();
            let mut ok = true;
            for col in 0..n {
                let Some(p) = (col..n).max_by(|&x, &y| a[x][col].abs().total_cmp(&a[y][col].abs())) else { ok = false; break };
                if a[p][col].abs() < 1e-12 {
                    ok = false;
                    break;
                }
                a.swap(col, p);
                for r in 0..n {
                    if r != col {
                        let f = a[r][col] / a[col][col];
                        for k in col..=n {
                            a[r][k] -= f * a[col][k];
                        }
                    }
                }
            }
            if ok {
                let x: Vec<f64> = (0..n).map(|i| a[i][n] / a[i][i]).collect();
                if lp.violation(&x) < 1e-9 {
                    let v: f64 = lp.c.iter().zip(&x).map(|(c, v)| c * v).sum();
                    best = Some(best.map_or(v, |b: f64| b.min(v)));
                }
            }
            // next combination
            let mut i = n;
            loop {
                if i == 0 {
                    return best;
                }
                i -= 1;
                if pick[i] < m - n + i {
                    pick[i] += 1;
                    for j in i + 1..n {
                        pick[j] = pick[j - 1] + 1;
                    }
                    break;
                }
            }
        }
    }

    #[test]
    fn simplex_matches_vertex_enumeration() {
        for seed in 0..50 {
            let n = 2 + (seed % 5) as usize;
            let g = erdos_renyi(n, 0.6, 100 + seed).unwrap();
            let fixed = vec![None; n];
            let lp = relaxation(&g, &fixed);
            let s = lp.solve().unwrap();
            let v = vertex_oracle(&lp).unwrap();
            assert!((s.value - v).abs() < 1e-6, "seed {seed}: {} vs {v}", s.value);
        }
    }

    #[test]
    fn both_lp_routes_match_grid_oracle() {
        let mut r = rng::from_seed(3);
        for seed in 0..50 {
            let n = 3 + (seed % 8) as usize;
            let g = erdos_renyi(n, 0.2 + 0.1 * (seed % 6) as f64, seed).unwrap();
            let fixed: Vec<Option<bool>> = (0..n)
                .map(|_| match r.random_range(0..6) {
                    0 => Some(false),
                    1 => Some(true),
                    _ => None,
                })
                .collect();
            let oracle = grid_oracle(&g, &fixed);
            let primal = relaxation(&g, &fixed).solve().unwrap();
            let fast = node_relaxation(&g, &fixed).unwrap();
            match oracle {
                None => {
                    assert_eq!(primal.status, LpStatus::Infeasible);
                    assert_eq!(fast.status, LpStatus::Infeasible);
                }
                Some(v) => {
                    assert!((primal.value - v).abs() < 1e-6, "seed {seed}");
                    assert!((fast.value - v).abs() < 1e-6, "seed {seed}");
                    assert!(relaxation(&g, &fixed).violation(&fast.x) < 1e-7);
                }
            }
        }
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(64))]
        #[test]
        fn relaxation_is_half_integral(seed in any::<u64>(), n in 2usize..30, p in 0.05f64..0.6) {
            let g = erdos_renyi(n, p, seed).unwrap();
            let s = node_relaxation(&g, &vec![None; n]).unwrap();
            for v in &s.x {
                let d = (v * 2.0 - (v * 2.0).round()).abs();
                prop_assert!(d < 1e-7, "{v}");
            }
            if n <= 12 {
                let p = relaxation(&g, &vec![None; n]).solve().unwrap();
                prop_assert!((p.value - s.value).abs() < 1e-6);
                for v in &p.x {
                    prop_assert!((v * 2.0 - (v * 2.0).round()).abs() < 1e-7);
                }
            }
        }
    }

    #[test]
    fn dump_lists_rows() {
        let d = dump_ilp(&triangle(), &[Some(true), None, None]);
        assert!(d.contains("x0 + x1 >= 1"));
        assert!(d.contains("x0 = 1"));
    }
}
