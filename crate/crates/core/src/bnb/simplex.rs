//! Dense two-phase primal simplex with Bland's rule.
//!
//! Solves `min c·x` subject to linear rows and `x >= 0`. Small and exact
//! enough for the relaxations branch-and-bound needs; no sparse or revised
//! forms.

use crate::{Error, Result};

pub const TOL: f64 = 1e-7;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Sense {
    Le,
    Ge,
    Eq,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Row {
    pub coef: Vec<f64>,
    pub sense: Sense,
    pub rhs: f64,
}

/// `min c·x` over `x >= 0` and `rows`.
#[derive(Debug, Clone, PartialEq)]
pub struct LinearProgram {
    pub c: Vec<f64>,
    pub rows: Vec<Row>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LpStatus {
    Optimal,
    Infeasible,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LpSolution {
    pub status: LpStatus,
    pub value: f64,
    pub x: Vec<f64>,
    /// Dual value of each row, in the row's original orientation.
    pub duals: Vec<f64>,
}

impl LpSolution {
    pub fn infeasible(n: usize, m: usize) -> Self {
        LpSolution { status: LpStatus::Infeasible, value: f64::INFINITY, x: vec![0.0; n], duals: vec![0.0; m] }
    }

    pub fn is_optimal(&self) -> bool {
        self.status == LpStatus::Optimal
    }
}

impl LinearProgram {
    pub fn new(c: Vec<f64>) -> Self {
        LinearProgram { c, rows: Vec::new() }
    }

    pub fn row(mut self, coef: Vec<f64>, sense: Sense, rhs: f64) -> Self {
        self.rows.push(Row { coef, sense, rhs });
        self
    }

    /// Largest violation of any row or sign constraint by `x`.
    pub fn violation(&self, x: &[f64]) -> f64 {
        let mut worst = x.iter().map(|&v| (-v).max(0.0)).fold(0.0, f64::max);
        for r in &self.rows {
            let lhs: f64 = r.coef.iter().zip(x).map(|(a, b)| a * b).sum();
            let v = match r.sense {
                Sense::Le => lhs - r.rhs,
                Sense::Ge => r.rhs - lhs,
                Sense::Eq => (lhs - r.rhs).abs(),
            };
            worst = worst.max(v);
        }
        worst
    }

    pub fn solve(&self) -> Result<LpSolution> {
        Tableau::build(self)?.run(self)
    }
}

struct Tableau {
    /// `m` constraint rows of width `cols + 1`, rhs last.
    a: Vec<Vec<f64>>,
    basis: Vec<usize>,
    n: usize,
    cols: usize,
    /// First artificial column; artificials occupy `art..cols`.
    art: usize,
    /// Column that starts as the identity column of each row.
    unit_col: Vec<usize>,
    flipped: Vec<bool>,
    pivots: usize,
    guard: usize,
}

impl Tableau {
    fn build(lp: &LinearProgram) -> Result<Self> {
        let n = lp.c.len();
        let m = lp.rows.len();
        if lp.rows.iter().any(|r| r.coef.len() != n) {
            return Err(Error::Invalid("row width differs from objective width".into()));
        }
        if lp.c.iter().chain(lp.rows.iter().flat_map(|r| r.coef.iter().chain([&r.rhs]))).any(|v| !v.is_finite()) {
            return Err(Error::Invalid("non-finite LP coefficient".into()));
        }
        // normalize to nonnegative right-hand sides
        let mut rows: Vec<(Vec<f64>, Sense, f64, bool)> = lp
            .rows
            .iter()
            .map(|r| {
                if r.rhs < 0.0 {
                    let sense = match r.sense {
                        Sense::Le => Sense::Ge,
                        Sense::Ge => Sense::Le,
                        Sense::Eq => Sense::Eq,
                    };
                    (r.coef.iter().map(|v| -v).collect(), sense, -r.rhs, true)
                } else {
                    (r.coef.clone(), r.sense, r.rhs, false)
                }
            })
            .collect();
        let slack_count = rows.iter().filter(|r| r.1 != Sense::Eq).count();
        let art_count = rows.iter().filter(|r| r.1 != Sense::Le).count();
        let art = n + slack_count;
        let cols = art + art_count;
        let mut a = Vec::with_capacity(m);
        let mut basis = Vec::with_capacity(m);
        let mut unit_col = Vec::with_capacity(m);
        let mut flipped = Vec::with_capacity(m);
        let (mut s, mut t) = (n, art);
        for (coef, sense, rhs, flip) in rows.drain(..) {
            let mut row = vec![0.0; cols + 1];
            row[..n].copy_from_slice(&coef);
            row[cols] = rhs;
            match sense {
                Sense::Le => {
                    row[s] = 1.0;
                    basis.push(s);
                    unit_col.push(s);
                    s += 1;
                }
                Sense::Ge => {
                    row[s] = -1.0;
                    s += 1;
                    row[t] = 1.0;
                    basis.push(t);
                    unit_col.push(t);
                    t += 1;
                }
                Sense::Eq => {
                    row[t] = 1.0;
                    basis.push(t);
                    unit_col.push(t);
                    t += 1;
                }
            }
            a.push(row);
            flipped.push(flip);
        }
        Ok(Tableau { a, basis, n, cols, art, unit_col, flipped, pivots: 0, guard: 10 * (m + cols).max(1) })
    }

    fn pivot(&mut self, r: usize, c: usize) {
        let p = self.a[r][c];
        for v in self.a[r].iter_mut() {
            *v /= p;
        }
        let pivot_row = self.a[r].clone();
        for (i, row) in self.a.iter_mut().enumerate() {
            if i == r {
                continue;
            }
            let f = row[c];
            if f != 0.0 {
                for (v, pv) in row.iter_mut().zip(&pivot_row) {
                    *v -= f * pv;
                }
                row[c] = 0.0;
            }
        }
        self.basis[r] = c;
    }

    /// Reduced costs of all columns for cost vector `cost`.
    fn reduced(&self, cost: &[f64]) -> Vec<f64> {
        let mut d = cost.to_vec();
        for (i, &b) in self.basis.iter().enumerate() {
            let cb = cost[b];
            if cb != 0.0 {
                for (dj, aij) in d.iter_mut().zip(&self.a[i][..self.cols]) {
                    *dj -= cb * aij;
                }
            }
        }
        d
    }

    /// Minimizes `cost` over columns `< allowed`. `Ok(false)` if unbounded.
    fn optimize(&mut self, cost: &[f64], allowed: usize) -> Result<bool> {
        loop {
            let d = self.reduced(cost);
            // Bland: lowest-index improving column
            let Some(enter) = (0..allowed).find(|&j| d[j] < -TOL && !self.basis.contains(&j)) else {
                return Ok(true);
            };
            let mut leave: Option<(f64, usize, usize)> = None;
            for (i, row) in self.a.iter().enumerate() {
                let aij = row[enter];
                if aij > TOL {
                    let ratio = row[self.cols] / aij;
                    let better = match leave {
                        None => true,
                        Some((best, _, bvar)) => {
                            ratio < best - TOL || (ratio <= best + TOL && self.basis[i] < bvar)
                        }
                    };
                    if better {
                        leave = Some((ratio, i, self.basis[i]));
                    }
                }
            }
            let Some((_, r, _)) = leave else {
                return Ok(false);
            };
            self.pivots += 1;
            if self.pivots > self.guard {
                return Err(Error::SimplexStalled(self.pivots));
            }
            self.pivot(r, enter);
        }
    }

    fn run(mut self, lp: &LinearProgram) -> Result<LpSolution> {
        let m = self.a.len();
        if self.art < self.cols {
            let mut cost1 = vec![0.0; self.cols];
            cost1[self.art..].iter_mut().for_each(|v| *v = 1.0);
            self.optimize(&cost1, self.cols)?;
            let infeas: f64 = self.basis.iter().enumerate().filter(|(_, &b)| b >= self.art).map(|(i, _)| self.a[i][self.cols]).sum();
            if infeas > TOL {
                return Ok(LpSolution::infeasible(self.n, m));
            }
            // drive zero-level artificials out of the basis where possible
            for i in 0..m {
                if self.basis[i] >= self.art {
                    if let Some(j) = (0..self.art).find(|&j| self.a[i][j].abs() > TOL && !self.basis.contains(&j)) {
                        self.pivot(i, j);
                    }
                }
            }
        }
        let mut cost = vec![0.0; self.cols];
        cost[..self.n].copy_from_slice(&lp.c);
        if !self.optimize(&cost, self.art)? {
            return Err(Error::Unbounded);
        }
        let mut x = vec![0.0; self.n];
        for (i, &b) in self.basis.iter().enumerate() {
            if b < self.n {
                x[b] = self.a[i][self.cols];
            }
        }
        let value = lp.c.iter().zip(&x).map(|(c, v)| c * v).sum();
        let d = self.reduced(&cost);
        let duals = (0..m)
            .map(|i| {
                // reduced cost of the row's starting identity column is -y_i
                let y = -d[self.unit_col[i]];
                if self.flipped[i] {
                    -y
                } else {
                    y
                }
            })
            .collect();
        Ok(LpSolution { status: LpStatus::Optimal, value, x, duals })
    }
}
