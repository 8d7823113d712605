//! Hitting times of a biased ±1 walk.
//!
//! A search that makes a wrong choice with probability `ε` at every step
//! behaves like a walk toward the target that steps back with probability
//! `ε`. The walk needs `N / (1 - 2ε)` steps on average to first reach `N`,
//! with an exponentially thin tail. This module simulates that walk and
//! compares it with the closed form.

use std::fmt::Write as _;

use rand::Rng as _;
use rayon::prelude::*;

use crate::{rng, Error, Result};

pub const STEP_CAP: u64 = 1_000_000;
pub const TAIL_ALPHAS: [f64; 4] = [2.0, 4.0, 6.0, 8.0];
/// Trials per independently seeded chunk. Fixed, so results do not depend
/// on how chunks are spread over threads.
const CHUNK: u64 = 4096;

pub fn expected_hitting_time(epsilon: f64, n: u64) -> Result<f64> {
    if !(0.0..0.5).contains(&epsilon) {
        return Err(if epsilon >= 0.5 {
            Error::Divergent(epsilon)
        } else {
            Error::Invalid(format!("epsilon {epsilon} must be in [0, 0.5)"))
        });
    }
    if n == 0 {
        return Err(Error::Invalid("target must be at least 1".into()));
    }
    Ok(n as f64 / (1.0 - 2.0 * epsilon))
}

#[derive(Debug, Clone, PartialEq)]
pub struct WalkConfig {
    pub epsilon: f64,
    pub target: u64,
    pub trials: u64,
    pub seed: u64,
    pub alphas: Vec<f64>,
}

impl WalkConfig {
    pub fn new(epsilon: f64, target: u64, trials: u64, seed: u64) -> Self {
        WalkConfig { epsilon, target, trials, seed, alphas: TAIL_ALPHAS.to_vec() }
    }

    pub fn validate(&self) -> Result<()> {
        expected_hitting_time(self.epsilon, self.target)?;
        if self.trials == 0 {
            return Err(Error::Invalid("trials must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SimulationResult {
    pub config: WalkConfig,
    pub mean: f64,
    /// Unbiased sample variance.
    pub variance: f64,
    pub min: u64,
    /// Number of trials with `T >= alpha N`, one per entry of `config.alphas`.
    pub tail_counts: Vec<u64>,
    /// Trials that hit the step cap (their `T` is recorded as the cap).
    pub cap_hits: u64,
    /// Trials violating `T >= N` or `T ≡ N (mod 2)`; always 0.
    pub parity_violations: u64,
}

impl SimulationResult {
    pub fn tail_frequency(&self, i: usize) -> f64 {
        self.tail_counts[i] as f64 / self.config.trials as f64
    }
}

#[derive(Default)]
struct Acc {
    n: u64,
    sum: u128,
    sum_sq: u128,
    min: u64,
    tails: Vec<u64>,
    cap_hits: u64,
    parity: u64,
}

impl Acc {
    fn merge(mut self, o: Acc) -> Acc {
        self.n += o.n;
        self.sum += o.sum;
        self.sum_sq += o.sum_sq;
        self.min = if self.n == o.n { o.min } else { self.min.min(o.min) };
        for (a, b) in self.tails.iter_mut().zip(&o.tails) {
            *a += b;
        }
        self.cap_hits += o.cap_hits;
        self.parity += o.parity;
        self
    }
}

/// One walk from 0 until it first reaches `target`.
fn walk(r: &mut rng::Rng, epsilon: f64, target: u64) -> (u64, bool) {
    let target = target as i64;
    let mut pos = 0i64;
    let mut steps = 0u64;
    while pos < target {
        if steps == STEP_CAP {
            return (steps, true);
        }
        pos += if epsilon > 0.0 && r.random::<f64>() < epsilon { -1 } else { 1 };
        steps += 1;
    }
    (steps, false)
}

/// Runs `config.trials` walks. Trials are grouped into fixed chunks, each
/// with its own derived seed, and sums are kept in exact integers, so the
/// result is identical for any thread count.
pub fn simulate_hitting_time(config: &WalkConfig) -> Result<SimulationResult> {
    config.validate()?;
    let chunks = config.trials.div_ceil(CHUNK);
    let thresholds: Vec<u64> = config.alphas.iter().map(|a| (a * config.target as f64).ceil() as u64).collect();
    let acc = (0..chunks)
        .into_par_iter()
        .map(|c| {
            let mut r = rng::from_seed(rng::derive(config.seed, &[c]));
            let count = CHUNK.min(config.trials - c * CHUNK);
            let mut a = Acc { min: u64::MAX, tails: vec![0; thresholds.len()], ..Default::default() };
            for _ in 0..count {
                let (t, capped) = walk(&mut r, config.epsilon, config.target);
                a.n += 1;
                a.sum += t as u128;
                a.sum_sq += (t as u128) * (t as u128);
                a.min = a.min.min(t);
                a.cap_hits += u64::from(capped);
                if !capped && (t < config.target || !(t - config.target).is_multiple_of(2)) {
                    a.parity += 1;
                }
                for (k, &th) in thresholds.iter().enumerate() {
                    a.tails[k] += u64::from(t >= th);
                }
            }
            a
        })
        .collect::<Vec<_>>()
        .into_iter()
        .reduce(Acc::merge)
        .expect("at least one chunk");
    let n = acc.n as f64;
    let mean = acc.sum as f64 / n;
    // exact integer numerator n Σt² - (Σt)²
    let variance = if acc.n > 1 {
        let num = acc.n as u128 * acc.sum_sq - acc.sum * acc.sum;
        num as f64 / (n * (n - 1.0))
    } else {
        0.0
    };
    Ok(SimulationResult {
        config: config.clone(),
        mean,
        variance,
        min: acc.min,
        tail_counts: acc.tails,
        cap_hits: acc.cap_hits,
        parity_violations: acc.parity,
    })
}

/// Individual hitting times, from the same per-chunk streams as
/// [`simulate_hitting_time`]. Capped trials report the cap.
pub fn sample_hitting_times(config: &WalkConfig) -> Result<Vec<u64>> {
    config.validate()?;
    let mut out = Vec::with_capacity(config.trials as usize);
    for c in 0..config.trials.div_ceil(CHUNK) {
        let mut r = rng::from_seed(rng::derive(config.seed, &[c]));
        for _ in 0..CHUNK.min(config.trials - c * CHUNK) {
            out.push(walk(&mut r, config.epsilon, config.target).0);
        }
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq)]
pub struct TailRow {
    pub alpha: f64,
    pub frequency: f64,
    /// `exp(-alpha + 1/(1 - 2ε))`.
    pub bound: f64,
    /// No trial reached `alpha N`; the frequency is only an upper bound
    /// `< 1/trials` and is left out of the slope fit.
    pub unresolved: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TailReport {
    pub rows: Vec<TailRow>,
    /// Least-squares slope of `ln frequency` against `alpha`, when at least
    /// two frequencies are nonzero.
    pub slope: Option<f64>,
}

impl TailReport {
    /// Slope at most -0.5, or not enough nonzero points to fit one.
    pub fn decays(&self) -> bool {
        self.slope.is_none_or(|s| s <= -0.5)
    }
}

pub fn tail_bound(epsilon: f64, alpha: f64) -> f64 {
    (-alpha + 1.0 / (1.0 - 2.0 * epsilon)).exp()
}

pub fn least_squares_slope(points: &[(f64, f64)]) -> Option<f64> {
    if points.len() < 2 {
        return None;
    }
    let n = points.len() as f64;
    let mx = points.iter().map(|p| p.0).sum::<f64>() / n;
    let my = points.iter().map(|p| p.1).sum::<f64>() / n;
    let sxx: f64 = points.iter().map(|p| (p.0 - mx).powi(2)).sum();
    let sxy: f64 = points.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    (sxx > 0.0).then(|| sxy / sxx)
}

pub fn tail_check(result: &SimulationResult) -> TailReport {
    let eps = result.config.epsilon;
    let rows: Vec<TailRow> = result
        .config
        .alphas
        .iter()
        .enumerate()
        .map(|(i, &alpha)| TailRow {
            alpha,
            frequency: result.tail_frequency(i),
            bound: tail_bound(eps, alpha),
            unresolved: result.tail_counts[i] == 0,
        })
        .collect();
    let pts: Vec<(f64, f64)> = rows.iter().filter(|r| !r.unresolved).map(|r| (r.alpha, r.frequency.ln())).collect();
    TailReport { slope: least_squares_slope(&pts), rows }
}

pub fn csv_header() -> &'static str {
    "epsilon,N,trials,mean,variance,alpha,tail_freq,bound_value\n"
}

/// One CSV row per tail threshold.
pub fn csv_rows(result: &SimulationResult, report: &TailReport) -> String {
    let c = &result.config;
    let mut out = String::new();
    for r in &report.rows {
        let _ = writeln!(
            out,
            "{},{},{},{},{},{},{},{}",
            c.epsilon, c.target, c.trials, result.mean, result.variance, r.alpha, r.frequency, r.bound
        );
    }
    out
}
