//! Learning tree-search policies by retrospective imitation.
//!
//! A policy rolls out on a search problem, the retrospective oracle strips the
//! backtracking out of its own trace, and the shortened trace becomes training
//! data for the next policy. Repeating this on progressively larger instances
//! lets a policy trained on small expert demonstrations scale past them.
//!
//! Modules:
//!
//! * [`search`]: policy-driven best-first tree search and traces.
//! * [`retro`]: retrospective oracle, dataset construction, Retrospective
//!   DAgger / SMILe, the scaling curriculum and the error-rate metric.
//! * [`policy`]: query normalization, the pairwise ranker, the pruner and
//!   their training.
//! * [`maze`]: Kruskal mazes and the A*-style maze environment.
//! * [`bnb`]: branch-and-bound over minimum vertex cover ILPs, with an
//!   embedded dense simplex.
//! * [`theory`]: hitting-time simulation of the biased random walk that
//!   models search cost under a per-decision error rate.
//! * [`harness`]: experiment orchestration behind the `retro` CLI.

pub mod bnb;
pub mod error;
pub mod harness;
pub mod maze;
pub mod policy;
pub mod retro;
pub mod rng;
pub mod search;
pub mod theory;

pub use error::{Error, Result};
