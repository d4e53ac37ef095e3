//! Numerics for piecewise expanding unimodal maps (PEUMs) of the unit
//! interval: the invariant (SRB) density, its derivatives of arbitrary order
//! via weighted transfer-operator series, the jump/regular decomposition of
//! the density, and the classification of interval points by how fast the
//! critical orbit approaches them.
//!
//! The crate is organised around a small set of building blocks:
//!
//! * [`map`] — the map model: two monotone expanding branches meeting at a
//!   critical point, with closed-form one-sided derivatives and preimages.
//! * [`bv`] — bounded-variation grid functions with explicit jump records.
//! * [`transfer`] — the Perron–Frobenius operator, the weighted operators
//!   `L_m`, the Ulam discretization, and empirical operator bounds.
//! * [`terms`] — the symbolic calculus of nested `L_m` multiseries and the
//!   differentiation rule that produces the series for higher derivatives.
//! * [`density`] — invariant-density solvers (power iteration, Ulam
//!   eigenproblem, exact Markov linear solve, orbit histogram).
//! * [`series`] — truncated numerical evaluation of the derivative series.
//! * [`saltus`] — jump magnitudes along the critical orbit, saltus/regular
//!   split, absolute-continuity and Hölder checks.
//! * [`classify`] — per-point differentiability verdicts, covers of the
//!   non-differentiability set, Cantor witnesses, Whitney remainders.
//! * [`oracles`] — deliberately simple brute-force cross-checks used by the
//!   test suite.
//!
//! Grid loops run in parallel via rayon when the `parallel` feature
//! (default) is enabled; disabling it yields a fully sequential build with
//! identical results.

pub mod bv;
pub mod classify;
pub mod config;
pub mod density;
pub mod error;
pub mod exec;
pub mod map;
pub mod oracles;
pub mod saltus;
pub mod sample;
pub mod series;
pub mod terms;
pub mod transfer;

pub use bv::{GridFn, Interp, JumpRecord};
pub use error::{Error, Result};
pub use map::{BranchKind, BranchSpec, CriticalOrbit, Orientation, PeumMap, Side};
