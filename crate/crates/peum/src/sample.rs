//! Ready-made map families and random BV test functions, shared by the CLI
//! config loader, the test suites, and the benchmarks.

use crate::bv::{GridFn, Interp, JumpRecord};
use crate::map::{BranchKind, BranchSpec, PeumMap, Shape};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Branch overlap past the critical point, used only for one-sided limits.
pub const DEFAULT_OVERLAP: f64 = 0.05;
/// Declared smoothness for analytic branches.
pub const DEFAULT_SMOOTHNESS: usize = 8;

fn linear_branch(slope: f64, intercept: f64, domain: (f64, f64)) -> BranchSpec {
    BranchSpec {
        kind: BranchKind::Linear { slope, intercept },
        domain,
        smoothness_order: DEFAULT_SMOOTHNESS,
    }
}

/// The full tent map `f(x) = 2 min(x, 1-x)`.
pub fn tent() -> PeumMap {
    markov_tent(2.0)
}

/// Skew tent: `x/a` on `[0,a]`, `(1-x)/(1-a)` on `[a,1]`.
pub fn skew_tent(a: f64) -> PeumMap {
    let c = a;
    let ov = DEFAULT_OVERLAP.min(c * 0.5).min((1.0 - c) * 0.5);
    PeumMap::new(
        linear_branch(1.0 / a, 0.0, (0.0, c + ov)),
        linear_branch(-1.0 / (1.0 - a), 1.0 / (1.0 - a), (c - ov, 1.0)),
        c,
        ov,
    )
    .expect("skew tent is a valid map")
}

/// Symmetric tent with slope `s`: `f(x) = s min(x, 1-x)`.
pub fn markov_tent(s: f64) -> PeumMap {
    PeumMap::new(
        linear_branch(s, 0.0, (0.0, 0.5 + DEFAULT_OVERLAP)),
        linear_branch(-s, s, (0.5 - DEFAULT_OVERLAP, 1.0)),
        0.5,
        DEFAULT_OVERLAP,
    )
    .expect("tent is a valid map")
}

/// Perturbed tent: `s*u + eps*shape(u)` with `u = x` on the left branch and
/// `u = 1-x` on the right, critical point at `1/2`.
pub fn tent_perturbed(base_slope: f64, eps: f64, shape: Shape) -> PeumMap {
    let mk = |descending| BranchSpec {
        kind: BranchKind::TentPerturbed {
            base_slope,
            eps,
            shape,
            descending,
        },
        domain: if descending {
            (0.5 - DEFAULT_OVERLAP, 1.0)
        } else {
            (0.0, 0.5 + DEFAULT_OVERLAP)
        },
        smoothness_order: DEFAULT_SMOOTHNESS,
    };
    PeumMap::new(mk(false), mk(true), 0.5, DEFAULT_OVERLAP).expect("perturbed tent is valid")
}

/// The default nonlinear test map used throughout the suites.
pub fn tent_perturbed_default() -> PeumMap {
    tent_perturbed(1.8, 0.05, Shape::SinePi)
}

/// Two polynomial branches meeting at `c` (coefficients in ascending powers).
pub fn polynomial2(c: f64, coeffs1: Vec<f64>, coeffs2: Vec<f64>) -> crate::Result<PeumMap> {
    let ov = DEFAULT_OVERLAP.min(c * 0.5).min((1.0 - c) * 0.5);
    PeumMap::new(
        BranchSpec {
            kind: BranchKind::Polynomial { coeffs: coeffs1 },
            domain: (0.0, c + ov),
            smoothness_order: DEFAULT_SMOOTHNESS,
        },
        BranchSpec {
            kind: BranchKind::Polynomial { coeffs: coeffs2 },
            domain: (c - ov, 1.0),
            smoothness_order: DEFAULT_SMOOTHNESS,
        },
        c,
        ov,
    )
}

/// A quadratic-left example map used in tests and shipped configs.
pub fn polynomial2_default() -> PeumMap {
    // f1(x) = 1.9x - 0.2x^2 (slope 1.9 -> 1.7), f2(x) = 1.8(1-x).
    polynomial2(0.5, vec![0.0, 1.9, -0.2], vec![1.8, -1.8]).expect("valid example map")
}

/// Random piecewise-linear BV function with a few interior jumps; values in
/// O(1), deterministic in the seed.
pub fn random_bv(seed: u64, n_cells: usize) -> GridFn {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n_jumps = rng.gen_range(1..4);
    let locations: Vec<f64> = (0..n_jumps).map(|_| rng.gen_range(0.05..0.95)).collect();
    random_bv_at(seed.wrapping_add(1), n_cells, &locations)
}

/// Random BV function with jumps at the given locations; pairs built with
/// the same locations combine without any interpolation-geometry mismatch,
/// which is what exact operator-linearity checks need.
pub fn random_bv_at(seed: u64, n_cells: usize, locations: &[f64]) -> GridFn {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    // Smooth random polyline with a handful of nodes.
    let nodes = 8;
    let node_vals: Vec<f64> = (0..=nodes).map(|_| rng.gen_range(-1.0..1.0)).collect();
    let reg: Vec<f64> = (0..n_cells)
        .map(|i| {
            let x = (i as f64 + 0.5) / n_cells as f64 * nodes as f64;
            let k = (x.floor() as usize).min(nodes - 1);
            let t = x - k as f64;
            node_vals[k] * (1.0 - t) + node_vals[k + 1] * t
        })
        .collect();
    let jumps: Vec<JumpRecord> = locations
        .iter()
        .map(|&location| JumpRecord {
            location,
            magnitude: rng.gen_range(0.2..1.0) * if rng.gen_bool(0.5) { 1.0 } else { -1.0 },
        })
        .collect();
    GridFn::from_regular_parts(reg, jumps, Interp::PiecewiseLinear)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn families_validate() {
        assert!(tent().is_piecewise_linear());
        assert!(skew_tent(0.25).is_piecewise_linear());
        assert!((markov_tent(std::f64::consts::SQRT_2).lambda() - std::f64::consts::SQRT_2).abs() < 1e-12);
        let tp = tent_perturbed_default();
        assert!(!tp.is_piecewise_linear());
        assert!((tp.lambda() - 1.8).abs() < 1e-6);
        assert!(tp.max_slope() < 1.96);
        polynomial2_default();
    }

    #[test]
    fn random_bv_deterministic() {
        let a = random_bv(7, 256);
        let b = random_bv(7, 256);
        assert_eq!(a.values(), b.values());
        assert!(a.bv_norm() > 0.1 && a.bv_norm() < 20.0);
    }
}
