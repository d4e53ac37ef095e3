//! Brute-force cross-checks used by the test suite: finite differences and
//! direct preimage-tree evaluation of the weighted transfer operators at
//! single points. Deliberately simple; performance is not a goal here.

use crate::error::{Error, Result};
use crate::map::PeumMap;

/// Maximum preimage-tree depth (2^i leaves per evaluation point).
pub const MAX_TREE_DEPTH: usize = 12;

/// Centered finite difference `(f(x+h) - f(x-h)) / 2h`.
pub fn fd_derivative(f: impl Fn(f64) -> f64, x: f64, step: f64) -> f64 {
    (f(x + step) - f(x - step)) / (2.0 * step)
}

/// Like [`fd_derivative`] but refuses when a known jump lies within two
/// steps of the stencil.
pub fn fd_derivative_checked(
    f: impl Fn(f64) -> f64,
    x: f64,
    step: f64,
    jumps: &[f64],
) -> Result<f64> {
    if let Some(j) = jumps.iter().find(|j| (*j - x).abs() <= 2.0 * step) {
        return Err(Error::Precondition(format!(
            "jump at {j} inside finite-difference stencil around {x}"
        )));
    }
    Ok(fd_derivative(f, x, step))
}

/// Exact recursive preimage-tree evaluation of `L_m^i(h)(x)` for a
/// closed-form `h`, without any grid. `m = 0` gives the plain
/// Perron-Frobenius operator.
pub fn pointwise_transfer(
    map: &PeumMap,
    m: i32,
    h: &dyn Fn(f64) -> f64,
    x: f64,
    depth: usize,
) -> Result<f64> {
    if depth > MAX_TREE_DEPTH {
        return Err(Error::Precondition(format!(
            "preimage-tree depth {depth} exceeds cap {MAX_TREE_DEPTH}"
        )));
    }
    if depth == 0 {
        return Ok(h(x));
    }
    let mut acc = 0.0;
    for (y, _branch) in map.preimages(x, 1e-13)? {
        let d = map.deriv(y, 1, crate::map::Side::Midpoint)?;
        let w = 1.0 / (d.powi(m) * d.abs());
        acc += w * pointwise_transfer(map, m, h, y, depth - 1)?;
    }
    Ok(acc)
}
