//! Invariant-density solvers: power iteration on the transfer operator, the
//! Ulam eigenproblem, an exact linear solve for piecewise-linear Markov
//! maps, and a Birkhoff orbit-histogram sanity oracle.

use crate::bv::{detect_jumps, GridFn, Interp, JumpRecord};
use crate::error::{Error, Result};
use crate::map::PeumMap;
use crate::transfer::{apply_l, UlamMatrix};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;
use std::path::Path;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum SolveMethod {
    Power,
    Ulam,
    Markov,
    Histogram,
}

#[derive(Debug, Clone)]
pub struct DensityResult {
    pub rho: GridFn,
    /// `sup |L rho - rho|` for the grid methods; iteration residual for Ulam.
    pub residual: f64,
    pub iterations: usize,
    pub method: SolveMethod,
}

impl DensityResult {
    fn validate(&self) -> Result<()> {
        let min = self.rho.values().iter().fold(f64::INFINITY, |m, v| m.min(*v));
        if min < -1e-12 * self.rho.sup_norm().max(1.0) {
            return Err(Error::Precondition(format!(
                "density negative: min {min:.3e}"
            )));
        }
        let mass = self.rho.integral();
        if (mass - 1.0).abs() > 1e-8 {
            return Err(Error::Precondition(format!("density mass {mass} != 1")));
        }
        Ok(())
    }
}

/// Damped power iteration `h <- (L h + h) / 2` from `h = 1`, renormalizing
/// the mass every step, until the sup change drops below `tol / 2`. The
/// damping keeps maps with peripheral operator spectrum (period-2 interval
/// swaps such as the slope-sqrt2 tent) from oscillating; fixed points are
/// unchanged.
pub fn solve_power(map: &PeumMap, n_cells: usize, tol: f64, n_max: usize) -> Result<DensityResult> {
    let mut h = GridFn::constant(n_cells, 1.0);
    let mut iterations = 0;
    let mut res = f64::INFINITY;
    for n in 1..=n_max {
        let lh = apply_l(map, &h)?;
        let mut next = GridFn::combine(&lh, &h, crate::bv::CombineOp::Add, 0.5, 0.5, false)?;
        let mass = next.integral();
        next = next.scale(1.0 / mass);
        res = next.sub(&h)?.sup_norm();
        h = next;
        iterations = n;
        if res <= 0.5 * tol {
            break;
        }
    }
    if res > 0.5 * tol {
        return Err(Error::NonConvergence(iterations, res));
    }
    let residual = apply_l(map, &h)?.sub(&h)?.sup_norm();
    let out = DensityResult {
        rho: h,
        residual,
        iterations,
        method: SolveMethod::Power,
    };
    out.validate()?;
    Ok(out)
}

/// Leading eigenvector of the Ulam matrix by power iteration; jumps are
/// detected afterwards at critical-orbit cells.
pub fn solve_ulam(
    map: &PeumMap,
    n_cells: usize,
    cache_dir: Option<&Path>,
) -> Result<DensityResult> {
    if n_cells < 64 {
        return Err(Error::Precondition("solve_ulam needs >= 64 cells".into()));
    }
    let matrix = UlamMatrix::load_or_build(map, n_cells, cache_dir)?;
    let mut u = vec![1.0; n_cells];
    let mut res = f64::INFINITY;
    let mut iterations = 0;
    let n_max = 4000;
    for n in 1..=n_max {
        // Damped iteration, as in solve_power.
        let mut v = matrix.apply(&u);
        for (x, prev) in v.iter_mut().zip(&u) {
            *x = 0.5 * (*x + prev);
        }
        let mass: f64 = v.iter().sum::<f64>() / n_cells as f64;
        for x in v.iter_mut() {
            *x /= mass;
        }
        res = u
            .iter()
            .zip(&v)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0f64, f64::max);
        u = v;
        iterations = n;
        if res <= 1e-13 {
            break;
        }
    }
    if res > 1e-6 {
        return Err(Error::NonConvergence(iterations, res));
    }
    let orbit = map.critical_orbit(12)?;
    let jumps = detect_jumps(&u, &orbit.points);
    let rho = GridFn::from_samples(u, jumps, Interp::PiecewiseLinear);
    let mass = rho.integral();
    let rho = rho.scale(1.0 / mass);
    let out = DensityResult {
        rho,
        residual: res,
        iterations,
        method: SolveMethod::Ulam,
    };
    out.validate()?;
    Ok(out)
}

/// Exact piecewise-constant density of a piecewise-linear Markov map.
#[derive(Debug, Clone, Serialize)]
pub struct MarkovDensity {
    /// Partition points including 0 and 1.
    pub partition: Vec<f64>,
    /// Density value on each partition interval.
    pub values: Vec<f64>,
}

impl MarkovDensity {
    pub fn evaluate(&self, x: f64) -> f64 {
        let k = match self
            .partition
            .binary_search_by(|p| p.partial_cmp(&x).unwrap())
        {
            Ok(k) => k,
            Err(k) => k.saturating_sub(1),
        };
        self.values[k.min(self.values.len() - 1)]
    }

    /// Exact representation on a grid: piecewise-constant regular part with
    /// jump records at the interior partition points.
    pub fn to_gridfn(&self, n_cells: usize) -> GridFn {
        let mut jumps = Vec::new();
        for k in 1..self.values.len() {
            let mag = self.values[k - 1] - self.values[k];
            if mag.abs() > 0.0 {
                jumps.push(JumpRecord {
                    location: self.partition[k],
                    magnitude: mag,
                });
            }
        }
        let values: Vec<f64> = (0..n_cells)
            .map(|i| self.evaluate((i as f64 + 0.5) / n_cells as f64))
            .collect();
        GridFn::from_samples(values, jumps, Interp::PiecewiseLinear)
    }
}

/// Build the Markov partition from the critical orbit and solve the exact
/// fixed-point system for the piecewise-constant density.
pub fn solve_markov(map: &PeumMap) -> Result<MarkovDensity> {
    if !map.is_piecewise_linear() {
        return Err(Error::NotMarkov("branches are not piecewise linear".into()));
    }
    const DEPTH: usize = 32;
    const MATCH_TOL: f64 = 1e-10;
    let mut pts = vec![0.0, map.c(), 1.0];
    let mut x = map.c();
    let mut closed = false;
    for _ in 0..DEPTH {
        x = map.eval(x)?;
        if pts.iter().any(|p| (p - x).abs() < MATCH_TOL) {
            closed = true;
            break;
        }
        pts.push(x);
    }
    if !closed {
        return Err(Error::NotMarkov(format!(
            "critical orbit did not close within {DEPTH} steps"
        )));
    }
    pts.sort_by(|a, b| a.partial_cmp(b).unwrap());
    pts.dedup_by(|a, b| (*a - *b).abs() < MATCH_TOL);

    let k = pts.len() - 1;
    let mids: Vec<f64> = (0..k).map(|i| 0.5 * (pts[i] + pts[i + 1])).collect();
    let lens: Vec<f64> = (0..k).map(|i| pts[i + 1] - pts[i]).collect();

    // Per-interval slope and image; verify images align with the partition.
    let mut slopes = vec![0.0; k];
    let mut images = vec![(0.0, 0.0); k];
    for j in 0..k {
        let d = map.deriv(mids[j], 1, crate::map::Side::Midpoint)?;
        slopes[j] = d;
        let fa = map.eval(pts[j])?;
        let fb = map.eval(pts[j + 1])?;
        let (lo, hi) = if fa <= fb { (fa, fb) } else { (fb, fa) };
        let aligned = |v: f64| pts.iter().any(|p| (p - v).abs() < 1e-9);
        if !aligned(lo) || !aligned(hi) {
            return Err(Error::NotMarkov(format!(
                "image of piece {j} = [{lo}, {hi}] not aligned with the partition"
            )));
        }
        images[j] = (lo, hi);
    }

    // Fixed-point system rho_i = sum_{j : J_i inside f(J_j)} rho_j / |s_j|,
    // solved directly: the transfer matrix can carry peripheral spectrum
    // (period-2 interval swaps), so plain iteration may oscillate.
    let mut a = vec![vec![0.0f64; k]; k];
    for i in 0..k {
        for j in 0..k {
            if images[j].0 - 1e-12 <= mids[i] && mids[i] <= images[j].1 + 1e-12 {
                a[i][j] += 1.0 / slopes[j].abs();
            }
            a[i][j] -= if i == j { 1.0 } else { 0.0 };
        }
    }
    // Replace one row of (A - I) v = 0 with the mass normalization.
    let mut v = None;
    for replace in [k - 1, 0] {
        let mut m = a.clone();
        let mut rhs = vec![0.0; k];
        m[replace] = lens.clone();
        rhs[replace] = 1.0;
        if let Some(sol) = gauss_solve(m, rhs) {
            v = Some(sol);
            break;
        }
    }
    let v = v.ok_or_else(|| Error::NotMarkov("singular fixed-point system".into()))?;
    // Residual check against the original operator.
    let mut res = 0.0f64;
    for i in 0..k {
        let mut acc = 0.0;
        for j in 0..k {
            if images[j].0 - 1e-12 <= mids[i] && mids[i] <= images[j].1 + 1e-12 {
                acc += v[j] / slopes[j].abs();
            }
        }
        res = res.max((acc - v[i]).abs());
    }
    if res > 1e-9 {
        return Err(Error::NonConvergence(1, res));
    }
    Ok(MarkovDensity {
        partition: pts,
        values: v,
    })
}

/// Dense Gaussian elimination with partial pivoting; `None` when singular.
fn gauss_solve(mut m: Vec<Vec<f64>>, mut rhs: Vec<f64>) -> Option<Vec<f64>> {
    let k = rhs.len();
    for col in 0..k {
        let pivot = (col..k).max_by(|&r, &s| {
            m[r][col].abs().partial_cmp(&m[s][col].abs()).unwrap()
        })?;
        if m[pivot][col].abs() < 1e-13 {
            return None;
        }
        m.swap(col, pivot);
        rhs.swap(col, pivot);
        for r in col + 1..k {
            let f = m[r][col] / m[col][col];
            if f == 0.0 {
                continue;
            }
            for c in col..k {
                m[r][c] -= f * m[col][c];
            }
            rhs[r] -= f * rhs[col];
        }
    }
    let mut v = vec![0.0; k];
    for row in (0..k).rev() {
        let mut acc = rhs[row];
        for c in row + 1..k {
            acc -= m[row][c] * v[c];
        }
        v[row] = acc / m[row][row];
    }
    Some(v)
}

#[derive(Debug, Clone)]
pub struct HistogramResult {
    pub density: GridFn,
    /// Number of sub-orbit seeds that landed on the critical point and were
    /// nudged away.
    pub perturbed_seeds: usize,
}

/// Normalized occupation histogram of typical orbits. Orbits carry a tiny
/// seeded jitter (1e-12 per step) so that dyadic slopes do not collapse the
/// trajectory onto the fixed point in floating point; results are
/// deterministic in `seed`.
pub fn histogram_oracle(
    map: &PeumMap,
    orbit_len: usize,
    burn_in: usize,
    bins: usize,
    seed: u64,
) -> Result<HistogramResult> {
    if orbit_len < 100_000 {
        return Err(Error::Precondition(
            "histogram oracle needs orbit_len >= 1e5".into(),
        ));
    }
    let streams = 8usize;
    let per = orbit_len / streams;
    let counts_per: Vec<Vec<u64>> = crate::exec::map_items(streams, |s| {
        let mut rng = ChaCha8Rng::seed_from_u64(seed.wrapping_add(s as u64));
        let mut x: f64 = rng.gen_range(0.05..0.95);
        if (x - map.c()).abs() < 1e-12 {
            x += 1e-9;
        }
        let mut counts = vec![0u64; bins];
        for step in 0..(per + burn_in) {
            let jitter = (rng.gen::<f64>() - 0.5) * 2e-12;
            x = (map.eval(x).unwrap_or(0.0) + jitter).clamp(0.0, 1.0);
            if step >= burn_in {
                let b = ((x * bins as f64) as usize).min(bins - 1);
                counts[b] += 1;
            }
        }
        counts
    });
    let mut counts = vec![0u64; bins];
    let mut perturbed = 0usize;
    for (s, c) in counts_per.iter().enumerate() {
        let mut rng = ChaCha8Rng::seed_from_u64(seed.wrapping_add(s as u64));
        let x: f64 = rng.gen_range(0.05..0.95);
        if (x - map.c()).abs() < 1e-12 {
            perturbed += 1;
        }
        for (acc, v) in counts.iter_mut().zip(c) {
            *acc += v;
        }
    }
    let total: u64 = counts.iter().sum();
    let values: Vec<f64> = counts
        .iter()
        .map(|c| *c as f64 / total as f64 * bins as f64)
        .collect();
    Ok(HistogramResult {
        density: GridFn::from_samples(values, Vec::new(), Interp::PiecewiseConstant),
        perturbed_seeds: perturbed,
    })
}
