//! Transfer operators on grid BV functions.
//!
//! `apply_l` is the Perron-Frobenius operator. Output cell values are exact
//! cell averages of `L(h-interpolant)`, obtained by pulling each cell back
//! through the branch inverses and evaluating the exact antiderivative of
//! the input representation. The per-branch pullbacks tile the branch
//! domains, so the telescoped total mass equals the input mass to rounding:
//! the operator is conservative, linear and positive by construction.
//!
//! `apply_lm` is the signed weighted operator
//! `L_m(h)(x) = sum_{f(y)=x} h(y) / ((Df(y))^m |Df(y)|)`,
//! evaluated pointwise at cell centers.
//!
//! Both carry jumps explicitly: an output jump appears at `f(c)` where the
//! two branch preimages merge, at interior images of the branch endpoints,
//! and at the image of every input jump, with magnitudes computed from
//! one-sided limits. This reproduces the mechanism that places the jumps of
//! the invariant density on the critical orbit.

use crate::bv::{GridFn, Interp, JumpRecord};
use crate::error::{Error, Result};
use crate::exec;
use crate::map::{Orientation, PeumMap, Side};
use crate::sample::random_bv;
use serde::{Deserialize, Serialize};
use std::io::{Read, Write};
use std::path::{Path, PathBuf};

const ROOT_TOL: f64 = 1e-13;

/// Signed weight `1 / ((Df)^m |Df|)` from a signed derivative `d`.
fn weight(d: f64, m: i32) -> f64 {
    1.0 / (d.powi(m) * d.abs())
}

fn interior(x: f64) -> bool {
    x > 1e-14 && x < 1.0 - 1e-14
}

/// Output jump records of `L_m h`: the branch-merge jump at `f(c)`,
/// endpoint-image jumps, and transported input jumps.
fn output_jumps(map: &PeumMap, m: i32, h: &GridFn) -> Result<Vec<JumpRecord>> {
    let c = map.c();
    let mut out = Vec::with_capacity(h.jumps().len() + 3);

    // Both branch preimages appear (or vanish) together as x crosses f(c).
    let vc = map.eval(c)?;
    if interior(vc) {
        let dl = map.deriv(c, 1, Side::Left)?;
        let dr = map.deriv(c, 1, Side::Right)?;
        let contrib = h.evaluate_side(c, true) * weight(dl, m)
            + h.evaluate_side(c, false) * weight(dr, m);
        let sign = match map.orientation() {
            Orientation::MaxAtC => 1.0,
            Orientation::MinAtC => -1.0,
        };
        out.push(JumpRecord {
            location: vc,
            magnitude: sign * contrib,
        });
    }

    // A branch endpoint whose image is interior starts or ends that branch's
    // range there; the single-branch contribution switches on across it.
    for endpoint in [0.0f64, 1.0f64] {
        let v = map.eval(endpoint)?;
        if interior(v) {
            let d = map.deriv(endpoint, 1, Side::Midpoint)?;
            let contrib = h.evaluate(endpoint) * weight(d, m);
            // The range sits above f(endpoint) iff the branch attains its
            // minimum there: left end of an increasing branch, right end of
            // a decreasing one.
            let above = if endpoint == 0.0 { d > 0.0 } else { d < 0.0 };
            out.push(JumpRecord {
                location: v,
                magnitude: if above { -contrib } else { contrib },
            });
        }
    }

    // Input jumps ride their branch to the image point.
    for j in h.jumps() {
        let l = j.location;
        if (l - c).abs() <= 1e-12 {
            continue; // folded into the f(c) record via one-sided limits
        }
        let v = map.eval(l)?;
        if !interior(v) {
            continue;
        }
        let d = map.deriv(l, 1, Side::Midpoint)?;
        let transported = j.magnitude * weight(d, m) * d.signum();
        out.push(JumpRecord {
            location: v,
            magnitude: transported,
        });
    }
    Ok(out)
}

/// Integral of the saltus part of `jumps` over `[a, b]`.
fn saltus_integral(jumps: &[JumpRecord], a: f64, b: f64) -> f64 {
    jumps
        .iter()
        .map(|j| j.magnitude * (j.location.min(b) - a).clamp(0.0, b - a))
        .sum()
}

/// Perron-Frobenius operator, conservative cell-average construction.
pub fn apply_l(map: &PeumMap, h: &GridFn) -> Result<GridFn> {
    let n = h.n_cells();
    let c = map.c();
    let jumps = crate::bv::normalize_jump_records(output_jumps(map, 0, h)?, h.sup_norm());
    let halves = [(0.0, c), (c, 1.0)];

    // Branch ranges and preimages of every cell edge (clamped to the range);
    // adjacent cells share edge preimages so the pullbacks tile exactly.
    let mut ranges = [(0.0f64, 0.0f64); 2];
    for b in 0..2 {
        let (lo, hi) = halves[b];
        let flo = map.branch(b).value(lo);
        let fhi = map.branch(b).value(hi);
        ranges[b] = if flo <= fhi { (flo, fhi) } else { (fhi, flo) };
    }
    let pullback = |b: usize, x: f64| -> Result<f64> {
        let (lo, hi) = halves[b];
        let (rlo, rhi) = ranges[b];
        map.branch_inverse(b, x.clamp(rlo, rhi), lo, hi, ROOT_TOL)?
            .ok_or_else(|| Error::RootFind {
                branch: b,
                reason: format!("preimage of {x} missing"),
            })
    };
    let mut branch_edges: Vec<Vec<f64>> = Vec::with_capacity(2);
    for b in 0..2 {
        let ys = exec::map_f64(n + 1, |k| {
            pullback(b, k as f64 / n as f64).unwrap_or(f64::NAN)
        });
        if ys.iter().any(|y| y.is_nan()) {
            return Err(Error::RootFind {
                branch: b,
                reason: "edge preimage failed".into(),
            });
        }
        branch_edges.push(ys);
    }

    let mut reg = exec::map_f64(n, |i| {
        let e0 = i as f64 / n as f64;
        let e1 = (i + 1) as f64 / n as f64;
        let mut cell_int = 0.0;
        for b in 0..2 {
            let ya = branch_edges[b][i];
            let yb = branch_edges[b][i + 1];
            let (ymin, ymax) = if ya <= yb { (ya, yb) } else { (yb, ya) };
            if ymax > ymin {
                cell_int += h.integral_to(ymax) - h.integral_to(ymin);
            }
        }
        // Cell average of the continuous part.
        (cell_int - saltus_integral(&jumps, e0, e1)) * n as f64
    });

    // A cell straddling a jump mixes both sides in its average; store the
    // exact pointwise value at the center instead. The per-piece mass patch
    // below absorbs the bookkeeping difference.
    for j in &jumps {
        let i = ((j.location * n as f64).floor() as usize).min(n - 1);
        let x = (i as f64 + 0.5) / n as f64;
        let mut point = 0.0;
        for (y, _b) in map.preimages(x, ROOT_TOL)? {
            let d = map.deriv(y, 1, Side::Midpoint)?;
            point += h.evaluate(y) * weight(d, 0);
        }
        let s: f64 = jumps
            .iter()
            .map(|q| {
                if q.location > x {
                    q.magnitude
                } else if q.location == x {
                    0.5 * q.magnitude
                } else {
                    0.0
                }
            })
            .sum();
        reg[i] = point - s;
    }

    // Exact pulled-back mass of the full function over each inter-jump
    // piece of the output; piece boundaries per branch telescope, so the
    // masses sum to the input integral to rounding.
    let mut bounds = Vec::with_capacity(jumps.len() + 2);
    bounds.push(0.0);
    bounds.extend(jumps.iter().map(|j| j.location));
    bounds.push(1.0);
    let mut piece_masses = Vec::with_capacity(bounds.len() - 1);
    for p in 0..bounds.len() - 1 {
        let mut mass = 0.0;
        for b in 0..2 {
            let ya = pullback(b, bounds[p])?;
            let yb = pullback(b, bounds[p + 1])?;
            let (ymin, ymax) = if ya <= yb { (ya, yb) } else { (yb, ya) };
            if ymax > ymin {
                mass += h.integral_to(ymax) - h.integral_to(ymin);
            }
        }
        piece_masses.push(mass);
    }

    Ok(GridFn::from_masses(
        reg,
        jumps,
        piece_masses,
        Interp::PiecewiseLinear,
    ))
}

/// Weighted operator `L_m` (`m = 0` delegates to the conservative
/// [`apply_l`]); pointwise evaluation at cell centers.
pub fn apply_lm(map: &PeumMap, m: i32, h: &GridFn) -> Result<GridFn> {
    if m == 0 {
        return apply_l(map, h);
    }
    let n = h.n_cells();
    let jumps = output_jumps(map, m, h)?;
    let values = exec::map_f64(n, |i| {
        let x = (i as f64 + 0.5) / n as f64;
        let mut acc = 0.0;
        if let Ok(pre) = map.preimages(x, ROOT_TOL) {
            for (y, _b) in pre {
                if let Ok(d) = map.deriv(y, 1, Side::Midpoint) {
                    acc += h.evaluate(y) * weight(d, m);
                }
            }
        }
        acc
    });
    let reg: Vec<f64> = (0..n)
        .map(|i| {
            let x = (i as f64 + 0.5) / n as f64;
            let s: f64 = jumps
                .iter()
                .map(|j| if j.location > x { j.magnitude } else { 0.0 })
                .sum();
            values[i] - s
        })
        .collect();
    Ok(GridFn::from_regular_parts(reg, jumps, Interp::PiecewiseLinear))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PowerVariant {
    /// Repeated preimage-sum application.
    Preimage,
    /// Apply the sparse Ulam matrix `n` times.
    UlamMatrix,
}

/// `L^n h` by the chosen route.
pub fn apply_l_power(
    map: &PeumMap,
    n: usize,
    h: &GridFn,
    variant: PowerVariant,
) -> Result<GridFn> {
    match variant {
        PowerVariant::Preimage => {
            let mut t = h.clone();
            for _ in 0..n {
                t = apply_l(map, &t)?;
            }
            Ok(t)
        }
        PowerVariant::UlamMatrix => {
            let matrix = UlamMatrix::build(map, h.n_cells())?;
            let mut u = h.values().to_vec();
            for _ in 0..n {
                u = matrix.apply(&u);
            }
            let orbit = map.critical_orbit(12)?;
            let jumps = crate::bv::detect_jumps(&u, &orbit.points);
            Ok(GridFn::from_samples(u, jumps, Interp::PiecewiseLinear))
        }
    }
}

/// Sparse row-gather Ulam discretization: entry `(i, j)` is the fraction of
/// cell `j` whose image lands in cell `i`, computed from exact branch
/// inverses of the overlap endpoints (no sampling).
#[derive(Debug, Clone)]
pub struct UlamMatrix {
    n: usize,
    row_ptr: Vec<usize>,
    cols: Vec<u32>,
    vals: Vec<f64>,
}

impl UlamMatrix {
    pub fn n_cells(&self) -> usize {
        self.n
    }

    pub fn nnz(&self) -> usize {
        self.cols.len()
    }

    pub fn build(map: &PeumMap, n: usize) -> Result<Self> {
        let c = map.c();
        let halves = [(0.0, c), (c, 1.0)];
        let per_cell: Vec<Vec<(u32, u32, f64)>> = exec::map_items(n, |j| {
            let e0 = j as f64 / n as f64;
            let e1 = (j + 1) as f64 / n as f64;
            let mut trips = Vec::new();
            for (b, (lo, hi)) in halves.iter().enumerate() {
                let a = e0.max(*lo);
                let bb = e1.min(*hi);
                if bb <= a {
                    continue;
                }
                let fa = map.branch(b).value(a);
                let fb = map.branch(b).value(bb);
                let (ilo, ihi) = if fa <= fb { (fa, fb) } else { (fb, fa) };
                let i_start = ((ilo * n as f64).floor() as usize).min(n - 1);
                let i_end = (((ihi * n as f64).ceil() as usize).max(i_start + 1)).min(n);
                for i in i_start..i_end {
                    let ov_lo = ilo.max(i as f64 / n as f64);
                    let ov_hi = ihi.min((i + 1) as f64 / n as f64);
                    if ov_hi <= ov_lo {
                        continue;
                    }
                    let ya = map.branch_inverse(b, ov_lo, *lo, *hi, ROOT_TOL);
                    let yb = map.branch_inverse(b, ov_hi, *lo, *hi, ROOT_TOL);
                    if let (Ok(Some(p)), Ok(Some(q))) = (ya, yb) {
                        let w = (q - p).abs() * n as f64;
                        if w > 0.0 {
                            trips.push((i as u32, j as u32, w));
                        }
                    }
                }
            }
            trips
        });
        let mut trips: Vec<(u32, u32, f64)> = per_cell.into_iter().flatten().collect();
        trips.sort_by_key(|t| (t.0, t.1));
        let mut row_ptr = vec![0usize; n + 1];
        for t in &trips {
            row_ptr[t.0 as usize + 1] += 1;
        }
        for i in 0..n {
            row_ptr[i + 1] += row_ptr[i];
        }
        let cols = trips.iter().map(|t| t.1).collect();
        let vals = trips.iter().map(|t| t.2).collect();
        Ok(UlamMatrix {
            n,
            row_ptr,
            cols,
            vals,
        })
    }

    /// Load from the cache directory when present, else build and store.
    pub fn load_or_build(map: &PeumMap, n: usize, cache_dir: Option<&Path>) -> Result<Self> {
        let path = cache_dir.map(|d| Self::cache_path(d, map.config_hash(), n));
        if let Some(p) = &path {
            if let Ok(m) = Self::load(p) {
                if m.n == n {
                    return Ok(m);
                }
            }
        }
        let m = Self::build(map, n)?;
        if let Some(p) = &path {
            let _ = std::fs::create_dir_all(p.parent().unwrap_or(Path::new(".")));
            let _ = m.save(p);
        }
        Ok(m)
    }

    pub fn cache_path(dir: &Path, map_hash: &str, n: usize) -> PathBuf {
        dir.join(format!("peum-ulam-{map_hash}-{n}.bin"))
    }

    /// One application to a cell-value vector.
    pub fn apply(&self, u: &[f64]) -> Vec<f64> {
        assert_eq!(u.len(), self.n);
        exec::map_f64(self.n, |i| {
            let mut acc = 0.0;
            for k in self.row_ptr[i]..self.row_ptr[i + 1] {
                acc += self.vals[k] * u[self.cols[k] as usize];
            }
            acc
        })
    }

    const MAGIC: &'static [u8; 6] = b"PULM1\0";

    /// Row-compressed binary dump.
    pub fn save(&self, path: &Path) -> Result<()> {
        let mut w = std::io::BufWriter::new(std::fs::File::create(path)?);
        w.write_all(Self::MAGIC)?;
        w.write_all(&(self.n as u64).to_le_bytes())?;
        w.write_all(&(self.nnz() as u64).to_le_bytes())?;
        for p in &self.row_ptr {
            w.write_all(&(*p as u64).to_le_bytes())?;
        }
        for c in &self.cols {
            w.write_all(&c.to_le_bytes())?;
        }
        for v in &self.vals {
            w.write_all(&v.to_le_bytes())?;
        }
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let mut r = std::io::BufReader::new(std::fs::File::open(path)?);
        let mut magic = [0u8; 6];
        r.read_exact(&mut magic)?;
        if &magic != Self::MAGIC {
            return Err(Error::Config("bad Ulam cache magic".into()));
        }
        let mut buf8 = [0u8; 8];
        r.read_exact(&mut buf8)?;
        let n = u64::from_le_bytes(buf8) as usize;
        r.read_exact(&mut buf8)?;
        let nnz = u64::from_le_bytes(buf8) as usize;
        let mut row_ptr = Vec::with_capacity(n + 1);
        for _ in 0..=n {
            r.read_exact(&mut buf8)?;
            row_ptr.push(u64::from_le_bytes(buf8) as usize);
        }
        let mut buf4 = [0u8; 4];
        let mut cols = Vec::with_capacity(nnz);
        for _ in 0..nnz {
            r.read_exact(&mut buf4)?;
            cols.push(u32::from_le_bytes(buf4));
        }
        let mut vals = Vec::with_capacity(nnz);
        for _ in 0..nnz {
            r.read_exact(&mut buf8)?;
            vals.push(f64::from_le_bytes(buf8));
        }
        Ok(UlamMatrix {
            n,
            row_ptr,
            cols,
            vals,
        })
    }
}

/// Empirically fitted operator constants, frozen per map for the bound
/// checks and the truncation planner.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct OperatorBounds {
    /// `max_{n<=50} sup L^n 1`.
    pub m_sup: f64,
    /// Lasota-Yorke: `var(L^n h) <= c0 (sup|h| + gamma^n var h)`.
    pub c0: f64,
    pub gamma: f64,
    /// `var(1/|Df^i|^m) <= c1 * lambda_bar1^{-im}` on the tested range.
    pub c1: f64,
    pub lambda_bar1: f64,
    /// BV decay `||L_m^i h||_BV <= m_bar * lambda_bar^{-im} ||h||_BV`.
    pub m_bar: f64,
    pub lambda_bar: f64,
    /// Mixing rate of `L^n h -> (int h) rho`.
    pub theta: f64,
}

impl OperatorBounds {
    pub fn validate(&self) -> Result<()> {
        let ok = self.m_sup > 0.0
            && self.c0 > 0.0
            && self.gamma > 0.0
            && self.gamma < 1.0
            && self.c1 > 0.0
            && self.lambda_bar1 > 1.0
            && self.m_bar > 0.0
            && self.lambda_bar > 1.0
            && self.theta > 0.0
            && self.theta < 1.0;
        if ok {
            Ok(())
        } else {
            Err(Error::Precondition(format!(
                "invalid operator bounds: {self:?}"
            )))
        }
    }

    /// Fit all constants on a working grid. Deterministic in `seed`.
    pub fn fit(map: &PeumMap, seed: u64, n_cells: usize) -> Result<Self> {
        let mut m_sup = 1.0f64;
        let mut t = GridFn::constant(n_cells, 1.0);
        for _ in 0..50 {
            t = apply_l(map, &t)?;
            m_sup = m_sup.max(t.sup_norm());
        }

        let theta = estimate_theta(map, 8, seed, n_cells)?;

        // Lasota-Yorke fit.
        let mut c0 = 0.0f64;
        let mut gammas = Vec::new();
        for trial in 0..4 {
            let h = random_bv(seed.wrapping_add(100 + trial), n_cells);
            let sup = h.sup_norm();
            let var0 = h.total_variation();
            let mut vars = Vec::new();
            let mut t = h.clone();
            for _ in 0..16 {
                t = apply_l(map, &t)?;
                vars.push(t.total_variation());
            }
            let plateau = vars[15];
            let pts: Vec<(f64, f64)> = vars
                .iter()
                .enumerate()
                .take(10)
                .filter(|(_, v)| **v - plateau > 1e-10)
                .map(|(n, v)| ((n + 1) as f64, (v - plateau).ln()))
                .collect();
            if pts.len() >= 3 {
                let g = ls_slope(&pts).exp();
                if g.is_finite() && g > 0.0 && g < 1.0 {
                    gammas.push(g);
                }
            }
            for (n, v) in vars.iter().enumerate() {
                let gamma_try = gammas.last().copied().unwrap_or(0.9);
                let denom = sup + gamma_try.powi(n as i32 + 1) * var0;
                c0 = c0.max(v / denom);
            }
        }
        let gamma = if gammas.is_empty() {
            0.9
        } else {
            (gammas.iter().sum::<f64>() / gammas.len() as f64).clamp(0.05, 0.995)
        };
        let c0 = (c0 * 1.05).max(1.0);

        // var(1/|Df^i|^m) over the tested range.
        let mut pts = Vec::new();
        let mut meas = Vec::new();
        for m in 1..=3i32 {
            for i in 1..=6usize {
                let v = var_inv_dfi_m(map, i, m, n_cells);
                meas.push((i, m, v));
                if v > 1e-13 {
                    pts.push(((i as i32 * m) as f64, v.ln()));
                }
            }
        }
        let lambda_bar1 = if pts.len() >= 4 {
            (-ls_slope(&pts)).exp().max(1.001)
        } else {
            1.001
        };
        let mut c1 = 1e-12f64;
        for (i, m, v) in meas {
            c1 = c1.max(v * lambda_bar1.powi(i as i32 * m));
        }
        c1 *= 1.05;

        // BV decay of L_m^i.
        let mut pts = Vec::new();
        let mut ratios = Vec::new();
        for hid in 0..3u64 {
            let h = if hid == 0 {
                GridFn::constant(n_cells, 1.0)
            } else {
                random_bv(seed.wrapping_add(200 + hid), n_cells)
            };
            let hbv = h.bv_norm();
            for m in 1..=3i32 {
                let mut t = h.clone();
                for i in 1..=8usize {
                    t = apply_lm(map, m, &t)?;
                    let r = t.bv_norm() / hbv;
                    ratios.push((i, m, r));
                    if r > 1e-14 {
                        pts.push(((i as i32 * m) as f64, r.ln()));
                    }
                }
            }
        }
        let lambda_bar = if pts.len() >= 4 {
            (-ls_slope(&pts)).exp().max(1.02)
        } else {
            1.02
        };
        let mut m_bar = 1e-12f64;
        for (i, m, r) in ratios {
            m_bar = m_bar.max(r * lambda_bar.powi(i as i32 * m));
        }
        m_bar *= 1.2;

        let bounds = OperatorBounds {
            m_sup,
            c0,
            gamma,
            c1,
            lambda_bar1,
            m_bar,
            lambda_bar,
            theta,
        };
        bounds.validate()?;
        Ok(bounds)
    }
}

/// Sampled total variation of `1/|Df^i|^m`.
pub fn var_inv_dfi_m(map: &PeumMap, i: usize, m: i32, n_cells: usize) -> f64 {
    let vals = exec::map_f64(n_cells, |k| {
        let mut y = (k as f64 + 0.5) / n_cells as f64;
        let mut prod = 1.0;
        for _ in 0..i {
            let d = map.deriv(y, 1, Side::Midpoint).unwrap_or(f64::NAN);
            prod *= d.abs();
            y = map.eval(y).unwrap_or(0.0);
        }
        prod.powi(-m)
    });
    let mut var = 0.0;
    for w in vals.windows(2) {
        if w[0].is_finite() && w[1].is_finite() {
            var += (w[1] - w[0]).abs();
        }
    }
    var
}

fn ls_slope(pts: &[(f64, f64)]) -> f64 {
    let n = pts.len() as f64;
    let mx = pts.iter().map(|p| p.0).sum::<f64>() / n;
    let my = pts.iter().map(|p| p.1).sum::<f64>() / n;
    let mut sxx = 0.0;
    let mut sxy = 0.0;
    for (x, y) in pts {
        sxx += (x - mx) * (x - mx);
        sxy += (x - mx) * (y - my);
    }
    if sxx > 0.0 {
        sxy / sxx
    } else {
        0.0
    }
}

/// Fit the mixing rate from `log ||L^n h - (int h) rho||_inf` against `n`
/// over seeded random BV test functions, `n` in `[5, 40]`; residuals at
/// machine noise are excluded. Errors when no contraction is seen.
pub fn estimate_theta(map: &PeumMap, trials: usize, seed: u64, n_cells: usize) -> Result<f64> {
    if trials == 0 {
        return Err(Error::Precondition("estimate_theta needs trials >= 1".into()));
    }
    // Reference density by plain normalized iteration.
    let mut rho = GridFn::constant(n_cells, 1.0);
    for _ in 0..60 {
        rho = apply_l(map, &rho)?;
        let mass = rho.integral();
        rho = rho.scale(1.0 / mass);
    }

    let mut slopes = Vec::new();
    for trial in 0..trials {
        let h = random_bv(seed.wrapping_add(trial as u64), n_cells);
        let mass = h.integral();
        let target = rho.scale(mass);
        let mut t = h.clone();
        let mut raw = Vec::new();
        for n in 1..=40usize {
            t = apply_l(map, &t)?;
            if n >= 5 {
                raw.push((n as f64, t.sub(&target)?.sup_norm()));
            }
        }
        // Late iterates sit on the representation-noise plateau; fit only
        // residuals clearly above it.
        let plateau = raw
            .iter()
            .map(|p| p.1)
            .fold(f64::INFINITY, f64::min)
            .max(1e-13 * h.bv_norm().max(1.0));
        let pts: Vec<(f64, f64)> = raw
            .iter()
            .filter(|p| p.1 > 30.0 * plateau)
            .map(|p| (p.0, p.1.ln()))
            .collect();
        if pts.len() >= 5 {
            slopes.push(ls_slope(&pts));
        }
    }
    if slopes.is_empty() {
        return Err(Error::NonConvergence(40, 0.0));
    }
    let mean = slopes.iter().sum::<f64>() / slopes.len() as f64;
    if mean >= 0.0 {
        return Err(Error::Precondition(
            "no contraction observed; map may not be mixing".into(),
        ));
    }
    Ok(mean.exp())
}

#[derive(Debug, Clone, Serialize)]
pub struct DecayCheck {
    pub i: usize,
    pub m: i32,
    pub h_id: usize,
    pub measured: f64,
    pub bound: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct DecayReport {
    pub checks: Vec<DecayCheck>,
    pub violations: usize,
    /// Largest measured/bound ratio seen.
    pub max_ratio: f64,
}

/// Check `||L_m^i h||_inf <= M lambda^{-im} ||h||_inf` (small additive
/// slack) for all `i <= i_max`, `m <= m_max` over `n_h` seeded test
/// functions plus the constant 1.
pub fn verify_decay_bounds(
    map: &PeumMap,
    bounds: &OperatorBounds,
    i_max: usize,
    m_max: i32,
    n_h: usize,
    seed: u64,
    n_cells: usize,
) -> Result<DecayReport> {
    if i_max == 0 {
        return Err(Error::Precondition("decay bound needs i >= 1".into()));
    }
    let lambda = map.lambda();
    let mut checks = Vec::new();
    let mut violations = 0;
    let mut max_ratio = 0.0f64;
    for h_id in 0..=n_h {
        let h = if h_id == 0 {
            GridFn::constant(n_cells, 1.0)
        } else {
            random_bv(seed.wrapping_add(h_id as u64), n_cells)
        };
        let hsup = h.sup_norm();
        for m in 1..=m_max {
            let mut t = h.clone();
            for i in 1..=i_max {
                t = apply_lm(map, m, &t)?;
                let measured = t.sup_norm();
                let bound = bounds.m_sup * lambda.powi(-(i as i32) * m) * hsup + 1e-9;
                if measured > bound {
                    violations += 1;
                }
                max_ratio = max_ratio.max(measured / bound);
                checks.push(DecayCheck {
                    i,
                    m,
                    h_id,
                    measured,
                    bound,
                });
            }
        }
    }
    Ok(DecayReport {
        checks,
        violations,
        max_ratio,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sample;

    const N: usize = 2048;

    #[test]
    fn tent_fixes_one() {
        let map = sample::tent();
        let one = GridFn::constant(N, 1.0);
        let l1 = apply_l(&map, &one).unwrap();
        assert!(l1.sub(&one).unwrap().sup_norm() < 1e-12);
        assert!(l1.jumps().is_empty());
    }

    #[test]
    fn skew_tent_fixes_one() {
        let map = sample::skew_tent(0.3);
        let one = GridFn::constant(N, 1.0);
        let l1 = apply_l(&map, &one).unwrap();
        assert!(l1.sub(&one).unwrap().sup_norm() < 1e-12);
    }

    #[test]
    fn markov_tent_one_step_jump() {
        let s = std::f64::consts::SQRT_2;
        let map = sample::markov_tent(s);
        let one = GridFn::constant(N, 1.0);
        let l1 = apply_l(&map, &one).unwrap();
        // sqrt(2) * indicator([0, sqrt(2)/2]).
        assert!((l1.evaluate(0.3) - s).abs() < 1e-10);
        assert!(l1.evaluate(0.9).abs() < 1e-10);
        assert_eq!(l1.jumps().len(), 1);
        assert!((l1.jumps()[0].location - s / 2.0).abs() < 1e-12);
        assert!((l1.jumps()[0].magnitude - s).abs() < 1e-10);
    }

    #[test]
    fn weighted_cancellation_on_tent() {
        let map = sample::tent();
        let one = GridFn::constant(N, 1.0);
        let t = apply_lm(&map, 1, &one).unwrap();
        assert!(t.sup_norm() < 1e-14);
    }

    #[test]
    fn weighted_skew_constant() {
        let a = 0.3;
        let map = sample::skew_tent(a);
        let one = GridFn::constant(N, 1.0);
        let t = apply_lm(&map, 1, &one).unwrap();
        let expect = a * a - (1.0 - a) * (1.0 - a);
        assert!((t.evaluate(0.4) - expect).abs() < 1e-12);
        let z = apply_lm(&map, 3, &GridFn::constant(N, 0.0)).unwrap();
        assert!(z.sup_norm() == 0.0);
    }

    #[test]
    fn power_identity_and_fixed_point() {
        let map = sample::tent();
        let h = sample::random_bv(3, N);
        let p0 = apply_l_power(&map, 0, &h, PowerVariant::Preimage).unwrap();
        assert!(p0.max_abs_diff(&h) == 0.0);
        let one = GridFn::constant(N, 1.0);
        let p7 = apply_l_power(&map, 7, &one, PowerVariant::Preimage).unwrap();
        assert!(p7.sub(&one).unwrap().sup_norm() < 1e-11);
    }

    #[test]
    fn integral_preserved_and_positive_and_linear() {
        for map in [
            sample::tent(),
            sample::skew_tent(0.3),
            sample::markov_tent(std::f64::consts::SQRT_2),
            sample::tent_perturbed_default(),
        ] {
            for seed in 0..6u64 {
                let h = sample::random_bv(seed, N);
                let lh = apply_l(&map, &h).unwrap();
                let drift = (lh.integral() - h.integral()).abs();
                assert!(drift <= 1e-10 * h.bv_norm(), "drift {drift:.3e}");

                // Positivity on a shifted-positive version.
                let hp = GridFn::combine(
                    &h,
                    &GridFn::constant(N, 1.0),
                    crate::bv::CombineOp::Add,
                    1.0,
                    h.sup_norm() + 0.1,
                    false,
                )
                .unwrap();
                let lp = apply_l(&map, &hp).unwrap();
                let min = lp.values().iter().fold(f64::INFINITY, |m, v| m.min(*v));
                // Exactly zero cell averages cancel to rounding noise at
                // jump cells; the floor mirrors the density invariant.
                assert!(min >= -1e-12 * hp.sup_norm(), "negative value {min:.3e}");

                // Linearity against a second function sharing the jump
                // locations, so both sides resolve on identical geometry.
                let locs: Vec<f64> = h.jumps().iter().map(|j| j.location).collect();
                let g = sample::random_bv_at(seed + 50, N, &locs);
                let combo =
                    GridFn::combine(&h, &g, crate::bv::CombineOp::Add, 0.7, -1.3, false).unwrap();
                let left = apply_l(&map, &combo).unwrap();
                let right = GridFn::combine(
                    &apply_l(&map, &h).unwrap(),
                    &apply_l(&map, &g).unwrap(),
                    crate::bv::CombineOp::Add,
                    0.7,
                    -1.3,
                    false,
                )
                .unwrap();
                assert!(left.max_abs_diff(&right) <= 1e-12 * h.bv_norm().max(g.bv_norm()));
            }
        }
    }

    #[test]
    fn pointwise_oracle_agreement() {
        use crate::oracles::pointwise_transfer;
        let map = sample::tent_perturbed_default();
        let hf = |x: f64| 0.5 + 0.3 * (2.0 * x - 0.3).cos();
        let h = GridFn::from_fn(4096, hf);
        for (m, i) in [(0i32, 1usize), (1, 2), (2, 1), (0, 3)] {
            let mut t = h.clone();
            for _ in 0..i {
                t = apply_lm(&map, m, &t).unwrap();
            }
            for x in [0.234, 0.456, 0.678] {
                let oracle = pointwise_transfer(&map, m, &hf, x, i).unwrap();
                let grid = t.evaluate(x);
                assert!(
                    (oracle - grid).abs() < 1e-4,
                    "m={m} i={i} x={x}: {oracle} vs {grid}"
                );
            }
        }
    }

    #[test]
    fn ulam_conserves_mass_and_fixes_uniform() {
        let map = sample::skew_tent(0.3);
        let matrix = UlamMatrix::build(&map, 1024).unwrap();
        let u = vec![1.0; 1024];
        let v = matrix.apply(&u);
        for x in &v {
            assert!((x - 1.0).abs() < 1e-12);
        }
        let h: Vec<f64> = (0..1024).map(|i| (i as f64 * 0.01).sin().abs()).collect();
        let v = matrix.apply(&h);
        let m0: f64 = h.iter().sum();
        let m1: f64 = v.iter().sum();
        assert!((m0 - m1).abs() < 1e-9 * m0);
    }

    #[test]
    fn ulam_cache_roundtrip() {
        let map = sample::tent();
        let dir = std::env::temp_dir().join("peum-test-cache");
        let _ = std::fs::remove_dir_all(&dir);
        let a = UlamMatrix::load_or_build(&map, 256, Some(&dir)).unwrap();
        let path = UlamMatrix::cache_path(&dir, map.config_hash(), 256);
        assert!(path.exists());
        let b = UlamMatrix::load_or_build(&map, 256, Some(&dir)).unwrap();
        assert_eq!(a.nnz(), b.nnz());
        let u: Vec<f64> = (0..256).map(|i| (i as f64).cos()).collect();
        assert_eq!(a.apply(&u), b.apply(&u));
        let _ = std::fs::remove_dir_all(&dir);
    }

    #[test]
    fn theta_of_tent_is_half() {
        let map = sample::tent();
        let theta = estimate_theta(&map, 8, 0, 1024).unwrap();
        assert!(theta <= 0.51, "theta = {theta}");
        assert!(theta > 0.3, "theta = {theta}");
    }

    #[test]
    fn decay_bounds_hold() {
        let map = sample::skew_tent(0.3);
        let bounds = OperatorBounds::fit(&map, 0, 1024).unwrap();
        let report = verify_decay_bounds(&map, &bounds, 5, 2, 4, 1, 1024).unwrap();
        assert_eq!(report.violations, 0, "max ratio {}", report.max_ratio);
    }

    #[test]
    fn lasota_yorke_variation_fit_holds() {
        let map = sample::tent_perturbed_default();
        let bounds = OperatorBounds::fit(&map, 0, 1024).unwrap();
        for m in 1..=3i32 {
            for i in 1..=6usize {
                let v = var_inv_dfi_m(&map, i, m, 1024);
                let bound = bounds.c1 * bounds.lambda_bar1.powi(-(i as i32) * m);
                assert!(v <= bound + 1e-12, "i={i} m={m}: {v} > {bound}");
            }
        }
    }
}
