//! Piecewise expanding unimodal maps of `[0,1]`: two monotone expanding
//! branches meeting at a critical point `c`, with closed-form one-sided
//! derivatives up to the declared smoothness order.
//!
//! Branches are closed-form only (linear, polynomial, or a perturbed-tent
//! profile); this is what makes exact higher derivatives, and hence the
//! nonlinearity density `xi = D2f/Df` and its derivatives, available to the
//! series evaluators.

use crate::error::{Error, Result};
use serde::{Deserialize, Serialize};

/// Number of sample points per branch used by construction-time validation.
const VALIDATION_SAMPLES: usize = 10_000;
/// Continuity tolerance at the critical point.
const CONTINUITY_TOL: f64 = 1e-12;
/// The orbit is declared (pre-)periodic when it returns this close to `c`.
const PERIODIC_TOL: f64 = 1e-10;
/// Default absolute tolerance for preimage roots.
pub const DEFAULT_ROOT_TOL: f64 = 1e-12;

/// Which one-sided limit to take where a quantity is discontinuous (only the
/// critical point, for branch derivatives). `Midpoint` averages both sides.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Side {
    Left,
    Right,
    Midpoint,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Orientation {
    /// `f` has a maximum at `c` (left branch increasing, right decreasing).
    MaxAtC,
    /// `f` has a minimum at `c`.
    MinAtC,
}

/// Perturbation profile for the `TentPerturbed` branch kind.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Shape {
    /// `sin(pi u)`
    SinePi,
    /// `sin(2 pi u)`
    Sine2Pi,
}

impl Shape {
    /// `d`-th derivative of the profile at `u` (`d = 0` is the value).
    fn deriv(self, u: f64, d: usize) -> f64 {
        let (omega, phase) = match self {
            Shape::SinePi => (std::f64::consts::PI, 0.0),
            Shape::Sine2Pi => (2.0 * std::f64::consts::PI, 0.0),
        };
        omega.powi(d as i32) * (omega * u + phase + d as f64 * std::f64::consts::FRAC_PI_2).sin()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum BranchKind {
    Linear {
        slope: f64,
        intercept: f64,
    },
    /// Coefficients in ascending powers of `x`.
    Polynomial {
        coeffs: Vec<f64>,
    },
    /// `s*u + eps*shape(u)` with `u = x` (ascending) or `u = 1 - x`
    /// (descending mirror).
    TentPerturbed {
        base_slope: f64,
        eps: f64,
        shape: Shape,
        descending: bool,
    },
}

/// One smooth monotone branch of the map, together with its closed domain
/// and declared smoothness order (the `k+1` available derivatives).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BranchSpec {
    pub kind: BranchKind,
    pub domain: (f64, f64),
    pub smoothness_order: usize,
}

impl BranchSpec {
    pub fn value(&self, x: f64) -> f64 {
        match &self.kind {
            BranchKind::Linear { slope, intercept } => slope * x + intercept,
            BranchKind::Polynomial { coeffs } => {
                coeffs.iter().rev().fold(0.0, |acc, &a| acc * x + a)
            }
            BranchKind::TentPerturbed {
                base_slope,
                eps,
                shape,
                descending,
            } => {
                let u = if *descending { 1.0 - x } else { x };
                base_slope * u + eps * shape.deriv(u, 0)
            }
        }
    }

    /// `order`-th derivative (`order >= 1`). Errors above the declared
    /// smoothness even when the closed form would extend further.
    pub fn deriv(&self, x: f64, order: usize) -> Result<f64> {
        if order == 0 {
            return Ok(self.value(x));
        }
        if order > self.smoothness_order {
            return Err(Error::SmoothnessExceeded {
                order,
                smoothness: self.smoothness_order,
            });
        }
        Ok(match &self.kind {
            BranchKind::Linear { slope, .. } => {
                if order == 1 {
                    *slope
                } else {
                    0.0
                }
            }
            BranchKind::Polynomial { coeffs } => {
                // d^n/dx^n sum a_k x^k = sum_{k>=n} a_k k!/(k-n)! x^{k-n}
                let mut acc = 0.0;
                for (k, &a) in coeffs.iter().enumerate().rev() {
                    if k < order {
                        break;
                    }
                    let mut fall = 1.0;
                    for j in 0..order {
                        fall *= (k - j) as f64;
                    }
                    acc = acc * x + a * fall;
                }
                acc
            }
            BranchKind::TentPerturbed {
                base_slope,
                eps,
                shape,
                descending,
            } => {
                let (u, sgn) = if *descending {
                    (1.0 - x, if order % 2 == 0 { 1.0 } else { -1.0 })
                } else {
                    (x, 1.0)
                };
                let lin = if order == 1 { *base_slope } else { 0.0 };
                sgn * (lin + eps * shape.deriv(u, order))
            }
        })
    }

    fn is_increasing(&self) -> Result<bool> {
        let (lo, hi) = self.domain;
        let d = self.deriv(0.5 * (lo + hi), 1)?;
        Ok(d > 0.0)
    }
}

/// Flags set by [`PeumMap::critical_orbit`].
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct OrbitFlags {
    /// Step at which the orbit returned to `c` (orbit truncated there).
    pub periodic_hit: Option<usize>,
    /// First step from which the orbit sits on a fixed point of `f`.
    pub fixed_from: Option<usize>,
    /// Steps whose orbit point lies on the domain boundary `{0, 1}`.
    pub boundary_hits: Vec<usize>,
}

/// Forward orbit `c_j = f^j(c)` together with the one-sided derivative
/// products `Df^j_-(c)`, `Df^j_+(c)` along it.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CriticalOrbit {
    /// `points[j-1] = c_j`.
    pub points: Vec<f64>,
    /// `prod_left[j-1] = Df^j_-(c)` (signed).
    pub prod_left: Vec<f64>,
    /// `prod_right[j-1] = Df^j_+(c)` (signed).
    pub prod_right: Vec<f64>,
    pub flags: OrbitFlags,
}

impl CriticalOrbit {
    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }
}

/// A validated piecewise expanding unimodal map.
///
/// Immutable after construction; every operation is pure.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PeumMap {
    branch1: BranchSpec,
    branch2: BranchSpec,
    c: f64,
    lambda: f64,
    max_slope: f64,
    orientation: Orientation,
    overlap: f64,
    config_hash: String,
}

impl PeumMap {
    /// Build and validate a map from its two branches. `overlap` is the
    /// one-sided extension of each branch past `c` used only to define
    /// one-sided limits.
    pub fn new(branch1: BranchSpec, branch2: BranchSpec, c: f64, overlap: f64) -> Result<Self> {
        if !(0.0 < c && c < 1.0) {
            return Err(Error::InvalidMap(format!("critical point {c} not in (0,1)")));
        }
        if branch1.smoothness_order < 2 || branch2.smoothness_order < 2 {
            return Err(Error::InvalidMap("smoothness order must be >= 2".into()));
        }
        let v1 = branch1.value(c);
        let v2 = branch2.value(c);
        if (v1 - v2).abs() > CONTINUITY_TOL {
            return Err(Error::InvalidMap(format!(
                "branches disagree at c: f1(c)={v1}, f2(c)={v2}"
            )));
        }

        // Slope statistics over the half-domains [0,c] and [c,1]; the
        // overlap extensions only need |Df| > 1 and a consistent sign.
        let mut lambda = f64::INFINITY;
        let mut max_slope: f64 = 0.0;
        for (branch, lo, hi) in [(&branch1, 0.0, c), (&branch2, c, 1.0)] {
            let mut sign = 0.0;
            for i in 0..=VALIDATION_SAMPLES {
                let x = lo + (hi - lo) * i as f64 / VALIDATION_SAMPLES as f64;
                let d = branch.deriv(x, 1)?;
                if sign == 0.0 {
                    sign = d.signum();
                } else if d.signum() != sign {
                    return Err(Error::InvalidMap(
                        "branch derivative changes sign (not monotone)".into(),
                    ));
                }
                lambda = lambda.min(d.abs());
                max_slope = max_slope.max(d.abs());
                let v = branch.value(x);
                if !(-1e-9..=1.0 + 1e-9).contains(&v) {
                    return Err(Error::InvalidMap(format!(
                        "branch leaves [0,1]: f({x}) = {v}"
                    )));
                }
            }
        }
        if lambda <= 1.0 {
            return Err(Error::InvalidMap(format!(
                "map not uniformly expanding: inf |Df| = {lambda}"
            )));
        }
        // Overlap extensions must stay monotone and expanding too.
        for (branch, lo, hi) in [
            (&branch1, c, (c + overlap).min(branch1.domain.1)),
            (&branch2, (c - overlap).max(branch2.domain.0), c),
        ] {
            for i in 0..=64 {
                let x = lo + (hi - lo) * i as f64 / 64.0;
                if branch.deriv(x, 1)?.abs() <= 1.0 {
                    return Err(Error::InvalidMap(
                        "branch not expanding on overlap extension".into(),
                    ));
                }
            }
        }

        let d1 = branch1.deriv(c, 1)?;
        let d2 = branch2.deriv(c, 1)?;
        let orientation = if d1 > 0.0 && d2 < 0.0 {
            Orientation::MaxAtC
        } else if d1 < 0.0 && d2 > 0.0 {
            Orientation::MinAtC
        } else {
            return Err(Error::InvalidMap(format!(
                "one-sided derivatives at c have signs {} / {}; map is not unimodal",
                d1, d2
            )));
        };

        let mut map = PeumMap {
            branch1,
            branch2,
            c,
            lambda,
            max_slope,
            orientation,
            overlap,
            config_hash: String::new(),
        };
        map.config_hash = crate::map::hash_of_map(&map);
        Ok(map)
    }

    pub fn c(&self) -> f64 {
        self.c
    }

    /// `inf_{x != c} |Df(x)|` over the half-domains.
    pub fn lambda(&self) -> f64 {
        self.lambda
    }

    /// `sup |Df(x)|` over the half-domains.
    pub fn max_slope(&self) -> f64 {
        self.max_slope
    }

    pub fn orientation(&self) -> Orientation {
        self.orientation
    }

    pub fn overlap(&self) -> f64 {
        self.overlap
    }

    pub fn branch(&self, id: usize) -> &BranchSpec {
        if id == 0 {
            &self.branch1
        } else {
            &self.branch2
        }
    }

    /// Minimum declared smoothness of the two branches.
    pub fn smoothness(&self) -> usize {
        self.branch1.smoothness_order.min(self.branch2.smoothness_order)
    }

    /// Hash of the map parameters; embedded in output artifacts and used as
    /// the Ulam-matrix cache key.
    pub fn config_hash(&self) -> &str {
        &self.config_hash
    }

    pub(crate) fn set_config_hash(&mut self, h: String) {
        self.config_hash = h;
    }

    /// Whether both branches are linear.
    pub fn is_piecewise_linear(&self) -> bool {
        matches!(self.branch1.kind, BranchKind::Linear { .. })
            && matches!(self.branch2.kind, BranchKind::Linear { .. })
    }

    /// `f(x)`; the left branch wins at `x = c` (both agree there).
    pub fn eval(&self, x: f64) -> Result<f64> {
        if !(0.0..=1.0).contains(&x) {
            return Err(Error::Domain(x));
        }
        let v = if x <= self.c {
            self.branch1.value(x)
        } else {
            self.branch2.value(x)
        };
        Ok(v.clamp(0.0, 1.0))
    }

    fn branch_for(&self, x: f64, side: Side) -> &BranchSpec {
        if x < self.c {
            &self.branch1
        } else if x > self.c {
            &self.branch2
        } else {
            match side {
                Side::Left => &self.branch1,
                Side::Right => &self.branch2,
                // Caller averages; pick either for the shared value path.
                Side::Midpoint => &self.branch1,
            }
        }
    }

    /// One-sided derivative of the active branch; at `x = c` with
    /// `Side::Midpoint` the average of the two one-sided values.
    pub fn deriv(&self, x: f64, order: usize, side: Side) -> Result<f64> {
        if !(0.0..=1.0).contains(&x) {
            return Err(Error::Domain(x));
        }
        if x == self.c && side == Side::Midpoint {
            let l = self.branch1.deriv(x, order)?;
            let r = self.branch2.deriv(x, order)?;
            return Ok(0.5 * (l + r));
        }
        self.branch_for(x, side).deriv(x, order)
    }

    /// The nonlinearity density `xi = D2f / Df`, with the same side
    /// convention as [`PeumMap::deriv`]; the midpoint value averages the two
    /// one-sided `xi` limits.
    pub fn xi(&self, x: f64, side: Side) -> Result<f64> {
        self.xi_deriv(x, 0, side)
    }

    /// `d`-th derivative of `xi` (needs branch smoothness `>= d + 2`).
    pub fn xi_deriv(&self, x: f64, d: usize, side: Side) -> Result<f64> {
        if !(0.0..=1.0).contains(&x) {
            return Err(Error::Domain(x));
        }
        if x == self.c && side == Side::Midpoint {
            let l = xi_deriv_of_branch(&self.branch1, x, d)?;
            let r = xi_deriv_of_branch(&self.branch2, x, d)?;
            return Ok(0.5 * (l + r));
        }
        xi_deriv_of_branch(self.branch_for(x, side), x, d)
    }

    /// All `y` with `f(y) = x`, each within `tol` of the true root, tagged
    /// with the branch index (0 or 1). The two branches produce at most one
    /// preimage each; coincident roots at the apex are deduplicated.
    pub fn preimages(&self, x: f64, tol: f64) -> Result<Vec<(f64, usize)>> {
        if !(0.0..=1.0).contains(&x) {
            return Err(Error::Domain(x));
        }
        let mut out = Vec::with_capacity(2);
        for (id, lo, hi) in [(0usize, 0.0, self.c), (1usize, self.c, 1.0)] {
            if let Some(y) = self.branch_preimage(id, x, lo, hi, tol)? {
                out.push((y, id));
            }
        }
        if out.len() == 2 && (out[0].0 - out[1].0).abs() <= tol.max(1e-14) {
            out.truncate(1);
        }
        Ok(out)
    }

    /// Preimage of `x` under branch `id` restricted to `[lo, hi]`, or `None`
    /// when `x` is outside the branch range over that interval.
    pub fn branch_inverse(
        &self,
        id: usize,
        x: f64,
        lo: f64,
        hi: f64,
        tol: f64,
    ) -> Result<Option<f64>> {
        self.branch_preimage(id, x, lo, hi, tol)
    }

    fn branch_preimage(
        &self,
        id: usize,
        x: f64,
        lo: f64,
        hi: f64,
        tol: f64,
    ) -> Result<Option<f64>> {
        let branch = self.branch(id);
        if let BranchKind::Linear { slope, intercept } = branch.kind {
            let y = (x - intercept) / slope;
            let pad = tol.max(1e-13);
            if y < lo - pad || y > hi + pad {
                return Ok(None);
            }
            return Ok(Some(y.clamp(lo, hi)));
        }
        let (flo, fhi) = (branch.value(lo), branch.value(hi));
        let (rlo, rhi) = if flo <= fhi { (flo, fhi) } else { (fhi, flo) };
        let pad = 1e-12;
        if x < rlo - pad || x > rhi + pad {
            return Ok(None);
        }
        let x = x.clamp(rlo, rhi);
        // Bracketed bisection to get close, then Newton to polish.
        let increasing = flo <= fhi;
        let (mut a, mut b) = (lo, hi);
        for _ in 0..60 {
            let m = 0.5 * (a + b);
            let fm = branch.value(m);
            let below = if increasing { fm < x } else { fm > x };
            if below {
                a = m;
            } else {
                b = m;
            }
            if b - a < 1e-9 {
                break;
            }
        }
        let mut y = 0.5 * (a + b);
        for _ in 0..40 {
            let f = branch.value(y) - x;
            let d = branch.deriv(y, 1)?;
            if d.abs() < 1e-12 {
                return Err(Error::RootFind {
                    branch: id,
                    reason: format!("derivative vanished near y={y}"),
                });
            }
            let step = f / d;
            y = (y - step).clamp(lo, hi);
            if step.abs() <= tol * 0.5 {
                break;
            }
        }
        if (branch.value(y) - x).abs() > tol.max(1e-10) * self.max_slope {
            return Err(Error::RootFind {
                branch: id,
                reason: format!("no convergence at x={x}"),
            });
        }
        Ok(Some(y))
    }

    /// Forward orbit of the critical point with one-sided derivative
    /// products. Truncates and flags when the orbit returns to `c`.
    pub fn critical_orbit(&self, n: usize) -> Result<CriticalOrbit> {
        let mut points = Vec::with_capacity(n);
        let mut prod_left = Vec::with_capacity(n);
        let mut prod_right = Vec::with_capacity(n);
        let mut flags = OrbitFlags::default();

        let mut x = self.c;
        let mut pl = 1.0;
        let mut pr = 1.0;
        for j in 1..=n {
            let (dl, dr) = if j == 1 {
                (
                    self.deriv(self.c, 1, Side::Left)?,
                    self.deriv(self.c, 1, Side::Right)?,
                )
            } else {
                // Away from c the derivative is two-sided; the approach
                // direction picks the side, which only matters at c itself.
                let side_l = if pl > 0.0 { Side::Right } else { Side::Left };
                let side_r = if pr > 0.0 { Side::Right } else { Side::Left };
                (self.deriv(x, 1, side_l)?, self.deriv(x, 1, side_r)?)
            };
            pl *= dl;
            pr *= dr;
            let next = self.eval(x)?;
            points.push(next);
            prod_left.push(pl);
            prod_right.push(pr);
            if next == 0.0 || next == 1.0 {
                flags.boundary_hits.push(j);
            }
            if (next - self.c).abs() < PERIODIC_TOL {
                flags.periodic_hit = Some(j);
                break;
            }
            if (next - x).abs() < 1e-14 && j > 1 && flags.fixed_from.is_none() {
                flags.fixed_from = Some(j - 1);
            }
            x = next;
        }
        Ok(CriticalOrbit {
            points,
            prod_left,
            prod_right,
            flags,
        })
    }
}

/// Derivatives of `xi = f''/f'` for a single branch via formal power-series
/// division of the derivative jets.
fn xi_deriv_of_branch(branch: &BranchSpec, x: f64, d: usize) -> Result<f64> {
    // Jet coefficients a_r = f^(r+2)(x)/r!, b_r = f^(r+1)(x)/r!.
    let mut fact = 1.0;
    let mut a = Vec::with_capacity(d + 1);
    let mut b = Vec::with_capacity(d + 1);
    for r in 0..=d {
        if r > 0 {
            fact *= r as f64;
        }
        a.push(branch.deriv(x, r + 2)? / fact);
        b.push(branch.deriv(x, r + 1)? / fact);
    }
    // q = a / b as formal series.
    let mut q = vec![0.0; d + 1];
    for r in 0..=d {
        let mut s = a[r];
        for k in 1..=r {
            s -= b[k] * q[r - k];
        }
        q[r] = s / b[0];
    }
    let mut fact_d = 1.0;
    for r in 2..=d {
        fact_d *= r as f64;
    }
    Ok(if d == 0 { q[0] } else { q[d] * fact_d })
}

/// Stable hash of the map's defining data.
fn hash_of_map(map: &PeumMap) -> String {
    use sha2::{Digest, Sha256};
    let blob = serde_json::json!({
        "branch1": &map.branch1,
        "branch2": &map.branch2,
        "c": map.c,
        "overlap": map.overlap,
    });
    let mut hasher = Sha256::new();
    hasher.update(blob.to_string().as_bytes());
    let out = hasher.finalize();
    out.iter().take(8).map(|b| format!("{b:02x}")).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sample;

    #[test]
    fn tent_eval() {
        let m = sample::tent();
        assert_eq!(m.eval(0.5).unwrap(), 1.0);
        assert_eq!(m.eval(0.25).unwrap(), 0.5);
        let sk = sample::skew_tent(0.3);
        assert!((sk.eval(0.3).unwrap() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn tent_derivs() {
        let m = sample::tent();
        assert_eq!(m.deriv(0.25, 1, Side::Midpoint).unwrap(), 2.0);
        assert_eq!(m.deriv(0.5, 1, Side::Midpoint).unwrap(), 0.0);
        let sk = sample::skew_tent(0.3);
        let d = sk.deriv(0.5, 1, Side::Midpoint).unwrap();
        assert!((d - (-1.0 / 0.7)).abs() < 1e-12, "got {d}");
    }

    #[test]
    fn xi_vanishes_on_linear_maps() {
        let m = sample::skew_tent(0.3);
        for x in [0.1, 0.3, 0.7, 0.99] {
            assert_eq!(m.xi(x, Side::Midpoint).unwrap(), 0.0);
        }
        let flat = sample::tent_perturbed(1.8, 0.0, Shape::SinePi);
        assert_eq!(flat.xi(0.3, Side::Midpoint).unwrap(), 0.0);
    }

    #[test]
    fn xi_matches_finite_differences() {
        let m = sample::tent_perturbed(1.8, 0.05, Shape::SinePi);
        let h = 1e-6;
        for x in [0.1, 0.3, 0.45] {
            let fd = (m.deriv(x + h, 1, Side::Midpoint).unwrap()
                - m.deriv(x - h, 1, Side::Midpoint).unwrap())
                / (2.0 * h)
                / m.deriv(x, 1, Side::Midpoint).unwrap();
            let xi = m.xi(x, Side::Midpoint).unwrap();
            assert!((fd - xi).abs() < 1e-6, "x={x}: fd {fd} vs xi {xi}");
        }
        // xi' against finite differences of xi.
        for x in [0.2, 0.4] {
            let fd = (m.xi(x + h, Side::Midpoint).unwrap() - m.xi(x - h, Side::Midpoint).unwrap())
                / (2.0 * h);
            let xd = m.xi_deriv(x, 1, Side::Midpoint).unwrap();
            assert!((fd - xd).abs() < 1e-5, "x={x}: fd {fd} vs xi' {xd}");
        }
    }

    #[test]
    fn preimages_basic() {
        let m = sample::tent();
        let p = m.preimages(0.5, 1e-12).unwrap();
        assert_eq!(p.len(), 2);
        assert!((p[0].0 - 0.25).abs() < 1e-12 && p[0].1 == 0);
        assert!((p[1].0 - 0.75).abs() < 1e-12 && p[1].1 == 1);
        // Apex: both branches give y = 0.5, deduplicated.
        let p = m.preimages(1.0, 1e-12).unwrap();
        assert_eq!(p.len(), 1);
        assert!((p[0].0 - 0.5).abs() < 1e-12);

        let sk = sample::skew_tent(0.3);
        let p = sk.preimages(0.5, 1e-12).unwrap();
        assert!((p[0].0 - 0.15).abs() < 1e-12);
        assert!((p[1].0 - 0.65).abs() < 1e-12);
    }

    #[test]
    fn preimages_roundtrip_nonlinear() {
        let m = sample::tent_perturbed(1.8, 0.05, Shape::SinePi);
        let tol = 1e-12;
        for i in 0..1000 {
            let x = (i as f64 + 0.5) / 1000.0 * m.eval(m.c()).unwrap();
            for (y, _) in m.preimages(x, tol).unwrap() {
                assert!((m.eval(y).unwrap() - x).abs() <= 1e-10, "x={x}, y={y}");
            }
        }
    }

    #[test]
    fn critical_orbit_tent() {
        let m = sample::tent();
        let orbit = m.critical_orbit(3).unwrap();
        assert_eq!(orbit.points, vec![1.0, 0.0, 0.0]);
        assert!(orbit.flags.fixed_from.is_some());
        assert_eq!(orbit.flags.boundary_hits[0], 1);
        // One-sided products: Df_- = 2, Df_+ = -2 at c, then slope -2 at 1,
        // slope 2 at 0.
        assert_eq!(orbit.prod_left[0], 2.0);
        assert_eq!(orbit.prod_right[0], -2.0);
        assert_eq!(orbit.prod_left[1], -4.0);
        assert_eq!(orbit.prod_right[1], 4.0);

        let sk = sample::skew_tent(0.3);
        let o = sk.critical_orbit(2).unwrap();
        assert!((o.points[0] - 1.0).abs() < 1e-12);
        assert!(o.points[1].abs() < 1e-12);
    }

    #[test]
    fn critical_orbit_markov_matches_direct_iteration() {
        let m = sample::markov_tent(std::f64::consts::SQRT_2);
        let orbit = m.critical_orbit(4).unwrap();
        // Direct iteration oracle.
        let f = |x: f64| std::f64::consts::SQRT_2 * x.min(1.0 - x);
        let mut x = 0.5;
        for j in 0..4 {
            x = f(x);
            assert!((orbit.points[j] - x).abs() < 1e-12, "j={j}");
        }
        // The orbit reaches the fixed point 2 - sqrt(2).
        assert!((orbit.points[2] - (2.0 - std::f64::consts::SQRT_2)).abs() < 1e-12);
        assert!((orbit.points[3] - orbit.points[2]).abs() < 1e-12);
    }

    #[test]
    fn one_sided_products_grow_at_least_like_lambda() {
        let m = sample::tent_perturbed(1.8, 0.05, Shape::SinePi);
        let orbit = m.critical_orbit(20).unwrap();
        for j in 1..=orbit.len() {
            let bound = m.lambda().powi(j as i32) * (1.0 - 1e-9);
            assert!(orbit.prod_left[j - 1].abs() >= bound, "j={j}");
            assert!(orbit.prod_right[j - 1].abs() >= bound, "j={j}");
        }
    }

    #[test]
    fn validation_rejects_non_expanding() {
        let b1 = BranchSpec {
            kind: BranchKind::Linear { slope: 0.9, intercept: 0.0 },
            domain: (0.0, 0.55),
            smoothness_order: 6,
        };
        let b2 = BranchSpec {
            kind: BranchKind::Linear { slope: -0.9, intercept: 0.9 },
            domain: (0.45, 1.0),
            smoothness_order: 6,
        };
        assert!(PeumMap::new(b1, b2, 0.5, 0.05).is_err());
    }

    #[test]
    fn validation_rejects_discontinuity() {
        let b1 = BranchSpec {
            kind: BranchKind::Linear { slope: 2.0, intercept: 0.0 },
            domain: (0.0, 0.55),
            smoothness_order: 6,
        };
        let b2 = BranchSpec {
            kind: BranchKind::Linear { slope: -2.0, intercept: 1.9 },
            domain: (0.45, 1.0),
            smoothness_order: 6,
        };
        assert!(PeumMap::new(b1, b2, 0.5, 0.05).is_err());
    }

    #[test]
    fn deriv_order_above_smoothness_errors() {
        let m = sample::tent();
        assert!(m.deriv(0.25, 1 + m.smoothness(), Side::Midpoint).is_err());
    }

    #[test]
    fn eval_outside_domain_errors() {
        let m = sample::tent();
        assert!(m.eval(-0.1).is_err());
        assert!(m.eval(1.1).is_err());
    }
}
