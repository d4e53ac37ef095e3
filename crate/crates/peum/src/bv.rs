//! Bounded-variation functions on `[0,1]` represented as a uniform grid of
//! cell-center samples plus an explicit list of jump records.
//!
//! Interpolation never crosses a jump: the jump locations split `(0,1)`
//! into pieces, samples are interpolated inside their piece only, and the
//! one-sided limits at a jump come from extrapolating the adjacent piece.
//! Internally the interpolant is a node polyline with a double node at each
//! jump, which makes evaluation, one-sided limits, the total variation and
//! the antiderivative all exact for the representation. Jumps are never
//! smeared onto the grid; locations and magnitudes stay exact, which is
//! what makes the jump-decay measurements along the critical orbit work.

use crate::error::{Error, Result};
use serde::{Deserialize, Serialize};

/// Jumps closer than this are coalesced into one record.
const LOC_MERGE_TOL: f64 = 1e-12;
/// Relative magnitude below which a jump record is dropped.
const MAG_PRUNE_REL: f64 = 1e-13;

/// A single jump: `magnitude` is the left limit minus the right limit.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct JumpRecord {
    pub location: f64,
    pub magnitude: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Interp {
    /// Cell-constant values (step at cell edges).
    PiecewiseConstant,
    /// Piecewise linear between cell centers within each inter-jump piece,
    /// with one-sided linear extrapolation at the jump boundaries and flat
    /// extension at 0 and 1.
    PiecewiseLinear,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CombineOp {
    Add,
    Mul,
}

/// Grid-sampled BV function with explicit jumps.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct GridFn {
    n_cells: usize,
    values: Vec<f64>,
    jumps: Vec<JumpRecord>,
    interp: Interp,
    /// Interpolant polyline; a jump contributes two nodes at the same `x`.
    nodes_x: Vec<f64>,
    nodes_v: Vec<f64>,
    /// Segment indices `k` (between nodes `k` and `k+1`) that realize a jump.
    jump_segs: Vec<usize>,
    /// Integral of the interpolant over `[0, nodes_x[k]]`.
    cum: Vec<f64>,
}

/// Sort, merge near-coincident locations, and prune sub-noise magnitudes;
/// `scale` sets the pruning floor.
pub fn normalize_jump_records(jumps: Vec<JumpRecord>, scale: f64) -> Vec<JumpRecord> {
    normalize_jumps(jumps, scale)
}

fn normalize_jumps(mut jumps: Vec<JumpRecord>, scale: f64) -> Vec<JumpRecord> {
    jumps.retain(|j| j.location > 0.0 && j.location < 1.0 && j.magnitude != 0.0);
    jumps.sort_by(|a, b| a.location.partial_cmp(&b.location).unwrap());
    let mut out: Vec<JumpRecord> = Vec::with_capacity(jumps.len());
    for j in jumps {
        match out.last_mut() {
            Some(last) if (j.location - last.location).abs() <= LOC_MERGE_TOL => {
                last.magnitude += j.magnitude;
            }
            _ => out.push(j),
        }
    }
    let floor = MAG_PRUNE_REL * scale.max(1.0);
    out.retain(|j| j.magnitude.abs() > floor);
    out
}

fn saltus_of(jumps: &[JumpRecord], x: f64) -> f64 {
    let mut s = 0.0;
    for j in jumps {
        if j.location > x {
            s += j.magnitude;
        } else if j.location == x {
            s += 0.5 * j.magnitude;
        }
    }
    s
}

fn cell_center(i: usize, n: usize) -> f64 {
    (i as f64 + 0.5) / n as f64
}

struct NodeBuilder {
    xs: Vec<f64>,
    vs: Vec<f64>,
    jump_segs: Vec<usize>,
}

impl NodeBuilder {
    fn push(&mut self, x: f64, v: f64) {
        self.xs.push(x);
        self.vs.push(v);
    }
}

/// Build the interpolant polyline from samples and jumps.
fn build_nodes(values: &[f64], jumps: &[JumpRecord], interp: Interp) -> NodeBuilder {
    let n = values.len();
    let mut bounds = Vec::with_capacity(jumps.len() + 2);
    bounds.push(0.0);
    bounds.extend(jumps.iter().map(|j| j.location));
    bounds.push(1.0);

    // Piece -> one-sided boundary values, filled per piece; empty pieces
    // inherit from a neighbor across the jump afterwards.
    #[derive(Clone)]
    struct Piece {
        lo: f64,
        hi: f64,
        first: usize,
        last: usize, // inclusive; first > last means empty
    }
    let mut pieces = Vec::with_capacity(bounds.len() - 1);
    for p in 0..bounds.len() - 1 {
        let (lo, hi) = (bounds[p], bounds[p + 1]);
        // Samples strictly inside (lo, hi); a sample whose cell contains a
        // bounding jump mixes both sides and is excluded from the trends.
        // Center x_i = (i + 0.5)/n > lo  <=>  i > lo*n - 0.5.
        let mut first = ((lo + LOC_MERGE_TOL) * n as f64 - 0.5).floor() as isize + 1;
        let mut last = ((hi - LOC_MERGE_TOL) * n as f64 - 0.5).ceil() as isize - 1;
        first = first.max(0);
        last = last.min(n as isize - 1);
        if p > 0 && first <= last && first == (lo * n as f64).floor() as isize {
            first += 1;
        }
        if p + 1 < bounds.len() - 1 && first <= last && last == (hi * n as f64).floor() as isize {
            last -= 1;
        }
        let (first, last) = if first > last {
            (1usize, 0usize) // empty marker
        } else {
            (first as usize, last as usize)
        };
        pieces.push(Piece { lo, hi, first, last });
    }

    // One-sided boundary values per piece.
    let mut lo_val = vec![f64::NAN; pieces.len()];
    let mut hi_val = vec![f64::NAN; pieces.len()];
    for (p, piece) in pieces.iter().enumerate() {
        if piece.first > piece.last {
            continue;
        }
        let i0 = piece.first;
        let i1 = piece.last;
        let x0 = cell_center(i0, n);
        let x1 = cell_center(i1, n);
        let outer_flat_lo = p == 0;
        let outer_flat_hi = p == pieces.len() - 1;
        if i0 == i1 {
            lo_val[p] = values[i0];
            hi_val[p] = values[i0];
        } else {
            match interp {
                Interp::PiecewiseLinear => {
                    let s_lo = (values[i0 + 1] - values[i0])
                        / (cell_center(i0 + 1, n) - x0);
                    let s_hi = (values[i1] - values[i1 - 1])
                        / (x1 - cell_center(i1 - 1, n));
                    lo_val[p] = if outer_flat_lo {
                        values[i0]
                    } else {
                        values[i0] + s_lo * (piece.lo - x0)
                    };
                    hi_val[p] = if outer_flat_hi {
                        values[i1]
                    } else {
                        values[i1] + s_hi * (piece.hi - x1)
                    };
                }
                Interp::PiecewiseConstant => {
                    lo_val[p] = values[i0];
                    hi_val[p] = values[i1];
                }
            }
        }
    }
    // Empty pieces: continue the neighbouring piece across the jump.
    for p in 0..pieces.len() {
        if !lo_val[p].is_nan() {
            continue;
        }
        let v = if p > 0 && !hi_val[p - 1].is_nan() {
            hi_val[p - 1] - jumps[p - 1].magnitude
        } else if p + 1 < pieces.len() && !lo_val[p + 1].is_nan() {
            lo_val[p + 1] + jumps[p].magnitude
        } else {
            0.0
        };
        lo_val[p] = v;
        hi_val[p] = v;
    }
    // Second sweep for runs of empty pieces.
    for p in 0..pieces.len() {
        if lo_val[p].is_nan() {
            let v = if p > 0 { hi_val[p - 1] - jumps[p - 1].magnitude } else { 0.0 };
            lo_val[p] = v;
            hi_val[p] = v;
        }
    }

    let mut nb = NodeBuilder {
        xs: Vec::with_capacity(n + 2 * jumps.len() + 2),
        vs: Vec::with_capacity(n + 2 * jumps.len() + 2),
        jump_segs: Vec::with_capacity(jumps.len()),
    };
    for (p, piece) in pieces.iter().enumerate() {
        if p > 0 {
            // Jump pair at the shared boundary.
            nb.jump_segs.push(nb.xs.len() - 1);
        }
        nb.push(piece.lo, lo_val[p]);
        if piece.first <= piece.last {
            match interp {
                Interp::PiecewiseLinear => {
                    for i in piece.first..=piece.last {
                        nb.push(cell_center(i, n), values[i]);
                    }
                }
                Interp::PiecewiseConstant => {
                    // Steps at interior cell edges.
                    for i in piece.first..=piece.last {
                        if i > piece.first {
                            let e = i as f64 / n as f64;
                            nb.push(e, values[i - 1]);
                            nb.push(e, values[i]);
                        }
                    }
                }
            }
        }
        nb.push(piece.hi, hi_val[p]);
    }
    nb
}

/// Nudge the two boundary nodes of each inter-jump piece so that the
/// interpolant integrates to the prescribed piece mass. The adjustment is a
/// local linear functional of the data; samples are never touched.
fn patch_piece_masses(nb: &mut NodeBuilder, jumps: &[JumpRecord], masses: &[f64]) {
    // Node index ranges per piece: piece p spans nodes
    // [start_p, end_p] where jump pair k sits between pieces k and k+1.
    let n_nodes = nb.xs.len();
    let mut starts = vec![0usize];
    for &k in &nb.jump_segs {
        starts.push(k + 1);
    }
    for (p, &start) in starts.iter().enumerate() {
        let end = if p + 1 < starts.len() {
            starts[p + 1] - 1
        } else {
            n_nodes - 1
        };
        if end <= start {
            continue;
        }
        let mut raw = 0.0;
        for k in start..end {
            let dx = nb.xs[k + 1] - nb.xs[k];
            if dx > 0.0 {
                raw += 0.5 * (nb.vs[k] + nb.vs[k + 1]) * dx;
            }
        }
        let defect = masses[p] - raw;
        if defect == 0.0 {
            continue;
        }
        // Sensitivity of the piece integral to its two boundary nodes.
        let g_lo = nb.xs[start + 1] - nb.xs[start];
        let g_hi = nb.xs[end] - nb.xs[end - 1];
        let w = if end - start == 1 {
            // Only the two boundary nodes: both move together.
            g_lo
        } else {
            0.5 * (g_lo + g_hi)
        };
        if w <= 0.0 {
            continue;
        }
        let mu = defect / w;
        nb.vs[start] += mu;
        nb.vs[end] += mu;
    }
    let _ = jumps;
}

impl GridFn {
    fn assemble(
        values: Vec<f64>,
        jumps: Vec<JumpRecord>,
        interp: Interp,
        piece_masses: Option<&[f64]>,
    ) -> Self {
        let n = values.len();
        assert!(n >= 2, "grid needs at least two cells");
        let mut nb = build_nodes(&values, &jumps, interp);
        if let Some(masses) = piece_masses {
            patch_piece_masses(&mut nb, &jumps, masses);
        }
        let mut cum = Vec::with_capacity(nb.xs.len());
        cum.push(0.0);
        for k in 1..nb.xs.len() {
            let dx = nb.xs[k] - nb.xs[k - 1];
            let add = if dx > 0.0 {
                0.5 * (nb.vs[k] + nb.vs[k - 1]) * dx
            } else {
                0.0
            };
            cum.push(cum[k - 1] + add);
        }
        GridFn {
            n_cells: n,
            values,
            jumps,
            interp,
            nodes_x: nb.xs,
            nodes_v: nb.vs,
            jump_segs: nb.jump_segs,
            cum,
        }
    }

    /// Build from cell averages of the continuous part plus the exact mass
    /// of the full function over every inter-jump piece (`jumps` must
    /// already be normalized via [`normalize_jump_records`]). The
    /// piece-boundary nodes are nudged so the interpolant reproduces each
    /// piece mass exactly; this is what makes repeated operator application
    /// conserve the integral to rounding.
    pub fn from_masses(
        reg: Vec<f64>,
        jumps: Vec<JumpRecord>,
        piece_masses: Vec<f64>,
        interp: Interp,
    ) -> Self {
        let n = reg.len();
        assert_eq!(piece_masses.len(), jumps.len() + 1);
        let values: Vec<f64> = (0..n)
            .map(|i| reg[i] + saltus_of(&jumps, cell_center(i, n)))
            .collect();
        Self::assemble(values, jumps, interp, Some(&piece_masses))
    }

    /// Build from samples of the full function `g` at cell centers.
    pub fn from_samples(values: Vec<f64>, jumps: Vec<JumpRecord>, interp: Interp) -> Self {
        let scale = values.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        let jumps = normalize_jumps(jumps, scale);
        Self::assemble(values, jumps, interp, None)
    }

    /// Build from samples of the continuous part; full values are
    /// reconstructed as `reg + saltus`.
    pub fn from_regular_parts(reg: Vec<f64>, jumps: Vec<JumpRecord>, interp: Interp) -> Self {
        let n = reg.len();
        let scale = reg.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        let jumps = normalize_jumps(jumps, scale);
        let values: Vec<f64> = (0..n)
            .map(|i| reg[i] + saltus_of(&jumps, cell_center(i, n)))
            .collect();
        Self::assemble(values, jumps, interp, None)
    }

    pub fn constant(n: usize, v: f64) -> Self {
        Self::from_samples(vec![v; n], Vec::new(), Interp::PiecewiseLinear)
    }

    /// Sample a closed-form function on the grid (no jumps).
    pub fn from_fn(n: usize, f: impl Fn(f64) -> f64) -> Self {
        let values = (0..n).map(|i| f(cell_center(i, n))).collect();
        Self::from_samples(values, Vec::new(), Interp::PiecewiseLinear)
    }

    /// The step function `H_l`: 1 before `l`, 1/2 at it, 0 after.
    pub fn step(n: usize, location: f64) -> Self {
        Self::from_regular_parts(
            vec![0.0; n],
            vec![JumpRecord {
                location,
                magnitude: 1.0,
            }],
            Interp::PiecewiseLinear,
        )
    }

    pub fn n_cells(&self) -> usize {
        self.n_cells
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn jumps(&self) -> &[JumpRecord] {
        &self.jumps
    }

    pub fn interp(&self) -> Interp {
        self.interp
    }

    pub fn cell_center(&self, i: usize) -> f64 {
        cell_center(i, self.n_cells)
    }

    /// Samples of the continuous part `g - saltus` at cell centers.
    pub fn regular_values(&self) -> Vec<f64> {
        (0..self.n_cells)
            .map(|i| self.values[i] - saltus_of(&self.jumps, self.cell_center(i)))
            .collect()
    }

    /// Whether cell `i` contains a jump or borders a cell that does.
    pub fn is_jump_adjacent(&self, i: usize) -> bool {
        let n = self.n_cells as f64;
        self.jumps.iter().any(|j| {
            let cell = (j.location * n).floor() as isize;
            (cell - i as isize).abs() <= 1
        })
    }

    /// Index of the last node with `nodes_x <= x`, stepping over the second
    /// member of a double node so the left limit is found first.
    fn seg_index(&self, x: f64) -> usize {
        let k = self.nodes_x.partition_point(|p| *p < x);
        k.min(self.nodes_x.len() - 1)
    }

    /// Value at `x`; exactly at a jump location this is the average of the
    /// one-sided limits.
    pub fn evaluate(&self, x: f64) -> f64 {
        let x = x.clamp(0.0, 1.0);
        let k = self.seg_index(x);
        if self.nodes_x[k] == x {
            // Possibly a double node: average all nodes at exactly x.
            let mut sum = self.nodes_v[k];
            let mut cnt = 1.0;
            let mut k2 = k + 1;
            while k2 < self.nodes_x.len() && self.nodes_x[k2] == x {
                sum += self.nodes_v[k2];
                cnt += 1.0;
                k2 += 1;
            }
            return sum / cnt;
        }
        // nodes_x[k-1] < ... <= x < nodes_x[k] cannot hold by construction
        // of partition_point: nodes_x[k] is the first node >= x.
        let hi = k;
        let lo = k - 1;
        let (x0, x1) = (self.nodes_x[lo], self.nodes_x[hi]);
        let (v0, v1) = (self.nodes_v[lo], self.nodes_v[hi]);
        if x1 <= x0 {
            return v1;
        }
        let t = (x - x0) / (x1 - x0);
        v0 * (1.0 - t) + v1 * t
    }

    /// One-sided limit at `x` (`left = true` for the limit from below).
    pub fn evaluate_side(&self, x: f64, left: bool) -> f64 {
        let x = x.clamp(0.0, 1.0);
        let k = self.nodes_x.partition_point(|p| *p < x);
        if k < self.nodes_x.len() && self.nodes_x[k] == x {
            if left {
                return self.nodes_v[k];
            }
            // Last node at exactly x.
            let mut k2 = k;
            while k2 + 1 < self.nodes_x.len() && self.nodes_x[k2 + 1] == x {
                k2 += 1;
            }
            return self.nodes_v[k2];
        }
        self.evaluate(x)
    }

    pub fn sup_norm(&self) -> f64 {
        self.nodes_v.iter().fold(0.0f64, |m, v| {
            if v.is_finite() {
                m.max(v.abs())
            } else {
                m
            }
        })
    }

    /// Total variation: increments of the continuous part over consecutive
    /// samples plus the summed jump sizes. Measuring over samples (rather
    /// than interpolation nodes) keeps the norm exactly subadditive across
    /// functions with different jump sets.
    pub fn total_variation(&self) -> f64 {
        let mut var: f64 = self.jumps.iter().map(|j| j.magnitude.abs()).sum();
        let n = self.n_cells;
        let mut jump_ptr = 0usize;
        let mut saltus = self.jumps.iter().map(|j| j.magnitude).sum::<f64>();
        let mut prev_reg = f64::NAN;
        for i in 0..n {
            let x = cell_center(i, n);
            while jump_ptr < self.jumps.len() && self.jumps[jump_ptr].location <= x {
                saltus -= self.jumps[jump_ptr].magnitude;
                jump_ptr += 1;
            }
            let reg = self.values[i] - saltus;
            if i > 0 {
                let d = reg - prev_reg;
                if d.is_finite() {
                    var += d.abs();
                }
            }
            prev_reg = reg;
        }
        var
    }

    /// `sup |g| + var(g)`.
    pub fn bv_norm(&self) -> f64 {
        self.sup_norm() + self.total_variation()
    }

    /// Exact integral of the representation over `[0,1]`.
    pub fn integral(&self) -> f64 {
        *self.cum.last().unwrap()
    }

    /// Exact integral of the representation over `[0, x]`.
    pub fn integral_to(&self, x: f64) -> f64 {
        let x = x.clamp(0.0, 1.0);
        let k = self.seg_index(x);
        if self.nodes_x[k] == x {
            return self.cum[k];
        }
        let lo = k - 1;
        let (x0, x1) = (self.nodes_x[lo], self.nodes_x[k]);
        let (v0, v1) = (self.nodes_v[lo], self.nodes_v[k]);
        if x1 <= x0 {
            return self.cum[k];
        }
        let t = (x - x0) / (x1 - x0);
        let vx = v0 * (1.0 - t) + v1 * t;
        self.cum[lo] + 0.5 * (v0 + vx) * (x - x0)
    }

    /// Pointwise arithmetic with scalar weights: `sa*a (op) sb*b`.
    /// Mismatched resolutions are resampled to the finer grid when
    /// `resample` is set, and rejected otherwise.
    pub fn combine(
        a: &GridFn,
        b: &GridFn,
        op: CombineOp,
        sa: f64,
        sb: f64,
        resample: bool,
    ) -> Result<GridFn> {
        if a.n_cells != b.n_cells {
            if !resample {
                return Err(Error::ResolutionMismatch(a.n_cells, b.n_cells));
            }
            let n = a.n_cells.max(b.n_cells);
            let ar = a.resample(n);
            let br = b.resample(n);
            return Self::combine(&ar, &br, op, sa, sb, false);
        }
        let n = a.n_cells;
        let interp = a.interp;
        match op {
            CombineOp::Add => {
                let values: Vec<f64> = (0..n)
                    .map(|i| sa * a.values[i] + sb * b.values[i])
                    .collect();
                let mut jumps: Vec<JumpRecord> = Vec::new();
                jumps.extend(a.jumps.iter().map(|j| JumpRecord {
                    location: j.location,
                    magnitude: sa * j.magnitude,
                }));
                jumps.extend(b.jumps.iter().map(|j| JumpRecord {
                    location: j.location,
                    magnitude: sb * j.magnitude,
                }));
                Ok(GridFn::from_samples(values, jumps, interp))
            }
            CombineOp::Mul => {
                let values: Vec<f64> = (0..n)
                    .map(|i| sa * a.values[i] * sb * b.values[i])
                    .collect();
                let mut locs: Vec<f64> = a
                    .jumps
                    .iter()
                    .chain(b.jumps.iter())
                    .map(|j| j.location)
                    .collect();
                locs.sort_by(|p, q| p.partial_cmp(q).unwrap());
                locs.dedup_by(|p, q| (*p - *q).abs() <= LOC_MERGE_TOL);
                let jumps: Vec<JumpRecord> = locs
                    .into_iter()
                    .map(|l| {
                        let la = sa * a.evaluate_side(l, true);
                        let ra = sa * a.evaluate_side(l, false);
                        let lb = sb * b.evaluate_side(l, true);
                        let rb = sb * b.evaluate_side(l, false);
                        JumpRecord {
                            location: l,
                            magnitude: la * lb - ra * rb,
                        }
                    })
                    .collect();
                Ok(GridFn::from_samples(values, jumps, interp))
            }
        }
    }

    pub fn add(&self, other: &GridFn) -> Result<GridFn> {
        Self::combine(self, other, CombineOp::Add, 1.0, 1.0, false)
    }

    pub fn sub(&self, other: &GridFn) -> Result<GridFn> {
        Self::combine(self, other, CombineOp::Add, 1.0, -1.0, false)
    }

    pub fn mul(&self, other: &GridFn) -> Result<GridFn> {
        Self::combine(self, other, CombineOp::Mul, 1.0, 1.0, false)
    }

    pub fn scale(&self, s: f64) -> GridFn {
        let values = self.values.iter().map(|v| s * v).collect();
        let jumps = self
            .jumps
            .iter()
            .map(|j| JumpRecord {
                location: j.location,
                magnitude: s * j.magnitude,
            })
            .collect();
        GridFn::from_samples(values, jumps, self.interp)
    }

    /// Re-sample onto a grid of `n` cells, keeping jump records exact.
    pub fn resample(&self, n: usize) -> GridFn {
        if n == self.n_cells {
            return self.clone();
        }
        let values: Vec<f64> = (0..n).map(|i| self.evaluate(cell_center(i, n))).collect();
        GridFn::from_samples(values, self.jumps.clone(), self.interp)
    }

    /// Split into (regular, saltus): the regular part has no jumps, the
    /// saltus part is constant between jumps with `saltus(1) = 0`.
    pub fn decompose(&self) -> (GridFn, GridFn) {
        let regular = GridFn::from_samples(self.regular_values(), Vec::new(), self.interp);
        let saltus = GridFn::from_regular_parts(
            vec![0.0; self.n_cells],
            self.jumps.clone(),
            self.interp,
        );
        (regular, saltus)
    }

    /// Centered differences within smooth pieces, one-sided at piece
    /// boundaries; cells containing a jump are masked NaN.
    pub fn numeric_derivative(&self) -> Result<GridFn> {
        if self.interp != Interp::PiecewiseLinear {
            return Err(Error::Precondition(
                "numeric_derivative needs piecewise-linear interpolation".into(),
            ));
        }
        let n = self.n_cells;
        let h = 1.0 / n as f64;
        // Piece id per cell (pieces delimited by jump locations).
        let piece_of = |i: usize| -> usize {
            let x = cell_center(i, n);
            self.jumps.iter().take_while(|j| j.location < x).count()
        };
        let mut d = vec![0.0; n];
        for i in 0..n {
            let p = piece_of(i);
            let left_ok = i > 0 && piece_of(i - 1) == p;
            let right_ok = i + 1 < n && piece_of(i + 1) == p;
            d[i] = match (left_ok, right_ok) {
                (true, true) => (self.values[i + 1] - self.values[i - 1]) / (2.0 * h),
                (true, false) => (self.values[i] - self.values[i - 1]) / h,
                (false, true) => (self.values[i + 1] - self.values[i]) / h,
                (false, false) => f64::NAN,
            };
        }
        for j in &self.jumps {
            let cell = ((j.location * n as f64).floor() as usize).min(n - 1);
            d[cell] = f64::NAN;
        }
        Ok(GridFn::from_samples(d, Vec::new(), self.interp))
    }

    /// Max absolute difference of samples (ignoring NaN-masked cells).
    pub fn max_abs_diff(&self, other: &GridFn) -> f64 {
        assert_eq!(self.n_cells, other.n_cells);
        let mut m = 0.0f64;
        for i in 0..self.n_cells {
            let d = (self.values[i] - other.values[i]).abs();
            if d.is_finite() {
                m = m.max(d);
            }
        }
        m
    }

    /// Write the grid as CSV (`x,value,is_jump_adjacent`), prefixed with
    /// `# `-comment header lines.
    pub fn write_csv<W: std::io::Write>(&self, w: &mut W, comments: &[String]) -> Result<()> {
        for line in comments {
            writeln!(w, "# {line}")?;
        }
        writeln!(w, "x,value,is_jump_adjacent")?;
        for i in 0..self.n_cells {
            writeln!(
                w,
                "{:.12e},{:.12e},{}",
                self.cell_center(i),
                self.values[i],
                u8::from(self.is_jump_adjacent(i))
            )?;
        }
        Ok(())
    }
}

/// Scan a raw cell vector for jumps near the candidate locations: linear
/// fits on both sides are extrapolated to the candidate and the gap is kept
/// when it dominates the local smooth oscillation and an absolute floor.
pub fn detect_jumps(values: &[f64], candidates: &[f64]) -> Vec<JumpRecord> {
    let n = values.len();
    let mut found: Vec<JumpRecord> = Vec::new();
    for &loc in candidates {
        if !(0.0 < loc && loc < 1.0) {
            continue;
        }
        let cell = ((loc * n as f64).floor() as usize).min(n - 1);
        if cell < 7 || cell + 7 >= n {
            continue;
        }
        // Side windows skip the jump cell and its immediate neighbours.
        let fit = |idxs: std::ops::Range<usize>| -> (f64, f64, f64, f64) {
            let xs: Vec<f64> = idxs.clone().map(|i| cell_center(i, n)).collect();
            let ys: Vec<f64> = idxs.map(|i| values[i]).collect();
            let m = xs.len() as f64;
            let mx = xs.iter().sum::<f64>() / m;
            let my = ys.iter().sum::<f64>() / m;
            let mut sxx = 0.0;
            let mut sxy = 0.0;
            for (x, y) in xs.iter().zip(&ys) {
                sxx += (x - mx) * (x - mx);
                sxy += (x - mx) * (y - my);
            }
            let slope = if sxx > 0.0 { sxy / sxx } else { 0.0 };
            let mut resid = 0.0f64;
            for (x, y) in xs.iter().zip(&ys) {
                resid = resid.max((y - (my + slope * (x - mx))).abs());
            }
            (mx, my, slope, resid.max(f64::EPSILON))
        };
        let (lmx, ly, ls, lr) = fit(cell - 6..cell - 1);
        let (rmx, ry, rs, rr) = fit(cell + 2..cell + 7);
        let left_ext = ly + ls * (loc - lmx);
        let right_ext = ry + rs * (loc - rmx);
        let gap = left_ext - right_ext;
        let osc = lr.max(rr);
        if gap.abs() > (5.0 * osc).max(1e-6) {
            found.push(JumpRecord {
                location: loc,
                magnitude: gap,
            });
        }
    }
    normalize_jumps(found, 1.0)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn step_function_values() {
        let h = GridFn::step(64, 0.5);
        assert_eq!(h.evaluate(0.3), 1.0);
        assert_eq!(h.evaluate(0.5), 0.5);
        assert_eq!(h.evaluate(0.7), 0.0);
        assert_eq!(h.evaluate_side(0.5, true), 1.0);
        assert_eq!(h.evaluate_side(0.5, false), 0.0);
    }

    #[test]
    fn norms() {
        let one = GridFn::constant(64, 1.0);
        assert_eq!(one.total_variation(), 0.0);
        assert_eq!(one.bv_norm(), 1.0);

        let h = GridFn::step(64, 0.5);
        assert_eq!(h.total_variation(), 1.0);
        assert_eq!(h.bv_norm(), 2.0);

        let x = GridFn::from_fn(256, |x| x);
        assert!((x.total_variation() - (1.0 - 1.0 / 256.0)).abs() < 1e-12);
        assert!((x.bv_norm() - 2.0).abs() < 0.01);
    }

    #[test]
    fn no_smearing_next_to_jump() {
        // Zero left of the jump, one right of it: the interpolant must be
        // flat on both sides with no dip near the jump cell.
        let n = 64;
        let loc = 0.5 + 0.3 / n as f64;
        let jump = GridFn::combine(
            &GridFn::constant(n, 1.0),
            &GridFn::step(n, loc),
            CombineOp::Add,
            1.0,
            -1.0,
            false,
        )
        .unwrap();
        // 1 - H: 0 before, 1 after.
        for x in [0.1, 0.3, loc - 1e-9] {
            assert!(jump.evaluate(x).abs() < 1e-14, "x={x}");
        }
        for x in [loc + 1e-9, 0.7, 0.95] {
            assert!((jump.evaluate(x) - 1.0).abs() < 1e-14, "x={x}");
        }
    }

    #[test]
    fn combine_add_and_mul() {
        let one = GridFn::constant(64, 1.0);
        let h = GridFn::step(64, 0.5);
        let s = one.add(&h).unwrap();
        assert_eq!(s.evaluate(0.2), 2.0);
        assert_eq!(s.evaluate(0.8), 1.0);
        assert_eq!(s.jumps().len(), 1);
        assert_eq!(s.jumps()[0].magnitude, 1.0);

        // H * H: one-sided limits multiply, so the product is H again.
        let p = h.mul(&h).unwrap();
        assert_eq!(p.evaluate(0.2), 1.0);
        assert_eq!(p.evaluate(0.8), 0.0);
        assert_eq!(p.evaluate(0.5), 0.5);

        let x = GridFn::from_fn(64, |x| x);
        let sx = x.scale(2.0);
        assert!((sx.total_variation() - 2.0 * x.total_variation()).abs() < 1e-12);
    }

    #[test]
    fn resolution_mismatch() {
        let a = GridFn::constant(64, 1.0);
        let b = GridFn::constant(128, 1.0);
        assert!(a.add(&b).is_err());
        let c = GridFn::combine(&a, &b, CombineOp::Add, 1.0, 1.0, true).unwrap();
        assert_eq!(c.n_cells(), 128);
        assert_eq!(c.evaluate(0.3), 2.0);
    }

    #[test]
    fn decompose_examples() {
        let h = GridFn::step(64, 0.5);
        let (r, s) = h.decompose();
        assert!(r.sup_norm() < 1e-15);
        assert_eq!(s.evaluate(0.2), 1.0);

        let x = GridFn::from_fn(64, |x| x);
        let (r, s) = x.decompose();
        assert!(s.sup_norm() < 1e-15);
        assert!((r.evaluate(0.25) - 0.25).abs() < 1e-2);

        // x + 0.3 H_{0.25}
        let g = GridFn::combine(
            &GridFn::from_fn(64, |x| x),
            &GridFn::step(64, 0.25),
            CombineOp::Add,
            1.0,
            0.3,
            false,
        )
        .unwrap();
        let (r, s) = g.decompose();
        assert!((r.evaluate(0.5) - 0.5).abs() < 1e-10);
        assert!((s.evaluate(0.1) - 0.3).abs() < 1e-12);
        assert!(s.evaluate(0.9).abs() < 1e-12);
        let back = r.add(&s).unwrap();
        assert!(back.max_abs_diff(&g) <= 1e-10);
    }

    #[test]
    fn integral_and_integral_to() {
        let x2 = GridFn::from_fn(4096, |x| x * x);
        assert!((x2.integral() - 1.0 / 3.0).abs() < 1e-7);
        assert!((x2.integral_to(0.5) - 1.0 / 24.0).abs() < 1e-7);
        let h = GridFn::step(64, 0.25);
        assert!((h.integral() - 0.25).abs() < 1e-15);
        assert!((h.integral_to(0.5) - 0.25).abs() < 1e-15);
        assert!((h.integral_to(0.1) - 0.1).abs() < 1e-15);
        assert!((x2.integral() - x2.integral_to(1.0)).abs() < 1e-14);

        // Telescoping: sums of integral_to differences over a partition
        // reproduce the total integral exactly.
        let g = GridFn::combine(
            &GridFn::from_fn(512, |x| (3.0 * x).sin()),
            &GridFn::step(512, 0.6180339887),
            CombineOp::Add,
            1.0,
            0.7,
            false,
        )
        .unwrap();
        let mut acc = 0.0;
        let mut prev = 0.0;
        for k in 1..=97 {
            let x = k as f64 / 97.0;
            acc += g.integral_to(x) - prev;
            prev = g.integral_to(x);
        }
        assert!((acc - g.integral()).abs() < 1e-14);
    }

    #[test]
    fn numeric_derivative_examples() {
        let x = GridFn::from_fn(256, |x| x);
        let d = x.numeric_derivative().unwrap();
        for i in 1..255 {
            assert!((d.values()[i] - 1.0).abs() < 1e-10);
        }

        let x2 = GridFn::from_fn(4096, |x| x * x);
        let d = x2.numeric_derivative().unwrap();
        for i in 8..4088 {
            let x = d.cell_center(i);
            assert!((d.values()[i] - 2.0 * x).abs() < 1e-5, "at {x}");
        }

        let h = GridFn::step(64, 0.5);
        let d = h.numeric_derivative().unwrap();
        let jump_cell = (0.5 * 64.0) as usize;
        assert!(d.values()[jump_cell].is_nan());
        assert!(d.values()[10].abs() < 1e-12);
    }

    #[test]
    fn detect_jumps_finds_real_jump() {
        let n = 4096;
        let mut vals = vec![0.0; n];
        for (i, v) in vals.iter_mut().enumerate() {
            let x = (i as f64 + 0.5) / n as f64;
            *v = x * 0.2 + if x < 0.6180339887 { 1.0 } else { 0.25 };
        }
        let found = detect_jumps(&vals, &[0.6180339887, 0.3]);
        assert_eq!(found.len(), 1);
        assert!((found[0].magnitude - 0.75).abs() < 1e-3);
    }

    mod properties {
        use super::*;
        use proptest::prelude::*;

        fn arb_gridfn() -> impl Strategy<Value = GridFn> {
            (
                proptest::collection::vec(-2.0f64..2.0, 32),
                proptest::collection::vec((0.05f64..0.95, -1.0f64..1.0), 0..4),
            )
                .prop_map(|(vals, js)| {
                    let n = vals.len();
                    let jumps = js
                        .into_iter()
                        .map(|(l, m)| JumpRecord {
                            location: l,
                            magnitude: m,
                        })
                        .collect();
                    let reg: Vec<f64> = (0..n)
                        .map(|i| {
                            let x = (i as f64 + 0.5) / n as f64;
                            vals[i] * 0.2 + (3.0 * x).sin()
                        })
                        .collect();
                    GridFn::from_regular_parts(reg, jumps, Interp::PiecewiseLinear)
                })
        }

        proptest! {
            #![proptest_config(ProptestConfig::with_cases(64))]

            #[test]
            fn decompose_roundtrip(g in arb_gridfn()) {
                let (r, s) = g.decompose();
                let back = r.add(&s).unwrap();
                prop_assert!(back.max_abs_diff(&g) <= 1e-10);
                prop_assert!(r.jumps().is_empty());
            }

            #[test]
            fn bv_norm_subadditive(a in arb_gridfn(), b in arb_gridfn()) {
                let s = a.add(&b).unwrap();
                prop_assert!(s.bv_norm() <= a.bv_norm() + b.bv_norm() + 1e-10);
            }

            #[test]
            fn product_variation_bound(a in arb_gridfn(), b in arb_gridfn()) {
                let p = a.mul(&b).unwrap();
                let bound = a.total_variation() * b.sup_norm()
                    + b.total_variation() * a.sup_norm();
                prop_assert!(p.total_variation() <= bound + 1e-9);
            }

            #[test]
            fn evaluate_at_jump_is_midpoint(g in arb_gridfn()) {
                for j in g.jumps() {
                    let mid = g.evaluate(j.location);
                    let avg = 0.5 * (g.evaluate_side(j.location, true)
                        + g.evaluate_side(j.location, false));
                    prop_assert!((mid - avg).abs() <= 1e-12);
                }
            }

            #[test]
            fn integral_matches_quadrature(g in arb_gridfn()) {
                // Fine Riemann sum over the interpolant.
                let m = 20011usize;
                let mut acc = 0.0;
                for k in 0..m {
                    acc += g.evaluate((k as f64 + 0.5) / m as f64);
                }
                acc /= m as f64;
                prop_assert!((acc - g.integral()).abs() < 2e-3 * g.bv_norm().max(1.0));
            }
        }
    }
}
