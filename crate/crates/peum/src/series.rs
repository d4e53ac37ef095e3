//! Truncated numerical evaluation of the derivative multiseries.
//!
//! Evaluation is innermost-first: for a term `L_{m_1}^{i_1}(F_1 ·
//! L_{m_2}^{i_2}(F_2 · ...))` the inner running sums over `i_l <= I_l` are
//! grid functions reused across outer indices, so one term costs
//! `sum_l I_l` operator applications rather than a product. Shared inner
//! stacks are memoized across terms. Truncation caps come from the fitted
//! geometric decay of the weighted operators.

use crate::bv::{GridFn, Interp, JumpRecord};
use crate::error::{Error, Result};
use crate::map::{PeumMap, Side};
use crate::terms::{rho_terms, DTerm, FactorBase, Level, TermSum};
use crate::transfer::{apply_lm, OperatorBounds};
use serde::Serialize;
use std::collections::HashMap;

/// Per-level index caps with the guaranteed geometric tail bound.
#[derive(Debug, Clone, Serialize)]
pub struct TruncationPlan {
    pub caps: Vec<usize>,
    pub tail_bound: f64,
    pub target: f64,
}

/// Smallest per-level caps whose summed geometric tails stay within `tol`,
/// using the fitted constants `m_bar`, `lambda_bar` and the product of the
/// per-level factor BV norms.
pub fn plan_truncation(
    bounds: &OperatorBounds,
    weights: &[u32],
    factor_norms: &[f64],
    tol: f64,
) -> Result<TruncationPlan> {
    if tol <= 0.0 {
        return Err(Error::Precondition("tolerance must be positive".into()));
    }
    if weights.is_empty() {
        return Err(Error::Precondition("no levels to plan".into()));
    }
    let lam = bounds.lambda_bar;
    let norm_prod: f64 = factor_norms.iter().product::<f64>().max(1e-300);
    let scale = bounds.m_bar * norm_prod;
    // Full geometric sums per level.
    let full: Vec<f64> = weights
        .iter()
        .map(|m| {
            let q = lam.powi(-(*m as i32));
            q / (1.0 - q)
        })
        .collect();
    let others: Vec<f64> = (0..weights.len())
        .map(|j| {
            full.iter()
                .enumerate()
                .filter(|(l, _)| *l != j)
                .map(|(_, s)| s)
                .product::<f64>()
        })
        .collect();
    let per_level = tol / weights.len() as f64;
    let mut caps = Vec::with_capacity(weights.len());
    let mut tail_bound = 0.0;
    for (j, m) in weights.iter().enumerate() {
        let q = lam.powi(-(*m as i32));
        // Tail after I terms: full_j * q^I; require scale*others*tail <= budget.
        let denom = scale * others[j] * full[j];
        let cap = if denom <= per_level {
            1
        } else {
            ((denom / per_level).ln() / -q.ln()).ceil().max(1.0) as usize
        };
        caps.push(cap);
        tail_bound += denom * q.powi(cap as i32);
    }
    Ok(TruncationPlan {
        caps,
        tail_bound,
        target: tol,
    })
}

/// A numerically evaluated series with its error budget.
#[derive(Debug, Clone)]
pub struct SeriesEval {
    pub grid: GridFn,
    /// Geometric tail of the dropped indices, from the fitted constants.
    pub tail_bound: f64,
    /// Heuristic discretization error scale of the grid representation.
    pub grid_error_estimate: f64,
}

/// Grid function for `xi^(d)` with its jump at the critical point.
pub fn xi_grid(map: &PeumMap, d: usize, n_cells: usize) -> Result<GridFn> {
    if map.smoothness() < d + 2 {
        return Err(Error::SmoothnessExceeded {
            order: d + 2,
            smoothness: map.smoothness(),
        });
    }
    let mut values = Vec::with_capacity(n_cells);
    for i in 0..n_cells {
        let x = (i as f64 + 0.5) / n_cells as f64;
        values.push(map.xi_deriv(x, d, Side::Midpoint)?);
    }
    let c = map.c();
    let jump = JumpRecord {
        location: c,
        magnitude: map.xi_deriv(c, d, Side::Left)? - map.xi_deriv(c, d, Side::Right)?,
    };
    Ok(GridFn::from_samples(values, vec![jump], Interp::PiecewiseLinear))
}

/// `rho_1 = -sum_{i<=I} L_1^i(xi rho)` under the given plan.
pub fn eval_rho1(map: &PeumMap, rho: &GridFn, plan: &TruncationPlan) -> Result<SeriesEval> {
    let n = rho.n_cells();
    let xi = xi_grid(map, 0, n)?;
    let g = xi.mul(rho)?;
    let sum = running_operator_sum(map, 1, &g, plan.caps[0])?;
    let grid = sum.scale(-1.0);
    let grid_error_estimate = grid_error(&grid);
    Ok(SeriesEval {
        grid,
        tail_bound: plan.tail_bound,
        grid_error_estimate,
    })
}

/// Direct evaluation of the three second-derivative groups with
/// coefficients 3, 2, -1; an independent code path from the generic
/// term-sum evaluator.
pub fn eval_rho2(
    map: &PeumMap,
    rho: &GridFn,
    bounds: &OperatorBounds,
    tol: f64,
) -> Result<SeriesEval> {
    if map.smoothness() < 3 {
        return Err(Error::SmoothnessExceeded {
            order: 3,
            smoothness: map.smoothness(),
        });
    }
    let n = rho.n_cells();
    let xi = xi_grid(map, 0, n)?;
    let xi_p = xi_grid(map, 1, n)?;
    let xi_rho = xi.mul(rho)?;

    let budget = tol / 3.0;
    // Group 1: 3 sum_i sum_j L_2^i(xi L_1^j(xi rho)).
    let plan1 = plan_truncation(
        bounds,
        &[2, 1],
        &[xi.bv_norm(), xi_rho.bv_norm()],
        budget,
    )?;
    let inner = running_operator_sum(map, 1, &xi_rho, plan1.caps[1])?;
    let g1 = running_operator_sum(map, 2, &xi.mul(&inner)?, plan1.caps[0])?;

    // Group 2: 2 sum_i L_2^i(xi^2 rho). Built as (xi·xi)·rho so the plan
    // norms (and hence caps) agree bit-for-bit with the generic evaluator.
    let xi2_rho = xi.mul(&xi)?.mul(rho)?;
    let plan2 = plan_truncation(bounds, &[2], &[xi2_rho.bv_norm()], budget)?;
    let g2 = running_operator_sum(map, 2, &xi2_rho, plan2.caps[0])?;

    // Group 3: -sum_i L_2^i(xi' rho).
    let xip_rho = xi_p.mul(rho)?;
    let plan3 = plan_truncation(bounds, &[2], &[xip_rho.bv_norm()], budget)?;
    let g3 = running_operator_sum(map, 2, &xip_rho, plan3.caps[0])?;

    let grid = GridFn::combine(
        &GridFn::combine(&g1.scale(3.0), &g2, crate::bv::CombineOp::Add, 1.0, 2.0, false)?,
        &g3,
        crate::bv::CombineOp::Add,
        1.0,
        -1.0,
        false,
    )?;
    let tail_bound = plan1.tail_bound * 3.0 + plan2.tail_bound * 2.0 + plan3.tail_bound;
    let grid_error_estimate = grid_error(&grid);
    Ok(SeriesEval {
        grid,
        tail_bound,
        grid_error_estimate,
    })
}

/// Generic evaluation of `rho_k` from its symbolic term sum, with inner
/// running sums memoized across terms.
pub fn eval_rho_k(
    map: &PeumMap,
    rho: &GridFn,
    k: usize,
    bounds: &OperatorBounds,
    tol: f64,
) -> Result<SeriesEval> {
    let ts = rho_terms(k)?;
    eval_term_sum(map, rho, &ts, bounds, tol)
}

/// Evaluate an arbitrary term sum whose factors are `xi` derivatives and
/// `rho`.
pub fn eval_term_sum(
    map: &PeumMap,
    rho: &GridFn,
    ts: &TermSum,
    bounds: &OperatorBounds,
    tol: f64,
) -> Result<SeriesEval> {
    let n = rho.n_cells();
    let max_d = ts
        .terms
        .iter()
        .map(|t| t.max_derivative_order())
        .max()
        .unwrap_or(0);
    if map.smoothness() < max_d + 2 {
        return Err(Error::SmoothnessExceeded {
            order: max_d + 2,
            smoothness: map.smoothness(),
        });
    }

    let mut evaluator = Evaluator {
        map,
        rho,
        xi_grids: (0..=max_d)
            .map(|d| xi_grid(map, d, n))
            .collect::<Result<Vec<_>>>()?,
        memo: HashMap::new(),
    };

    let budget = tol / ts.terms.len().max(1) as f64;
    let mut acc = GridFn::constant(n, 0.0);
    let mut tail_bound = 0.0;
    for term in &ts.terms {
        let (sum, tail) = evaluator.eval_term(term, bounds, budget)?;
        let coef = rational_to_f64(term.coefficient);
        acc = GridFn::combine(&acc, &sum, crate::bv::CombineOp::Add, 1.0, coef, false)?;
        tail_bound += coef.abs() * tail;
    }
    let grid_error_estimate = grid_error(&acc);
    Ok(SeriesEval {
        grid: acc,
        tail_bound,
        grid_error_estimate,
    })
}

fn rational_to_f64(r: num_rational::Rational64) -> f64 {
    *r.numer() as f64 / *r.denom() as f64
}

fn grid_error(g: &GridFn) -> f64 {
    let h = 1.0 / g.n_cells() as f64;
    h * h * g.bv_norm().max(1.0) * 4.0
}

/// Partial sums `sum_{i=1}^{cap} L_m^i(g)` computed as a running stack.
fn running_operator_sum(map: &PeumMap, m: i32, g: &GridFn, cap: usize) -> Result<GridFn> {
    let n = g.n_cells();
    if g.sup_norm() == 0.0 {
        return Ok(GridFn::constant(n, 0.0));
    }
    let mut acc = GridFn::constant(n, 0.0);
    let mut t = g.clone();
    for _ in 0..cap {
        t = apply_lm(map, m, &t)?;
        acc = acc.add(&t)?;
    }
    Ok(acc)
}

struct Evaluator<'a> {
    map: &'a PeumMap,
    rho: &'a GridFn,
    xi_grids: Vec<GridFn>,
    memo: HashMap<String, GridFn>,
}

impl<'a> Evaluator<'a> {
    fn factor_grid(&self, f: &crate::terms::FactorSymbol) -> Result<GridFn> {
        let base = match f.base {
            FactorBase::Xi => self.xi_grids[f.derivative_order].clone(),
            FactorBase::Rho => {
                if f.derivative_order > 0 {
                    return Err(Error::Precondition(
                        "rho derivatives must be substituted before evaluation".into(),
                    ));
                }
                self.rho.clone()
            }
            FactorBase::RhoBar | FactorBase::UserH { .. } => {
                return Err(Error::Precondition(
                    "term carries a symbolic factor with no numeric payload".into(),
                ));
            }
        };
        let mut out = base.clone();
        for _ in 1..f.power {
            out = out.mul(&base)?;
        }
        Ok(out)
    }

    fn level_product(&self, level: &Level, inner: Option<&GridFn>) -> Result<GridFn> {
        let mut prod: Option<GridFn> = inner.cloned();
        for f in &level.factors {
            let fg = self.factor_grid(f)?;
            prod = Some(match prod {
                Some(p) => p.mul(&fg)?,
                None => fg,
            });
        }
        prod.ok_or_else(|| Error::Precondition("level with no factors".into()))
    }

    fn suffix_key(levels: &[Level], caps: &[usize]) -> String {
        format!("{levels:?}|{caps:?}")
    }

    /// Evaluate one term (without its coefficient); returns the grid and
    /// the tail bound of its truncation plan.
    fn eval_term(
        &mut self,
        term: &DTerm,
        bounds: &OperatorBounds,
        tol: f64,
    ) -> Result<(GridFn, f64)> {
        let weights: Vec<u32> = term.weights();
        let norms: Vec<f64> = term
            .levels
            .iter()
            .map(|l| self.level_product(l, None).map(|g| g.bv_norm()))
            .collect::<Result<Vec<_>>>()?;
        let plan = plan_truncation(bounds, &weights, &norms, tol)?;

        // Innermost-first stack with memoized suffixes.
        let mut inner: Option<GridFn> = None;
        for l in (0..term.levels.len()).rev() {
            let key = Self::suffix_key(&term.levels[l..], &plan.caps[l..]);
            if let Some(hit) = self.memo.get(&key) {
                inner = Some(hit.clone());
                continue;
            }
            let prod = self.level_product(&term.levels[l], inner.as_ref())?;
            let sum = running_operator_sum(self.map, term.levels[l].weight as i32, &prod, plan.caps[l])?;
            self.memo.insert(key, sum.clone());
            inner = Some(sum);
        }
        Ok((inner.unwrap(), plan.tail_bound))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::density::solve_power;
    use crate::sample;

    #[test]
    fn plan_single_level_example() {
        // lambda_bar = 2, m = 1, m_bar * norms = 1: I = 20 reaches 1e-6.
        let bounds = OperatorBounds {
            m_sup: 1.0,
            c0: 1.0,
            gamma: 0.5,
            c1: 1.0,
            lambda_bar1: 2.0,
            m_bar: 1.0,
            lambda_bar: 2.0,
            theta: 0.5,
        };
        let plan = plan_truncation(&bounds, &[1], &[1.0], 1e-6).unwrap();
        assert_eq!(plan.caps, vec![20]);
        assert!(plan.tail_bound <= 1e-6);

        // Loose tolerance: caps collapse to 1.
        let plan = plan_truncation(&bounds, &[1], &[1.0], 10.0).unwrap();
        assert_eq!(plan.caps, vec![1]);

        // Two levels with weights (2, 1): the weight-1 level needs roughly
        // twice the depth.
        let plan = plan_truncation(&bounds, &[2, 1], &[1.0, 1.0], 1e-6).unwrap();
        assert!(plan.caps[1] > plan.caps[0]);
        assert!(plan.caps[1] >= 2 * plan.caps[0] - 3);
    }

    #[test]
    fn rho1_vanishes_on_piecewise_linear_maps() {
        for map in [sample::tent(), sample::skew_tent(0.3)] {
            let rho = GridFn::constant(512, 1.0);
            let plan = TruncationPlan {
                caps: vec![20],
                tail_bound: 0.0,
                target: 1e-6,
            };
            let r = eval_rho1(&map, &rho, &plan).unwrap();
            assert!(r.grid.sup_norm() <= 1e-12);
            // Caps 1 and 20 agree exactly: every term is zero.
            let plan1 = TruncationPlan {
                caps: vec![1],
                tail_bound: 0.0,
                target: 1e-6,
            };
            let r1 = eval_rho1(&map, &rho, &plan1).unwrap();
            assert_eq!(r1.grid.max_abs_diff(&r.grid), 0.0);
        }
    }

    #[test]
    fn rho_k_vanishes_on_piecewise_linear_maps() {
        let map = sample::skew_tent(0.25);
        let bounds = OperatorBounds {
            m_sup: 2.0,
            c0: 2.0,
            gamma: 0.8,
            c1: 1.0,
            lambda_bar1: 1.3,
            m_bar: 2.0,
            lambda_bar: 1.3,
            theta: 0.6,
        };
        let rho = GridFn::constant(512, 1.0);
        for k in 1..=4 {
            let r = eval_rho_k(&map, &rho, k, &bounds, 1e-6).unwrap();
            assert!(r.grid.sup_norm() <= 1e-12, "k={k}");
        }
    }

    #[test]
    fn generic_path_matches_direct_rho1_and_rho2() {
        let map = sample::tent_perturbed_default();
        let n = 1024;
        let bounds = OperatorBounds::fit(&map, 0, n).unwrap();
        let rho = solve_power(&map, n, 1e-10, 400).unwrap().rho;

        let plan = plan_truncation(
            &bounds,
            &[1],
            &[xi_grid(&map, 0, n).unwrap().mul(&rho).unwrap().bv_norm()],
            1e-6,
        )
        .unwrap();
        let direct = eval_rho1(&map, &rho, &plan).unwrap();
        let generic = eval_rho_k(&map, &rho, 1, &bounds, 1e-6).unwrap();
        assert!(
            generic.grid.max_abs_diff(&direct.grid) <= 1e-12,
            "diff {}",
            generic.grid.max_abs_diff(&direct.grid)
        );

        let direct2 = eval_rho2(&map, &rho, &bounds, 1e-6).unwrap();
        let generic2 = eval_rho_k(&map, &rho, 2, &bounds, 1e-6).unwrap();
        assert!(
            generic2.grid.max_abs_diff(&direct2.grid) <= 1e-10,
            "diff {}",
            generic2.grid.max_abs_diff(&direct2.grid)
        );
    }

    #[test]
    fn rho1_matches_density_derivative() {
        // Spot check against the finite-difference derivative of the
        // regular part of the computed density, away from the orbit.
        let map = sample::tent_perturbed_default();
        let n = 4096;
        let bounds = OperatorBounds::fit(&map, 0, 2048).unwrap();
        let rho = solve_power(&map, n, 1e-10, 400).unwrap().rho;
        let r1 = eval_rho_k(&map, &rho, 1, &bounds, 1e-7).unwrap();

        let orbit = map.critical_orbit(12).unwrap();
        let (reg, _) = rho.decompose();
        let mut checked = 0;
        let mut ok = 0;
        for i in 0..60 {
            let x = 0.12 + 0.76 * i as f64 / 59.0;
            if orbit.points.iter().any(|p| (p - x).abs() < 0.02) {
                continue;
            }
            let delta = 2e-3;
            let fd = (reg.evaluate(x + delta) - reg.evaluate(x - delta)) / (2.0 * delta);
            let series = r1.grid.evaluate(x);
            checked += 1;
            if (fd - series).abs() <= 0.05 * series.abs().max(0.02) {
                ok += 1;
            }
        }
        assert!(checked >= 12, "only {checked} sample points");
        assert!(
            ok as f64 >= 0.85 * checked as f64,
            "{ok}/{checked} points within tolerance"
        );
    }

    #[test]
    fn doubling_caps_stays_within_tail_bound() {
        let map = sample::tent_perturbed_default();
        let n = 1024;
        let bounds = OperatorBounds::fit(&map, 0, n).unwrap();
        let rho = solve_power(&map, n, 1e-10, 400).unwrap().rho;
        let xi = xi_grid(&map, 0, n).unwrap();
        let g = xi.mul(&rho).unwrap();
        let plan = plan_truncation(&bounds, &[1], &[g.bv_norm()], 1e-5).unwrap();
        let base = eval_rho1(&map, &rho, &plan).unwrap();
        let doubled_plan = TruncationPlan {
            caps: plan.caps.iter().map(|c| c * 2).collect(),
            tail_bound: plan.tail_bound,
            target: plan.target,
        };
        let doubled = eval_rho1(&map, &rho, &doubled_plan).unwrap();
        let diff_sup = doubled.grid.sub(&base.grid).unwrap().sup_norm();
        let diff_l1 = {
            let d = doubled.grid.sub(&base.grid).unwrap();
            let mut acc = 0.0;
            for v in d.values() {
                acc += v.abs();
            }
            acc / n as f64
        };
        assert!(diff_sup <= plan.tail_bound, "sup {diff_sup} vs {}", plan.tail_bound);
        assert!(diff_l1 <= plan.tail_bound);
    }

    #[test]
    fn smoothness_guard() {
        let mut ts = TermSum::rho1();
        for _ in 0..8 {
            ts = ts.differentiate();
        }
        let map = sample::tent_perturbed_default();
        let rho = GridFn::constant(256, 1.0);
        let bounds = OperatorBounds {
            m_sup: 2.0,
            c0: 2.0,
            gamma: 0.8,
            c1: 1.0,
            lambda_bar1: 1.3,
            m_bar: 2.0,
            lambda_bar: 1.3,
            theta: 0.6,
        };
        assert!(matches!(
            eval_term_sum(&map, &rho, &ts, &bounds, 1e-3),
            Err(Error::SmoothnessExceeded { .. })
        ));
    }
}
