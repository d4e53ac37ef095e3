//! Symbolic calculus of nested weighted-transfer-operator multiseries.
//!
//! A term represents `coef * sum_{i_1..i_s >= 1} L_{m_1}^{i_1}(F_1 ·
//! L_{m_2}^{i_2}(F_2 · ... L_{m_s}^{i_s}(F_s)))` with strictly decreasing
//! positive integer weights `m_1 > ... > m_s` and factor lists `F_l` drawn
//! from the alphabet `{xi, xi', ..., rho, rho_bar, user h}`. The innermost
//! factor list carries `rho`.
//!
//! Differentiation follows three productions per level: the factor product
//! rule with the level weight bumped, a collapsed chain term multiplying
//! `xi` into the level with coefficient `-(m+1)`, and a nested chain term
//! inserting a fresh `xi` level above with the same coefficient. A
//! differentiated `rho` is rewritten through the first-derivative series
//! `rho' = -sum_j L_1^j(xi rho)`, which appends a new innermost level and
//! keeps the whole sum in the same closed form. Coefficients are exact
//! rationals.

use crate::error::{Error, Result};
use num_rational::Rational64;
use num_traits::Zero;
use std::collections::BTreeMap;

pub const DEFAULT_K_MAX: usize = 4;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub enum FactorBase {
    Xi,
    Rho,
    /// `L^n 1` placeholder used when splitting off finite-rank parts.
    RhoBar,
    UserH {
        id: u32,
        constant: bool,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub struct FactorSymbol {
    pub base: FactorBase,
    pub derivative_order: usize,
    pub power: u32,
}

impl FactorSymbol {
    pub fn xi() -> Self {
        FactorSymbol {
            base: FactorBase::Xi,
            derivative_order: 0,
            power: 1,
        }
    }

    pub fn rho() -> Self {
        FactorSymbol {
            base: FactorBase::Rho,
            derivative_order: 0,
            power: 1,
        }
    }

    fn render(&self) -> String {
        let mut s = match self.base {
            FactorBase::Xi => "xi".to_string(),
            FactorBase::Rho => "rho".to_string(),
            FactorBase::RhoBar => "rho_bar".to_string(),
            FactorBase::UserH { id, .. } => format!("h{id}"),
        };
        for _ in 0..self.derivative_order {
            s.push('\'');
        }
        if self.power > 1 {
            s = format!("{s}^{}", self.power);
        }
        s
    }
}

/// One operator level: `L_weight^{i}` applied to the product of `factors`
/// (times whatever is nested deeper).
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord)]
pub struct Level {
    pub weight: u32,
    pub factors: Vec<FactorSymbol>,
}

fn canonical_factors(mut factors: Vec<FactorSymbol>) -> Vec<FactorSymbol> {
    factors.sort();
    let mut out: Vec<FactorSymbol> = Vec::with_capacity(factors.len());
    for f in factors {
        match out.last_mut() {
            Some(last)
                if last.base == f.base && last.derivative_order == f.derivative_order =>
            {
                last.power += f.power;
            }
            _ => out.push(f),
        }
    }
    out
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DTerm {
    pub coefficient: Rational64,
    /// Outermost level first; the innermost carries `rho`.
    pub levels: Vec<Level>,
}

impl DTerm {
    fn canonicalize(mut self) -> Self {
        for level in &mut self.levels {
            let factors = std::mem::take(&mut level.factors);
            level.factors = canonical_factors(factors);
        }
        self
    }

    /// Weight vector `m_1 > m_2 > ... > m_s`.
    pub fn weights(&self) -> Vec<u32> {
        self.levels.iter().map(|l| l.weight).collect()
    }

    /// Largest factor derivative order appearing anywhere in the term.
    pub fn max_derivative_order(&self) -> usize {
        self.levels
            .iter()
            .flat_map(|l| l.factors.iter())
            .map(|f| f.derivative_order)
            .max()
            .unwrap_or(0)
    }

    fn render(&self) -> String {
        let mut body = String::new();
        for (idx, level) in self.levels.iter().enumerate() {
            body.push_str(&format!("L{}^i{}[", level.weight, idx + 1));
            let mut first = true;
            for f in &level.factors {
                if !first {
                    body.push('·');
                }
                body.push_str(&f.render());
                first = false;
            }
            if idx + 1 < self.levels.len() {
                body.push('·');
            }
        }
        for _ in &self.levels {
            body.push(']');
        }
        let c = self.coefficient;
        let sign = if c < Rational64::zero() { "-" } else { "+" };
        let mag = if c < Rational64::zero() { -c } else { c };
        if mag == Rational64::from_integer(1) {
            format!("{sign}{body}")
        } else if mag.is_integer() {
            format!("{sign}{}·{body}", mag.numer())
        } else {
            format!("{sign}{}/{}·{body}", mag.numer(), mag.denom())
        }
    }
}

/// A finite sum of [`DTerm`]s, canonicalized by merging identical
/// level signatures.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TermSum {
    pub terms: Vec<DTerm>,
    /// Which derivative `rho_k` this sum represents (when applicable).
    pub order: usize,
}

impl TermSum {
    pub fn new(terms: Vec<DTerm>, order: usize) -> Self {
        Self {
            terms: merge_terms(terms),
            order,
        }
    }

    /// The series for `rho_1 = -sum_i L_1^i(xi rho)`.
    pub fn rho1() -> Self {
        TermSum::new(
            vec![DTerm {
                coefficient: -Rational64::from_integer(1),
                levels: vec![Level {
                    weight: 1,
                    factors: vec![FactorSymbol::xi(), FactorSymbol::rho()],
                }],
            }],
            1,
        )
    }

    pub fn len(&self) -> usize {
        self.terms.len()
    }

    pub fn is_empty(&self) -> bool {
        self.terms.is_empty()
    }

    /// Term-by-term derivative; the result stays in the same closed form
    /// with every outer weight bumped by one.
    pub fn differentiate(&self) -> TermSum {
        let mut out = Vec::new();
        for term in &self.terms {
            diff_term(term, &mut out);
        }
        TermSum::new(out, self.order + 1)
    }

    /// Plain-text rendering in nested operator notation.
    pub fn render(&self) -> String {
        let mut terms = self.terms.clone();
        terms.sort_by(|a, b| a.levels.cmp(&b.levels));
        terms
            .iter()
            .map(|t| t.render())
            .collect::<Vec<_>>()
            .join("  ")
    }
}

fn merge_terms(terms: Vec<DTerm>) -> Vec<DTerm> {
    let mut merged: BTreeMap<Vec<Level>, Rational64> = BTreeMap::new();
    for t in terms {
        let t = t.canonicalize();
        *merged.entry(t.levels).or_insert_with(Rational64::zero) += t.coefficient;
    }
    merged
        .into_iter()
        .filter(|(_, c)| !c.is_zero())
        .map(|(levels, coefficient)| DTerm {
            coefficient,
            levels,
        })
        .collect()
}

/// Children of one term under differentiation.
fn diff_term(term: &DTerm, out: &mut Vec<DTerm>) {
    let s = term.levels.len();
    for l in 0..s {
        let m_l = term.levels[l].weight;

        // Base with enclosing weights (levels 0..l) bumped; level l's own
        // treatment varies per production.
        let bumped = |upto: usize| -> Vec<Level> {
            let mut levels = term.levels.clone();
            for level in levels.iter_mut().take(upto + 1) {
                level.weight += 1;
            }
            levels
        };

        // Product rule over the level's factors.
        for (fi, f) in term.levels[l].factors.iter().enumerate() {
            match f.base {
                FactorBase::Rho => {
                    // rho' = -sum_j L_1^j(xi rho): drop rho here, append the
                    // new innermost level.
                    debug_assert_eq!(l, s - 1, "rho must sit innermost");
                    debug_assert_eq!(f.power, 1);
                    let mut levels = bumped(l);
                    levels[l].factors.remove(fi);
                    levels.push(Level {
                        weight: 1,
                        factors: vec![FactorSymbol::xi(), FactorSymbol::rho()],
                    });
                    out.push(DTerm {
                        coefficient: -term.coefficient,
                        levels,
                    });
                }
                FactorBase::UserH { constant: true, .. } => {
                    // Derivative of a constant factor vanishes.
                }
                _ => {
                    // (f^p)' = p f^{p-1} f'.
                    let mut levels = bumped(l);
                    let mut fd = *f;
                    fd.derivative_order += 1;
                    fd.power = 1;
                    if f.power > 1 {
                        let mut rest = *f;
                        rest.power = f.power - 1;
                        levels[l].factors[fi] = rest;
                        levels[l].factors.push(fd);
                    } else {
                        levels[l].factors[fi] = fd;
                    }
                    out.push(DTerm {
                        coefficient: term.coefficient * Rational64::from_integer(f.power as i64),
                        levels,
                    });
                }
            }
        }

        // Collapsed chain term: xi joins the level, coefficient -(m+1).
        {
            let mut levels = bumped(l);
            levels[l].factors.push(FactorSymbol::xi());
            out.push(DTerm {
                coefficient: -term.coefficient * Rational64::from_integer(m_l as i64 + 1),
                levels,
            });
        }

        // Nested chain term: fresh xi level above level l, which keeps its
        // original weight.
        {
            let mut levels = if l == 0 {
                term.levels.clone()
            } else {
                bumped(l - 1)
            };
            levels.insert(
                l,
                Level {
                    weight: m_l + 1,
                    factors: vec![FactorSymbol::xi()],
                },
            );
            out.push(DTerm {
                coefficient: -term.coefficient * Rational64::from_integer(m_l as i64 + 1),
                levels,
            });
        }
    }
}

/// Series for `rho_k`, built by repeated differentiation of the
/// first-derivative series.
pub fn rho_terms(k: usize) -> Result<TermSum> {
    rho_terms_with_max(k, DEFAULT_K_MAX)
}

pub fn rho_terms_with_max(k: usize, k_max: usize) -> Result<TermSum> {
    if k == 0 || k > k_max {
        return Err(Error::Precondition(format!(
            "derivative order {k} outside 1..={k_max}"
        )));
    }
    let mut ts = TermSum::rho1();
    for _ in 1..k {
        ts = ts.differentiate();
    }
    Ok(ts)
}

/// Both sides of the diagonal double-series rearrangement at matched
/// truncation: `sum_{i<=N} sum_{j<i} g(i-j, j)` and
/// `sum_{c>=1, d>=0, c+d<=N} g(c, d)`.
pub fn rearrangement_check(g: impl Fn(usize, usize) -> f64, n_max: usize) -> (f64, f64) {
    let mut lhs = 0.0;
    for i in 1..=n_max {
        for j in 0..i {
            lhs += g(i - j, j);
        }
    }
    let mut rhs = 0.0;
    for c in 1..=n_max {
        for d in 0..=n_max - c {
            rhs += g(c, d);
        }
    }
    (lhs, rhs)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn coeffs(ts: &TermSum) -> Vec<i64> {
        let mut v: Vec<i64> = ts
            .terms
            .iter()
            .map(|t| {
                assert!(t.coefficient.is_integer());
                *t.coefficient.numer()
            })
            .collect();
        v.sort();
        v
    }

    #[test]
    fn rho1_structure() {
        let ts = TermSum::rho1();
        assert_eq!(ts.len(), 1);
        let t = &ts.terms[0];
        assert_eq!(t.coefficient, -Rational64::from_integer(1));
        assert_eq!(t.weights(), vec![1]);
        assert_eq!(t.levels[0].factors.len(), 2);
        assert_eq!(ts.render(), "-L1^i1[xi·rho]");
    }

    #[test]
    fn rho2_has_exact_coefficients() {
        let ts = rho_terms(2).unwrap();
        assert_eq!(ts.len(), 3);
        assert_eq!(coeffs(&ts), vec![-1, 2, 3]);
        // Structures: 3 D_{2,1}(xi; xi rho), 2 L_2(xi^2 rho), -1 L_2(xi' rho).
        for t in &ts.terms {
            match *t.coefficient.numer() {
                3 => assert_eq!(t.weights(), vec![2, 1]),
                2 => {
                    assert_eq!(t.weights(), vec![1 + 1]);
                    assert!(t.levels[0]
                        .factors
                        .iter()
                        .any(|f| f.base == FactorBase::Xi && f.power == 2));
                }
                -1 => {
                    assert_eq!(t.weights(), vec![2]);
                    assert!(t.levels[0]
                        .factors
                        .iter()
                        .any(|f| f.base == FactorBase::Xi && f.derivative_order == 1));
                }
                c => panic!("unexpected coefficient {c}"),
            }
        }
        assert_eq!(
            ts.render(),
            "+3·L2^i1[xi·L1^i2[xi·rho]]  +2·L2^i1[xi^2·rho]  -L2^i1[xi'·rho]"
        );
    }

    #[test]
    fn rho3_coefficient_multiset() {
        // Hand-derived by differentiating the three rho_2 groups.
        let ts = rho_terms(3).unwrap();
        assert_eq!(coeffs(&ts), vec![-18, -12, -11, -6, -1, 4, 6, 7]);
    }

    #[test]
    fn derivative_of_plain_term_with_constant_h() {
        let h = FactorSymbol {
            base: FactorBase::UserH {
                id: 0,
                constant: true,
            },
            derivative_order: 0,
            power: 1,
        };
        let ts = TermSum::new(
            vec![DTerm {
                coefficient: Rational64::from_integer(1),
                levels: vec![Level {
                    weight: 1,
                    factors: vec![h],
                }],
            }],
            0,
        );
        let d = ts.differentiate();
        // -2 L_2(xi h) - 2 L_2(xi L_1(h)); the h' term vanishes.
        assert_eq!(d.len(), 2);
        assert_eq!(coeffs(&d), vec![-2, -2]);
        let weights: Vec<Vec<u32>> = d.terms.iter().map(|t| t.weights()).collect();
        assert!(weights.contains(&vec![2]));
        assert!(weights.contains(&vec![2, 1]));
    }

    #[test]
    fn weights_stay_strictly_decreasing_and_outer_weight_tracks_order() {
        for k in 1..=4 {
            let ts = rho_terms(k).unwrap();
            for t in &ts.terms {
                let w = t.weights();
                assert_eq!(w[0], k as u32, "outer weight");
                for pair in w.windows(2) {
                    assert!(pair[0] > pair[1], "weights not decreasing: {w:?}");
                }
                for level in &t.levels {
                    assert!(level.weight >= 1);
                }
            }
        }
    }

    #[test]
    fn term_growth_is_bounded() {
        let mut ts = TermSum::rho1();
        for _ in 0..3 {
            let next = ts.differentiate();
            let max_nesting = ts.terms.iter().map(|t| t.levels.len()).max().unwrap();
            assert!(next.len() <= 3 * ts.len() * (max_nesting + 1));
            ts = next;
        }
    }

    #[test]
    fn rearrangement_examples() {
        // Geometric payload: both orders agree and match the closed form.
        let g = |c: usize, d: usize| 0.5f64.powi(c as i32) * (1.0 / 3.0f64).powi(d as i32);
        let (lhs, rhs) = rearrangement_check(g, 40);
        assert!((lhs - rhs).abs() < 1e-12);
        assert!((lhs - 1.5).abs() < 1e-9, "lhs {lhs}");

        let (l0, r0) = rearrangement_check(|_, _| 0.0, 10);
        assert_eq!((l0, r0), (0.0, 0.0));

        let delta = |c: usize, d: usize| if c == 1 && d == 0 { 1.0 } else { 0.0 };
        let (l1, r1) = rearrangement_check(delta, 10);
        assert_eq!((l1, r1), (1.0, 1.0));
    }
}
