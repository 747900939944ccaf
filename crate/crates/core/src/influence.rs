//! Per-matchup influence on fitted scores.
//!
//! With `H = X' V X + ridge I` at the fitted scores, the derivative of the
//! score of model `t` with respect to the weight of matchup `n` is
//!
//! ```text
//! d theta_t / d w_n = e_t' H^{-1} x_n (y_n - p_n)
//! ```
//!
//! [`ScoreConvention::AsPrinted`] additionally multiplies by `p_n (1 - p_n)`,
//! the form in which the classical logistic case-deletion score is sometimes
//! quoted. Finite differences of weighted refits agree with
//! [`ScoreConvention::Derivative`], which is the default.
//!
//! The one-step Newton score divides by `1 - h_n`, where the leverage is
//! `h_n = p_n (1 - p_n) x_n' H^{-1} x_n`. All scores follow the sign of an
//! upweighting derivative: removing matchup `n` changes the target by about
//! `-score[n]`.

use std::sync::OnceLock;

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::arena::{Arena, ModelId};
use crate::bt::{BtFit, Coordinates};
use crate::error::{Error, Result};

/// Leverage at or above this is treated as saturated.
pub const SATURATION_THRESHOLD: f64 = 1.0 - 1e-12;
/// Magnitude substituted for one-step Newton scores of saturated matchups.
pub const SATURATED_SENTINEL: f64 = 1e12;

const PAR_MIN_LEN: usize = 1 << 13;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScoreConvention {
    /// `e_t' H^{-1} x_n (y_n - p_n)`: the exact derivative.
    #[default]
    Derivative,
    /// `e_t' H^{-1} x_n p_n (1 - p_n) (y_n - p_n)`.
    AsPrinted,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScoreMethod {
    /// First-order influence function.
    #[default]
    Influence,
    /// Leverage-corrected one-step Newton, summed additively over a drop set.
    OneStepNewton,
}

/// Cholesky factorization of the Hessian over the free score coordinates.
///
/// Built once per fit and shared by every influence, leverage and selection
/// computation on that fit. Safe to share across threads for read-only solves.
#[derive(Debug, Clone)]
pub struct HessianFactor {
    matrix: DMatrix<f64>,
    chol: Cholesky<f64, Dyn>,
    coords: Coordinates,
    inverse: OnceLock<DMatrix<f64>>,
}

impl HessianFactor {
    pub(crate) fn new(matrix: DMatrix<f64>, coords: Coordinates) -> Option<Self> {
        let chol = matrix.clone().cholesky()?;
        Some(Self { matrix, chol, coords, inverse: OnceLock::new() })
    }

    pub fn dim(&self) -> usize {
        self.coords.dim
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.matrix
    }

    /// Free coordinate of `m`, if it has one.
    pub fn coordinate(&self, m: ModelId) -> Option<usize> {
        self.coords.of_model.get(m.0).copied().flatten()
    }

    pub fn solve(&self, b: &DVector<f64>) -> DVector<f64> {
        self.chol.solve(b)
    }

    pub fn inverse(&self) -> &DMatrix<f64> {
        self.inverse.get_or_init(|| self.chol.inverse())
    }

    /// Solves `H z = rhs` where `rhs` is indexed by model; entries of models
    /// without a free coordinate are ignored and come back as 0.
    pub fn solve_models(&self, rhs: &[f64]) -> Vec<f64> {
        let mut b = DVector::zeros(self.dim());
        for (m, c) in self.coords.of_model.iter().enumerate() {
            if let Some(c) = c {
                b[*c] = rhs[m];
            }
        }
        let z = self.solve(&b);
        self.coords.of_model.iter().map(|c| c.map_or(0.0, |c| z[c])).collect()
    }

    /// `x' H^{-1} x` for the design row `+a, -b`.
    pub fn row_quadratic(&self, a: ModelId, b: ModelId) -> f64 {
        let inv = self.inverse();
        let (ca, cb) = (self.coordinate(a), self.coordinate(b));
        let mut q = 0.0;
        if let Some(ca) = ca {
            q += inv[(ca, ca)];
        }
        if let Some(cb) = cb {
            q += inv[(cb, cb)];
        }
        if let (Some(ca), Some(cb)) = (ca, cb) {
            q -= 2.0 * inv[(ca, cb)];
        }
        q
    }
}

fn usable<'f>(arena: &Arena, fit: &'f BtFit) -> Result<&'f HessianFactor> {
    if fit.fitted_p.len() != arena.len() {
        return Err(Error::DimensionMismatch { expected: arena.len(), found: fit.fitted_p.len() });
    }
    if !fit.converged {
        return Err(Error::Unconverged {
            iterations: fit.iterations,
            gradient: fit.final_gradient_norm,
        });
    }
    fit.hessian()
}

fn check_model(arena: &Arena, m: ModelId) -> Result<()> {
    if m.0 >= arena.models() {
        return Err(Error::InvalidArgument(format!("model {m} is not registered")));
    }
    Ok(())
}

/// `score[n] = (z[a_n] - z[b_n]) * factor_n` for a per-model direction `z = H^{-1} c`.
fn linear_scores(arena: &Arena, fit: &BtFit, z: &[f64], convention: ScoreConvention) -> Vec<f64> {
    let matchups = arena.matchups();
    (0..arena.len())
        .into_par_iter()
        .with_min_len(PAR_MIN_LEN)
        .map(|n| {
            let m = &matchups[n];
            let p = fit.fitted_p[n];
            let residual = m.y() - p;
            let factor = match convention {
                ScoreConvention::Derivative => residual,
                ScoreConvention::AsPrinted => p * (1.0 - p) * residual,
            };
            (z[m.a.0] - z[m.b.0]) * factor
        })
        .collect()
}

/// Influence of every matchup on the score of `target`.
pub fn influence_scores(
    arena: &Arena,
    fit: &BtFit,
    target: ModelId,
    convention: ScoreConvention,
) -> Result<Vec<f64>> {
    let h = usable(arena, fit)?;
    check_model(arena, target)?;
    let mut rhs = vec![0.0; arena.models()];
    rhs[target.0] = 1.0;
    let z = h.solve_models(&rhs);
    Ok(linear_scores(arena, fit, &z, convention))
}

/// `h_n` for one matchup.
pub fn leverage(arena: &Arena, fit: &BtFit, n: usize) -> Result<f64> {
    let h = usable(arena, fit)?;
    let m = arena
        .matchups()
        .get(n)
        .ok_or_else(|| Error::InvalidArgument(format!("matchup index {n} out of range")))?;
    let p = fit.fitted_p[n];
    Ok(p * (1.0 - p) * h.row_quadratic(m.a, m.b))
}

/// `h_n` for every matchup.
pub fn leverages(arena: &Arena, fit: &BtFit) -> Result<Vec<f64>> {
    let h = usable(arena, fit)?;
    h.inverse();
    let matchups = arena.matchups();
    Ok((0..arena.len())
        .into_par_iter()
        .with_min_len(PAR_MIN_LEN)
        .map(|n| {
            let p = fit.fitted_p[n];
            p * (1.0 - p) * h.row_quadratic(matchups[n].a, matchups[n].b)
        })
        .collect())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NewtonScores {
    pub scores: Vec<f64>,
    /// Matchups whose leverage reached [`SATURATION_THRESHOLD`]; their score is
    /// `sign * SATURATED_SENTINEL`.
    pub saturated: Vec<usize>,
}

fn newton_correct(if_scores: Vec<f64>, lev: &[f64]) -> NewtonScores {
    let mut saturated = Vec::new();
    let scores = if_scores
        .into_iter()
        .zip(lev)
        .enumerate()
        .map(|(n, (s, &h))| {
            if h >= SATURATION_THRESHOLD {
                saturated.push(n);
                if s == 0.0 {
                    0.0
                } else {
                    s.signum() * SATURATED_SENTINEL
                }
            } else {
                s / (1.0 - h)
            }
        })
        .collect();
    if !saturated.is_empty() {
        log::warn!(
            "{} matchups have saturated leverage; one-step Newton scores clamped",
            saturated.len()
        );
    }
    NewtonScores { scores, saturated }
}

/// One-step Newton scores for `target`: influence divided by `1 - h_n`.
pub fn newton_scores(
    arena: &Arena,
    fit: &BtFit,
    target: ModelId,
    convention: ScoreConvention,
) -> Result<NewtonScores> {
    let if_scores = influence_scores(arena, fit, target, convention)?;
    let lev = leverages(arena, fit)?;
    Ok(newton_correct(if_scores, &lev))
}

/// Per-matchup scores for the difference `theta_i - theta_j`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PairInfluence {
    pub i: ModelId,
    pub j: ModelId,
    pub method: ScoreMethod,
    pub convention: ScoreConvention,
    pub scores: Vec<f64>,
    pub saturated: Vec<usize>,
}

/// Scores for `theta_i - theta_j` from a single solve of `H z = e_i - e_j`.
pub fn pair_influence(
    arena: &Arena,
    fit: &BtFit,
    i: ModelId,
    j: ModelId,
    method: ScoreMethod,
    convention: ScoreConvention,
) -> Result<PairInfluence> {
    if i == j {
        return Err(Error::InvalidArgument("pair influence needs two distinct models".into()));
    }
    let h = usable(arena, fit)?;
    check_model(arena, i)?;
    check_model(arena, j)?;
    let mut rhs = vec![0.0; arena.models()];
    rhs[i.0] = 1.0;
    rhs[j.0] = -1.0;
    let z = h.solve_models(&rhs);
    let if_scores = linear_scores(arena, fit, &z, convention);
    let (scores, saturated) = match method {
        ScoreMethod::Influence => (if_scores, Vec::new()),
        ScoreMethod::OneStepNewton => {
            let corrected = newton_correct(if_scores, &leverages(arena, fit)?);
            (corrected.scores, corrected.saturated)
        }
    };
    Ok(PairInfluence { i, j, method, convention, scores, saturated })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::bt::{fit_full, FitOptions};

    fn two_two() -> Arena {
        Arena::from_records([
            ("A", "B", true),
            ("A", "B", true),
            ("A", "B", false),
            ("A", "B", false),
        ])
        .unwrap()
    }

    fn no_ridge() -> FitOptions {
        FitOptions { ridge: 0.0, ..FitOptions::default() }
    }

    #[test]
    fn as_printed_two_two_fixture() {
        let arena = two_two();
        let fit = fit_full(&arena, &no_ridge()).unwrap();
        assert_eq!(fit.hessian().unwrap().matrix()[(0, 0)], 1.0);
        let s = influence_scores(&arena, &fit, ModelId(1), ScoreConvention::AsPrinted).unwrap();
        assert_eq!(s, vec![-0.125, -0.125, 0.125, 0.125]);
        // The exact derivative drops the p(1-p) factor.
        let d = influence_scores(&arena, &fit, ModelId(1), ScoreConvention::Derivative).unwrap();
        assert_eq!(d, vec![-0.5, -0.5, 0.5, 0.5]);
    }

    #[test]
    fn reference_target_is_zero() {
        let arena = two_two();
        let fit = fit_full(&arena, &FitOptions::default()).unwrap();
        let s = influence_scores(&arena, &fit, ModelId(0), ScoreConvention::Derivative).unwrap();
        assert!(s.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn pair_influence_two_two() {
        let arena = two_two();
        let fit = fit_full(&arena, &no_ridge()).unwrap();
        let pi = pair_influence(
            &arena,
            &fit,
            ModelId(0),
            ModelId(1),
            ScoreMethod::Influence,
            ScoreConvention::AsPrinted,
        )
        .unwrap();
        assert_eq!(pi.scores, vec![0.125, 0.125, -0.125, -0.125]);
        assert!(pair_influence(
            &arena,
            &fit,
            ModelId(1),
            ModelId(1),
            ScoreMethod::Influence,
            ScoreConvention::Derivative
        )
        .is_err());
    }

    #[test]
    fn leverage_two_two() {
        let arena = two_two();
        let fit = fit_full(&arena, &no_ridge()).unwrap();
        let lev = leverages(&arena, &fit).unwrap();
        assert_eq!(lev, vec![0.25; 4]);
        assert_eq!(leverage(&arena, &fit, 2).unwrap(), 0.25);
        assert!(leverage(&arena, &fit, 4).is_err());
        let ns = newton_scores(&arena, &fit, ModelId(1), ScoreConvention::AsPrinted).unwrap();
        for (n, s) in ns.scores.iter().enumerate() {
            let expect = [-0.125, -0.125, 0.125, 0.125][n] / 0.75;
            assert!((s - expect).abs() < 1e-15);
        }
        assert!(ns.saturated.is_empty());
    }

    #[test]
    fn large_ridge_shrinks_leverage() {
        let arena = two_two();
        let fit = fit_full(&arena, &FitOptions { ridge: 1e6, ..FitOptions::default() }).unwrap();
        assert!(leverages(&arena, &fit).unwrap().iter().all(|&h| h < 1e-6));
    }

    #[test]
    fn residual_zero_gives_zero_score() {
        let arena = two_two();
        let fit = fit_full(&arena, &no_ridge()).unwrap();
        // Fabricate y = p on one matchup by checking the factor directly.
        let z = vec![0.0, 1.0];
        let mut fit_eq = fit.clone();
        fit_eq.fitted_p[0] = 1.0;
        let s = linear_scores(&arena, &fit_eq, &z, ScoreConvention::Derivative);
        assert_eq!(s[0], 0.0);
    }

    #[test]
    fn unconverged_fit_rejected() {
        let arena =
            Arena::from_records([("A", "B", true), ("A", "B", true), ("A", "B", false)]).unwrap();
        let fit =
            fit_full(&arena, &FitOptions { max_iterations: 1, ..FitOptions::default() }).unwrap();
        assert!(matches!(
            influence_scores(&arena, &fit, ModelId(1), ScoreConvention::Derivative),
            Err(Error::Unconverged { .. })
        ));
    }

    #[test]
    fn saturated_leverage_is_clamped() {
        let out = newton_correct(vec![0.3, -0.2, 0.0], &[1.0, 0.5, 1.0]);
        assert_eq!(out.scores, vec![SATURATED_SENTINEL, -0.4, 0.0]);
        assert_eq!(out.saturated, vec![0, 2]);
    }

    #[test]
    fn solve_residual_is_small() {
        let arena = Arena::from_records([
            ("a", "b", true),
            ("b", "c", true),
            ("c", "a", true),
            ("a", "c", false),
            ("b", "a", true),
            ("c", "b", false),
        ])
        .unwrap();
        let fit = fit_full(&arena, &FitOptions::default()).unwrap();
        let h = fit.hessian().unwrap();
        let b = DVector::from_vec(vec![1.0, -2.0]);
        let x = h.solve(&b);
        let r = h.matrix() * x - &b;
        assert!(r.norm() <= 1e-10 * b.norm());
    }
}
