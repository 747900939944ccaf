//! Ground truth for the approximations: exhaustive subset search, seeded
//! synthetic arenas and finite-difference derivatives.
//!
//! Synthetic arenas are drawn with `rand_pcg::Pcg64` (PCG XSL RR 128/64)
//! seeded through `SeedableRng::seed_from_u64`; each game consumes one
//! `f64` draw `u` and side `a` wins iff `u < s(theta_a - theta_b)`. The same
//! spec and seed therefore reproduce the same arena bit for bit.

use itertools::Itertools;
use rand::{RngExt, SeedableRng};
use rand_pcg::Pcg64;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::arena::{Arena, Matchup, ModelId, ModelRegistry};
use crate::bt::{fit, fit_full, refit_without, sigmoid, BtFit, FitOptions, Weighting};
use crate::error::{Error, Result};
use crate::robustness::orient;

/// Default ceiling on the number of refits the exhaustive oracle may run.
pub const DEFAULT_REFIT_CAP: u128 = 2_000_000;
/// Largest subset size the exhaustive oracle enumerates.
pub const MAX_ORACLE_BUDGET: usize = 4;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ScheduledPair {
    pub i: usize,
    pub j: usize,
    pub games: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthSpec {
    /// True scores; `true_theta[0]` must be 0 and its length sets `M`.
    pub true_theta: Vec<f64>,
    pub schedule: Vec<ScheduledPair>,
    pub seed: u64,
}

impl SynthSpec {
    /// Every unordered pair plays `games` times, lower index on side `a`.
    pub fn round_robin(true_theta: Vec<f64>, games: usize, seed: u64) -> Self {
        let m = true_theta.len();
        let schedule =
            (0..m).tuple_combinations().map(|(i, j)| ScheduledPair { i, j, games }).collect();
        Self { true_theta, schedule, seed }
    }

    /// `matchups` single games with true scores uniform in `[-spread, spread]`
    /// (reference pinned to 0). The first `models - 1` games form a chain
    /// `0-1, 1-2, ...` so every model appears; the rest are uniform distinct pairs.
    pub fn random(models: usize, matchups: usize, spread: f64, seed: u64) -> Self {
        let mut true_theta = vec![0.0; models];
        if models < 2 {
            return Self { true_theta, schedule: Vec::new(), seed };
        }
        let mut rng = Pcg64::seed_from_u64(seed ^ 0x5eed_5eed_5eed_5eed);
        for t in true_theta.iter_mut().skip(1) {
            *t = spread * (2.0 * rng.random::<f64>() - 1.0);
        }
        let chain = matchups.min(models.saturating_sub(1));
        let schedule = (0..chain)
            .map(|i| ScheduledPair { i, j: i + 1, games: 1 })
            .chain((chain..matchups).map(|_| {
                let i = rng.random_range(0..models);
                let mut j = rng.random_range(0..models - 1);
                if j >= i {
                    j += 1;
                }
                ScheduledPair { i, j, games: 1 }
            }))
            .collect();
        Self { true_theta, schedule, seed }
    }

    pub fn models(&self) -> usize {
        self.true_theta.len()
    }

    pub fn validate(&self) -> Result<()> {
        let m = self.models();
        if m < 2 {
            return Err(Error::TooFewModels(m));
        }
        if self.true_theta[0] != 0.0 || self.true_theta.iter().any(|t| !t.is_finite()) {
            return Err(Error::InvalidArgument(
                "true scores must be finite with theta[0] = 0".into(),
            ));
        }
        for s in &self.schedule {
            if s.i == s.j || s.i >= m || s.j >= m || s.games == 0 {
                return Err(Error::InvalidArgument(format!("invalid schedule entry {s:?}")));
            }
        }
        Ok(())
    }
}

/// Draws an arena from the Bradley-Terry generative model.
pub fn generate(spec: &SynthSpec) -> Result<Arena> {
    spec.validate()?;
    let registry = ModelRegistry::from_names((0..spec.models()).map(|m| format!("m{m}")))?;
    let mut rng = Pcg64::seed_from_u64(spec.seed);
    let mut matchups = Vec::new();
    for s in &spec.schedule {
        let p = sigmoid(spec.true_theta[s.i] - spec.true_theta[s.j]);
        for _ in 0..s.games {
            let a_won = rng.random::<f64>() < p;
            matchups.push(Matchup::new(ModelId(s.i), ModelId(s.j), a_won));
        }
    }
    Arena::new(registry, matchups)
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct BruteForce {
    pub i: ModelId,
    pub j: ModelId,
    pub flip_exists: bool,
    /// Smallest reversing subset, lexicographically first among those of its size.
    pub minimal_subset: Option<Vec<usize>>,
}

fn binomial(n: usize, k: usize) -> u128 {
    if k > n {
        return 0;
    }
    (0..k).fold(1u128, |acc, t| acc * (n - t) as u128 / (t + 1) as u128)
}

/// Whether dropping `subset` strictly reverses `theta_i >= theta_j`. Failed or
/// degenerate refits do not count as reversals.
pub fn reverses(
    arena: &Arena,
    opts: &FitOptions,
    i: ModelId,
    j: ModelId,
    subset: &[usize],
) -> bool {
    match refit_without(arena, opts, subset) {
        Ok(r) => r.converged && r.is_identified(i) && r.is_identified(j) && r.score(i) < r.score(j),
        Err(_) => false,
    }
}

/// Exhaustively refits every subset of at most `budget` matchups.
///
/// The pair is oriented on the full-data fit exactly as the audit does. Sizes
/// are searched in increasing order, so the first hit is minimal.
pub fn brute_force_pair(
    arena: &Arena,
    i: ModelId,
    j: ModelId,
    budget: usize,
    opts: &FitOptions,
    cap: u128,
) -> Result<BruteForce> {
    if i == j {
        return Err(Error::InvalidArgument("brute force needs two distinct models".into()));
    }
    if budget > MAX_ORACLE_BUDGET {
        return Err(Error::InvalidArgument(format!(
            "oracle budget {budget} above the maximum of {MAX_ORACLE_BUDGET}"
        )));
    }
    let n = arena.len();
    let budget = budget.min(n.saturating_sub(1));
    let needed: u128 = (1..=budget).map(|s| binomial(n, s)).sum();
    if needed > cap {
        return Err(Error::OracleCapExceeded { needed, cap });
    }
    let full = fit_full(arena, opts)?;
    let (i, j) = orient(&full, i, j);
    for size in 1..=budget {
        let subsets: Vec<Vec<usize>> = (0..n).combinations(size).collect();
        if let Some(hit) = subsets.into_par_iter().find_first(|s| reverses(arena, opts, i, j, s)) {
            return Ok(BruteForce { i, j, flip_exists: true, minimal_subset: Some(hit) });
        }
    }
    Ok(BruteForce { i, j, flip_exists: false, minimal_subset: None })
}

fn tight(opts: &FitOptions) -> FitOptions {
    FitOptions {
        ridge: opts.ridge,
        tolerance: opts.tolerance.min(1e-12),
        max_iterations: opts.max_iterations.max(200),
    }
}

fn converged(fit: BtFit) -> Result<BtFit> {
    if fit.converged {
        Ok(fit)
    } else {
        Err(Error::Unconverged { iterations: fit.iterations, gradient: fit.final_gradient_norm })
    }
}

/// Central difference of `theta_target` in the weight of matchup `n`, each side
/// a full weighted refit with the fit's ridge at a tightened tolerance.
pub fn finite_difference_influence(
    arena: &Arena,
    fit: &BtFit,
    target: ModelId,
    n: usize,
    epsilon: f64,
) -> Result<f64> {
    if !(1e-6..=1e-3).contains(&epsilon) {
        return Err(Error::InvalidArgument(format!(
            "epsilon must be in [1e-6, 1e-3], got {epsilon}"
        )));
    }
    if n >= arena.len() || target.0 >= arena.models() {
        return Err(Error::InvalidArgument("matchup or model index out of range".into()));
    }
    let base = fit.weighting.weights();
    if base[n] < epsilon {
        return Err(Error::InvalidArgument(format!("matchup {n} has weight below epsilon")));
    }
    let opts = tight(&fit.options);
    let shifted = |delta: f64| -> Result<f64> {
        let mut w = base.to_vec();
        w[n] += delta;
        let refit = converged(crate::bt::fit(arena, &Weighting::from_weights(w)?, &opts)?)?;
        Ok(refit.score(target))
    };
    Ok((shifted(epsilon)? - shifted(-epsilon)?) / (2.0 * epsilon))
}

/// Exact change in `theta_target` when matchup `n` alone is removed.
pub fn leave_one_out_delta(arena: &Arena, fit_: &BtFit, target: ModelId, n: usize) -> Result<f64> {
    let opts = tight(&fit_.options);
    let base = converged(fit(arena, &fit_.weighting, &opts)?)?;
    let loo = converged(refit_without(arena, &opts, &[n])?)?;
    Ok(loo.score(target) - base.score(target))
}
