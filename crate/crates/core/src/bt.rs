//! Weighted Bradley-Terry maximum likelihood.
//!
//! The fit minimises
//!
//! ```text
//! sum_n w_n * ( -y_n log s(x_n' theta) - (1 - y_n) log(1 - s(x_n' theta)) ) + ridge/2 * |theta|^2
//! ```
//!
//! over the scores of every model except the reference, whose score stays at 0.
//! Matchups are first collapsed into per-pair sufficient statistics (total
//! weight and weighted wins), so each Newton iteration costs `O(pairs + P^3)`
//! regardless of `N`.

use std::collections::{BTreeSet, VecDeque};

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::arena::{design_row, Arena, ModelId};
use crate::error::{Error, Result};
use crate::influence::HessianFactor;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FitOptions {
    /// Strength of the `ridge/2 * |theta|^2` penalty. Zero is allowed.
    pub ridge: f64,
    /// Convergence threshold on the gradient max-norm.
    pub tolerance: f64,
    pub max_iterations: usize,
}

impl Default for FitOptions {
    fn default() -> Self {
        Self { ridge: 1e-6, tolerance: 1e-8, max_iterations: 100 }
    }
}

impl FitOptions {
    pub fn validate(&self) -> Result<()> {
        if !(self.ridge >= 0.0 && self.ridge.is_finite()) {
            return Err(Error::InvalidArgument(format!("ridge must be >= 0, got {}", self.ridge)));
        }
        if !(self.tolerance > 0.0 && self.tolerance.is_finite()) {
            return Err(Error::InvalidArgument(format!(
                "tolerance must be > 0, got {}",
                self.tolerance
            )));
        }
        if self.max_iterations == 0 {
            return Err(Error::InvalidArgument("max_iterations must be >= 1".into()));
        }
        Ok(())
    }
}

/// Per-matchup data weights. Robustness audits only use binary weights; the
/// derivative oracle also uses weights slightly above 1.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Weighting {
    weights: Vec<f64>,
    dropped: usize,
}

impl Weighting {
    pub fn ones(n: usize) -> Self {
        Self { weights: vec![1.0; n], dropped: 0 }
    }

    /// Weight 0 on `indices`, 1 elsewhere. Duplicate indices count once.
    pub fn dropping(n: usize, indices: &[usize]) -> Result<Self> {
        let mut weights = vec![1.0; n];
        let mut dropped = 0;
        for &i in indices {
            if i >= n {
                return Err(Error::InvalidArgument(format!(
                    "drop index {i} out of range for {n} matchups"
                )));
            }
            if weights[i] != 0.0 {
                weights[i] = 0.0;
                dropped += 1;
            }
        }
        Ok(Self { weights, dropped })
    }

    pub fn from_weights(weights: Vec<f64>) -> Result<Self> {
        if let Some(w) = weights.iter().find(|w| !(w.is_finite() && **w >= 0.0)) {
            return Err(Error::InvalidArgument(format!(
                "weights must be finite and >= 0, got {w}"
            )));
        }
        let dropped = weights.iter().filter(|&&w| w == 0.0).count();
        Ok(Self { weights, dropped })
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn len(&self) -> usize {
        self.weights.len()
    }

    pub fn is_empty(&self) -> bool {
        self.weights.is_empty()
    }

    pub fn dropped_count(&self) -> usize {
        self.dropped
    }

    pub fn is_unit(&self) -> bool {
        self.weights.iter().all(|&w| w == 1.0)
    }
}

/// Sufficient statistics for one unordered model pair `lo < hi`.
#[derive(Debug, Clone, Copy)]
pub(crate) struct PairStat {
    pub lo: usize,
    pub hi: usize,
    pub total: f64,
    pub lo_wins: f64,
}

pub(crate) fn aggregate(arena: &Arena, weights: &[f64]) -> Vec<PairStat> {
    let m = arena.models();
    let mut total = vec![0.0; m * m];
    let mut lo_wins = vec![0.0; m * m];
    for (matchup, &w) in arena.matchups().iter().zip(weights) {
        if w == 0.0 {
            continue;
        }
        let (a, b) = (matchup.a.0, matchup.b.0);
        let (lo, hi, lo_won) = if a < b { (a, b, matchup.a_won) } else { (b, a, !matchup.a_won) };
        total[lo * m + hi] += w;
        if lo_won {
            lo_wins[lo * m + hi] += w;
        }
    }
    let mut stats = Vec::new();
    for lo in 0..m {
        for hi in lo + 1..m {
            let t = total[lo * m + hi];
            if t > 0.0 {
                stats.push(PairStat { lo, hi, total: t, lo_wins: lo_wins[lo * m + hi] });
            }
        }
    }
    stats
}

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// `log(1 + e^x)` without overflow.
fn softplus(x: f64) -> f64 {
    x.max(0.0) + (-x.abs()).exp().ln_1p()
}

/// Maps models to free parameter coordinates. The reference model and models
/// without any positively weighted matchup have no coordinate.
#[derive(Debug, Clone, PartialEq, Eq)]
pub(crate) struct Coordinates {
    pub of_model: Vec<Option<usize>>,
    pub dim: usize,
}

impl Coordinates {
    fn new(models: usize, identified: &[bool]) -> Self {
        let mut of_model = vec![None; models];
        let mut dim = 0;
        for (m, slot) in of_model.iter_mut().enumerate().skip(1) {
            if identified[m] {
                *slot = Some(dim);
                dim += 1;
            }
        }
        Self { of_model, dim }
    }
}

struct Problem<'a> {
    pairs: &'a [PairStat],
    coords: &'a Coordinates,
    ridge: f64,
}

impl Problem<'_> {
    fn objective(&self, theta: &[f64]) -> f64 {
        let nll: f64 = self
            .pairs
            .iter()
            .map(|p| {
                let d = theta[p.lo] - theta[p.hi];
                p.lo_wins * softplus(-d) + (p.total - p.lo_wins) * softplus(d)
            })
            .sum();
        nll + 0.5 * self.ridge * theta.iter().map(|t| t * t).sum::<f64>()
    }

    /// Gradient of the objective in free coordinates.
    fn gradient(&self, theta: &[f64]) -> DVector<f64> {
        let mut g = DVector::zeros(self.coords.dim);
        for p in self.pairs {
            let r = p.total * sigmoid(theta[p.lo] - theta[p.hi]) - p.lo_wins;
            if let Some(c) = self.coords.of_model[p.lo] {
                g[c] += r;
            }
            if let Some(c) = self.coords.of_model[p.hi] {
                g[c] -= r;
            }
        }
        for (m, c) in self.coords.of_model.iter().enumerate() {
            if let Some(c) = c {
                g[*c] += self.ridge * theta[m];
            }
        }
        g
    }

    fn hessian(&self, theta: &[f64]) -> DMatrix<f64> {
        hessian_matrix(self.pairs, self.coords, self.ridge, theta)
    }
}

/// `X' W V X + ridge I` over the free coordinates.
pub(crate) fn hessian_matrix(
    pairs: &[PairStat],
    coords: &Coordinates,
    ridge: f64,
    theta: &[f64],
) -> DMatrix<f64> {
    let mut h = DMatrix::zeros(coords.dim, coords.dim);
    for p in pairs {
        let s = sigmoid(theta[p.lo] - theta[p.hi]);
        let v = p.total * s * (1.0 - s);
        let lo = coords.of_model[p.lo];
        let hi = coords.of_model[p.hi];
        if let Some(a) = lo {
            h[(a, a)] += v;
        }
        if let Some(b) = hi {
            h[(b, b)] += v;
        }
        if let (Some(a), Some(b)) = (lo, hi) {
            h[(a, b)] -= v;
            h[(b, a)] -= v;
        }
    }
    for c in 0..coords.dim {
        h[(c, c)] += ridge;
    }
    h
}

/// Without a ridge the MLE is finite and unique iff the "beat" digraph on the
/// identified models is strongly connected and contains the reference model.
fn check_identifiable(models: usize, pairs: &[PairStat], identified: &[bool]) -> Result<()> {
    if !identified[0] {
        return Err(Error::Disconnected);
    }
    let mut beats = vec![Vec::new(); models];
    let mut beaten_by = vec![Vec::new(); models];
    let mut undirected = vec![Vec::new(); models];
    for p in pairs {
        if p.lo_wins > 0.0 {
            beats[p.lo].push(p.hi);
            beaten_by[p.hi].push(p.lo);
        }
        if p.total - p.lo_wins > 0.0 {
            beats[p.hi].push(p.lo);
            beaten_by[p.lo].push(p.hi);
        }
        undirected[p.lo].push(p.hi);
        undirected[p.hi].push(p.lo);
    }
    let reach = |adj: &[Vec<usize>]| {
        let mut seen = vec![false; models];
        let mut queue = VecDeque::from([0]);
        seen[0] = true;
        while let Some(u) = queue.pop_front() {
            for &v in &adj[u] {
                if !seen[v] {
                    seen[v] = true;
                    queue.push_back(v);
                }
            }
        }
        seen
    };
    let covers = |seen: &[bool]| (0..models).all(|m| !identified[m] || seen[m]);
    if !covers(&reach(&undirected)) {
        return Err(Error::Disconnected);
    }
    if !covers(&reach(&beats)) || !covers(&reach(&beaten_by)) {
        return Err(Error::Separation);
    }
    Ok(())
}

#[derive(Debug, Clone)]
pub struct BtFit {
    /// Scores for every model; `theta[0] == 0` exactly.
    pub theta: Vec<f64>,
    /// `s(x_n' theta)` for every matchup, including zero-weight ones.
    pub fitted_p: Vec<f64>,
    pub converged: bool,
    pub iterations: usize,
    pub final_gradient_norm: f64,
    pub options: FitOptions,
    pub weighting: Weighting,
    /// Models with no positively weighted matchup; their scores are pinned at 0.
    pub unidentified: Vec<ModelId>,
    pub(crate) coords: Coordinates,
    pub(crate) hessian: Option<HessianFactor>,
}

impl BtFit {
    pub fn ridge(&self) -> f64 {
        self.options.ridge
    }

    pub fn models(&self) -> usize {
        self.theta.len()
    }

    pub fn score(&self, m: ModelId) -> f64 {
        self.theta[m.0]
    }

    pub fn is_identified(&self, m: ModelId) -> bool {
        !self.unidentified.contains(&m)
    }

    pub fn ranking(&self) -> Ranking {
        ranking(&self.theta)
    }

    pub fn top_k(&self, k: usize) -> Result<BTreeSet<ModelId>> {
        top_k_set(&self.theta, k)
    }

    /// The cached factorization of the Hessian at the fitted scores.
    pub fn hessian(&self) -> Result<&HessianFactor> {
        self.hessian.as_ref().ok_or(Error::SingularHessian)
    }

    /// Per-matchup gradient `sum_n w_n x_n (y_n - p_n) - ridge * theta` in free
    /// coordinates, recomputed from the fitted probabilities.
    pub fn score_equation_residual(&self, arena: &Arena) -> Vec<f64> {
        let mut g = vec![0.0; self.coords.dim];
        for ((m, &w), &p) in
            arena.matchups().iter().zip(self.weighting.weights()).zip(&self.fitted_p)
        {
            let r = w * (m.y() - p);
            if let Some(c) = self.coords.of_model[m.a.0] {
                g[c] += r;
            }
            if let Some(c) = self.coords.of_model[m.b.0] {
                g[c] -= r;
            }
        }
        for (m, c) in self.coords.of_model.iter().enumerate() {
            if let Some(c) = c {
                g[*c] -= self.options.ridge * self.theta[m];
            }
        }
        g
    }
}

/// Fits the Bradley-Terry model under `weighting`.
///
/// Damped Newton with Armijo step halving; falls back to a gradient step if the
/// Hessian factorization fails. The `converged` flag is false when the
/// iteration cap is hit or the line search stalls.
pub fn fit(arena: &Arena, weighting: &Weighting, opts: &FitOptions) -> Result<BtFit> {
    opts.validate()?;
    if weighting.len() != arena.len() {
        return Err(Error::DimensionMismatch { expected: arena.len(), found: weighting.len() });
    }
    if weighting.weights().iter().all(|&w| w == 0.0) {
        return Err(Error::AllWeightsZero);
    }
    let models = arena.models();
    let pairs = aggregate(arena, weighting.weights());
    let mut identified = vec![false; models];
    for p in &pairs {
        identified[p.lo] = true;
        identified[p.hi] = true;
    }
    if opts.ridge == 0.0 {
        check_identifiable(models, &pairs, &identified)?;
    }
    let coords = Coordinates::new(models, &identified);
    let problem = Problem { pairs: &pairs, coords: &coords, ridge: opts.ridge };

    let mut theta = vec![0.0; models];
    let mut f = problem.objective(&theta);
    let mut g = problem.gradient(&theta);
    let mut iterations = 0;
    let mut converged = false;
    loop {
        if !f.is_finite() || g.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite);
        }
        if g.amax() <= opts.tolerance {
            converged = true;
            break;
        }
        if iterations >= opts.max_iterations {
            break;
        }
        iterations += 1;

        let step = match problem.hessian(&theta).cholesky() {
            Some(chol) => -chol.solve(&g),
            None => {
                log::warn!("Hessian factorization failed at iteration {iterations}; taking a gradient step");
                -&g
            }
        };
        let slope = g.dot(&step);
        // Rounding noise near the optimum can make an exact Armijo test fail.
        let slack = 1e-12 * f.abs().max(1.0);
        let mut t = 1.0;
        let mut accepted = None;
        for _ in 0..60 {
            let mut trial = theta.clone();
            for (m, c) in coords.of_model.iter().enumerate() {
                if let Some(c) = c {
                    trial[m] += t * step[*c];
                }
            }
            let f_trial = problem.objective(&trial);
            if f_trial.is_finite() && f_trial <= f + 1e-4 * t * slope + slack {
                accepted = Some((trial, f_trial));
                break;
            }
            t *= 0.5;
        }
        match accepted {
            Some((trial, f_trial)) => {
                theta = trial;
                f = f_trial;
                g = problem.gradient(&theta);
            }
            None => {
                log::warn!("line search stalled at iteration {iterations}");
                break;
            }
        }
    }

    let fitted_p = arena.matchups().iter().map(|m| sigmoid(design_row(m).dot(&theta))).collect();
    let hessian = HessianFactor::new(problem.hessian(&theta), coords.clone());
    if hessian.is_none() {
        log::warn!("Hessian at the fitted scores is not positive definite");
    }
    let unidentified = (0..models).filter(|&m| !identified[m]).map(ModelId).collect();
    Ok(BtFit {
        theta,
        fitted_p,
        converged,
        iterations,
        final_gradient_norm: g.amax(),
        options: *opts,
        weighting: weighting.clone(),
        unidentified,
        coords,
        hessian,
    })
}

/// Full-data fit.
pub fn fit_full(arena: &Arena, opts: &FitOptions) -> Result<BtFit> {
    fit(arena, &Weighting::ones(arena.len()), opts)
}

/// Refits with `drop` removed (weight 0) and every other matchup at weight 1.
pub fn refit_without(arena: &Arena, opts: &FitOptions, drop: &[usize]) -> Result<BtFit> {
    fit(arena, &Weighting::dropping(arena.len(), drop)?, opts)
}

/// Models sorted by score, highest first.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Ranking {
    pub order: Vec<ModelId>,
    /// Pairs of models with exactly equal scores (lower index first).
    pub ties: Vec<(ModelId, ModelId)>,
}

impl Ranking {
    /// 1-based rank of every model, indexed by model.
    pub fn ranks(&self) -> Vec<usize> {
        let mut ranks = vec![0; self.order.len()];
        for (r, m) in self.order.iter().enumerate() {
            ranks[m.0] = r + 1;
        }
        ranks
    }
}

/// Sorts by descending score; exact ties keep the lower index first.
pub fn ranking(theta: &[f64]) -> Ranking {
    let mut order: Vec<ModelId> = (0..theta.len()).map(ModelId).collect();
    order.sort_by(|a, b| theta[b.0].total_cmp(&theta[a.0]).then(a.cmp(b)));
    let mut ties = Vec::new();
    let mut start = 0;
    while start < order.len() {
        let mut end = start + 1;
        while end < order.len() && theta[order[end].0] == theta[order[start].0] {
            end += 1;
        }
        for x in start..end {
            for y in x + 1..end {
                let (a, b) = (order[x].min(order[y]), order[x].max(order[y]));
                ties.push((a, b));
            }
        }
        start = end;
    }
    Ranking { order, ties }
}

/// The `k` highest-scoring models; ties at the boundary go to the lower index.
pub fn top_k_set(theta: &[f64], k: usize) -> Result<BTreeSet<ModelId>> {
    if k == 0 || k >= theta.len() {
        return Err(Error::InvalidArgument(format!("k must be in [1, {}), got {k}", theta.len())));
    }
    Ok(ranking(theta).order.into_iter().take(k).collect())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HeadToHead {
    pub wins_i: usize,
    pub wins_j: usize,
    /// `wins_i / (wins_i + wins_j)`; `None` when the two models never met.
    pub win_fraction_i: Option<f64>,
}

impl HeadToHead {
    pub fn met(&self) -> bool {
        self.win_fraction_i.is_some()
    }
}

/// Direct record between `i` and `j`, counting both orientations.
pub fn head_to_head(arena: &Arena, i: ModelId, j: ModelId) -> Result<HeadToHead> {
    if i == j {
        return Err(Error::InvalidArgument("head-to-head needs two distinct models".into()));
    }
    let (mut wins_i, mut wins_j) = (0, 0);
    for m in arena.matchups() {
        if m.involves(i) && m.involves(j) {
            if m.winner() == i {
                wins_i += 1;
            } else {
                wins_j += 1;
            }
        }
    }
    let total = wins_i + wins_j;
    let win_fraction_i = (total > 0).then(|| wins_i as f64 / total as f64);
    Ok(HeadToHead { wins_i, wins_j, win_fraction_i })
}
