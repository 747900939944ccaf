//! Worst-case data-dropping audits.
//!
//! A pair `(i, j)` with `theta_i >= theta_j` on the full data is non-robust at a
//! drop budget when removing at most that many matchups makes `theta_i <
//! theta_j` strictly. Candidate drop sets are chosen from first-order scores
//! (influence or one-step Newton); a verdict of non-robust is only ever issued
//! after an exact refit without the candidate set shows the reversal.
//!
//! The top-k audit checks every pair straddling the top-k boundary, closest
//! scores first, and stops at the first verified reversal.

use std::fmt;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::arena::{Arena, ModelId};
use crate::bt::{refit_without, top_k_set, BtFit};
use crate::error::{Error, Result};
use crate::influence::{pair_influence, PairInfluence, ScoreConvention, ScoreMethod};

/// Maximum number of matchups that may be dropped.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DropBudget {
    /// `floor(alpha * N)` matchups, `alpha` in (0, 1).
    Fraction(f64),
    Count(usize),
}

impl DropBudget {
    /// Number of droppable matchups for an arena of `n` matchups; must land in `[1, n - 1]`.
    pub fn resolve(&self, n: usize) -> Result<usize> {
        let count = match *self {
            DropBudget::Fraction(alpha) => {
                if !(alpha > 0.0 && alpha < 1.0) {
                    return Err(Error::InvalidArgument(format!(
                        "alpha must be in (0, 1), got {alpha}"
                    )));
                }
                (alpha * n as f64).floor() as usize
            }
            DropBudget::Count(c) => c,
        };
        if count < 1 || count + 1 > n {
            return Err(Error::InvalidArgument(format!(
                "drop budget {self} resolves to {count}, outside [1, {}]",
                n.saturating_sub(1)
            )));
        }
        Ok(count)
    }
}

impl fmt::Display for DropBudget {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            DropBudget::Fraction(a) => write!(f, "alpha={a}"),
            DropBudget::Count(c) => write!(f, "count={c}"),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct CheckOptions {
    pub method: ScoreMethod,
    pub convention: ScoreConvention,
    /// Refit even when the first-order prediction shows no reversal.
    pub always_refit: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Verdict {
    Robust,
    NonRobust,
    /// The refit left `i` or `j` without data or failed; no verdict is issued.
    Degenerate,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FitDiagnostics {
    pub converged: bool,
    pub iterations: usize,
    pub final_gradient_norm: f64,
}

impl From<&BtFit> for FitDiagnostics {
    fn from(fit: &BtFit) -> Self {
        Self {
            converged: fit.converged,
            iterations: fit.iterations,
            final_gradient_norm: fit.final_gradient_norm,
        }
    }
}

/// Outcome of auditing one pair at one budget. `i` is the higher-scored model
/// on the full data.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RobustnessReport {
    pub i: ModelId,
    pub j: ModelId,
    pub budget: DropBudget,
    pub resolved_count: usize,
    pub method: ScoreMethod,
    pub convention: ScoreConvention,
    /// First-order predicted change in `theta_i - theta_j` from dropping `dropped`.
    pub predicted_delta: f64,
    pub predicted_flip: bool,
    pub refit_performed: bool,
    pub refit_flip: bool,
    /// Dropped matchup indices, most influential first.
    pub dropped: Vec<usize>,
    pub theta_before: (f64, f64),
    pub theta_after: Option<(f64, f64)>,
    pub degenerate: bool,
    pub degenerate_reason: Option<String>,
    pub refit_diagnostics: Option<FitDiagnostics>,
    pub verdict: Verdict,
}

impl RobustnessReport {
    pub fn gap(&self) -> f64 {
        self.theta_before.0 - self.theta_before.1
    }

    pub fn is_non_robust(&self) -> bool {
        self.verdict == Verdict::NonRobust
    }
}

/// Indices whose removal is predicted to shrink `theta_i - theta_j`, i.e. those
/// with a positive score, largest first (ties to the lower index), at most
/// `count` of them. Runs in `O(N + count log count)`.
pub fn select_drop_set(pi: &PairInfluence, count: usize) -> Vec<usize> {
    let scores = &pi.scores;
    let cmp = |a: &usize, b: &usize| scores[*b].total_cmp(&scores[*a]).then(a.cmp(b));
    let mut helpful: Vec<usize> = (0..scores.len()).filter(|&n| scores[n] > 0.0).collect();
    if helpful.len() > count {
        if count == 0 {
            return Vec::new();
        }
        helpful.select_nth_unstable_by(count - 1, cmp);
        helpful.truncate(count);
    }
    helpful.sort_unstable_by(cmp);
    helpful
}

/// Orients `(i, j)` so the first model has the higher full-data score; exact
/// ties put the lower index first.
pub fn orient(fit: &BtFit, i: ModelId, j: ModelId) -> (ModelId, ModelId) {
    let (ti, tj) = (fit.score(i), fit.score(j));
    if ti < tj || (ti == tj && j < i) {
        (j, i)
    } else {
        (i, j)
    }
}

/// Pair audit with the influence scores computed once, reusable across budgets.
pub struct PairAudit<'a> {
    arena: &'a Arena,
    fit: &'a BtFit,
    opts: CheckOptions,
    influence: PairInfluence,
}

impl<'a> PairAudit<'a> {
    pub fn new(
        arena: &'a Arena,
        fit: &'a BtFit,
        i: ModelId,
        j: ModelId,
        opts: CheckOptions,
    ) -> Result<Self> {
        if i == j {
            return Err(Error::InvalidArgument("a pair audit needs two distinct models".into()));
        }
        if !fit.weighting.is_unit() {
            return Err(Error::InvalidArgument("audits start from the full-data fit".into()));
        }
        let (i, j) = orient(fit, i, j);
        let influence = pair_influence(arena, fit, i, j, opts.method, opts.convention)?;
        Ok(Self { arena, fit, opts, influence })
    }

    pub fn pair(&self) -> (ModelId, ModelId) {
        (self.influence.i, self.influence.j)
    }

    pub fn influence(&self) -> &PairInfluence {
        &self.influence
    }

    pub fn gap(&self) -> f64 {
        let (i, j) = self.pair();
        self.fit.score(i) - self.fit.score(j)
    }

    pub fn check(&self, budget: DropBudget) -> Result<RobustnessReport> {
        Ok(self.check_with_refit(budget)?.0)
    }

    pub(crate) fn check_with_refit(
        &self,
        budget: DropBudget,
    ) -> Result<(RobustnessReport, Option<BtFit>)> {
        let count = budget.resolve(self.arena.len())?;
        let dropped = select_drop_set(&self.influence, count);
        self.evaluate(budget, count, dropped)
    }

    fn evaluate(
        &self,
        budget: DropBudget,
        resolved_count: usize,
        dropped: Vec<usize>,
    ) -> Result<(RobustnessReport, Option<BtFit>)> {
        let (i, j) = self.pair();
        let theta_before = (self.fit.score(i), self.fit.score(j));
        let predicted_delta = -dropped.iter().map(|&n| self.influence.scores[n]).sum::<f64>();
        let predicted_flip = !dropped.is_empty() && self.gap() + predicted_delta < 0.0;

        let mut report = RobustnessReport {
            i,
            j,
            budget,
            resolved_count,
            method: self.opts.method,
            convention: self.opts.convention,
            predicted_delta,
            predicted_flip,
            refit_performed: false,
            refit_flip: false,
            dropped,
            theta_before,
            theta_after: None,
            degenerate: false,
            degenerate_reason: None,
            refit_diagnostics: None,
            verdict: Verdict::Robust,
        };
        if report.dropped.is_empty() || !(predicted_flip || self.opts.always_refit) {
            return Ok((report, None));
        }

        report.refit_performed = true;
        let refit = match refit_without(self.arena, &self.fit.options, &report.dropped) {
            Ok(refit) => refit,
            Err(e) => {
                report.degenerate = true;
                report.degenerate_reason = Some(format!("refit failed: {e}"));
                report.verdict = Verdict::Degenerate;
                return Ok((report, None));
            }
        };
        report.refit_diagnostics = Some(FitDiagnostics::from(&refit));
        report.theta_after = Some((refit.score(i), refit.score(j)));
        let unidentified: Vec<&str> = [i, j]
            .into_iter()
            .filter(|m| !refit.is_identified(*m))
            .map(|m| self.arena.name(m))
            .collect();
        if !unidentified.is_empty() {
            report.degenerate = true;
            report.degenerate_reason =
                Some(format!("no remaining matchups for {}", unidentified.join(", ")));
        } else if !refit.converged {
            report.degenerate = true;
            report.degenerate_reason = Some("refit did not converge".into());
        }
        report.refit_flip = refit.score(i) < refit.score(j);
        report.verdict = if report.degenerate {
            Verdict::Degenerate
        } else if report.refit_flip {
            Verdict::NonRobust
        } else {
            Verdict::Robust
        };
        Ok((report, Some(refit)))
    }
}

/// Audits one pair at one budget.
pub fn check_pair(
    arena: &Arena,
    fit: &BtFit,
    i: ModelId,
    j: ModelId,
    budget: DropBudget,
    opts: CheckOptions,
) -> Result<RobustnessReport> {
    PairAudit::new(arena, fit, i, j, opts)?.check(budget)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PairSummary {
    pub i: ModelId,
    pub j: ModelId,
    pub gap: f64,
    pub predicted_flip: bool,
    pub refit_performed: bool,
    pub refit_flip: bool,
    pub verdict: Verdict,
    pub dropped_count: usize,
    /// Whether the refit's top-k set differs from the full-data one.
    pub topk_changed: Option<bool>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TopKReport {
    pub k: usize,
    pub budget: DropBudget,
    pub resolved_count: usize,
    pub robust: bool,
    pub offending_pair: Option<(ModelId, ModelId)>,
    pub offending: Option<RobustnessReport>,
    pub pairs_checked: usize,
    pub total_pairs: usize,
    pub per_pair: Vec<PairSummary>,
    pub dropped: Vec<usize>,
    pub degenerate_pairs: Vec<(ModelId, ModelId)>,
}

/// Boundary pairs `(i in top-k, j outside)` ordered by ascending full-data score
/// gap, ties by model index.
pub fn boundary_pairs(fit: &BtFit, k: usize) -> Result<Vec<(ModelId, ModelId)>> {
    let top = fit.top_k(k)?;
    let mut pairs: Vec<(ModelId, ModelId)> = Vec::with_capacity(k * (fit.models() - k));
    for &i in &top {
        for j in (0..fit.models()).map(ModelId).filter(|m| !top.contains(m)) {
            pairs.push((i, j));
        }
    }
    let gap = |p: &(ModelId, ModelId)| (fit.score(p.0) - fit.score(p.1)).abs();
    pairs.sort_by(|a, b| gap(a).total_cmp(&gap(b)).then(a.cmp(b)));
    Ok(pairs)
}

/// Greedy top-k audit with early termination on the first verified reversal.
///
/// Pairs are evaluated in parallel batches; the reported offender is always the
/// first non-robust pair in canonical order.
pub fn check_topk(
    arena: &Arena,
    fit: &BtFit,
    k: usize,
    budget: DropBudget,
    opts: CheckOptions,
) -> Result<TopKReport> {
    let resolved_count = budget.resolve(arena.len())?;
    let full_top = fit.top_k(k)?;
    let pairs = boundary_pairs(fit, k)?;
    let total_pairs = pairs.len();
    let batch = rayon::current_num_threads().max(1);

    let mut report = TopKReport {
        k,
        budget,
        resolved_count,
        robust: true,
        offending_pair: None,
        offending: None,
        pairs_checked: 0,
        total_pairs,
        per_pair: Vec::new(),
        dropped: Vec::new(),
        degenerate_pairs: Vec::new(),
    };
    for chunk in pairs.chunks(batch) {
        let results: Vec<Result<(RobustnessReport, Option<bool>)>> = chunk
            .par_iter()
            .map(|&(i, j)| {
                let (pr, refit) =
                    PairAudit::new(arena, fit, i, j, opts)?.check_with_refit(budget)?;
                let changed = match refit {
                    Some(r) => Some(top_k_set(&r.theta, k)? != full_top),
                    None => None,
                };
                Ok((pr, changed))
            })
            .collect();
        for result in results {
            let (pr, topk_changed) = result?;
            report.pairs_checked += 1;
            report.per_pair.push(PairSummary {
                i: pr.i,
                j: pr.j,
                gap: pr.gap(),
                predicted_flip: pr.predicted_flip,
                refit_performed: pr.refit_performed,
                refit_flip: pr.refit_flip,
                verdict: pr.verdict,
                dropped_count: pr.dropped.len(),
                topk_changed,
            });
            match pr.verdict {
                Verdict::NonRobust => {
                    report.robust = false;
                    report.offending_pair = Some((pr.i, pr.j));
                    report.dropped = pr.dropped.clone();
                    report.offending = Some(pr);
                    return Ok(report);
                }
                Verdict::Degenerate => report.degenerate_pairs.push((pr.i, pr.j)),
                Verdict::Robust => {}
            }
        }
    }
    Ok(report)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MinDropOptions {
    pub max_budget: usize,
    pub method: ScoreMethod,
    pub convention: ScoreConvention,
    pub always_refit: bool,
}

impl Default for MinDropOptions {
    fn default() -> Self {
        Self {
            max_budget: 100,
            method: ScoreMethod::default(),
            convention: ScoreConvention::default(),
            always_refit: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MinDropReport {
    pub i: ModelId,
    pub j: ModelId,
    pub max_budget: usize,
    /// Smallest verified count, `None` when no count up to `max_budget` flips the pair.
    pub count: Option<usize>,
    pub fraction: Option<f64>,
    pub budgets_tried: usize,
    /// The flipping report when found, else the report at the largest budget tried.
    pub report: Option<RobustnessReport>,
}

impl MinDropReport {
    pub fn found(&self) -> bool {
        self.count.is_some()
    }
}

/// Smallest drop count (scanning 1, 2, ...) whose selected set is verified to
/// reverse the pair.
pub fn min_drop_search(
    arena: &Arena,
    fit: &BtFit,
    i: ModelId,
    j: ModelId,
    opts: MinDropOptions,
) -> Result<MinDropReport> {
    let check = CheckOptions {
        method: opts.method,
        convention: opts.convention,
        always_refit: opts.always_refit,
    };
    let audit = PairAudit::new(arena, fit, i, j, check)?;
    let (i, j) = audit.pair();
    let n = arena.len();
    let limit = opts.max_budget.min(n.saturating_sub(1));
    // Selection for budget c is the c-prefix of this ordering.
    let order = select_drop_set(audit.influence(), n);

    let mut out = MinDropReport {
        i,
        j,
        max_budget: opts.max_budget,
        count: None,
        fraction: None,
        budgets_tried: 0,
        report: None,
    };
    for c in 1..=limit {
        if c > order.len().max(1) {
            break; // drop set no longer grows
        }
        let dropped = order[..c.min(order.len())].to_vec();
        let (report, _) = audit.evaluate(DropBudget::Count(c), c, dropped)?;
        out.budgets_tried += 1;
        let flipped = report.is_non_robust();
        out.report = Some(report);
        if flipped {
            out.count = Some(c);
            out.fraction = Some(c as f64 / n as f64);
            break;
        }
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Involvement {
    pub both: f64,
    pub one: f64,
    pub neither: f64,
}

/// Fractions of dropped matchups involving both, exactly one, or neither of the
/// report's pair.
pub fn involvement_composition(report: &RobustnessReport, arena: &Arena) -> Result<Involvement> {
    if report.dropped.is_empty() {
        return Err(Error::InvalidArgument("report has no dropped matchups".into()));
    }
    let (mut both, mut one, mut neither) = (0usize, 0usize, 0usize);
    for &n in &report.dropped {
        let m = arena
            .matchups()
            .get(n)
            .ok_or_else(|| Error::InvalidArgument(format!("dropped index {n} out of range")))?;
        match (m.involves(report.i) as u8) + (m.involves(report.j) as u8) {
            2 => both += 1,
            1 => one += 1,
            _ => neither += 1,
        }
    }
    let total = report.dropped.len() as f64;
    Ok(Involvement {
        both: both as f64 / total,
        one: one as f64 / total,
        neither: neither as f64 / total,
    })
}
