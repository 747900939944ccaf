use std::path::PathBuf;

use anyhow::{bail, Context, Result};
use btrobust::arena::{elo_transform, ArenaSummary, EloParams};
use btrobust::bt::head_to_head;
use btrobust::robustness::{
    involvement_composition, Involvement, MinDropOptions, RobustnessReport, Verdict,
};
use btrobust::{check_topk, fit_full, min_drop_search, Arena, BtFit, CheckOptions};
use btrobust::{DropBudget, ScoreConvention, ScoreMethod};
use clap::Args;
use serde::Serialize;

use crate::config::{
    budget_label, load_arena, resolve_budgets, resolve_data, resolve_scoring, AuditConfig,
    DataArgs, DataConfig, ScoringArgs,
};
use crate::output::{ensure_dir, truncate, write_csv, write_json, TOOL};

/// How a completed command ended; maps to the process exit status.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Finding {
    /// Finished with nothing non-robust found.
    Completed,
    NonRobust,
}

fn config_file(args: &DataArgs) -> Result<AuditConfig> {
    args.config.as_deref().map(AuditConfig::load).transpose().map(Option::unwrap_or_default)
}

#[derive(Debug, Serialize)]
struct FitInfo {
    ridge: f64,
    tolerance: f64,
    max_iterations: usize,
    converged: bool,
    iterations: usize,
    final_gradient_norm: f64,
    unidentified: Vec<String>,
}

impl FitInfo {
    fn new(fit: &BtFit, arena: &Arena) -> Self {
        Self {
            ridge: fit.options.ridge,
            tolerance: fit.options.tolerance,
            max_iterations: fit.options.max_iterations,
            converged: fit.converged,
            iterations: fit.iterations,
            final_gradient_norm: fit.final_gradient_norm,
            unidentified: fit.unidentified.iter().map(|&m| arena.name(m).to_string()).collect(),
        }
    }
}

fn fit_arena(cfg: &DataConfig, arena: &Arena) -> Result<BtFit> {
    let fit = fit_full(arena, &cfg.fit).context("fitting the full data")?;
    if !fit.converged {
        log::warn!(
            "fit stopped after {} iterations with gradient {:.3e}",
            fit.iterations,
            fit.final_gradient_norm
        );
    }
    Ok(fit)
}

#[derive(Debug, Clone, Args)]
pub struct FitArgs {
    #[command(flatten)]
    pub data: DataArgs,
    /// Model whose Elo display score is pinned to --elo-anchor-score
    #[arg(long)]
    pub elo_anchor: Option<String>,
    #[arg(long, default_value_t = 1114.0)]
    pub elo_anchor_score: f64,
    #[arg(long, default_value_t = 400.0)]
    pub elo_scale: f64,
    #[arg(long, default_value_t = 1000.0)]
    pub elo_init: f64,
}

#[derive(Debug, Serialize)]
struct LeaderboardRow {
    rank: usize,
    model: String,
    theta: f64,
    elo: f64,
    appearances: usize,
}

#[derive(Debug, Serialize)]
struct Leaderboard {
    tool: &'static str,
    dataset: ArenaSummary,
    fit: FitInfo,
    elo: EloParams,
    models: Vec<LeaderboardRow>,
}

pub fn fit(args: &FitArgs) -> Result<Finding> {
    let file = config_file(&args.data)?;
    let cfg = resolve_data(&args.data, &file, false)?;
    let arena = load_arena(&cfg)?;
    let fit = fit_arena(&cfg, &arena)?;
    let mut elo = EloParams {
        scale: args.elo_scale,
        init_rating: args.elo_init,
        anchor_score: args.elo_anchor_score,
        ..EloParams::default()
    };
    if let Some(name) = &args.elo_anchor {
        elo = elo.with_anchor(arena.registry().resolve(name)?);
    }
    let display = elo_transform(&fit.theta, &elo)?;
    let appearances = arena.appearances();
    let rows: Vec<LeaderboardRow> = fit
        .ranking()
        .order
        .iter()
        .enumerate()
        .map(|(r, &m)| LeaderboardRow {
            rank: r + 1,
            model: arena.name(m).to_string(),
            theta: fit.score(m),
            elo: display[m.0],
            appearances: appearances[m.0],
        })
        .collect();

    ensure_dir(&cfg.out)?;
    write_csv(&cfg.out, "leaderboard.csv", &rows)?;
    let board = Leaderboard {
        tool: TOOL,
        dataset: arena.summary(),
        fit: FitInfo::new(&fit, &arena),
        elo,
        models: rows,
    };
    let path = write_json(&cfg.out, "leaderboard.json", &board)?;

    println!("{:>4}  {:<40} {:>10} {:>9} {:>8}", "rank", "model", "theta", "elo", "matchups");
    for row in &board.models {
        println!(
            "{:>4}  {:<40} {:>10.4} {:>9.1} {:>8}",
            row.rank, row.model, row.theta, row.elo, row.appearances
        );
    }
    println!("wrote {}", path.display());
    Ok(Finding::Completed)
}

/// A robustness report with model names alongside the indices.
#[derive(Debug, Serialize)]
struct NamedReport {
    model_i: String,
    model_j: String,
    #[serde(flatten)]
    report: RobustnessReport,
}

impl NamedReport {
    fn new(report: RobustnessReport, arena: &Arena) -> Self {
        Self {
            model_i: arena.name(report.i).to_string(),
            model_j: arena.name(report.j).to_string(),
            report,
        }
    }
}

#[derive(Debug, Clone, Args)]
pub struct TopKArgs {
    #[command(flatten)]
    pub data: DataArgs,
    #[command(flatten)]
    pub scoring: ScoringArgs,
    /// Fraction of matchups that may be dropped (repeatable)
    #[arg(long)]
    pub alpha: Vec<f64>,
    /// Number of matchups that may be dropped (repeatable)
    #[arg(long)]
    pub count: Vec<usize>,
    /// Size of the top set to audit (repeatable) [default: 1]
    #[arg(long)]
    pub k: Vec<usize>,
    /// Refit every audited pair, not only predicted reversals
    #[arg(long)]
    pub always_refit: bool,
}

#[derive(Debug, Serialize)]
struct Scatter {
    gap: f64,
    fraction_dropped: f64,
}

#[derive(Debug, Serialize)]
struct PairRow {
    model_i: String,
    model_j: String,
    gap: f64,
    predicted_flip: bool,
    refit_performed: bool,
    refit_flip: bool,
    verdict: Verdict,
    dropped: usize,
    topk_changed: Option<bool>,
}

#[derive(Debug, Serialize)]
struct TopKOutput {
    tool: &'static str,
    dataset: ArenaSummary,
    fit: FitInfo,
    k: usize,
    budget: DropBudget,
    resolved_count: usize,
    method: ScoreMethod,
    convention: ScoreConvention,
    always_refit: bool,
    robust: bool,
    offending: Option<NamedReport>,
    dropped: Vec<usize>,
    involvement: Option<Involvement>,
    scatter: Option<Scatter>,
    pairs_checked: usize,
    total_pairs: usize,
    degenerate_pairs: Vec<(String, String)>,
    per_pair: Vec<PairRow>,
}

#[derive(Debug, Serialize)]
struct SummaryRow {
    k: usize,
    budget: String,
    resolved_count: usize,
    robust: bool,
    model_i: Option<String>,
    model_j: Option<String>,
    gap: Option<f64>,
    dropped: usize,
    fraction_dropped: f64,
    pairs_checked: usize,
    total_pairs: usize,
    degenerate_pairs: usize,
    report: String,
}

#[derive(Debug, Serialize)]
struct ScatterRow {
    k: usize,
    budget: String,
    model_i: String,
    model_j: String,
    gap: f64,
    dropped: usize,
    fraction_dropped: f64,
    verdict: Verdict,
    topk_changed: Option<bool>,
}

pub fn check_topk_cmd(args: &TopKArgs) -> Result<Finding> {
    let file = config_file(&args.data)?;
    let cfg = resolve_data(&args.data, &file, false)?;
    let (method, convention) = resolve_scoring(&args.scoring, &file);
    let budgets = resolve_budgets(&args.alpha, &args.count, &file)?;
    let ks = if !args.k.is_empty() {
        args.k.clone()
    } else if !file.k.is_empty() {
        file.k.clone()
    } else {
        vec![1]
    };
    let always_refit = args.always_refit || file.always_refit.unwrap_or(false);
    let opts = CheckOptions { method, convention, always_refit };

    let arena = load_arena(&cfg)?;
    let fit = fit_arena(&cfg, &arena)?;
    let n = arena.len() as f64;
    let m = arena.models();
    for &k in &ks {
        if k == 0 || k >= m {
            bail!("--k {k} outside [1, {m}) for {m} models");
        }
    }
    ensure_dir(&cfg.out)?;

    let mut summary = Vec::new();
    let mut scatter = Vec::new();
    let mut any_non_robust = false;
    for &k in &ks {
        for budget in &budgets {
            let r = check_topk(&arena, &fit, k, *budget, opts)?;
            let label = budget_label(budget);
            let per_pair: Vec<PairRow> = r
                .per_pair
                .iter()
                .map(|p| PairRow {
                    model_i: arena.name(p.i).to_string(),
                    model_j: arena.name(p.j).to_string(),
                    gap: p.gap,
                    predicted_flip: p.predicted_flip,
                    refit_performed: p.refit_performed,
                    refit_flip: p.refit_flip,
                    verdict: p.verdict,
                    dropped: p.dropped_count,
                    topk_changed: p.topk_changed,
                })
                .collect();
            for p in &per_pair {
                scatter.push(ScatterRow {
                    k,
                    budget: budget.to_string(),
                    model_i: p.model_i.clone(),
                    model_j: p.model_j.clone(),
                    gap: p.gap,
                    dropped: p.dropped,
                    fraction_dropped: p.dropped as f64 / n,
                    verdict: p.verdict,
                    topk_changed: p.topk_changed,
                });
            }
            let involvement =
                r.offending.as_ref().map(|o| involvement_composition(o, &arena)).transpose()?;
            let point = r
                .offending
                .as_ref()
                .map(|o| Scatter { gap: o.gap(), fraction_dropped: o.dropped.len() as f64 / n });
            let report_name = format!("topk-k{k}-{label}.json");
            let output = TopKOutput {
                tool: TOOL,
                dataset: arena.summary(),
                fit: FitInfo::new(&fit, &arena),
                k,
                budget: *budget,
                resolved_count: r.resolved_count,
                method,
                convention,
                always_refit,
                robust: r.robust,
                offending: r.offending.clone().map(|o| NamedReport::new(o, &arena)),
                dropped: r.dropped.clone(),
                involvement,
                scatter: point,
                pairs_checked: r.pairs_checked,
                total_pairs: r.total_pairs,
                degenerate_pairs: r
                    .degenerate_pairs
                    .iter()
                    .map(|&(i, j)| (arena.name(i).to_string(), arena.name(j).to_string()))
                    .collect(),
                per_pair,
            };
            write_json(&cfg.out, &report_name, &output)?;

            let pair = r
                .offending_pair
                .map(|(i, j)| (arena.name(i).to_string(), arena.name(j).to_string()));
            match (&pair, &r.offending) {
                (Some((a, b)), Some(o)) => {
                    any_non_robust = true;
                    println!(
                        "top-{k} {budget} ({} drops): NON-ROBUST, {a} > {b} (gap {:.4}) reversed by dropping {} matchups ({:.4}%)",
                        r.resolved_count,
                        o.gap(),
                        o.dropped.len(),
                        100.0 * o.dropped.len() as f64 / n
                    );
                }
                _ => println!(
                    "top-{k} {budget} ({} drops): robust ({}/{} pairs checked, {} degenerate)",
                    r.resolved_count,
                    r.pairs_checked,
                    r.total_pairs,
                    r.degenerate_pairs.len()
                ),
            }
            summary.push(SummaryRow {
                k,
                budget: budget.to_string(),
                resolved_count: r.resolved_count,
                robust: r.robust,
                model_i: pair.as_ref().map(|p| p.0.clone()),
                model_j: pair.as_ref().map(|p| p.1.clone()),
                gap: r.offending.as_ref().map(RobustnessReport::gap),
                dropped: r.dropped.len(),
                fraction_dropped: r.dropped.len() as f64 / n,
                pairs_checked: r.pairs_checked,
                total_pairs: r.total_pairs,
                degenerate_pairs: r.degenerate_pairs.len(),
                report: report_name,
            });
        }
    }
    write_csv(&cfg.out, "topk-summary.csv", &summary)?;
    write_csv(&cfg.out, "gap-vs-fraction.csv", &scatter)?;
    println!("wrote reports to {}", cfg.out.display());
    Ok(if any_non_robust { Finding::NonRobust } else { Finding::Completed })
}

#[derive(Debug, Clone, Args)]
pub struct MinDropArgs {
    #[command(flatten)]
    pub data: DataArgs,
    #[command(flatten)]
    pub scoring: ScoringArgs,
    /// The two models to separate [default: the top two]
    #[arg(long, num_args = 2, value_names = ["MODEL_I", "MODEL_J"])]
    pub pair: Option<Vec<String>>,
    /// Largest drop count to try
    #[arg(long)]
    pub max_budget: Option<usize>,
}

#[derive(Debug, Serialize)]
struct MinDropOutput {
    tool: &'static str,
    dataset: ArenaSummary,
    fit: FitInfo,
    model_i: String,
    model_j: String,
    gap: f64,
    method: ScoreMethod,
    convention: ScoreConvention,
    max_budget: usize,
    found: bool,
    count: Option<usize>,
    matchups: usize,
    fraction: Option<f64>,
    wins_i: usize,
    wins_j: usize,
    win_percent: Option<f64>,
    budgets_tried: usize,
    dropped: Vec<usize>,
    report: Option<NamedReport>,
}

pub fn min_drop(args: &MinDropArgs) -> Result<Finding> {
    let file = config_file(&args.data)?;
    let cfg = resolve_data(&args.data, &file, false)?;
    let (method, convention) = resolve_scoring(&args.scoring, &file);
    let max_budget =
        args.max_budget.or(file.max_budget).unwrap_or(MinDropOptions::default().max_budget);
    if let Some(p) = &args.pair {
        if p[0] == p[1] {
            bail!("--pair needs two different models, got {} twice", p[0]);
        }
    }
    let arena = load_arena(&cfg)?;
    let fit = fit_arena(&cfg, &arena)?;
    let (i, j) = match &args.pair {
        Some(p) => (arena.registry().resolve(&p[0])?, arena.registry().resolve(&p[1])?),
        None => {
            let order = fit.ranking().order;
            (order[0], order[1])
        }
    };
    let opts = MinDropOptions { max_budget, method, convention, ..MinDropOptions::default() };
    let md = min_drop_search(&arena, &fit, i, j, opts)?;
    let h2h = head_to_head(&arena, md.i, md.j)?;
    let report = md.report.clone().filter(|_| md.found());
    let output = MinDropOutput {
        tool: TOOL,
        dataset: arena.summary(),
        fit: FitInfo::new(&fit, &arena),
        model_i: arena.name(md.i).to_string(),
        model_j: arena.name(md.j).to_string(),
        gap: fit.score(md.i) - fit.score(md.j),
        method,
        convention,
        max_budget,
        found: md.found(),
        count: md.count,
        matchups: arena.len(),
        fraction: md.fraction,
        wins_i: h2h.wins_i,
        wins_j: h2h.wins_j,
        win_percent: h2h.win_fraction_i.map(|f| 100.0 * f),
        budgets_tried: md.budgets_tried,
        dropped: report.as_ref().map(|r| r.dropped.clone()).unwrap_or_default(),
        report: report.map(|r| NamedReport::new(r, &arena)),
    };
    ensure_dir(&cfg.out)?;
    let path = write_json(&cfg.out, "min-drop.json", &output)?;

    let win = output.win_percent.map_or("never met".into(), |w| format!("{w:.2}%"));
    match output.count {
        Some(c) => println!(
            "{} > {}: dropping {c} of {} matchups ({:.6}) reverses the order; head-to-head win percent {win}",
            output.model_i,
            output.model_j,
            output.matchups,
            c as f64 / output.matchups as f64
        ),
        None => println!(
            "{} > {}: no reversal found with up to {max_budget} drops ({} budgets tried); head-to-head win percent {win}",
            output.model_i, output.model_j, output.budgets_tried
        ),
    }
    println!("wrote {}", path.display());
    Ok(if output.found { Finding::NonRobust } else { Finding::Completed })
}

#[derive(Debug, Clone, Args)]
pub struct InspectArgs {
    /// A report written by check-topk or min-drop
    pub report: PathBuf,
    /// The dataset the report was computed on
    pub dataset: PathBuf,
    /// Schema preset name or TOML schema file
    #[arg(long)]
    pub schema: Option<String>,
    /// Characters shown per metadata field
    #[arg(long, default_value_t = 300)]
    pub truncate: usize,
}

fn dropped_indices(report: &serde_json::Value) -> Result<Vec<usize>> {
    let list = ["/dropped", "/offending/dropped", "/report/dropped"]
        .iter()
        .find_map(|p| report.pointer(p).and_then(|v| v.as_array()))
        .context("report has no `dropped` list")?;
    list.iter()
        .map(|v| {
            v.as_u64().map(|n| n as usize).context("dropped indices must be non-negative integers")
        })
        .collect()
}

pub fn inspect(args: &InspectArgs) -> Result<Finding> {
    let text = std::fs::read_to_string(&args.report)
        .with_context(|| format!("reading {}", args.report.display()))?;
    let report: serde_json::Value = serde_json::from_str(&text)
        .with_context(|| format!("parsing {}", args.report.display()))?;
    let dropped = dropped_indices(&report)?;
    let data = DataArgs {
        dataset: Some(args.dataset.clone()),
        schema: args.schema.clone(),
        reference: None,
        ridge: None,
        tol: None,
        max_iter: None,
        out: None,
        config: None,
    };
    let cfg = resolve_data(&data, &AuditConfig::default(), true)?;
    let arena = load_arena(&cfg)?;
    if let Some(expected) = report.pointer("/dataset/matchups").and_then(|v| v.as_u64()) {
        if expected as usize != arena.len() {
            bail!(
                "report was computed on {expected} matchups but {} has {}",
                args.dataset.display(),
                arena.len()
            );
        }
    }
    if let Some(&bad) = dropped.iter().find(|&&n| n >= arena.len()) {
        bail!("dropped index {bad} out of range for {} matchups", arena.len());
    }
    if dropped.is_empty() {
        println!("report has no dropped matchups");
        return Ok(Finding::Completed);
    }
    for (rank, &n) in dropped.iter().enumerate() {
        let m = arena.matchup(n);
        println!(
            "[{}] matchup {n}: {} vs {}, winner {}",
            rank + 1,
            arena.name(m.a),
            arena.name(m.b),
            arena.name(m.winner())
        );
        match arena.metadata(n).filter(|md| !md.is_empty()) {
            Some(md) => {
                for (key, value) in md {
                    println!("    {key}: {}", truncate(value, args.truncate));
                }
            }
            None => println!("    no metadata"),
        }
    }
    Ok(Finding::Completed)
}
