//! Flag and config-file merging. Explicit flags win over the config file,
//! which wins over `BTROBUST_OUT` and the built-in defaults.

use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use btrobust::arena::{ingest_path, Format, Schema};
use btrobust::{Arena, DropBudget, FitOptions, ScoreConvention, ScoreMethod};
use clap::{Args, ValueEnum};
use serde::Deserialize;

pub const OUT_ENV: &str = "BTROBUST_OUT";
const DEFAULT_OUT: &str = "btrobust-out";
const DEFAULT_ALPHA: f64 = 0.001;

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MethodArg {
    /// First-order influence function
    If,
    /// Leverage-corrected one-step Newton
    Newton,
}

impl From<MethodArg> for ScoreMethod {
    fn from(m: MethodArg) -> Self {
        match m {
            MethodArg::If => ScoreMethod::Influence,
            MethodArg::Newton => ScoreMethod::OneStepNewton,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ConventionArg {
    /// Exact derivative of the score in the matchup weight
    Derivative,
    /// Extra p(1-p) factor on each score
    AsPrinted,
}

impl From<ConventionArg> for ScoreConvention {
    fn from(c: ConventionArg) -> Self {
        match c {
            ConventionArg::Derivative => ScoreConvention::Derivative,
            ConventionArg::AsPrinted => ScoreConvention::AsPrinted,
        }
    }
}

/// Config-file contents; every key is optional.
#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AuditConfig {
    pub dataset: Option<PathBuf>,
    pub schema: Option<String>,
    pub reference: Option<String>,
    pub ridge: Option<f64>,
    pub tolerance: Option<f64>,
    pub max_iterations: Option<usize>,
    pub method: Option<MethodArg>,
    pub convention: Option<ConventionArg>,
    #[serde(default)]
    pub alpha: Vec<f64>,
    #[serde(default)]
    pub count: Vec<usize>,
    #[serde(default)]
    pub k: Vec<usize>,
    pub always_refit: Option<bool>,
    pub max_budget: Option<usize>,
    pub out: Option<PathBuf>,
}

impl AuditConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .with_context(|| format!("reading config {}", path.display()))?;
        toml::from_str(&text).with_context(|| format!("parsing config {}", path.display()))
    }
}

#[derive(Debug, Clone, Args)]
pub struct DataArgs {
    /// Matchup file (CSV, TSV or JSON lines)
    pub dataset: Option<PathBuf>,
    /// Schema preset name or TOML schema file
    #[arg(long)]
    pub schema: Option<String>,
    /// Model pinned at score 0
    #[arg(long)]
    pub reference: Option<String>,
    #[arg(long)]
    pub ridge: Option<f64>,
    /// Gradient max-norm convergence threshold
    #[arg(long)]
    pub tol: Option<f64>,
    #[arg(long)]
    pub max_iter: Option<usize>,
    /// Output directory [default: $BTROBUST_OUT or ./btrobust-out]
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// TOML config file; explicit flags take precedence
    #[arg(long)]
    pub config: Option<PathBuf>,
}

#[derive(Debug, Clone, Args)]
pub struct ScoringArgs {
    #[arg(long, value_enum)]
    pub method: Option<MethodArg>,
    #[arg(long, value_enum)]
    pub convention: Option<ConventionArg>,
}

/// Fully resolved data and fit settings.
#[derive(Debug, Clone)]
pub struct DataConfig {
    pub dataset: PathBuf,
    pub schema: Schema,
    pub fit: FitOptions,
    pub out: PathBuf,
}

pub fn resolve_data(
    args: &DataArgs,
    file: &AuditConfig,
    keep_metadata: bool,
) -> Result<DataConfig> {
    let Some(dataset) = args.dataset.clone().or_else(|| file.dataset.clone()) else {
        bail!("no dataset given (pass a path or set `dataset` in the config file)");
    };
    let mut schema = match args.schema.as_ref().or(file.schema.as_ref()) {
        Some(spec) => Schema::load(spec)?,
        None => default_schema(&dataset),
    };
    if let Some(r) = args.reference.as_ref().or(file.reference.as_ref()) {
        schema.reference = Some(r.clone());
    }
    if !keep_metadata {
        schema = schema.without_metadata();
    }
    let defaults = FitOptions::default();
    let fit = FitOptions {
        ridge: args.ridge.or(file.ridge).unwrap_or(defaults.ridge),
        tolerance: args.tol.or(file.tolerance).unwrap_or(defaults.tolerance),
        max_iterations: args.max_iter.or(file.max_iterations).unwrap_or(defaults.max_iterations),
    };
    fit.validate()?;
    let out = args
        .out
        .clone()
        .or_else(|| file.out.clone())
        .or_else(|| std::env::var_os(OUT_ENV).map(PathBuf::from))
        .unwrap_or_else(|| PathBuf::from(DEFAULT_OUT));
    Ok(DataConfig { dataset, schema, fit, out })
}

/// `model_a` / `model_b` / `winner` columns, format picked from the extension.
fn default_schema(path: &Path) -> Schema {
    let format = match path.extension().and_then(|e| e.to_str()) {
        Some("jsonl" | "json" | "ndjson") => Format::Jsonl,
        Some("tsv") => Format::Tsv,
        _ => Format::Csv,
    };
    Schema::labeled(format, "model_a", "model_b", "winner")
}

pub fn load_arena(cfg: &DataConfig) -> Result<Arena> {
    let arena = ingest_path(&cfg.dataset, &cfg.schema)
        .with_context(|| format!("loading {}", cfg.dataset.display()))?;
    let s = arena.summary();
    log::info!(
        "{} matchups, {} models ({} ties and {} malformed rows dropped of {})",
        s.matchups,
        s.models,
        s.ties_dropped,
        s.malformed_skipped,
        s.source_rows
    );
    Ok(arena)
}

pub fn resolve_scoring(args: &ScoringArgs, file: &AuditConfig) -> (ScoreMethod, ScoreConvention) {
    let method = args.method.or(file.method).map(Into::into).unwrap_or_default();
    let convention = args.convention.or(file.convention).map(Into::into).unwrap_or_default();
    (method, convention)
}

/// Flag budgets replace config budgets entirely; with neither, `alpha = 0.001`.
pub fn resolve_budgets(
    alpha: &[f64],
    count: &[usize],
    file: &AuditConfig,
) -> Result<Vec<DropBudget>> {
    let (alpha, count) = if alpha.is_empty() && count.is_empty() {
        (file.alpha.as_slice(), file.count.as_slice())
    } else {
        (alpha, count)
    };
    let mut budgets: Vec<DropBudget> = alpha.iter().map(|&a| DropBudget::Fraction(a)).collect();
    budgets.extend(count.iter().map(|&c| DropBudget::Count(c)));
    if budgets.is_empty() {
        budgets.push(DropBudget::Fraction(DEFAULT_ALPHA));
    }
    for b in &budgets {
        if let DropBudget::Fraction(a) = b {
            if !(*a > 0.0 && *a < 1.0) {
                bail!("--alpha must be in (0, 1), got {a}");
            }
        }
    }
    Ok(budgets)
}

pub fn budget_label(b: &DropBudget) -> String {
    match b {
        DropBudget::Fraction(a) => format!("alpha{a}"),
        DropBudget::Count(c) => format!("count{c}"),
    }
}
