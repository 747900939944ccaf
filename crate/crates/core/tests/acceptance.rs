//! Acceptance suite. Prints one PASS/FAIL/SKIP line per criterion and exits
//! non-zero if any gating criterion fails.

use std::collections::BTreeSet;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::time::{Duration, Instant};

use btrobust::arena::{elo_transform, ingest_path, EloParams, Schema};
use btrobust::bt::{head_to_head, top_k_set};
use btrobust::influence::{influence_scores, newton_scores};
use btrobust::oracle::{
    brute_force_pair, finite_difference_influence, generate, leave_one_out_delta, SynthSpec,
    DEFAULT_REFIT_CAP,
};
use btrobust::robustness::{
    check_pair, check_topk, min_drop_search, select_drop_set, CheckOptions, DropBudget,
    MinDropOptions, PairAudit, Verdict,
};
use btrobust::{fit_full, Arena, FitOptions, ModelId, ScoreConvention, ScoreMethod};
use itertools::Itertools;
use rand::{RngExt, SeedableRng};
use rand_pcg::Pcg64;

const SOUNDNESS_ARENAS: u64 = 240;
const DERIVATIVE_ARENAS: u64 = 60;
const FD_EPSILON: f64 = 1e-4;
const FD_RELATIVE_TOL: f64 = 1e-3;
/// Finite differences of structurally zero scores are rounding noise near 1e-11.
const FD_DENOMINATOR_FLOOR: f64 = 1e-7;
const FIXTURE_TOL: f64 = 1e-8;
const TOPK_VECTORS: u64 = 1000;
const PERF_LIMIT: Duration = Duration::from_secs(180);
const COMPLEXITY_FACTOR: f64 = 10.0;

enum Status {
    Pass,
    Fail,
    Skip,
}

struct Outcome {
    status: Status,
    detail: String,
}

impl Outcome {
    fn check(pass: bool, detail: String) -> Self {
        Self { status: if pass { Status::Pass } else { Status::Fail }, detail }
    }
}

fn record(a_wins: usize, b_wins: usize) -> Arena {
    let mut rows = vec![("A", "B", true); a_wins];
    rows.extend(vec![("A", "B", false); b_wins]);
    Arena::from_records(rows).unwrap()
}

fn no_ridge() -> FitOptions {
    FitOptions { ridge: 0.0, ..FitOptions::default() }
}

/// Every non-robust verdict must be confirmed by exhaustive search.
fn oracle_soundness() -> Outcome {
    let opts = FitOptions::default();
    let (mut verdicts, mut confirmed, mut violations, mut misses, mut oracle_flips) =
        (0, 0, 0, 0, 0);
    let mut checks = 0;
    for seed in 0..SOUNDNESS_ARENAS {
        let m = 2 + (seed % 4) as usize;
        let n = (m + 3 + (seed as usize * 7) % 19).min(25);
        let arena = generate(&SynthSpec::random(m, n, 1.5, 1000 + seed)).unwrap();
        let fit = fit_full(&arena, &opts).unwrap();
        for (a, b) in (0..m).tuple_combinations() {
            let (i, j) = (ModelId(a), ModelId(b));
            let oracle = brute_force_pair(&arena, i, j, 3, &opts, DEFAULT_REFIT_CAP).unwrap();
            let min_size = oracle.minimal_subset.as_ref().map(Vec::len);
            for budget in 1..=3usize.min(n - 1) {
                let oracle_flip = min_size.is_some_and(|s| s <= budget);
                if oracle_flip {
                    oracle_flips += 1;
                }
                let mut amip_flip = false;
                for method in [ScoreMethod::Influence, ScoreMethod::OneStepNewton] {
                    let check = CheckOptions { method, ..CheckOptions::default() };
                    let r =
                        check_pair(&arena, &fit, i, j, DropBudget::Count(budget), check).unwrap();
                    checks += 1;
                    if r.verdict == Verdict::NonRobust {
                        verdicts += 1;
                        amip_flip = true;
                        if oracle_flip {
                            confirmed += 1;
                        } else {
                            violations += 1;
                        }
                    }
                }
                if oracle_flip && !amip_flip {
                    misses += 1;
                }
            }
        }
    }
    Outcome::check(
        violations == 0 && verdicts > 0,
        format!(
            "{SOUNDNESS_ARENAS} arenas, {checks} checks: {confirmed}/{verdicts} non-robust verdicts confirmed, \
             {violations} unconfirmed; AMIP missed {misses} of {oracle_flips} oracle flips"
        ),
    )
}

fn derivative_arenas() -> Vec<Arena> {
    (0..DERIVATIVE_ARENAS)
        .map(|seed| {
            let mut rng = Pcg64::seed_from_u64(seed);
            let m = 3 + (seed % 4) as usize;
            let mut theta: Vec<f64> = (0..m).map(|_| rng.random::<f64>() * 1.6 - 0.8).collect();
            theta[0] = 0.0;
            generate(&SynthSpec::round_robin(theta, 3, 500 + seed)).unwrap()
        })
        .collect()
}

/// Influence scores against central finite differences, plus the 2-2 fixture.
fn derivative_check() -> Outcome {
    let opts = FitOptions::default();
    let mut worst: f64 = 0.0;
    let (mut compared, mut near_zero) = (0, 0);
    for arena in derivative_arenas() {
        let fit = fit_full(&arena, &opts).unwrap();
        for t in 1..arena.models() {
            let target = ModelId(t);
            let scores =
                influence_scores(&arena, &fit, target, ScoreConvention::Derivative).unwrap();
            for (n, &score) in scores.iter().enumerate() {
                let fd = finite_difference_influence(&arena, &fit, target, n, FD_EPSILON).unwrap();
                worst = worst.max((score - fd).abs() / fd.abs().max(FD_DENOMINATOR_FLOOR));
                compared += 1;
                if fd.abs() < FD_DENOMINATOR_FLOOR {
                    near_zero += 1;
                }
            }
        }
    }

    let arena = record(2, 2);
    let fit = fit_full(&arena, &no_ridge()).unwrap();
    let printed = influence_scores(&arena, &fit, ModelId(1), ScoreConvention::AsPrinted).unwrap();
    let expected = [-0.125, -0.125, 0.125, 0.125];
    let fixture_err = printed.iter().zip(expected).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
    let signs_agree = (0..4).all(|n| {
        let fd = finite_difference_influence(&arena, &fit, ModelId(1), n, FD_EPSILON).unwrap();
        fd.signum() == expected[n].signum()
    });

    Outcome::check(
        worst <= FD_RELATIVE_TOL && fixture_err <= 1e-9 && signs_agree,
        format!(
            "{compared} scores on {DERIVATIVE_ARENAS} arenas, max relative error {worst:.2e} (tol {FD_RELATIVE_TOL:e}, \
             denominator floor {FD_DENOMINATOR_FLOOR:e}, {near_zero} below floor); \
             2-2 fixture |0.125| error {fixture_err:.1e}, finite-difference signs agree: {signs_agree}"
        ),
    )
}

/// One-step Newton tracks exact leave-one-out changes at least as well as the influence function.
fn newton_dominance() -> Outcome {
    let opts = FitOptions::default();
    let (mut err_if, mut err_newton, mut count) = (0.0, 0.0, 0usize);
    for arena in derivative_arenas() {
        let fit = fit_full(&arena, &opts).unwrap();
        for t in 1..arena.models() {
            let target = ModelId(t);
            let scores =
                influence_scores(&arena, &fit, target, ScoreConvention::Derivative).unwrap();
            let newton = newton_scores(&arena, &fit, target, ScoreConvention::Derivative).unwrap();
            for (n, (s, s1)) in scores.iter().zip(&newton.scores).enumerate() {
                let exact = leave_one_out_delta(&arena, &fit, target, n).unwrap();
                err_if += (exact + s).abs();
                err_newton += (exact + s1).abs();
                count += 1;
            }
        }
    }
    let (mean_if, mean_newton) = (err_if / count as f64, err_newton / count as f64);
    Outcome::check(
        mean_newton <= mean_if,
        format!("{count} deletions: mean |error| one-step Newton {mean_newton:.3e}, influence {mean_if:.3e}"),
    )
}

/// Top-k equals the unique set whose members all dominate every non-member.
fn topk_characterization() -> Outcome {
    let mut rng = Pcg64::seed_from_u64(7);
    let mut mismatches = 0;
    for v in 0..TOPK_VECTORS {
        let m = rng.random_range(2..=8usize);
        let theta: Vec<f64> = (0..m)
            .map(|_| {
                if v % 2 == 0 {
                    rng.random_range(0..4) as f64
                } else {
                    rng.random::<f64>() * 4.0 - 2.0
                }
            })
            .collect();
        let k = rng.random_range(1..m);
        let dominates = |a: usize, b: usize| theta[a] > theta[b] || (theta[a] == theta[b] && a < b);
        let characterized: Vec<BTreeSet<ModelId>> = (0..m)
            .combinations(k)
            .filter(|s| {
                (0..m)
                    .filter(|x| !s.contains(x))
                    .all(|out| s.iter().all(|&inn| dominates(inn, out)))
            })
            .map(|s| s.into_iter().map(ModelId).collect())
            .collect();
        let top = top_k_set(&theta, k).unwrap();
        if characterized.len() != 1 || characterized[0] != top {
            mismatches += 1;
        }
    }
    Outcome::check(
        mismatches == 0,
        format!("{TOPK_VECTORS} score vectors, {mismatches} mismatches"),
    )
}

fn closed_form_fixtures() -> Outcome {
    let mut failures = Vec::new();
    let mut expect = |name: &str, got: f64, want: f64| {
        if (got - want).abs() > FIXTURE_TOL {
            failures.push(format!("{name}: got {got}, want {want}"));
        }
    };

    let fit = fit_full(&record(3, 1), &no_ridge()).unwrap();
    expect("3-1 gap", fit.theta[0] - fit.theta[1], 3f64.ln());
    let elo = elo_transform(&fit.theta, &EloParams::default()).unwrap();
    expect("3-1 Elo of B", elo[1], 1000.0 - 400.0 * 3f64.ln());
    let fit = fit_full(&record(2, 2), &no_ridge()).unwrap();
    expect("2-2 gap", fit.theta[0] - fit.theta[1], 0.0);

    let arena = record(3, 1);
    let fit = fit_full(&arena, &FitOptions::default()).unwrap();
    let md =
        min_drop_search(&arena, &fit, ModelId(0), ModelId(1), MinDropOptions::default()).unwrap();
    expect("3-1 min-drop count", md.count.map_or(f64::NAN, |c| c as f64), 3.0);
    expect("3-1 min-drop fraction", md.fraction.unwrap_or(f64::NAN), 0.75);
    let h2h = head_to_head(&arena, ModelId(0), ModelId(1)).unwrap();
    expect("3-1 win fraction", h2h.win_fraction_i.unwrap_or(f64::NAN), 0.75);

    // 2-1 minus one winning game leaves 1-1: equal scores are not a reversal.
    let arena = record(2, 1);
    let fit = fit_full(&arena, &FitOptions::default()).unwrap();
    let opts = CheckOptions { always_refit: true, ..CheckOptions::default() };
    let r = check_pair(&arena, &fit, ModelId(0), ModelId(1), DropBudget::Count(1), opts).unwrap();
    let after = r.theta_after.unwrap_or((f64::NAN, 0.0));
    expect("strictness refit gap", after.0 - after.1, 0.0);
    if r.refit_flip || r.verdict != Verdict::Robust {
        failures.push(format!("strictness: verdict {:?}, refit_flip {}", r.verdict, r.refit_flip));
    }

    let n = failures.len();
    Outcome::check(
        n == 0,
        if n == 0 { format!("all fixtures within {FIXTURE_TOL:e}") } else { failures.join("; ") },
    )
}

/// Full fit plus top-1 and top-5 audits on 50k matchups and 60 models.
fn performance() -> Outcome {
    let arena = generate(&SynthSpec::random(60, 50_000, 4.0, 42)).unwrap();
    let start = Instant::now();
    let fit = fit_full(&arena, &FitOptions::default()).unwrap();
    let opts = CheckOptions { always_refit: true, ..CheckOptions::default() };
    let mut notes = Vec::new();
    for k in [1, 5] {
        for alpha in [0.0001, 0.001] {
            let r = check_topk(&arena, &fit, k, DropBudget::Fraction(alpha), opts).unwrap();
            notes.push(format!(
                "top-{k} alpha {alpha}: {}/{} pairs, robust {}",
                r.pairs_checked, r.total_pairs, r.robust
            ));
        }
    }
    let elapsed = start.elapsed();
    Outcome::check(
        elapsed < PERF_LIMIT,
        format!(
            "{:.2}s (limit {}s, every pair refit); {}",
            elapsed.as_secs_f64(),
            PERF_LIMIT.as_secs(),
            notes.join(", ")
        ),
    )
}

fn audit_seconds(arena: &Arena, repeats: usize) -> f64 {
    let fit = fit_full(arena, &FitOptions::default()).unwrap();
    let top = fit.ranking().order;
    let count = arena.len() / 1000;
    (0..repeats)
        .map(|_| {
            let start = Instant::now();
            let audit =
                PairAudit::new(arena, &fit, top[0], top[1], CheckOptions::default()).unwrap();
            std::hint::black_box(select_drop_set(audit.influence(), count));
            start.elapsed().as_secs_f64()
        })
        .fold(f64::INFINITY, f64::min)
}

/// Pair audit cost (influence plus selection, no refit) under 8x data growth.
fn complexity() -> Outcome {
    let small = generate(&SynthSpec::random(30, 10_000, 1.5, 9)).unwrap();
    let large = generate(&SynthSpec::random(30, 80_000, 1.5, 9)).unwrap();
    audit_seconds(&small, 2);
    let (t_small, t_large) = (audit_seconds(&small, 9), audit_seconds(&large, 9));
    let factor = t_large / t_small;
    Outcome::check(
        factor <= COMPLEXITY_FACTOR,
        format!(
            "N=10k {:.3}ms, N=80k {:.3}ms, factor {factor:.2} (limit {COMPLEXITY_FACTOR})",
            t_small * 1e3,
            t_large * 1e3
        ),
    )
}

struct PublicRow {
    env: &'static str,
    preset: &'static str,
    count: usize,
    n: usize,
    win_percent: f64,
}

const PUBLIC_ROWS: [PublicRow; 4] = [
    PublicRow {
        env: "BTROBUST_ARENA_HUMAN",
        preset: "arena-human-preference-55k",
        count: 9,
        n: 39716,
        win_percent: 55.17,
    },
    PublicRow {
        env: "BTROBUST_ARENA_LLM",
        preset: "chatbot-arena-llm-judges",
        count: 4,
        n: 34297,
        win_percent: 53.73,
    },
    PublicRow {
        env: "BTROBUST_MTBENCH_HUMAN",
        preset: "mt-bench-human-judgments",
        count: 83,
        n: 2575,
        win_percent: 62.75,
    },
    PublicRow {
        env: "BTROBUST_MTBENCH_LLM",
        preset: "mt-bench-human-judgments",
        count: 27,
        n: 2180,
        win_percent: 51.72,
    },
];

/// Top-pair minimal drop counts on locally supplied public datasets.
fn public_arena_reproduction() -> Outcome {
    let mut lines = Vec::new();
    let mut all_ok = true;
    let mut any = false;
    for row in &PUBLIC_ROWS {
        let Ok(path) = std::env::var(row.env) else {
            lines.push(format!("{}: unset", row.env));
            continue;
        };
        any = true;
        let result = (|| -> btrobust::Result<String> {
            let arena = ingest_path(&path, &Schema::load(row.preset)?)?;
            let fit = fit_full(&arena, &FitOptions::default())?;
            let order = fit.ranking().order;
            let opts =
                MinDropOptions { max_budget: 2 * row.count + 50, ..MinDropOptions::default() };
            let md = min_drop_search(&arena, &fit, order[0], order[1], opts)?;
            let h2h = head_to_head(&arena, md.i, md.j)?;
            let win = 100.0 * h2h.win_fraction_i.unwrap_or(f64::NAN);
            let ok =
                md.count.is_some_and(|c| c <= row.count) && (win - row.win_percent).abs() <= 0.1;
            all_ok &= ok;
            Ok(format!(
                "{}: {} of {} (published {} of {}), win {win:.2}% (published {:.2}%){}",
                row.preset,
                md.count.map_or("none".into(), |c| c.to_string()),
                arena.len(),
                row.count,
                row.n,
                row.win_percent,
                if ok { "" } else { " DEVIATES" }
            ))
        })();
        match result {
            Ok(line) => lines.push(line),
            Err(e) => {
                all_ok = false;
                lines.push(format!("{}: error {e}", row.env));
            }
        }
    }
    if !any {
        return Outcome {
            status: Status::Skip,
            detail: "no dataset paths set (".to_string() + &lines.join(", ") + ")",
        };
    }
    Outcome::check(all_ok, lines.join("; "))
}

type Criterion = (&'static str, fn() -> Outcome, bool);

fn main() {
    let criteria: [Criterion; 8] = [
        ("oracle-soundness", oracle_soundness, true),
        ("derivative-check", derivative_check, true),
        ("newton-dominance", newton_dominance, true),
        ("topk-characterization", topk_characterization, true),
        ("closed-form-fixtures", closed_form_fixtures, true),
        ("performance-50k", performance, true),
        ("complexity-linear", complexity, true),
        ("public-arena-reproduction", public_arena_reproduction, false),
    ];
    let mut gating_failures = 0;
    for (name, run, gating) in criteria {
        let start = Instant::now();
        let outcome = catch_unwind(AssertUnwindSafe(run)).unwrap_or_else(|panic| {
            let msg = panic
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| panic.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_default();
            Outcome { status: Status::Fail, detail: format!("panicked: {msg}") }
        });
        let label = match outcome.status {
            Status::Pass => "PASS",
            Status::Fail => {
                if gating {
                    gating_failures += 1;
                }
                "FAIL"
            }
            Status::Skip => "SKIP",
        };
        let tag = if gating { "" } else { " (non-gating)" };
        println!("{label} {name}{tag} [{:.1}s]: {}", start.elapsed().as_secs_f64(), outcome.detail);
    }
    if gating_failures > 0 {
        println!("{gating_failures} gating criteria failed");
        std::process::exit(1);
    }
}
