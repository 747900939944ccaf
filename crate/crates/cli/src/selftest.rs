//! Quick end-to-end checks of the audit against the exhaustive and
//! finite-difference oracles on seeded synthetic arenas.

use anyhow::{bail, Result};
use btrobust::influence::influence_scores;
use btrobust::oracle::{
    brute_force_pair, finite_difference_influence, generate, SynthSpec, DEFAULT_REFIT_CAP,
};
use btrobust::robustness::{check_pair, min_drop_search, MinDropOptions};
use btrobust::{
    fit_full, Arena, CheckOptions, DropBudget, FitOptions, ModelId, ScoreConvention, Verdict,
};
use clap::Args;

use crate::commands::Finding;

#[derive(Debug, Clone, Args)]
pub struct SelftestArgs {
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Synthetic arenas checked against exhaustive search
    #[arg(long, default_value_t = 30)]
    pub arenas: u64,
}

fn oracle_agreement(seed: u64, arenas: u64) -> Result<String> {
    let opts = FitOptions::default();
    let (mut verdicts, mut unconfirmed) = (0, 0);
    for a in 0..arenas {
        let m = 2 + (a % 4) as usize;
        let n = m + 3 + ((seed.wrapping_add(a) % 13) as usize);
        let arena =
            generate(&SynthSpec::random(m, n, 1.5, seed.wrapping_mul(1000).wrapping_add(a)))?;
        let fit = fit_full(&arena, &opts)?;
        for x in 0..m {
            for y in x + 1..m {
                let oracle =
                    brute_force_pair(&arena, ModelId(x), ModelId(y), 3, &opts, DEFAULT_REFIT_CAP)?;
                let min_size = oracle.minimal_subset.map(|s| s.len());
                for budget in 1..=3 {
                    let r = check_pair(
                        &arena,
                        &fit,
                        ModelId(x),
                        ModelId(y),
                        DropBudget::Count(budget),
                        CheckOptions::default(),
                    )?;
                    if r.verdict == Verdict::NonRobust {
                        verdicts += 1;
                        if !min_size.is_some_and(|s| s <= budget) {
                            unconfirmed += 1;
                        }
                    }
                }
            }
        }
    }
    if unconfirmed > 0 {
        bail!("{unconfirmed} of {verdicts} non-robust verdicts not confirmed by exhaustive search");
    }
    Ok(format!(
        "{verdicts} non-robust verdicts on {arenas} arenas, all confirmed by exhaustive search"
    ))
}

fn derivative(seed: u64) -> Result<String> {
    let theta = vec![0.0, 0.4, -0.3, 0.7];
    let arena = generate(&SynthSpec::round_robin(theta, 3, seed))?;
    let fit = fit_full(&arena, &FitOptions::default())?;
    let mut worst: f64 = 0.0;
    for t in 1..arena.models() {
        let scores = influence_scores(&arena, &fit, ModelId(t), ScoreConvention::Derivative)?;
        for (n, s) in scores.iter().enumerate() {
            let fd = finite_difference_influence(&arena, &fit, ModelId(t), n, 1e-4)?;
            worst = worst.max((s - fd).abs() / fd.abs().max(1e-7));
        }
    }
    if worst > 1e-3 {
        bail!("influence scores differ from finite differences by {worst:.2e} (relative)");
    }
    Ok(format!("influence matches finite differences, max relative error {worst:.1e}"))
}

fn fixture() -> Result<String> {
    let mut rows = vec![("A", "B", true); 3];
    rows.push(("A", "B", false));
    let arena = Arena::from_records(rows)?;
    let fit = fit_full(&arena, &FitOptions::default())?;
    let md = min_drop_search(&arena, &fit, ModelId(0), ModelId(1), MinDropOptions::default())?;
    if md.count != Some(3) {
        bail!("3-1 record: expected a minimal drop count of 3, got {:?}", md.count);
    }
    Ok("3-1 record needs 3 drops to reverse".into())
}

pub fn run(args: &SelftestArgs) -> Result<Finding> {
    let checks = [
        ("oracle-agreement", oracle_agreement(args.seed, args.arenas)),
        ("derivative", derivative(args.seed)),
        ("closed-form", fixture()),
    ];
    let mut failed = 0;
    for (name, result) in checks {
        match result {
            Ok(detail) => println!("PASS {name}: {detail}"),
            Err(e) => {
                failed += 1;
                println!("FAIL {name}: {e:#}");
            }
        }
    }
    if failed > 0 {
        bail!("{failed} selftest checks failed");
    }
    Ok(Finding::Completed)
}
