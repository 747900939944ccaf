use btrobust::influence::{influence_scores, leverages, pair_influence};
use btrobust::oracle::{generate, SynthSpec};
use btrobust::robustness::{check_pair, CheckOptions, DropBudget};
use btrobust::{fit_full, refit_without, Arena, FitOptions, Matchup, ModelId, ModelRegistry};
use btrobust::{ScoreConvention, ScoreMethod};
use proptest::prelude::*;

fn arena_strategy() -> impl Strategy<Value = Arena> {
    (2usize..=6, 0usize..30, any::<u64>()).prop_map(|(m, extra, seed)| {
        generate(&SynthSpec::random(m, m - 1 + extra, 1.5, seed)).unwrap()
    })
}

/// Round robins with several games per pair are almost always identifiable at ridge 0.
fn round_robin_strategy() -> impl Strategy<Value = Arena> {
    (2usize..=5, 4usize..8, any::<u64>()).prop_map(|(m, games, seed)| {
        let theta: Vec<f64> = (0..m).map(|k| 0.2 * k as f64 - 0.3 * (k % 2) as f64).collect();
        generate(&SynthSpec::round_robin(theta, games, seed)).unwrap()
    })
}

fn close(a: f64, b: f64, tol: f64) -> bool {
    (a - b).abs() <= tol * (1.0 + a.abs().max(b.abs()))
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn swapping_sides_leaves_scores_unchanged(arena in arena_strategy()) {
        let opts = FitOptions::default();
        let fit = fit_full(&arena, &opts).unwrap();
        let swapped = Arena::new(
            arena.registry().clone(),
            arena.matchups().iter().map(Matchup::flipped).collect(),
        ).unwrap();
        let other = fit_full(&swapped, &opts).unwrap();
        for (a, b) in fit.theta.iter().zip(&other.theta) {
            prop_assert!(close(*a, *b, 1e-7), "{a} vs {b}");
        }
    }

    #[test]
    fn relabeling_permutes_scores(arena in arena_strategy(), rot in 0usize..5) {
        let m = arena.models();
        // Rotate the non-reference labels; the reference stays at index 0.
        let perm: Vec<usize> = (0..m)
            .map(|k| if k == 0 { 0 } else { 1 + (k - 1 + rot) % (m - 1) })
            .collect();
        let mut names = vec![String::new(); m];
        for (k, &pk) in perm.iter().enumerate() {
            names[pk] = arena.registry().name(ModelId(k)).to_string();
        }
        let relabeled = Arena::new(
            ModelRegistry::from_names(names).unwrap(),
            arena
                .matchups()
                .iter()
                .map(|x| Matchup::new(ModelId(perm[x.a.0]), ModelId(perm[x.b.0]), x.a_won))
                .collect(),
        ).unwrap();
        let opts = FitOptions::default();
        let a = fit_full(&arena, &opts).unwrap();
        let b = fit_full(&relabeled, &opts).unwrap();
        for (k, &pk) in perm.iter().enumerate() {
            prop_assert!(close(a.theta[k], b.theta[pk], 1e-7));
        }
    }

    #[test]
    fn score_equations_hold_at_the_optimum(arena in arena_strategy()) {
        let fit = fit_full(&arena, &FitOptions::default()).unwrap();
        prop_assert!(fit.converged);
        prop_assert_eq!(fit.theta[0], 0.0);
        let residual = fit.score_equation_residual(&arena);
        prop_assert!(residual.iter().all(|r| r.abs() <= 1e-6), "{residual:?}");
    }

    #[test]
    fn leverages_sum_to_parameter_count_without_ridge(arena in round_robin_strategy()) {
        let opts = FitOptions { ridge: 0.0, ..FitOptions::default() };
        let Ok(fit) = fit_full(&arena, &opts) else { return Ok(()) };
        let lev = leverages(&arena, &fit).unwrap();
        prop_assert!(lev.iter().all(|&h| (0.0..1.0).contains(&h)));
        let trace: f64 = lev.iter().sum();
        prop_assert!((trace - (arena.models() - 1) as f64).abs() <= 1e-8, "trace {trace}");
    }

    #[test]
    fn pair_scores_are_antisymmetric_and_linear(arena in arena_strategy(), a in 0usize..6, b in 0usize..6) {
        let m = arena.models();
        let (i, j) = (ModelId(a % m), ModelId(b % m));
        prop_assume!(i != j);
        let fit = fit_full(&arena, &FitOptions::default()).unwrap();
        let conv = ScoreConvention::Derivative;
        let ij = pair_influence(&arena, &fit, i, j, ScoreMethod::Influence, conv).unwrap();
        let ji = pair_influence(&arena, &fit, j, i, ScoreMethod::Influence, conv).unwrap();
        let si = influence_scores(&arena, &fit, i, conv).unwrap();
        let sj = influence_scores(&arena, &fit, j, conv).unwrap();
        for n in 0..arena.len() {
            prop_assert_eq!(ij.scores[n], -ji.scores[n]);
            prop_assert!(close(ij.scores[n], si[n] - sj[n], 1e-9));
        }
    }

    #[test]
    fn pair_check_ignores_argument_order(arena in arena_strategy(), a in 0usize..6, b in 0usize..6, c in 1usize..4) {
        let m = arena.models();
        let (i, j) = (ModelId(a % m), ModelId(b % m));
        prop_assume!(i != j && c < arena.len());
        let fit = fit_full(&arena, &FitOptions::default()).unwrap();
        for method in [ScoreMethod::Influence, ScoreMethod::OneStepNewton] {
            let opts = CheckOptions { method, ..CheckOptions::default() };
            let x = check_pair(&arena, &fit, i, j, DropBudget::Count(c), opts).unwrap();
            let y = check_pair(&arena, &fit, j, i, DropBudget::Count(c), opts).unwrap();
            prop_assert_eq!(&x, &y);
            prop_assert!(x.theta_before.0 >= x.theta_before.1);
            prop_assert!(x.dropped.len() <= c);
            if x.is_non_robust() {
                prop_assert!(x.refit_performed && x.refit_flip);
            }
        }
    }

    #[test]
    fn refits_are_bitwise_reproducible(arena in arena_strategy(), drop in prop::collection::vec(0usize..40, 0..4)) {
        let drop: Vec<usize> = drop.into_iter().filter(|&n| n < arena.len()).collect();
        prop_assume!(drop.len() < arena.len());
        let opts = FitOptions::default();
        let (Ok(a), Ok(b)) = (refit_without(&arena, &opts, &drop), refit_without(&arena, &opts, &drop)) else {
            return Ok(());
        };
        let bits = |t: &[f64]| t.iter().map(|x| x.to_bits()).collect::<Vec<_>>();
        prop_assert_eq!(bits(&a.theta), bits(&b.theta));
        prop_assert_eq!(a.iterations, b.iterations);
    }
}
