use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use seqsew::batch::{fit_fixed_design, fit_random_design, fit_remark15, psi_bound, empirical_max_sq};
use seqsew::bounds::{
    best_sparse_comparator, cor6_rhs, cor7_rhs, default_comparators, prop5_rhs, thm8_rhs, verify, BoundInputs, BoundName, Comparator,
    Search, SequenceStats,
};
use seqsew::datagen::{Design, Dictionary, DictionaryKind, DictionarySpec, NoiseFamily, Scenario, ScenarioSpec};
use seqsew::forecasters::{run_features, Forecaster, RunOutput, SeqSewAdaptive};
use seqsew::posterior::{clip, BackendConfig, Observation, PosteriorCloud};
use seqsew::prior::{kl_duality_check, kl_upper_bound, refined_sparsity_term, sparsity_log_term, SparsityPrior, TranslatedPrior};

fn sequence(d: usize) -> impl Strategy<Value = (Vec<Vec<f64>>, Vec<f64>)> {
    (2usize..25).prop_flat_map(move |t| {
        (
            prop::collection::vec(prop::collection::vec(-2.0f64..2.0, d), t),
            prop::collection::vec(prop_oneof![3 => -3.0f64..3.0, 1 => -40.0f64..40.0], t),
        )
    })
}

fn adaptive_run(feats: &[Vec<f64>], ys: &[f64], tau: f64, seed: u64) -> RunOutput {
    let mut f = SeqSewAdaptive::new(tau, feats[0].len(), &BackendConfig::quadrature(129), seed).unwrap();
    run_features(&mut f, feats, ys).unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn refined_term_below_sparsity_bound(u in prop::collection::vec(prop_oneof![Just(0.0), -50.0f64..50.0], 1..6), tau in 1e-3f64..10.0) {
        prop_assert!(refined_sparsity_term(&u, tau) <= kl_upper_bound(&u, tau) * (1.0 + 1e-12) + 1e-12);
    }

    #[test]
    fn translated_kl_below_both_bounds(c in -100.0f64..100.0, tau in 1e-3f64..10.0) {
        let rho = TranslatedPrior::new(SparsityPrior::new(tau, 1).unwrap(), vec![c]).unwrap();
        let kl = rho.kl_to_base();
        prop_assert!(kl <= kl_upper_bound(&[c], tau) + 1e-9);
        prop_assert!(kl <= refined_sparsity_term(&[c], tau) + 1e-9);
    }

    #[test]
    fn density_integrates_to_one(tau in 1e-3f64..100.0) {
        let p = SparsityPrior::new(tau, 1).unwrap();
        prop_assert!((p.coord_expectation(|_| 1.0, 1e-12) - 1.0).abs() < 1e-8);
    }

    #[test]
    fn gibbs_duality(raw in prop::collection::vec(1e-3f64..1.0, 2..12), seed in any::<u64>()) {
        let total: f64 = raw.iter().sum();
        let mut pi: Vec<f64> = raw.iter().map(|v| v / total).collect();
        let head: f64 = pi[..pi.len() - 1].iter().sum();
        let last = pi.len() - 1;
        pi[last] = 1.0 - head;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let h: Vec<f64> = (0..pi.len()).map(|_| rand::Rng::random_range(&mut rng, -20.0..20.0)).collect();
        let c = kl_duality_check(&pi, &h).unwrap();
        prop_assert!((c.lhs - c.rhs).abs() <= 1e-12 * c.lhs.abs().max(1.0));
    }

    #[test]
    fn sparsity_term_nondecreasing_in_s(u in 1e-3f64..1e4, s in 1usize..50) {
        let a = sparsity_log_term(s as f64, u, 1.0);
        let b = sparsity_log_term((s + 1) as f64, u, 1.0);
        prop_assert!(b >= a * (1.0 - 1e-14));
        prop_assert!(sparsity_log_term(0.0, u, 1.0) <= a);
    }

    #[test]
    fn rhs_monotone_in_l1_and_max_y(loss in 0.0f64..100.0, l0 in 1usize..4, l1 in 0.01f64..10.0, extra in 0.0f64..10.0,
                                   my in 0.01f64..50.0, dmy in 0.0f64..50.0, gram in 0.1f64..100.0) {
        let stats = |m: f64| SequenceStats { t: 20, max_y_sq: m, gram_trace: gram, b_t1_sq: seqsew::forecasters::dyadic_square(m), a_t: 2.0 + (std::f64::consts::E + gram.sqrt()).ln().log2() };
        let u = |l: f64| Comparator { u: vec![], l0, l1: l, cumulative_loss: loss };
        let (s0, s1) = (stats(my), stats(my + dmy));
        for (a, b) in [
            (prop5_rhs(&u(l1), 0.3, &s0), prop5_rhs(&u(l1 + extra), 0.3, &s0)),
            (cor6_rhs(&u(l1), gram, &s0), cor6_rhs(&u(l1 + extra), gram, &s0)),
            (cor7_rhs(&u(l1), 2, &s0), cor7_rhs(&u(l1 + extra), 2, &s0)),
            (thm8_rhs(&u(l1), &s0), thm8_rhs(&u(l1 + extra), &s0)),
            (prop5_rhs(&u(l1), 0.3, &s0), prop5_rhs(&u(l1), 0.3, &s1)),
            (thm8_rhs(&u(l1), &s0), thm8_rhs(&u(l1), &s1)),
        ] {
            prop_assert!(a.is_finite() && b >= a);
        }
    }

    #[test]
    fn clipping_never_hurts_covered_outcomes(y in -5.0f64..5.0, v in -100.0f64..100.0, b in 0.0f64..8.0) {
        prop_assume!(y.abs() <= b);
        prop_assert!((y - clip(v, 0.0, b)).powi(2) <= (y - v).powi(2));
    }

    #[test]
    fn bd_draws_stay_bounded(b in 0.01f64..10.0, seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let fam = NoiseFamily::Bd { b };
        for _ in 0..200 {
            prop_assert!(fam.sample(&mut rng).abs() <= b);
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn adaptive_schedule_invariants((feats, ys) in sequence(1), tau in 0.05f64..2.0) {
        let run = adaptive_run(&feats, &ys, tau, 1);
        let mut first_nonzero = None;
        for (k, r) in run.records.iter().enumerate() {
            prop_assert!(r.yhat.abs() <= r.b_t);
            let l = (r.b_t * r.b_t).log2();
            prop_assert!(r.b_t == 0.0 || (l - l.round()).abs() < 1e-9);
            if k > 0 {
                let prev = &run.records[k - 1];
                prop_assert!(r.b_t >= prev.b_t);
                prop_assert!(r.eta_t <= prev.eta_t);
            }
            if first_nonzero.is_none() && r.y != 0.0 {
                first_nonzero = Some(r.y * r.y);
            }
        }
        let mut distinct: Vec<f64> = run.records.iter().map(|r| r.b_t).filter(|b| *b > 0.0).collect();
        distinct.dedup();
        if let Some(y0) = first_nonzero {
            let max_y_sq = ys.iter().map(|y| y * y).fold(0.0, f64::max);
            prop_assert!(distinct.len() as f64 <= 2.0 + (max_y_sq / y0).log2());
        }
    }

    #[test]
    fn predictions_are_causal((feats, ys) in sequence(2), cut in 1usize..25, bump in -10.0f64..10.0) {
        let cut = cut.min(ys.len() - 1).max(1);
        let full = adaptive_run(&feats, &ys, 0.5, 9);
        let mut altered = ys.clone();
        for y in &mut altered[cut..] {
            *y += bump;
        }
        let other = adaptive_run(&feats, &altered, 0.5, 9);
        for k in 0..=cut {
            prop_assert_eq!(full.records[k].yhat.to_bits(), other.records[k].yhat.to_bits());
        }
    }

    #[test]
    fn quadrature_runs_satisfy_prop5((feats, ys) in sequence(2), tau in 0.05f64..3.0) {
        let run = adaptive_run(&feats, &ys, tau, 0);
        let comps = default_comparators(&feats, &ys, 2, Search::Exact).unwrap();
        let r = verify(&run, BoundName::Prop5, &BoundInputs::default(), &comps, 0.0).unwrap();
        prop_assert!(r.pass && r.slack >= 0.0, "lhs {} rhs {}", r.lhs, r.rhs);
    }

    #[test]
    fn full_support_is_least_squares((feats, ys) in sequence(3)) {
        prop_assume!(ys.len() >= 4);
        let best = best_sparse_comparator(&feats, &ys, 3, Search::Exact).unwrap();
        let ols = default_comparators(&feats, &ys, 0, Search::Exact).unwrap();
        let ols_loss = ols.iter().map(|c| c.cumulative_loss).fold(f64::INFINITY, f64::min);
        prop_assert!((best.cumulative_loss.sqrt() - ols_loss.sqrt()).abs() <= 1e-8 * (1.0 + ols_loss.sqrt()));
    }

    #[test]
    fn eta_may_not_increase(eta in 1e-3f64..1.0, up in 1e-6f64..1.0) {
        let mut cloud = PosteriorCloud::new(SparsityPrior::new(1.0, 1).unwrap(), &BackendConfig::quadrature(65), 0).unwrap();
        cloud.update(Observation::new(vec![1.0], 0.5, 1.0), eta).unwrap();
        prop_assert!(cloud.update(Observation::new(vec![1.0], 0.5, 1.0), eta + up).is_err());
    }
}

fn fourier() -> Dictionary {
    Dictionary::new(&DictionarySpec::new(DictionaryKind::Fourier, 2)).unwrap()
}

fn stochastic_sample(t: usize, seed: u64, offset: f64) -> Vec<(Vec<f64>, f64)> {
    let mut spec = ScenarioSpec::new(t, 2, Design::IidUniform, seed);
    spec.dictionary = Some(DictionarySpec::new(DictionaryKind::Fourier, 2));
    spec.u_true = Some(vec![1.2, -0.4]);
    spec.noise = Some(NoiseFamily::Sg { sigma2: 0.5 });
    spec.offset = offset;
    Scenario::new(&spec).unwrap().generate().unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(12))]

    #[test]
    fn batch_predictions_are_bounded(seed in 0u64..1000, x in 0.0f64..1.0) {
        let data = stochastic_sample(30, seed, 0.0);
        let est = fit_random_design(&data, &fourier(), &BackendConfig::quadrature(65), seed).unwrap();
        let bmax = est.thresholds().iter().cloned().fold(0.0, f64::max);
        prop_assert!(est.predict(&[x]).unwrap().abs() <= bmax);
        let fixed = fit_fixed_design(&data, &fourier(), &BackendConfig::quadrature(65), seed).unwrap();
        for (xi, _) in &data {
            prop_assert!(fixed.predict(xi).unwrap().abs() <= bmax);
        }
    }

    #[test]
    fn average_beats_mean_of_rounds(seed in 0u64..1000) {
        let data = stochastic_sample(25, seed, 0.0);
        let est = fit_random_design(&data, &fourier(), &BackendConfig::quadrature(65), seed).unwrap();
        let truth = |x: f64| 1.2 * 2f64.sqrt() * (2.0 * std::f64::consts::PI * x).cos() - 0.4 * 2f64.sqrt() * (2.0 * std::f64::consts::PI * x).sin();
        let xs: Vec<f64> = (0..200).map(|k| (k as f64 + 0.5) / 200.0).collect();
        let avg_risk: f64 = xs.iter().map(|x| (truth(*x) - est.predict(&[*x]).unwrap()).powi(2)).sum::<f64>() / 200.0;
        let per_round: f64 = (0..est.rounds())
            .map(|k| xs.iter().map(|x| (truth(*x) - est.round_regressor(k, &[*x]).unwrap()).powi(2)).sum::<f64>() / 200.0)
            .sum::<f64>() / est.rounds() as f64;
        prop_assert!(avg_risk <= per_round * (1.0 + 1e-12));
    }

    #[test]
    fn offset_variant_is_translation_equivariant(seed in 0u64..1000, c in -50.0f64..50.0) {
        let data = stochastic_sample(20, seed, 0.0);
        let shifted: Vec<(Vec<f64>, f64)> = data.iter().map(|(x, y)| (x.clone(), y + c)).collect();
        let a = fit_remark15(&data, &fourier(), &BackendConfig::quadrature(65), seed).unwrap();
        let b = fit_remark15(&shifted, &fourier(), &BackendConfig::quadrature(65), seed).unwrap();
        for k in 0..20 {
            let x = [k as f64 / 20.0];
            let dev = b.predict(&x).unwrap() - a.predict(&x).unwrap() - c;
            prop_assert!(dev.abs() <= 1e-12 * c.abs().max(1.0) * 8.0, "deviation {dev}");
        }
    }

    #[test]
    fn data_depends_on_seed_only(seed in any::<u64>()) {
        let a = stochastic_sample(10, seed, 0.3);
        prop_assert_eq!(&a, &stochastic_sample(10, seed, 0.3));
        prop_assert_ne!(&a, &stochastic_sample(10, seed.wrapping_add(1), 0.3));
    }

    #[test]
    fn max_square_within_family_cap(t in 5usize..60, seed in any::<u64>()) {
        for fam in [NoiseFamily::Bd { b: 2.0 }, NoiseFamily::Sg { sigma2: 1.0 }, NoiseFamily::Bem { alpha: 1.5, m: 3.0 }, NoiseFamily::Bm { alpha: 4.0, m: 2.0 }] {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let m = empirical_max_sq(|| fam.sample(&mut rng), t, 200).unwrap();
            prop_assert!(m <= t as f64 * psi_bound(&fam, t).unwrap(), "{fam:?}: {m}");
        }
    }
}

#[test]
fn flat_posterior_matches_prior_clipped_mean() {
    // η = 0: the importance cloud is the prior, so the clipped mean of u·φ for φ = 1 is
    // the prior mean of clip(u, 0.2 + [-1, 1]), computed independently by quadrature
    let prior = SparsityPrior::new(0.7, 1).unwrap();
    let cloud = PosteriorCloud::new(prior, &BackendConfig::importance(100_000), 4).unwrap();
    let got = cloud.predict_centered(&[1.0], 0.2, 1.0).unwrap();
    let want = prior.coord_expectation(|u| clip(u, 0.2, 1.0), 1e-12);
    let sd = prior.coord_expectation(|u| (clip(u, 0.2, 1.0) - want).powi(2), 1e-12).sqrt();
    assert!((got - want).abs() <= 4.0 * sd / (100_000f64).sqrt(), "{got} vs {want}");
}

#[test]
fn same_seed_same_predictions() {
    let data = stochastic_sample(30, 5, 0.0);
    let feats: Vec<Vec<f64>> = data.iter().map(|(x, _)| fourier().features(x).unwrap()).collect();
    let ys: Vec<f64> = data.iter().map(|(_, y)| *y).collect();
    for backend in [BackendConfig::importance(500), BackendConfig::chain(200, 3)] {
        let run = |seed| {
            let mut f = SeqSewAdaptive::new(0.2, 2, &backend, seed).unwrap();
            run_features(&mut f, &feats, &ys).unwrap().predictions()
        };
        let a: Vec<u64> = run(1).iter().map(|v| v.to_bits()).collect();
        assert_eq!(a, run(1).iter().map(|v| v.to_bits()).collect::<Vec<_>>());
    }
}

#[test]
fn forecaster_trait_objects_report_dim() {
    let f = SeqSewAdaptive::new(0.2, 3, &BackendConfig::quadrature(65), 0);
    assert!(f.is_err(), "quadrature is limited to two dimensions");
    let f = SeqSewAdaptive::new(0.2, 2, &BackendConfig::quadrature(65), 0).unwrap();
    assert_eq!(f.dim(), 2);
}
