use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use bdqcd::asymptotics::{
    achievability_slope, calibrate_h_multishot, calibrate_h_simultaneous, converse_slope, false_bound_multishot,
    false_bound_simultaneous, xi_d,
};
use bdqcd::montecarlo::run_trials_with_workers;
use bdqcd::sensors::ChangeTime;
use bdqcd::{
    build_reverse_assignment, AttackKind, CusumMatrix, DensityModel, FusionRule, HypothesisSet, MatrixMode,
    Mechanism, Scenario, ScalarCusum, SensorState,
};

fn brute_force(llrs: &[f64]) -> f64 {
    (0..llrs.len())
        .map(|s| llrs[s..].iter().sum::<f64>())
        .fold(0.0, f64::max)
}

fn gaussian() -> impl Strategy<Value = DensityModel> {
    (-4.0..4.0f64, 0.2..5.0f64).prop_map(|(m, v)| DensityModel::gaussian(m, v).unwrap())
}

fn exponential() -> impl Strategy<Value = DensityModel> {
    (0.1..10.0f64).prop_map(|r| DensityModel::exponential(r).unwrap())
}

fn bernoulli() -> impl Strategy<Value = DensityModel> {
    (0.02..0.98f64).prop_map(|p| DensityModel::bernoulli(p).unwrap())
}

fn distinct_means(q: usize) -> impl Strategy<Value = HypothesisSet> {
    prop::collection::btree_set(-20i32..20, q + 1).prop_flat_map(|means| {
        let means: Vec<f64> = means.into_iter().map(|m| m as f64 * 0.5).collect();
        Just(means).prop_shuffle().prop_map(|means| {
            HypothesisSet::new(means.iter().map(|&m| DensityModel::gaussian(m, 1.0).unwrap()).collect()).unwrap()
        })
    })
}

proptest! {
    #[test]
    fn scalar_cusum_matches_brute_force(llrs in prop::collection::vec(-5.0..5.0f64, 1..120)) {
        let mut c = ScalarCusum::new(1.0).unwrap();
        for t in 0..llrs.len() {
            c.update(llrs[t]);
            prop_assert!((c.stat() - brute_force(&llrs[..=t])).abs() <= 1e-10);
            prop_assert!(c.stat() >= 0.0);
        }
    }

    #[test]
    fn matrix_entries_match_brute_force(hs in distinct_means(3), xs in prop::collection::vec(-6.0..6.0f64, 1..60)) {
        let mut m = CusumMatrix::full(hs.q());
        for x in &xs {
            m.update(&hs, *x).unwrap();
        }
        for q in 1..=hs.q() {
            for j in (0..=hs.q()).filter(|&j| j != q) {
                let llrs: Vec<f64> = xs.iter().map(|&x| hs.log_likelihood_ratio(q, j, x).unwrap()).collect();
                prop_assert!((m.entry(q, j).unwrap() - brute_force(&llrs)).abs() <= 1e-10);
            }
        }
    }

    #[test]
    fn reduced_row_never_below_full(hs in distinct_means(3), xs in prop::collection::vec(-6.0..6.0f64, 1..60)) {
        let mut full = CusumMatrix::full(hs.q());
        let mut reduced = CusumMatrix::for_hypotheses(&hs, MatrixMode::Reduced);
        for x in &xs {
            full.update(&hs, *x).unwrap();
            reduced.update(&hs, *x).unwrap();
            let (f, r) = (full.row_min(), reduced.row_min());
            for q in 1..=hs.q() {
                prop_assert!(r.get(q) >= f.get(q));
            }
        }
    }

    #[test]
    fn gaussian_kl_quadrature(p in gaussian(), r in gaussian()) {
        let exact = p.kl_closed_form(&r).unwrap();
        prop_assume!(exact > 1e-6);
        let quad = p.kl_by_quadrature(&r).unwrap();
        prop_assert!(((quad - exact) / exact).abs() <= 1e-6, "{quad} vs {exact}");
    }

    #[test]
    fn exponential_kl_quadrature(p in exponential(), r in exponential()) {
        let exact = p.kl_closed_form(&r).unwrap();
        prop_assume!(exact > 1e-6);
        let quad = p.kl_by_quadrature(&r).unwrap();
        prop_assert!(((quad - exact) / exact).abs() <= 1e-6, "{quad} vs {exact}");
    }

    #[test]
    fn bernoulli_kl_sum(p in bernoulli(), r in bernoulli()) {
        let exact = p.kl_closed_form(&r).unwrap();
        prop_assume!(exact > 1e-6);
        let quad = p.kl_by_quadrature(&r).unwrap();
        prop_assert!(((quad - exact) / exact).abs() <= 1e-6);
    }

    #[test]
    fn second_moment_quadrature(p in gaussian(), r in gaussian()) {
        let exact = p.llr_second_moment_closed_form(&r).unwrap();
        prop_assume!(exact > 1e-6);
        let kl = p.kl_closed_form(&r).unwrap();
        let quad = p.llr_second_moment_by_quadrature(&r, kl).unwrap();
        prop_assert!(((quad - exact) / exact).abs() <= 1e-6);
    }

    #[test]
    fn i_star_is_the_smallest_row(hs in distinct_means(4)) {
        let ca = hs.closest_alternatives();
        for q in 1..=hs.q() {
            let (iq, j) = ca.get(q);
            prop_assert!(ca.i_star <= iq);
            prop_assert!(j != q);
            for other in (0..=hs.q()).filter(|&o| o != q) {
                prop_assert!(iq <= hs.kl_divergence(q, other).unwrap());
            }
        }
    }

    #[test]
    fn reverse_assignment_is_consistent(hs in distinct_means(3)) {
        let a = build_reverse_assignment(&hs);
        let ca = hs.closest_alternatives();
        let partner = ca.closest(a.pivot);
        prop_assert_eq!(a.fake_index[partner], a.pivot);
        prop_assert_eq!(a.fake_index[a.pivot], partner);
        for q in (0..=hs.q()).filter(|&q| q != partner) {
            prop_assert_eq!(a.fake_index[q], ca.closest(q));
        }
    }

    #[test]
    fn multi_shot_queue_is_bounded(hs in distinct_means(4), seed in any::<u64>(), h in 0.5..4.0f64) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut s = SensorState::new(0, true, &hs, MatrixMode::Full, Mechanism::MultiShot, h).unwrap();
        let mut reported = Vec::new();
        for t in 1..200 {
            let x = bdqcd::sensors::honest_observation(&hs, t, ChangeTime::At(0), 1 + (seed % hs.q() as u64) as usize, &mut rng);
            if let Some(msg) = s.step(&hs, x, &mut rng).unwrap() {
                if let bdqcd::ReportPayload::MultiShot(q) = msg.payload {
                    prop_assert!(!reported.contains(&q));
                    reported.push(q);
                }
            }
            prop_assert!(s.queue_len() < hs.q());
        }
    }

    #[test]
    fn xi_symmetry_and_order(n in 1usize..=12) {
        let xi: Vec<f64> = (1..=n).map(|d| xi_d(n, d).unwrap()).collect();
        for d in 0..n {
            prop_assert!((xi[d] + xi[n - 1 - d]).abs() <= 1e-6);
        }
        prop_assert!(xi.windows(2).all(|w| w[0] < w[1]));
        prop_assert!(xi.iter().sum::<f64>().abs() <= 1e-6);
    }

    #[test]
    fn calibration_round_trip(n in 1usize..10, m_frac in 0.0..1.0f64, d_frac in 0.0..1.0f64, log_gamma in 0.1..30.0f64) {
        let m = ((n as f64) * m_frac) as usize % n;
        let d = m + 1 + ((n - m) as f64 * d_frac) as usize % (n - m);
        let gamma = log_gamma.exp();
        let hs = calibrate_h_simultaneous(n, m, d, gamma).unwrap();
        let hm = calibrate_h_multishot(n, m, d, gamma).unwrap();
        let bs = false_bound_simultaneous(n, m, d, hs).unwrap();
        let bm = false_bound_multishot(n, m, d, hm).unwrap();
        prop_assert!(bs * (1.0 + 1e-9) >= gamma);
        prop_assert!(bm * (1.0 + 1e-9) >= gamma);
        prop_assert!((bs / gamma - 1.0).abs() < 1e-9);
        prop_assert!((bm / gamma - 1.0).abs() < 1e-9);
    }

    #[test]
    fn consensus_slope_is_optimal(n in 2usize..10, m_frac in 0.0..1.0f64, i_star in 0.01..5.0f64) {
        let m = ((n as f64) * m_frac) as usize % n;
        let conv = converse_slope(n, m, i_star).unwrap();
        prop_assert_eq!(achievability_slope(&FusionRule::simultaneous(n), n, m, i_star).unwrap(), conv);
        prop_assert!(conv >= 1.0 / (n as f64 * i_star));
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn llr_sample_mean_approaches_kl(p in gaussian(), r in gaussian(), seed in any::<u64>()) {
        let hs = HypothesisSet::new(vec![r, p]);
        prop_assume!(hs.is_ok());
        let hs = hs.unwrap();
        let kl = hs.kl_divergence(1, 0).unwrap();
        let sd = hs.llr_second_moment(1, 0).unwrap().sqrt();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let n = 20_000;
        let mean = (0..n).map(|_| hs.log_likelihood_ratio(1, 0, p.sample(&mut rng)).unwrap()).sum::<f64>() / n as f64;
        // Six standard errors.
        prop_assert!((mean - kl).abs() <= 6.0 * sd / (n as f64).sqrt() + 1e-9, "{mean} vs {kl}");
    }

    #[test]
    fn results_ignore_worker_count(seed in any::<u64>(), workers in 2usize..6) {
        let hs = HypothesisSet::new(vec![
            DensityModel::gaussian(0.0, 1.0).unwrap(),
            DensityModel::gaussian(1.0, 1.0).unwrap(),
            DensityModel::gaussian(-1.5, 1.0).unwrap(),
        ]).unwrap();
        let sc = Scenario::new(hs, 4, FusionRule::simultaneous(3), 3.0)
            .with_attack(AttackKind::Reverse, 1)
            .with_change(ChangeTime::At(5), 2)
            .with_trials(64)
            .with_seed(seed);
        prop_assert_eq!(run_trials_with_workers(&sc, 1).unwrap(), run_trials_with_workers(&sc, workers).unwrap());
    }
}
