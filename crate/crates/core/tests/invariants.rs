//! Property tests of the structural invariants.

use pmclab_core::alignment::{lcs, lcs_fast, score, ScoringScheme};
use pmclab_core::counters::summarize;
use pmclab_core::markov::{
    build_general, build_ind, build_max, build_min, check_lumpable, partition_by_x,
    partition_by_y, stationary, LumpOutcome, MarginalParams, PairState, TransitionMatrix,
};
use pmclab_core::counters::TripletPattern;
use proptest::prelude::*;

fn rows_sum_to_one(p: &TransitionMatrix) {
    let dim = p.dim();
    for i in 0..dim {
        let s: f64 = p.row(i).iter().sum();
        prop_assert_close(s, 1.0);
    }
}

fn prop_assert_close(a: f64, b: f64) {
    assert!((a - b).abs() <= 1e-12, "{a} vs {b}");
}

fn marginal_rows(outcome: LumpOutcome) -> Vec<Vec<f64>> {
    match outcome {
        LumpOutcome::Markov(m) => m.rows,
        LumpOutcome::Violation { state, block, .. } => {
            panic!("expected lumpable, violated at ({state}, {block})")
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(200))]

    #[test]
    fn constructors_are_row_stochastic_and_lumpable(
        p in 0.05f64..0.95,
        q in 0.05f64..0.95,
        eps in 0.0f64..0.04,
    ) {
        let mut models = Vec::new();
        models.push((build_ind(p, q).unwrap(), p, q));
        // The displayed max/min matrices presume p >= q.
        let (hi, lo) = if p >= q { (p, q) } else { (q, p) };
        if lo - eps >= 0.0 && 1.0 - hi - eps >= 0.0 {
            models.push((build_max(hi, lo, eps).unwrap(), hi, lo));
        }
        if hi + lo > 1.0 + 1e-9 && lo - eps >= 0.0 && 1.0 - hi - eps >= 0.0 {
            models.push((build_min(hi, lo, eps).unwrap(), hi, lo));
        }
        for (m, mp, mq) in models {
            rows_sum_to_one(&m);
            // Both coordinate lumpings are Markov with the marginal rows
            // (mp, 1-mp; mq, 1-mq).
            let mx = marginal_rows(check_lumpable(&m, &partition_by_x(2)).unwrap());
            let my = marginal_rows(check_lumpable(&m, &partition_by_y(2)).unwrap());
            for rows in [mx, my] {
                prop_assert_close(rows[0][0], mp);
                prop_assert_close(rows[0][1], 1.0 - mp);
                prop_assert_close(rows[1][0], mq);
                prop_assert_close(rows[1][1], 1.0 - mq);
            }
        }
    }

    #[test]
    fn general_at_independence_matches_product(
        p in 0.05f64..0.95,
        q in 0.05f64..0.95,
        p_dash in 0.05f64..0.95,
        q_dash in 0.05f64..0.95,
    ) {
        let g = build_general(MarginalParams {
            p, q, p_dash, q_dash,
            lambda1: p_dash, lambda2: q_dash, mu1: p_dash, mu2: q_dash,
        }).unwrap();
        rows_sum_to_one(&g);
        // X marginal is (p, 1-p; q, 1-q), Y marginal (p', 1-p'; q', 1-q').
        let mx = marginal_rows(check_lumpable(&g, &partition_by_x(2)).unwrap());
        prop_assert_close(mx[0][0], p);
        prop_assert_close(mx[1][0], q);
        let my = marginal_rows(check_lumpable(&g, &partition_by_y(2)).unwrap());
        prop_assert_close(my[0][0], p_dash);
        prop_assert_close(my[1][0], q_dash);
    }

    #[test]
    fn fast_kernel_equals_reference(
        x in proptest::collection::vec(0u8..3, 0..300),
        y_seed in any::<u64>(),
    ) {
        // y of the same length from a different distribution.
        use rand::Rng;
        let mut rng = pmclab_core::rng::task_stream(y_seed, 0);
        let y: Vec<u8> = (0..x.len()).map(|_| rng.random_range(0..3)).collect();
        prop_assert_eq!(lcs_fast(&x, &y).unwrap(), lcs(&x, &y).unwrap());
    }

    #[test]
    fn score_with_lcs_table_equals_lcs(
        x in proptest::collection::vec(0u8..2, 0..80),
        y in proptest::collection::vec(0u8..2, 0..80),
    ) {
        let n = x.len().min(y.len());
        let (x, y) = (&x[..n], &y[..n]);
        let scheme = ScoringScheme::lcs(2);
        prop_assert_eq!(score(x, y, &scheme).unwrap(), lcs(x, y).unwrap() as f64);
    }

    #[test]
    fn lcs_superadditive_on_splits(
        x in proptest::collection::vec(0u8..2, 2..120),
        y_seed in any::<u64>(),
        cut_frac in 0.1f64..0.9,
    ) {
        use rand::Rng;
        let mut rng = pmclab_core::rng::task_stream(y_seed, 1);
        let y: Vec<u8> = (0..x.len()).map(|_| rng.random_range(0..2)).collect();
        let cut = ((x.len() as f64 * cut_frac) as usize).clamp(1, x.len() - 1);
        let whole = lcs(&x, &y).unwrap();
        let parts = lcs(&x[..cut], &y[..cut]).unwrap() + lcs(&x[cut..], &y[cut..]).unwrap();
        prop_assert!(whole >= parts);
    }

    #[test]
    fn counters_consistent(
        seed in any::<u64>(),
        n in 3usize..60,
    ) {
        let p = build_max(0.9, 0.7, 0.05).unwrap();
        let pi = stationary(&p).unwrap();
        let z = pmclab_core::markov::sample_chain(&p, &pi, n, seed).unwrap();
        let pat = TripletPattern::uniform(PairState::new(1, 1));
        let s = summarize(&z.states, &pat);
        prop_assert!(s.u <= s.v);
        prop_assert!(s.v <= n / 3);
        prop_assert_eq!(s.v, s.n_vec.iter().filter(|&&b| b).count());
        prop_assert_eq!(s.u, s.b_vec.iter().filter(|&&b| b).count());
        prop_assert_eq!(s.b_vec.len(), s.v);
    }
}
