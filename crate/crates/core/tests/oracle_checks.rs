//! Enumeration checks at the larger desk sizes (n = 9) across the shipped
//! models, plus cross-module consistency of the gain statistic.

use pmclab_core::counters::TripletPattern;
use pmclab_core::markov::{build_ind, build_max, build_min, stationary, PairState};
use pmclab_core::oracle::{verify_a3, verify_combined_a3, verify_uv_conditional_independence};

fn pattern_11() -> TripletPattern {
    TripletPattern::uniform(PairState::new(1, 1))
}

#[test]
fn a3_n9_all_models() {
    for p in [
        build_ind(0.7, 0.7).unwrap(),
        build_max(0.9, 0.7, 0.05).unwrap(),
        build_min(0.7, 0.7, 0.05).unwrap(),
    ] {
        let pi = stationary(&p).unwrap();
        let rep = verify_a3(&p, &pi, &pattern_11(), 9, None).unwrap();
        assert!(
            rep.max_tv <= 1e-10,
            "{}: max tv {}",
            p.label(),
            rep.max_tv
        );
        assert!(rep.per_pair.len() >= 3);
    }
}

#[test]
fn combined_a3_n9_ind() {
    let p = build_ind(0.7, 0.7).unwrap();
    let pi = stationary(&p).unwrap();
    let p1 = TripletPattern::uniform(PairState::new(1, 0));
    let p2 = TripletPattern::uniform(PairState::new(0, 1));
    let rep = verify_combined_a3(&p, &pi, &p1, &p2, 9, None).unwrap();
    assert!(rep.equal_q);
    assert!(rep.max_tv <= 1e-10, "max tv {}", rep.max_tv);
}

#[test]
fn uv_independence_n9() {
    let p = build_min(0.7, 0.7, 0.05).unwrap();
    let pi = stationary(&p).unwrap();
    let rep = verify_uv_conditional_independence(&p, &pi, &pattern_11(), 9, None).unwrap();
    assert!(rep.max_abs_diff <= 1e-12, "{}", rep.max_abs_diff);
}
