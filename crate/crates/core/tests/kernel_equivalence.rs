//! Equivalence of the bit-parallel kernel with the reference DP on the full
//! small corpus and on long random inputs.

use pmclab_core::alignment::{lcs, lcs_fast, score_with_substitution, LcsEngine, ScoringScheme};
use pmclab_core::markov::{build_max, sample_chain, stationary, PairState};
use pmclab_core::rng::task_stream;
use rand::Rng;

#[test]
fn exhaustive_binary_corpus_up_to_n10() {
    // Every pair of equal-length binary strings with n <= 10.
    for n in 0..=10usize {
        for xm in 0u32..(1 << n) {
            let x: Vec<u8> = (0..n).map(|i| (xm >> i & 1) as u8).collect();
            for ym in 0u32..(1 << n) {
                let y: Vec<u8> = (0..n).map(|i| (ym >> i & 1) as u8).collect();
                assert_eq!(
                    lcs_fast(&x, &y).unwrap(),
                    lcs(&x, &y).unwrap(),
                    "n={n} x={xm:b} y={ym:b}"
                );
            }
        }
    }
}

#[test]
fn random_pairs_up_to_n2000() {
    let mut rng = task_stream(7001, 0);
    for trial in 0..1000 {
        let n = rng.random_range(1..=2000);
        let k = if trial % 3 == 0 { 4u8 } else { 2u8 };
        let x: Vec<u8> = (0..n).map(|_| rng.random_range(0..k)).collect();
        let y: Vec<u8> = (0..n).map(|_| rng.random_range(0..k)).collect();
        assert_eq!(lcs_fast(&x, &y).unwrap(), lcs(&x, &y).unwrap(), "n={n} k={k}");
    }
}

#[test]
fn substitution_differences_stay_in_band() {
    // 1e5 random single-pair substitutions: the LCS moves by at most 2.
    let p = build_max(0.9, 0.7, 0.05).unwrap();
    let pi = stationary(&p).unwrap();
    let scheme = ScoringScheme::lcs(2);
    let mut rng = task_stream(7002, 0);
    let mut done = 0usize;
    let mut histogram = [0usize; 5];
    while done < 100_000 {
        let z = sample_chain(&p, &pi, 400, 9000 + done as u64).unwrap();
        let base = lcs(&z.x_seq(), &z.y_seq()).unwrap() as f64;
        for _ in 0..2000 {
            let t = rng.random_range(1..=z.len());
            let np = PairState::new(rng.random_range(0..2), rng.random_range(0..2));
            let s = score_with_substitution(&z, t, np, &scheme).unwrap();
            let d = s - base;
            assert!(
                (-2.0..=2.0).contains(&d) && d == d.round(),
                "difference {d} out of band"
            );
            histogram[(d as i64 + 2) as usize] += 1;
            done += 1;
            if done >= 100_000 {
                break;
            }
        }
    }
    // All five values are reachable on this model.
    assert!(histogram.iter().all(|&c| c > 0), "{histogram:?}");
}

#[test]
fn full_scale_length_runs_and_matches() {
    // One full-scale pair (the length of a 7500-triplet chain): the kernel
    // must finish well inside the simulation time budget and agree with the
    // reference DP.
    let p = build_max(0.9, 0.7, 0.05).unwrap();
    let pi = stationary(&p).unwrap();
    let z = sample_chain(&p, &pi, 22_500, 77).unwrap();
    let x = z.x_seq();
    let y = z.y_seq();
    let start = std::time::Instant::now();
    let fast = lcs_fast(&x, &y).unwrap();
    let kernel_time = start.elapsed();
    assert!(
        kernel_time < std::time::Duration::from_secs(10),
        "kernel took {kernel_time:?}"
    );
    assert_eq!(fast, lcs(&x, &y).unwrap());
}

#[test]
fn checkpointed_substitutions_match_reference_on_prefixes() {
    let p = build_max(0.9, 0.7, 0.05).unwrap();
    let pi = stationary(&p).unwrap();
    let z = sample_chain(&p, &pi, 600, 31).unwrap();
    let x = z.x_seq();
    let y = z.y_seq();
    let mut engine = LcsEngine::new(&x, &y).unwrap();
    engine.run(None);
    let mut rng = task_stream(7003, 0);
    for _ in 0..200 {
        let t = rng.random_range(1..=600);
        let target = rng.random_range(t..=600);
        let nx = rng.random_range(0..2u8);
        let ny = rng.random_range(0..2u8);
        let got = engine.substituted_prefix_len(t, nx, ny, target).unwrap();
        let mut xs = x[..target].to_vec();
        let mut ys = y[..target].to_vec();
        xs[t - 1] = nx;
        ys[t - 1] = ny;
        assert_eq!(got, lcs(&xs, &ys).unwrap());
    }
}
