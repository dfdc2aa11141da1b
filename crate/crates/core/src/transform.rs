//! Random transformations on triplet-counted sequences.
//!
//! The single-pattern transformation picks, uniformly, a matched triplet
//! whose middle is not `D` and sets that middle to `D`: the triplet count
//! `v` is unchanged and the middle count `u` increments. The combined
//! transformation runs two such transformations on disjoint endpoint
//! patterns, choosing the side with weights that preserve the conditional
//! law structure; for equal middle probabilities the weights have a closed
//! form, otherwise they solve a forward recursion on the conditional
//! binomial laws.

use rand::Rng;

use crate::alignment::{score, LcsEngine, ScoringScheme};
use crate::counters::{ln_binomial_pmf, q_of, summarize, TripletPattern};
use crate::error::{Error, Result};
use crate::markov::{ChainSample, PairState, TransitionMatrix};
use crate::rng::Stream;

/// Result of applying a transformation to a sample.
#[derive(Debug, Clone)]
pub struct TransformOutcome {
    /// The transformed sample; differs from the input at exactly one position.
    pub modified: ChainSample,
    /// 1-based sequence position of the changed middle, `3(i-1) + 2` for the
    /// chosen 1-based triplet `i`.
    pub changed_index: usize,
    /// Pair previously at that position.
    pub old_pair: PairState,
    /// Pair now at that position (the `D` of the acting pattern).
    pub new_pair: PairState,
}

/// 0-based triplet indices eligible for the transformation: endpoints match
/// and the middle is not `D`.
pub fn eligible_positions(states: &[PairState], pattern: &TripletPattern) -> Vec<usize> {
    let s = summarize(states, pattern);
    s.positions
        .iter()
        .zip(s.b_vec.iter())
        .filter(|(_, &has_d)| !has_d)
        .map(|(&i, _)| i)
        .collect()
}

fn substitute_middle(z: &ChainSample, triplet: usize, d: PairState) -> TransformOutcome {
    let pos = 3 * triplet + 1; // 0-based middle of 0-based triplet
    let mut modified = z.clone();
    let old_pair = modified.states[pos];
    modified.states[pos] = d;
    TransformOutcome {
        modified,
        changed_index: pos + 1,
        old_pair,
        new_pair: d,
    }
}

/// Apply the single-pattern transformation with a uniform pick over the
/// eligible triplets.
pub fn apply_single(
    z: &ChainSample,
    pattern: &TripletPattern,
    rng: &mut Stream,
) -> Result<TransformOutcome> {
    let eligible = eligible_positions(&z.states, pattern);
    if eligible.is_empty() {
        return Err(Error::NoEligibleTriplet);
    }
    let pick = eligible[rng.random_range(0..eligible.len())];
    let out = substitute_middle(z, pick, pattern.d);
    #[cfg(debug_assertions)]
    {
        let before = summarize(&z.states, pattern);
        let after = summarize(&out.modified.states, pattern);
        debug_assert_eq!(after.v, before.v);
        debug_assert_eq!(after.u, before.u + 1);
    }
    Ok(out)
}

/// Exact conditional expected score change of the transformation given `z`:
/// the mean over eligible triplets of the score after setting that middle to
/// `D`, minus the current score. Deterministic: the pick is uniform, so the
/// expectation is a plain average.
pub fn expected_gain(
    z: &ChainSample,
    pattern: &TripletPattern,
    scheme: &ScoringScheme,
) -> Result<f64> {
    let eligible = eligible_positions(&z.states, pattern);
    if eligible.is_empty() {
        return Err(Error::NoEligibleTriplet);
    }
    let x = z.x_seq();
    let y = z.y_seq();
    let n = z.len();
    if scheme.is_lcs() {
        let mut engine = LcsEngine::new(&x, &y)?;
        engine.run(None);
        let base = engine.full_len() as f64;
        let mut total = 0.0;
        for &trip in &eligible {
            let t = 3 * trip + 2; // 1-based middle position
            let sub = engine.substituted_prefix_len(t, pattern.d.x, pattern.d.y, n)? as f64;
            total += sub - base;
        }
        Ok(total / eligible.len() as f64)
    } else {
        let base = score(&x, &y, scheme)?;
        let mut total = 0.0;
        let mut xs = x.clone();
        let mut ys = y.clone();
        for &trip in &eligible {
            let pos = 3 * trip + 1;
            let (ox, oy) = (xs[pos], ys[pos]);
            xs[pos] = pattern.d.x;
            ys[pos] = pattern.d.y;
            total += score(&xs, &ys, scheme)? - base;
            xs[pos] = ox;
            ys[pos] = oy;
        }
        Ok(total / eligible.len() as f64)
    }
}

/// [`expected_gain`] over a uniform subsample of at most `max_positions`
/// eligible triplets. The full average is the default everywhere; this is an
/// opt-in shortcut for very dense patterns.
pub fn expected_gain_subsampled(
    z: &ChainSample,
    pattern: &TripletPattern,
    scheme: &ScoringScheme,
    max_positions: usize,
    rng: &mut Stream,
) -> Result<f64> {
    let eligible = eligible_positions(&z.states, pattern);
    if eligible.is_empty() {
        return Err(Error::NoEligibleTriplet);
    }
    if eligible.len() <= max_positions {
        return expected_gain(z, pattern, scheme);
    }
    // Floyd-style uniform sample without replacement, then position order.
    let mut picked = std::collections::BTreeSet::new();
    for top in eligible.len() - max_positions..eligible.len() {
        let j = rng.random_range(0..=top);
        if !picked.insert(j) {
            picked.insert(top);
        }
    }
    let x = z.x_seq();
    let y = z.y_seq();
    let mut engine = LcsEngine::new(&x, &y)?;
    let n = z.len();
    if scheme.is_lcs() {
        engine.run(None);
        let base = engine.full_len() as f64;
        let mut total = 0.0;
        for &idx in &picked {
            let trip = eligible[idx];
            let sub =
                engine.substituted_prefix_len(3 * trip + 2, pattern.d.x, pattern.d.y, n)? as f64;
            total += sub - base;
        }
        Ok(total / picked.len() as f64)
    } else {
        let base = score(&x, &y, scheme)?;
        let mut xs = x.clone();
        let mut ys = y.clone();
        let mut total = 0.0;
        for &idx in &picked {
            let pos = 3 * eligible[idx] + 1;
            let (ox, oy) = (xs[pos], ys[pos]);
            xs[pos] = pattern.d.x;
            ys[pos] = pattern.d.y;
            total += score(&xs, &ys, scheme)? - base;
            xs[pos] = ox;
            ys[pos] = oy;
        }
        Ok(total / picked.len() as f64)
    }
}

// ---------------------------------------------------------------------------
// Combined transformation weights
// ---------------------------------------------------------------------------

/// Side-choice probabilities of the combined transformation at one counter
/// state.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CombinedWeights {
    pub r1: f64,
    pub r2: f64,
}

/// Equal-`q` closed form: `r_i` proportional to the remaining deficit
/// `v_i - u_i`.
pub fn equal_q_weights(u1: usize, u2: usize, v1: usize, v2: usize) -> Result<CombinedWeights> {
    if u1 > v1 || u2 > v2 {
        return Err(Error::Domain(format!(
            "counters out of range: u1 = {u1} > v1 = {v1} or u2 = {u2} > v2 = {v2}"
        )));
    }
    let d1 = (v1 - u1) as f64;
    let d2 = (v2 - u2) as f64;
    if d1 + d2 == 0.0 {
        return Err(Error::Domain(
            "no eligible triplet on either side (u_i = v_i)".into(),
        ));
    }
    Ok(CombinedWeights {
        r1: d1 / (d1 + d2),
        r2: d2 / (d1 + d2),
    })
}

/// Weight table for one total count `u`: weights indexed by `u1 = l`.
#[derive(Debug, Clone)]
pub struct WeightTable {
    pub u: usize,
    pub v1: usize,
    pub v2: usize,
    /// `(l, weights)` for `l` in the feasible range `[max(u - v2, 0), min(u, v1)]`.
    pub rows: Vec<(usize, CombinedWeights)>,
}

impl WeightTable {
    pub fn weights_at(&self, u1: usize) -> Option<CombinedWeights> {
        self.rows
            .iter()
            .find(|(l, _)| *l == u1)
            .map(|(_, w)| *w)
    }
}

/// Conditional law `p(l | u) = P(U1 = l | U1 + U2 = u)` for independent
/// binomials `U1 ~ B(v1, q1)`, `U2 ~ B(v2, q2)`, over the feasible `l` range.
fn conditional_split_law(u: usize, v1: usize, v2: usize, q1: f64, q2: f64) -> Vec<f64> {
    let l1 = u.saturating_sub(v2);
    let l2 = u.min(v1);
    let logs: Vec<f64> = (l1..=l2)
        .map(|l| {
            ln_binomial_pmf(v1 as u64, l as u64, q1)
                + ln_binomial_pmf(v2 as u64, (u - l) as u64, q2)
        })
        .collect();
    let max = logs.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let weights: Vec<f64> = logs.iter().map(|&w| (w - max).exp()).collect();
    let total: f64 = weights.iter().sum();
    weights.into_iter().map(|w| w / total).collect()
}

/// Solve the side-weight recursion for general `(q1, q2)` at total count `u`.
///
/// The boundary equation pins the first unknown (`r2` at `l = 0` when
/// `u < v2`, otherwise `r2 = 0` at `l = u - v2` where side 2 is full) and
/// the interior equation propagates across the feasible range with
/// `r1 + r2 = 1`. Weights escaping `[0, 1]` beyond numerical noise are
/// reported as infeasible rather than clamped.
pub fn general_q_weights(
    u: usize,
    v1: usize,
    v2: usize,
    q1: f64,
    q2: f64,
) -> Result<WeightTable> {
    if u >= v1 + v2 {
        return Err(Error::Domain(format!(
            "u = {u} must be below v1 + v2 = {}",
            v1 + v2
        )));
    }
    for (name, q) in [("q1", q1), ("q2", q2)] {
        if !(0.0..=1.0).contains(&q) || q == 0.0 || q == 1.0 {
            return Err(Error::Domain(format!("{name} must lie in (0,1), got {q}")));
        }
    }
    let l1 = u.saturating_sub(v2);
    let l2 = u.min(v1);
    let cur = conditional_split_law(u, v1, v2, q1, q2);
    let next = conditional_split_law(u + 1, v1, v2, q1, q2);
    let next_l1 = (u + 1).saturating_sub(v2);
    let p_cur = |l: usize| cur[l - l1];
    let p_next = |l: usize| {
        if l < next_l1 || l > (u + 1).min(v1) {
            0.0
        } else {
            next[l - next_l1]
        }
    };

    const TOL: f64 = 1e-9;
    let mut rows = Vec::with_capacity(l2 - l1 + 1);
    // First unknown at l = l1.
    let first_r2 = if u < v2 {
        // Boundary equation: r2(0, u) p(0|u) = p(0|u+1).
        p_next(l1) / p_cur(l1)
    } else {
        // Side 2 is full at l1 = u - v2: r2 forced to zero.
        0.0
    };
    let mut r2 = first_r2;
    rows.push((
        l1,
        CombinedWeights {
            r1: 1.0 - r2,
            r2,
        },
    ));
    for l in l1 + 1..=l2 {
        let r1_prev = 1.0 - r2;
        // Interior equation:
        // r1(l-1) p(l-1|u) + r2(l) p(l|u) = p(l|u+1).
        r2 = (p_next(l) - r1_prev * p_cur(l - 1)) / p_cur(l);
        rows.push((
            l,
            CombinedWeights {
                r1: 1.0 - r2,
                r2,
            },
        ));
    }
    // Consistency at the top boundary.
    if u >= v1 {
        // Side 1 full at l2 = v1: r1 must vanish.
        let last = rows.last().unwrap().1;
        if last.r1.abs() > TOL {
            return Err(Error::Infeasible(format!(
                "r1({v1}, {}) = {} should be 0",
                u - v1,
                last.r1
            )));
        }
    } else {
        // Boundary equation: r1(u, 0) p(u|u) = p(u+1|u+1).
        let last = rows.last().unwrap().1;
        let resid = last.r1 * p_cur(l2) - p_next(u + 1);
        if resid.abs() > TOL {
            return Err(Error::Infeasible(format!(
                "top boundary residual {resid} at u = {u}"
            )));
        }
    }
    // Validate and clamp numerical noise.
    for (l, w) in rows.iter_mut() {
        for r in [&mut w.r1, &mut w.r2] {
            if *r < -TOL || *r > 1.0 + TOL {
                return Err(Error::Infeasible(format!(
                    "weight {r} outside [0,1] at l = {l}, u = {u}"
                )));
            }
            *r = r.clamp(0.0, 1.0);
        }
    }
    Ok(WeightTable { u, v1, v2, rows })
}

/// How the combined transformation picks its side.
#[derive(Debug, Clone, Copy)]
pub enum WeightRule {
    /// Closed form for `q1 = q2`.
    EqualQ,
    /// Forward-recursion weights for general middle probabilities.
    GeneralQ { q1: f64, q2: f64 },
}

impl WeightRule {
    /// Rule for a model: equal-`q` when the pattern probabilities agree,
    /// otherwise the general solver.
    pub fn for_model(
        p: &TransitionMatrix,
        pattern1: &TripletPattern,
        pattern2: &TripletPattern,
    ) -> Result<WeightRule> {
        let q1 = q_of(p, pattern1)?;
        let q2 = q_of(p, pattern2)?;
        if (q1 - q2).abs() <= 1e-12 {
            Ok(WeightRule::EqualQ)
        } else {
            Ok(WeightRule::GeneralQ { q1, q2 })
        }
    }

    /// Side weights at the current counter state.
    pub fn weights(&self, u1: usize, u2: usize, v1: usize, v2: usize) -> Result<CombinedWeights> {
        match self {
            WeightRule::EqualQ => equal_q_weights(u1, u2, v1, v2),
            WeightRule::GeneralQ { q1, q2 } => {
                let table = general_q_weights(u1 + u2, v1, v2, *q1, *q2)?;
                table.weights_at(u1).ok_or_else(|| {
                    Error::Infeasible(format!("no weight row for u1 = {u1} at u = {}", u1 + u2))
                })
            }
        }
    }
}

/// Apply the combined transformation: choose a side by the weight rule at
/// the current counters, then act uniformly on that side's eligible
/// triplets.
pub fn apply_combined(
    z: &ChainSample,
    pattern1: &TripletPattern,
    pattern2: &TripletPattern,
    rule: &WeightRule,
    rng: &mut Stream,
) -> Result<TransformOutcome> {
    if pattern1.a == pattern2.a && pattern1.b == pattern2.b {
        return Err(Error::Domain(
            "combined patterns must have distinct endpoint pairs".into(),
        ));
    }
    let s1 = summarize(&z.states, pattern1);
    let s2 = summarize(&z.states, pattern2);
    if s1.u == s1.v && s2.u == s2.v {
        return Err(Error::NoEligibleTriplet);
    }
    let w = rule.weights(s1.u, s2.u, s1.v, s2.v)?;
    let side1 = if s1.u == s1.v {
        false
    } else if s2.u == s2.v {
        true
    } else {
        rng.random::<f64>() < w.r1
    };
    let pattern = if side1 { pattern1 } else { pattern2 };
    apply_single(z, pattern, rng)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::counters::summarize;
    use crate::markov::{build_ind, build_max, sample_chain, stationary};
    use crate::rng::task_stream;
    use num_rational::BigRational;
    use num_traits::{One, Zero};

    fn pattern_11() -> TripletPattern {
        TripletPattern::uniform(PairState::new(1, 1))
    }

    fn make_sample(states: Vec<PairState>) -> ChainSample {
        ChainSample {
            states,
            seed: 0,
            label: "test".into(),
        }
    }

    #[test]
    fn eligible_positions_cases() {
        let a = PairState::new(1, 1);
        let x = PairState::new(0, 1);
        let pat = pattern_11();
        // All middles already D.
        assert!(eligible_positions(&[a, a, a, a, a, a], &pat).is_empty());
        // First triplet eligible, second has D middle.
        let elig = eligible_positions(&[a, x, a, a, a, a], &pat);
        assert_eq!(elig, vec![0]);
        // Cross-module consistency with summarize.
        let p = build_max(0.9, 0.7, 0.05).unwrap();
        let pi = stationary(&p).unwrap();
        for seed in 0..20 {
            let z = sample_chain(&p, &pi, 60, seed).unwrap();
            let s = summarize(&z.states, &pat);
            let expect: Vec<usize> = s
                .positions
                .iter()
                .zip(&s.b_vec)
                .filter(|(_, &b)| !b)
                .map(|(&i, _)| i)
                .collect();
            assert_eq!(eligible_positions(&z.states, &pat), expect);
        }
    }

    #[test]
    fn apply_single_increments_u_and_changes_one_state() {
        let p = build_max(0.9, 0.7, 0.05).unwrap();
        let pi = stationary(&p).unwrap();
        let pat = pattern_11();
        let mut rng = task_stream(201, 0);
        let mut applied = 0;
        for seed in 0..50 {
            let z = sample_chain(&p, &pi, 90, seed).unwrap();
            let before = summarize(&z.states, &pat);
            match apply_single(&z, &pat, &mut rng) {
                Ok(out) => {
                    applied += 1;
                    let after = summarize(&out.modified.states, &pat);
                    assert_eq!(after.v, before.v);
                    assert_eq!(after.u, before.u + 1);
                    assert_eq!(out.modified.states[out.changed_index - 1], pat.d);
                    let diffs = z
                        .states
                        .iter()
                        .zip(&out.modified.states)
                        .filter(|(a, b)| a != b)
                        .count();
                    assert_eq!(diffs, 1);
                    assert_eq!(out.changed_index % 3, 2);
                }
                Err(Error::NoEligibleTriplet) => {
                    assert_eq!(before.u, before.v);
                }
                Err(e) => panic!("unexpected error {e}"),
            }
        }
        assert!(applied > 30);
    }

    #[test]
    fn apply_single_is_uniform_over_eligible() {
        // Fixed sequence with three eligible triplets.
        let a = PairState::new(1, 1);
        let x = PairState::new(0, 0);
        let z = make_sample(vec![a, x, a, a, x, a, a, a, a, a, x, a]);
        let pat = pattern_11();
        let elig = eligible_positions(&z.states, &pat);
        assert_eq!(elig.len(), 3);
        let trials = 100_000;
        let mut rng = task_stream(202, 0);
        let mut counts = std::collections::HashMap::new();
        for _ in 0..trials {
            let out = apply_single(&z, &pat, &mut rng).unwrap();
            *counts.entry(out.changed_index).or_insert(0usize) += 1;
        }
        let expected = trials as f64 / 3.0;
        let chi2: f64 = counts
            .values()
            .map(|&c| {
                let d = c as f64 - expected;
                d * d / expected
            })
            .sum();
        assert!(chi2 < 13.8, "chi2 = {chi2}"); // 2 dof, ~0.999 quantile
        // Single eligible position: chosen with probability 1.
        let z1 = make_sample(vec![a, x, a]);
        let out = apply_single(&z1, &pat, &mut rng).unwrap();
        assert_eq!(out.changed_index, 2);
    }

    #[test]
    fn expected_gain_matches_enumeration_and_is_bounded() {
        let p = build_max(0.9, 0.7, 0.05).unwrap();
        let pi = stationary(&p).unwrap();
        let pat = pattern_11();
        let scheme = ScoringScheme::lcs(2);
        for seed in 0..40 {
            let z = sample_chain(&p, &pi, 12, seed).unwrap();
            let elig = eligible_positions(&z.states, &pat);
            if elig.is_empty() {
                assert!(matches!(
                    expected_gain(&z, &pat, &scheme),
                    Err(Error::NoEligibleTriplet)
                ));
                continue;
            }
            let got = expected_gain(&z, &pat, &scheme).unwrap();
            // Direct enumeration of the uniform pick.
            let base = crate::alignment::lcs(&z.x_seq(), &z.y_seq()).unwrap() as f64;
            let mut total = 0.0;
            for &i in &elig {
                let out = substitute_middle(&z, i, pat.d);
                let l =
                    crate::alignment::lcs(&out.modified.x_seq(), &out.modified.y_seq()).unwrap();
                total += l as f64 - base;
            }
            let want = total / elig.len() as f64;
            assert!((got - want).abs() < 1e-12, "{got} vs {want}");
            assert!((-2.0..=2.0).contains(&got));
        }
    }

    #[test]
    fn expected_gain_zero_when_substitutions_do_nothing() {
        // X = Y everywhere: the LCS is n and setting a middle to (1,1)
        // keeps X = Y, so every substitution leaves the score at n.
        let a = PairState::new(1, 1);
        let o = PairState::new(0, 0);
        let z = make_sample(vec![a, o, a, a, o, a]);
        let got = expected_gain(&z, &pattern_11(), &ScoringScheme::lcs(2)).unwrap();
        assert_eq!(got, 0.0);
    }

    #[test]
    fn subsampled_gain_agrees_when_not_subsampling() {
        let p = build_max(0.9, 0.7, 0.05).unwrap();
        let pi = stationary(&p).unwrap();
        let pat = pattern_11();
        let scheme = ScoringScheme::lcs(2);
        let z = sample_chain(&p, &pi, 120, 4).unwrap();
        let mut rng = task_stream(205, 0);
        let full = expected_gain(&z, &pat, &scheme).unwrap();
        // Cap above |J|: exact agreement.
        let same = expected_gain_subsampled(&z, &pat, &scheme, 10_000, &mut rng).unwrap();
        assert_eq!(full, same);
        // Strict subsample: still a bounded LCS gain.
        let sub = expected_gain_subsampled(&z, &pat, &scheme, 3, &mut rng).unwrap();
        assert!((-2.0..=2.0).contains(&sub));
    }

    #[test]
    fn equal_q_weight_properties() {
        let w = equal_q_weights(1, 2, 3, 4).unwrap();
        assert!((w.r1 + w.r2 - 1.0).abs() < 1e-15);
        // Equal deficits: 1/2 each.
        let w = equal_q_weights(1, 0, 3, 2).unwrap();
        assert_eq!(w.r1, 0.5);
        // Side 1 exhausted.
        let w = equal_q_weights(3, 0, 3, 2).unwrap();
        assert_eq!(w.r1, 0.0);
        assert!(equal_q_weights(2, 2, 2, 2).is_err());
    }

    /// Exact rational check of the three recurrences for the equal-q closed
    /// form, using hypergeometric conditional laws.
    #[test]
    fn equal_q_weights_satisfy_recurrences_exactly() {
        fn binom(n: usize, k: usize) -> BigRational {
            if k > n {
                return BigRational::zero();
            }
            let mut v = BigRational::one();
            for i in 0..k {
                v *= BigRational::new((n - i).into(), (i + 1).into());
            }
            v
        }
        // p(l | u) = C(v1,l) C(v2,u-l) / C(v1+v2,u), independent of q.
        let p = |l: i64, u: i64, v1: usize, v2: usize| -> BigRational {
            if l < 0 || u < l {
                return BigRational::zero();
            }
            let (l, u) = (l as usize, u as usize);
            if l > v1 || u - l > v2 {
                return BigRational::zero();
            }
            binom(v1, l) * binom(v2, u - l) / binom(v1 + v2, u)
        };
        let rat = |num: usize, den: usize| BigRational::new(num.into(), den.into());
        for total in 2..=40usize {
            for v1 in 1..total {
                let v2 = total - v1;
                for u in 0..v1 + v2 {
                    let l1 = u.saturating_sub(v2) as i64;
                    let l2 = u.min(v1) as i64;
                    // Interior: r1(l-1,u-l+1) p(l-1|u) + r2(l,u-l) p(l|u) = p(l|u+1).
                    for l in l1 + 1..=l2 {
                        let r1 = rat(v1 - (l - 1) as usize, v1 + v2 - u);
                        let r2 = rat(v2 - (u as i64 - l) as usize, v1 + v2 - u);
                        let lhs = r1 * p(l - 1, u as i64, v1, v2) + r2 * p(l, u as i64, v1, v2);
                        let rhs = p(l, u as i64 + 1, v1, v2);
                        assert_eq!(lhs, rhs, "interior v1={v1} v2={v2} u={u} l={l}");
                    }
                    // Boundary u < v2: r2(0,u) p(0|u) = p(0|u+1).
                    if u < v2 {
                        let r2 = rat(v2 - u, v1 + v2 - u);
                        assert_eq!(
                            r2 * p(0, u as i64, v1, v2),
                            p(0, u as i64 + 1, v1, v2),
                            "lower boundary v1={v1} v2={v2} u={u}"
                        );
                    }
                    // Boundary u < v1: r1(u,0) p(u|u) = p(u+1|u+1).
                    if u < v1 {
                        let r1 = rat(v1 - u, v1 + v2 - u);
                        assert_eq!(
                            r1 * p(u as i64, u as i64, v1, v2),
                            p(u as i64 + 1, u as i64 + 1, v1, v2),
                            "upper boundary v1={v1} v2={v2} u={u}"
                        );
                    }
                }
            }
        }
    }

    #[test]
    fn general_weights_recover_equal_q() {
        for q in [0.2, 0.5, 0.8] {
            for (v1, v2) in [(3usize, 4usize), (5, 2), (1, 6)] {
                for u in 0..v1 + v2 {
                    let table = general_q_weights(u, v1, v2, q, q).unwrap();
                    for (l, w) in &table.rows {
                        let expect = equal_q_weights(*l, u - l, v1, v2).unwrap();
                        assert!(
                            (w.r1 - expect.r1).abs() < 1e-12,
                            "v1={v1} v2={v2} u={u} l={l}: {} vs {}",
                            w.r1,
                            expect.r1
                        );
                    }
                }
            }
        }
    }

    #[test]
    fn general_weights_one_sided() {
        // v2 = 0: side 1 always.
        let table = general_q_weights(2, 5, 0, 0.3, 0.6).unwrap();
        for (_, w) in &table.rows {
            assert!((w.r1 - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn general_weights_transport_conditional_laws() {
        // Oracle: the defining property is exact transport of the split law,
        // sum_l [r1(l-1) p(l-1|u) + r2(l) p(l|u)] delta_{l} = p(l|u+1).
        for (q1, q2) in [(0.3, 0.6), (0.7, 0.2), (0.45, 0.55)] {
            for (v1, v2) in [(3usize, 3usize), (4, 2), (2, 5)] {
                for u in 0..v1 + v2 {
                    let table = match general_q_weights(u, v1, v2, q1, q2) {
                        Ok(t) => t,
                        Err(Error::Infeasible(_)) => continue, // reported, not clamped
                        Err(e) => panic!("{e}"),
                    };
                    let cur = conditional_split_law(u, v1, v2, q1, q2);
                    let next = conditional_split_law(u + 1, v1, v2, q1, q2);
                    let l1 = u.saturating_sub(v2);
                    let next_l1 = (u + 1).saturating_sub(v2);
                    let next_l2 = (u + 1).min(v1);
                    for l in next_l1..=next_l2 {
                        let mut mass = 0.0;
                        // Arriving from (l-1) via side 1.
                        if l >= 1 && l - 1 >= l1 && l - 1 <= u.min(v1) {
                            mass += table.weights_at(l - 1).unwrap().r1 * cur[l - 1 - l1];
                        }
                        // Arriving from l via side 2.
                        if l >= l1 && l <= u.min(v1) {
                            mass += table.weights_at(l).unwrap().r2 * cur[l - l1];
                        }
                        let want = next[l - next_l1];
                        assert!(
                            (mass - want).abs() < 1e-10,
                            "transport q1={q1} q2={q2} v1={v1} v2={v2} u={u} l={l}: {mass} vs {want}"
                        );
                    }
                }
            }
        }
    }

    #[test]
    fn apply_combined_respects_boundaries_and_balance() {
        let p = build_ind(0.7, 0.7).unwrap();
        let pi = stationary(&p).unwrap();
        let p1 = TripletPattern::uniform(PairState::new(1, 0));
        let p2 = TripletPattern::uniform(PairState::new(0, 1));
        let rule = WeightRule::for_model(&p, &p1, &p2).unwrap();
        assert!(matches!(rule, WeightRule::EqualQ));
        let mut rng = task_stream(203, 0);
        let z = sample_chain(&p, &pi, 300, 17).unwrap();
        let s1 = summarize(&z.states, &p1);
        let s2 = summarize(&z.states, &p2);
        let out = apply_combined(&z, &p1, &p2, &rule, &mut rng).unwrap();
        let t1 = summarize(&out.modified.states, &p1);
        let t2 = summarize(&out.modified.states, &p2);
        assert_eq!(t1.v, s1.v);
        assert_eq!(t2.v, s2.v);
        assert_eq!(t1.u + t2.u, s1.u + s2.u + 1);
        // Same endpoint pairs rejected.
        assert!(apply_combined(&z, &p1, &p1, &rule, &mut rng).is_err());
    }

    #[test]
    fn apply_combined_sides_balanced_on_equal_deficits() {
        // Hand-built sample: two eligible triplets on each side.
        let a = PairState::new(1, 0);
        let b = PairState::new(0, 1);
        let o = PairState::new(0, 0);
        let states = vec![a, o, a, a, o, a, b, o, b, b, o, b];
        let z = make_sample(states);
        let p1 = TripletPattern::uniform(a);
        let p2 = TripletPattern::uniform(b);
        let rule = WeightRule::EqualQ;
        let mut rng = task_stream(204, 0);
        let trials = 100_000;
        let mut side1 = 0usize;
        for _ in 0..trials {
            let out = apply_combined(&z, &p1, &p2, &rule, &mut rng).unwrap();
            if out.new_pair == a {
                side1 += 1;
            }
        }
        let frac = side1 as f64 / trials as f64;
        assert!((frac - 0.5).abs() < 0.006, "side-1 fraction {frac}");

        // Side 2 exhausted: side 1 always.
        let states = vec![a, o, a, b, b, b];
        let z = make_sample(states);
        for _ in 0..100 {
            let out = apply_combined(&z, &p1, &p2, &rule, &mut rng).unwrap();
            assert_eq!(out.new_pair, a);
        }
    }
}
