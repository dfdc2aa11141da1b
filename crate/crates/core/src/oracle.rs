//! Exhaustive-enumeration verification of the conditional-law identities.
//!
//! Everything here works at small `n` by iterating every positive-probability
//! sequence in lexicographic flat-index order. The main checks:
//!
//! - the transformation maps the conditional law at `(u, v)` exactly onto the
//!   law at `(u + 1, v)` (and likewise for the combined transformation);
//! - conditioning the triplet-indicator vector additionally on `U` changes
//!   nothing;
//! - the flip-a-uniform-zero kernel on conditioned Bernoulli vectors and the
//!   two binomial mixture identities behind the combined weights.
//!
//! Accumulation uses compensated summation; an exact-rational mode backs the
//! float checks for the smallest cases.

use std::collections::BTreeMap;

use num_bigint::BigInt;
use num_rational::BigRational;
use num_traits::{Signed, Zero};
use serde::{Deserialize, Serialize};

use crate::counters::{ln_binomial_pmf, q_of, summarize, TripletPattern};
use crate::error::{Error, Result};
use crate::markov::{PairState, StationaryDist, TransitionMatrix};
use crate::transform::WeightRule;

/// Default cap on the number of enumerated sequences, `(k^2)^n`.
pub const DEFAULT_ENUM_CAP: u128 = 1 << 22;

// ---------------------------------------------------------------------------
// Probability scalars
// ---------------------------------------------------------------------------

/// Arithmetic needed by the enumeration, implemented for `f64` and for exact
/// rationals.
pub trait Prob: Clone + PartialOrd {
    fn prob_zero() -> Self;
    fn prob_is_zero(&self) -> bool;
    fn from_f64(v: f64) -> Self;
    fn to_f64(&self) -> f64;
    fn add(&self, o: &Self) -> Self;
    fn sub(&self, o: &Self) -> Self;
    fn mul(&self, o: &Self) -> Self;
    fn div(&self, o: &Self) -> Self;
    fn div_count(&self, n: usize) -> Self;
    fn abs_val(&self) -> Self;
}

impl Prob for f64 {
    fn prob_zero() -> Self {
        0.0
    }
    fn prob_is_zero(&self) -> bool {
        *self == 0.0
    }
    fn from_f64(v: f64) -> Self {
        v
    }
    fn to_f64(&self) -> f64 {
        *self
    }
    fn add(&self, o: &Self) -> Self {
        self + o
    }
    fn sub(&self, o: &Self) -> Self {
        self - o
    }
    fn mul(&self, o: &Self) -> Self {
        self * o
    }
    fn div(&self, o: &Self) -> Self {
        self / o
    }
    fn div_count(&self, n: usize) -> Self {
        self / n as f64
    }
    fn abs_val(&self) -> Self {
        f64::abs(*self)
    }
}

impl Prob for BigRational {
    fn prob_zero() -> Self {
        Zero::zero()
    }
    fn prob_is_zero(&self) -> bool {
        Zero::is_zero(self)
    }
    fn from_f64(v: f64) -> Self {
        // Exact binary-rational value of the float input.
        BigRational::from_float(v).expect("finite probability")
    }
    fn to_f64(&self) -> f64 {
        let num = self.numer().to_string().parse::<f64>().unwrap_or(f64::NAN);
        let den = self.denom().to_string().parse::<f64>().unwrap_or(f64::NAN);
        num / den
    }
    fn add(&self, o: &Self) -> Self {
        self + o
    }
    fn sub(&self, o: &Self) -> Self {
        self - o
    }
    fn mul(&self, o: &Self) -> Self {
        self * o
    }
    fn div(&self, o: &Self) -> Self {
        self / o
    }
    fn div_count(&self, n: usize) -> Self {
        self / BigRational::from_integer(BigInt::from(n))
    }
    fn abs_val(&self) -> Self {
        Signed::abs(self)
    }
}

/// Compensated (Kahan) accumulator; exact types carry zero compensation.
#[derive(Clone)]
pub struct Kahan<T: Prob> {
    sum: T,
    comp: T,
}

impl<T: Prob> Kahan<T> {
    pub fn new() -> Self {
        Kahan {
            sum: T::prob_zero(),
            comp: T::prob_zero(),
        }
    }

    pub fn add(&mut self, v: &T) {
        let y = v.sub(&self.comp);
        let t = self.sum.add(&y);
        self.comp = t.sub(&self.sum).sub(&y);
        self.sum = t;
    }

    pub fn value(&self) -> T {
        self.sum.clone()
    }
}

impl<T: Prob> Default for Kahan<T> {
    fn default() -> Self {
        Self::new()
    }
}

// ---------------------------------------------------------------------------
// Enumeration core
// ---------------------------------------------------------------------------

fn check_cap(dim: usize, n: usize, cap: u128) -> Result<()> {
    let states = (dim as u128).checked_pow(n as u32).unwrap_or(u128::MAX);
    if states > cap {
        return Err(Error::CapExceeded { states, cap });
    }
    Ok(())
}

/// Visit every positive-probability sequence of length `n` in lexicographic
/// flat-index order. The visitor receives the flat states, the sequence code
/// (big-endian base `k^2`), and the path probability.
pub(crate) fn for_each_sequence<T: Prob>(
    p: &TransitionMatrix,
    pi: &StationaryDist,
    n: usize,
    visit: &mut impl FnMut(&[usize], usize, &T),
) {
    let dim = p.dim();
    let pi_t: Vec<T> = pi.probs.iter().map(|&v| T::from_f64(v)).collect();
    let trans: Vec<T> = p.entries().iter().map(|&v| T::from_f64(v)).collect();
    let mut states = vec![0usize; n];
    // Stack of (depth, state, prob) evolved depth-first.
    #[allow(clippy::too_many_arguments)]
    fn rec<T: Prob>(
        depth: usize,
        n: usize,
        dim: usize,
        code: usize,
        prob: &T,
        states: &mut Vec<usize>,
        pi_t: &[T],
        trans: &[T],
        visit: &mut impl FnMut(&[usize], usize, &T),
    ) {
        if depth == n {
            visit(states, code, prob);
            return;
        }
        let prev = if depth == 0 { None } else { Some(states[depth - 1]) };
        for s in 0..dim {
            let step = match prev {
                None => pi_t[s].clone(),
                Some(pr) => trans[pr * dim + s].clone(),
            };
            if step.prob_is_zero() {
                continue;
            }
            let next = prob.mul(&step);
            if next.prob_is_zero() {
                continue;
            }
            states[depth] = s;
            rec(
                depth + 1,
                n,
                dim,
                code * dim + s,
                &next,
                states,
                pi_t,
                trans,
                visit,
            );
        }
    }
    let one = T::from_f64(1.0);
    rec(0, n, dim, 0, &one, &mut states, &pi_t, &trans, visit);
}

fn flat_to_pairs(states: &[usize], k: usize) -> Vec<PairState> {
    states.iter().map(|&s| PairState::from_flat(s, k)).collect()
}

/// Counter values `(u, v)` straight from flat states.
fn uv_of(states: &[usize], k: usize, pattern: &TripletPattern) -> (usize, usize) {
    let pairs = flat_to_pairs(states, k);
    let s = summarize(&pairs, pattern);
    (s.u, s.v)
}

/// Total variation distance between two dense laws (each summing to ~1).
fn tv_dense<T: Prob>(a: &[T], b: &[T]) -> f64 {
    let mut acc = Kahan::<T>::new();
    for (x, y) in a.iter().zip(b.iter()) {
        acc.add(&x.sub(y).abs_val());
    }
    0.5 * acc.value().to_f64()
}

// ---------------------------------------------------------------------------
// Conditional law
// ---------------------------------------------------------------------------

/// Exact conditional law of the sequence given `(U, V) = (u, v)`.
#[derive(Debug, Clone)]
pub struct ExactLaw {
    /// `(sequence, probability)` sorted by sequence code; zero entries omitted.
    pub support: Vec<(Vec<PairState>, f64)>,
    /// Mass of the conditioning event before renormalization.
    pub normalization: f64,
}

/// Enumerate the conditional law of `Z` given `u(Z) = u`, `v(Z) = v`.
pub fn enumerate_conditional(
    p: &TransitionMatrix,
    pi: &StationaryDist,
    pattern: &TripletPattern,
    n: usize,
    u: usize,
    v: usize,
    cap: Option<u128>,
) -> Result<ExactLaw> {
    check_cap(p.dim(), n, cap.unwrap_or(DEFAULT_ENUM_CAP))?;
    let k = p.k();
    let mut support: Vec<(Vec<PairState>, f64)> = Vec::new();
    let mut total = Kahan::<f64>::new();
    for_each_sequence::<f64>(p, pi, n, &mut |states, _code, prob| {
        if uv_of(states, k, pattern) == (u, v) {
            support.push((flat_to_pairs(states, k), *prob));
            total.add(prob);
        }
    });
    let normalization = total.value();
    if normalization <= 0.0 {
        return Err(Error::EmptyCondition(format!("no mass at (u,v) = ({u},{v})")));
    }
    for (_, pr) in support.iter_mut() {
        *pr /= normalization;
    }
    Ok(ExactLaw {
        support,
        normalization,
    })
}

// ---------------------------------------------------------------------------
// Single-pattern transport check
// ---------------------------------------------------------------------------

/// Transport distance at one `(u, v)` pair.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct A3Pair {
    pub u: usize,
    pub v: usize,
    pub tv: f64,
}

/// Result of the single-pattern transport check.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct A3Report {
    pub n: usize,
    pub per_pair: Vec<A3Pair>,
    pub max_tv: f64,
}

/// Check that pushing the conditional law at `(u, v)` through the
/// transformation reproduces the law at `(u + 1, v)`, for every feasible
/// pair with `u < v`. Reports the worst total-variation distance.
pub fn verify_a3(
    p: &TransitionMatrix,
    pi: &StationaryDist,
    pattern: &TripletPattern,
    n: usize,
    cap: Option<u128>,
) -> Result<A3Report> {
    verify_a3_generic::<f64>(p, pi, pattern, n, cap)
}

/// Exact-rational variant of [`verify_a3`]: every distance must be exactly
/// zero. Practical for `k = 2`, `n <= 6`.
pub fn verify_a3_exact(
    p: &TransitionMatrix,
    pi: &StationaryDist,
    pattern: &TripletPattern,
    n: usize,
) -> Result<A3Report> {
    verify_a3_generic::<BigRational>(p, pi, pattern, n, Some(1 << 14))
}

fn verify_a3_generic<T: Prob>(
    p: &TransitionMatrix,
    pi: &StationaryDist,
    pattern: &TripletPattern,
    n: usize,
    cap: Option<u128>,
) -> Result<A3Report> {
    check_cap(p.dim(), n, cap.unwrap_or(DEFAULT_ENUM_CAP))?;
    let k = p.k();
    let dim = p.dim();
    let codes = dim.pow(n as u32);
    // Pass A: masses per (u, v).
    let mut masses: BTreeMap<(usize, usize), Kahan<T>> = BTreeMap::new();
    for_each_sequence::<T>(p, pi, n, &mut |states, _code, prob| {
        let key = uv_of(states, k, pattern);
        masses.entry(key).or_default().add(prob);
    });
    let mass_of = |key: &(usize, usize)| masses.get(key).map(|k| k.value());
    let d_flat = pattern.d.flat(k);

    let mut per_pair = Vec::new();
    let mut max_tv: f64 = 0.0;
    let keys: Vec<(usize, usize)> = masses.keys().cloned().collect();
    for (u, v) in keys {
        if u >= v {
            continue;
        }
        let source_mass = mass_of(&(u, v)).unwrap();
        let target_mass = match mass_of(&(u + 1, v)) {
            Some(m) if !m.prob_is_zero() => m,
            _ => {
                return Err(Error::EmptyCondition(format!(
                    "target law (u+1, v) = ({}, {v}) has no mass",
                    u + 1
                )))
            }
        };
        // Pass B: dense pushforward and target for this pair.
        let mut pushed = vec![T::prob_zero(); codes];
        let mut target = vec![T::prob_zero(); codes];
        for_each_sequence::<T>(p, pi, n, &mut |states, code, prob| {
            let key = uv_of(states, k, pattern);
            if key == (u, v) {
                let pairs = flat_to_pairs(states, k);
                let s = summarize(&pairs, pattern);
                let eligible: Vec<usize> = s
                    .positions
                    .iter()
                    .zip(&s.b_vec)
                    .filter(|(_, &b)| !b)
                    .map(|(&i, _)| i)
                    .collect();
                let w = prob.div(&source_mass).div_count(eligible.len());
                for i in eligible {
                    let pos = 3 * i + 1;
                    let shift = dim.pow((n - 1 - pos) as u32) as isize;
                    let new_code =
                        (code as isize + (d_flat as isize - states[pos] as isize) * shift) as usize;
                    pushed[new_code] = pushed[new_code].add(&w);
                }
            } else if key == (u + 1, v) {
                target[code] = target[code].add(&prob.div(&target_mass));
            }
        });
        let tv = tv_dense(&pushed, &target);
        max_tv = max_tv.max(tv);
        per_pair.push(A3Pair { u, v, tv });
    }
    Ok(A3Report {
        n,
        per_pair,
        max_tv,
    })
}

// ---------------------------------------------------------------------------
// Conditional-independence check for the indicator vector
// ---------------------------------------------------------------------------

/// Result of the indicator-vector conditional-independence check.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct UvReport {
    pub n: usize,
    pub cases: usize,
    pub max_abs_diff: f64,
}

/// Check `P(eta = a | V = v, U = u) = P(eta = a | V = v)` for all feasible
/// `(a, u)`, where `eta` is the per-triplet match indicator vector.
pub fn verify_uv_conditional_independence(
    p: &TransitionMatrix,
    pi: &StationaryDist,
    pattern: &TripletPattern,
    n: usize,
    cap: Option<u128>,
) -> Result<UvReport> {
    check_cap(p.dim(), n, cap.unwrap_or(DEFAULT_ENUM_CAP))?;
    let k = p.k();
    let mut mass_eta_u: BTreeMap<(u32, usize), Kahan<f64>> = BTreeMap::new();
    let mut mass_eta: BTreeMap<u32, Kahan<f64>> = BTreeMap::new();
    let mut mass_v_u: BTreeMap<(usize, usize), Kahan<f64>> = BTreeMap::new();
    let mut mass_v: BTreeMap<usize, Kahan<f64>> = BTreeMap::new();
    for_each_sequence::<f64>(p, pi, n, &mut |states, _code, prob| {
        let pairs = flat_to_pairs(states, k);
        let s = summarize(&pairs, pattern);
        let eta: u32 = s
            .n_vec
            .iter()
            .enumerate()
            .filter(|(_, &b)| b)
            .map(|(i, _)| 1u32 << i)
            .sum();
        mass_eta_u.entry((eta, s.u)).or_default().add(prob);
        mass_eta.entry(eta).or_default().add(prob);
        mass_v_u.entry((s.v, s.u)).or_default().add(prob);
        mass_v.entry(s.v).or_default().add(prob);
    });
    let mut max_abs_diff: f64 = 0.0;
    let mut cases = 0;
    for ((eta, u), m) in &mass_eta_u {
        let v = eta.count_ones() as usize;
        let lhs = m.value() / mass_v_u[&(v, *u)].value();
        let rhs = mass_eta[eta].value() / mass_v[&v].value();
        max_abs_diff = max_abs_diff.max((lhs - rhs).abs());
        cases += 1;
    }
    Ok(UvReport {
        n,
        cases,
        max_abs_diff,
    })
}

// ---------------------------------------------------------------------------
// Bernoulli flip proposition
// ---------------------------------------------------------------------------

/// Result of the flip-a-uniform-zero kernel check on Bernoulli vectors.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct BernoulliReport {
    pub m: usize,
    pub p: f64,
    /// Worst deviation of any conditional sequence probability from the
    /// uniform value `1 / C(m, u)`.
    pub max_uniform_dev: f64,
    /// Worst transport distance over all `u < m`.
    pub max_tv: f64,
}

/// Exhaustively check that, for iid Bernoulli(`p`) vectors conditioned on
/// their sum, flipping a uniformly chosen zero to one maps the conditional
/// law at `u` onto the conditional law at `u + 1`, and that both laws are
/// uniform over their supports.
pub fn verify_bernoulli_proposition(m: usize, p: f64) -> Result<BernoulliReport> {
    if m > 16 {
        return Err(Error::CapExceeded {
            states: 1u128 << m,
            cap: 1 << 16,
        });
    }
    if !(0.0..=1.0).contains(&p) || p == 0.0 || p == 1.0 {
        return Err(Error::Domain(format!("p must lie in (0,1), got {p}")));
    }
    let codes = 1usize << m;
    let prob_of = |z: usize| -> f64 {
        let ones = z.count_ones() as i32;
        p.powi(ones) * (1.0 - p).powi(m as i32 - ones)
    };
    let mut mass_u = vec![0.0f64; m + 1];
    for z in 0..codes {
        mass_u[z.count_ones() as usize] += prob_of(z);
    }
    let mut max_uniform_dev: f64 = 0.0;
    let mut max_tv: f64 = 0.0;
    for u in 0..=m {
        let comb = (0..u).fold(1.0f64, |acc, i| acc * (m - i) as f64 / (i + 1) as f64);
        let uniform = 1.0 / comb;
        for z in 0..codes {
            if z.count_ones() as usize == u {
                let cond = prob_of(z) / mass_u[u];
                max_uniform_dev = max_uniform_dev.max((cond - uniform).abs());
            }
        }
        if u == m {
            continue;
        }
        // Push the conditional law at u through the flip kernel.
        let mut pushed = vec![0.0f64; codes];
        for z in 0..codes {
            if z.count_ones() as usize != u {
                continue;
            }
            let w = prob_of(z) / mass_u[u];
            let zeros: Vec<usize> = (0..m).filter(|i| z >> i & 1 == 0).collect();
            for i in &zeros {
                pushed[z | (1 << i)] += w / zeros.len() as f64;
            }
        }
        let mut tv = 0.0;
        for (z, &pz) in pushed.iter().enumerate() {
            let target = if z.count_ones() as usize == u + 1 {
                prob_of(z) / mass_u[u + 1]
            } else {
                0.0
            };
            tv += (pz - target).abs();
        }
        max_tv = max_tv.max(0.5 * tv);
    }
    Ok(BernoulliReport {
        m,
        p,
        max_uniform_dev,
        max_tv,
    })
}

// ---------------------------------------------------------------------------
// Binomial mixture identities
// ---------------------------------------------------------------------------

/// Residuals of the two binomial mixture identities.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct BinomialIdentityReport {
    pub v1: usize,
    pub v2: usize,
    pub q: f64,
    pub cases: usize,
    /// Exact-arithmetic residual (hypergeometric route); zero when the
    /// identities hold.
    pub max_exact_residual: f64,
    /// Float residual of the `q`-weighted binomial route.
    pub max_float_residual: f64,
}

fn big_binom(n: usize, k: usize) -> BigRational {
    if k > n {
        return BigRational::zero();
    }
    let mut v = BigRational::from_integer(BigInt::from(1));
    for i in 0..k {
        v *= BigRational::new(BigInt::from(n - i), BigInt::from(i + 1));
    }
    v
}

/// Check both displayed mixture identities for independent `B(v1, q)` and
/// `B(v2, q)` counts, for every admissible `(u, l)`: exactly (hypergeometric
/// conditionals, rational arithmetic) and numerically through the
/// `q`-weighted binomial pmfs.
pub fn verify_binomial_identity(v1: usize, v2: usize, q: f64) -> Result<BinomialIdentityReport> {
    if v1 + v2 > 40 {
        return Err(Error::CapExceeded {
            states: (v1 + v2) as u128,
            cap: 40,
        });
    }
    if !(0.0..=1.0).contains(&q) {
        return Err(Error::Domain(format!("q must lie in [0,1], got {q}")));
    }
    // Conditional P(X = l | X + Y = u): hypergeometric, q-free.
    let exact = |l: i64, u: i64| -> BigRational {
        if l < 0 || l > u {
            return BigRational::zero();
        }
        let (l, u) = (l as usize, u as usize);
        if l > v1 || u - l > v2 {
            return BigRational::zero();
        }
        big_binom(v1, l) * big_binom(v2, u - l) / big_binom(v1 + v2, u)
    };
    // Same conditional from q-weighted binomial pmfs (degenerate q handled
    // by the exact route only).
    let float = |l: i64, u: i64| -> f64 {
        if l < 0 || l > u || q == 0.0 || q == 1.0 {
            return f64::NAN;
        }
        let (l, u) = (l as usize, u as usize);
        if l > v1 || u - l > v2 {
            return 0.0;
        }
        let l1 = u.saturating_sub(v2);
        let l2 = u.min(v1);
        let num = (ln_binomial_pmf(v1 as u64, l as u64, q)
            + ln_binomial_pmf(v2 as u64, (u - l) as u64, q))
        .exp();
        let den: f64 = (l1..=l2)
            .map(|j| {
                (ln_binomial_pmf(v1 as u64, j as u64, q)
                    + ln_binomial_pmf(v2 as u64, (u - j) as u64, q))
                .exp()
            })
            .sum();
        num / den
    };
    let rat = |num: usize, den: usize| BigRational::new(BigInt::from(num), BigInt::from(den));
    let mut cases = 0;
    let mut max_exact = BigRational::zero();
    let mut max_float: f64 = 0.0;
    for u in 0..v1 + v2 {
        let l1 = u.saturating_sub(v2) as i64;
        let l2 = u.min(v1) as i64;
        for l in l1 + 1..=l2 {
            // Interior identity.
            let w1 = rat(v1 - (l - 1) as usize, v1 + v2 - u);
            let w2 = rat(v2 - (u as i64 - l) as usize, v1 + v2 - u);
            let resid = (w1.clone() * exact(l - 1, u as i64) + w2.clone() * exact(l, u as i64)
                - exact(l, u as i64 + 1))
            .abs();
            if resid > max_exact {
                max_exact = resid;
            }
            if q > 0.0 && q < 1.0 {
                let f = (w1.to_f64() * float(l - 1, u as i64) + w2.to_f64() * float(l, u as i64)
                    - float(l, u as i64 + 1))
                .abs();
                max_float = max_float.max(f);
            }
            cases += 1;
        }
        if u < v2 {
            // Boundary identity at l = 0.
            let w2 = rat(v2 - u, v1 + v2 - u);
            let resid =
                (w2.clone() * exact(0, u as i64) - exact(0, u as i64 + 1)).abs();
            if resid > max_exact {
                max_exact = resid;
            }
            if q > 0.0 && q < 1.0 {
                let f = (w2.to_f64() * float(0, u as i64) - float(0, u as i64 + 1)).abs();
                max_float = max_float.max(f);
            }
            cases += 1;
        }
    }
    Ok(BinomialIdentityReport {
        v1,
        v2,
        q,
        cases,
        max_exact_residual: max_exact.to_f64(),
        max_float_residual: max_float,
    })
}

// ---------------------------------------------------------------------------
// Combined transport check
// ---------------------------------------------------------------------------

/// Transport distance at one `(u, v1, v2)` triple.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct CombinedA3Triple {
    pub u: usize,
    pub v1: usize,
    pub v2: usize,
    pub tv: f64,
}

/// Result of the combined-transformation transport check.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CombinedA3Report {
    pub n: usize,
    pub equal_q: bool,
    pub per_triple: Vec<CombinedA3Triple>,
    pub max_tv: f64,
}

/// Check the transport property of the combined transformation: pushing the
/// law conditioned on `(U1 + U2, V1, V2) = (u, v1, v2)` through the
/// side-weighted kernel reproduces the law at `(u + 1, v1, v2)`.
pub fn verify_combined_a3(
    p: &TransitionMatrix,
    pi: &StationaryDist,
    pattern1: &TripletPattern,
    pattern2: &TripletPattern,
    n: usize,
    cap: Option<u128>,
) -> Result<CombinedA3Report> {
    if pattern1.a == pattern2.a && pattern1.b == pattern2.b {
        return Err(Error::Domain(
            "combined patterns must have distinct endpoint pairs".into(),
        ));
    }
    check_cap(p.dim(), n, cap.unwrap_or(DEFAULT_ENUM_CAP))?;
    let k = p.k();
    let dim = p.dim();
    let codes = dim.pow(n as u32);
    let q1 = q_of(p, pattern1)?;
    let q2 = q_of(p, pattern2)?;
    let equal_q = (q1 - q2).abs() <= 1e-12;
    let rule = if equal_q {
        WeightRule::EqualQ
    } else {
        WeightRule::GeneralQ { q1, q2 }
    };

    let counters = |states: &[usize]| -> (usize, usize, usize, usize) {
        let pairs = flat_to_pairs(states, k);
        let s1 = summarize(&pairs, pattern1);
        let s2 = summarize(&pairs, pattern2);
        (s1.u, s2.u, s1.v, s2.v)
    };

    // Pass A: masses per (u, v1, v2).
    let mut masses: BTreeMap<(usize, usize, usize), Kahan<f64>> = BTreeMap::new();
    for_each_sequence::<f64>(p, pi, n, &mut |states, _code, prob| {
        let (u1, u2, v1, v2) = counters(states);
        masses.entry((u1 + u2, v1, v2)).or_default().add(prob);
    });

    let d1 = pattern1.d.flat(k);
    let d2 = pattern2.d.flat(k);
    let mut per_triple = Vec::new();
    let mut max_tv: f64 = 0.0;
    let keys: Vec<(usize, usize, usize)> = masses.keys().cloned().collect();
    for (u, v1, v2) in keys {
        if u >= v1 + v2 {
            continue;
        }
        let source_mass = masses[&(u, v1, v2)].value();
        let target_mass = match masses.get(&(u + 1, v1, v2)) {
            Some(m) if m.value() > 0.0 => m.value(),
            _ => {
                return Err(Error::EmptyCondition(format!(
                    "target law ({}, {v1}, {v2}) has no mass",
                    u + 1
                )))
            }
        };
        let mut pushed = vec![0.0f64; codes];
        let mut target = vec![0.0f64; codes];
        let mut rule_failure: Option<Error> = None;
        for_each_sequence::<f64>(p, pi, n, &mut |states, code, prob| {
            if rule_failure.is_some() {
                return;
            }
            let (u1, u2, w1, w2) = counters(states);
            if (u1 + u2, w1, w2) == (u, v1, v2) {
                let weights = match rule.weights(u1, u2, v1, v2) {
                    Ok(w) => w,
                    Err(e) => {
                        rule_failure = Some(e);
                        return;
                    }
                };
                let pairs = flat_to_pairs(states, k);
                let base = prob / source_mass;
                for (pattern, d_flat, r, deficit) in [
                    (pattern1, d1, weights.r1, w1 - u1),
                    (pattern2, d2, weights.r2, w2 - u2),
                ] {
                    if deficit == 0 || r == 0.0 {
                        continue;
                    }
                    let s = summarize(&pairs, pattern);
                    let share = base * r / deficit as f64;
                    for (i, _) in s
                        .positions
                        .iter()
                        .zip(&s.b_vec)
                        .filter(|(_, &b)| !b)
                        .map(|(&i, _)| (i, ()))
                    {
                        let pos = 3 * i + 1;
                        let shift = dim.pow((n - 1 - pos) as u32) as isize;
                        let new_code = (code as isize
                            + (d_flat as isize - states[pos] as isize) * shift)
                            as usize;
                        pushed[new_code] += share;
                    }
                }
            } else if (u1 + u2, w1, w2) == (u + 1, v1, v2) {
                target[code] += prob / target_mass;
            }
        });
        if let Some(e) = rule_failure {
            return Err(e);
        }
        let tv = tv_dense(&pushed, &target);
        max_tv = max_tv.max(tv);
        per_triple.push(CombinedA3Triple { u, v1, v2, tv });
    }
    Ok(CombinedA3Report {
        n,
        equal_q,
        per_triple,
        max_tv,
    })
}
