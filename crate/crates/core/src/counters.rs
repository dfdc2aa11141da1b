//! Triplet counters and bound constants.
//!
//! The chain is cut into consecutive non-overlapping triplets. For a pattern
//! `(A, B, D)`, `V` counts triplets whose endpoints are `(A, B)` and `U`
//! counts, among those, the ones whose middle state is `D`. Conditionally on
//! `V = v` the count `U` is `Binomial(v, q)` with `q` the conditional middle
//! probability. These counters drive both the moment lower bound (through
//! `alpha`, `b(q)`, and the binomial local limit bound) and the empirical
//! tail checks (through the Markov-chain Hoeffding inequality on the triplet
//! chain).

use serde::{Deserialize, Serialize};
use statrs::function::gamma::{gamma, gamma_ur, ln_gamma};

use crate::alignment::{delta_max, ScoringScheme};
use crate::error::{Error, Result};
use crate::markov::{mixing_time_bound, stationary, PairState, StationaryDist, TransitionMatrix};

/// Triplet pattern: endpoint states `(A, B)` and target middle state `D`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct TripletPattern {
    pub a: PairState,
    pub b: PairState,
    pub d: PairState,
}

impl TripletPattern {
    pub const fn new(a: PairState, b: PairState, d: PairState) -> Self {
        TripletPattern { a, b, d }
    }

    /// The single-state pattern `A = B = D`.
    pub const fn uniform(s: PairState) -> Self {
        TripletPattern { a: s, b: s, d: s }
    }
}

/// Counter summary of one realization.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CounterSummary {
    /// Indicator per triplet: endpoints match `(A, B)`.
    pub n_vec: Vec<bool>,
    /// Number of matched triplets.
    pub v: usize,
    /// Indicator per matched triplet: middle equals `D`.
    pub b_vec: Vec<bool>,
    /// Number of matched triplets with middle `D`.
    pub u: usize,
    /// 0-based triplet indices of the matched triplets, increasing.
    pub positions: Vec<usize>,
}

/// Count matched triplets and `D`-middles of `states` under `pattern`.
///
/// Triplet `i` (0-based) covers positions `3i, 3i+1, 3i+2`; a trailing
/// remainder of length `n mod 3` belongs to no triplet.
pub fn summarize(states: &[PairState], pattern: &TripletPattern) -> CounterSummary {
    let m = states.len() / 3;
    let mut n_vec = Vec::with_capacity(m);
    let mut positions = Vec::new();
    let mut b_vec = Vec::new();
    for i in 0..m {
        let matched = states[3 * i] == pattern.a && states[3 * i + 2] == pattern.b;
        n_vec.push(matched);
        if matched {
            positions.push(i);
            b_vec.push(states[3 * i + 1] == pattern.d);
        }
    }
    let v = positions.len();
    let u = b_vec.iter().filter(|&&b| b).count();
    CounterSummary {
        n_vec,
        v,
        b_vec,
        u,
        positions,
    }
}

/// Conditional probability of the middle being `D` inside a matched triplet:
/// `q = p_AD p_DB / (P^2)_AB`.
pub fn q_of(p: &TransitionMatrix, pattern: &TripletPattern) -> Result<f64> {
    let k = p.k();
    let a = pattern.a.flat(k);
    let b = pattern.b.flat(k);
    let d = pattern.d.flat(k);
    let denom = p.two_step(a, b);
    if denom <= 0.0 {
        return Err(Error::PatternInfeasible(format!(
            "(P^2)_({},{}) = 0",
            pattern.a, pattern.b
        )));
    }
    Ok(p.get(a, d) * p.get(d, b) / denom)
}

/// The density constant `alpha = P(Z_1 = A, Z_3 = B) / 3` and its finite-`n`
/// version `alpha_n = E V / n`.
pub fn alpha_of(
    p: &TransitionMatrix,
    pi: &StationaryDist,
    pattern: &TripletPattern,
    n: usize,
) -> Result<(f64, f64)> {
    let k = p.k();
    let a = pattern.a.flat(k);
    let b = pattern.b.flat(k);
    let prob_ab = pi.probs[a] * p.two_step(a, b);
    if prob_ab <= 0.0 {
        return Err(Error::PatternInfeasible(format!(
            "P(Z1 = {}, Z3 = {}) = 0",
            pattern.a, pattern.b
        )));
    }
    let alpha = prob_ab / 3.0;
    let ev = (n / 3) as f64 * 3.0 * alpha;
    let alpha_n = if n == 0 { 0.0 } else { ev / n as f64 };
    Ok((alpha, alpha_n))
}

/// The local-limit constant `b(beta, q) = sqrt(2 pi q (1-q)) exp(beta^2 / (2 q (1-q)))`.
///
/// Diverges as `q` approaches 0 or 1; the overflow to infinity is returned
/// as-is for the caller to flag.
pub fn b_of_q(q: f64, beta: f64) -> Result<f64> {
    if q <= 0.0 || q >= 1.0 {
        return Err(Error::Domain(format!("b(q) requires q in (0,1), got {q}")));
    }
    let w = q * (1.0 - q);
    Ok((2.0 * std::f64::consts::PI * w).sqrt() * (beta * beta / (2.0 * w)).exp())
}

/// Exact log-space binomial pmf `ln P(X = i)` for `X ~ B(m, p)`.
pub fn ln_binomial_pmf(m: u64, i: u64, p: f64) -> f64 {
    let (mf, i_f) = (m as f64, i as f64);
    ln_gamma(mf + 1.0) - ln_gamma(i_f + 1.0) - ln_gamma(mf - i_f + 1.0)
        + i_f * p.ln()
        + (mf - i_f) * (1.0 - p).ln()
}

/// Result of a local-limit window check.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct CltCheck {
    pub holds: bool,
    /// Window integer minimizing the margin.
    pub worst_i: u64,
    /// `min_i ln pmf(i) - ln(1 / (b sqrt(m)))`; nonnegative iff the bound holds.
    pub log_margin: f64,
}

/// Check `P(X = i) >= 1 / (b sqrt(m))` for every integer `i` in the window
/// `[m p - beta sqrt(m), m p + beta sqrt(m)]`, with the exact pmf evaluated
/// in log space.
pub fn local_clt_check(m: u64, p: f64, beta: f64, b: f64) -> CltCheck {
    let mf = m as f64;
    let lo = (mf * p - beta * mf.sqrt()).ceil().max(0.0) as u64;
    let hi = ((mf * p + beta * mf.sqrt()).floor() as u64).min(m);
    let threshold = -(b.ln()) - 0.5 * mf.ln();
    let mut worst_i = lo;
    let mut worst = f64::INFINITY;
    for i in lo..=hi {
        let margin = ln_binomial_pmf(m, i, p) - threshold;
        if margin < worst {
            worst = margin;
            worst_i = i;
        }
    }
    if lo > hi {
        // Empty window: vacuous.
        return CltCheck {
            holds: true,
            worst_i: lo,
            log_margin: f64::INFINITY,
        };
    }
    CltCheck {
        holds: worst >= 0.0,
        worst_i,
        log_margin: worst,
    }
}

/// Smallest `m_o` in `[m_min, m_max]` such that [`local_clt_check`] holds for
/// every `m in [m_o, m_max]`, or `None` if even `m_max` fails.
pub fn clt_threshold_sweep(p: f64, beta: f64, b: f64, m_min: u64, m_max: u64) -> Option<u64> {
    let mut m_o = None;
    for m in (m_min..=m_max).rev() {
        if local_clt_check(m, p, beta, b).holds {
            m_o = Some(m);
        } else {
            break;
        }
    }
    m_o
}

/// Hoeffding inequality for uniformly ergodic Markov chains:
/// bound on `P(S_m - E S_m > m eps)` for a function with sup-norm `fnorm`,
/// Doeblin lag `r`, and minorization constant `lambda`.
pub fn hoeffding_mc_bound(m: u64, eps: f64, lambda: f64, r: u64, fnorm: f64) -> Result<f64> {
    if lambda <= 0.0 || eps <= 0.0 || fnorm <= 0.0 {
        return Err(Error::Domain(
            "hoeffding_mc_bound requires positive eps, lambda, fnorm".into(),
        ));
    }
    let (mf, rf) = (m as f64, r as f64);
    if mf <= 2.0 * rf * fnorm / (lambda * eps) {
        return Err(Error::PreconditionViolated(format!(
            "m = {m} must exceed 2 r fnorm / (lambda eps) = {}",
            2.0 * rf * fnorm / (lambda * eps)
        )));
    }
    let core = mf * eps - 2.0 * rf * fnorm / lambda;
    Ok((-(lambda * lambda * core * core) / (2.0 * mf * fnorm * fnorm * rf * rf)).exp())
}

/// Smallest `K` with `exp(-(3/8)(lambda/r)^2 K^2) < (1 - b_o)/2`, plus a
/// `1e-9` margin to clear the strict inequality.
pub fn choose_k(lambda: f64, r: u64, b_o: f64) -> Result<f64> {
    if !(0.0..1.0).contains(&b_o) || b_o == 0.0 {
        return Err(Error::Domain(format!("b_o must lie in (0,1), got {b_o}")));
    }
    if lambda <= 0.0 {
        return Err(Error::Domain("lambda must be positive".into()));
    }
    let target = (2.0 / (1.0 - b_o)).ln();
    Ok((r as f64 / lambda) * (8.0 / 3.0 * target).sqrt() + 1e-9)
}

// ---------------------------------------------------------------------------
// Triplet chain (Doeblin constants)
// ---------------------------------------------------------------------------

/// Doeblin-type minorization data of the non-overlapping triplet chain.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TripletChainInfo {
    /// Number of positive-probability triplet states.
    pub states: usize,
    /// Smallest lag with strictly positive transition probabilities.
    pub r: u64,
    /// `min_{x,y} P(xi_{1+r} = y | xi_1 = x) * |X|`.
    pub lambda: f64,
    /// `lambda <= 1` must hold; recorded for the report.
    pub lambda_valid: bool,
}

/// Build the triplet-chain state space (triplets of positive stationary
/// probability) and compute `(r, lambda)` for the Hoeffding bound.
pub fn triplet_chain_info(p: &TransitionMatrix, pi: &StationaryDist) -> Result<TripletChainInfo> {
    let dim = p.dim();
    let mut space = Vec::new();
    for a in 0..dim {
        if pi.probs[a] <= 0.0 {
            continue;
        }
        for b in 0..dim {
            if p.get(a, b) <= 0.0 {
                continue;
            }
            for c in 0..dim {
                if p.get(b, c) > 0.0 {
                    space.push((a, b, c));
                }
            }
        }
    }
    let ns = space.len();
    if ns == 0 {
        return Err(Error::PatternInfeasible(
            "no positive-probability triplets".into(),
        ));
    }
    // Transition operator of the triplet chain restricted to the space.
    let mut t = vec![0.0; ns * ns];
    for (i, &(_, _, c)) in space.iter().enumerate() {
        for (j, &(d, e, f)) in space.iter().enumerate() {
            t[i * ns + j] = p.get(c, d) * p.get(d, e) * p.get(e, f);
        }
    }
    // Power until strictly positive.
    let cap = (ns * ns).max(64);
    let mut power = t.clone();
    let mut r = 1usize;
    loop {
        let min = power.iter().cloned().fold(f64::INFINITY, f64::min);
        if min > 0.0 {
            let lambda = min * ns as f64;
            return Ok(TripletChainInfo {
                states: ns,
                r: r as u64,
                lambda,
                lambda_valid: lambda <= 1.0 + 1e-12,
            });
        }
        if r >= cap {
            return Err(Error::NotPrimitive {
                label: format!("triplet chain of `{}`", p.label()),
                cap,
            });
        }
        // power <- power * t
        let mut next = vec![0.0; ns * ns];
        for i in 0..ns {
            for l in 0..ns {
                let a = power[i * ns + l];
                if a == 0.0 {
                    continue;
                }
                for j in 0..ns {
                    next[i * ns + j] += a * t[l * ns + j];
                }
            }
        }
        power = next;
        r += 1;
    }
}

// ---------------------------------------------------------------------------
// Bound reports
// ---------------------------------------------------------------------------

/// Constants of the moment lower/upper bounds for one model and pattern.
///
/// Fields not produced by the requested computation stay `None`; the CLI
/// merges the lower and upper halves into one report.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct BoundReport {
    pub n: usize,
    pub r_moment: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub q: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub alpha: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub alpha_n: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub b_q: Option<f64>,
    /// Band half-width constant from [`choose_k`] at `b_o = 0.9`.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub k_band: Option<f64>,
    /// `phi(n) = 1 / (b(q) sqrt(n))`.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub phi_n: Option<f64>,
    /// `c = sqrt(2 alpha) / b(q)`.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub c: Option<f64>,
    /// Admissible constant just below `c / 8`.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub c_o: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub xi_states: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub lambda: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub lambda_valid: Option<bool>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub r_doeblin: Option<u64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub eps_o: Option<f64>,
    /// `c_o (eps_o sqrt(2 alpha) / 16)^r n^{r/2}`.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub moment_lower_bound: Option<f64>,
    /// Variance slope `a_o = 2 c_o alpha eps_o^2 / 256` (the `r = 2` case).
    #[serde(skip_serializing_if = "Option::is_none")]
    pub a_o: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub delta: Option<f64>,
    /// Primitivity lag of the pair chain.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub m_primitivity: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub p_o: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub t_mix: Option<f64>,
    /// `F = 32 Delta^2 t_mix`.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub f_const: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub c_r: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub d_r: Option<f64>,
}

impl BoundReport {
    /// Overlay the populated fields of `other` onto `self`.
    pub fn merge(mut self, other: BoundReport) -> BoundReport {
        macro_rules! take {
            ($($f:ident),*) => {$( if other.$f.is_some() { self.$f = other.$f; } )*};
        }
        take!(
            q, alpha, alpha_n, b_q, k_band, phi_n, c, c_o, xi_states, lambda, lambda_valid,
            r_doeblin, eps_o, moment_lower_bound, a_o, delta, m_primitivity, p_o, t_mix, f_const,
            c_r, d_r
        );
        self
    }
}

/// Lower-bound constants for one model/pattern at moment order `r_moment`.
///
/// `eps_o` is the measured transformation gain; it is an input, never
/// assumed. `c_o` is fixed just below its admissible supremum `c / 8`.
pub fn lower_bound_report(
    p: &TransitionMatrix,
    pattern: &TripletPattern,
    eps_o: f64,
    r_moment: f64,
    n: usize,
) -> Result<BoundReport> {
    if eps_o < 0.0 {
        return Err(Error::Domain(format!("eps_o must be >= 0, got {eps_o}")));
    }
    let pi = stationary(p)?;
    let q = q_of(p, pattern)?;
    if q <= 0.0 {
        return Err(Error::PatternInfeasible("pattern requires q > 0".into()));
    }
    let (alpha, alpha_n) = alpha_of(p, &pi, pattern, n)?;
    debug_assert!(q <= 1.0 && alpha <= 1.0 / 3.0 + 1e-15);
    let b_q = b_of_q(q, 1.0)?;
    let c = (2.0 * alpha).sqrt() / b_q;
    let c_o = c / 8.0 * (1.0 - 1e-6);
    let phi_n = 1.0 / (b_q * (n as f64).sqrt());
    let info = triplet_chain_info(p, &pi)?;
    let k_band = choose_k(info.lambda, info.r, 0.9)?;
    let moment = c_o * (eps_o * (2.0 * alpha).sqrt() / 16.0).powf(r_moment)
        * (n as f64).powf(r_moment / 2.0);
    let a_o = 2.0 * c_o * alpha * eps_o * eps_o / 256.0;
    Ok(BoundReport {
        n,
        r_moment,
        q: Some(q),
        alpha: Some(alpha),
        alpha_n: Some(alpha_n),
        b_q: Some(b_q),
        k_band: Some(k_band),
        phi_n: Some(phi_n),
        c: Some(c),
        c_o: Some(c_o),
        xi_states: Some(info.states),
        lambda: Some(info.lambda),
        lambda_valid: Some(info.lambda_valid),
        r_doeblin: Some(info.r),
        eps_o: Some(eps_o),
        moment_lower_bound: Some(moment),
        a_o: Some(a_o),
        ..BoundReport::default()
    })
}

/// `int_{ln 2}^{inf} e^{-u} u^{r/2 - 1} du` by adaptive Simpson quadrature,
/// cross-checked against the upper incomplete gamma function.
pub fn tail_integral(r: f64) -> Result<f64> {
    let a = (2.0f64).ln();
    let g = |u: f64| (-u).exp() * u.powf(r / 2.0 - 1.0);
    // Truncate where the integrand is below 1e-18 of its scale.
    let hi = 60.0f64.max(a + 10.0);
    let quad = adaptive_simpson(&g, a, hi, 1e-12, 40);
    let reference = gamma_ur(r / 2.0, a) * gamma(r / 2.0);
    if (quad - reference).abs() > 1e-10 * reference.max(1.0) {
        return Err(Error::Numerical(format!(
            "tail integral mismatch: quadrature {quad} vs incomplete gamma {reference}"
        )));
    }
    Ok(quad)
}

fn adaptive_simpson(g: &impl Fn(f64) -> f64, a: f64, b: f64, tol: f64, depth: u32) -> f64 {
    fn simpson(g: &impl Fn(f64) -> f64, a: f64, b: f64) -> f64 {
        let m = 0.5 * (a + b);
        (b - a) / 6.0 * (g(a) + 4.0 * g(m) + g(b))
    }
    fn rec(
        g: &impl Fn(f64) -> f64,
        a: f64,
        b: f64,
        whole: f64,
        tol: f64,
        depth: u32,
    ) -> f64 {
        let m = 0.5 * (a + b);
        let left = simpson(g, a, m);
        let right = simpson(g, m, b);
        if depth == 0 || (left + right - whole).abs() <= 15.0 * tol {
            left + right + (left + right - whole) / 15.0
        } else {
            rec(g, a, m, left, tol / 2.0, depth - 1) + rec(g, m, b, right, tol / 2.0, depth - 1)
        }
    }
    rec(g, a, b, simpson(g, a, b), tol, depth)
}

/// Upper-bound constants: `Delta`, the mixing bound, `F = 32 Delta^2 t_mix`,
/// and the moment constants `C(r) <= D(r)`.
pub fn upper_bound_report(
    p: &TransitionMatrix,
    scheme: &ScoringScheme,
    r_moment: f64,
    n: usize,
) -> Result<BoundReport> {
    if r_moment < 1.0 {
        return Err(Error::Domain(format!(
            "moment order must be >= 1, got {r_moment}"
        )));
    }
    let delta = delta_max(scheme);
    let mix = mixing_time_bound(p, 0.25)?;
    let f_const = 32.0 * delta * delta * mix.t_mix;
    let r = r_moment;
    let (c_r, d_r) = if f_const == 0.0 {
        (0.0, 0.0)
    } else {
        let integral = tail_integral(r)?;
        let c_r = f_const.powf(r / 2.0) * ((2.0f64).ln().powf(r / 2.0) + r * integral);
        let d_r = r * f_const.powf(r / 2.0) * gamma(r / 2.0);
        (c_r, d_r)
    };
    Ok(BoundReport {
        n,
        r_moment,
        delta: Some(delta),
        m_primitivity: Some(mix.m),
        p_o: Some(mix.p_o),
        t_mix: Some(mix.t_mix),
        f_const: Some(f_const),
        c_r: Some(c_r),
        d_r: Some(d_r),
        ..BoundReport::default()
    })
}
