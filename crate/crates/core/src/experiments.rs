//! Simulation protocols: transformation-gain curves, variance scans, and
//! concentration tail checks.
//!
//! All runs derive per-task streams from `(master seed, task index)` and
//! collect results in task order, so outputs are identical across worker
//! counts and reruns. The gain statistic `E(m)` for a chain prefix of `m`
//! triplets is the deterministic conditional expectation of the score change
//! of the transformation (a plain average over the eligible triplets), so
//! rerunning with the same chain reproduces the records exactly.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::alignment::{lcs, score, LcsEngine, ScoringScheme};
use crate::counters::{
    alpha_of, choose_k, hoeffding_mc_bound, q_of, summarize, triplet_chain_info, upper_bound_report,
    TripletPattern,
};
use crate::error::{Error, Result};
use crate::markov::{display_order, sample_chain_with_stream, StationaryDist, TransitionMatrix};
use crate::rng::task_stream;

/// Grid of prefix triplet counts.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct MGrid {
    pub start: usize,
    pub stop: usize,
    pub step: usize,
}

impl MGrid {
    pub fn values(&self) -> impl Iterator<Item = usize> + '_ {
        (self.start..=self.stop).step_by(self.step)
    }

    fn validate(&self) -> Result<()> {
        if self.step == 0 || self.start == 0 || self.stop < self.start {
            return Err(Error::ConstraintViolation {
                parameter: "m_grid".into(),
                detail: format!("invalid grid {self:?}"),
            });
        }
        Ok(())
    }
}

/// Configuration of a transformation-gain run.
#[derive(Debug, Clone)]
pub struct EmConfig {
    pub matrix: TransitionMatrix,
    pub pattern: TripletPattern,
    /// Second pattern for the combined transformation.
    pub pattern2: Option<TripletPattern>,
    pub grid: MGrid,
    pub n_chains: usize,
    pub master_seed: u64,
    pub scheme: ScoringScheme,
}

/// One grid point of a gain curve. `j_count` is the number of eligible
/// triplets (both sides pooled for combined runs); `e_m` their mean score
/// change.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EmRecord {
    pub chain_id: usize,
    pub m: usize,
    pub j_count: usize,
    pub e_m: f64,
    pub seed: u64,
}

/// Sufficient condition for equal middle probabilities of the `(1,0)` and
/// `(0,1)` patterns on a two-letter model: six display-order entry
/// symmetries. Falls back to comparing the probabilities directly for other
/// alphabets.
pub fn equal_q_symmetries(p: &TransitionMatrix) -> bool {
    if p.k() == 2 {
        let ord = display_order(2);
        let e = |i: usize, j: usize| p.get(ord[i - 1], ord[j - 1]);
        (e(2, 2) - e(3, 3)).abs() <= 1e-12
            && (e(2, 3) - e(3, 2)).abs() <= 1e-12
            && (e(2, 1) - e(3, 1)).abs() <= 1e-12
            && (e(1, 2) - e(1, 3)).abs() <= 1e-12
            && (e(2, 4) - e(3, 4)).abs() <= 1e-12
            && (e(4, 2) - e(4, 3)).abs() <= 1e-12
    } else {
        false
    }
}

struct ChainTask<'a> {
    config: &'a EmConfig,
    pi: &'a StationaryDist,
    chain_id: usize,
}

fn em_curve_for_chain(task: ChainTask<'_>) -> Result<Vec<EmRecord>> {
    let cfg = task.config;
    let n_max = 3 * cfg.grid.stop;
    let z = sample_chain_stream(cfg, task.pi, n_max, task.chain_id)?;
    let patterns: Vec<&TripletPattern> = match &cfg.pattern2 {
        Some(p2) => vec![&cfg.pattern, p2],
        None => vec![&cfg.pattern],
    };
    // Eligible triplet positions per pattern over the full chain, ascending.
    let eligible: Vec<Vec<usize>> = patterns
        .iter()
        .map(|pat| {
            let s = summarize(&z.states, pat);
            s.positions
                .iter()
                .zip(&s.b_vec)
                .filter(|(_, &b)| !b)
                .map(|(&i, _)| i)
                .collect()
        })
        .collect();

    let mut records = Vec::new();
    if cfg.scheme.is_lcs() {
        let x = z.x_seq();
        let y = z.y_seq();
        let mut engine = LcsEngine::new(&x, &y)?;
        engine.run(None);
        for m in cfg.grid.values() {
            let target = 3 * m;
            let l_m = engine.prefix_len(target) as f64;
            let mut total = 0.0f64;
            let mut count = 0usize;
            for (pat, elig) in patterns.iter().zip(&eligible) {
                for &trip in elig.iter().take_while(|&&i| i < m) {
                    let t = 3 * trip + 2; // 1-based middle position
                    let l_sub =
                        engine.substituted_prefix_len(t, pat.d.x, pat.d.y, target)? as f64;
                    total += l_sub - l_m;
                    count += 1;
                }
            }
            if count == 0 {
                continue; // nothing to do at this prefix
            }
            records.push(EmRecord {
                chain_id: task.chain_id,
                m,
                j_count: count,
                e_m: total / count as f64,
                seed: cfg.master_seed,
            });
        }
    } else {
        // General schemes: quadratic recompute per substitution.
        let x = z.x_seq();
        let y = z.y_seq();
        for m in cfg.grid.values() {
            let target = 3 * m;
            let base = score(&x[..target], &y[..target], &cfg.scheme)?;
            let mut total = 0.0f64;
            let mut count = 0usize;
            let mut xs = x[..target].to_vec();
            let mut ys = y[..target].to_vec();
            for (pat, elig) in patterns.iter().zip(&eligible) {
                for &trip in elig.iter().take_while(|&&i| i < m) {
                    let pos = 3 * trip + 1;
                    let (ox, oy) = (xs[pos], ys[pos]);
                    xs[pos] = pat.d.x;
                    ys[pos] = pat.d.y;
                    total += score(&xs, &ys, &cfg.scheme)? - base;
                    xs[pos] = ox;
                    ys[pos] = oy;
                    count += 1;
                }
            }
            if count == 0 {
                continue;
            }
            records.push(EmRecord {
                chain_id: task.chain_id,
                m,
                j_count: count,
                e_m: total / count as f64,
                seed: cfg.master_seed,
            });
        }
    }
    Ok(records)
}

fn sample_chain_stream(
    cfg: &EmConfig,
    pi: &StationaryDist,
    n: usize,
    chain_id: usize,
) -> Result<crate::markov::ChainSample> {
    // Chains get disjoint sub-streams of the master seed.
    let mut rng = task_stream(cfg.master_seed, chain_id as u64);
    sample_chain_with_stream(&cfg.matrix, pi, n, cfg.master_seed, &mut rng)
}

/// Run the single-pattern gain experiment over all chains of the config.
/// Records come back sorted by `(chain_id, m)`.
pub fn run_em(config: &EmConfig) -> Result<Vec<EmRecord>> {
    config.grid.validate()?;
    if config.pattern2.is_some() {
        return Err(Error::ConstraintViolation {
            parameter: "pattern2".into(),
            detail: "run_em takes a single pattern; use run_em_combined".into(),
        });
    }
    run_em_inner(config)
}

/// Run the combined-pattern gain experiment (pooled statistic over both
/// sides). Requires equal middle probabilities for the two patterns.
pub fn run_em_combined(config: &EmConfig) -> Result<Vec<EmRecord>> {
    config.grid.validate()?;
    let p2 = config.pattern2.as_ref().ok_or(Error::ConstraintViolation {
        parameter: "pattern2".into(),
        detail: "run_em_combined needs a second pattern".into(),
    })?;
    if config.pattern.a == p2.a && config.pattern.b == p2.b {
        return Err(Error::Domain(
            "combined patterns must have distinct endpoint pairs".into(),
        ));
    }
    let q1 = q_of(&config.matrix, &config.pattern)?;
    let q2 = q_of(&config.matrix, p2)?;
    let symmetric = equal_q_symmetries(&config.matrix);
    if !symmetric && (q1 - q2).abs() > 1e-12 {
        return Err(Error::UnequalQ { q1, q2 });
    }
    run_em_inner(config)
}

fn run_em_inner(config: &EmConfig) -> Result<Vec<EmRecord>> {
    if config.n_chains == 0 {
        return Err(Error::ConstraintViolation {
            parameter: "n_chains".into(),
            detail: "need at least one chain".into(),
        });
    }
    let pi = crate::markov::stationary(&config.matrix)?;
    let mut per_chain: Vec<Result<Vec<EmRecord>>> = Vec::new();
    (0..config.n_chains)
        .into_par_iter()
        .map(|chain_id| {
            em_curve_for_chain(ChainTask {
                config,
                pi: &pi,
                chain_id,
            })
        })
        .collect_into_vec(&mut per_chain);
    let mut records = Vec::new();
    for r in per_chain {
        records.extend(r?);
    }
    records.sort_by_key(|r| (r.chain_id, r.m));
    Ok(records)
}

/// Robust plateau estimate of the transformation gain.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct EpsEstimate {
    /// Magnitude of the plateau (lower quantile of `|E(m)|` over the tail).
    pub eps_o: f64,
    /// Dominant sign of the tail records: +1, -1, or 0 when mixed.
    pub sign: i8,
    /// Set when the tail oscillates around zero or signs disagree.
    pub inconclusive: bool,
}

/// Extract a usable gain constant from the tail of a gain curve: the 5th
/// percentile of `|E(m)|` over the last `tail_fraction` of the grid, pooled
/// across chains. The sign is recorded separately; a negative plateau is as
/// good as a positive one for the bound.
pub fn estimate_eps_o(records: &[EmRecord], tail_fraction: f64) -> Result<EpsEstimate> {
    if records.is_empty() {
        return Err(Error::InsufficientData("no gain records".into()));
    }
    if !(0.0..=1.0).contains(&tail_fraction) || tail_fraction == 0.0 {
        return Err(Error::Domain(format!(
            "tail_fraction must lie in (0,1], got {tail_fraction}"
        )));
    }
    let m_max = records.iter().map(|r| r.m).max().unwrap();
    let m_min = records.iter().map(|r| r.m).min().unwrap();
    let cut = m_max - ((m_max - m_min) as f64 * tail_fraction).floor() as usize;
    let tail: Vec<f64> = records
        .iter()
        .filter(|r| r.m >= cut)
        .map(|r| r.e_m)
        .collect();
    if tail.is_empty() {
        return Err(Error::InsufficientData("empty grid tail".into()));
    }
    let mut magnitudes: Vec<f64> = tail.iter().map(|v| v.abs()).collect();
    magnitudes.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let idx = ((0.05 * magnitudes.len() as f64).ceil() as usize).clamp(1, magnitudes.len()) - 1;
    let eps_o = magnitudes[idx];
    let pos = tail.iter().filter(|v| **v > 0.0).count();
    let neg = tail.iter().filter(|v| **v < 0.0).count();
    let dominant = pos.max(neg) as f64 / tail.len() as f64;
    let sign = if dominant < 0.9 {
        0
    } else if pos >= neg {
        1
    } else {
        -1
    };
    Ok(EpsEstimate {
        eps_o,
        sign,
        inconclusive: sign == 0 || eps_o < 1e-3,
    })
}

// ---------------------------------------------------------------------------
// Variance scan
// ---------------------------------------------------------------------------

/// Sample-variance record at one chain length.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct VarianceRecord {
    pub n: usize,
    pub replicates: usize,
    pub mean: f64,
    pub var: f64,
    pub ci_lo: f64,
    pub ci_hi: f64,
    /// Lower sandwich endpoint `a_o * n` when a slope was supplied.
    pub a_o_n: Option<f64>,
    /// Upper sandwich endpoint `C(2) * n` when a slope was supplied.
    pub c2_n: Option<f64>,
}

/// Sample variance of the score over `replicates` independent chains per
/// grid length, with a jackknife confidence interval. Optional `a_o` / `c2`
/// slopes fill the sandwich columns.
pub fn variance_scan(
    p: &TransitionMatrix,
    scheme: &ScoringScheme,
    n_grid: &[usize],
    replicates: usize,
    master_seed: u64,
    a_o: Option<f64>,
    c2: Option<f64>,
) -> Result<Vec<VarianceRecord>> {
    if replicates < 2 {
        return Err(Error::ConstraintViolation {
            parameter: "replicates".into(),
            detail: "need at least 2 replicates".into(),
        });
    }
    let pi = crate::markov::stationary(p)?;
    let mut out = Vec::with_capacity(n_grid.len());
    for (gi, &n) in n_grid.iter().enumerate() {
        let mut scores: Vec<Result<f64>> = Vec::new();
        (0..replicates)
            .into_par_iter()
            .map(|rep| {
                let task = (gi as u64) << 32 | rep as u64;
                let mut rng = task_stream(master_seed, task);
                let z = sample_chain_with_stream(p, &pi, n, master_seed, &mut rng)?;
                if scheme.is_lcs() {
                    Ok(lcs(&z.x_seq(), &z.y_seq())? as f64)
                } else {
                    score(&z.x_seq(), &z.y_seq(), scheme)
                }
            })
            .collect_into_vec(&mut scores);
        let ls: Vec<f64> = scores.into_iter().collect::<Result<_>>()?;
        let r = ls.len() as f64;
        let mean = ls.iter().sum::<f64>() / r;
        let ss: f64 = ls.iter().map(|v| (v - mean) * (v - mean)).sum();
        let var = ss / (r - 1.0);
        // Jackknife over the variance estimator.
        let sum: f64 = ls.iter().sum();
        let sum2: f64 = ls.iter().map(|v| v * v).sum();
        let mut jk = Vec::with_capacity(ls.len());
        for &v in &ls {
            let s1 = sum - v;
            let s2 = sum2 - v * v;
            let m = s1 / (r - 1.0);
            jk.push((s2 - (r - 1.0) * m * m) / (r - 2.0));
        }
        let jk_mean = jk.iter().sum::<f64>() / r;
        let jk_var = (r - 1.0) / r * jk.iter().map(|v| (v - jk_mean) * (v - jk_mean)).sum::<f64>();
        let half = 1.96 * jk_var.sqrt();
        out.push(VarianceRecord {
            n,
            replicates,
            mean,
            var,
            ci_lo: var - half,
            ci_hi: var + half,
            a_o_n: a_o.map(|a| a * n as f64),
            c2_n: c2.map(|c| c * n as f64),
        });
    }
    Ok(out)
}

/// Least-squares slope and uncentered R^2 of a through-origin fit of `var`
/// against `n`.
pub fn through_origin_fit(records: &[VarianceRecord]) -> (f64, f64) {
    let sxy: f64 = records.iter().map(|r| r.n as f64 * r.var).sum();
    let sxx: f64 = records.iter().map(|r| (r.n as f64).powi(2)).sum();
    let slope = sxy / sxx;
    let ss_res: f64 = records
        .iter()
        .map(|r| (r.var - slope * r.n as f64).powi(2))
        .sum();
    let ss_tot: f64 = records.iter().map(|r| r.var * r.var).sum();
    (slope, 1.0 - ss_res / ss_tot)
}

// ---------------------------------------------------------------------------
// Tail checks
// ---------------------------------------------------------------------------

/// One tested band half-width in a triplet-count tail check.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct TailVPoint {
    pub k_const: f64,
    /// Absolute deviation threshold `K sqrt(n)`.
    pub threshold: f64,
    pub empirical_tail: f64,
    /// Twice the one-sided Hoeffding bound; absent when the inequality's
    /// side condition excludes this K.
    pub bound: Option<f64>,
    /// Set iff a bound exists and dominates the empirical tail.
    pub dominated: bool,
    /// Empirical `P(V in V_n)` for this band.
    pub coverage: f64,
}

/// Tail check of the matched-triplet count `V` against the Markov-chain
/// Hoeffding bound.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TailVReport {
    pub n: usize,
    pub trials: usize,
    pub ev: f64,
    pub lambda: f64,
    pub r_doeblin: u64,
    /// The band constant from `choose_k` at `b_o = 0.9`.
    pub k_chosen: f64,
    pub points: Vec<TailVPoint>,
    pub all_dominated: bool,
}

/// Compare the empirical tail `P(|V - EV| > K sqrt(n))` against twice the
/// one-sided Hoeffding bound, for each `K` in `k_values` (plus the
/// `choose_k` constant). `K` values whose side condition fails are skipped.
pub fn tail_check_v(
    p: &TransitionMatrix,
    pattern: &TripletPattern,
    n: usize,
    k_values: &[f64],
    trials: usize,
    master_seed: u64,
) -> Result<TailVReport> {
    if trials == 0 {
        return Err(Error::ConstraintViolation {
            parameter: "trials".into(),
            detail: "need at least one trial".into(),
        });
    }
    let pi = crate::markov::stationary(p)?;
    let (_, alpha_n) = alpha_of(p, &pi, pattern, n)?;
    let ev = alpha_n * n as f64;
    let info = triplet_chain_info(p, &pi)?;
    let k_chosen = choose_k(info.lambda, info.r, 0.9)?;
    let m = (n / 3) as u64;

    let mut vs: Vec<Result<usize>> = Vec::new();
    (0..trials)
        .into_par_iter()
        .map(|trial| {
            let mut rng = task_stream(master_seed, trial as u64);
            let z = sample_chain_with_stream(p, &pi, n, master_seed, &mut rng)?;
            Ok(summarize(&z.states, pattern).v)
        })
        .collect_into_vec(&mut vs);
    let vs: Vec<usize> = vs.into_iter().collect::<Result<_>>()?;

    let mut points = Vec::new();
    let mut all_dominated = true;
    let mut ks: Vec<f64> = k_values.to_vec();
    ks.push(k_chosen);
    for k_const in ks {
        let threshold = k_const * (n as f64).sqrt();
        let eps = 3.0 * k_const / (n as f64).sqrt();
        // The inequality only applies past its side condition; the band
        // statistics are still reported for excluded K.
        let bound = if eps > 0.0 {
            match hoeffding_mc_bound(m, eps, info.lambda, info.r, 1.0) {
                Ok(b) => Some(2.0 * b),
                Err(Error::PreconditionViolated(_)) => None,
                Err(e) => return Err(e),
            }
        } else {
            None
        };
        let exceed = vs
            .iter()
            .filter(|&&v| (v as f64 - ev).abs() > threshold)
            .count();
        let empirical_tail = exceed as f64 / trials as f64;
        let dominated = bound.is_some_and(|b| empirical_tail <= b);
        if bound.is_some() {
            all_dominated &= dominated;
        }
        points.push(TailVPoint {
            k_const,
            threshold,
            empirical_tail,
            bound,
            dominated,
            coverage: 1.0 - empirical_tail,
        });
    }
    Ok(TailVReport {
        n,
        trials,
        ev,
        lambda: info.lambda,
        r_doeblin: info.r,
        k_chosen,
        points,
        all_dominated,
    })
}

/// One tested deviation in a score tail check.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct McdPoint {
    pub s: f64,
    pub empirical_tail: f64,
    pub bound: f64,
    pub dominated: bool,
}

/// Tail check of the score against the bounded-difference bound
/// `2 exp(-s^2 / (n F))`.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct McdReport {
    pub n: usize,
    pub trials: usize,
    pub f_const: f64,
    pub t_mix: f64,
    pub mean_score: f64,
    pub points: Vec<McdPoint>,
    pub all_dominated: bool,
}

/// Compare the empirical tail of `|L - mean L|` against the
/// bounded-difference bound on a deviation grid (default: eleven points up
/// to the largest observed deviation, plus the half-probability point).
pub fn mcdiarmid_tail_check(
    p: &TransitionMatrix,
    scheme: &ScoringScheme,
    n: usize,
    trials: usize,
    master_seed: u64,
    s_grid: Option<&[f64]>,
) -> Result<McdReport> {
    if trials < 2 {
        return Err(Error::ConstraintViolation {
            parameter: "trials".into(),
            detail: "need at least two trials".into(),
        });
    }
    let pi = crate::markov::stationary(p)?;
    let upper = upper_bound_report(p, scheme, 2.0, n)?;
    let f_const = upper.f_const.unwrap();
    let t_mix = upper.t_mix.unwrap();

    let mut ls: Vec<Result<f64>> = Vec::new();
    (0..trials)
        .into_par_iter()
        .map(|trial| {
            let mut rng = task_stream(master_seed, trial as u64);
            let z = sample_chain_with_stream(p, &pi, n, master_seed, &mut rng)?;
            if scheme.is_lcs() {
                Ok(lcs(&z.x_seq(), &z.y_seq())? as f64)
            } else {
                score(&z.x_seq(), &z.y_seq(), scheme)
            }
        })
        .collect_into_vec(&mut ls);
    let ls: Vec<f64> = ls.into_iter().collect::<Result<_>>()?;
    let mean = ls.iter().sum::<f64>() / trials as f64;
    let max_dev = ls
        .iter()
        .map(|v| (v - mean).abs())
        .fold(0.0f64, f64::max);

    let grid: Vec<f64> = match s_grid {
        Some(g) => g.to_vec(),
        None => {
            let mut g: Vec<f64> = (0..=10).map(|i| i as f64 * max_dev / 10.0).collect();
            if f_const > 0.0 {
                g.push((n as f64 * f_const * (4.0f64).ln()).sqrt());
            }
            g
        }
    };
    let mut points = Vec::new();
    let mut all_dominated = true;
    for s in grid {
        let bound = if f_const == 0.0 {
            if s > 0.0 {
                0.0
            } else {
                2.0
            }
        } else {
            2.0 * (-(s * s) / (n as f64 * f_const)).exp()
        };
        let exceed = ls.iter().filter(|&&v| (v - mean).abs() >= s).count();
        let empirical_tail = exceed as f64 / trials as f64;
        let dominated = empirical_tail <= bound || s == 0.0;
        all_dominated &= dominated;
        points.push(McdPoint {
            s,
            empirical_tail,
            bound,
            dominated,
        });
    }
    Ok(McdReport {
        n,
        trials,
        f_const,
        t_mix,
        mean_score: mean,
        points,
        all_dominated,
    })
}

// ---------------------------------------------------------------------------
// CSV serialization (canonical formats shared by the CLI and tests)
// ---------------------------------------------------------------------------

/// Canonical CSV for gain records: `chain_id,m,j_count,e_m,seed`.
pub fn em_records_to_csv(records: &[EmRecord]) -> String {
    let mut out = String::from("chain_id,m,j_count,e_m,seed\n");
    for r in records {
        out.push_str(&format!(
            "{},{},{},{},{}\n",
            r.chain_id, r.m, r.j_count, r.e_m, r.seed
        ));
    }
    out
}

/// Canonical CSV for variance records:
/// `n,replicates,mean,var,ci_lo,ci_hi,a_o_n,c2_n`.
pub fn variance_records_to_csv(records: &[VarianceRecord]) -> String {
    let mut out = String::from("n,replicates,mean,var,ci_lo,ci_hi,a_o_n,c2_n\n");
    let opt = |v: Option<f64>| v.map(|x| x.to_string()).unwrap_or_default();
    for r in records {
        out.push_str(&format!(
            "{},{},{},{},{},{},{},{}\n",
            r.n,
            r.replicates,
            r.mean,
            r.var,
            r.ci_lo,
            r.ci_hi,
            opt(r.a_o_n),
            opt(r.c2_n)
        ));
    }
    out
}
