//! Pairwise Markov chain models.
//!
//! The process `Z_i = (X_i, Y_i)` is a Markov chain on the product alphabet.
//! States are encoded internally by the flat index `x * k + y`. For the
//! two-letter alphabet every external representation (JSON entries, printed
//! matrices) uses the display order `(1,1), (1,0), (0,1), (0,0)` so that the
//! standard two-letter model matrices can be read off literally; for other
//! alphabet sizes the display order is the flat order.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::{task_stream, Stream};
use rand::Rng;

/// Tolerance for row sums and distribution normalization.
pub const ROW_SUM_TOL: f64 = 1e-12;
/// Tolerance for the stationary fixed-point residual.
pub const STATIONARY_TOL: f64 = 1e-10;

// ---------------------------------------------------------------------------
// Alphabet and states
// ---------------------------------------------------------------------------

/// Finite letter alphabet; letters are identified with `0..k-1`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Alphabet {
    size: usize,
}

impl Alphabet {
    pub fn new(size: usize) -> Result<Self> {
        if size < 2 {
            return Err(Error::ConstraintViolation {
                parameter: "alphabet size".into(),
                detail: format!("must be >= 2, got {size}"),
            });
        }
        Ok(Alphabet { size })
    }

    pub fn size(&self) -> usize {
        self.size
    }
}

/// One state of the pair chain: a letter of `X` and a letter of `Y`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct PairState {
    pub x: u8,
    pub y: u8,
}

impl PairState {
    pub const fn new(x: u8, y: u8) -> Self {
        PairState { x, y }
    }

    /// Canonical flat index `x * k + y`.
    pub fn flat(&self, k: usize) -> usize {
        self.x as usize * k + self.y as usize
    }

    pub fn from_flat(idx: usize, k: usize) -> Self {
        PairState {
            x: (idx / k) as u8,
            y: (idx % k) as u8,
        }
    }
}

impl std::fmt::Display for PairState {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "({},{})", self.x, self.y)
    }
}

/// Flat state indices in display order.
///
/// For `k = 2` this is `(1,1), (1,0), (0,1), (0,0)`; otherwise flat order.
pub fn display_order(k: usize) -> Vec<usize> {
    if k == 2 {
        vec![3, 2, 1, 0]
    } else {
        (0..k * k).collect()
    }
}

// ---------------------------------------------------------------------------
// Transition matrix
// ---------------------------------------------------------------------------

/// Row-stochastic transition matrix over the pair alphabet.
#[derive(Debug, Clone, PartialEq)]
pub struct TransitionMatrix {
    k: usize,
    label: String,
    /// Row-major entries indexed by flat state index.
    entries: Vec<f64>,
}

/// Serialized form: entries are row-major in display order.
#[derive(Debug, Serialize, Deserialize)]
struct MatrixJson {
    label: String,
    k: usize,
    entries: Vec<f64>,
}

impl TransitionMatrix {
    /// Build from row-major entries in canonical flat order.
    pub fn from_entries(k: usize, label: impl Into<String>, entries: Vec<f64>) -> Result<Self> {
        let dim = k * k;
        if entries.len() != dim * dim {
            return Err(Error::ConstraintViolation {
                parameter: "entries".into(),
                detail: format!("expected {} entries, got {}", dim * dim, entries.len()),
            });
        }
        let m = TransitionMatrix {
            k,
            label: label.into(),
            entries,
        };
        m.validate()?;
        Ok(m)
    }

    /// Build from rows given in display order (the order the two-letter
    /// model matrices are written in).
    pub fn from_display_rows(k: usize, label: impl Into<String>, rows: &[Vec<f64>]) -> Result<Self> {
        let dim = k * k;
        if rows.len() != dim || rows.iter().any(|r| r.len() != dim) {
            return Err(Error::ConstraintViolation {
                parameter: "rows".into(),
                detail: format!("expected {dim} rows of length {dim}"),
            });
        }
        let order = display_order(k);
        let mut entries = vec![0.0; dim * dim];
        for (di, &fi) in order.iter().enumerate() {
            for (dj, &fj) in order.iter().enumerate() {
                entries[fi * dim + fj] = rows[di][dj];
            }
        }
        TransitionMatrix::from_entries(k, label, entries)
    }

    fn validate(&self) -> Result<()> {
        let dim = self.dim();
        for i in 0..dim {
            let mut sum = 0.0;
            for j in 0..dim {
                let p = self.entries[i * dim + j];
                if p < 0.0 {
                    return Err(Error::Domain(format!(
                        "entry ({i},{j}) of `{}` is negative: {p}",
                        self.label
                    )));
                }
                sum += p;
            }
            if (sum - 1.0).abs() > ROW_SUM_TOL {
                return Err(Error::Domain(format!(
                    "row {i} of `{}` sums to {sum}, not 1",
                    self.label
                )));
            }
        }
        Ok(())
    }

    pub fn k(&self) -> usize {
        self.k
    }

    pub fn alphabet(&self) -> Alphabet {
        Alphabet { size: self.k }
    }

    /// Number of pair states, `k^2`.
    pub fn dim(&self) -> usize {
        self.k * self.k
    }

    pub fn label(&self) -> &str {
        &self.label
    }

    pub fn entries(&self) -> &[f64] {
        &self.entries
    }

    pub fn get(&self, from: usize, to: usize) -> f64 {
        self.entries[from * self.dim() + to]
    }

    pub fn prob(&self, from: PairState, to: PairState) -> f64 {
        self.get(from.flat(self.k), to.flat(self.k))
    }

    pub fn row(&self, from: usize) -> &[f64] {
        let dim = self.dim();
        &self.entries[from * dim..(from + 1) * dim]
    }

    /// Matrix product `self * other` (no validation of the result).
    fn multiply(&self, other: &[f64]) -> Vec<f64> {
        let dim = self.dim();
        let mut out = vec![0.0; dim * dim];
        for i in 0..dim {
            for l in 0..dim {
                let a = self.entries[i * dim + l];
                if a == 0.0 {
                    continue;
                }
                for j in 0..dim {
                    out[i * dim + j] += a * other[l * dim + j];
                }
            }
        }
        out
    }

    /// Two-step transition probabilities `(P^2)_{from,to}`.
    pub fn two_step(&self, from: usize, to: usize) -> f64 {
        let dim = self.dim();
        (0..dim).map(|l| self.get(from, l) * self.get(l, to)).sum()
    }

    /// Serialize as JSON with entries in display order.
    pub fn to_json(&self) -> String {
        let order = display_order(self.k);
        let dim = self.dim();
        let mut entries = Vec::with_capacity(dim * dim);
        for &fi in &order {
            for &fj in &order {
                entries.push(self.entries[fi * dim + fj]);
            }
        }
        serde_json::to_string_pretty(&MatrixJson {
            label: self.label.clone(),
            k: self.k,
            entries,
        })
        .expect("matrix serialization cannot fail")
    }

    /// Parse the JSON form produced by [`TransitionMatrix::to_json`].
    pub fn from_json(text: &str) -> Result<Self> {
        let raw: MatrixJson =
            serde_json::from_str(text).map_err(|e| Error::Parse(e.to_string()))?;
        let dim = raw.k * raw.k;
        if raw.entries.len() != dim * dim {
            return Err(Error::Parse(format!(
                "expected {} entries for k = {}, got {}",
                dim * dim,
                raw.k,
                raw.entries.len()
            )));
        }
        let order = display_order(raw.k);
        let mut entries = vec![0.0; dim * dim];
        for (di, &fi) in order.iter().enumerate() {
            for (dj, &fj) in order.iter().enumerate() {
                entries[fi * dim + fj] = raw.entries[di * dim + dj];
            }
        }
        TransitionMatrix::from_entries(raw.k, raw.label, entries)
    }
}

// ---------------------------------------------------------------------------
// The two-letter model family
// ---------------------------------------------------------------------------

/// Parameters of the four-parameter two-letter family.
///
/// `p, q` are the `X`-marginal transition probabilities into letter 1 from
/// letters 1 and 0 respectively; `p_dash, q_dash` the same for `Y`.
/// `lambda1, lambda2, mu1, mu2` regulate the dependence between the
/// marginals and must satisfy the interval constraints below.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct MarginalParams {
    pub p: f64,
    pub q: f64,
    pub p_dash: f64,
    pub q_dash: f64,
    pub lambda1: f64,
    pub lambda2: f64,
    pub mu1: f64,
    pub mu2: f64,
}

fn check_unit(name: &str, v: f64, open: bool) -> Result<()> {
    let ok = if open {
        v > 0.0 && v < 1.0
    } else {
        (0.0..=1.0).contains(&v)
    };
    if !ok {
        return Err(Error::ConstraintViolation {
            parameter: name.into(),
            detail: format!(
                "must lie in {}, got {v}",
                if open { "(0,1)" } else { "[0,1]" }
            ),
        });
    }
    Ok(())
}

fn check_interval(name: &str, v: f64, lo: f64, hi: f64) -> Result<()> {
    let eps = 1e-12;
    if !((lo - eps)..=(hi + eps)).contains(&v) {
        return Err(Error::ConstraintViolation {
            parameter: name.into(),
            detail: format!("must lie in [{lo}, {hi}], got {v}"),
        });
    }
    Ok(())
}

/// Clamp float roundoff: entries in `[-1e-12, 0)` become exact zero.
fn clamp_entry(v: f64) -> f64 {
    if (-1e-12..0.0).contains(&v) {
        0.0
    } else {
        v
    }
}

/// The most general two-letter joint matrix whose marginals are Markov with
/// rows `(p, 1-p; q, 1-q)` and `(p', 1-p'; q', 1-q')`.
pub fn build_general(params: MarginalParams) -> Result<TransitionMatrix> {
    let MarginalParams {
        p,
        q,
        p_dash,
        q_dash,
        lambda1,
        lambda2,
        mu1,
        mu2,
    } = params;
    check_unit("p", p, true)?;
    check_unit("q", q, true)?;
    check_unit("p_dash", p_dash, false)?;
    check_unit("q_dash", q_dash, false)?;
    check_interval(
        "lambda1",
        lambda1,
        ((p_dash + p - 1.0) / p).max(0.0),
        (p_dash / p).min(1.0),
    )?;
    check_interval(
        "lambda2",
        lambda2,
        ((q_dash + p - 1.0) / p).max(0.0),
        (q_dash / p).min(1.0),
    )?;
    check_interval(
        "mu1",
        mu1,
        ((p_dash + q - 1.0) / q).max(0.0),
        (p_dash / q).min(1.0),
    )?;
    check_interval(
        "mu2",
        mu2,
        ((q_dash + q - 1.0) / q).max(0.0),
        (q_dash / q).min(1.0),
    )?;

    let rows = vec![
        vec![
            p * lambda1,
            p * (1.0 - lambda1),
            p_dash - p * lambda1,
            1.0 + p * lambda1 - p_dash - p,
        ],
        vec![
            p * lambda2,
            p * (1.0 - lambda2),
            q_dash - p * lambda2,
            1.0 + p * lambda2 - q_dash - p,
        ],
        vec![
            q * mu1,
            q * (1.0 - mu1),
            p_dash - q * mu1,
            1.0 + q * mu1 - p_dash - q,
        ],
        vec![
            q * mu2,
            q * (1.0 - mu2),
            q_dash - q * mu2,
            1.0 + q * mu2 - q_dash - q,
        ],
    ];
    let rows: Vec<Vec<f64>> = rows
        .into_iter()
        .map(|r| r.into_iter().map(clamp_entry).collect())
        .collect();
    TransitionMatrix::from_display_rows(2, "general", &rows)
}

/// Joint matrix of two independent chains, each with rows `(p, 1-p; q, 1-q)`.
pub fn build_ind(p: f64, q: f64) -> Result<TransitionMatrix> {
    check_unit("p", p, true).map_err(|_| Error::Domain(format!("p must lie in (0,1), got {p}")))?;
    check_unit("q", q, true).map_err(|_| Error::Domain(format!("q must lie in (0,1), got {q}")))?;
    // Probability that the next letter is 1, given the current letter.
    let to_one = |letter: u8| if letter == 1 { p } else { q };
    let k = 2usize;
    let dim = k * k;
    let mut entries = vec![0.0; dim * dim];
    for from in 0..dim {
        let f = PairState::from_flat(from, k);
        for to in 0..dim {
            let t = PairState::from_flat(to, k);
            let px = if t.x == 1 { to_one(f.x) } else { 1.0 - to_one(f.x) };
            let py = if t.y == 1 { to_one(f.y) } else { 1.0 - to_one(f.y) };
            entries[from * dim + to] = px * py;
        }
    }
    TransitionMatrix::from_entries(k, "ind", entries)
}

/// The nearly maximal-dependence matrix (requires `p >= q`).
pub fn build_max(p: f64, q: f64, eps: f64) -> Result<TransitionMatrix> {
    if p < q {
        return Err(Error::Domain(format!("build_max requires p >= q, got p = {p}, q = {q}")));
    }
    let rows = vec![
        vec![p - eps, eps, eps, 1.0 - p - eps],
        vec![q, p - q, 0.0, 1.0 - p],
        vec![q, 0.0, p - q, 1.0 - p],
        vec![q - eps, eps, eps, 1.0 - q - eps],
    ];
    for (i, r) in rows.iter().enumerate() {
        for (j, &v) in r.iter().enumerate() {
            if !(0.0..=1.0).contains(&v) {
                return Err(Error::Domain(format!(
                    "max-dependence entry ({i},{j}) = {v} leaves [0,1]"
                )));
            }
        }
    }
    TransitionMatrix::from_display_rows(2, "max", &rows)
}

/// The minimal-dependence matrix; defined only for `p + q > 1`.
pub fn build_min(p: f64, q: f64, eps: f64) -> Result<TransitionMatrix> {
    if p + q <= 1.0 {
        return Err(Error::Unsupported(format!(
            "minimal-dependence matrix is undefined for p + q <= 1 (p = {p}, q = {q})"
        )));
    }
    let last_row = if q >= 0.5 {
        vec![2.0 * q - 1.0 + eps, 1.0 - q - eps, 1.0 - q - eps, eps]
    } else {
        vec![eps, q - eps, q - eps, 1.0 - 2.0 * q + eps]
    };
    let rows = vec![
        vec![2.0 * p - 1.0 + eps, 1.0 - p - eps, 1.0 - p - eps, eps],
        vec![p + q - 1.0, 1.0 - q, 1.0 - p, 0.0],
        vec![p + q - 1.0, 1.0 - p, 1.0 - q, 0.0],
        last_row,
    ];
    for (i, r) in rows.iter().enumerate() {
        for (j, &v) in r.iter().enumerate() {
            if !(0.0..=1.0).contains(&v) {
                return Err(Error::Domain(format!(
                    "min-dependence entry ({i},{j}) = {v} leaves [0,1]"
                )));
            }
        }
    }
    TransitionMatrix::from_display_rows(2, "min", &rows)
}

// ---------------------------------------------------------------------------
// Lumpability
// ---------------------------------------------------------------------------

/// A transition matrix on partition blocks.
#[derive(Debug, Clone, PartialEq)]
pub struct LumpedMatrix {
    pub rows: Vec<Vec<f64>>,
}

/// Result of a lumpability check.
#[derive(Debug, Clone)]
pub enum LumpOutcome {
    /// The projected process is Markov; the lumped matrix is returned.
    Markov(LumpedMatrix),
    /// First violation found: row `state` has block-`block` mass `actual`
    /// where the block representative has `expected`.
    Violation {
        state: usize,
        block: usize,
        expected: f64,
        actual: f64,
    },
}

/// Check the constant-row-sum condition for a partition of the flat states.
///
/// Returns the lumped matrix iff, within every block, each state has the
/// same total transition mass into every block (tolerance 1e-12).
pub fn check_lumpable(p: &TransitionMatrix, partition: &[Vec<usize>]) -> Result<LumpOutcome> {
    let dim = p.dim();
    let mut seen = vec![false; dim];
    for block in partition {
        for &s in block {
            if s >= dim {
                return Err(Error::ConstraintViolation {
                    parameter: "partition".into(),
                    detail: format!("state {s} out of range 0..{dim}"),
                });
            }
            if seen[s] {
                return Err(Error::ConstraintViolation {
                    parameter: "partition".into(),
                    detail: format!("state {s} appears in two blocks"),
                });
            }
            seen[s] = true;
        }
    }
    if seen.iter().any(|&b| !b) {
        return Err(Error::ConstraintViolation {
            parameter: "partition".into(),
            detail: "partition does not cover all states".into(),
        });
    }

    let nb = partition.len();
    let mut rows = vec![vec![0.0; nb]; nb];
    for (bi, block) in partition.iter().enumerate() {
        for (bj, target) in partition.iter().enumerate() {
            let mass = |s: usize| -> f64 { target.iter().map(|&t| p.get(s, t)).sum() };
            let expected = mass(block[0]);
            for &s in block.iter() {
                let actual = mass(s);
                if (actual - expected).abs() > 1e-12 {
                    return Ok(LumpOutcome::Violation {
                        state: s,
                        block: bj,
                        expected,
                        actual,
                    });
                }
            }
            rows[bi][bj] = expected;
        }
    }
    Ok(LumpOutcome::Markov(LumpedMatrix { rows }))
}

/// Partition of the flat states by the `X` coordinate.
///
/// Blocks are ordered by descending letter so the two-letter marginal
/// convention (state 1 first) is preserved.
pub fn partition_by_x(k: usize) -> Vec<Vec<usize>> {
    (0..k)
        .rev()
        .map(|x| (0..k).map(|y| x * k + y).collect())
        .collect()
}

/// Partition of the flat states by the `Y` coordinate (state 1 first).
pub fn partition_by_y(k: usize) -> Vec<Vec<usize>> {
    (0..k)
        .rev()
        .map(|y| (0..k).map(|x| x * k + y).collect())
        .collect()
}

// ---------------------------------------------------------------------------
// Stationary distribution
// ---------------------------------------------------------------------------

/// Stationary distribution of the pair chain, indexed by flat state.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StationaryDist {
    pub probs: Vec<f64>,
}

impl StationaryDist {
    pub fn prob(&self, state: PairState, k: usize) -> f64 {
        self.probs[state.flat(k)]
    }

    fn validate(&self, p: &TransitionMatrix) -> Result<()> {
        let sum: f64 = self.probs.iter().sum();
        if (sum - 1.0).abs() > ROW_SUM_TOL {
            return Err(Error::Numerical(format!("stationary sums to {sum}")));
        }
        let res = self.residual(p);
        if res > STATIONARY_TOL {
            return Err(Error::Numerical(format!(
                "stationary residual {res} exceeds {STATIONARY_TOL}"
            )));
        }
        Ok(())
    }

    /// `max_j |(pi P)_j - pi_j|`.
    pub fn residual(&self, p: &TransitionMatrix) -> f64 {
        let dim = p.dim();
        let mut worst: f64 = 0.0;
        for j in 0..dim {
            let v: f64 = (0..dim).map(|i| self.probs[i] * p.get(i, j)).sum();
            worst = worst.max((v - self.probs[j]).abs());
        }
        worst
    }
}

/// Solve `pi P = pi`, `sum pi = 1` by direct linear solve.
///
/// Requires the chain to be primitive (checked via [`primitivity_index`]);
/// for periodic or reducible matrices the fixed point is not unique or not
/// meaningful here.
pub fn stationary(p: &TransitionMatrix) -> Result<StationaryDist> {
    primitivity_index(p).map_err(|_| Error::NotIrreducible(p.label().to_string()))?;
    let dim = p.dim();
    // A = P^T - I with the last equation replaced by normalization.
    let mut a = vec![0.0; dim * dim];
    let mut b = vec![0.0; dim];
    for i in 0..dim {
        for j in 0..dim {
            a[i * dim + j] = p.get(j, i) - if i == j { 1.0 } else { 0.0 };
        }
    }
    for j in 0..dim {
        a[(dim - 1) * dim + j] = 1.0;
    }
    b[dim - 1] = 1.0;
    let mut probs = solve_dense(&mut a, &mut b, dim)?;
    for v in probs.iter_mut() {
        if *v < 0.0 {
            if *v < -1e-9 {
                return Err(Error::Numerical(format!("stationary component {v} < 0")));
            }
            *v = 0.0;
        }
    }
    let total: f64 = probs.iter().sum();
    for v in probs.iter_mut() {
        *v /= total;
    }
    let dist = StationaryDist { probs };
    dist.validate(p)?;
    Ok(dist)
}

/// Gaussian elimination with partial pivoting; consumes `a` (n x n) and `b`.
fn solve_dense(a: &mut [f64], b: &mut [f64], n: usize) -> Result<Vec<f64>> {
    for col in 0..n {
        let pivot = (col..n)
            .max_by(|&r, &s| {
                a[r * n + col]
                    .abs()
                    .partial_cmp(&a[s * n + col].abs())
                    .unwrap()
            })
            .unwrap();
        if a[pivot * n + col].abs() < 1e-14 {
            return Err(Error::Numerical("singular system in stationary solve".into()));
        }
        if pivot != col {
            for j in 0..n {
                a.swap(col * n + j, pivot * n + j);
            }
            b.swap(col, pivot);
        }
        let d = a[col * n + col];
        for r in col + 1..n {
            let f = a[r * n + col] / d;
            if f == 0.0 {
                continue;
            }
            for j in col..n {
                a[r * n + j] -= f * a[col * n + j];
            }
            b[r] -= f * b[col];
        }
    }
    let mut x = vec![0.0; n];
    for col in (0..n).rev() {
        let mut v = b[col];
        for j in col + 1..n {
            v -= a[col * n + j] * x[j];
        }
        x[col] = v / a[col * n + col];
    }
    Ok(x)
}

// ---------------------------------------------------------------------------
// Primitivity and mixing
// ---------------------------------------------------------------------------

/// Smallest `m <= k^4` with `P^m` strictly positive, and the minimum entry
/// of that power.
pub fn primitivity_index(p: &TransitionMatrix) -> Result<(usize, f64)> {
    let cap = p.k().pow(4);
    let mut power = p.entries().to_vec();
    for m in 1..=cap {
        let min = power.iter().cloned().fold(f64::INFINITY, f64::min);
        if min > 0.0 {
            return Ok((m, min));
        }
        power = p.multiply(&power);
    }
    Err(Error::NotPrimitive {
        label: p.label().to_string(),
        cap,
    })
}

/// Total-variation mixing bound derived from the primitivity index.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct MixingBound {
    /// Requested accuracy.
    pub eps: f64,
    /// Bound on `t(eps)`, clamped below at 1.
    pub t_eps: f64,
    /// Bound on `t(1/4)`, clamped below at 1.
    pub t_mix: f64,
    /// Primitivity lag of the chain.
    pub m: usize,
    /// Minimum entry of `P^m`.
    pub p_o: f64,
    /// Geometric rate `(1 - k^2 p_o)^{1/m}`.
    pub rho: f64,
    /// Leading constant: 1 when `m = 1`, otherwise `(1 - k^2 p_o)^{-1}`.
    pub c: f64,
    /// Set when `1 - k^2 p_o <= 0`: the chain hits stationarity exactly at
    /// lag `m` and the geometric bound degenerates.
    pub exact_mixing: bool,
    /// Set when the raw bound fell below 1 and was clamped.
    pub clamped: bool,
}

/// Bound the total-variation mixing time from the primitivity index.
pub fn mixing_time_bound(p: &TransitionMatrix, eps: f64) -> Result<MixingBound> {
    if eps <= 0.0 {
        return Err(Error::Domain(format!("eps must be positive, got {eps}")));
    }
    let (m, p_o) = primitivity_index(p)?;
    let states = p.dim() as f64;
    let base = 1.0 - states * p_o;
    if base <= 0.0 {
        // P^m already has every row equal to the stationary distribution.
        return Ok(MixingBound {
            eps,
            t_eps: m as f64,
            t_mix: m as f64,
            m,
            p_o,
            rho: 0.0,
            c: 1.0,
            exact_mixing: true,
            clamped: false,
        });
    }
    let rho = base.powf(1.0 / m as f64);
    let c = if m == 1 { 1.0 } else { 1.0 / base };
    let raw = |e: f64| (e.ln() - c.ln()) / rho.ln();
    let t_eps_raw = raw(eps);
    let t_mix_raw = raw(0.25);
    let clamped = t_eps_raw < 1.0 || t_mix_raw < 1.0;
    Ok(MixingBound {
        eps,
        t_eps: t_eps_raw.max(1.0),
        t_mix: t_mix_raw.max(1.0),
        m,
        p_o,
        rho,
        c,
        exact_mixing: false,
        clamped,
    })
}

// ---------------------------------------------------------------------------
// Sampling
// ---------------------------------------------------------------------------

/// A realization `Z_1..Z_n` with its seed provenance.
#[derive(Debug, Clone, PartialEq)]
pub struct ChainSample {
    pub states: Vec<PairState>,
    pub seed: u64,
    pub label: String,
}

impl ChainSample {
    pub fn len(&self) -> usize {
        self.states.len()
    }

    pub fn is_empty(&self) -> bool {
        self.states.is_empty()
    }

    /// The `X` letter sequence.
    pub fn x_seq(&self) -> Vec<u8> {
        self.states.iter().map(|s| s.x).collect()
    }

    /// The `Y` letter sequence.
    pub fn y_seq(&self) -> Vec<u8> {
        self.states.iter().map(|s| s.y).collect()
    }
}

fn draw_categorical(cum: &[f64], rng: &mut Stream) -> usize {
    let r: f64 = rng.random();
    // Inverse-CDF scan; the last bucket absorbs float slack in the total.
    for (i, &c) in cum.iter().enumerate() {
        if r < c {
            return i;
        }
    }
    cum.len() - 1
}

/// Sample a stationary chain of length `n`: `Z_1 ~ pi` and one-step
/// transitions by the rows of `p`. Deterministic given `seed`; the draws
/// come from sub-stream 0 of the seed, matching
/// [`sample_chain_with_stream`] on `task_stream(seed, 0)`.
pub fn sample_chain(
    p: &TransitionMatrix,
    pi: &StationaryDist,
    n: usize,
    seed: u64,
) -> Result<ChainSample> {
    let mut rng = task_stream(seed, 0);
    sample_chain_with_stream(p, pi, n, seed, &mut rng)
}

/// Sample a stationary chain from an explicit stream; `seed` is recorded as
/// provenance only.
pub fn sample_chain_with_stream(
    p: &TransitionMatrix,
    pi: &StationaryDist,
    n: usize,
    seed: u64,
    rng: &mut Stream,
) -> Result<ChainSample> {
    if n == 0 {
        return Err(Error::Domain("chain length must be >= 1".into()));
    }
    if pi.probs.len() != p.dim() {
        return Err(Error::LengthMismatch {
            left: pi.probs.len(),
            right: p.dim(),
        });
    }
    let sum: f64 = pi.probs.iter().sum();
    if (sum - 1.0).abs() > 1e-9 {
        return Err(Error::Domain(format!("initial distribution sums to {sum}")));
    }
    let dim = p.dim();
    let cum_pi: Vec<f64> = pi
        .probs
        .iter()
        .scan(0.0, |acc, &v| {
            *acc += v;
            Some(*acc)
        })
        .collect();
    let mut cum_rows = Vec::with_capacity(dim);
    for i in 0..dim {
        let mut acc = 0.0;
        cum_rows.push(
            p.row(i)
                .iter()
                .map(|&v| {
                    acc += v;
                    acc
                })
                .collect::<Vec<f64>>(),
        );
    }
    let mut states = Vec::with_capacity(n);
    let mut cur = draw_categorical(&cum_pi, rng);
    states.push(PairState::from_flat(cur, p.k()));
    for _ in 1..n {
        cur = draw_categorical(&cum_rows[cur], rng);
        states.push(PairState::from_flat(cur, p.k()));
    }
    Ok(ChainSample {
        states,
        seed,
        label: p.label().to_string(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn approx(a: f64, b: f64, tol: f64) -> bool {
        (a - b).abs() <= tol
    }

    #[test]
    fn ind_rows_are_marginal_products() {
        let p = build_ind(0.7, 0.7).unwrap();
        let s11 = PairState::new(1, 1).flat(2);
        let order = display_order(2);
        let row: Vec<f64> = order.iter().map(|&j| p.get(s11, j)).collect();
        for (got, want) in row.iter().zip([0.49, 0.21, 0.21, 0.09]) {
            assert!(approx(*got, want, 1e-15), "{got} vs {want}");
        }

        let p = build_ind(0.7, 0.4).unwrap();
        let s00 = PairState::new(0, 0).flat(2);
        let row: Vec<f64> = order.iter().map(|&j| p.get(s00, j)).collect();
        for (got, want) in row.iter().zip([0.16, 0.24, 0.24, 0.36]) {
            assert!(approx(*got, want, 1e-15), "{got} vs {want}");
        }
    }

    #[test]
    fn alphabet_requires_two_letters() {
        assert!(Alphabet::new(1).is_err());
        assert_eq!(Alphabet::new(4).unwrap().size(), 4);
        assert_eq!(build_ind(0.5, 0.5).unwrap().alphabet().size(), 2);
    }

    #[test]
    fn ind_rejects_boundary() {
        assert!(build_ind(0.0, 0.5).is_err());
        assert!(build_ind(0.5, 1.0).is_err());
    }

    #[test]
    fn max_matrix_matches_displayed_form() {
        let p = build_max(0.9, 0.7, 0.05).unwrap();
        let order = display_order(2);
        let rows: Vec<Vec<f64>> = order
            .iter()
            .map(|&i| order.iter().map(|&j| p.get(i, j)).collect())
            .collect();
        let want = [
            [0.85, 0.05, 0.05, 0.05],
            [0.7, 0.2, 0.0, 0.1],
            [0.7, 0.0, 0.2, 0.1],
            [0.65, 0.05, 0.05, 0.25],
        ];
        for (r, w) in rows.iter().zip(want.iter()) {
            for (a, b) in r.iter().zip(w.iter()) {
                assert!(approx(*a, *b, 1e-12), "{a} vs {b}");
            }
        }
    }

    #[test]
    fn max_rejects_bad_entries() {
        assert!(build_max(0.7, 0.9, 0.05).is_err()); // p < q
        assert!(build_max(0.9, 0.02, 0.05).is_err()); // q - eps < 0
    }

    #[test]
    fn min_matrix_cases() {
        let p = build_min(0.7, 0.7, 0.05).unwrap();
        let order = display_order(2);
        let row0: Vec<f64> = order.iter().map(|&j| p.get(order[0], j)).collect();
        for (a, b) in row0.iter().zip([0.45, 0.25, 0.25, 0.05]) {
            assert!(approx(*a, b, 1e-12));
        }
        // q < 1/2 variant
        let p = build_min(0.7, 0.4, 0.05).unwrap();
        let last: Vec<f64> = order.iter().map(|&j| p.get(order[3], j)).collect();
        for (a, b) in last.iter().zip([0.05, 0.35, 0.35, 0.25]) {
            assert!(approx(*a, b, 1e-12), "{a} vs {b}");
        }
        assert!(matches!(
            build_min(0.5, 0.5, 0.05),
            Err(Error::Unsupported(_))
        ));
    }

    #[test]
    fn general_equals_ind_at_independence_point() {
        let p = 0.7;
        let q = 0.4;
        let general = build_general(MarginalParams {
            p,
            q,
            p_dash: p,
            q_dash: q,
            lambda1: p,
            lambda2: q,
            mu1: p,
            mu2: q,
        })
        .unwrap();
        let ind = build_ind(p, q).unwrap();
        for (a, b) in general.entries().iter().zip(ind.entries()) {
            assert!(approx(*a, *b, 1e-12));
        }
    }

    #[test]
    fn general_uniform_point() {
        let g = build_general(MarginalParams {
            p: 0.5,
            q: 0.5,
            p_dash: 0.5,
            q_dash: 0.5,
            lambda1: 0.5,
            lambda2: 0.5,
            mu1: 0.5,
            mu2: 0.5,
        })
        .unwrap();
        for &e in g.entries() {
            assert!(approx(e, 0.25, 1e-12));
        }
    }

    #[test]
    fn general_max_dependence_point() {
        // lambda1 = 1, lambda2 = q/p, mu1 = mu2 = 1 gives the eps = 0
        // maximal-dependence matrix.
        let (p, q) = (0.9, 0.7);
        let g = build_general(MarginalParams {
            p,
            q,
            p_dash: p,
            q_dash: q,
            lambda1: 1.0,
            lambda2: q / p,
            mu1: 1.0,
            mu2: 1.0,
        })
        .unwrap();
        let m0 = build_max(p, q, 0.0).unwrap();
        for (a, b) in g.entries().iter().zip(m0.entries()) {
            assert!(approx(*a, *b, 1e-12), "{a} vs {b}");
        }
    }

    #[test]
    fn general_names_offending_parameter() {
        let err = build_general(MarginalParams {
            p: 0.9,
            q: 0.7,
            p_dash: 0.9,
            q_dash: 0.7,
            lambda1: 0.2, // below (p' + p - 1)/p = 0.888..
            lambda2: 0.7,
            mu1: 0.9,
            mu2: 0.7,
        })
        .unwrap_err();
        match err {
            Error::ConstraintViolation { parameter, .. } => assert_eq!(parameter, "lambda1"),
            other => panic!("unexpected error {other:?}"),
        }
    }

    #[test]
    fn lumpability_of_constructors() {
        for p in [
            build_ind(0.7, 0.4).unwrap(),
            build_max(0.9, 0.7, 0.05).unwrap(),
            build_min(0.7, 0.7, 0.05).unwrap(),
        ] {
            for part in [partition_by_x(2), partition_by_y(2)] {
                match check_lumpable(&p, &part).unwrap() {
                    LumpOutcome::Markov(_) => {}
                    LumpOutcome::Violation { state, block, .. } => {
                        panic!("{} not lumpable at ({state},{block})", p.label())
                    }
                }
            }
        }
    }

    #[test]
    fn lumped_max_matrix_is_the_marginal() {
        let p = build_max(0.9, 0.7, 0.05).unwrap();
        match check_lumpable(&p, &partition_by_x(2)).unwrap() {
            LumpOutcome::Markov(m) => {
                assert!(approx(m.rows[0][0], 0.9, 1e-12));
                assert!(approx(m.rows[0][1], 0.1, 1e-12));
                assert!(approx(m.rows[1][0], 0.7, 1e-12));
                assert!(approx(m.rows[1][1], 0.3, 1e-12));
            }
            _ => panic!("expected lumpable"),
        }
    }

    #[test]
    fn perturbed_matrix_fails_lumpability() {
        let p = build_ind(0.7, 0.4).unwrap();
        let mut entries = p.entries().to_vec();
        entries[1] += 1e-3;
        entries[2] -= 1e-3;
        let p2 = TransitionMatrix::from_entries(2, "broken", entries).unwrap();
        match check_lumpable(&p2, &partition_by_x(2)).unwrap() {
            // The perturbed row is flat state 0; the mismatch surfaces within
            // its block, whichever member is compared against the block rep.
            LumpOutcome::Violation { state, .. } => assert!(state == 0 || state == 1),
            _ => panic!("expected violation"),
        }
    }

    #[test]
    fn stationary_uniform() {
        let dim = 4;
        let p =
            TransitionMatrix::from_entries(2, "uniform", vec![0.25; dim * dim]).unwrap();
        let pi = stationary(&p).unwrap();
        for &v in &pi.probs {
            assert!(approx(v, 0.25, 1e-12));
        }
    }

    #[test]
    fn stationary_of_max_model() {
        let p = build_max(0.9, 0.7, 0.05).unwrap();
        let pi = stationary(&p).unwrap();
        let v = pi.prob(PairState::new(1, 1), 2);
        assert!(approx(v, 0.819444444444, 1e-9), "{v}");
        assert!(pi.residual(&p) <= STATIONARY_TOL);
    }

    #[test]
    fn stationary_of_min_model() {
        let p = build_min(0.7, 0.7, 0.05).unwrap();
        let pi = stationary(&p).unwrap();
        let v = pi.prob(PairState::new(0, 1), 2);
        assert!(approx(v, 0.277777777778, 1e-9), "{v}");
    }

    #[test]
    fn primitivity_cases() {
        let p = TransitionMatrix::from_entries(2, "uniform", vec![0.25; 16]).unwrap();
        let (m, po) = primitivity_index(&p).unwrap();
        assert_eq!(m, 1);
        assert!(approx(po, 0.25, 1e-15));

        let p = build_max(0.9, 0.7, 0.05).unwrap();
        let (m, po) = primitivity_index(&p).unwrap();
        assert_eq!(m, 2);
        assert!(approx(po, 0.04, 1e-12), "{po}");

        // 4-cycle permutation is periodic, hence not primitive.
        let mut entries = vec![0.0; 16];
        for i in 0..4 {
            entries[i * 4 + (i + 1) % 4] = 1.0;
        }
        let p = TransitionMatrix::from_entries(2, "cycle", entries).unwrap();
        assert!(matches!(
            primitivity_index(&p),
            Err(Error::NotPrimitive { .. })
        ));
    }

    #[test]
    fn mixing_bound_cases() {
        let p = TransitionMatrix::from_entries(2, "uniform", vec![0.25; 16]).unwrap();
        let b = mixing_time_bound(&p, 0.25).unwrap();
        assert!(b.exact_mixing);
        assert_eq!(b.t_mix, 1.0);

        let p = build_max(0.9, 0.7, 0.05).unwrap();
        let b = mixing_time_bound(&p, 0.25).unwrap();
        assert!(!b.exact_mixing);
        assert!(b.t_mix > 1.0 && b.t_mix.is_finite());
        assert!(approx(b.t_mix, 17.903, 2e-3), "{}", b.t_mix);

        // eps = 1 makes the raw bound nonpositive; it is clamped to 1.
        let b = mixing_time_bound(&p, 1.0).unwrap();
        assert!(b.t_eps >= 1.0);
    }

    #[test]
    fn sample_chain_is_reproducible() {
        let p = build_max(0.9, 0.7, 0.05).unwrap();
        let pi = stationary(&p).unwrap();
        let a = sample_chain(&p, &pi, 500, 7).unwrap();
        let b = sample_chain(&p, &pi, 500, 7).unwrap();
        assert_eq!(a, b);
        let c = sample_chain(&p, &pi, 500, 8).unwrap();
        assert_ne!(a, c);
        let single = sample_chain(&p, &pi, 1, 3).unwrap();
        assert_eq!(single.len(), 1);
    }

    #[test]
    fn sample_chain_frequency_matches_stationary() {
        let p = build_ind(0.7, 0.7).unwrap();
        let pi = stationary(&p).unwrap();
        let n = 1_000_000;
        let z = sample_chain(&p, &pi, n, 12345).unwrap();
        let mut counts = [0usize; 4];
        for s in &z.states {
            counts[s.flat(2)] += 1;
        }
        let f11 = counts[PairState::new(1, 1).flat(2)] as f64 / n as f64;
        assert!(approx(f11, 0.49, 0.01), "{f11}");
        // Chi-square sanity against pi; the threshold is generous because
        // consecutive samples are correlated, which inflates the statistic.
        let chi2: f64 = (0..4)
            .map(|i| {
                let e = pi.probs[i] * n as f64;
                let d = counts[i] as f64 - e;
                d * d / e
            })
            .sum();
        assert!(chi2 < 100.0, "chi2 = {chi2}");
    }

    #[test]
    fn json_round_trip_uses_display_order() {
        let p = build_max(0.9, 0.7, 0.05).unwrap();
        let text = p.to_json();
        let parsed: serde_json::Value = serde_json::from_str(&text).unwrap();
        let entries = parsed["entries"].as_array().unwrap();
        // First displayed row belongs to state (1,1).
        assert!(approx(entries[0].as_f64().unwrap(), 0.85, 1e-12));
        assert!(approx(entries[3].as_f64().unwrap(), 0.05, 1e-12));
        let back = TransitionMatrix::from_json(&text).unwrap();
        assert_eq!(back, p);
    }
}
