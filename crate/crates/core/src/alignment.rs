//! Global alignment scores.
//!
//! `score` implements the general optimal-alignment value: the maximum over
//! monotone matchings of the summed pair scores plus a flat gap price per
//! unaligned position. `lcs` is the 0/1 special case. [`LcsEngine`] is the
//! bit-parallel kernel used in the simulation hot loop: it sweeps the
//! dynamic-programming table in expanding square prefixes, stores periodic
//! boundary checkpoints, and recomputes the score after a single pair
//! substitution at position `t` in `O((n - t) * n / w)` word operations.

use crate::error::{Error, Result};
use crate::markov::{ChainSample, PairState};

/// Pairwise scoring scheme: a nonnegative `k x k` score table and a flat
/// gap price per unaligned position.
#[derive(Debug, Clone, PartialEq)]
pub struct ScoringScheme {
    k: usize,
    table: Vec<f64>,
    delta: f64,
}

impl ScoringScheme {
    pub fn new(k: usize, table: Vec<f64>, delta: f64) -> Result<Self> {
        if table.len() != k * k {
            return Err(Error::ConstraintViolation {
                parameter: "table".into(),
                detail: format!("expected {} entries, got {}", k * k, table.len()),
            });
        }
        if let Some(v) = table.iter().find(|v| **v < 0.0 || !v.is_finite()) {
            return Err(Error::ConstraintViolation {
                parameter: "table".into(),
                detail: format!("scores must be finite and nonnegative, got {v}"),
            });
        }
        Ok(ScoringScheme { k, table, delta })
    }

    /// The LCS scheme: score 1 for equal letters, 0 otherwise, zero gap price.
    pub fn lcs(k: usize) -> Self {
        let mut table = vec![0.0; k * k];
        for i in 0..k {
            table[i * k + i] = 1.0;
        }
        ScoringScheme { k, table, delta: 0.0 }
    }

    pub fn k(&self) -> usize {
        self.k
    }

    pub fn delta(&self) -> f64 {
        self.delta
    }

    pub fn score_pair(&self, a: u8, b: u8) -> f64 {
        self.table[a as usize * self.k + b as usize]
    }

    /// True when the scheme is exactly the 0/1 matching table with zero gap
    /// price, so integer LCS kernels apply.
    pub fn is_lcs(&self) -> bool {
        self.delta == 0.0
            && (0..self.k).all(|i| {
                (0..self.k).all(|j| self.table[i * self.k + j] == if i == j { 1.0 } else { 0.0 })
            })
    }
}

/// Largest score change from altering one letter:
/// `max |S(u,v) - S(u,w)|` over letters `u, v, w`.
pub fn delta_max(scheme: &ScoringScheme) -> f64 {
    let k = scheme.k;
    let mut worst: f64 = 0.0;
    for u in 0..k {
        let row = &scheme.table[u * k..(u + 1) * k];
        let hi = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let lo = row.iter().cloned().fold(f64::INFINITY, f64::min);
        worst = worst.max(hi - lo);
    }
    worst
}

fn check_lengths(x: &[u8], y: &[u8]) -> Result<()> {
    if x.len() != y.len() {
        return Err(Error::LengthMismatch {
            left: x.len(),
            right: y.len(),
        });
    }
    Ok(())
}

/// Optimal global alignment score of `x` against `y`.
///
/// Rewriting the gap term as `delta * n - delta * (aligned pairs)` turns the
/// problem into a max-weight monotone matching with pair weights
/// `S(a,b) - delta`, solved by the standard quadratic recursion over prefix
/// pairs with two rolling rows.
pub fn score(x: &[u8], y: &[u8], scheme: &ScoringScheme) -> Result<f64> {
    check_lengths(x, y)?;
    let n = x.len();
    if n == 0 {
        return Ok(0.0);
    }
    let mut prev = vec![0.0f64; n + 1];
    let mut cur = vec![0.0f64; n + 1];
    for i in 1..=n {
        cur[0] = 0.0;
        let xi = x[i - 1];
        for j in 1..=n {
            let matched = prev[j - 1] + scheme.score_pair(xi, y[j - 1]) - scheme.delta;
            cur[j] = prev[j].max(cur[j - 1]).max(matched);
        }
        std::mem::swap(&mut prev, &mut cur);
    }
    Ok(scheme.delta * n as f64 + prev[n])
}

/// Length of the longest common subsequence (reference quadratic DP).
pub fn lcs(x: &[u8], y: &[u8]) -> Result<usize> {
    check_lengths(x, y)?;
    let n = x.len();
    let mut prev = vec![0u32; n + 1];
    let mut cur = vec![0u32; n + 1];
    for i in 1..=n {
        cur[0] = 0;
        let xi = x[i - 1];
        for j in 1..=n {
            cur[j] = if xi == y[j - 1] {
                prev[j - 1] + 1
            } else {
                prev[j].max(cur[j - 1])
            };
        }
        std::mem::swap(&mut prev, &mut cur);
    }
    Ok(prev[n] as usize)
}

/// Bit-parallel LCS of two equal-length sequences.
pub fn lcs_fast(x: &[u8], y: &[u8]) -> Result<usize> {
    let mut engine = LcsEngine::new(x, y)?;
    engine.run(None);
    Ok(engine.full_len())
}

/// Bit-parallel LCS that also returns the checkpointed engine, ready for
/// substitution re-scoring.
pub fn lcs_fast_with_checkpoints(
    x: &[u8],
    y: &[u8],
    spacing: Option<usize>,
) -> Result<(usize, LcsEngine)> {
    let mut engine = LcsEngine::new(x, y)?;
    engine.run(spacing);
    Ok((engine.full_len(), engine))
}

/// Score of `z` with the pair at 1-based position `t` replaced (in both
/// coordinates) by `new_pair`.
pub fn score_with_substitution(
    z: &ChainSample,
    t: usize,
    new_pair: PairState,
    scheme: &ScoringScheme,
) -> Result<f64> {
    let n = z.len();
    if t == 0 || t > n {
        return Err(Error::IndexOutOfRange { index: t, len: n });
    }
    let mut x = z.x_seq();
    let mut y = z.y_seq();
    x[t - 1] = new_pair.x;
    y[t - 1] = new_pair.y;
    if scheme.is_lcs() {
        Ok(lcs(&x, &y)? as f64)
    } else {
        score(&x, &y, scheme)
    }
}

// ---------------------------------------------------------------------------
// Bit-parallel engine
// ---------------------------------------------------------------------------

const WORD: usize = 64;

fn words_for(bits: usize) -> usize {
    bits.div_ceil(WORD)
}

/// One increment-vector update of the bit-parallel LCS recursion: processes
/// a single text character (match mask over the pattern in `mask`) against
/// the first `bits` pattern positions and returns the number of set bits
/// afterwards. Set bits mark pattern positions with *no* vertical increment,
/// so the LCS of (pattern prefix, text so far) equals `bits - ones`.
fn step_update(v: &mut [u64], mask: &[u64], bits: usize) -> u32 {
    let nw = words_for(bits);
    let tail = bits % WORD;
    let mut carry = 0u64;
    let mut borrow = 0u64;
    let mut ones = 0u32;
    for w in 0..nw {
        let mut mw = mask[w];
        if w == nw - 1 && tail != 0 {
            mw &= (1u64 << tail) - 1;
        }
        let vw = v[w];
        let u = vw & mw;
        let (a1, c1) = vw.overflowing_add(u);
        let (a2, c2) = a1.overflowing_add(carry);
        carry = (c1 | c2) as u64;
        let (s1, b1) = vw.overflowing_sub(u);
        let (s2, b2) = s1.overflowing_sub(borrow);
        borrow = (b1 | b2) as u64;
        let nv = a2 | s2;
        v[w] = nv;
        ones += if w == nw - 1 && tail != 0 {
            (nv & ((1u64 << tail) - 1)).count_ones()
        } else {
            nv.count_ones()
        };
    }
    ones
}

fn assign_bit(v: &mut [u64], idx: usize, one: bool) {
    let w = idx / WORD;
    let b = 1u64 << (idx % WORD);
    if one {
        v[w] |= b;
    } else {
        v[w] &= !b;
    }
}

/// Boundary state of the DP at one square prefix.
#[derive(Debug, Clone)]
struct Checkpoint {
    square: usize,
    vx: Vec<u64>,
    vy: Vec<u64>,
}

/// Checkpointed bit-parallel LCS kernel for one `(x, y)` pair.
///
/// The DP table over prefix pairs is swept as expanding squares
/// `(x[..s], y[..s])`. Two increment vectors are maintained: `vx` along the
/// `y` axis (pattern `y`, text `x`) and `vy` along the `x` axis (pattern
/// `x`, text `y`). After square `s` both encode the boundary row/column of
/// the `s x s` table, and the diagonal value `L(s, s)` is recorded for every
/// `s`, so every prefix LCS of the grid comes out of a single forward pass.
///
/// Letters are `u8`; per-letter match masks keep the alphabet bound at 256.
#[derive(Debug)]
pub struct LcsEngine {
    n: usize,
    x: Vec<u8>,
    y: Vec<u8>,
    masks_x: Vec<Vec<u64>>,
    masks_y: Vec<Vec<u64>>,
    spacing: usize,
    diag: Vec<u32>,
    checkpoints: Vec<Checkpoint>,
    // replay scratch, reused across substitutions
    svx: Vec<u64>,
    svy: Vec<u64>,
    smx: Vec<Vec<u64>>,
    smy: Vec<Vec<u64>>,
}

fn build_masks(seq: &[u8], nw: usize, letters: usize) -> Vec<Vec<u64>> {
    let mut masks = vec![vec![0u64; nw]; letters];
    for (i, &c) in seq.iter().enumerate() {
        masks[c as usize][i / WORD] |= 1u64 << (i % WORD);
    }
    masks
}

impl LcsEngine {
    pub fn new(x: &[u8], y: &[u8]) -> Result<Self> {
        check_lengths(x, y)?;
        let n = x.len();
        let nw = words_for(n).max(1);
        let letters = x
            .iter()
            .chain(y.iter())
            .copied()
            .max()
            .map_or(1, |m| m as usize + 1);
        Ok(LcsEngine {
            n,
            x: x.to_vec(),
            y: y.to_vec(),
            masks_x: build_masks(x, nw, letters),
            masks_y: build_masks(y, nw, letters),
            spacing: usize::MAX,
            diag: Vec::new(),
            checkpoints: Vec::new(),
            svx: vec![0; nw],
            svy: vec![0; nw],
            smx: Vec::new(),
            smy: Vec::new(),
        })
    }

    /// Forward pass over all squares. `spacing` controls how often boundary
    /// checkpoints are stored; `None` picks `ceil(sqrt(n))`, balancing
    /// checkpoint memory against replay cost.
    pub fn run(&mut self, spacing: Option<usize>) {
        let n = self.n;
        self.spacing = spacing
            .unwrap_or_else(|| (n as f64).sqrt().ceil() as usize)
            .max(1);
        let nw = words_for(n).max(1);
        let mut vx = vec![0u64; nw];
        let mut vy = vec![0u64; nw];
        let mut d: u32 = 0;
        self.diag = vec![0; n + 1];
        self.checkpoints.clear();
        for s in 0..n {
            let a = self.x[s];
            let b = self.y[s];
            d = Self::advance(&mut vx, &mut vy, d, s, a, b, &self.masks_x, &self.masks_y);
            self.diag[s + 1] = d;
            if (s + 1) % self.spacing == 0 && s + 1 < n {
                let w = words_for(s + 1);
                self.checkpoints.push(Checkpoint {
                    square: s + 1,
                    vx: vx[..w].to_vec(),
                    vy: vy[..w].to_vec(),
                });
            }
        }
    }

    /// Advance the boundary state from square `s` to square `s + 1`, where
    /// the new letters are `a = x[s]`, `b = y[s]`. Returns the new diagonal.
    #[allow(clippy::too_many_arguments)]
    #[inline]
    fn advance(
        vx: &mut [u64],
        vy: &mut [u64],
        d: u32,
        s: usize,
        a: u8,
        b: u8,
        masks_x: &[Vec<u64>],
        masks_y: &[Vec<u64>],
    ) -> u32 {
        // Row step: consume text char `a` against pattern y[..s].
        let row_end = if s == 0 {
            0
        } else {
            let ones = step_update(vx, &masks_y[a as usize], s);
            s as u32 - ones
        };
        // New pattern position x[s] for the column vector: set iff no
        // increment, i.e. L(s+1, s) == L(s, s).
        assign_bit(vy, s, row_end == d);
        // Column step: consume text char `b` against pattern x[..s+1].
        let ones = step_update(vy, &masks_x[b as usize], s + 1);
        let d_new = (s + 1) as u32 - ones;
        // New pattern position y[s] for the row vector.
        assign_bit(vx, s, d_new == row_end);
        d_new
    }

    /// LCS of the full pair. Valid after [`LcsEngine::run`].
    pub fn full_len(&self) -> usize {
        self.diag[self.n] as usize
    }

    /// LCS of the square prefix `(x[..s], y[..s])`.
    pub fn prefix_len(&self, s: usize) -> usize {
        self.diag[s] as usize
    }

    /// LCS of the prefix up to `target` after substituting the pair at
    /// 1-based position `t` by letters `(nx, ny)`.
    ///
    /// Replays the forward sweep from the last stored checkpoint below `t`
    /// with the match masks patched at position `t`; squares before the
    /// substitution are unaffected by construction.
    pub fn substituted_prefix_len(
        &mut self,
        t: usize,
        nx: u8,
        ny: u8,
        target: usize,
    ) -> Result<usize> {
        let n = self.n;
        if t == 0 || t > n {
            return Err(Error::IndexOutOfRange { index: t, len: n });
        }
        if target > n {
            return Err(Error::IndexOutOfRange {
                index: target,
                len: n,
            });
        }
        if self.diag.len() != n + 1 {
            return Err(Error::PreconditionViolated(
                "LcsEngine::run must be called before substitutions".into(),
            ));
        }
        if target < t {
            return Ok(self.diag[target] as usize);
        }
        // Locate the last checkpoint at or below t - 1.
        let mut start = 0usize;
        let mut d: u32 = 0;
        self.svx.iter_mut().for_each(|w| *w = 0);
        self.svy.iter_mut().for_each(|w| *w = 0);
        for cp in self.checkpoints.iter().rev() {
            if cp.square < t {
                start = cp.square;
                d = self.diag[cp.square];
                self.svx[..cp.vx.len()].copy_from_slice(&cp.vx);
                self.svy[..cp.vy.len()].copy_from_slice(&cp.vy);
                break;
            }
        }
        // Patch the letter masks at position t - 1.
        let (ox, oy) = (self.x[t - 1], self.y[t - 1]);
        Self::patch_masks(&mut self.smx, &self.masks_x, t - 1, ox, nx);
        Self::patch_masks(&mut self.smy, &self.masks_y, t - 1, oy, ny);
        let (smx, smy) = (&self.smx, &self.smy);
        for s in start..target {
            let a = if s + 1 == t { nx } else { self.x[s] };
            let b = if s + 1 == t { ny } else { self.y[s] };
            d = Self::advance(&mut self.svx, &mut self.svy, d, s, a, b, smx, smy);
        }
        Ok(d as usize)
    }

    fn patch_masks(dst: &mut Vec<Vec<u64>>, src: &[Vec<u64>], pos: usize, old: u8, new: u8) {
        let letters = src.len().max(new as usize + 1);
        let nw = src[0].len();
        dst.resize_with(letters, || vec![0u64; nw]);
        for (d, s) in dst.iter_mut().zip(src.iter()) {
            d.copy_from_slice(s);
        }
        for d in dst.iter_mut().skip(src.len()) {
            d.iter_mut().for_each(|w| *w = 0);
        }
        if old != new {
            dst[old as usize][pos / WORD] &= !(1u64 << (pos % WORD));
            dst[new as usize][pos / WORD] |= 1u64 << (pos % WORD);
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::markov::{build_max, sample_chain, stationary};
    use crate::rng::task_stream;
    use rand::Rng;

    /// Exhaustive oracle: longest common subsequence by enumerating every
    /// subsequence of `x` and testing it against `y`. Exponential; n <= 12.
    fn lcs_enumeration_oracle(x: &[u8], y: &[u8]) -> usize {
        fn is_subseq(needle: &[u8], hay: &[u8]) -> bool {
            let mut it = hay.iter();
            needle.iter().all(|c| it.any(|h| h == c))
        }
        let n = x.len();
        let mut best = 0;
        for mask in 0u32..(1 << n) {
            let sub: Vec<u8> = (0..n).filter(|i| mask >> i & 1 == 1).map(|i| x[i]).collect();
            if sub.len() > best && is_subseq(&sub, y) {
                best = sub.len();
            }
        }
        best
    }

    /// Brute-force optimal alignment score over all monotone matchings.
    fn score_bruteforce(x: &[u8], y: &[u8], scheme: &ScoringScheme) -> f64 {
        fn rec(x: &[u8], y: &[u8], i: usize, j: usize, scheme: &ScoringScheme) -> f64 {
            if i == x.len() || j == y.len() {
                return 0.0;
            }
            let skip_i = rec(x, y, i + 1, j, scheme);
            let skip_j = rec(x, y, i, j + 1, scheme);
            let pair =
                rec(x, y, i + 1, j + 1, scheme) + scheme.score_pair(x[i], y[j]) - scheme.delta;
            skip_i.max(skip_j).max(pair)
        }
        scheme.delta * x.len() as f64 + rec(x, y, 0, 0, scheme)
    }

    fn random_seq(n: usize, k: u8, rng: &mut crate::rng::Stream) -> Vec<u8> {
        (0..n).map(|_| rng.random_range(0..k)).collect()
    }

    #[test]
    fn lcs_matches_enumeration_oracle() {
        let mut rng = task_stream(101, 0);
        for _ in 0..300 {
            let n = rng.random_range(0..=10);
            let x = random_seq(n, 2, &mut rng);
            let y = random_seq(n, 2, &mut rng);
            assert_eq!(lcs(&x, &y).unwrap(), lcs_enumeration_oracle(&x, &y));
        }
        for _ in 0..100 {
            let n = rng.random_range(0..=9);
            let x = random_seq(n, 3, &mut rng);
            let y = random_seq(n, 3, &mut rng);
            assert_eq!(lcs(&x, &y).unwrap(), lcs_enumeration_oracle(&x, &y));
        }
    }

    #[test]
    fn lcs_trivial_cases() {
        let x = vec![1, 1, 0, 1];
        assert_eq!(lcs(&x, &x).unwrap(), 4);
        assert_eq!(lcs(&[0, 0, 0], &[1, 1, 1]).unwrap(), 0);
        // Frozen from the enumeration oracle.
        assert_eq!(lcs(&[1, 1, 0, 1], &[1, 0, 0, 1]).unwrap(), 3);
        assert!(matches!(
            lcs(&[1], &[1, 0]),
            Err(Error::LengthMismatch { .. })
        ));
    }

    #[test]
    fn score_matches_bruteforce() {
        let lcs_scheme = ScoringScheme::lcs(2);
        let table = ScoringScheme::new(2, vec![0.0, 3.0, 1.0, 1.0], -0.5).unwrap();
        let mut rng = task_stream(102, 0);
        for _ in 0..200 {
            let n = rng.random_range(0..=7);
            let x = random_seq(n, 2, &mut rng);
            let y = random_seq(n, 2, &mut rng);
            for scheme in [&lcs_scheme, &table] {
                let got = score(&x, &y, scheme).unwrap();
                let want = score_bruteforce(&x, &y, scheme);
                assert!((got - want).abs() < 1e-12, "{x:?} {y:?}: {got} vs {want}");
            }
        }
    }

    #[test]
    fn score_equals_lcs_for_lcs_scheme() {
        let scheme = ScoringScheme::lcs(2);
        let mut rng = task_stream(103, 0);
        for _ in 0..100 {
            let n = rng.random_range(0..=40);
            let x = random_seq(n, 2, &mut rng);
            let y = random_seq(n, 2, &mut rng);
            assert_eq!(score(&x, &y, &scheme).unwrap(), lcs(&x, &y).unwrap() as f64);
        }
    }

    #[test]
    fn delta_max_cases() {
        assert_eq!(delta_max(&ScoringScheme::lcs(2)), 1.0);
        let constant = ScoringScheme::new(2, vec![2.0; 4], 0.0).unwrap();
        assert_eq!(delta_max(&constant), 0.0);
        let s = ScoringScheme::new(2, vec![0.0, 3.0, 1.0, 1.0], 0.0).unwrap();
        assert_eq!(delta_max(&s), 3.0);
    }

    #[test]
    fn engine_matches_reference_dp() {
        let mut rng = task_stream(104, 0);
        // All binary pairs up to n = 7 here; the exhaustive n <= 10 sweep
        // lives in the integration suite.
        for n in 0..=7usize {
            for xm in 0..(1u32 << n) {
                for ym in 0..(1u32 << n) {
                    let x: Vec<u8> = (0..n).map(|i| (xm >> i & 1) as u8).collect();
                    let y: Vec<u8> = (0..n).map(|i| (ym >> i & 1) as u8).collect();
                    assert_eq!(lcs_fast(&x, &y).unwrap(), lcs(&x, &y).unwrap());
                }
            }
        }
        // Word-boundary lengths and larger random cases.
        for n in [63usize, 64, 65, 127, 128, 129, 500] {
            for _ in 0..8 {
                let x = random_seq(n, 2, &mut rng);
                let y = random_seq(n, 2, &mut rng);
                assert_eq!(lcs_fast(&x, &y).unwrap(), lcs(&x, &y).unwrap());
            }
        }
    }

    #[test]
    fn engine_prefixes_match_reference() {
        let mut rng = task_stream(105, 0);
        let n = 130;
        let x = random_seq(n, 2, &mut rng);
        let y = random_seq(n, 2, &mut rng);
        let mut engine = LcsEngine::new(&x, &y).unwrap();
        engine.run(Some(17));
        for s in 0..=n {
            assert_eq!(engine.prefix_len(s), lcs(&x[..s], &y[..s]).unwrap());
        }
    }

    #[test]
    fn engine_substitution_matches_full_recompute() {
        let mut rng = task_stream(106, 0);
        for n in [1usize, 2, 9, 64, 65, 200] {
            let x = random_seq(n, 2, &mut rng);
            let y = random_seq(n, 2, &mut rng);
            let mut engine = LcsEngine::new(&x, &y).unwrap();
            engine.run(None);
            for _ in 0..30 {
                let t = rng.random_range(1..=n);
                let nx = rng.random_range(0..2u8);
                let ny = rng.random_range(0..2u8);
                let target = rng.random_range(t..=n);
                let got = engine.substituted_prefix_len(t, nx, ny, target).unwrap();
                let mut x2 = x.clone();
                let mut y2 = y.clone();
                x2[t - 1] = nx;
                y2[t - 1] = ny;
                let want = lcs(&x2[..target], &y2[..target]).unwrap();
                assert_eq!(got, want, "n={n} t={t} target={target}");
            }
        }
    }

    #[test]
    fn checkpointed_constructor_round_trip() {
        let mut rng = task_stream(110, 0);
        let n = 90;
        let x = random_seq(n, 2, &mut rng);
        let y = random_seq(n, 2, &mut rng);
        let (len, mut engine) = lcs_fast_with_checkpoints(&x, &y, Some(9)).unwrap();
        assert_eq!(len, lcs(&x, &y).unwrap());
        let got = engine.substituted_prefix_len(n / 2, 1, 1, n).unwrap();
        let mut xs = x.clone();
        let mut ys = y.clone();
        xs[n / 2 - 1] = 1;
        ys[n / 2 - 1] = 1;
        assert_eq!(got, lcs(&xs, &ys).unwrap());
    }

    #[test]
    fn substitution_at_last_position_equals_full_recompute() {
        let mut rng = task_stream(107, 0);
        let n = 120;
        let x = random_seq(n, 2, &mut rng);
        let y = random_seq(n, 2, &mut rng);
        let mut engine = LcsEngine::new(&x, &y).unwrap();
        engine.run(Some(11));
        let got = engine.substituted_prefix_len(n, 1, 0, n).unwrap();
        let mut x2 = x.clone();
        let mut y2 = y.clone();
        x2[n - 1] = 1;
        y2[n - 1] = 0;
        assert_eq!(got, lcs(&x2, &y2).unwrap());
    }

    #[test]
    fn score_with_substitution_bounded_by_two_delta() {
        let p = build_max(0.9, 0.7, 0.05).unwrap();
        let pi = stationary(&p).unwrap();
        let z = sample_chain(&p, &pi, 150, 9).unwrap();
        let scheme = ScoringScheme::lcs(2);
        let base = score(&z.x_seq(), &z.y_seq(), &scheme).unwrap();
        let mut rng = task_stream(108, 0);
        for _ in 0..200 {
            let t = rng.random_range(1..=z.len());
            let np = PairState::new(rng.random_range(0..2), rng.random_range(0..2));
            let s = score_with_substitution(&z, t, np, &scheme).unwrap();
            let d = s - base;
            assert!((-2.0..=2.0).contains(&d), "difference {d}");
            if np == z.states[t - 1] {
                assert_eq!(s, base);
            }
        }
        assert!(matches!(
            score_with_substitution(&z, 0, PairState::new(0, 0), &scheme),
            Err(Error::IndexOutOfRange { .. })
        ));
    }

    #[test]
    fn superadditivity_on_random_splits() {
        let p = build_max(0.9, 0.7, 0.05).unwrap();
        let pi = stationary(&p).unwrap();
        let mut rng = task_stream(109, 0);
        for trial in 0..20 {
            let z = sample_chain(&p, &pi, 200, 200 + trial).unwrap();
            let x = z.x_seq();
            let y = z.y_seq();
            let cut = rng.random_range(1..z.len());
            let whole = lcs(&x, &y).unwrap();
            let left = lcs(&x[..cut], &y[..cut]).unwrap();
            let right = lcs(&x[cut..], &y[cut..]).unwrap();
            assert!(whole >= left + right);
        }
    }
}
