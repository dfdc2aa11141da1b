//! Python bindings: the model family, alignment scores, triplet counters,
//! transformation gain curves, bound reports, and the enumeration checks.
//!
//! Pair states cross the boundary as `(x, y)` tuples, patterns as
//! `((ax, ay), (bx, by), (dx, dy))` tuples, and reports as JSON-compatible
//! dicts (serialized through the crate's canonical report types).

use pyo3::exceptions::PyValueError;
use pyo3::prelude::*;
use pyo3::types::PyDict;

use pmclab_core::alignment::{self, ScoringScheme};
use pmclab_core::counters::{self, TripletPattern};
use pmclab_core::experiments::{self, EmConfig, MGrid};
use pmclab_core::markov::{self, PairState, TransitionMatrix as CoreMatrix};
use pmclab_core::oracle;
use pmclab_core::transform;

fn err<E: std::fmt::Display>(e: E) -> PyErr {
    PyValueError::new_err(e.to_string())
}

type Pair = (u8, u8);
type Pattern = (Pair, Pair, Pair);

fn pair(p: Pair) -> PairState {
    PairState::new(p.0, p.1)
}

fn pattern(p: Pattern) -> TripletPattern {
    TripletPattern::new(pair(p.0), pair(p.1), pair(p.2))
}

fn json_to_py(py: Python<'_>, text: &str) -> PyResult<Py<PyAny>> {
    let json = py.import("json")?;
    let obj = json.call_method1("loads", (text,))?;
    Ok(obj.unbind())
}

/// Row-stochastic transition matrix over the pair alphabet.
#[pyclass(name = "TransitionMatrix", skip_from_py_object)]
#[derive(Clone)]
struct PyTransitionMatrix {
    inner: CoreMatrix,
}

#[pymethods]
impl PyTransitionMatrix {
    /// Independent chains with common marginal rows (p, 1-p; q, 1-q).
    #[staticmethod]
    fn ind(p: f64, q: f64) -> PyResult<Self> {
        Ok(Self {
            inner: markov::build_ind(p, q).map_err(err)?,
        })
    }

    /// Nearly maximal-dependence model.
    #[staticmethod]
    fn max(p: f64, q: f64, eps: f64) -> PyResult<Self> {
        Ok(Self {
            inner: markov::build_max(p, q, eps).map_err(err)?,
        })
    }

    /// Minimal-dependence model (requires p + q > 1).
    #[staticmethod]
    fn min(p: f64, q: f64, eps: f64) -> PyResult<Self> {
        Ok(Self {
            inner: markov::build_min(p, q, eps).map_err(err)?,
        })
    }

    /// General four-parameter family.
    #[staticmethod]
    #[allow(clippy::too_many_arguments)]
    fn general(
        p: f64,
        q: f64,
        p_dash: f64,
        q_dash: f64,
        lambda1: f64,
        lambda2: f64,
        mu1: f64,
        mu2: f64,
    ) -> PyResult<Self> {
        Ok(Self {
            inner: markov::build_general(markov::MarginalParams {
                p,
                q,
                p_dash,
                q_dash,
                lambda1,
                lambda2,
                mu1,
                mu2,
            })
            .map_err(err)?,
        })
    }

    #[staticmethod]
    fn from_json(text: &str) -> PyResult<Self> {
        Ok(Self {
            inner: CoreMatrix::from_json(text).map_err(err)?,
        })
    }

    fn to_json(&self) -> String {
        self.inner.to_json()
    }

    #[getter]
    fn label(&self) -> String {
        self.inner.label().to_string()
    }

    #[getter]
    fn k(&self) -> usize {
        self.inner.k()
    }

    /// Entries as a nested list in display order.
    fn rows(&self) -> Vec<Vec<f64>> {
        let order = markov::display_order(self.inner.k());
        order
            .iter()
            .map(|&i| order.iter().map(|&j| self.inner.get(i, j)).collect())
            .collect()
    }

    /// Stationary distribution in display order.
    fn stationary(&self) -> PyResult<Vec<f64>> {
        let pi = markov::stationary(&self.inner).map_err(err)?;
        Ok(markov::display_order(self.inner.k())
            .iter()
            .map(|&i| pi.probs[i])
            .collect())
    }

    /// Primitivity lag and the minimum entry of that matrix power.
    fn primitivity_index(&self) -> PyResult<(usize, f64)> {
        markov::primitivity_index(&self.inner).map_err(err)
    }

    /// Mixing-time bound data as a dict.
    fn mixing_bound(&self, py: Python<'_>, eps: f64) -> PyResult<Py<PyAny>> {
        let b = markov::mixing_time_bound(&self.inner, eps).map_err(err)?;
        json_to_py(py, &serde_json::to_string(&b).map_err(err)?)
    }

    /// Sample a stationary chain; returns a list of (x, y) tuples.
    fn sample_chain(&self, n: usize, seed: u64) -> PyResult<Vec<Pair>> {
        let pi = markov::stationary(&self.inner).map_err(err)?;
        let z = markov::sample_chain(&self.inner, &pi, n, seed).map_err(err)?;
        Ok(z.states.iter().map(|s| (s.x, s.y)).collect())
    }

    /// Conditional middle probability q of a pattern.
    fn q_of(&self, pat: Pattern) -> PyResult<f64> {
        counters::q_of(&self.inner, &pattern(pat)).map_err(err)
    }

    /// Triplet density constant (alpha, alpha_n) of a pattern.
    fn alpha_of(&self, pat: Pattern, n: usize) -> PyResult<(f64, f64)> {
        let pi = markov::stationary(&self.inner).map_err(err)?;
        counters::alpha_of(&self.inner, &pi, &pattern(pat), n).map_err(err)
    }

    fn __repr__(&self) -> String {
        format!(
            "TransitionMatrix(label='{}', k={})",
            self.inner.label(),
            self.inner.k()
        )
    }
}

/// Length of the longest common subsequence (bit-parallel kernel).
#[pyfunction]
fn lcs(x: Vec<u8>, y: Vec<u8>) -> PyResult<usize> {
    alignment::lcs_fast(&x, &y).map_err(err)
}

/// Optimal global alignment score for a score table and gap price.
#[pyfunction]
fn score(x: Vec<u8>, y: Vec<u8>, k: usize, table: Vec<f64>, delta: f64) -> PyResult<f64> {
    let scheme = ScoringScheme::new(k, table, delta).map_err(err)?;
    alignment::score(&x, &y, &scheme).map_err(err)
}

/// Triplet counter summary of a chain: dict with v, u, positions.
#[pyfunction]
fn summarize<'py>(
    py: Python<'py>,
    chain: Vec<Pair>,
    pat: Pattern,
) -> PyResult<Bound<'py, PyDict>> {
    let states: Vec<PairState> = chain.into_iter().map(pair).collect();
    let s = counters::summarize(&states, &pattern(pat));
    let d = PyDict::new(py);
    d.set_item("v", s.v)?;
    d.set_item("u", s.u)?;
    d.set_item("positions", s.positions)?;
    Ok(d)
}

/// The local-limit constant b(q) at window slope beta.
#[pyfunction]
fn b_of_q(q: f64, beta: f64) -> PyResult<f64> {
    counters::b_of_q(q, beta).map_err(err)
}

/// Expected score change of the transformation given the chain (exact
/// conditional expectation; LCS scheme).
#[pyfunction]
fn expected_gain(chain: Vec<Pair>, pat: Pattern, k: usize) -> PyResult<f64> {
    let states: Vec<PairState> = chain.into_iter().map(pair).collect();
    let z = markov::ChainSample {
        states,
        seed: 0,
        label: "python".into(),
    };
    transform::expected_gain(&z, &pattern(pat), &ScoringScheme::lcs(k)).map_err(err)
}

/// Gain curve records as a list of (chain_id, m, j_count, e_m) tuples.
#[pyfunction]
#[pyo3(signature = (matrix, pat, m_start, m_stop, m_step, chains, seed, pattern2=None))]
#[allow(clippy::too_many_arguments)]
fn run_em(
    matrix: &PyTransitionMatrix,
    pat: Pattern,
    m_start: usize,
    m_stop: usize,
    m_step: usize,
    chains: usize,
    seed: u64,
    pattern2: Option<Pattern>,
) -> PyResult<Vec<(usize, usize, usize, f64)>> {
    let config = EmConfig {
        matrix: matrix.inner.clone(),
        pattern: pattern(pat),
        pattern2: pattern2.map(pattern),
        grid: MGrid {
            start: m_start,
            stop: m_stop,
            step: m_step,
        },
        n_chains: chains,
        master_seed: seed,
        scheme: ScoringScheme::lcs(matrix.inner.k()),
    };
    let records = if pattern2.is_some() {
        experiments::run_em_combined(&config).map_err(err)?
    } else {
        experiments::run_em(&config).map_err(err)?
    };
    Ok(records
        .iter()
        .map(|r| (r.chain_id, r.m, r.j_count, r.e_m))
        .collect())
}

/// Lower and upper bound constants merged into one dict.
#[pyfunction]
fn bound_report(
    py: Python<'_>,
    matrix: &PyTransitionMatrix,
    pat: Pattern,
    eps_o: f64,
    r: f64,
    n: usize,
) -> PyResult<Py<PyAny>> {
    let lower =
        counters::lower_bound_report(&matrix.inner, &pattern(pat), eps_o, r, n).map_err(err)?;
    let scheme = ScoringScheme::lcs(matrix.inner.k());
    let upper = counters::upper_bound_report(&matrix.inner, &scheme, r, n).map_err(err)?;
    let merged = lower.merge(upper);
    json_to_py(py, &serde_json::to_string(&merged).map_err(err)?)
}

/// Worst transport distance of the transformation at sequence length n.
#[pyfunction]
fn verify_a3(matrix: &PyTransitionMatrix, pat: Pattern, n: usize) -> PyResult<f64> {
    let pi = markov::stationary(&matrix.inner).map_err(err)?;
    let rep = oracle::verify_a3(&matrix.inner, &pi, &pattern(pat), n, None).map_err(err)?;
    Ok(rep.max_tv)
}

#[pymodule]
fn pmclab(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PyTransitionMatrix>()?;
    m.add_function(wrap_pyfunction!(lcs, m)?)?;
    m.add_function(wrap_pyfunction!(score, m)?)?;
    m.add_function(wrap_pyfunction!(summarize, m)?)?;
    m.add_function(wrap_pyfunction!(b_of_q, m)?)?;
    m.add_function(wrap_pyfunction!(expected_gain, m)?)?;
    m.add_function(wrap_pyfunction!(run_em, m)?)?;
    m.add_function(wrap_pyfunction!(bound_report, m)?)?;
    m.add_function(wrap_pyfunction!(verify_a3, m)?)?;
    Ok(())
}
