//! Python bindings for `hingepo`.
//!
//! Structured results cross the boundary as JSON and come out as plain
//! dicts and lists on the Python side.

use hingepo::checks::{run_suite, Suite};
use hingepo::emda::{emda_step as emda_step_rs, EmdaConfig};
use hingepo::harness::{chain, gridworld};
use hingepo::hinge::{ClassifierKind, HingeLossSpec, WeightScheme};
use hingepo::mdp::{self, TabularPolicy};
use hingepo::neural::{c_bound_report, run_neural as run_neural_rs, NeuralRunConfig};
use hingepo::nn::InitScheme;
use hingepo::rng::{stream, stream_rng};
use hingepo::tabular::{run_tabular as run_tabular_rs, BatchMode, BatchSchedule, TabularRunConfig};
use pyo3::exceptions::PyValueError;
use pyo3::prelude::*;
use serde_json::{json, Value};

fn err(e: hingepo::Error) -> PyErr {
    PyValueError::new_err(e.to_string())
}

fn parse<T: std::str::FromStr<Err = hingepo::Error>>(s: &str) -> PyResult<T> {
    s.parse().map_err(err)
}

fn to_py<'py>(py: Python<'py>, v: &Value) -> PyResult<Bound<'py, PyAny>> {
    py.import("json")?.call_method1("loads", (v.to_string(),))
}

fn rows(pi: &TabularPolicy) -> Vec<Vec<f64>> {
    (0..pi.n_states()).map(|s| pi.row(s)).collect()
}

fn policy_from(n_actions: usize, probs: Vec<Vec<f64>>) -> PyResult<TabularPolicy> {
    let n_states = probs.len();
    if probs.iter().any(|r| r.len() != n_actions) {
        return Err(PyValueError::new_err(format!("every policy row needs {n_actions} entries")));
    }
    let flat: Vec<f64> = probs.into_iter().flatten().collect();
    TabularPolicy::from_probs(n_states, n_actions, &flat).map_err(err)
}

/// Finite discounted MDP.
#[pyclass(frozen)]
struct Mdp {
    inner: mdp::Mdp,
}

#[pymethods]
impl Mdp {
    #[staticmethod]
    fn from_json(text: &str) -> PyResult<Self> {
        Ok(Mdp { inner: mdp::Mdp::from_json(text).map_err(err)? })
    }

    #[staticmethod]
    #[pyo3(signature = (n_states, n_actions, gamma=0.9, seed=0))]
    fn random(n_states: usize, n_actions: usize, gamma: f64, seed: u64) -> PyResult<Self> {
        let inner = mdp::random_mdp(n_states, n_actions, gamma, &mut stream_rng(seed, stream::MDP)).map_err(err)?;
        Ok(Mdp { inner })
    }

    #[staticmethod]
    #[pyo3(signature = (n_states, gamma=0.9))]
    fn chain(n_states: usize, gamma: f64) -> PyResult<Self> {
        Ok(Mdp { inner: chain(n_states, gamma).map_err(err)? })
    }

    #[staticmethod]
    #[pyo3(signature = (width, height, gamma=0.9))]
    fn gridworld(width: usize, height: usize, gamma: f64) -> PyResult<Self> {
        Ok(Mdp { inner: gridworld(width, height, gamma).map_err(err)? })
    }

    fn to_json(&self) -> String {
        self.inner.to_json()
    }

    #[getter]
    fn n_states(&self) -> usize {
        self.inner.n_states()
    }

    #[getter]
    fn n_actions(&self) -> usize {
        self.inner.n_actions()
    }

    #[getter]
    fn gamma(&self) -> f64 {
        self.inner.gamma()
    }

    /// Exact `{"v", "q", "adv"}` of a policy given as rows of probabilities.
    /// `q` and `adv` are nested per state.
    fn evaluate<'py>(&self, py: Python<'py>, policy: Vec<Vec<f64>>) -> PyResult<Bound<'py, PyAny>> {
        let pi = policy_from(self.inner.n_actions(), policy)?;
        let t = mdp::evaluate_policy_exact(&self.inner, &pi).map_err(err)?;
        let na = self.inner.n_actions();
        let nest = |x: &[f64]| x.chunks(na).map(<[f64]>::to_vec).collect::<Vec<_>>();
        to_py(py, &json!({ "v": t.v, "q": nest(&t.q), "adv": nest(&t.adv) }))
    }

    /// Discounted visitation `{"nu", "sigma", "sigma_uniform"}`.
    fn visitation<'py>(&self, py: Python<'py>, policy: Vec<Vec<f64>>) -> PyResult<Bound<'py, PyAny>> {
        let pi = policy_from(self.inner.n_actions(), policy)?;
        let d = mdp::visitation(&self.inner, &pi).map_err(err)?;
        to_py(py, &json!({ "nu": d.nu, "sigma": d.sigma, "sigma_uniform": d.sigma_uniform }))
    }

    /// Greedy optimal policy rows and `V*`.
    #[pyo3(signature = (tol=1e-12))]
    fn value_iteration(&self, tol: f64) -> PyResult<(Vec<Vec<f64>>, Vec<f64>)> {
        let (pi, t) = mdp::value_iteration(&self.inner, tol).map_err(err)?;
        Ok((rows(&pi), t.v))
    }

    fn __repr__(&self) -> String {
        format!(
            "Mdp(n_states={}, n_actions={}, gamma={})",
            self.inner.n_states(),
            self.inner.n_actions(),
            self.inner.gamma()
        )
    }
}

#[pyfunction]
#[pyo3(signature = (
    mdp, classifier="ratio", margin=0.3, weights="unit", eta=0.01, k=5, iters=1000,
    seed=0, schedule="cyclic", batch_size=None, early_stop=None
))]
#[allow(clippy::too_many_arguments)]
fn run_tabular<'py>(
    py: Python<'py>,
    mdp: &Mdp,
    classifier: &str,
    margin: f64,
    weights: &str,
    eta: f64,
    k: usize,
    iters: usize,
    seed: u64,
    schedule: &str,
    batch_size: Option<usize>,
    early_stop: Option<f64>,
) -> PyResult<Bound<'py, PyAny>> {
    let cfg = TabularRunConfig {
        spec: HingeLossSpec::new(parse::<ClassifierKind>(classifier)?, margin, parse::<WeightScheme>(weights)?)
            .map_err(err)?,
        emda: EmdaConfig::new(eta, k).map_err(err)?,
        schedule: BatchSchedule {
            mode: parse::<BatchMode>(schedule)?,
            batch_size: batch_size.unwrap_or(mdp.inner.n_states()),
        },
        n_iters: iters,
        seed,
        early_stop_tol: early_stop,
    };
    let rec = py.detach(|| run_tabular_rs(&mdp.inner, &cfg)).map_err(err)?;
    let out = json!({
        "final_gap": rec.final_gap,
        "gaps": rec.iterations.iter().map(|it| it.gap).collect::<Vec<_>>(),
        "final_policy": rows(&rec.final_policy),
        "v_star": rec.v_star,
        "c_range": rec.c_range(),
        "csv": rec.to_csv(),
    });
    to_py(py, &out)
}

#[pyfunction]
#[pyo3(signature = (
    mdp, T=64, t_upd=2048, classifier="ratio", margin=0.2, weights="policy-weighted",
    width=256, radius=10.0, eta=None, k=5, seed=0
))]
#[allow(non_snake_case, clippy::too_many_arguments)]
fn run_neural<'py>(
    py: Python<'py>,
    mdp: &Mdp,
    T: usize,
    t_upd: usize,
    classifier: &str,
    margin: f64,
    weights: &str,
    width: usize,
    radius: f64,
    eta: Option<f64>,
    k: usize,
    seed: u64,
) -> PyResult<Bound<'py, PyAny>> {
    // Without an explicit step the `1/sqrt(T)` schedule is used.
    let cfg = NeuralRunConfig {
        n_iters: T,
        emda: EmdaConfig { eta: eta.unwrap_or(0.01), k_max: k },
        spec: HingeLossSpec::new(parse::<ClassifierKind>(classifier)?, margin, parse::<WeightScheme>(weights)?)
            .map_err(err)?,
        t_upd,
        width_f: width,
        width_q: width,
        radius_f: radius,
        radius_q: radius,
        paper_schedule: eta.is_none(),
        init: InitScheme::Symmetric,
        warm_start: true,
        seed,
    };
    cfg.validate().map_err(err)?;
    let rec = py.detach(|| run_neural_rs(&mdp.inner, &cfg)).map_err(err)?;
    let out = json!({
        "final_gap": rec.final_gap,
        "best_gap": rec.best_gap(),
        "gaps": rec.iterations.iter().map(|it| it.gap).collect::<Vec<_>>(),
        "final_policy": rows(&rec.final_policy),
        "eta": rec.eta,
        "c_range": c_bound_report(&rec),
        "csv": rec.to_csv(),
    });
    to_py(py, &out)
}

/// Runs a verification suite; returns a list of report dicts.
#[pyfunction]
#[pyo3(signature = (suite="all", seed=0))]
fn run_checks<'py>(py: Python<'py>, suite: &str, seed: u64) -> PyResult<Bound<'py, PyAny>> {
    let suite: Suite = serde_json::from_value(Value::String(suite.to_string()))
        .map_err(|_| PyValueError::new_err(format!("unknown suite {suite:?}")))?;
    let reports = py.detach(|| run_suite(suite, seed)).map_err(err)?;
    to_py(py, &serde_json::to_value(&reports).expect("reports serialize"))
}

/// One entropic mirror descent step on a probability vector.
#[pyfunction]
fn emda_step(theta: Vec<f64>, g: Vec<f64>, eta: f64) -> PyResult<Vec<f64>> {
    if theta.len() != g.len() {
        return Err(PyValueError::new_err("theta and g differ in length"));
    }
    Ok(emda_step_rs(&theta, &g, eta).0)
}

#[pymodule]
fn pyhingepo(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<Mdp>()?;
    m.add_function(wrap_pyfunction!(run_tabular, m)?)?;
    m.add_function(wrap_pyfunction!(run_neural, m)?)?;
    m.add_function(wrap_pyfunction!(run_checks, m)?)?;
    m.add_function(wrap_pyfunction!(emda_step, m)?)?;
    Ok(())
}
