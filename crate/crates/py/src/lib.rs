//! Python bindings. Structured results (certificates, reports) cross the
//! boundary as plain dicts built from their JSON form.

use marlcert_core::attack::{self, AttackConfig};
use marlcert_core::certify::{self, SearchOptions};
use marlcert_core::envs::{self, JointAction, RewardTable};
use marlcert_core::policy::{self, MixerKind, TrainConfig};
use marlcert_core::smoothing;
use marlcert_core::stats::{self, PValue};
use marlcert_core::Error;
use pyo3::exceptions::{PyFileNotFoundError, PyOSError, PyRuntimeError, PyValueError};
use pyo3::prelude::*;
use pyo3::types::PyDict;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::de::DeserializeOwned;
use serde::Serialize;

fn err(e: Error) -> PyErr {
    let msg = e.to_string();
    match e {
        Error::MissingArtifact(_) => PyFileNotFoundError::new_err(msg),
        Error::Io { .. } => PyOSError::new_err(msg),
        Error::NonFinite(_) | Error::Divergence { .. } | Error::SearchBudget(_) => PyRuntimeError::new_err(msg),
        _ => PyValueError::new_err(msg),
    }
}

fn to_py<T: Serialize>(py: Python<'_>, value: &T) -> PyResult<Py<PyAny>> {
    let text = serde_json::to_string(value).map_err(|e| PyRuntimeError::new_err(e.to_string()))?;
    Ok(py.import("json")?.call_method1("loads", (text,))?.unbind())
}

/// Builds a config struct from keyword arguments, rejecting unknown names.
fn from_kwargs<T: DeserializeOwned + Default>(py: Python<'_>, kwargs: Option<&Bound<'_, PyDict>>) -> PyResult<T> {
    let Some(kwargs) = kwargs else {
        return Ok(T::default());
    };
    let text: String = py.import("json")?.call_method1("dumps", (kwargs,))?.extract()?;
    serde_json::from_str(&text).map_err(|e| PyValueError::new_err(e.to_string()))
}

fn mixer_kind(name: &str) -> PyResult<MixerKind> {
    name.parse().map_err(err)
}

#[pyclass(name = "GridSpec", frozen, skip_from_py_object, module = "marlcert")]
#[derive(Clone)]
struct PyGridSpec(envs::GridSpec);

#[pymethods]
impl PyGridSpec {
    /// A built-in layout name ("checkers", "switch", "corridor") or a TOML path.
    #[staticmethod]
    fn load(name_or_path: &str) -> PyResult<Self> {
        envs::GridSpec::load(name_or_path).map(Self).map_err(err)
    }

    #[staticmethod]
    #[pyo3(signature = (name, map, step_cap, apple=10.0, lemon=0.0, goal=5.0))]
    fn from_map(name: &str, map: &str, step_cap: usize, apple: f64, lemon: f64, goal: f64) -> PyResult<Self> {
        envs::GridSpec::from_map(name, map, step_cap, RewardTable { apple, lemon, goal })
            .map(Self)
            .map_err(err)
    }

    #[staticmethod]
    fn builtin_names() -> Vec<&'static str> {
        envs::GridSpec::builtin_names().collect()
    }

    #[getter]
    fn name(&self) -> &str {
        &self.0.name
    }

    #[getter]
    fn n_agents(&self) -> usize {
        self.0.n_agents()
    }

    #[getter]
    fn shape(&self) -> (usize, usize) {
        (self.0.height, self.0.width)
    }

    #[getter]
    fn step_cap(&self) -> usize {
        self.0.step_cap
    }

    #[getter]
    fn observation_len(&self) -> usize {
        envs::observation_len(&self.0)
    }

    fn reset(&self) -> PyResult<PyEnvState> {
        envs::reset(&self.0).map(PyEnvState).map_err(err)
    }

    /// Returns `(next_state, team_reward, done)`.
    fn step(&self, state: &PyEnvState, actions: Vec<usize>) -> PyResult<(PyEnvState, f64, bool)> {
        let joint = JointAction::from_indices(&actions).map_err(err)?;
        let out = envs::step(&self.0, &state.0, &joint).map_err(err)?;
        Ok((PyEnvState(out.next_state), out.team_reward, out.done))
    }

    fn observe(&self, state: &PyEnvState, agent: usize) -> PyResult<Vec<f64>> {
        envs::observe(&self.0, &state.0, agent).map_err(err)
    }

    fn __repr__(&self) -> String {
        format!("GridSpec({:?}, agents={}, {}x{})", self.0.name, self.0.n_agents(), self.0.height, self.0.width)
    }
}

#[pyclass(name = "EnvState", frozen, skip_from_py_object, eq, module = "marlcert")]
#[derive(Clone, PartialEq)]
struct PyEnvState(envs::EnvState);

#[pymethods]
impl PyEnvState {
    #[getter]
    fn step_count(&self) -> usize {
        self.0.step_count
    }

    #[getter]
    fn done(&self) -> bool {
        self.0.done
    }

    #[getter]
    fn agent_positions(&self) -> Vec<(usize, usize)> {
        self.0.agent_positions.iter().map(|c| (c.row, c.col)).collect()
    }

    #[getter]
    fn remaining_items(&self) -> usize {
        self.0.remaining_items.len()
    }

    fn to_json(&self) -> PyResult<String> {
        serde_json::to_string(&self.0).map_err(|e| PyRuntimeError::new_err(e.to_string()))
    }

    #[staticmethod]
    fn from_json(text: &str) -> PyResult<Self> {
        serde_json::from_str(text).map(Self).map_err(|e| PyValueError::new_err(e.to_string()))
    }

    fn __repr__(&self) -> String {
        format!("EnvState(step={}, positions={:?}, done={})", self.0.step_count, self.agent_positions(), self.0.done)
    }
}

#[pyclass(name = "NoiseConfig", frozen, skip_from_py_object, eq, module = "marlcert")]
#[derive(Clone, Copy, PartialEq)]
struct PyNoiseConfig(smoothing::NoiseConfig);

#[pymethods]
impl PyNoiseConfig {
    #[new]
    #[pyo3(signature = (sigma, samples=10_000, alpha=0.01, seed=0))]
    fn new(sigma: f64, samples: u64, alpha: f64, seed: u64) -> PyResult<Self> {
        smoothing::NoiseConfig::new(sigma, samples, alpha, seed).map(Self).map_err(err)
    }

    #[getter]
    fn sigma(&self) -> f64 {
        self.0.sigma
    }

    #[getter]
    fn samples(&self) -> u64 {
        self.0.samples
    }

    #[getter]
    fn alpha(&self) -> f64 {
        self.0.alpha
    }

    #[getter]
    fn seed(&self) -> u64 {
        self.0.seed
    }

    fn __repr__(&self) -> String {
        let c = self.0;
        format!("NoiseConfig(sigma={}, samples={}, alpha={}, seed={})", c.sigma, c.samples, c.alpha, c.seed)
    }
}

#[pyclass(name = "Policy", frozen, module = "marlcert")]
struct PyPolicy(policy::JointPolicy);

#[pymethods]
impl PyPolicy {
    #[staticmethod]
    fn load(path: &str) -> PyResult<Self> {
        policy::JointPolicy::load(path).map(Self).map_err(err)
    }

    #[staticmethod]
    #[pyo3(signature = (spec, mixer="vdn", hidden=vec![64], seed=0))]
    fn random(spec: &PyGridSpec, mixer: &str, hidden: Vec<usize>, seed: u64) -> PyResult<Self> {
        let defaults = TrainConfig::default();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        policy::JointPolicy::random(
            &spec.0,
            mixer_kind(mixer)?,
            &hidden,
            defaults.hyper_hidden,
            defaults.mixer_embed,
            &mut rng,
        )
        .map(Self)
        .map_err(err)
    }

    fn save(&self, path: &str) -> PyResult<()> {
        self.0.save(path).map_err(err)
    }

    #[getter]
    fn n_agents(&self) -> usize {
        self.0.n_agents()
    }

    #[getter]
    fn mixer(&self) -> &'static str {
        self.0.mixer_kind().as_str()
    }

    #[getter]
    fn fingerprint(&self) -> String {
        self.0.fingerprint()
    }

    fn agent_values(&self, observation: Vec<f64>, agent: usize) -> PyResult<Vec<f64>> {
        self.0.agent_values(&observation, agent).map_err(err)
    }

    fn greedy_action(&self, spec: &PyGridSpec, state: &PyEnvState) -> PyResult<Vec<usize>> {
        self.0.greedy_joint_action(&spec.0, &state.0).map(|a| a.indices()).map_err(err)
    }

    fn q_total(&self, spec: &PyGridSpec, state: &PyEnvState, actions: Vec<usize>) -> PyResult<f64> {
        let joint = JointAction::from_indices(&actions).map_err(err)?;
        self.0.q_total(&spec.0, &state.0, &joint).map_err(err)
    }

    fn __repr__(&self) -> String {
        format!("Policy(mixer={:?}, agents={})", self.mixer(), self.0.n_agents())
    }
}

/// Trains a policy; keyword arguments override the training defaults.
/// Returns `(policy, episode_rewards)`.
#[pyfunction]
#[pyo3(signature = (spec, mixer="vdn", **config))]
fn train(py: Python<'_>, spec: &PyGridSpec, mixer: &str, config: Option<&Bound<'_, PyDict>>) -> PyResult<(PyPolicy, Vec<f64>)> {
    let cfg: TrainConfig = from_kwargs(py, config)?;
    let kind = mixer_kind(mixer)?;
    let report = py.detach(|| policy::train(&spec.0, &cfg, kind)).map_err(err)?;
    Ok((PyPolicy(report.policy), report.episode_rewards))
}

/// Per-agent action counts under observation noise, one row per agent.
#[pyfunction]
fn sample_tally(
    py: Python<'_>,
    policy: &PyPolicy,
    spec: &PyGridSpec,
    state: &PyEnvState,
    noise: &PyNoiseConfig,
) -> PyResult<Vec<Vec<u64>>> {
    let tally = py.detach(|| smoothing::sample_tally(&policy.0, &spec.0, &state.0, &noise.0)).map_err(err)?;
    Ok(tally.per_agent.iter().map(|row| row.to_vec()).collect())
}

/// Importance-corrected per-state certificate.
#[pyfunction]
fn crsc(py: Python<'_>, policy: &PyPolicy, spec: &PyGridSpec, state: &PyEnvState, noise: &PyNoiseConfig) -> PyResult<Py<PyAny>> {
    let cert = py.detach(|| certify::crsc(&policy.0, &spec.0, &state.0, &noise.0)).map_err(err)?;
    to_py(py, &cert)
}

#[pyfunction]
fn get_node(py: Python<'_>, policy: &PyPolicy, spec: &PyGridSpec, state: &PyEnvState, noise: &PyNoiseConfig) -> PyResult<Py<PyAny>> {
    let node = py.detach(|| certify::get_node(&policy.0, &spec.0, &state.0, &noise.0)).map_err(err)?;
    to_py(py, &node)
}

#[pyfunction]
fn certify_trajectory(py: Python<'_>, policy: &PyPolicy, spec: &PyGridSpec, noise: &PyNoiseConfig) -> PyResult<Py<PyAny>> {
    let certs = py.detach(|| certify::certify_trajectory(&policy.0, &spec.0, &noise.0)).map_err(err)?;
    to_py(py, &certs)
}

/// Certified reward lower bound `r_min` and budget `epsilon_cert`.
#[pyfunction]
#[pyo3(signature = (policy, spec, noise, pruning=true, max_expansions=None))]
fn tcrgr(
    py: Python<'_>,
    policy: &PyPolicy,
    spec: &PyGridSpec,
    noise: &PyNoiseConfig,
    pruning: bool,
    max_expansions: Option<usize>,
) -> PyResult<Py<PyAny>> {
    let options = SearchOptions { pruning, max_expansions };
    let cert = py.detach(|| certify::tcrgr(&policy.0, &spec.0, &noise.0, options)).map_err(err)?;
    to_py(py, &cert)
}

/// Smoothed-policy rollout with every observation attacked by PGD within
/// `epsilon`; other keyword arguments configure the attack.
#[pyfunction]
#[pyo3(signature = (policy, spec, noise, **attack))]
fn attacked_rollout(
    py: Python<'_>,
    policy: &PyPolicy,
    spec: &PyGridSpec,
    noise: &PyNoiseConfig,
    attack: Option<&Bound<'_, PyDict>>,
) -> PyResult<Py<PyAny>> {
    let cfg: AttackConfig = from_kwargs(py, attack)?;
    let out = py.detach(|| attack::attacked_rollout(&policy.0, &spec.0, &noise.0, &cfg)).map_err(err)?;
    to_py(py, &out)
}

/// Certifies the greedy rollout (and, with `reward=True`, the reward bound),
/// then attacks each certificate `trials` times.
#[pyfunction]
#[pyo3(signature = (policy, spec, noise, trials=200, reward=true, **attack))]
fn validate_certificates(
    py: Python<'_>,
    policy: &PyPolicy,
    spec: &PyGridSpec,
    noise: &PyNoiseConfig,
    trials: usize,
    reward: bool,
    attack: Option<&Bound<'_, PyDict>>,
) -> PyResult<Py<PyAny>> {
    let cfg: AttackConfig = from_kwargs(py, attack)?;
    let report = py
        .detach(|| {
            let certs = certify::certify_trajectory(&policy.0, &spec.0, &noise.0)?;
            let bound = if reward {
                Some(certify::tcrgr(&policy.0, &spec.0, &noise.0, SearchOptions::default())?)
            } else {
                None
            };
            attack::validate_certificates(&policy.0, &spec.0, &certs, bound.as_ref(), trials, &cfg)
        })
        .map_err(err)?;
    to_py(py, &report)
}

#[pyfunction]
fn std_normal_cdf(x: f64) -> PyResult<f64> {
    stats::std_normal_cdf(x).map_err(err)
}

#[pyfunction]
fn std_normal_quantile(p: f64) -> PyResult<f64> {
    stats::std_normal_quantile(p).map_err(err)
}

#[pyfunction]
fn chi2_quantile(df: u32, p: f64) -> PyResult<f64> {
    stats::chi2_quantile(df, p).map_err(err)
}

#[pyfunction]
#[pyo3(signature = (k, m, p0=0.5, two_sided=false))]
fn binom_pvalue(k: u64, m: u64, p0: f64, two_sided: bool) -> PyResult<f64> {
    let pv = if two_sided {
        stats::binom_pvalue_two_sided(k, m, p0)
    } else {
        stats::binom_pvalue_one_sided(k, m, p0)
    };
    pv.map(PValue::get).map_err(err)
}

/// One-sided Clopper-Pearson lower bound on the success probability.
#[pyfunction]
fn binom_lower_bound(k: u64, m: u64, alpha: f64) -> PyResult<f64> {
    stats::binom_lower_bound(k, m, alpha).map_err(err)
}

/// Simultaneous multinomial intervals as `(lower, upper)` lists.
#[pyfunction]
fn goodman_bounds(counts: Vec<u64>, alpha: f64) -> PyResult<(Vec<f64>, Vec<f64>)> {
    let b = stats::goodman_bounds(&counts, alpha).map_err(err)?;
    Ok((b.lower, b.upper))
}

fn pvalues(values: &[f64]) -> PyResult<Vec<PValue>> {
    values.iter().map(|&p| PValue::new(p).map_err(err)).collect()
}

/// Benjamini-Hochberg rejections in input order.
#[pyfunction]
fn bh_procedure(values: Vec<f64>, alpha: f64) -> PyResult<Vec<bool>> {
    Ok(stats::bh_procedure(&pvalues(&values)?, alpha).reject)
}

#[pyfunction]
fn bonferroni(values: Vec<f64>, alpha: f64) -> PyResult<Vec<bool>> {
    Ok(stats::bonferroni(&pvalues(&values)?, alpha))
}

#[pymodule]
fn marlcert(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PyGridSpec>()?;
    m.add_class::<PyEnvState>()?;
    m.add_class::<PyNoiseConfig>()?;
    m.add_class::<PyPolicy>()?;
    m.add_function(wrap_pyfunction!(train, m)?)?;
    m.add_function(wrap_pyfunction!(sample_tally, m)?)?;
    m.add_function(wrap_pyfunction!(crsc, m)?)?;
    m.add_function(wrap_pyfunction!(get_node, m)?)?;
    m.add_function(wrap_pyfunction!(certify_trajectory, m)?)?;
    m.add_function(wrap_pyfunction!(tcrgr, m)?)?;
    m.add_function(wrap_pyfunction!(attacked_rollout, m)?)?;
    m.add_function(wrap_pyfunction!(validate_certificates, m)?)?;
    m.add_function(wrap_pyfunction!(std_normal_cdf, m)?)?;
    m.add_function(wrap_pyfunction!(std_normal_quantile, m)?)?;
    m.add_function(wrap_pyfunction!(chi2_quantile, m)?)?;
    m.add_function(wrap_pyfunction!(binom_pvalue, m)?)?;
    m.add_function(wrap_pyfunction!(binom_lower_bound, m)?)?;
    m.add_function(wrap_pyfunction!(goodman_bounds, m)?)?;
    m.add_function(wrap_pyfunction!(bh_procedure, m)?)?;
    m.add_function(wrap_pyfunction!(bonferroni, m)?)?;
    m.add("__version__", env!("CARGO_PKG_VERSION"))?;
    Ok(())
}
