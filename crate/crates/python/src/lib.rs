//! Python bindings for the `gramopt` library.

use std::path::PathBuf;

use pyo3::create_exception;
use pyo3::exceptions::{PyException, PyOSError, PyValueError};
use pyo3::prelude::*;
use serde::Serialize;

use gramopt::baseline::{self, BaselineSample};
use gramopt::config::{self as cfg, FeatureSpec, SystemSweepConfig};
use gramopt::corpus::{self, Allowlist, GrammarCountTable, Inventory, PairingRule, ReportConfig};
use gramopt::encoder::{EncoderState, Tradeoff};
use gramopt::information::{self as info, Axis, CategoricalDistribution, JointDistribution};
use gramopt::instance_opt::{self, optimize_instance_with, DEFAULT_REGIME_TOL};
use gramopt::optim::OptimizerConfig;
use gramopt::sweep::{self, SystemCell};
use gramopt::Error;

create_exception!(gramopt_py, GramoptError, PyException);

fn err(e: Error) -> PyErr {
    match e {
        Error::Validation(_) | Error::Config { .. } | Error::Json(_) => PyValueError::new_err(e.to_string()),
        Error::Io { .. } => PyOSError::new_err(e.to_string()),
        other => GramoptError::new_err(other.to_string()),
    }
}

/// Converts any serializable value to plain Python objects through JSON.
fn to_py<'py, T: Serialize>(py: Python<'py>, value: &T) -> PyResult<Bound<'py, PyAny>> {
    let text = serde_json::to_string(value).map_err(|e| err(e.into()))?;
    py.import("json")?.call_method1("loads", (text,))
}

fn from_py<T: serde::de::DeserializeOwned>(py: Python<'_>, value: &Bound<'_, PyAny>) -> PyResult<T> {
    let text: String = py.import("json")?.call_method1("dumps", (value,))?.extract()?;
    cfg::from_json(&text).map_err(err)
}

/// A float, or the string `"inf"`.
fn tradeoff(value: &Bound<'_, PyAny>) -> PyResult<Tradeoff> {
    if let Ok(v) = value.extract::<f64>() {
        return if v.is_infinite() && v > 0.0 {
            Ok(Tradeoff::Infinite)
        } else {
            Ok(Tradeoff::Finite(v))
        };
    }
    let s: String = value.extract()?;
    s.parse().map_err(|e: Error| err(e))
}

fn joint(rows: Vec<Vec<f64>>) -> PyResult<JointDistribution> {
    JointDistribution::from_rows(&rows).map_err(err)
}

fn feature(name: &str) -> PyResult<FeatureSpec> {
    match name {
        "gender" => Ok(FeatureSpec::gender()),
        "numerosity" => Ok(FeatureSpec::numerosity()),
        other => Err(PyValueError::new_err(format!(
            "unknown feature {other:?}; use gender or numerosity"
        ))),
    }
}

/// Categorical distribution over labelled outcomes.
#[pyclass(name = "Distribution", module = "gramopt_py", frozen)]
struct PyDistribution {
    inner: CategoricalDistribution,
}

#[pymethods]
impl PyDistribution {
    #[new]
    #[pyo3(signature = (probs, labels = None))]
    fn new(probs: Vec<f64>, labels: Option<Vec<String>>) -> PyResult<Self> {
        let inner = match labels {
            Some(l) => CategoricalDistribution::new(l, probs),
            None => CategoricalDistribution::from_probs(probs),
        }
        .map_err(err)?;
        Ok(Self { inner })
    }

    #[staticmethod]
    fn uniform(k: usize) -> PyResult<Self> {
        Ok(Self {
            inner: CategoricalDistribution::uniform(k).map_err(err)?,
        })
    }

    #[getter]
    fn probs(&self) -> Vec<f64> {
        self.inner.probs().to_vec()
    }

    #[getter]
    fn labels(&self) -> Vec<String> {
        self.inner.labels().to_vec()
    }

    fn entropy(&self) -> f64 {
        info::entropy(&self.inner)
    }

    fn kl_from(&self, other: &PyDistribution) -> PyResult<f64> {
        info::kl_divergence(&self.inner, &other.inner).map_err(err)
    }

    #[pyo3(signature = (threshold = 0.01))]
    fn support_size(&self, threshold: f64) -> usize {
        self.inner.support_size(threshold)
    }

    fn __len__(&self) -> usize {
        self.inner.len()
    }

    fn __repr__(&self) -> String {
        format!(
            "Distribution(labels={:?}, probs={:?})",
            self.inner.labels(),
            self.inner.probs()
        )
    }
}

/// Sorted divergences of random `Dir(1/k)` languages from uniform.
#[pyclass(name = "Baseline", module = "gramopt_py", frozen)]
struct PyBaseline {
    inner: BaselineSample,
}

#[pymethods]
impl PyBaseline {
    #[new]
    #[pyo3(signature = (k, n = baseline::DEFAULT_SAMPLES, seed = 0))]
    fn new(py: Python<'_>, k: usize, n: usize, seed: u64) -> PyResult<Self> {
        let inner = py.detach(|| baseline::sample_baseline(k, n, seed)).map_err(err)?;
        Ok(Self { inner })
    }

    #[getter]
    fn k(&self) -> usize {
        self.inner.k
    }

    #[getter]
    fn values(&self) -> Vec<f64> {
        self.inner.d_kl_values.clone()
    }

    fn quantile(&self, q: f64) -> f64 {
        self.inner.quantile(q)
    }

    /// `{"d_obs", "p_value", "verdict", "marker"}` for an observed divergence.
    fn test<'py>(&self, py: Python<'py>, d_obs: f64) -> PyResult<Bound<'py, PyAny>> {
        let r = baseline::percentile_test(d_obs, &self.inner).map_err(err)?;
        let d = to_py(py, &r)?;
        d.set_item("marker", r.verdict.marker())?;
        Ok(d)
    }

    fn __len__(&self) -> usize {
        self.inner.n
    }
}

#[pyfunction]
fn entropy(probs: Vec<f64>) -> PyResult<f64> {
    Ok(info::entropy(&CategoricalDistribution::from_probs(probs).map_err(err)?))
}

/// `H(other | given)` of a joint table given as rows; `given` is `"rows"` or `"cols"`.
#[pyfunction]
#[pyo3(signature = (rows, given = "rows"))]
fn conditional_entropy(rows: Vec<Vec<f64>>, given: &str) -> PyResult<f64> {
    let axis = match given {
        "rows" => Axis::Rows,
        "cols" => Axis::Cols,
        other => {
            return Err(PyValueError::new_err(format!(
                "given must be rows or cols, got {other:?}"
            )))
        }
    };
    Ok(info::conditional_entropy(&joint(rows)?, axis))
}

#[pyfunction]
fn mutual_information(rows: Vec<Vec<f64>>) -> PyResult<f64> {
    Ok(info::mutual_information(&joint(rows)?))
}

/// `KL(q || p)` in bits; `inf` when `q` puts mass where `p` has none.
#[pyfunction]
fn kl_divergence(q: Vec<f64>, p: Vec<f64>) -> PyResult<f64> {
    let q = CategoricalDistribution::from_probs(q).map_err(err)?;
    let p = CategoricalDistribution::from_probs(p).map_err(err)?;
    info::kl_divergence(&q, &p).map_err(err)
}

#[pyfunction]
fn agr_discriminability(h: f64) -> PyResult<f64> {
    info::agr_discriminability(h).map_err(err)
}

#[pyfunction]
#[pyo3(signature = (values, epsilon = 1e-3))]
fn smooth_l0(values: Vec<f64>, epsilon: f64) -> PyResult<f64> {
    info::smooth_l0(&values, epsilon).map_err(err)
}

/// Memory, surprisal and total of one referent's encoder logits (`|A|` rows).
#[pyfunction]
fn instance_objective<'py>(
    py: Python<'py>,
    logits: Vec<Vec<f64>>,
    marginal: Vec<f64>,
    alpha: &Bound<'py, PyAny>,
) -> PyResult<Bound<'py, PyAny>> {
    let capacity = logits.first().map_or(0, Vec::len);
    let flat: Vec<f64> = logits.into_iter().flatten().collect();
    let state = EncoderState::new(marginal.len(), capacity, vec![flat]).map_err(err)?;
    let r = gramopt::encoder::ReferentSpec::single(
        CategoricalDistribution::from_probs(marginal).map_err(err)?,
        tradeoff(alpha)?,
    )
    .map_err(err)?;
    to_py(py, &instance_opt::instance_objective(&state, &r).map_err(err)?)
}

/// Multi-start instance optimization; returns the best run and every run's summary.
#[pyfunction]
#[pyo3(signature = (marginal, alpha, n_seeds = 50, rng_seed = 0, w_capacity = 15, max_iters = 20000))]
fn optimize_instance<'py>(
    py: Python<'py>,
    marginal: Vec<f64>,
    alpha: &Bound<'py, PyAny>,
    n_seeds: usize,
    rng_seed: u64,
    w_capacity: usize,
    max_iters: usize,
) -> PyResult<Bound<'py, PyAny>> {
    let r = gramopt::encoder::ReferentSpec::single(
        CategoricalDistribution::from_probs(marginal).map_err(err)?,
        tradeoff(alpha)?,
    )
    .map_err(err)?;
    let opt = OptimizerConfig {
        n_seeds,
        rng_seed,
        max_iters,
        ..OptimizerConfig::default()
    };
    let out = py
        .detach(|| {
            optimize_instance_with(
                &r,
                w_capacity,
                &opt,
                gramopt::encoder::DEFAULT_VALUE_THRESHOLD,
                DEFAULT_REGIME_TOL,
            )
        })
        .map_err(err)?;
    #[derive(Serialize)]
    struct Run {
        seed: u64,
        memory: f64,
        surprisal: f64,
        effective_values: usize,
        regime: instance_opt::RegimeLabel,
        converged: bool,
        iterations: usize,
    }
    #[derive(Serialize)]
    struct Summary {
        c_star: f64,
        best: usize,
        runs: Vec<Run>,
    }
    let summary = Summary {
        c_star: out.c_star,
        best: out.best,
        runs: out
            .runs
            .iter()
            .map(|r| Run {
                seed: r.seed,
                memory: r.value.memory,
                surprisal: r.value.surprisal,
                effective_values: r.effective_values,
                regime: r.regime,
                converged: r.converged,
                iterations: r.iterations,
            })
            .collect(),
    };
    to_py(py, &summary)
}

/// One `(feature, k, β)` system cell with the three-stage optimization.
#[pyfunction]
#[pyo3(signature = (feature, k, beta, stage_seeds = (5, 10, 10), rng_seed = 0, preset = "system-desk"))]
fn run_system<'py>(
    py: Python<'py>,
    feature: &str,
    k: usize,
    beta: &Bound<'py, PyAny>,
    stage_seeds: (usize, usize, usize),
    rng_seed: u64,
    preset: &str,
) -> PyResult<Bound<'py, PyAny>> {
    let mut sweep_cfg: SystemSweepConfig = cfg::from_json(cfg::preset(preset).map_err(err)?).map_err(err)?;
    sweep_cfg.features = vec![self::feature(feature)?];
    sweep_cfg.k = vec![k];
    sweep_cfg.beta = vec![tradeoff(beta)?];
    sweep_cfg.system = sweep_cfg
        .system
        .with_stage_seeds(stage_seeds.0, stage_seeds.1, stage_seeds.2);
    sweep_cfg.system.optimizer.rng_seed = rng_seed;
    let cells = py.detach(|| sweep::run_system_sweep(&sweep_cfg)).map_err(err)?;
    to_py(py, &cells[0])
}

/// Theorem reports over cells returned by `run_system`.
#[pyfunction]
#[pyo3(signature = (cells, tol = 0.01))]
fn validate_cells<'py>(py: Python<'py>, cells: &Bound<'py, PyAny>, tol: f64) -> PyResult<Bound<'py, PyAny>> {
    let cells: Vec<SystemCell> = from_py(py, cells)?;
    to_py(py, &sweep::validate_cells(&cells, tol))
}

fn allowlist(path: Option<PathBuf>) -> PyResult<Option<Allowlist>> {
    path.map(|p| Allowlist::load(&p)).transpose().map_err(err)
}

fn count(paths: &[PathBuf], language: &str, nouns: &Allowlist) -> gramopt::Result<GrammarCountTable> {
    let mut table = GrammarCountTable::new(language, "all");
    for p in paths {
        let mut reader = corpus::open_conllu(p)?;
        table.merge(&corpus::build_counts(reader.by_ref(), nouns, None));
        reader.finish()?;
    }
    Ok(table)
}

/// Gender × number rows `{gender, number, tokens, types}` of CONLL-U files.
#[pyfunction]
#[pyo3(signature = (paths, nouns = None))]
fn count_conllu<'py>(py: Python<'py>, paths: Vec<PathBuf>, nouns: Option<PathBuf>) -> PyResult<Bound<'py, PyAny>> {
    let nouns = allowlist(nouns)?.unwrap_or(Allowlist::All);
    let table = py.detach(|| count(&paths, "", &nouns)).map_err(err)?;
    to_py(py, &table.rows())
}

/// Language reports for all nouns and, with `animate`, the paired animate subset.
#[pyfunction]
#[pyo3(signature = (paths, language, nouns = None, animate = None, exclude_dual = false, inventory = None, baseline_n = 1000, baseline_seed = 0))]
#[allow(clippy::too_many_arguments)]
fn analyze_corpus<'py>(
    py: Python<'py>,
    paths: Vec<PathBuf>,
    language: &str,
    nouns: Option<PathBuf>,
    animate: Option<PathBuf>,
    exclude_dual: bool,
    inventory: Option<usize>,
    baseline_n: usize,
    baseline_seed: u64,
) -> PyResult<Bound<'py, PyAny>> {
    let nouns = allowlist(nouns)?.unwrap_or(Allowlist::All);
    let animate = allowlist(animate)?;
    let report_cfg = ReportConfig {
        baseline_n,
        baseline_seed,
        exclude_dual,
        inventory: Inventory {
            overall: inventory,
            ..Inventory::default()
        },
    };
    let reports = py
        .detach(|| {
            let all = count(&paths, language, &nouns)?;
            let mut reports = vec![corpus::report(&all, &report_cfg)?];
            if let Some(a) = &animate {
                let pairs = corpus::build_animate_pairs(&all, a, &PairingRule::default());
                reports.push(corpus::report(&pairs, &report_cfg)?);
            }
            Ok::<_, Error>(reports)
        })
        .map_err(err)?;
    to_py(py, &reports)
}

#[pyfunction]
fn presets() -> Vec<&'static str> {
    cfg::PRESETS.iter().map(|(n, _)| *n).collect()
}

/// A shipped preset config as a dict.
#[pyfunction]
fn preset<'py>(py: Python<'py>, name: &str) -> PyResult<Bound<'py, PyAny>> {
    let text = cfg::preset(name).map_err(err)?;
    py.import("json")?.call_method1("loads", (text,))
}

#[pymodule]
fn gramopt_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add("GramoptError", m.py().get_type::<GramoptError>())?;
    m.add("__version__", env!("CARGO_PKG_VERSION"))?;
    m.add_class::<PyDistribution>()?;
    m.add_class::<PyBaseline>()?;
    m.add_function(wrap_pyfunction!(entropy, m)?)?;
    m.add_function(wrap_pyfunction!(conditional_entropy, m)?)?;
    m.add_function(wrap_pyfunction!(mutual_information, m)?)?;
    m.add_function(wrap_pyfunction!(kl_divergence, m)?)?;
    m.add_function(wrap_pyfunction!(agr_discriminability, m)?)?;
    m.add_function(wrap_pyfunction!(smooth_l0, m)?)?;
    m.add_function(wrap_pyfunction!(instance_objective, m)?)?;
    m.add_function(wrap_pyfunction!(optimize_instance, m)?)?;
    m.add_function(wrap_pyfunction!(run_system, m)?)?;
    m.add_function(wrap_pyfunction!(validate_cells, m)?)?;
    m.add_function(wrap_pyfunction!(count_conllu, m)?)?;
    m.add_function(wrap_pyfunction!(analyze_corpus, m)?)?;
    m.add_function(wrap_pyfunction!(presets, m)?)?;
    m.add_function(wrap_pyfunction!(preset, m)?)?;
    Ok(())
}
