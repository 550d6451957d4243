//! Python bindings: market days, oracles, metrics and the pipeline stages.
//!
//! ```python
//! import advbid
//! days = advbid.generate(advbid.default_config(smoke=True))
//! expert = advbid.solve(days[0])
//! out = advbid.replay(days[0], expert.ratios)
//! ```

use std::path::{Path, PathBuf};

use pyo3::exceptions::{PyFileNotFoundError, PyOSError, PyRuntimeError, PyValueError};
use pyo3::prelude::*;

use advbid_core::env::{replay_sequence, EpisodeRecord};
use advbid_core::expert::{solve_day, ExpertConfig};
use advbid_core::market::{generate_dataset, EnvironmentDay};
use advbid_core::metrics::{score_day, MetricsConfig};
use advbid_core::pipeline::{self, EvalOptions, Manifest, RunConfig, TrainOptions};
use advbid_core::train::Algo;
use advbid_core::Error;

pub fn to_py(e: Error) -> PyErr {
    let msg = e.to_string();
    match e {
        Error::Usage(_) | Error::InvalidConfig(_) | Error::InvalidSlot { .. } | Error::Shape(_) => PyValueError::new_err(msg),
        Error::Dependency(_) => PyFileNotFoundError::new_err(msg),
        Error::Io { .. } => PyOSError::new_err(msg),
        _ => PyRuntimeError::new_err(msg),
    }
}

/// Config from TOML text, else the one stored next to `upstream`, else defaults.
fn config_or(text: Option<&str>, upstream: &Path) -> PyResult<RunConfig> {
    match text {
        Some(t) => RunConfig::from_toml(t),
        None => pipeline::resolve_config(None, Some(upstream)),
    }
    .map_err(to_py)
}

fn manifest_json(m: &Manifest) -> PyResult<String> {
    serde_json::to_string(m).map_err(|e| PyRuntimeError::new_err(e.to_string()))
}

/// One simulated advertising day.
#[derive(Debug)]
#[pyclass(name = "Day", module = "advbid")]
pub struct PyDay {
    pub inner: EnvironmentDay,
}

#[pymethods]
impl PyDay {
    #[getter]
    fn day_id(&self) -> u32 {
        self.inner.day_id
    }

    #[getter]
    fn split(&self) -> &'static str {
        self.inner.split.as_str()
    }

    #[getter]
    fn mechanism(&self) -> &'static str {
        self.inner.mechanism.as_str()
    }

    #[getter]
    fn budget(&self) -> f64 {
        self.inner.budget
    }

    #[getter]
    fn roi_target(&self) -> f64 {
        self.inner.roi_target
    }

    #[getter]
    fn slots(&self) -> usize {
        self.inner.slots()
    }

    /// Mixing weight `k` of every slot (all zero on second-price days).
    #[getter]
    fn mix_ratios(&self) -> Vec<f64> {
        (0..self.inner.slots()).map(|t| self.inner.pricing.mix_ratio(t)).collect()
    }

    fn __len__(&self) -> usize {
        self.inner.auctions.len()
    }

    fn to_json(&self) -> PyResult<String> {
        serde_json::to_string(&self.inner).map_err(|e| PyRuntimeError::new_err(e.to_string()))
    }

    #[staticmethod]
    fn from_json(text: &str) -> PyResult<Self> {
        let inner: EnvironmentDay = serde_json::from_str(text).map_err(|e| PyValueError::new_err(e.to_string()))?;
        inner.validate().map_err(to_py)?;
        Ok(PyDay { inner })
    }

    fn __repr__(&self) -> String {
        format!(
            "Day(id={}, split={}, mechanism={}, slots={}, auctions={})",
            self.inner.day_id,
            self.inner.split.as_str(),
            self.inner.mechanism.as_str(),
            self.inner.slots(),
            self.inner.auctions.len()
        )
    }
}

/// Result of playing a day.
#[derive(Debug)]
#[pyclass(name = "Outcome", module = "advbid", get_all)]
pub struct PyOutcome {
    pub day_id: u32,
    pub ratios: Vec<f64>,
    pub utility: f64,
    pub realized_utility: f64,
    pub cost: f64,
    /// `None` when nothing was spent.
    pub roi: Option<f64>,
    pub roi_feasible: bool,
    pub budget_feasible: bool,
    pub truncated: bool,
    pub reward: f64,
}

impl From<&EpisodeRecord> for PyOutcome {
    fn from(r: &EpisodeRecord) -> Self {
        let o = r.outcome;
        PyOutcome {
            day_id: r.day_id,
            ratios: r.trajectory.actions(),
            utility: o.utility,
            realized_utility: o.realized_utility,
            cost: o.cost,
            roi: o.roi.is_finite().then_some(o.roi),
            roi_feasible: o.roi_feasible,
            budget_feasible: o.budget_feasible,
            truncated: o.truncated,
            reward: r.reward_h,
        }
    }
}

#[pymethods]
impl PyOutcome {
    fn __repr__(&self) -> String {
        let roi = self.roi.map_or_else(|| "None".to_string(), |r| format!("{r:.4}"));
        format!("Outcome(day={}, utility={:.4}, cost={:.4}, roi={roi})", self.day_id, self.utility, self.cost)
    }
}

/// Hindsight-optimal slot ratios for one day.
#[derive(Debug)]
#[pyclass(name = "Expert", module = "advbid", get_all)]
pub struct PyExpert {
    pub day_id: u32,
    pub ratios: Vec<f64>,
    pub utility: f64,
    pub cost: f64,
    pub bound: f64,
    pub method: String,
    pub flagged: bool,
}

#[pymethods]
impl PyExpert {
    fn __repr__(&self) -> String {
        format!("Expert(day={}, utility={:.4}, bound={:.4}, method={})", self.day_id, self.utility, self.bound, self.method)
    }
}

/// Full default config as TOML, or the small smoke-test config.
#[pyfunction]
#[pyo3(signature = (smoke = false))]
pub fn default_config(smoke: bool) -> String {
    if smoke { pipeline::smoke_config() } else { RunConfig::default() }.to_toml()
}

#[pyfunction]
pub fn algorithms() -> Vec<&'static str> {
    Algo::ALL.iter().map(|a| a.as_str()).collect()
}

/// Generate the dataset described by a TOML config (defaults when omitted).
#[pyfunction]
#[pyo3(signature = (config = None))]
pub fn generate(py: Python<'_>, config: Option<&str>) -> PyResult<Vec<PyDay>> {
    let cfg = config.map_or(Ok(RunConfig::default()), RunConfig::from_toml).map_err(to_py)?;
    let days = py.detach(|| generate_dataset(&cfg.generator)).map_err(to_py)?;
    Ok(days.into_iter().map(|inner| PyDay { inner }).collect())
}

#[pyfunction]
#[pyo3(signature = (day, grid_points = 32))]
pub fn solve(py: Python<'_>, day: &PyDay, grid_points: usize) -> PyResult<PyExpert> {
    let cfg = ExpertConfig { grid_points, ..ExpertConfig::default() };
    let e = py.detach(|| solve_day(&day.inner, &cfg)).map_err(to_py)?;
    let s = &e.solution;
    Ok(PyExpert {
        day_id: e.day_id,
        ratios: s.ratios.clone(),
        utility: s.utility,
        cost: s.cost,
        bound: s.bound,
        method: format!("{:?}", s.method).to_lowercase(),
        flagged: e.flagged,
    })
}

/// Play fixed slot ratios; slots past the end reuse the last one.
#[pyfunction]
pub fn replay(day: &PyDay, ratios: Vec<f64>) -> PyResult<PyOutcome> {
    if ratios.iter().any(|r| !(r.is_finite() && *r >= 0.0)) {
        return Err(PyValueError::new_err("ratios must be finite and non-negative"));
    }
    let rec = replay_sequence(&day.inner, "python", &ratios).map_err(to_py)?;
    Ok(PyOutcome::from(&rec))
}

#[pyfunction]
pub fn tolerance_level(roi: f64, roi_target: f64) -> u32 {
    advbid_core::metrics::tolerance_level(roi, roi_target)
}

/// `(cr, tacr, cr_at_gamma)` of an outcome against the oracle value.
#[pyfunction]
#[pyo3(signature = (day, outcome, expert_utility, gamma = 0.02, zeta = 0.05))]
pub fn score(day: &PyDay, outcome: &PyOutcome, expert_utility: f64, gamma: f64, zeta: f64) -> PyResult<(f64, f64, f64)> {
    let cfg = MetricsConfig { gamma, zeta };
    cfg.validate().map_err(to_py)?;
    let o = advbid_core::env::EpisodeOutcome {
        utility: outcome.utility,
        realized_utility: outcome.realized_utility,
        cost: outcome.cost,
        roi: outcome.roi.unwrap_or(f64::INFINITY),
        roi_feasible: outcome.roi_feasible,
        budget_feasible: outcome.budget_feasible,
        truncated: outcome.truncated,
    };
    let s = score_day(&day.inner, &o, expert_utility, &cfg);
    Ok((s.cr, s.tacr, s.cr_at_gamma))
}

/// Write a dataset to `out`; returns the stage manifest as JSON.
#[pyfunction]
#[pyo3(signature = (out, config = None))]
pub fn run_gen(py: Python<'_>, out: PathBuf, config: Option<&str>) -> PyResult<String> {
    let cfg = config.map_or(Ok(RunConfig::default()), RunConfig::from_toml).map_err(to_py)?;
    manifest_json(&py.detach(|| pipeline::gen_stage(&cfg, &out)).map_err(to_py)?)
}

#[pyfunction]
#[pyo3(signature = (dataset, out, config = None, workers = 1))]
pub fn run_expert(py: Python<'_>, dataset: PathBuf, out: PathBuf, config: Option<&str>, workers: usize) -> PyResult<String> {
    let cfg = config_or(config, &dataset)?;
    manifest_json(&py.detach(|| pipeline::expert_stage(&cfg, &dataset, &out, workers.max(1))).map_err(to_py)?)
}

#[pyfunction]
#[pyo3(signature = (algo, seed, dataset, experts, out, config = None, resume = false))]
#[allow(clippy::too_many_arguments)]
pub fn run_train(py: Python<'_>, algo: &str, seed: u64, dataset: PathBuf, experts: PathBuf, out: PathBuf, config: Option<&str>, resume: bool) -> PyResult<String> {
    let algo: Algo = algo.parse().map_err(to_py)?;
    let cfg = config_or(config, &experts)?;
    let opts = TrainOptions { algo, seed, dataset, experts, out, resume };
    manifest_json(&py.detach(|| pipeline::train_stage(&cfg, &opts)).map_err(to_py)?)
}

/// Evaluate a trained run; returns `(manifest JSON, mean TACR)`.
#[pyfunction]
#[pyo3(signature = (checkpoint, dataset, experts, out, split = "test", config = None))]
pub fn run_eval(py: Python<'_>, checkpoint: PathBuf, dataset: PathBuf, experts: PathBuf, out: PathBuf, split: &str, config: Option<&str>) -> PyResult<(String, Option<f64>)> {
    let cfg = config_or(config, &checkpoint)?;
    let opts = EvalOptions { checkpoint, split: split.to_string(), dataset, experts, out };
    let (m, run) = py.detach(|| pipeline::eval_stage(&cfg, &opts)).map_err(to_py)?;
    Ok((manifest_json(&m)?, advbid_core::metrics::tacr(&run.scores)))
}

/// Merge evaluation directories into a report; returns the summary table.
#[pyfunction]
#[pyo3(signature = (runs, out, force = false))]
pub fn run_report(py: Python<'_>, runs: Vec<PathBuf>, out: PathBuf, force: bool) -> PyResult<String> {
    let (_, report) = py.detach(|| pipeline::report_stage(&runs, &out, force)).map_err(to_py)?;
    Ok(pipeline::summary_table(&report))
}

/// Play a trained agent on one dataset day.
#[pyfunction]
#[pyo3(signature = (checkpoint, dataset, experts, day_id, config = None))]
pub fn act(py: Python<'_>, checkpoint: PathBuf, dataset: PathBuf, experts: PathBuf, day_id: u32, config: Option<&str>) -> PyResult<PyOutcome> {
    let cfg = config_or(config, &checkpoint)?;
    let rec = py.detach(|| pipeline::act_stage(&cfg, &checkpoint, &dataset, &experts, day_id)).map_err(to_py)?;
    Ok(PyOutcome::from(&rec))
}

#[pymodule]
pub fn advbid(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PyDay>()?;
    m.add_class::<PyOutcome>()?;
    m.add_class::<PyExpert>()?;
    m.add_function(wrap_pyfunction!(default_config, m)?)?;
    m.add_function(wrap_pyfunction!(algorithms, m)?)?;
    m.add_function(wrap_pyfunction!(generate, m)?)?;
    m.add_function(wrap_pyfunction!(solve, m)?)?;
    m.add_function(wrap_pyfunction!(replay, m)?)?;
    m.add_function(wrap_pyfunction!(tolerance_level, m)?)?;
    m.add_function(wrap_pyfunction!(score, m)?)?;
    m.add_function(wrap_pyfunction!(run_gen, m)?)?;
    m.add_function(wrap_pyfunction!(run_expert, m)?)?;
    m.add_function(wrap_pyfunction!(run_train, m)?)?;
    m.add_function(wrap_pyfunction!(run_eval, m)?)?;
    m.add_function(wrap_pyfunction!(run_report, m)?)?;
    m.add_function(wrap_pyfunction!(act, m)?)?;
    Ok(())
}
