//! Python bindings. Models are built from the same descriptor strings the
//! CLI accepts, e.g. `Noise("lognormal:sigma=1")`.

use pmvar::bounds::{self, BoundReport};
use pmvar::diagnostics::{self, EssMethod, TuningReport};
use pmvar::harness::{self, ExperimentConfig, ExperimentId};
use pmvar::rng::{chain_rng, ChainRng};
use pmvar::{ChainConfig, ChainTrace, Error, KernelSpec, NoiseModel, ProposalKernel, TargetModel};
use pyo3::exceptions::{PyRuntimeError, PyValueError};
use pyo3::prelude::*;
use pyo3::types::PyDict;
use rand::RngCore;
use std::path::PathBuf;

fn to_py(e: Error) -> PyErr {
    match e {
        Error::Parameter(_)
        | Error::Input(_)
        | Error::Descriptor { .. }
        | Error::Unsupported { .. } => PyValueError::new_err(e.to_string()),
        _ => PyRuntimeError::new_err(e.to_string()),
    }
}

fn parse<T: std::str::FromStr<Err = Error>>(s: &str) -> PyResult<T> {
    s.parse().map_err(to_py)
}

fn report_dict<'py>(py: Python<'py>, r: &BoundReport) -> PyResult<Bound<'py, PyDict>> {
    let d = PyDict::new(py);
    d.set_item("quantity", r.quantity)?;
    d.set_item("value", r.value)?;
    d.set_item("method", r.method.to_string())?;
    d.set_item("error_estimate", r.error_estimate)?;
    d.set_item("infinite_reason", r.infinite_reason.clone())?;
    d.set_item("warnings", r.warnings.clone())?;
    Ok(d)
}

fn tuning_dict<'py>(py: Python<'py>, r: &TuningReport) -> PyResult<Bound<'py, PyDict>> {
    let d = PyDict::new(py);
    d.set_item("var_w_hat", r.var_w_hat)?;
    d.set_item("var_w_se", r.var_w_se)?;
    d.set_item("var_w_ci", r.var_w_ci)?;
    d.set_item("var_log_w_hat", r.var_log_w_hat)?;
    d.set_item("zero_count", r.zero_count)?;
    d.set_item("m_estimates", r.m_estimates)?;
    d.set_item("recommended_n", r.recommended_n)?;
    d.set_item("stability", r.stability.to_string())?;
    d.set_item(
        "probes",
        r.probes
            .iter()
            .map(|p| (p.n, p.var_w_hat))
            .collect::<Vec<_>>(),
    )?;
    Ok(d)
}

/// Multiplicative noise model for the likelihood estimator.
#[pyclass(name = "Noise", module = "pmvar", frozen)]
struct PyNoise(NoiseModel);

#[pymethods]
impl PyNoise {
    #[new]
    fn new(descriptor: &str) -> PyResult<Self> {
        Ok(PyNoise(parse(descriptor)?))
    }

    #[pyo3(signature = (n, seed, theta = Vec::new()))]
    fn sample(&self, n: usize, seed: u64, theta: Vec<f64>) -> PyResult<Vec<f64>> {
        let mut rng = chain_rng(seed, 0);
        (0..n)
            .map(|_| self.0.sample(&theta, &mut rng))
            .collect::<pmvar::Result<_>>()
            .map_err(to_py)
    }

    #[pyo3(signature = (theta = Vec::new()))]
    fn second_moment(&self, theta: Vec<f64>) -> PyResult<f64> {
        self.0.second_moment(&theta).map_err(to_py)
    }

    /// `Var(log W)`, or `None` when `W` can be zero.
    fn log_noise_variance(&self) -> PyResult<Option<f64>> {
        Ok(self.0.log_noise_variance().map_err(to_py)?.value())
    }

    #[pyo3(signature = (theta = Vec::new()))]
    fn prob_zero(&self, theta: Vec<f64>) -> PyResult<f64> {
        self.0.prob_zero(&theta).map_err(to_py)
    }

    fn __repr__(&self) -> String {
        format!("Noise('{}')", self.0)
    }
}

/// A recorded chain.
#[pyclass(name = "Trace", module = "pmvar", frozen)]
struct PyTrace(ChainTrace);

#[pymethods]
impl PyTrace {
    #[getter]
    fn acceptance_rate(&self) -> f64 {
        self.0.acceptance_rate()
    }

    #[getter]
    fn iterations(&self) -> Vec<usize> {
        self.0.records.iter().map(|r| r.iter).collect()
    }

    #[getter]
    fn theta(&self) -> Vec<Vec<f64>> {
        self.0.records.iter().map(|r| r.theta.clone()).collect()
    }

    #[getter]
    fn w(&self) -> Vec<f64> {
        self.0.records.iter().map(|r| r.w).collect()
    }

    fn __len__(&self) -> usize {
        self.0.len()
    }

    /// Batch-means ESS of the coordinate `theta[coord]`.
    #[pyo3(signature = (coord = 0, batch_count = 20))]
    fn ess(&self, coord: usize, batch_count: usize) -> PyResult<f64> {
        if self
            .0
            .records
            .first()
            .is_some_and(|r| coord >= r.theta.len())
        {
            return Err(PyValueError::new_err(format!(
                "coordinate {coord} is out of range"
            )));
        }
        diagnostics::ess(
            &self.0,
            |t, _| t[coord],
            EssMethod::BatchMeans { batch_count },
        )
        .map_err(to_py)
    }

    /// Writes `<stem>.csv` and `<stem>.json`.
    fn save(&self, stem: PathBuf) -> PyResult<()> {
        self.0.save(&stem).map_err(to_py)
    }
}

/// Kernel, target, proposal and noise, each given as a descriptor.
#[pyclass(name = "Chain", module = "pmvar", frozen)]
struct PyChain(ChainConfig);

#[pymethods]
impl PyChain {
    #[new]
    #[pyo3(signature = (kernel = "pmmh", target = "gauss:d=3", proposal = "rw:lambda=1.4", noise = "lognormal:sigma=1"))]
    fn new(kernel: &str, target: &str, proposal: &str, noise: &str) -> PyResult<Self> {
        let spec: KernelSpec = parse(kernel)?;
        let target: TargetModel = parse(target)?;
        let proposal: ProposalKernel = parse(proposal)?;
        let noise: NoiseModel = parse(noise)?;
        Ok(PyChain(
            ChainConfig::new(spec, target, proposal, noise).map_err(to_py)?,
        ))
    }

    #[pyo3(signature = (n_iters, seed, stride = 1, chain = 0))]
    fn run(
        &self,
        py: Python<'_>,
        n_iters: usize,
        seed: u64,
        stride: usize,
        chain: u64,
    ) -> PyResult<PyTrace> {
        let cfg = self.0.clone();
        py.detach(move || cfg.run(n_iters, stride, seed, chain))
            .map(PyTrace)
            .map_err(to_py)
    }
}

#[pyfunction]
fn r_s(py: Python<'_>, sigma: f64) -> PyResult<Bound<'_, PyDict>> {
    report_dict(py, &bounds::r_s_closed_form(sigma).map_err(to_py)?)
}

#[pyfunction]
#[pyo3(signature = (noise, n_mc = 100_000, seed = 0))]
fn r_s_numeric<'py>(
    py: Python<'py>,
    noise: &PyNoise,
    n_mc: usize,
    seed: u64,
) -> PyResult<Bound<'py, PyDict>> {
    let mut rng = chain_rng(seed, 0);
    report_dict(
        py,
        &bounds::r_s_numeric(&noise.0, n_mc, &mut rng).map_err(to_py)?,
    )
}

#[pyfunction]
fn r_alpw22(py: Python<'_>, sigma: f64) -> PyResult<Bound<'_, PyDict>> {
    report_dict(py, &bounds::r_alpw22(sigma).map_err(to_py)?)
}

#[pyfunction]
#[pyo3(signature = (sigma, quad_tol = 1e-9))]
fn r_dpdk15(py: Python<'_>, sigma: f64, quad_tol: f64) -> PyResult<Bound<'_, PyDict>> {
    report_dict(py, &bounds::r_dpdk15(sigma, quad_tol).map_err(to_py)?)
}

#[pyfunction]
fn alpha_bar_1(w: f64, sigma: f64) -> PyResult<f64> {
    bounds::alpha_bar_1(w, sigma).map_err(to_py)
}

#[pyfunction]
#[pyo3(signature = (r, eps_mh, h_norm_sq = 1.0))]
fn upper_bound_thm1(
    py: Python<'_>,
    r: f64,
    eps_mh: f64,
    h_norm_sq: f64,
) -> PyResult<Bound<'_, PyDict>> {
    report_dict(
        py,
        &bounds::upper_bound_thm1(r, eps_mh, h_norm_sq).map_err(to_py)?,
    )
}

#[pyfunction]
fn efficiency(sigma: f64, eps_mh: f64) -> PyResult<f64> {
    bounds::efficiency(sigma, eps_mh).map_err(to_py)
}

#[pyfunction]
#[pyo3(signature = (eps_mh, tol = 1e-8))]
fn minimize_sigma(eps_mh: f64, tol: f64) -> PyResult<f64> {
    bounds::minimize_sigma(eps_mh, tol).map_err(to_py)
}

#[pyfunction]
fn estimate_var_w<'py>(py: Python<'py>, estimates: Vec<f64>) -> PyResult<Bound<'py, PyDict>> {
    tuning_dict(py, &diagnostics::estimate_var_w(&estimates).map_err(to_py)?)
}

/// `estimator(n, theta, seed)` returns one likelihood estimate; the seed
/// changes on every call.
#[pyfunction]
#[pyo3(signature = (estimator, theta_hat, m_per_probe = 1000, target_var = 1.5, seed = 0))]
fn recommend_particles<'py>(
    py: Python<'py>,
    estimator: Bound<'py, PyAny>,
    theta_hat: Vec<f64>,
    m_per_probe: usize,
    target_var: f64,
    seed: u64,
) -> PyResult<Bound<'py, PyDict>> {
    let mut failure: Option<PyErr> = None;
    let est = |n: u64, theta: &[f64], rng: &mut ChainRng| -> pmvar::Result<f64> {
        let call_seed: u64 = rand_seed(rng);
        match estimator
            .call1((n, theta.to_vec(), call_seed))
            .and_then(|v| v.extract::<f64>())
        {
            Ok(x) => Ok(x),
            Err(e) => {
                let msg = e.to_string();
                failure.get_or_insert(e);
                Err(Error::Input(format!("estimator failed: {msg}")))
            }
        }
    };
    let mut rng = chain_rng(seed, 0);
    let result =
        diagnostics::recommend_particles(est, &theta_hat, m_per_probe, target_var, &mut rng);
    if let Some(e) = failure {
        return Err(e);
    }
    tuning_dict(py, &result.map_err(to_py)?)
}

fn rand_seed(rng: &mut ChainRng) -> u64 {
    rng.next_u64()
}

/// Runs a figure experiment; returns the written file paths.
#[pyfunction]
#[pyo3(signature = (experiment, seed, out_dir, scale = 0.1, **overrides))]
fn run_experiment(
    py: Python<'_>,
    experiment: &str,
    seed: u64,
    out_dir: PathBuf,
    scale: f64,
    overrides: Option<&Bound<'_, PyDict>>,
) -> PyResult<Vec<PathBuf>> {
    let id: ExperimentId = parse(experiment)?;
    let mut cfg = ExperimentConfig::new(id, seed, out_dir);
    cfg.scale = scale;
    if let Some(kw) = overrides {
        for (k, v) in kw.iter() {
            let key: String = k.extract()?;
            cfg.set(&key, &v.str()?.to_string()).map_err(to_py)?;
        }
    }
    let out = py
        .detach(move || harness::run_experiment(&cfg))
        .map_err(to_py)?;
    let mut files = out.files;
    files.push(out.manifest);
    Ok(files)
}

#[pymodule]
#[pyo3(name = "pmvar")]
fn pmvar_module(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PyNoise>()?;
    m.add_class::<PyChain>()?;
    m.add_class::<PyTrace>()?;
    m.add_function(wrap_pyfunction!(r_s, m)?)?;
    m.add_function(wrap_pyfunction!(r_s_numeric, m)?)?;
    m.add_function(wrap_pyfunction!(r_alpw22, m)?)?;
    m.add_function(wrap_pyfunction!(r_dpdk15, m)?)?;
    m.add_function(wrap_pyfunction!(alpha_bar_1, m)?)?;
    m.add_function(wrap_pyfunction!(upper_bound_thm1, m)?)?;
    m.add_function(wrap_pyfunction!(efficiency, m)?)?;
    m.add_function(wrap_pyfunction!(minimize_sigma, m)?)?;
    m.add_function(wrap_pyfunction!(estimate_var_w, m)?)?;
    m.add_function(wrap_pyfunction!(recommend_particles, m)?)?;
    m.add_function(wrap_pyfunction!(run_experiment, m)?)?;
    Ok(())
}
