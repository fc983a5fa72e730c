use heatwalk::bench;
use heatwalk::mcwalk::{self, SolveConfig};
use heatwalk::problem::analytic_solution;
use heatwalk::snn::{quantization_bias_preset, Rounding, StartNodes};
use heatwalk::{netgen, snn, AbsorbPolicy, Error, Moves};
use pyo3::exceptions::{PyRuntimeError, PyValueError};
use pyo3::prelude::*;
use pyo3::types::PyDict;

fn to_py(e: Error) -> PyErr {
    match e {
        Error::Domain(_) | Error::InvalidTimestep { .. } | Error::Parse { .. } => {
            PyValueError::new_err(e.to_string())
        }
        _ => PyRuntimeError::new_err(e.to_string()),
    }
}

/// Wire of length `length` under uniform forcing, discretized at `dx`, `dt`.
#[pyclass(frozen)]
#[derive(Clone)]
struct ProblemSpec {
    inner: heatwalk::ProblemSpec,
}

#[pymethods]
impl ProblemSpec {
    #[new]
    #[pyo3(signature = (length=2.0, forcing=3.0, dx=0.05, dt=1e-4, threshold_c=0.05))]
    fn new(length: f64, forcing: f64, dx: f64, dt: f64, threshold_c: f64) -> PyResult<Self> {
        let inner = heatwalk::ProblemSpec::with_threshold(length, forcing, dx, dt, threshold_c)
            .map_err(to_py)?;
        Ok(ProblemSpec { inner })
    }

    /// Same wire on `n_nodes` nodes, with `dt` scaled to keep the hop probability.
    #[staticmethod]
    #[pyo3(signature = (n_nodes, length=2.0, forcing=3.0))]
    fn scaled(n_nodes: usize, length: f64, forcing: f64) -> PyResult<Self> {
        let inner = heatwalk::ProblemSpec::scaled(length, forcing, n_nodes).map_err(to_py)?;
        Ok(ProblemSpec { inner })
    }

    #[getter]
    fn length(&self) -> f64 {
        self.inner.length()
    }

    #[getter]
    fn forcing(&self) -> f64 {
        self.inner.forcing()
    }

    #[getter]
    fn dx(&self) -> f64 {
        self.inner.dx()
    }

    #[getter]
    fn dt(&self) -> f64 {
        self.inner.dt()
    }

    #[getter]
    fn n_nodes(&self) -> usize {
        self.inner.n_nodes()
    }

    fn mesh(&self) -> Vec<f64> {
        self.inner.mesh().positions
    }

    /// `(p_stay, p_go, tail_mass)`.
    fn transition_probabilities(&self) -> (f64, f64, f64) {
        let p = self.inner.transition_probabilities();
        (p.p_stay, p.p_go, p.tail_mass)
    }

    fn analytic(&self, x: f64) -> PyResult<f64> {
        analytic_solution(&self.inner, x).map_err(to_py)
    }

    /// Expected post-initialization visits, one row per start node.
    fn expected_counts(&self) -> PyResult<Vec<Vec<f64>>> {
        let e = mcwalk::exact_expected_counts(&self.inner).map_err(to_py)?;
        Ok((0..e.n_nodes()).map(|i| e.row(i).to_vec()).collect())
    }

    fn __repr__(&self) -> String {
        format!(
            "ProblemSpec(length={}, forcing={}, dx={}, dt={}, n_nodes={})",
            self.inner.length(),
            self.inner.forcing(),
            self.inner.dx(),
            self.inner.dt(),
            self.inner.n_nodes()
        )
    }
}

/// Direct Monte Carlo solve. Returns a dict with `x`, `u`, `u_analytic`,
/// `rmse` and the per-run solutions.
#[pyfunction]
#[pyo3(signature = (spec, walkers, seed=0, runs=1, max_steps=None, biased=false))]
fn solve<'py>(
    py: Python<'py>,
    spec: &ProblemSpec,
    walkers: u64,
    seed: u64,
    runs: u32,
    max_steps: Option<u64>,
    biased: bool,
) -> PyResult<Bound<'py, PyDict>> {
    let mut cfg = SolveConfig::new(&spec.inner, walkers, seed);
    cfg.runs = runs;
    if let Some(m) = max_steps {
        cfg.max_steps = m;
    }
    cfg.moves = biased.then(quantization_bias_preset);
    let result = py
        .allow_threads(|| mcwalk::solve(&spec.inner, &cfg))
        .map_err(to_py)?;
    let report = bench::error_report(&result.mean, &spec.inner).map_err(to_py)?;
    let analytic = result
        .mean
        .x
        .iter()
        .map(|&x| analytic_solution(&spec.inner, x))
        .collect::<heatwalk::Result<Vec<f64>>>()
        .map_err(to_py)?;
    let out = PyDict::new(py);
    out.set_item("x", &result.mean.x)?;
    out.set_item("u", &result.mean.u)?;
    out.set_item("u_analytic", analytic)?;
    out.set_item("rmse", report.rmse)?;
    out.set_item("unabsorbed_fraction", result.mean.unabsorbed_fraction)?;
    let per_run: Vec<Vec<f64>> = result.runs.iter().map(|r| r.solution.u.clone()).collect();
    out.set_item("runs", per_run)?;
    Ok(out)
}

#[pyclass(frozen)]
struct SpikingNetwork {
    inner: snn::SpikingNetwork,
}

#[pymethods]
impl SpikingNetwork {
    /// `start=None` builds `tiles` tiles for every start node.
    #[new]
    #[pyo3(signature = (
        spec, walkers_per_tile, tiles=1, start=None, absorb_policy="remove",
        precision_bits=Some(8), rounding="nearest", biased=false
    ))]
    #[allow(clippy::too_many_arguments)]
    fn new(
        spec: &ProblemSpec,
        walkers_per_tile: u32,
        tiles: u32,
        start: Option<usize>,
        absorb_policy: &str,
        precision_bits: Option<u32>,
        rounding: &str,
        biased: bool,
    ) -> PyResult<Self> {
        let mut cfg = heatwalk::NetworkConfig::new(walkers_per_tile, tiles);
        cfg.start = start.map_or(StartNodes::All, StartNodes::Node);
        cfg.absorb_policy = absorb_policy.parse::<AbsorbPolicy>().map_err(to_py)?;
        cfg.precision = heatwalk::PrecisionConfig {
            bits: precision_bits,
            rounding: rounding.parse::<Rounding>().map_err(to_py)?,
        };
        cfg.moves = biased.then(quantization_bias_preset);
        let inner = snn::build_network(&spec.inner, &cfg).map_err(to_py)?;
        Ok(SpikingNetwork { inner })
    }

    #[staticmethod]
    fn from_netlist(text: &str) -> PyResult<Self> {
        Ok(SpikingNetwork {
            inner: netgen::import(text).map_err(to_py)?,
        })
    }

    #[pyo3(signature = (seed=None))]
    fn to_netlist(&self, seed: Option<u64>) -> String {
        netgen::export(&self.inner, seed)
    }

    #[getter]
    fn n_neurons(&self) -> usize {
        self.inner.neurons.len()
    }

    #[getter]
    fn n_synapses(&self) -> usize {
        self.inner.synapses.len()
    }

    #[getter]
    fn tiles(&self) -> usize {
        self.inner.tiles()
    }

    #[getter]
    fn tile_size(&self) -> usize {
        self.inner.tile_size()
    }

    /// `(p_left, p_right)` as programmed into the gates.
    #[getter]
    fn moves(&self) -> (f64, f64) {
        let Moves { p_left, p_right } = self.inner.meta.moves;
        (p_left, p_right)
    }

    fn problem(&self) -> ProblemSpec {
        ProblemSpec {
            inner: self.inner.meta.problem,
        }
    }

    #[pyo3(signature = (neural_steps, seed=0))]
    fn run(&self, py: Python<'_>, neural_steps: u64, seed: u64) -> PyResult<SimulationRecord> {
        let inner = py
            .allow_threads(|| snn::run(&self.inner, neural_steps, seed))
            .map_err(to_py)?;
        Ok(SimulationRecord {
            inner,
            problem: self.inner.meta.problem,
        })
    }
}

#[pyclass(frozen)]
struct SimulationRecord {
    inner: snn::SimulationRecord,
    problem: heatwalk::ProblemSpec,
}

#[pymethods]
impl SimulationRecord {
    #[getter]
    fn spikes_in_flight(&self) -> Vec<u32> {
        self.inner.spikes_in_flight.clone()
    }

    #[getter]
    fn neural_timesteps_used(&self) -> u64 {
        self.inner.neural_timesteps_used
    }

    #[getter]
    fn sim_timesteps_completed(&self) -> u64 {
        self.inner.sim_timesteps_completed
    }

    #[getter]
    fn unabsorbed(&self) -> u64 {
        self.inner.unabsorbed
    }

    /// Visit tallies, one row per tile.
    #[getter]
    fn tallies(&self) -> Vec<Vec<u64>> {
        self.inner.tallies.clone()
    }

    /// Shifted per-node estimate decoded from the tallies.
    fn solution(&self) -> PyResult<Vec<f64>> {
        Ok(snn::decode_counts(&self.inner, &self.problem)
            .map_err(to_py)?
            .u)
    }

    /// `(mean, std)` neural timesteps per simulation timestep.
    fn timestep_ratio(&self) -> PyResult<(f64, f64)> {
        let r = bench::timestep_ratio(&self.inner).map_err(to_py)?;
        Ok((r.mean, r.std))
    }

    #[pyo3(signature = (window=bench::MOVING_AVERAGE_WINDOW))]
    fn moving_average(&self, window: usize) -> PyResult<Vec<f64>> {
        bench::moving_average(&self.inner.spikes_in_flight, window).map_err(to_py)
    }

    fn to_json(&self) -> String {
        serde_json::to_string(&self.inner).expect("records serialize")
    }

    fn __eq__(&self, other: &SimulationRecord) -> bool {
        self.inner == other.inner
    }
}

#[pymodule]
fn pyheatwalk(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<ProblemSpec>()?;
    m.add_class::<SpikingNetwork>()?;
    m.add_class::<SimulationRecord>()?;
    m.add_function(wrap_pyfunction!(solve, m)?)?;
    m.add("__version__", env!("CARGO_PKG_VERSION"))?;
    Ok(())
}
