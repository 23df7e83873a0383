//! Python bindings: exact oracles, divergence helpers, and config-driven
//! generation / sweeps. Tokens equal to the vocabulary size are MASK.

use engine::bench::{
    expand_grid, make_tasks, pareto_frontier_by, summarize, sweep as run_sweep, write_records_csv, SweepOptions,
};
use engine::config::RunConfig;
use engine::distribution::{self, Distribution};
use engine::models;
use engine::pipeline::dual_diffusion_generate;
use engine::rng::stream;
use engine::sequence::{MaskedSequence, Token};
use engine::Error;
use pyo3::exceptions::{PyIOError, PyRuntimeError, PyValueError};
use pyo3::prelude::*;

fn to_py(e: Error) -> PyErr {
    match e {
        Error::Livelock { .. } | Error::ModelUnavailable(_) | Error::Protocol(_) => PyRuntimeError::new_err(e.to_string()),
        Error::Io(_) => PyIOError::new_err(e.to_string()),
        _ => PyValueError::new_err(e.to_string()),
    }
}

fn json<'py>(py: Python<'py>, value: &impl serde::Serialize) -> PyResult<Bound<'py, PyAny>> {
    let text = serde_json::to_string(value).map_err(|e| PyValueError::new_err(e.to_string()))?;
    py.import("json")?.call_method1("loads", (text,))
}

fn load(config: &str, seed: Option<u64>) -> PyResult<RunConfig> {
    let mut cfg = RunConfig::from_toml_str(config, "<config>").map_err(to_py)?;
    if let Some(s) = seed {
        cfg.seed = s;
    }
    Ok(cfg)
}

/// First-order Markov chain with exact posterior marginals.
#[pyclass(frozen, name = "MarkovOracle")]
struct PyMarkovOracle(models::MarkovOracle);

#[pymethods]
impl PyMarkovOracle {
    #[new]
    fn new(initial: Vec<f64>, transition: Vec<Vec<f64>>) -> PyResult<Self> {
        models::MarkovOracle::new(initial, transition).map(Self).map_err(to_py)
    }

    #[getter]
    fn vocab_size(&self) -> usize {
        self.0.vocab().size()
    }

    #[getter]
    fn mask_id(&self) -> Token {
        self.0.vocab().mask_id()
    }

    /// Per-position distributions; unmasked positions get the leave-one-out conditional.
    fn posterior(&self, tokens: Vec<Token>) -> PyResult<Vec<Vec<f64>>> {
        let seq = MaskedSequence::new(self.0.vocab(), tokens).map_err(to_py)?;
        let dists = self.0.posterior(&seq).map_err(to_py)?;
        Ok(dists.iter().map(|d| d.probs().to_vec()).collect())
    }

    fn sample(&self, length: usize, seed: u64) -> Vec<Token> {
        self.0.sample(length, &mut stream(seed))
    }

    fn log_joint(&self, tokens: Vec<Token>) -> f64 {
        self.0.log_joint(&tokens)
    }

    fn __repr__(&self) -> String {
        format!("MarkovOracle(vocab_size={})", self.0.vocab().size())
    }
}

/// KL(p || q) with q floored at 1e-12.
#[pyfunction]
fn kl_divergence(p: Vec<f64>, q: Vec<f64>) -> PyResult<f64> {
    let p = Distribution::new(p).map_err(to_py)?;
    let q = Distribution::new(q).map_err(to_py)?;
    distribution::kl_divergence(&p, &q).map_err(to_py)
}

#[pyfunction]
fn confidence(p: Vec<f64>) -> PyResult<f64> {
    Ok(distribution::confidence(&Distribution::new(p).map_err(to_py)?))
}

/// Indices of the non-dominated `(cost, quality)` points, cost ascending.
#[pyfunction]
fn pareto_frontier(points: Vec<(f64, f64)>) -> Vec<usize> {
    let indexed: Vec<(usize, f64, f64)> = points.iter().enumerate().map(|(i, &(c, q))| (i, c, q)).collect();
    pareto_frontier_by(&indexed, |p| p.1, |p| p.2).into_iter().map(|p| p.0).collect()
}

/// Runs `[pipeline]` from a TOML config string; returns tokens and stats.
#[pyfunction]
#[pyo3(signature = (config, seed = None))]
fn generate<'py>(py: Python<'py>, config: &str, seed: Option<u64>) -> PyResult<Bound<'py, PyAny>> {
    let cfg = load(config, seed)?;
    let oracle = cfg.build_oracle().map_err(to_py)?;
    let p = cfg.pipeline().map_err(to_py)?;
    let drafter = cfg.make_drafter(&oracle).map_err(to_py)?;
    let verifier = cfg.make_verifier(&oracle).map_err(to_py)?;
    let pc = p.to_pipeline_config(cfg.seed);
    let g = py
        .detach(|| dual_diffusion_generate(drafter.as_ref(), verifier.as_ref(), &p.prompt, p.length, &pc))
        .map_err(to_py)?;
    json(py, &serde_json::json!({"tokens": g.sequence.tokens(), "stats": g.stats}))
}

/// Runs the `[bench]` grid; returns `{"records_csv": str, "summary": [dict, ...]}`.
#[pyfunction]
#[pyo3(signature = (config, seed = None, jobs = 1))]
fn sweep<'py>(py: Python<'py>, config: &str, seed: Option<u64>, jobs: usize) -> PyResult<Bound<'py, PyAny>> {
    let cfg = load(config, seed)?;
    let bench = cfg.bench().map_err(to_py)?;
    let oracle = cfg.build_oracle().map_err(to_py)?;
    let tasks = make_tasks(&oracle, bench.tasks, bench.prompt_length, bench.length, cfg.seed).map_err(to_py)?;
    let cells = expand_grid(&bench.grid).map_err(to_py)?;
    let opts = SweepOptions {
        lambda: bench.lambda,
        seed: cfg.seed,
        jobs,
        base_fingerprint: cfg.fingerprint().map_err(to_py)?,
    };
    let records = py
        .detach(|| {
            let make_d = || cfg.make_drafter(&oracle);
            let make_v = || cfg.make_verifier(&oracle);
            run_sweep(&tasks, &oracle, &make_d, &make_v, &cells, &opts)
        })
        .map_err(to_py)?;
    let mut csv = Vec::new();
    write_records_csv(&mut csv, &records).map_err(to_py)?;
    let summary = summarize(&records);
    json(
        py,
        &serde_json::json!({"records_csv": String::from_utf8_lossy(&csv), "summary": summary}),
    )
}

#[pymodule]
fn maskspec(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PyMarkovOracle>()?;
    m.add_function(wrap_pyfunction!(kl_divergence, m)?)?;
    m.add_function(wrap_pyfunction!(confidence, m)?)?;
    m.add_function(wrap_pyfunction!(pareto_frontier, m)?)?;
    m.add_function(wrap_pyfunction!(generate, m)?)?;
    m.add_function(wrap_pyfunction!(sweep, m)?)?;
    Ok(())
}
