//! Benchmark harness: synthetic tasks with exact references, quality and
//! cost metrics, parameter sweeps, and Pareto frontiers.

mod elbo;
mod export;
mod pareto;
mod score;
mod sweep;
mod tasks;

pub use elbo::{elbo_eval, exact_elbo_linear, ElboEstimate, EXACT_ELBO_MAX_LEN};
pub use export::{write_records_csv, write_records_jsonl, write_summary_csv, RECORD_COLUMNS, SCHEMA_VERSION};
pub use pareto::{pareto_frontier, pareto_frontier_by, CostKey, QualityKey};
pub use score::{score, QualityMetrics};
pub use sweep::{
    expand_grid, summarize, sweep, AlgorithmName, CellConfig, ConfigSummary, CostMetrics, Grid, ModelFactory,
    RecordStatus, RunKind, RunRecord, SweepOptions,
};
pub use tasks::{make_tasks, Task};
