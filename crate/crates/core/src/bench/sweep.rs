use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{score, QualityMetrics, Task};
use crate::config::fingerprint;
use crate::diffusion::UnmaskPolicy;
use crate::error::{Error, Result};
use crate::models::{DenoisingModel, Oracle};
use crate::pipeline::{
    drafter_only_generate, dual_diffusion_generate, verifier_only_generate, PipelineConfig, DEFAULT_STALL_WINDOW,
};
use crate::rng::mix_seed;
use crate::verification::{
    DrafterDistSource, VerificationAlgorithm, VerificationConfig, VerificationScope,
};

pub type ModelFactory<'a> = dyn Fn() -> Result<Box<dyn DenoisingModel>> + Sync + 'a;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RunKind {
    DrafterOnly,
    VerifierOnly,
    Dual,
}

impl RunKind {
    pub fn as_str(&self) -> &'static str {
        match self {
            RunKind::DrafterOnly => "drafter_only",
            RunKind::VerifierOnly => "verifier_only",
            RunKind::Dual => "dual",
        }
    }
}

/// One column of the sweep: a baseline or a draft-and-verify configuration.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CellConfig {
    pub id: usize,
    pub kind: RunKind,
    pub policy: UnmaskPolicy,
    /// `Some` only for [`RunKind::Dual`].
    pub drafter_steps: Option<usize>,
    pub verification: Option<VerificationConfig>,
    pub stall_window: usize,
    pub max_cycles: Option<usize>,
}

impl CellConfig {
    pub fn label(&self) -> String {
        match (self.kind, self.drafter_steps, &self.verification) {
            (RunKind::Dual, Some(k), Some(v)) => {
                let mut s = format!("dual/{}/K={k}/{}", self.policy.label(), v.algorithm.label());
                if v.algorithm.uses_drafter() && v.drafter_dist_source == DrafterDistSource::Fresh {
                    s.push_str("/fresh");
                }
                if !v.algorithm.is_trust() && v.scope == VerificationScope::AllDrafted {
                    s.push_str("/all_drafted");
                }
                s
            }
            (kind, _, _) => format!("{}/{}", kind.as_str(), self.policy.label()),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AlgorithmName {
    Trust,
    KlThreshold,
    KlProportional,
    ConfThreshold,
    ConfProbabilistic,
}

/// Cartesian sweep grid. Threshold lists only multiply the algorithms that use them.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Grid {
    pub policies: Vec<UnmaskPolicy>,
    pub drafter_steps: Vec<usize>,
    pub algorithms: Vec<AlgorithmName>,
    pub tau_kl: Vec<f64>,
    pub tau_conf: Vec<f64>,
    /// `None` entries use the default budget.
    pub budgets: Vec<Option<usize>>,
    pub drafter_dist_source: DrafterDistSource,
    pub scope: VerificationScope,
    pub stall_window: usize,
    pub max_cycles: Option<usize>,
}

impl Default for Grid {
    fn default() -> Self {
        Self {
            policies: vec![UnmaskPolicy::top_k(1)],
            drafter_steps: vec![5],
            algorithms: vec![AlgorithmName::KlThreshold],
            tau_kl: vec![0.3],
            tau_conf: vec![0.9],
            budgets: vec![None],
            drafter_dist_source: DrafterDistSource::Stored,
            scope: VerificationScope::CurrentCycle,
            stall_window: DEFAULT_STALL_WINDOW,
            max_cycles: None,
        }
    }
}

/// Cells in canonical order: per policy, drafter-only and verifier-only
/// baselines, then every dual configuration (K outer, algorithm inner).
pub fn expand_grid(grid: &Grid) -> Result<Vec<CellConfig>> {
    if grid.policies.is_empty() || grid.drafter_steps.is_empty() || grid.algorithms.is_empty() {
        return Err(Error::config("sweep grid needs at least one policy, one K, and one algorithm"));
    }
    let need = |name: AlgorithmName, empty: bool, key: &str| {
        if grid.algorithms.contains(&name) && empty {
            Err(Error::config(format!("grid uses {name:?} but {key} is empty")))
        } else {
            Ok(())
        }
    };
    need(AlgorithmName::KlThreshold, grid.tau_kl.is_empty(), "tau_kl")?;
    need(AlgorithmName::ConfThreshold, grid.tau_conf.is_empty(), "tau_conf")?;
    need(AlgorithmName::KlProportional, grid.budgets.is_empty(), "budget")?;

    let mut algorithms = Vec::new();
    for name in &grid.algorithms {
        match name {
            AlgorithmName::Trust => algorithms.push(VerificationAlgorithm::Trust),
            AlgorithmName::KlThreshold => algorithms.extend(grid.tau_kl.iter().map(|&tau| VerificationAlgorithm::KlThreshold { tau })),
            AlgorithmName::KlProportional => algorithms.extend(grid.budgets.iter().map(|&budget| VerificationAlgorithm::KlProportional { budget })),
            AlgorithmName::ConfThreshold => algorithms.extend(grid.tau_conf.iter().map(|&tau| VerificationAlgorithm::ConfThreshold { tau })),
            AlgorithmName::ConfProbabilistic => algorithms.push(VerificationAlgorithm::ConfProbabilistic),
        }
    }

    let mut cells = Vec::new();
    let mut push = |kind, policy, drafter_steps, verification| {
        cells.push(CellConfig {
            id: cells.len(),
            kind,
            policy,
            drafter_steps,
            verification,
            stall_window: grid.stall_window,
            max_cycles: grid.max_cycles,
        })
    };
    for &policy in &grid.policies {
        policy.validate()?;
        push(RunKind::DrafterOnly, policy, None, None);
        push(RunKind::VerifierOnly, policy, None, None);
        for &k in &grid.drafter_steps {
            if k == 0 {
                return Err(Error::config("grid K values must be >= 1"));
            }
            for &algorithm in &algorithms {
                algorithm.validate()?;
                let v = VerificationConfig {
                    algorithm,
                    drafter_dist_source: grid.drafter_dist_source,
                    scope: grid.scope,
                };
                push(RunKind::Dual, policy, Some(k), Some(v));
            }
        }
    }
    Ok(cells)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum RecordStatus {
    Ok,
    Livelock,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct CostMetrics {
    pub drafter_nfe: u64,
    pub verifier_nfe: u64,
    /// `drafter_nfe + lambda * verifier_nfe`.
    pub weighted_cost: f64,
}

impl CostMetrics {
    pub fn new(drafter_nfe: u64, verifier_nfe: u64, lambda: f64) -> Self {
        Self {
            drafter_nfe,
            verifier_nfe,
            weighted_cost: drafter_nfe as f64 + lambda * verifier_nfe as f64,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RunRecord {
    pub kind: RunKind,
    pub config_id: usize,
    pub config_label: String,
    pub fingerprint: String,
    pub task_id: usize,
    pub seed: u64,
    pub status: RecordStatus,
    /// `None` for livelocked runs.
    pub quality: Option<QualityMetrics>,
    pub cost: CostMetrics,
    pub lambda: f64,
    pub cycles: usize,
    pub total_remasked: usize,
    pub forced_trust_cycles: usize,
    #[serde(skip)]
    pub wall_time_ms: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepOptions {
    /// Verifier-to-drafter cost ratio used for `weighted_cost`.
    pub lambda: f64,
    pub seed: u64,
    /// Worker threads; 0 means available parallelism.
    pub jobs: usize,
    /// Fingerprint of the enclosing run configuration.
    pub base_fingerprint: String,
}

fn run_cell(
    task: &Task,
    cell: &CellConfig,
    fp: &str,
    oracle: &Oracle,
    make_drafter: &ModelFactory<'_>,
    make_verifier: &ModelFactory<'_>,
    opts: &SweepOptions,
) -> Result<RunRecord> {
    let seed = mix_seed(opts.seed, task.id as u64, cell.id as u64);
    let started = Instant::now();
    let outcome = match cell.kind {
        RunKind::DrafterOnly => {
            let d = make_drafter()?;
            drafter_only_generate(d.as_ref(), &task.prompt, task.length, &cell.policy, seed)
        }
        RunKind::VerifierOnly => {
            let v = make_verifier()?;
            verifier_only_generate(v.as_ref(), &task.prompt, task.length, &cell.policy, seed)
        }
        RunKind::Dual => {
            let (d, v) = (make_drafter()?, make_verifier()?);
            let cfg = PipelineConfig {
                drafter_steps: cell.drafter_steps.expect("dual cell has K"),
                policy: cell.policy,
                verification: cell.verification.expect("dual cell has verification"),
                max_cycles: cell.max_cycles,
                stall_window: cell.stall_window,
                seed,
            };
            dual_diffusion_generate(d.as_ref(), v.as_ref(), &task.prompt, task.length, &cfg)
        }
    };
    let wall_time_ms = started.elapsed().as_secs_f64() * 1e3;

    let mut record = RunRecord {
        kind: cell.kind,
        config_id: cell.id,
        config_label: cell.label(),
        fingerprint: fp.to_owned(),
        task_id: task.id,
        seed,
        status: RecordStatus::Ok,
        quality: None,
        cost: CostMetrics::new(0, 0, opts.lambda),
        lambda: opts.lambda,
        cycles: 0,
        total_remasked: 0,
        forced_trust_cycles: 0,
        wall_time_ms,
    };
    match outcome {
        Ok(g) => {
            let scorer = make_verifier()?;
            record.quality = Some(score(task, &g.sequence, oracle, scorer.as_ref())?);
            record.cost = CostMetrics::new(g.stats.drafter_nfe(), g.stats.verifier_forward_passes, opts.lambda);
            record.cycles = g.stats.cycles;
            record.total_remasked = g.stats.total_remasked;
            record.forced_trust_cycles = g.stats.forced_trust_cycles;
        }
        Err(Error::Livelock {
            max_cycles,
            drafter_passes,
            verifier_passes,
        }) => {
            record.status = RecordStatus::Livelock;
            record.cost = CostMetrics::new(drafter_passes, verifier_passes, opts.lambda);
            record.cycles = max_cycles;
        }
        Err(e) => return Err(e),
    }
    Ok(record)
}

/// Runs every (cell × task) pair. Records come back sorted by config id, then
/// task id, independent of `jobs`. Livelocks are recorded per cell.
pub fn sweep(
    tasks: &[Task],
    oracle: &Oracle,
    make_drafter: &ModelFactory<'_>,
    make_verifier: &ModelFactory<'_>,
    cells: &[CellConfig],
    opts: &SweepOptions,
) -> Result<Vec<RunRecord>> {
    if tasks.is_empty() || cells.is_empty() {
        return Err(Error::config("sweep needs at least one task and one configuration"));
    }
    let fps: Vec<String> = cells
        .iter()
        .map(|c| fingerprint(&(&opts.base_fingerprint, c)))
        .collect::<Result<_>>()?;
    let work: Vec<(usize, &Task)> = (0..cells.len()).flat_map(|c| tasks.iter().map(move |t| (c, t))).collect();
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(opts.jobs)
        .build()
        .map_err(|e| Error::config(format!("cannot start worker pool: {e}")))?;
    pool.install(|| {
        work.par_iter()
            .map(|&(c, task)| run_cell(task, &cells[c], &fps[c], oracle, make_drafter, make_verifier, opts))
            .collect()
    })
}

/// Per-configuration means.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ConfigSummary {
    pub config_id: usize,
    pub kind: RunKind,
    pub config_label: String,
    pub fingerprint: String,
    pub tasks: usize,
    /// Livelocked runs count as misses.
    pub exact_match: f64,
    /// Mean over finite values only.
    pub gt_loglik: f64,
    pub impossible: usize,
    pub verifier_nll: f64,
    pub drafter_nfe: f64,
    pub verifier_nfe: f64,
    pub weighted_cost: f64,
    pub cycles: f64,
    pub total_remasked: f64,
    pub livelocks: usize,
}

fn mean(xs: impl Iterator<Item = f64>) -> f64 {
    let (sum, n) = xs.fold((0.0, 0usize), |(s, n), x| (s + x, n + 1));
    if n == 0 {
        f64::NAN
    } else {
        sum / n as f64
    }
}

/// Groups records (assumed sorted by config id) into per-config summaries.
pub fn summarize(records: &[RunRecord]) -> Vec<ConfigSummary> {
    records
        .chunk_by(|a, b| a.config_id == b.config_id)
        .map(|group| {
            let first = &group[0];
            let ok = || group.iter().filter_map(|r| r.quality.as_ref());
            ConfigSummary {
                config_id: first.config_id,
                kind: first.kind,
                config_label: first.config_label.clone(),
                fingerprint: first.fingerprint.clone(),
                tasks: group.len(),
                exact_match: mean(group.iter().map(|r| {
                    r.quality.as_ref().map_or(0.0, |q| f64::from(u8::from(q.exact_match)))
                })),
                gt_loglik: mean(ok().map(|q| q.gt_loglik).filter(|x| x.is_finite())),
                impossible: ok().filter(|q| q.gt_loglik == f64::NEG_INFINITY).count(),
                verifier_nll: mean(ok().map(|q| q.verifier_nll)),
                drafter_nfe: mean(group.iter().map(|r| r.cost.drafter_nfe as f64)),
                verifier_nfe: mean(group.iter().map(|r| r.cost.verifier_nfe as f64)),
                weighted_cost: mean(group.iter().map(|r| r.cost.weighted_cost)),
                cycles: mean(group.iter().map(|r| r.cycles as f64)),
                total_remasked: mean(group.iter().map(|r| r.total_remasked as f64)),
                livelocks: group.iter().filter(|r| r.status == RecordStatus::Livelock).count(),
            }
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::bench::make_tasks;
    use crate::models::{degrade, Degradation, MarkovOracle, OracleModel};

    fn oracle() -> Oracle {
        Oracle::Markov(
            MarkovOracle::new(
                vec![0.4, 0.4, 0.2],
                vec![vec![0.7, 0.2, 0.1], vec![0.1, 0.7, 0.2], vec![0.2, 0.1, 0.7]],
            )
            .unwrap(),
        )
    }

    fn opts(lambda: f64, jobs: usize) -> SweepOptions {
        SweepOptions {
            lambda,
            seed: 17,
            jobs,
            base_fingerprint: "test".into(),
        }
    }

    fn run(grid: &Grid, n_tasks: usize, o: &SweepOptions) -> Vec<RunRecord> {
        let oracle = oracle();
        let tasks = make_tasks(&oracle, n_tasks, 2, 8, 5).unwrap();
        let cells = expand_grid(grid).unwrap();
        let make_d = || degrade(Box::new(OracleModel::new(oracle.clone())), &[Degradation::StaleContext { refresh_period: Some(3) }]);
        let make_v = || Ok(Box::new(OracleModel::new(oracle.clone())) as Box<dyn DenoisingModel>);
        sweep(&tasks, &oracle, &make_d, &make_v, &cells, o).unwrap()
    }

    #[test]
    fn one_config_one_task_gives_three_records() {
        let recs = run(&Grid::default(), 1, &opts(5.0, 1));
        assert_eq!(recs.len(), 3);
        let kinds: Vec<RunKind> = recs.iter().map(|r| r.kind).collect();
        assert_eq!(kinds, vec![RunKind::DrafterOnly, RunKind::VerifierOnly, RunKind::Dual]);
    }

    #[test]
    fn trust_records_have_no_verifier_cost_and_lambda_zero_is_drafter_cost() {
        let grid = Grid {
            algorithms: vec![AlgorithmName::Trust],
            ..Grid::default()
        };
        for r in run(&grid, 3, &opts(0.0, 2)) {
            if r.kind == RunKind::Dual {
                assert_eq!(r.cost.verifier_nfe, 0);
            }
            assert_eq!(r.cost.weighted_cost, r.cost.drafter_nfe as f64);
        }
    }

    #[test]
    fn two_by_two_grid_counts() {
        let grid = Grid {
            algorithms: vec![AlgorithmName::Trust, AlgorithmName::KlThreshold],
            drafter_steps: vec![1, 5],
            ..Grid::default()
        };
        let cells = expand_grid(&grid).unwrap();
        assert_eq!(cells.iter().filter(|c| c.kind == RunKind::Dual).count(), 4);
        assert_eq!(cells.len(), 6);
        assert_eq!(run(&grid, 3, &opts(5.0, 0)).len(), 18);
    }

    #[test]
    fn empty_grid_is_rejected() {
        let grid = Grid {
            algorithms: vec![],
            ..Grid::default()
        };
        assert!(expand_grid(&grid).is_err());
        let grid = Grid {
            tau_kl: vec![],
            ..Grid::default()
        };
        assert!(expand_grid(&grid).is_err());
    }

    #[test]
    fn results_do_not_depend_on_job_count() {
        let grid = Grid {
            algorithms: vec![AlgorithmName::KlProportional, AlgorithmName::ConfProbabilistic],
            drafter_steps: vec![2, 3],
            ..Grid::default()
        };
        let strip = |mut v: Vec<RunRecord>| {
            v.iter_mut().for_each(|r| r.wall_time_ms = 0.0);
            v
        };
        assert_eq!(strip(run(&grid, 6, &opts(5.0, 1))), strip(run(&grid, 6, &opts(5.0, 4))));
    }

    #[test]
    fn summaries_average_per_config() {
        let recs = run(&Grid::default(), 4, &opts(2.0, 1));
        let sums = summarize(&recs);
        assert_eq!(sums.len(), 3);
        assert!(sums.iter().all(|s| s.tasks == 4));
        let vo = &sums[1];
        assert_eq!(vo.kind, RunKind::VerifierOnly);
        assert_eq!(vo.verifier_nfe, 6.0);
        assert_eq!(vo.weighted_cost, 12.0);
    }
}
