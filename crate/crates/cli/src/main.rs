use std::fs::{self, File};
use std::io::{self, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use maskspec::bench::{
    elbo_eval, exact_elbo_linear, expand_grid, make_tasks, pareto_frontier_by, summarize, sweep,
    write_records_csv, write_records_jsonl, write_summary_csv, ConfigSummary, CostKey, QualityKey, SweepOptions,
    SCHEMA_VERSION,
};
use maskspec::config::{ExternalSpec, ModelRole, RunConfig};
use maskspec::diffusion::NoiseSchedule;
use maskspec::models::Oracle;
use maskspec::pipeline::{dual_diffusion_generate, Generation};
use maskspec::sequence::MaskedSequence;
use maskspec::{Error, Result};
use serde_json::json;

/// Only environment variable consulted: overrides the output directory.
const OUTPUT_ENV: &str = "MASKSPEC_OUTPUT_DIR";

const EXIT_CONFIG: u8 = 1;
const EXIT_LIVELOCK: u8 = 2;
const EXIT_IO: u8 = 3;

#[derive(Parser)]
#[command(name = "maskspec", version, about = "Draft-and-verify decoding for masked diffusion models")]
struct Cli {
    #[command(subcommand)]
    command: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Generate one sequence with the draft-and-verify pipeline.
    Generate(Common),
    /// Run the benchmark grid and write CSV / JSONL records.
    Sweep {
        #[command(flatten)]
        common: Common,
        /// Worker threads (default: available parallelism).
        #[arg(long)]
        jobs: Option<usize>,
        /// Add wall-clock timings to the JSONL records.
        #[arg(long)]
        timing: bool,
    },
    /// Estimate a model's ELBO on a corpus.
    EvalModel(Common),
    /// Print the benchmark task suite as JSON lines.
    Tasks(Common),
    /// Serve a built-in model over the external-model protocol on stdio.
    #[command(hide = true)]
    ServeBuiltin {
        #[arg(long)]
        config: PathBuf,
        #[arg(long, value_enum, default_value_t = Role::Verifier)]
        role: Role,
    },
}

#[derive(Args)]
struct Common {
    #[arg(long)]
    config: PathBuf,
    /// Overrides the config's seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory; overrides MASKSPEC_OUTPUT_DIR and [output] path.
    #[arg(long)]
    output: Option<PathBuf>,
    /// Command line of a process speaking the external-model protocol.
    #[arg(long, value_name = "COMMAND")]
    external_model: Option<String>,
    #[arg(long, value_enum, default_value_t = Role::Verifier, requires = "external_model")]
    external_role: Role,
}

#[derive(Clone, Copy, ValueEnum)]
enum Role {
    Drafter,
    Verifier,
}

impl From<Role> for ModelRole {
    fn from(r: Role) -> Self {
        match r {
            Role::Drafter => ModelRole::Drafter,
            Role::Verifier => ModelRole::Verifier,
        }
    }
}

impl Common {
    fn load(&self) -> Result<RunConfig> {
        let mut cfg = RunConfig::from_path(&self.config).map_err(|e| match e {
            Error::Io(io) => Error::InvalidConfig(format!("cannot read {}: {io}", self.config.display())),
            other => other,
        })?;
        if let Some(seed) = self.seed {
            cfg.seed = seed;
        }
        if let Some(cmd) = &self.external_model {
            cfg.external = Some(ExternalSpec::new(cmd.clone(), self.external_role.into()));
        }
        Ok(cfg)
    }

    fn output_dir(&self, cfg: &RunConfig) -> Option<PathBuf> {
        self.output
            .clone()
            .or_else(|| std::env::var_os(OUTPUT_ENV).map(PathBuf::from))
            .or_else(|| cfg.output.clone())
    }
}

fn create(dir: &Path, name: &str) -> Result<BufWriter<File>> {
    fs::create_dir_all(dir)?;
    Ok(BufWriter::new(File::create(dir.join(name))?))
}

fn print_generation(g: &Generation) {
    let s = &g.stats;
    println!("sequence: {}", g.sequence);
    println!(
        "stats: drafter_forward_passes={} drafter_fresh_passes={} verifier_forward_passes={} cycles={} \
         total_remasked={} forced_trust_cycles={}",
        s.drafter_forward_passes,
        s.drafter_fresh_passes,
        s.verifier_forward_passes,
        s.cycles,
        s.total_remasked,
        s.forced_trust_cycles
    );
    println!("cycle  steps  masked_before  after_draft  remasked  masked_after  verified  forced_trust");
    for t in &s.trace {
        println!(
            "{:>5}  {:>5}  {:>13}  {:>11}  {:>8}  {:>12}  {:>8}  {:>12}",
            t.cycle, t.drafter_steps, t.masked_before, t.masked_after_draft, t.remasked, t.masked_after, t.verified, t.forced_trust
        );
    }
}

fn cmd_generate(args: &Common) -> Result<()> {
    let cfg = args.load()?;
    let fp = cfg.fingerprint()?;
    let oracle = cfg.build_oracle()?;
    let p = cfg.pipeline()?;
    let drafter = cfg.make_drafter(&oracle)?;
    let verifier = cfg.make_verifier(&oracle)?;
    println!("fingerprint: {fp}");
    println!("seed: {}", cfg.seed);
    println!("drafter: {}", drafter.describe());
    println!("verifier: {}", verifier.describe());
    let g = dual_diffusion_generate(drafter.as_ref(), verifier.as_ref(), &p.prompt, p.length, &p.to_pipeline_config(cfg.seed))?;
    print_generation(&g);
    if let Some(dir) = args.output_dir(&cfg) {
        let provenance: Vec<_> = g
            .provenance
            .iter()
            .map(|r| json!({"role": r.role, "cycle": r.cycle, "remask_count": r.remask_count}))
            .collect();
        let record = json!({
            "schema_version": SCHEMA_VERSION,
            "fingerprint": fp,
            "seed": cfg.seed,
            "tokens": g.sequence.tokens(),
            "prompt_length": p.prompt.len(),
            "stats": g.stats,
            "provenance": provenance,
        });
        let mut w = create(&dir, "generation.json")?;
        serde_json::to_writer_pretty(&mut w, &record).map_err(|e| Error::Io(e.into()))?;
        w.write_all(b"\n")?;
        w.flush()?;
        println!("wrote {}", dir.join("generation.json").display());
    }
    Ok(())
}

fn summary_line(s: &ConfigSummary) -> String {
    format!(
        "{:>3}  {:<48}  {:>6.3}  {:>9.3}  {:>8.2}  {:>8.2}  {:>9.2}  {:>4}",
        s.config_id, s.config_label, s.exact_match, s.gt_loglik, s.drafter_nfe, s.verifier_nfe, s.weighted_cost, s.livelocks
    )
}

fn cmd_sweep(args: &Common, jobs: Option<usize>, timing: bool) -> Result<()> {
    let cfg = args.load()?;
    let bench = cfg.bench()?;
    let oracle = cfg.build_oracle()?;
    let fp = cfg.fingerprint()?;
    let tasks = make_tasks(&oracle, bench.tasks, bench.prompt_length, bench.length, cfg.seed)?;
    let cells = expand_grid(&bench.grid)?;
    let opts = SweepOptions {
        lambda: bench.lambda,
        seed: cfg.seed,
        jobs: jobs.unwrap_or(0),
        base_fingerprint: fp.clone(),
    };
    let make_drafter = || cfg.make_drafter(&oracle);
    let make_verifier = || cfg.make_verifier(&oracle);
    let records = sweep(&tasks, &oracle, &make_drafter, &make_verifier, &cells, &opts)?;
    let summaries = summarize(&records);

    println!("fingerprint: {fp}");
    println!("tasks: {}  configs: {}  records: {}  lambda: {}", tasks.len(), cells.len(), records.len(), bench.lambda);
    println!(" id  {:<48}  {:>6}  {:>9}  {:>8}  {:>8}  {:>9}  {:>4}", "config", "exact", "gt_ll", "d_nfe", "v_nfe", "cost", "live");
    for s in &summaries {
        println!("{}", summary_line(s));
    }
    let impossible: usize = summaries.iter().map(|s| s.impossible).sum();
    if impossible > 0 {
        println!("{impossible} generated sequences have zero oracle probability (excluded from gt_ll)");
    }
    let frontier = pareto_frontier_by(
        &summaries,
        |s| CostKey::WeightedCost.of_summary(s),
        |s| QualityKey::ExactMatch.of_summary(s),
    );
    println!("pareto frontier (weighted cost vs exact match):");
    for s in &frontier {
        println!("{}", summary_line(s));
    }

    if let Some(dir) = args.output_dir(&cfg) {
        let mut w = create(&dir, "records.csv")?;
        write_records_csv(&mut w, &records)?;
        let mut w = create(&dir, "records.jsonl")?;
        write_records_jsonl(&mut w, &records, timing)?;
        let mut w = create(&dir, "summary.csv")?;
        write_summary_csv(&mut w, &summaries)?;
        println!("wrote records.csv, records.jsonl, summary.csv to {}", dir.display());
    }
    Ok(())
}

/// Largest length for which eval-model enumerates mask patterns.
const EXACT_CHECK_MAX_LEN: usize = 8;
/// Largest `vocab^len` for the brute-force oracle comparison.
const EXACT_CHECK_MAX_SUPPORT: usize = 1 << 12;

fn oracle_exactness(oracle: &Oracle, corpus: &[MaskedSequence]) -> Result<Option<(f64, usize)>> {
    let Oracle::Markov(m) = oracle else {
        return Ok(None);
    };
    let Some(len) = corpus.first().map(MaskedSequence::len) else {
        return Ok(None);
    };
    let support = m.vocab().size().checked_pow(len as u32).unwrap_or(usize::MAX);
    if len > EXACT_CHECK_MAX_LEN || support > EXACT_CHECK_MAX_SUPPORT || corpus.iter().any(|s| s.len() != len) {
        return Ok(None);
    }
    let brute = m.to_enumerated(len)?;
    let (mut worst, mut checked) = (0.0f64, 0);
    for x in corpus.iter().take(16) {
        for pattern in 0u32..(1 << len) {
            let mut xt = x.clone();
            (0..len).filter(|i| pattern >> i & 1 == 1).for_each(|i| xt.mask(i));
            let (a, b) = (m.posterior(&xt)?, brute.posterior(&xt)?);
            for (p, q) in a.iter().zip(b.iter()) {
                for (x, y) in p.probs().iter().zip(q.probs()) {
                    worst = worst.max((x - y).abs());
                }
            }
            checked += 1;
        }
    }
    Ok(Some((worst, checked)))
}

fn cmd_eval(args: &Common) -> Result<()> {
    let cfg = args.load()?;
    let eval = cfg.eval()?;
    let oracle = cfg.build_oracle()?;
    let corpus = cfg.eval_corpus(&oracle)?;
    let model = match eval.model {
        ModelRole::Drafter => cfg.make_drafter(&oracle)?,
        ModelRole::Verifier => cfg.make_verifier(&oracle)?,
    };
    let est = elbo_eval(model.as_ref(), &corpus, eval.schedule, eval.n_samples, cfg.seed)?;
    println!("fingerprint: {}", cfg.fingerprint()?);
    println!("model: {}", model.describe());
    println!("corpus: {} sequences, {} samples each, {:?} schedule", corpus.len(), eval.n_samples, eval.schedule);
    println!("elbo: mean={} std_err={} per_token_loss={} draws={} masked_tokens={}", est.mean, est.std_err, est.per_token_loss, est.draws, est.masked_tokens);

    let short = corpus.iter().all(|s| s.len() <= EXACT_CHECK_MAX_LEN);
    let exact = if short && eval.schedule == NoiseSchedule::Linear {
        let fresh = match eval.model {
            ModelRole::Drafter => cfg.make_drafter(&oracle)?,
            ModelRole::Verifier => cfg.make_verifier(&oracle)?,
        };
        let exact = exact_elbo_linear(fresh.as_ref(), &corpus)?;
        let z = if est.std_err > 0.0 { (est.mean - exact).abs() / est.std_err } else { 0.0 };
        let verdict = if z <= 3.0 { "yes" } else { "no" };
        println!("exact (enumerated): {exact}  |mean - exact| / std_err = {z:.3}  within 3 std_err: {verdict}");
        Some(exact)
    } else {
        println!("exact (enumerated): skipped (needs the linear schedule and length <= {EXACT_CHECK_MAX_LEN})");
        None
    };
    let check = oracle_exactness(&oracle, &corpus)?;
    match check {
        Some((worst, n)) => println!("oracle exactness: max |forward-backward - enumeration| = {worst:e} over {n} mask patterns"),
        None => println!(
            "oracle exactness: skipped (needs a markov oracle, length <= {EXACT_CHECK_MAX_LEN} and at most {EXACT_CHECK_MAX_SUPPORT} sequences)"
        ),
    }

    if let Some(dir) = args.output_dir(&cfg) {
        let record = json!({
            "schema_version": SCHEMA_VERSION,
            "fingerprint": cfg.fingerprint()?,
            "seed": cfg.seed,
            "estimate": est,
            "exact": exact,
            "oracle_max_abs_error": check.map(|c| c.0),
        });
        let mut w = create(&dir, "elbo.json")?;
        serde_json::to_writer_pretty(&mut w, &record).map_err(|e| Error::Io(e.into()))?;
        w.write_all(b"\n")?;
        w.flush()?;
    }
    Ok(())
}

fn cmd_tasks(args: &Common) -> Result<()> {
    let cfg = args.load()?;
    let bench = cfg.bench()?;
    let oracle = cfg.build_oracle()?;
    let tasks = make_tasks(&oracle, bench.tasks, bench.prompt_length, bench.length, cfg.seed)?;
    let mut lines = Vec::new();
    for t in &tasks {
        serde_json::to_writer(&mut lines, t).map_err(|e| Error::Io(e.into()))?;
        lines.push(b'\n');
    }
    io::stdout().lock().write_all(&lines)?;
    if let Some(dir) = args.output_dir(&cfg) {
        let mut w = create(&dir, "tasks.jsonl")?;
        w.write_all(&lines)?;
        w.flush()?;
    }
    Ok(())
}

fn cmd_serve(config: &Path, role: Role) -> Result<()> {
    let cfg = RunConfig::from_path(config)?;
    let oracle = cfg.build_oracle()?;
    let model = cfg.make_builtin(&oracle, role.into())?;
    maskspec::extmodel::serve(model.as_ref(), io::stdin().lock(), io::stdout().lock())
}

fn exit_code(e: &Error) -> u8 {
    match e {
        Error::Livelock { .. } => EXIT_LIVELOCK,
        Error::Io(_) | Error::ModelUnavailable(_) | Error::Protocol(_) => EXIT_IO,
        _ => EXIT_CONFIG,
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) if e.exit_code() == 0 => e.exit(),
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(EXIT_CONFIG);
        }
    };
    let result = match &cli.command {
        Cmd::Generate(c) => cmd_generate(c),
        Cmd::Sweep { common, jobs, timing } => cmd_sweep(common, *jobs, *timing),
        Cmd::EvalModel(c) => cmd_eval(c),
        Cmd::Tasks(c) => cmd_tasks(c),
        Cmd::ServeBuiltin { config, role } => cmd_serve(config, *role),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            if let Error::Livelock {
                drafter_passes,
                verifier_passes,
                ..
            } = e
            {
                eprintln!("drafter passes: {drafter_passes}, verifier passes: {verifier_passes}");
            }
            ExitCode::from(exit_code(&e))
        }
    }
}
