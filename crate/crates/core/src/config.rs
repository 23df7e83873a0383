//! TOML run configuration.
//!
//! Parsing is strict: unknown keys, keys that do not apply to the chosen
//! variant, and out-of-range values are rejected with a `file:line:` prefix
//! before anything runs. The schema is documented in the repository README.

use std::ops::Range;
use std::path::PathBuf;
use std::time::Duration;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use toml::Spanned;

use crate::bench::{expand_grid, AlgorithmName, Grid};
use crate::diffusion::{CommitMode, NoiseSchedule, Selection, UnmaskPolicy};
use crate::error::{Error, Result};
use crate::extmodel::ExternalModel;
use crate::models::{degrade, Degradation, DenoisingModel, EnumeratedOracle, MarkovOracle, Oracle, OracleModel};
use crate::pipeline::{PipelineConfig, DEFAULT_STALL_WINDOW};
use crate::sequence::{MaskedSequence, Token, VocabSpec};
use crate::verification::{DrafterDistSource, VerificationAlgorithm, VerificationConfig, VerificationScope};

pub const DEFAULT_LAMBDA: f64 = 5.0;
pub const DEFAULT_ELBO_SAMPLES: usize = 100;
pub const DEFAULT_EXTERNAL_TIMEOUT_MS: u64 = 30_000;

/// First 16 hex digits of SHA-256 over the canonical JSON form of `value`
/// (object keys sorted).
pub fn fingerprint<T: Serialize + ?Sized>(value: &T) -> Result<String> {
    let canonical = serde_json::to_value(value)
        .and_then(|v| serde_json::to_string(&v))
        .map_err(|e| Error::config(format!("cannot canonicalize configuration: {e}")))?;
    let digest = Sha256::digest(canonical.as_bytes());
    Ok(digest.iter().take(8).map(|b| format!("{b:02x}")).collect())
}

#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum OracleSpec {
    Markov {
        initial: Vec<f64>,
        transition: Vec<Vec<f64>>,
    },
    Enumerated {
        vocab_size: usize,
        support: Vec<(Vec<Token>, f64)>,
    },
}

impl OracleSpec {
    pub fn build(&self) -> Result<Oracle> {
        match self {
            OracleSpec::Markov { initial, transition } => {
                Ok(Oracle::Markov(MarkovOracle::new(initial.clone(), transition.clone())?))
            }
            OracleSpec::Enumerated { vocab_size, support } => Ok(Oracle::Enumerated(EnumeratedOracle::new(
                VocabSpec::new(*vocab_size)?,
                support.clone(),
            )?)),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PipelineSection {
    pub k: usize,
    pub length: usize,
    pub prompt: Vec<Token>,
    pub policy: UnmaskPolicy,
    pub verification: VerificationConfig,
    pub max_cycles: Option<usize>,
    pub stall_window: usize,
}

impl PipelineSection {
    pub fn to_pipeline_config(&self, seed: u64) -> PipelineConfig {
        PipelineConfig {
            drafter_steps: self.k,
            policy: self.policy,
            verification: self.verification,
            max_cycles: self.max_cycles,
            stall_window: self.stall_window,
            seed,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BenchSection {
    pub tasks: usize,
    pub prompt_length: usize,
    pub length: usize,
    pub lambda: f64,
    pub grid: Grid,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ModelRole {
    Drafter,
    Verifier,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(tag = "source", rename_all = "snake_case")]
pub enum CorpusSpec {
    /// `count` oracle samples of length `length`.
    Sampled { count: usize, length: usize },
    Inline { sequences: Vec<Vec<Token>> },
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EvalSection {
    pub model: ModelRole,
    pub corpus: CorpusSpec,
    pub n_samples: usize,
    pub schedule: NoiseSchedule,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ExternalSpec {
    /// Run through `sh -c`.
    pub command: String,
    pub role: ModelRole,
    pub timeout_ms: u64,
}

impl ExternalSpec {
    pub fn new(command: impl Into<String>, role: ModelRole) -> Self {
        Self {
            command: command.into(),
            role,
            timeout_ms: DEFAULT_EXTERNAL_TIMEOUT_MS,
        }
    }

    pub fn spawn(&self, vocab: VocabSpec) -> Result<ExternalModel> {
        ExternalModel::spawn(&self.command, Duration::from_millis(self.timeout_ms), Some(vocab))
    }
}

/// A fully validated run configuration.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RunConfig {
    pub seed: u64,
    pub oracle: OracleSpec,
    /// Applied innermost first on top of the oracle (or external drafter).
    pub drafter: Vec<Degradation>,
    pub pipeline: Option<PipelineSection>,
    pub bench: Option<BenchSection>,
    pub eval: Option<EvalSection>,
    pub external: Option<ExternalSpec>,
    /// Not part of the fingerprint.
    #[serde(skip)]
    pub output: Option<PathBuf>,
}

impl RunConfig {
    /// Parses and validates. `origin` names the source in error messages.
    pub fn from_toml_str(src: &str, origin: &str) -> Result<Self> {
        let ctx = Ctx { src, origin };
        let raw: RawConfig = toml::from_str(src).map_err(|e| {
            let msg = e.message().trim_end().to_owned();
            match e.span() {
                Some(span) => ctx.error(&span, msg),
                None => Error::config(format!("{origin}: {msg}")),
            }
        })?;
        raw.resolve(&ctx)
    }

    pub fn from_path(path: &std::path::Path) -> Result<Self> {
        let src = std::fs::read_to_string(path)?;
        Self::from_toml_str(&src, &path.display().to_string())
    }

    pub fn fingerprint(&self) -> Result<String> {
        fingerprint(self)
    }

    pub fn build_oracle(&self) -> Result<Oracle> {
        self.oracle.build()
    }

    pub fn pipeline(&self) -> Result<&PipelineSection> {
        self.pipeline
            .as_ref()
            .ok_or_else(|| Error::config("this command needs a [pipeline] section"))
    }

    pub fn bench(&self) -> Result<&BenchSection> {
        self.bench
            .as_ref()
            .ok_or_else(|| Error::config("this command needs a [bench] section with a [bench.grid]"))
    }

    pub fn eval(&self) -> Result<&EvalSection> {
        self.eval
            .as_ref()
            .ok_or_else(|| Error::config("this command needs an [eval] section"))
    }

    /// The verifier: the exact oracle, or the external process when
    /// `[external] role = "verifier"`.
    pub fn make_verifier(&self, oracle: &Oracle) -> Result<Box<dyn DenoisingModel>> {
        match &self.external {
            Some(x) if x.role == ModelRole::Verifier => Ok(Box::new(x.spawn(oracle.vocab())?)),
            _ => Ok(Box::new(OracleModel::new(oracle.clone()))),
        }
    }

    /// The drafter: the oracle wrapped in `[drafter]` degradations, or the
    /// external process as-is when `[external] role = "drafter"`.
    pub fn make_drafter(&self, oracle: &Oracle) -> Result<Box<dyn DenoisingModel>> {
        match &self.external {
            Some(x) if x.role == ModelRole::Drafter => Ok(Box::new(x.spawn(oracle.vocab())?)),
            _ => degrade(Box::new(OracleModel::new(oracle.clone())), &self.drafter),
        }
    }

    /// Built-in model for `role`, ignoring any external override.
    pub fn make_builtin(&self, oracle: &Oracle, role: ModelRole) -> Result<Box<dyn DenoisingModel>> {
        let base = Box::new(OracleModel::new(oracle.clone()));
        match role {
            ModelRole::Verifier => Ok(base),
            ModelRole::Drafter => degrade(base, &self.drafter),
        }
    }

    /// Clean sequences for the ELBO diagnostic.
    pub fn eval_corpus(&self, oracle: &Oracle) -> Result<Vec<MaskedSequence>> {
        let eval = self.eval()?;
        let vocab = oracle.vocab();
        match &eval.corpus {
            CorpusSpec::Inline { sequences } => sequences
                .iter()
                .map(|s| MaskedSequence::new(vocab, s.clone()))
                .collect(),
            CorpusSpec::Sampled { count, length } => {
                let mut rng = crate::rng::stream(crate::rng::mix_seed(self.seed, 0, CORPUS_STREAM));
                (0..*count)
                    .map(|_| MaskedSequence::new(vocab, oracle.sample(*length, &mut rng)?))
                    .collect()
            }
        }
    }
}

/// Stream tag for sampled evaluation corpora.
const CORPUS_STREAM: u64 = 0x636f_7270;

struct Ctx<'a> {
    src: &'a str,
    origin: &'a str,
}

impl Ctx<'_> {
    fn line_col(&self, offset: usize) -> (usize, usize) {
        let before = &self.src[..offset.min(self.src.len())];
        let line = before.matches('\n').count() + 1;
        let col = before.len() - before.rfind('\n').map_or(0, |i| i + 1) + 1;
        (line, col)
    }

    fn error(&self, span: &Range<usize>, msg: impl std::fmt::Display) -> Error {
        let (line, col) = self.line_col(span.start);
        Error::config(format!("{}:{line}:{col}: {msg}", self.origin))
    }

    fn at<T>(&self, span: &Range<usize>, r: Result<T>) -> Result<T> {
        r.map_err(|e| match e {
            Error::InvalidConfig(m) | Error::InvalidDistribution(m) | Error::Precondition(m) => self.error(span, m),
            other => self.error(span, other),
        })
    }
}

fn reject_extra(ctx: &Ctx<'_>, span: &Range<usize>, what: &str, extras: &[(&str, bool)]) -> Result<()> {
    match extras.iter().find(|(_, present)| *present) {
        Some((key, _)) => Err(ctx.error(span, format!("key `{key}` does not apply to {what}"))),
        None => Ok(()),
    }
}

fn require<T: Clone>(ctx: &Ctx<'_>, span: &Range<usize>, v: &Option<T>, what: &str) -> Result<T> {
    v.clone().ok_or_else(|| ctx.error(span, format!("missing key `{what}`")))
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawConfig {
    #[serde(default)]
    seed: u64,
    oracle: Spanned<RawOracle>,
    drafter: Option<Spanned<RawDrafter>>,
    pipeline: Option<Spanned<RawPipeline>>,
    bench: Option<Spanned<RawBench>>,
    eval: Option<Spanned<RawEval>>,
    external: Option<Spanned<RawExternal>>,
    output: Option<RawOutput>,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawOracle {
    kind: Spanned<String>,
    initial: Option<Vec<f64>>,
    transition: Option<Vec<Vec<f64>>>,
    vocab_size: Option<usize>,
    support: Option<Vec<RawSupport>>,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawSupport {
    tokens: Vec<Token>,
    weight: f64,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawDrafter {
    #[serde(default)]
    degradations: Vec<Spanned<RawDegradation>>,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawDegradation {
    kind: String,
    refresh_period: Option<u64>,
    tau: Option<f64>,
    eps: Option<f64>,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawPolicy {
    kind: String,
    k: Option<usize>,
    theta: Option<f64>,
    #[serde(default)]
    commit: CommitMode,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawVerification {
    algorithm: String,
    tau_kl: Option<f64>,
    tau_conf: Option<f64>,
    budget: Option<usize>,
    #[serde(default)]
    drafter_dist_source: DrafterDistSource,
    #[serde(default)]
    scope: VerificationScope,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawPipeline {
    k: usize,
    length: usize,
    #[serde(default)]
    prompt: Vec<Token>,
    policy: Spanned<RawPolicy>,
    verification: Spanned<RawVerification>,
    max_cycles: Option<usize>,
    stall_window: Option<usize>,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawGrid {
    k: Vec<usize>,
    algorithm: Vec<AlgorithmName>,
    #[serde(default)]
    tau_kl: Vec<f64>,
    #[serde(default)]
    tau_conf: Vec<f64>,
    budget: Option<Vec<usize>>,
    policies: Option<Vec<Spanned<RawPolicy>>>,
    #[serde(default)]
    drafter_dist_source: DrafterDistSource,
    #[serde(default)]
    scope: VerificationScope,
    stall_window: Option<usize>,
    max_cycles: Option<usize>,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawBench {
    tasks: usize,
    prompt_length: usize,
    length: usize,
    lambda: Option<f64>,
    grid: Option<Spanned<RawGrid>>,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawCorpus {
    source: String,
    count: Option<usize>,
    length: Option<usize>,
    sequences: Option<Vec<Vec<Token>>>,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawEval {
    model: ModelRole,
    corpus: Option<Spanned<RawCorpus>>,
    n_samples: Option<usize>,
    #[serde(default)]
    schedule: NoiseSchedule,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawExternal {
    command: String,
    #[serde(default = "default_role")]
    role: ModelRole,
    timeout_ms: Option<u64>,
}

fn default_role() -> ModelRole {
    ModelRole::Verifier
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawOutput {
    path: PathBuf,
}

impl RawConfig {
    fn resolve(self, ctx: &Ctx<'_>) -> Result<RunConfig> {
        let oracle = resolve_oracle(ctx, &self.oracle)?;
        let vocab = ctx.at(&self.oracle.span(), oracle.build())?.vocab();

        let drafter = match &self.drafter {
            Some(d) => d
                .get_ref()
                .degradations
                .iter()
                .map(|s| resolve_degradation(ctx, s))
                .collect::<Result<_>>()?,
            None => Vec::new(),
        };

        let pipeline = self.pipeline.as_ref().map(|p| resolve_pipeline(ctx, p, vocab)).transpose()?;
        let bench = self.bench.as_ref().map(|b| resolve_bench(ctx, b, &oracle)).transpose()?;
        let eval = self.eval.as_ref().map(|e| resolve_eval(ctx, e, &oracle, vocab)).transpose()?;

        let external = match &self.external {
            Some(x) => {
                let span = x.span();
                let x = x.get_ref();
                if x.command.trim().is_empty() {
                    return Err(ctx.error(&span, "[external] command is empty"));
                }
                let timeout_ms = x.timeout_ms.unwrap_or(DEFAULT_EXTERNAL_TIMEOUT_MS);
                if timeout_ms == 0 {
                    return Err(ctx.error(&span, "[external] timeout_ms must be >= 1"));
                }
                Some(ExternalSpec {
                    command: x.command.clone(),
                    role: x.role,
                    timeout_ms,
                })
            }
            None => None,
        };

        Ok(RunConfig {
            seed: self.seed,
            oracle,
            drafter,
            pipeline,
            bench,
            eval,
            external,
            output: self.output.map(|o| o.path),
        })
    }
}

fn resolve_oracle(ctx: &Ctx<'_>, raw: &Spanned<RawOracle>) -> Result<OracleSpec> {
    let span = raw.span();
    let o = raw.get_ref();
    match o.kind.get_ref().as_str() {
        "markov" => {
            reject_extra(ctx, &span, "a markov oracle", &[
                ("vocab_size", o.vocab_size.is_some()),
                ("support", o.support.is_some()),
            ])?;
            Ok(OracleSpec::Markov {
                initial: require(ctx, &span, &o.initial, "initial")?,
                transition: require(ctx, &span, &o.transition, "transition")?,
            })
        }
        "enumerated" => {
            reject_extra(ctx, &span, "an enumerated oracle", &[
                ("initial", o.initial.is_some()),
                ("transition", o.transition.is_some()),
            ])?;
            let support = o
                .support
                .as_ref()
                .ok_or_else(|| ctx.error(&span, "missing key `support`"))?
                .iter()
                .map(|s| (s.tokens.clone(), s.weight))
                .collect();
            Ok(OracleSpec::Enumerated {
                vocab_size: require(ctx, &span, &o.vocab_size, "vocab_size")?,
                support,
            })
        }
        other => Err(ctx.error(
            &o.kind.span(),
            format!("unknown oracle kind `{other}` (expected `markov` or `enumerated`)"),
        )),
    }
}

fn resolve_degradation(ctx: &Ctx<'_>, raw: &Spanned<RawDegradation>) -> Result<Degradation> {
    let span = raw.span();
    let d = raw.get_ref();
    let deg = match d.kind.as_str() {
        "stale_context" => {
            reject_extra(ctx, &span, "stale_context", &[("tau", d.tau.is_some()), ("eps", d.eps.is_some())])?;
            Degradation::StaleContext {
                refresh_period: d.refresh_period,
            }
        }
        "temperature" => {
            reject_extra(ctx, &span, "temperature", &[
                ("refresh_period", d.refresh_period.is_some()),
                ("eps", d.eps.is_some()),
            ])?;
            Degradation::Temperature {
                tau: require(ctx, &span, &d.tau, "tau")?,
            }
        }
        "uniform_mix" => {
            reject_extra(ctx, &span, "uniform_mix", &[
                ("refresh_period", d.refresh_period.is_some()),
                ("tau", d.tau.is_some()),
            ])?;
            Degradation::UniformMix {
                eps: require(ctx, &span, &d.eps, "eps")?,
            }
        }
        other => {
            return Err(ctx.error(
                &span,
                format!("unknown degradation `{other}` (expected stale_context, temperature, or uniform_mix)"),
            ))
        }
    };
    ctx.at(&span, deg.validate())?;
    Ok(deg)
}

fn resolve_policy(ctx: &Ctx<'_>, raw: &Spanned<RawPolicy>) -> Result<UnmaskPolicy> {
    let span = raw.span();
    let p = raw.get_ref();
    let selection = match p.kind.as_str() {
        "top_k" | "random" => {
            reject_extra(ctx, &span, &p.kind, &[("theta", p.theta.is_some())])?;
            let k = require(ctx, &span, &p.k, "k")?;
            if p.kind == "top_k" {
                Selection::TopK { k }
            } else {
                Selection::Random { k }
            }
        }
        "confidence_threshold" => {
            reject_extra(ctx, &span, "confidence_threshold", &[("k", p.k.is_some())])?;
            Selection::ConfidenceThreshold {
                theta: require(ctx, &span, &p.theta, "theta")?,
            }
        }
        other => {
            return Err(ctx.error(
                &span,
                format!("unknown policy `{other}` (expected top_k, confidence_threshold, or random)"),
            ))
        }
    };
    let policy = UnmaskPolicy {
        selection,
        commit: p.commit,
    };
    ctx.at(&span, policy.validate())?;
    Ok(policy)
}

fn resolve_verification(ctx: &Ctx<'_>, raw: &Spanned<RawVerification>) -> Result<VerificationConfig> {
    let span = raw.span();
    let v = raw.get_ref();
    let (kl, conf, budget) = (v.tau_kl.is_some(), v.tau_conf.is_some(), v.budget.is_some());
    let algorithm = match v.algorithm.as_str() {
        "trust" => {
            reject_extra(ctx, &span, "trust", &[("tau_kl", kl), ("tau_conf", conf), ("budget", budget)])?;
            VerificationAlgorithm::Trust
        }
        "kl_threshold" => {
            reject_extra(ctx, &span, "kl_threshold", &[("tau_conf", conf), ("budget", budget)])?;
            VerificationAlgorithm::KlThreshold {
                tau: require(ctx, &span, &v.tau_kl, "tau_kl")?,
            }
        }
        "kl_proportional" => {
            reject_extra(ctx, &span, "kl_proportional", &[("tau_kl", kl), ("tau_conf", conf)])?;
            VerificationAlgorithm::KlProportional { budget: v.budget }
        }
        "conf_threshold" => {
            reject_extra(ctx, &span, "conf_threshold", &[("tau_kl", kl), ("budget", budget)])?;
            VerificationAlgorithm::ConfThreshold {
                tau: require(ctx, &span, &v.tau_conf, "tau_conf")?,
            }
        }
        "conf_probabilistic" => {
            reject_extra(ctx, &span, "conf_probabilistic", &[
                ("tau_kl", kl),
                ("tau_conf", conf),
                ("budget", budget),
            ])?;
            VerificationAlgorithm::ConfProbabilistic
        }
        other => {
            return Err(ctx.error(
                &span,
                format!(
                    "unknown verification algorithm `{other}` (expected trust, kl_threshold, \
                     kl_proportional, conf_threshold, or conf_probabilistic)"
                ),
            ))
        }
    };
    ctx.at(&span, algorithm.validate())?;
    Ok(VerificationConfig {
        algorithm,
        drafter_dist_source: v.drafter_dist_source,
        scope: v.scope,
    })
}

fn resolve_pipeline(ctx: &Ctx<'_>, raw: &Spanned<RawPipeline>, vocab: VocabSpec) -> Result<PipelineSection> {
    let span = raw.span();
    let p = raw.get_ref();
    let section = PipelineSection {
        k: p.k,
        length: p.length,
        prompt: p.prompt.clone(),
        policy: resolve_policy(ctx, &p.policy)?,
        verification: resolve_verification(ctx, &p.verification)?,
        max_cycles: p.max_cycles,
        stall_window: p.stall_window.unwrap_or(DEFAULT_STALL_WINDOW),
    };
    ctx.at(&span, section.to_pipeline_config(0).validate())?;
    ctx.at(&span, MaskedSequence::with_prompt(vocab, &section.prompt, section.length).map(drop))?;
    Ok(section)
}

fn resolve_bench(ctx: &Ctx<'_>, raw: &Spanned<RawBench>, oracle: &OracleSpec) -> Result<BenchSection> {
    let span = raw.span();
    let b = raw.get_ref();
    if b.tasks == 0 {
        return Err(ctx.error(&span, "[bench] tasks must be >= 1"));
    }
    if b.prompt_length >= b.length {
        return Err(ctx.error(&span, "[bench] prompt_length must be shorter than length"));
    }
    if let OracleSpec::Enumerated { support, .. } = oracle {
        if support.first().is_some_and(|(t, _)| t.len() != b.length) {
            return Err(ctx.error(&span, "[bench] length must equal the enumerated oracle's sequence length"));
        }
    }
    let lambda = b.lambda.unwrap_or(DEFAULT_LAMBDA);
    if !(lambda >= 0.0 && lambda.is_finite()) {
        return Err(ctx.error(&span, format!("[bench] lambda must be a finite value >= 0, got {lambda}")));
    }
    let g = b
        .grid
        .as_ref()
        .ok_or_else(|| ctx.error(&span, "[bench] needs a [bench.grid] table"))?;
    let gspan = g.span();
    let g = g.get_ref();
    let policies = match &g.policies {
        Some(ps) => ps.iter().map(|p| resolve_policy(ctx, p)).collect::<Result<_>>()?,
        None => vec![UnmaskPolicy::top_k(1)],
    };
    let grid = Grid {
        policies,
        drafter_steps: g.k.clone(),
        algorithms: g.algorithm.clone(),
        tau_kl: g.tau_kl.clone(),
        tau_conf: g.tau_conf.clone(),
        budgets: match &g.budget {
            Some(bs) => bs.iter().map(|&m| Some(m)).collect(),
            None => vec![None],
        },
        drafter_dist_source: g.drafter_dist_source,
        scope: g.scope,
        stall_window: g.stall_window.unwrap_or(DEFAULT_STALL_WINDOW),
        max_cycles: g.max_cycles,
    };
    if grid.stall_window == 0 || grid.max_cycles == Some(0) {
        return Err(ctx.error(&gspan, "[bench.grid] stall_window and max_cycles must be >= 1"));
    }
    ctx.at(&gspan, expand_grid(&grid).map(drop))?;
    Ok(BenchSection {
        tasks: b.tasks,
        prompt_length: b.prompt_length,
        length: b.length,
        lambda,
        grid,
    })
}

fn resolve_eval(ctx: &Ctx<'_>, raw: &Spanned<RawEval>, oracle: &OracleSpec, vocab: VocabSpec) -> Result<EvalSection> {
    let span = raw.span();
    let e = raw.get_ref();
    let c = e
        .corpus
        .as_ref()
        .ok_or_else(|| ctx.error(&span, "[eval] needs an [eval.corpus] table"))?;
    let cspan = c.span();
    let c = c.get_ref();
    let corpus = match c.source.as_str() {
        "sampled" => {
            reject_extra(ctx, &cspan, "a sampled corpus", &[("sequences", c.sequences.is_some())])?;
            let count = require(ctx, &cspan, &c.count, "count")?;
            let length = require(ctx, &cspan, &c.length, "length")?;
            if count == 0 || length == 0 {
                return Err(ctx.error(&cspan, "sampled corpus needs count >= 1 and length >= 1"));
            }
            if let OracleSpec::Enumerated { support, .. } = oracle {
                if support.first().is_some_and(|(t, _)| t.len() != length) {
                    return Err(ctx.error(&cspan, "corpus length must equal the enumerated oracle's sequence length"));
                }
            }
            CorpusSpec::Sampled { count, length }
        }
        "inline" => {
            reject_extra(ctx, &cspan, "an inline corpus", &[
                ("count", c.count.is_some()),
                ("length", c.length.is_some()),
            ])?;
            let sequences = require(ctx, &cspan, &c.sequences, "sequences")?;
            if sequences.is_empty() {
                return Err(ctx.error(&cspan, "inline corpus is empty"));
            }
            for s in &sequences {
                ctx.at(&cspan, MaskedSequence::new(vocab, s.clone()).and_then(|m| {
                    if m.has_masks() || m.is_empty() {
                        Err(Error::config("corpus sequences must be nonempty and contain only real tokens"))
                    } else {
                        Ok(())
                    }
                }))?;
            }
            CorpusSpec::Inline { sequences }
        }
        other => {
            return Err(ctx.error(&cspan, format!("unknown corpus source `{other}` (expected sampled or inline)")))
        }
    };
    let n_samples = e.n_samples.unwrap_or(DEFAULT_ELBO_SAMPLES);
    if n_samples == 0 {
        return Err(ctx.error(&span, "[eval] n_samples must be >= 1"));
    }
    Ok(EvalSection {
        model: e.model,
        corpus,
        n_samples,
        schedule: e.schedule,
    })
}
