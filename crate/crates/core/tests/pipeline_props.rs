use maskspec::diffusion::{CommitMode, UnmaskPolicy};
use maskspec::models::{degrade, Degradation, DenoisingModel, MarkovOracle, Oracle, OracleModel};
use maskspec::pipeline::{dual_diffusion_generate, DecoderRole, PipelineConfig};
use maskspec::rng::stream;
use maskspec::verification::{
    DrafterDistSource, VerificationAlgorithm, VerificationConfig, VerificationScope,
};
use maskspec::Error;
use proptest::prelude::*;

fn normalized(w: Vec<f64>) -> Vec<f64> {
    let s: f64 = w.iter().sum();
    w.into_iter().map(|x| x / s).collect()
}

fn row(v: usize) -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec(0.01f64..1.0, v).prop_map(normalized)
}

fn chain() -> impl Strategy<Value = MarkovOracle> {
    (2usize..=4).prop_flat_map(|v| {
        (row(v), prop::collection::vec(row(v), v))
            .prop_map(|(init, tr)| MarkovOracle::new(init, tr).unwrap())
    })
}

fn degradation() -> impl Strategy<Value = Vec<Degradation>> {
    prop_oneof![
        Just(vec![]),
        (1u64..6).prop_map(|r| vec![Degradation::StaleContext { refresh_period: Some(r) }]),
        Just(vec![Degradation::StaleContext { refresh_period: None }]),
        (0.3f64..3.0).prop_map(|tau| vec![Degradation::Temperature { tau }]),
        (0.0f64..=1.0).prop_map(|eps| vec![Degradation::UniformMix { eps }]),
    ]
}

fn algorithm() -> impl Strategy<Value = VerificationAlgorithm> {
    prop_oneof![
        Just(VerificationAlgorithm::Trust),
        (0.001f64..2.0).prop_map(|tau| VerificationAlgorithm::KlThreshold { tau }),
        prop::option::of(1usize..4).prop_map(|budget| VerificationAlgorithm::KlProportional { budget }),
        (0.05f64..0.99).prop_map(|tau| VerificationAlgorithm::ConfThreshold { tau }),
        Just(VerificationAlgorithm::ConfProbabilistic),
    ]
}

fn policy() -> impl Strategy<Value = UnmaskPolicy> {
    let commit = prop_oneof![Just(CommitMode::Argmax), Just(CommitMode::Sample)];
    let sel = prop_oneof![
        (1usize..4).prop_map(UnmaskPolicy::top_k),
        (0.1f64..1.0).prop_map(UnmaskPolicy::threshold),
        (1usize..3).prop_map(UnmaskPolicy::random),
    ];
    (sel, commit).prop_map(|(p, c)| p.with_commit(c))
}

#[derive(Debug, Clone)]
struct Case {
    oracle: MarkovOracle,
    degs: Vec<Degradation>,
    prompt_len: usize,
    len: usize,
    cfg: PipelineConfig,
}

fn case() -> impl Strategy<Value = Case> {
    (
        chain(),
        degradation(),
        1usize..14,
        0usize..4,
        (1usize..7, policy(), algorithm(), any::<bool>(), any::<bool>(), 1usize..4),
        any::<u64>(),
    )
        .prop_map(|(oracle, degs, len, prompt_len, (k, policy, algorithm, fresh, all, stall), seed)| {
            let verification = VerificationConfig::new(algorithm)
                .with_source(if fresh { DrafterDistSource::Fresh } else { DrafterDistSource::Stored })
                .with_scope(if all { VerificationScope::AllDrafted } else { VerificationScope::CurrentCycle });
            let mut cfg = PipelineConfig::new(k, policy, verification, seed);
            cfg.stall_window = stall;
            Case { oracle, degs, prompt_len: prompt_len.min(len - 1), len, cfg }
        })
}

struct Run {
    result: maskspec::Result<maskspec::pipeline::Generation>,
    prompt: Vec<u32>,
    drafter_calls: u64,
    verifier_calls: u64,
}

fn run(c: &Case) -> Run {
    let oracle = Oracle::Markov(c.oracle.clone());
    let prompt = c.oracle.sample(c.prompt_len, &mut stream(c.cfg.seed));
    let drafter = degrade(Box::new(OracleModel::new(oracle.clone())), &c.degs).unwrap();
    let verifier = OracleModel::new(oracle);
    let result = dual_diffusion_generate(drafter.as_ref(), &verifier, &prompt, c.len, &c.cfg);
    Run { result, prompt, drafter_calls: drafter.call_count(), verifier_calls: verifier.call_count() }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(300))]

    #[test]
    fn generation_invariants(c in case()) {
        let r = run(&c);
        let g = match r.result {
            Ok(g) => g,
            Err(Error::Livelock { max_cycles, drafter_passes, verifier_passes }) => {
                prop_assert_eq!(max_cycles, 4 * c.len);
                prop_assert_eq!(drafter_passes, r.drafter_calls);
                prop_assert_eq!(verifier_passes, r.verifier_calls);
                return Ok(());
            }
            Err(e) => return Err(TestCaseError::fail(e.to_string())),
        };
        let s = &g.stats;

        prop_assert!(!g.sequence.has_masks());
        prop_assert_eq!(g.sequence.len(), c.len);
        prop_assert_eq!(&g.sequence.tokens()[..c.prompt_len], &r.prompt[..]);
        prop_assert!(s.cycles <= 4 * c.len);

        prop_assert_eq!(s.drafter_nfe(), r.drafter_calls);
        prop_assert_eq!(s.verifier_forward_passes, r.verifier_calls);
        if c.cfg.verification.algorithm.is_trust() {
            prop_assert_eq!(r.verifier_calls, 0);
        }
        if c.cfg.verification.drafter_dist_source == DrafterDistSource::Stored {
            prop_assert_eq!(s.drafter_fresh_passes, 0);
        }
        prop_assert_eq!(s.trace.len(), s.cycles);
        prop_assert_eq!(s.trace.iter().map(|t| t.remasked).sum::<usize>(), s.total_remasked);
        prop_assert_eq!(s.trace.iter().filter(|t| t.forced_trust).count(), s.forced_trust_cycles);
        prop_assert_eq!(s.trace.iter().map(|t| t.drafter_steps as u64).sum::<u64>(), s.drafter_forward_passes);
        for t in &s.trace {
            prop_assert!(t.drafter_steps <= c.cfg.drafter_steps);
            prop_assert_eq!(t.masked_after, t.masked_after_draft + t.remasked);
            prop_assert!(t.masked_after_draft <= t.masked_before);
            if t.forced_trust {
                prop_assert_eq!(t.remasked, 0);
            }
        }

        let mut remasks = 0;
        for (i, rec) in g.provenance.iter().enumerate() {
            remasks += rec.remask_count as usize;
            if i < c.prompt_len {
                prop_assert_eq!(rec.role, DecoderRole::Prompt);
                prop_assert_eq!(rec.remask_count, 0);
                prop_assert!(rec.decode_dist.is_none());
            } else {
                prop_assert!(matches!(rec.role, DecoderRole::Drafter | DecoderRole::Verifier), "{:?}", rec.role);
                prop_assert!(rec.cycle.is_some_and(|cy| (1..=s.cycles).contains(&cy)));
                let dist = rec.decode_dist.as_ref().unwrap();
                prop_assert_eq!(dist.len(), c.oracle.vocab().size());
                if c.cfg.policy.commit == CommitMode::Argmax {
                    let tok = g.sequence.get(i);
                    prop_assert_eq!(dist.prob(tok), dist.probs().iter().copied().fold(0.0, f64::max));
                }
            }
        }
        prop_assert_eq!(remasks, s.total_remasked);
    }

    #[test]
    fn generation_is_deterministic(c in case()) {
        let (a, b) = (run(&c), run(&c));
        match (a.result, b.result) {
            (Ok(x), Ok(y)) => prop_assert_eq!(x, y),
            (Err(x), Err(y)) => prop_assert_eq!(x.to_string(), y.to_string()),
            _ => prop_assert!(false, "outcomes differ"),
        }
    }

    #[test]
    fn generated_tokens_have_positive_chain_support(c in case()) {
        // Every row is strictly positive, so any completion is possible; this
        // guards against MASK or out-of-range ids leaking into the output.
        if let Ok(g) = run(&c).result {
            prop_assert!(g.sequence.tokens().iter().all(|&t| (t as usize) < c.oracle.vocab().size()));
            prop_assert!(c.oracle.log_joint(g.sequence.tokens()).is_finite());
        }
    }
}

#[test]
fn seeds_change_sampled_outputs() {
    let oracle = Oracle::Markov(
        MarkovOracle::new(vec![0.25; 4], vec![vec![0.25; 4]; 4]).unwrap(),
    );
    let policy = UnmaskPolicy::random(1).with_commit(CommitMode::Sample);
    let outs: std::collections::BTreeSet<Vec<u32>> = (0..8)
        .map(|seed| {
            let m = OracleModel::new(oracle.clone());
            let v = OracleModel::new(oracle.clone());
            let cfg = PipelineConfig::new(2, policy, VerificationConfig::trust(), seed);
            dual_diffusion_generate(&m, &v, &[], 10, &cfg).unwrap().sequence.tokens().to_vec()
        })
        .collect();
    assert!(outs.len() > 1);
}
