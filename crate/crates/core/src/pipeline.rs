//! Draft-then-verify generation loop and its single-model baselines.
//!
//! Each cycle runs up to `K` unmasking steps with the drafter, then (unless
//! verification is trust) one verifier forward pass whose output decides
//! which tokens decoded by the drafter go back to MASK. Remasked positions are
//! re-drafted in later cycles.
//!
//! Termination: if the unmasked count does not strictly increase over
//! `stall_window` consecutive cycles, the next cycle runs with forced trust.
//! Running past `max_cycles` (default `4 * L`) is a livelock error.

use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

use crate::diffusion::{unmask_step, DecodeStamp, UnmaskPolicy};
use crate::distribution::{Distribution, PositionDistributions};
use crate::error::{Error, Result};
use crate::models::DenoisingModel;
use crate::rng::{stream, StreamRng};
use crate::sequence::{MaskedSequence, Token};
use crate::verification::{verify, DrafterDistSource, VerificationConfig, VerificationScope};

pub const DEFAULT_STALL_WINDOW: usize = 3;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DecoderRole {
    Prompt,
    Drafter,
    Verifier,
    Undecoded,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PositionRecord {
    pub role: DecoderRole,
    pub cycle: Option<usize>,
    /// The decoder's distribution at the moment it committed this token.
    pub decode_dist: Option<Distribution>,
    pub remask_count: u32,
}

/// Per-position history of who decoded what, when, and how often it was undone.
#[derive(Debug, Clone, PartialEq)]
pub struct DecodeProvenance {
    positions: Vec<PositionRecord>,
}

impl DecodeProvenance {
    pub fn new(len: usize, prompt_len: usize) -> Self {
        let positions = (0..len)
            .map(|i| PositionRecord {
                role: if i < prompt_len {
                    DecoderRole::Prompt
                } else {
                    DecoderRole::Undecoded
                },
                cycle: None,
                decode_dist: None,
                remask_count: 0,
            })
            .collect();
        Self { positions }
    }

    pub fn len(&self) -> usize {
        self.positions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.positions.is_empty()
    }

    pub fn get(&self, position: usize) -> &PositionRecord {
        &self.positions[position]
    }

    pub fn iter(&self) -> std::slice::Iter<'_, PositionRecord> {
        self.positions.iter()
    }

    pub(crate) fn record_decode(&mut self, position: usize, stamp: DecodeStamp, dist: Distribution) {
        let rec = &mut self.positions[position];
        debug_assert_ne!(rec.role, DecoderRole::Prompt);
        rec.role = stamp.role;
        rec.cycle = Some(stamp.cycle);
        rec.decode_dist = Some(dist);
    }

    fn record_remask(&mut self, position: usize) {
        let rec = &mut self.positions[position];
        rec.role = DecoderRole::Undecoded;
        rec.cycle = None;
        rec.decode_dist = None;
        rec.remask_count += 1;
    }

    /// Drafter-decoded positions eligible for verification under `scope`.
    fn scope(&self, scope: VerificationScope, cycle: usize) -> BTreeSet<usize> {
        self.positions
            .iter()
            .enumerate()
            .filter(|(_, r)| {
                r.role == DecoderRole::Drafter
                    && match scope {
                        VerificationScope::CurrentCycle => r.cycle == Some(cycle),
                        VerificationScope::AllDrafted => true,
                    }
            })
            .map(|(i, _)| i)
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct CycleTrace {
    pub cycle: usize,
    pub drafter_steps: usize,
    pub masked_before: usize,
    pub masked_after_draft: usize,
    pub masked_after: usize,
    pub remasked: usize,
    pub verified: bool,
    pub forced_trust: bool,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize)]
pub struct GenStats {
    /// Unmasking steps run by the drafter.
    pub drafter_forward_passes: u64,
    /// Extra drafter passes for fresh-source KL verification.
    pub drafter_fresh_passes: u64,
    pub verifier_forward_passes: u64,
    pub cycles: usize,
    pub total_remasked: usize,
    pub forced_trust_cycles: usize,
    pub trace: Vec<CycleTrace>,
}

impl GenStats {
    pub fn drafter_nfe(&self) -> u64 {
        self.drafter_forward_passes + self.drafter_fresh_passes
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct PipelineConfig {
    /// Drafter steps per cycle (K). `usize::MAX` drafts until done.
    pub drafter_steps: usize,
    pub policy: UnmaskPolicy,
    pub verification: VerificationConfig,
    /// `None` → `4 * L`.
    pub max_cycles: Option<usize>,
    pub stall_window: usize,
    pub seed: u64,
}

impl PipelineConfig {
    pub fn new(drafter_steps: usize, policy: UnmaskPolicy, verification: VerificationConfig, seed: u64) -> Self {
        Self {
            drafter_steps,
            policy,
            verification,
            max_cycles: None,
            stall_window: DEFAULT_STALL_WINDOW,
            seed,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.drafter_steps == 0 {
            return Err(Error::config("K (drafter steps per cycle) must be >= 1"));
        }
        if self.max_cycles == Some(0) {
            return Err(Error::config("max_cycles must be >= 1"));
        }
        if self.stall_window == 0 {
            return Err(Error::config("stall_window must be >= 1"));
        }
        self.policy.validate()?;
        self.verification.algorithm.validate()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Generation {
    pub sequence: MaskedSequence,
    pub stats: GenStats,
    pub provenance: DecodeProvenance,
}

fn start(model: &dyn DenoisingModel, prompt: &[Token], len: usize) -> Result<(MaskedSequence, DecodeProvenance)> {
    let seq = MaskedSequence::with_prompt(model.vocab(), prompt, len)?;
    Ok((seq, DecodeProvenance::new(len, prompt.len())))
}

/// Draft-and-verify generation.
pub fn dual_diffusion_generate(
    drafter: &dyn DenoisingModel,
    verifier: &dyn DenoisingModel,
    prompt: &[Token],
    len: usize,
    cfg: &PipelineConfig,
) -> Result<Generation> {
    cfg.validate()?;
    if drafter.vocab() != verifier.vocab() {
        return Err(Error::config(format!(
            "drafter vocabulary {} differs from verifier vocabulary {}",
            drafter.vocab().size(),
            verifier.vocab().size()
        )));
    }
    let (mut seq, mut prov) = start(drafter, prompt, len)?;
    let mut rng = stream(cfg.seed);
    let mut stats = GenStats::default();
    let max_cycles = cfg.max_cycles.unwrap_or(4 * len);
    let mut stalled = 0;
    let mut unmasked = len - seq.masked_count();

    drafter.refresh();
    while seq.has_masks() {
        if stats.cycles >= max_cycles {
            return Err(Error::Livelock {
                max_cycles,
                drafter_passes: stats.drafter_nfe(),
                verifier_passes: stats.verifier_forward_passes,
            });
        }
        stats.cycles += 1;
        let cycle = stats.cycles;
        drafter.refresh();

        let forced_trust = stalled >= cfg.stall_window;
        if forced_trust {
            stalled = 0;
            stats.forced_trust_cycles += 1;
        }

        let masked_before = seq.masked_count();
        let stamp = DecodeStamp {
            role: DecoderRole::Drafter,
            cycle,
        };
        let mut steps = 0;
        while steps < cfg.drafter_steps && seq.has_masks() {
            unmask_step(drafter, &mut seq, &cfg.policy, &mut rng, &mut prov, stamp)?;
            steps += 1;
        }
        stats.drafter_forward_passes += steps as u64;
        let masked_after_draft = seq.masked_count();

        let verified = !(forced_trust || cfg.verification.algorithm.is_trust());
        let mut remasked = 0;
        if verified {
            drafter.refresh();
            let scope = prov.scope(cfg.verification.scope, cycle);
            let drafter_dists = if cfg.verification.algorithm.uses_drafter() {
                Some(match cfg.verification.drafter_dist_source {
                    DrafterDistSource::Stored => stored_dists(&prov, &scope, seq.len())?,
                    DrafterDistSource::Fresh => {
                        stats.drafter_fresh_passes += 1;
                        drafter.predict(&seq)?
                    }
                })
            } else {
                None
            };
            let verifier_dists = verifier.predict(&seq)?;
            stats.verifier_forward_passes += 1;

            let outcome = verify(
                &seq,
                drafter_dists.as_ref(),
                &verifier_dists,
                &scope,
                &cfg.verification,
                &mut rng,
            )?;
            for &i in &outcome.remasked {
                prov.record_remask(i);
            }
            remasked = outcome.remasked.len();
            stats.total_remasked += remasked;
            seq = outcome.verified;
        }

        let now_unmasked = len - seq.masked_count();
        if now_unmasked > unmasked {
            stalled = 0;
        } else {
            stalled += 1;
        }
        unmasked = now_unmasked;

        stats.trace.push(CycleTrace {
            cycle,
            drafter_steps: steps,
            masked_before,
            masked_after_draft,
            masked_after: seq.masked_count(),
            remasked,
            verified,
            forced_trust,
        });
    }

    Ok(Generation {
        sequence: seq,
        stats,
        provenance: prov,
    })
}

/// Decode-time drafter distributions for the scope; other slots are filled
/// with a uniform placeholder that verification never reads.
fn stored_dists(prov: &DecodeProvenance, scope: &BTreeSet<usize>, len: usize) -> Result<PositionDistributions> {
    let size = prov
        .iter()
        .find_map(|r| r.decode_dist.as_ref().map(Distribution::len))
        .unwrap_or(2);
    (0..len)
        .map(|i| match &prov.get(i).decode_dist {
            Some(d) if scope.contains(&i) => Ok(d.clone()),
            None if scope.contains(&i) => Err(Error::precondition(format!("no stored distribution at {i}"))),
            _ => Ok(Distribution::uniform(size)),
        })
        .collect::<Result<Vec<_>>>()
        .map(PositionDistributions::new)
}

fn single_model(
    model: &dyn DenoisingModel,
    role: DecoderRole,
    prompt: &[Token],
    len: usize,
    policy: &UnmaskPolicy,
    seed: u64,
) -> Result<(Generation, u64)> {
    policy.validate()?;
    let (mut seq, mut prov) = start(model, prompt, len)?;
    let mut rng: StreamRng = stream(seed);
    let stamp = DecodeStamp { role, cycle: 1 };
    let mut passes = 0u64;
    model.refresh();
    while seq.has_masks() {
        unmask_step(model, &mut seq, policy, &mut rng, &mut prov, stamp)?;
        passes += 1;
    }
    let stats = GenStats {
        cycles: 1,
        ..GenStats::default()
    };
    Ok((
        Generation {
            sequence: seq,
            stats,
            provenance: prov,
        },
        passes,
    ))
}

/// Standard masked-diffusion decoding with the verifier alone.
pub fn verifier_only_generate(
    verifier: &dyn DenoisingModel,
    prompt: &[Token],
    len: usize,
    policy: &UnmaskPolicy,
    seed: u64,
) -> Result<Generation> {
    let (mut g, passes) = single_model(verifier, DecoderRole::Verifier, prompt, len, policy, seed)?;
    g.stats.verifier_forward_passes = passes;
    Ok(g)
}

/// Decoding with the drafter alone: one unbounded drafting phase, no verification.
pub fn drafter_only_generate(
    drafter: &dyn DenoisingModel,
    prompt: &[Token],
    len: usize,
    policy: &UnmaskPolicy,
    seed: u64,
) -> Result<Generation> {
    let (mut g, passes) = single_model(drafter, DecoderRole::Drafter, prompt, len, policy, seed)?;
    g.stats.drafter_forward_passes = passes;
    Ok(g)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::models::{degrade, Degradation, MarkovOracle, OracleModel};
    use crate::verification::VerificationAlgorithm;

    fn chain() -> MarkovOracle {
        MarkovOracle::new(
            vec![0.5, 0.3, 0.2],
            vec![vec![0.6, 0.3, 0.1], vec![0.2, 0.5, 0.3], vec![0.3, 0.1, 0.6]],
        )
        .unwrap()
    }

    fn oracle() -> OracleModel {
        OracleModel::from(chain())
    }

    #[test]
    fn loop_arithmetic_without_remasks() {
        let (d, v) = (oracle(), oracle());
        let cfg = PipelineConfig::new(
            5,
            UnmaskPolicy::top_k(1),
            VerificationConfig::new(VerificationAlgorithm::KlThreshold { tau: 1e-6 })
                .with_source(DrafterDistSource::Fresh),
            1,
        );
        let g = dual_diffusion_generate(&d, &v, &[], 16, &cfg).unwrap();
        assert_eq!(g.stats.total_remasked, 0);
        assert_eq!(g.stats.cycles, 4);
        assert_eq!(g.stats.drafter_forward_passes, 16);
        assert_eq!(g.stats.verifier_forward_passes, 4);
        assert_eq!(g.stats.drafter_fresh_passes, 4);
        assert_eq!(v.call_count(), 4);
        assert_eq!(d.call_count(), 20);
        assert_eq!(g.stats.trace.last().unwrap().drafter_steps, 1);
    }

    #[test]
    fn trust_never_calls_the_verifier() {
        let (d, v) = (oracle(), oracle());
        let cfg = PipelineConfig::new(1, UnmaskPolicy::top_k(1), VerificationConfig::trust(), 9);
        let g = dual_diffusion_generate(&d, &v, &[0, 1], 8, &cfg).unwrap();
        assert_eq!(g.stats.verifier_forward_passes, 0);
        assert_eq!(v.call_count(), 0);
        assert!(!g.sequence.has_masks());
    }

    #[test]
    fn trust_with_unit_k_matches_verifier_only() {
        let (d, v) = (oracle(), oracle());
        let cfg = PipelineConfig::new(1, UnmaskPolicy::top_k(1), VerificationConfig::trust(), 4);
        let dual = dual_diffusion_generate(&d, &v, &[2], 10, &cfg).unwrap();
        let base = verifier_only_generate(&oracle(), &[2], 10, &UnmaskPolicy::top_k(1), 4).unwrap();
        assert_eq!(dual.sequence, base.sequence);
    }

    #[test]
    fn verifier_only_pass_counts() {
        let v = oracle();
        let g = verifier_only_generate(&v, &[], 16, &UnmaskPolicy::top_k(16), 0).unwrap();
        assert_eq!(g.stats.verifier_forward_passes, 1);
        let g = verifier_only_generate(&v, &[], 16, &UnmaskPolicy::top_k(1), 0).unwrap();
        assert_eq!(g.stats.verifier_forward_passes, 16);
        let g = verifier_only_generate(&v, &[], 16, &UnmaskPolicy::threshold(0.5), 0).unwrap();
        assert!((1..=16).contains(&g.stats.verifier_forward_passes));
        assert_eq!(g.stats.drafter_forward_passes, 0);
    }

    #[test]
    fn prompt_survives_and_is_never_remasked() {
        let d = degrade(Box::new(oracle()), &[Degradation::UniformMix { eps: 0.9 }]).unwrap();
        let v = oracle();
        let cfg = PipelineConfig::new(
            2,
            UnmaskPolicy::top_k(2),
            VerificationConfig::new(VerificationAlgorithm::ConfThreshold { tau: 0.55 })
                .with_scope(VerificationScope::AllDrafted),
            3,
        );
        let g = dual_diffusion_generate(d.as_ref(), &v, &[2, 2, 0], 12, &cfg).unwrap();
        assert_eq!(&g.sequence.tokens()[..3], &[2, 2, 0]);
        for i in 0..3 {
            assert_eq!(g.provenance.get(i).role, DecoderRole::Prompt);
            assert_eq!(g.provenance.get(i).remask_count, 0);
        }
    }

    #[test]
    fn strict_verifier_trips_the_stall_guard() {
        let d = degrade(Box::new(oracle()), &[Degradation::UniformMix { eps: 1.0 }]).unwrap();
        let v = oracle();
        // uniform drafter vs. peaked verifier: every drafted token has KL > 0.01
        let cfg = PipelineConfig::new(
            1,
            UnmaskPolicy::top_k(1),
            VerificationConfig::new(VerificationAlgorithm::KlThreshold { tau: 0.01 }),
            0,
        );
        let g = dual_diffusion_generate(d.as_ref(), &v, &[], 6, &cfg).unwrap();
        assert!(g.stats.forced_trust_cycles >= 1);
        assert!(g.stats.cycles <= 4 * 6);
        let forced = g.stats.trace.iter().filter(|t| t.forced_trust).count();
        assert_eq!(forced, g.stats.forced_trust_cycles);
    }

    #[test]
    fn livelock_when_cap_is_too_small() {
        let d = degrade(Box::new(oracle()), &[Degradation::UniformMix { eps: 1.0 }]).unwrap();
        let v = oracle();
        let mut cfg = PipelineConfig::new(
            1,
            UnmaskPolicy::top_k(1),
            VerificationConfig::new(VerificationAlgorithm::KlThreshold { tau: 0.01 }),
            0,
        );
        cfg.max_cycles = Some(3);
        let err = dual_diffusion_generate(d.as_ref(), &v, &[], 6, &cfg).unwrap_err();
        assert!(matches!(err, Error::Livelock { max_cycles: 3, .. }));
    }

    #[test]
    fn invalid_configs_are_rejected() {
        let (d, v) = (oracle(), oracle());
        let cfg = PipelineConfig::new(0, UnmaskPolicy::top_k(1), VerificationConfig::trust(), 0);
        assert!(matches!(dual_diffusion_generate(&d, &v, &[], 4, &cfg), Err(Error::InvalidConfig(_))));
        let cfg = PipelineConfig::new(1, UnmaskPolicy::top_k(1), VerificationConfig::trust(), 0);
        assert!(dual_diffusion_generate(&d, &v, &[0, 0, 0, 0], 4, &cfg).is_err());
    }
}
