use std::sync::Mutex;

use serde::{Deserialize, Serialize};

use super::{CallCounter, DenoisingModel};
use crate::distribution::{Distribution, PositionDistributions};
use crate::error::{Error, Result};
use crate::sequence::{MaskedSequence, VocabSpec};

/// One layer of drafter approximation error.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum Degradation {
    /// Condition on a snapshot of the sequence taken at the last refresh.
    /// The snapshot is retaken every `refresh_period` calls (never when
    /// `None`) and whenever [`DenoisingModel::refresh`] is called.
    StaleContext {
        #[serde(default, skip_serializing_if = "Option::is_none")]
        refresh_period: Option<u64>,
    },
    /// `p_i^(1/tau)`, renormalized.
    Temperature { tau: f64 },
    /// `(1 - eps) p + eps * uniform`.
    UniformMix { eps: f64 },
}

impl Degradation {
    pub fn validate(&self) -> Result<()> {
        match *self {
            Degradation::StaleContext {
                refresh_period: Some(0),
            } => Err(Error::config("stale_context refresh_period must be >= 1")),
            Degradation::Temperature { tau } if !(tau > 0.0 && tau.is_finite()) => {
                Err(Error::config(format!("temperature tau must be > 0, got {tau}")))
            }
            Degradation::UniformMix { eps } if !(0.0..=1.0).contains(&eps) => {
                Err(Error::config(format!("uniform_mix eps must be in [0, 1], got {eps}")))
            }
            _ => Ok(()),
        }
    }

    fn label(&self) -> String {
        match self {
            Degradation::StaleContext { refresh_period: Some(r) } => format!("stale_context({r})"),
            Degradation::StaleContext { refresh_period: None } => "stale_context(inf)".into(),
            Degradation::Temperature { tau } => format!("temperature({tau})"),
            Degradation::UniformMix { eps } => format!("uniform_mix({eps})"),
        }
    }

    fn reshape(&self, p: &Distribution) -> Distribution {
        match *self {
            Degradation::Temperature { tau } => {
                let max_ln = p
                    .probs()
                    .iter()
                    .filter(|&&x| x > 0.0)
                    .map(|x| x.ln())
                    .fold(f64::NEG_INFINITY, f64::max);
                let w = p
                    .probs()
                    .iter()
                    .map(|&x| if x > 0.0 { ((x.ln() - max_ln) / tau).exp() } else { 0.0 })
                    .collect();
                Distribution::from_weights_or_uniform(w)
            }
            Degradation::UniformMix { eps } => {
                let u = 1.0 / p.len() as f64;
                let w = p.probs().iter().map(|&x| (1.0 - eps) * x + eps * u).collect();
                Distribution::from_weights_or_uniform(w)
            }
            Degradation::StaleContext { .. } => p.clone(),
        }
    }
}

#[derive(Debug, Default)]
struct Staleness {
    snapshot: Option<MaskedSequence>,
    calls_since_refresh: u64,
    pending: bool,
}

/// A model wrapped with one [`Degradation`].
pub struct Degraded {
    base: Box<dyn DenoisingModel>,
    kind: Degradation,
    calls: CallCounter,
    stale: Mutex<Staleness>,
}

impl Degraded {
    pub fn new(base: Box<dyn DenoisingModel>, kind: Degradation) -> Result<Self> {
        kind.validate()?;
        Ok(Self {
            base,
            kind,
            calls: CallCounter::default(),
            stale: Mutex::new(Staleness::default()),
        })
    }

    fn view(&self, seq: &MaskedSequence) -> MaskedSequence {
        let Degradation::StaleContext { refresh_period } = self.kind else {
            return seq.clone();
        };
        let mut st = self.stale.lock().expect("stale-context lock poisoned");
        let expired = refresh_period.is_some_and(|r| st.calls_since_refresh >= r);
        let wrong_shape = st.snapshot.as_ref().is_none_or(|s| s.len() != seq.len());
        if st.pending || expired || wrong_shape {
            st.snapshot = Some(seq.clone());
            st.calls_since_refresh = 0;
            st.pending = false;
        }
        st.calls_since_refresh += 1;
        st.snapshot.clone().expect("snapshot just set")
    }
}

impl DenoisingModel for Degraded {
    fn vocab(&self) -> VocabSpec {
        self.base.vocab()
    }

    fn predict(&self, seq: &MaskedSequence) -> Result<PositionDistributions> {
        self.calls.bump();
        let view = self.view(seq);
        let base = self.base.predict(&view)?;
        Ok(base.iter().map(|p| self.kind.reshape(p)).collect())
    }

    fn call_count(&self) -> u64 {
        self.calls.get()
    }

    fn refresh(&self) {
        if let Degradation::StaleContext { .. } = self.kind {
            self.stale.lock().expect("stale-context lock poisoned").pending = true;
        }
        self.base.refresh();
    }

    fn describe(&self) -> String {
        format!("{}∘{}", self.kind.label(), self.base.describe())
    }
}

/// Wraps `base` in each degradation in list order; the last one is outermost.
pub fn degrade(base: Box<dyn DenoisingModel>, specs: &[Degradation]) -> Result<Box<dyn DenoisingModel>> {
    specs.iter().try_fold(base, |model, &kind| {
        Ok(Box::new(Degraded::new(model, kind)?) as Box<dyn DenoisingModel>)
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::models::{MarkovOracle, OracleModel};
    use crate::sequence::Token;
    use proptest::prelude::*;

    fn chain() -> MarkovOracle {
        MarkovOracle::new(
            vec![0.6, 0.3, 0.1],
            vec![vec![0.7, 0.2, 0.1], vec![0.1, 0.8, 0.1], vec![0.3, 0.3, 0.4]],
        )
        .unwrap()
    }

    fn boxed() -> Box<dyn DenoisingModel> {
        Box::new(OracleModel::from(chain()))
    }

    #[test]
    fn unit_temperature_is_identity() {
        let base = OracleModel::from(chain());
        let model = degrade(boxed(), &[Degradation::Temperature { tau: 1.0 }]).unwrap();
        let seq = MaskedSequence::new(base.vocab(), vec![0, 3, 3, 2, 3]).unwrap();
        let a = base.predict(&seq).unwrap();
        let b = model.predict(&seq).unwrap();
        for (p, q) in a.iter().zip(b.iter()) {
            for (x, y) in p.probs().iter().zip(q.probs()) {
                assert!((x - y).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn full_uniform_mix_is_uniform() {
        let model = degrade(boxed(), &[Degradation::UniformMix { eps: 1.0 }]).unwrap();
        let seq = MaskedSequence::new(model.vocab(), vec![0, 3, 1]).unwrap();
        for p in model.predict(&seq).unwrap().iter() {
            for &x in p.probs() {
                assert!((x - 1.0 / 3.0).abs() < 1e-15);
            }
        }
    }

    #[test]
    fn never_refreshed_context_sees_the_snapshot() {
        let base = OracleModel::from(chain());
        let model = degrade(boxed(), &[Degradation::StaleContext { refresh_period: None }]).unwrap();
        let m = base.vocab().mask_id();
        let snapshot = MaskedSequence::new(base.vocab(), vec![0, m, m, m]).unwrap();
        let current = MaskedSequence::new(base.vocab(), vec![0, m, 2, m]).unwrap();
        model.predict(&snapshot).unwrap();
        let stale = model.predict(&current).unwrap();
        assert_eq!(stale, base.predict(&snapshot).unwrap());
        assert_ne!(stale, base.predict(&current).unwrap());

        model.refresh();
        assert_eq!(model.predict(&current).unwrap(), base.predict(&current).unwrap());
    }

    #[test]
    fn periodic_refresh_fires_every_r_calls() {
        let base = OracleModel::from(chain());
        let model = degrade(boxed(), &[Degradation::StaleContext { refresh_period: Some(2) }]).unwrap();
        let v = base.vocab();
        let m = v.mask_id();
        let s0 = MaskedSequence::new(v, vec![m, m, m]).unwrap();
        let s1 = MaskedSequence::new(v, vec![1, m, m]).unwrap();
        let s2 = MaskedSequence::new(v, vec![1, 1, m]).unwrap();
        assert_eq!(model.predict(&s0).unwrap(), base.predict(&s0).unwrap());
        assert_eq!(model.predict(&s1).unwrap(), base.predict(&s0).unwrap());
        assert_eq!(model.predict(&s2).unwrap(), base.predict(&s2).unwrap());
    }

    #[test]
    fn refresh_propagates_through_outer_layers() {
        let base = OracleModel::from(chain());
        let model = degrade(
            boxed(),
            &[Degradation::StaleContext { refresh_period: None }, Degradation::Temperature { tau: 1.0 }],
        )
        .unwrap();
        let v = base.vocab();
        let m = v.mask_id();
        let s0 = MaskedSequence::new(v, vec![m, m, m]).unwrap();
        let s1 = MaskedSequence::new(v, vec![2, m, m]).unwrap();
        model.predict(&s0).unwrap();
        model.refresh();
        let got = model.predict(&s1).unwrap();
        let want = base.predict(&s1).unwrap();
        assert!((got[1][2] - want[1][2]).abs() < 1e-12);
    }

    #[test]
    fn invalid_specs_are_rejected() {
        assert!(Degradation::StaleContext { refresh_period: Some(0) }.validate().is_err());
        assert!(Degradation::Temperature { tau: 0.0 }.validate().is_err());
        assert!(Degradation::UniformMix { eps: 1.5 }.validate().is_err());
    }

    #[test]
    fn call_counts_track_each_layer() {
        let model = degrade(
            boxed(),
            &[Degradation::UniformMix { eps: 0.2 }, Degradation::StaleContext { refresh_period: Some(3) }],
        )
        .unwrap();
        let seq = MaskedSequence::fully_masked(model.vocab(), 4).unwrap();
        for _ in 0..7 {
            model.predict(&seq).unwrap();
        }
        assert_eq!(model.call_count(), 7);
    }

    fn spec_strategy() -> impl Strategy<Value = Degradation> {
        prop_oneof![
            (1u64..6).prop_map(|r| Degradation::StaleContext { refresh_period: Some(r) }),
            (0.05f64..8.0).prop_map(|tau| Degradation::Temperature { tau }),
            (0.0f64..=1.0).prop_map(|eps| Degradation::UniformMix { eps }),
        ]
    }

    proptest! {
        #[test]
        fn degraded_outputs_stay_valid(
            specs in prop::collection::vec(spec_strategy(), 0..4),
            tokens in prop::collection::vec(0u32..4, 5),
        ) {
            let model = degrade(boxed(), &specs).unwrap();
            let seq = MaskedSequence::new(model.vocab(), tokens.clone()).unwrap();
            for p in model.predict(&seq).unwrap().iter() {
                prop_assert!(Distribution::new(p.probs().to_vec()).is_ok());
            }
        }

        #[test]
        fn temperature_preserves_argmax(tau in 0.05f64..10.0, tokens in prop::collection::vec(0u32..4, 4)) {
            let base = OracleModel::from(chain());
            let model = degrade(boxed(), &[Degradation::Temperature { tau }]).unwrap();
            let seq = MaskedSequence::new(base.vocab(), tokens.iter().map(|&t| t as Token).collect()).unwrap();
            let a = base.predict(&seq).unwrap();
            let b = model.predict(&seq).unwrap();
            for (p, q) in a.iter().zip(b.iter()) {
                prop_assert_eq!(p.argmax(), q.argmax());
            }
        }
    }
}
