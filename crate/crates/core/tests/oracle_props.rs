use maskspec::bench::elbo_eval;
use maskspec::diffusion::{forward_mask, NoiseSchedule};
use maskspec::distribution::{confidence, kl_divergence, normalize_remask_weights, Distribution};
use maskspec::models::{MarkovOracle, Oracle, OracleModel};
use maskspec::rng::stream;
use maskspec::sequence::{MaskedSequence, Token, VocabSpec};
use proptest::prelude::*;

fn dist(v: usize, zeros: bool) -> impl Strategy<Value = Distribution> {
    let lo = if zeros { 0.0 } else { 0.01 };
    prop::collection::vec(lo..1.0f64, v).prop_filter_map("all-zero weights", |w| Distribution::from_weights(w).ok())
}

fn chain(zeros: bool) -> impl Strategy<Value = MarkovOracle> {
    (2usize..=4).prop_flat_map(move |v| {
        (dist(v, zeros), prop::collection::vec(dist(v, zeros), v)).prop_map(|(i, t)| {
            MarkovOracle::new(i.probs().to_vec(), t.iter().map(|d| d.probs().to_vec()).collect()).unwrap()
        })
    })
}

/// A chain plus a partially masked sequence over its vocabulary.
fn chain_and_seq() -> impl Strategy<Value = (MarkovOracle, MaskedSequence)> {
    (chain(true), 1usize..=6).prop_flat_map(|(m, len)| {
        let v = m.vocab().size() as Token;
        prop::collection::vec(0..=v, len).prop_map(move |toks| {
            let seq = MaskedSequence::new(m.vocab(), toks).unwrap();
            (m.clone(), seq)
        })
    })
}

proptest! {
    #[test]
    fn forward_backward_matches_enumeration((m, seq) in chain_and_seq()) {
        let brute = m.to_enumerated(seq.len()).unwrap();
        let a = m.posterior(&seq).unwrap();
        let b = brute.posterior(&seq).unwrap();
        for (p, q) in a.iter().zip(b.iter()) {
            for (x, y) in p.probs().iter().zip(q.probs()) {
                prop_assert!((x - y).abs() <= 1e-9, "{:?} vs {:?}", p, q);
            }
        }
    }

    #[test]
    fn unmasked_positions_get_leave_one_out((m, seq) in chain_and_seq()) {
        let full = m.posterior(&seq).unwrap();
        for i in (0..seq.len()).filter(|&i| !seq.is_masked(i)) {
            let loo = m.posterior(&seq.leave_one_out(i)).unwrap();
            for (x, y) in full[i].probs().iter().zip(loo[i].probs()) {
                prop_assert!((x - y).abs() <= 1e-12);
            }
        }
    }

    #[test]
    fn posteriors_are_distributions((m, seq) in chain_and_seq()) {
        for p in m.posterior(&seq).unwrap().iter() {
            prop_assert_eq!(p.len(), m.vocab().size());
            prop_assert!(p.probs().iter().all(|x| *x >= 0.0));
            prop_assert!((p.probs().iter().sum::<f64>() - 1.0).abs() <= 1e-9);
        }
    }

    #[test]
    fn best_completion_is_the_mode(m in chain(true), len in 2usize..=5, first in 0u32..4) {
        let first = first % m.vocab().size() as Token;
        let prefix = [first];
        let best = m.best_completion(&prefix, len).unwrap();
        let brute = m.to_enumerated(len).unwrap();
        let top = brute
            .support()
            .iter()
            .filter(|(s, _)| s[0] == first)
            .map(|(_, w)| *w)
            .fold(0.0, f64::max);
        if top > 0.0 {
            prop_assert!((m.log_joint(&best).exp() - top).abs() <= 1e-12 * top.max(1.0));
        }
    }

    #[test]
    fn kl_and_confidence_bounds(v in 2usize..10, seed in any::<u64>()) {
        let mut rng = stream(seed);
        let draw = |rng: &mut maskspec::rng::StreamRng| {
            use rand::Rng;
            Distribution::from_weights_or_uniform((0..v).map(|_| rng.random::<f64>()).collect())
        };
        let (p, q) = (draw(&mut rng), draw(&mut rng));
        prop_assert!(kl_divergence(&p, &q).unwrap() >= 0.0);
        prop_assert_eq!(kl_divergence(&p, &p).unwrap(), 0.0);
        let c = confidence(&p);
        prop_assert!(c >= 1.0 / v as f64 - 1e-15 && c <= 1.0);
    }

    #[test]
    fn remask_weights_sum_to_one(ws in prop::collection::btree_map(0usize..50, 0.0f64..10.0, 1..20)) {
        let n = normalize_remask_weights(&ws);
        if ws.values().sum::<f64>() > 0.0 {
            prop_assert_eq!(n.len(), ws.len());
            prop_assert!((n.values().sum::<f64>() - 1.0).abs() <= 1e-12);
        } else {
            prop_assert!(n.is_empty());
        }
    }
}

#[test]
fn forward_mask_endpoints() {
    let vocab = VocabSpec::new(3).unwrap();
    let x0 = MaskedSequence::new(vocab, vec![0, 1, 2, 1, 0]).unwrap();
    let mut rng = stream(3);
    for schedule in [NoiseSchedule::Linear, NoiseSchedule::Cosine] {
        assert!(!forward_mask(&x0, 0.0, schedule, &mut rng).unwrap().has_masks());
        assert_eq!(forward_mask(&x0, 1.0, schedule, &mut rng).unwrap().masked_count(), 5);
    }
}

#[test]
fn elbo_standard_error_shrinks_with_samples() {
    let m = MarkovOracle::new(
        vec![0.4, 0.3, 0.3],
        vec![vec![0.7, 0.2, 0.1], vec![0.1, 0.7, 0.2], vec![0.2, 0.1, 0.7]],
    )
    .unwrap();
    let mut rng = stream(5);
    let corpus: Vec<MaskedSequence> = (0..5)
        .map(|_| MaskedSequence::new(m.vocab(), m.sample(6, &mut rng)).unwrap())
        .collect();
    let model = OracleModel::new(Oracle::Markov(m));
    let small = elbo_eval(&model, &corpus, NoiseSchedule::Linear, 100, 1).unwrap();
    let large = elbo_eval(&model, &corpus, NoiseSchedule::Linear, 1600, 1).unwrap();
    let ratio = large.std_err / small.std_err;
    assert!((0.18..0.32).contains(&ratio), "std err ratio {ratio}");
    assert!((large.mean - small.mean).abs() <= 3.0 * small.std_err);
}
