mod common;

use std::collections::BTreeSet;

use ape_core::corpus::{ConservativeSet, Triplet};
use ape_core::decoder::{
    apply_penalty, batch_decode, beam_decode, logsumexp, DecodeConfig, ScoreKind, Scorer,
    StepScores,
};
use ape_core::error::Result;
use ape_core::vocab::{TokenId, EOS};
use ape_core::toy::HashScorer;
use common::{greedy_penalised, random_triplet, vanilla_beam, vocab_of};
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

const V: usize = 24;

fn scorer(range: f64, salt: u64) -> HashScorer {
    HashScorer {
        vocab_size: V,
        range,
        salt,
    }
}

fn cfg(beam: usize, c: f64, apply_at: ScoreKind) -> DecodeConfig {
    DecodeConfig {
        beam_size: beam,
        c,
        apply_at,
        ..DecodeConfig::default()
    }
}

#[test]
fn zero_penalty_equals_vanilla_beam_search() {
    let vocab = vocab_of(V);
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    for i in 0..100 {
        let t = random_triplet(&mut rng, V, 6);
        let s = scorer(6.0, i);
        for mode in [ScoreKind::Logits, ScoreKind::LogProbs] {
            for beam in [1, 3, 4] {
                let c = cfg(beam, 0.0, mode);
                let got = beam_decode(&s, &t, &vocab, &c).unwrap();
                let (tokens, score) = vanilla_beam(&s, &t, &c);
                assert_eq!(got.tokens, tokens, "instance {i} beam {beam} {mode}");
                assert!((got.score - score).abs() < 1e-9);
            }
        }
    }
}

#[test]
fn huge_penalty_saturates() {
    let vocab = vocab_of(V);
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    for i in 0..200 {
        let t = random_triplet(&mut rng, V, 5);
        let vc = t.conservative_set();
        for mode in [ScoreKind::Logits, ScoreKind::LogProbs] {
            let out = beam_decode(&scorer(100.0, i), &t, &vocab, &cfg(4, 1e6, mode)).unwrap();
            assert!(out.tokens.iter().all(|&tok| vc.contains(tok)), "{:?} vs {:?}", out.tokens, vc);
        }
    }
}

#[test]
fn beam_of_one_is_greedy() {
    let vocab = vocab_of(V);
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    for i in 0..50 {
        let t = random_triplet(&mut rng, V, 6);
        for (c, mode) in [(0.0, ScoreKind::LogProbs), (1.5, ScoreKind::Logits), (2.5, ScoreKind::LogProbs)] {
            let cfg = cfg(1, c, mode);
            let s = scorer(8.0, 100 + i);
            let got = beam_decode(&s, &t, &vocab, &cfg).unwrap();
            assert_eq!(got.tokens, greedy_penalised(&s, &t, &cfg), "instance {i} c {c} {mode}");
        }
    }
}

#[test]
fn batch_matches_single_and_commutes_with_permutation() {
    let vocab = vocab_of(V);
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let items: Vec<Triplet> = (0..12).map(|_| random_triplet(&mut rng, V, 5)).collect();
    let s = scorer(10.0, 9);
    let c = cfg(3, 1.0, ScoreKind::LogProbs);
    let batch = batch_decode(&s, &items, &vocab, &c).unwrap();
    for (t, b) in items.iter().zip(&batch) {
        assert_eq!(*b, beam_decode(&s, t, &vocab, &c).unwrap());
    }
    assert_eq!(batch_decode(&s, &items[..1], &vocab, &c).unwrap()[0], batch[0]);
    let mut order: Vec<usize> = (0..items.len()).collect();
    order.reverse();
    order.swap(2, 7);
    let permuted: Vec<Triplet> = order.iter().map(|&i| items[i].clone()).collect();
    let out = batch_decode(&s, &permuted, &vocab, &c).unwrap();
    for (k, &i) in order.iter().enumerate() {
        assert_eq!(out[k], batch[i]);
    }
}

/// Strongly prefers token 7, then `EOS`.
struct Prefers7;

impl Scorer for Prefers7 {
    type Context = ();

    fn vocab_size(&self) -> usize {
        V
    }

    fn prepare(&self, _: &[TokenId], _: &[TokenId]) -> Result<()> {
        Ok(())
    }

    fn score(&self, _: &(), prefix: &[TokenId]) -> Result<StepScores> {
        let mut v = vec![0.0; V];
        if prefix.len() == 1 {
            v[7] = 5.0;
        } else {
            v[EOS as usize] = 5.0;
        }
        Ok(StepScores::logits(v))
    }
}

#[test]
fn each_item_uses_its_own_conservative_set() {
    let vocab = vocab_of(V);
    let a = Triplet::new(vec![5], vec![6], None).unwrap();
    let b = Triplet::new(vec![7], vec![8], None).unwrap();
    let c = cfg(2, 10.0, ScoreKind::LogProbs);
    let batch = batch_decode(&Prefers7, &[a.clone(), b.clone()], &vocab, &c).unwrap();
    assert_eq!(batch[0], beam_decode(&Prefers7, &a, &vocab, &c).unwrap());
    assert_eq!(batch[1], beam_decode(&Prefers7, &b, &vocab, &c).unwrap());
    assert!(!batch[0].tokens.contains(&7));
    assert_eq!(batch[1].tokens, vec![7]);
}

#[test]
fn batch_errors_carry_the_item_index() {
    let vocab = vocab_of(V);
    let items = vec![
        Triplet::new(vec![5], vec![6], None).unwrap(),
        Triplet::new(vec![5], vec![40], None).unwrap(),
    ];
    let err = batch_decode(&scorer(1.0, 0), &items, &vocab, &DecodeConfig::default()).unwrap_err();
    assert!(matches!(err, ape_core::error::Error::Item { index: 1, .. }), "{err}");
}

#[test]
fn wrong_scorer_width_is_an_error() {
    let vocab = vocab_of(V + 1);
    let t = Triplet::new(vec![5], vec![6], None).unwrap();
    assert!(beam_decode(&scorer(1.0, 0), &t, &vocab, &DecodeConfig::default()).is_err());
}

#[test]
fn decoding_is_deterministic() {
    let vocab = vocab_of(V);
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let t = random_triplet(&mut rng, V, 6);
    let c = cfg(4, 0.7, ScoreKind::Logits);
    let a = beam_decode(&scorer(5.0, 1), &t, &vocab, &c).unwrap();
    for _ in 0..5 {
        assert_eq!(beam_decode(&scorer(5.0, 1), &t, &vocab, &c).unwrap(), a);
    }
}

#[test]
fn negative_penalty_in_logprob_space_is_clamped() {
    let vc = ConservativeSet::new(&[5], &[5]);
    let mut v = vec![-3.0; 7];
    v[5] = -0.1;
    v[6] = -0.3;
    let out = apply_penalty(&StepScores::logprobs(v), &vc, -0.5).unwrap();
    assert_eq!(out.values()[5], -0.1);
    assert!((out.values()[6] - 0.0).abs() < 1e-15);
    assert!((out.values()[0] - -2.5).abs() < 1e-15);
}

fn scores_and_set() -> impl Strategy<Value = (Vec<f64>, BTreeSet<TokenId>)> {
    (6usize..30).prop_flat_map(|n| {
        (
            proptest::collection::vec(-20.0f64..20.0, n),
            proptest::collection::btree_set(0..n as TokenId, 0..n),
        )
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(1000))]

    #[test]
    fn zero_penalty_is_identity((values, ids) in scores_and_set(), logprobs in any::<bool>()) {
        let ids: Vec<TokenId> = ids.into_iter().collect();
        let vc = ConservativeSet::new(&ids, &ids);
        let s = if logprobs {
            StepScores::logits(values).into_logprobs()
        } else {
            StepScores::logits(values)
        };
        prop_assert_eq!(apply_penalty(&s, &vc, 0.0).unwrap(), s);
    }

    #[test]
    fn penalty_is_local((values, ids) in scores_and_set(), c in -5.0f64..5.0) {
        let ids: Vec<TokenId> = ids.into_iter().collect();
        let vc = ConservativeSet::new(&ids, &ids);
        let s = StepScores::logits(values);
        let out = apply_penalty(&s, &vc, c).unwrap();
        for (v, (a, b)) in s.values().iter().zip(out.values()).enumerate() {
            if vc.contains(v as TokenId) {
                prop_assert_eq!(a, b);
            } else {
                prop_assert!(((a - b) - c).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn logit_penalty_then_softmax_is_normalised((values, ids) in scores_and_set(), c in 0.0f64..50.0) {
        let ids: Vec<TokenId> = ids.into_iter().collect();
        let vc = ConservativeSet::new(&ids, &ids);
        let out = apply_penalty(&StepScores::logits(values), &vc, c).unwrap().into_logprobs();
        prop_assert!(logsumexp(out.values()).abs() < 1e-4);
        prop_assert!(out.validate().is_ok());
    }
}
