use ape_core::metrics::{bleu, corpus_ter, levenshtein, ter, ter_oracle, Smoothing};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn words(s: &str) -> Vec<&str> {
    s.split_whitespace().collect()
}

/// Every sequence over `0..alphabet` with length in `0..=max_len`.
fn all_sequences(alphabet: u8, max_len: usize) -> Vec<Vec<u8>> {
    let mut out = vec![vec![]];
    let mut layer = vec![vec![]];
    for _ in 0..max_len {
        let mut next = Vec::new();
        for s in &layer {
            for a in 0..alphabet {
                let mut t: Vec<u8> = s.clone();
                t.push(a);
                next.push(t);
            }
        }
        out.extend(next.iter().cloned());
        layer = next;
    }
    out
}

#[test]
fn spec_examples() {
    let r = ter(&words("a b c"), &words("a b c")).unwrap();
    assert_eq!((r.edits, r.score), (0, 0.0));
    let r = ter(&words("a x c"), &words("a b c")).unwrap();
    assert_eq!(r.edits, 1);
    assert!((r.score - 1.0 / 3.0).abs() < 1e-15);
    let r = ter(&words("c a b"), &words("a b c")).unwrap();
    assert_eq!((r.edits, r.shifts), (1, 1));
    assert_eq!(ter_oracle(&words("c a b"), &words("a b c")).unwrap().edits, 1);
    assert_eq!(ter_oracle(&words("b a"), &words("a b")).unwrap().edits, 1);
    assert_eq!(ter_oracle(&["a"], &["a"]).unwrap().edits, 0);
    assert_eq!(ter_oracle::<&str>(&[], &["a"]).unwrap().edits, 1);
    assert!(ter(&["a"], &[] as &[&str]).is_err());
    assert!(ter_oracle(&[0u8; 9], &[0u8; 2]).is_err());
}

#[test]
fn oracle_agreement_on_random_pairs() {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let mut agree = 0;
    let mut no_shift_pairs = 0;
    for _ in 0..1000 {
        let h: Vec<u8> = (0..rng.random_range(0..=6)).map(|_| rng.random_range(0..4)).collect();
        let r: Vec<u8> = (0..rng.random_range(1..=6)).map(|_| rng.random_range(0..4)).collect();
        let greedy = ter(&h, &r).unwrap().edits;
        let oracle = ter_oracle(&h, &r).unwrap().edits;
        assert!(greedy >= oracle, "greedy undercounts on {h:?} / {r:?}");
        agree += usize::from(greedy == oracle);
        if levenshtein(&h, &r) == oracle {
            no_shift_pairs += 1;
            assert_eq!(greedy, oracle, "{h:?} / {r:?}");
        }
    }
    assert!(agree >= 950, "agreement {agree}/1000");
    assert!(no_shift_pairs > 0);
}

#[test]
fn oracle_agreement_exhaustive_three_symbols() {
    let seqs = all_sequences(3, 4);
    let (mut total, mut agree) = (0, 0);
    for h in &seqs {
        for r in seqs.iter().filter(|r| !r.is_empty()) {
            let greedy = ter(h, r).unwrap().edits;
            let oracle = ter_oracle(h, r).unwrap().edits;
            assert!(greedy >= oracle);
            if levenshtein(h, r) == oracle {
                assert_eq!(greedy, oracle, "{h:?} / {r:?}");
            }
            total += 1;
            agree += usize::from(greedy == oracle);
        }
    }
    assert_eq!(total, 121 * 120);
    assert!(agree * 100 >= total * 95, "{agree}/{total}");
}

#[test]
fn corpus_ter_pools_edits() {
    let h = [words("a x c"), words("b a")];
    let r = [words("a b c"), words("a b d")];
    let t = corpus_ter(&h, &r).unwrap();
    assert_eq!(t.ref_len, 6);
    assert_eq!(t.edits, 1 + ter(&h[1], &r[1]).unwrap().edits);
    assert!(corpus_ter(&h[..1], &r).is_err());
}

#[test]
fn bleu_matches_reference_implementations() {
    // Values from sacrebleu (tokenize="none") and a from-scratch Python
    // implementation of the same formula, which agree to 1e-12.
    let b = bleu(&[words("a b c d")], &[words("a b c d e")], Smoothing::None).unwrap();
    assert_eq!(b.precisions, [1.0; 4]);
    assert!((b.brevity_penalty - (-0.25f64).exp()).abs() < 1e-15);
    assert!((b.score - 77.880_078_307_140_5).abs() < 1e-9);

    let hyps = [
        words("the cat sat on the mat"),
        words("a quick brown fox jumps"),
        words("the the the the"),
    ];
    let refs = [
        words("the cat sat on a mat"),
        words("the quick brown fox jumped over"),
        words("the cat is here"),
    ];
    let plain = bleu(&hyps, &refs, Smoothing::None).unwrap();
    assert!((plain.score - 32.115_442_511_062_24).abs() < 1e-9);
    let smoothed = bleu(&hyps, &refs, Smoothing::AddOne).unwrap();
    assert!((smoothed.score - 39.457_976_370_836_23).abs() < 1e-9);
}

#[test]
fn bleu_edge_cases() {
    let b = bleu(&[words("a b")], &[words("c d")], Smoothing::None).unwrap();
    assert_eq!(b.score, 0.0);
    assert!(bleu(&[words("a b")], &[], Smoothing::None).is_err());
}

fn seq(max: usize) -> impl Strategy<Value = Vec<u8>> {
    proptest::collection::vec(0u8..5, 0..=max)
}

proptest! {
    #[test]
    fn ter_of_identity_is_zero(x in seq(12).prop_filter("non-empty", |v| !v.is_empty())) {
        prop_assert_eq!(ter(&x, &x).unwrap().edits, 0);
    }

    #[test]
    fn ter_is_rename_invariant(h in seq(10), r in seq(10).prop_filter("non-empty", |v| !v.is_empty()), perm in Just([3u8, 0, 4, 1, 2]).prop_shuffle()) {
        let rename = |s: &[u8]| s.iter().map(|&t| perm[t as usize]).collect::<Vec<_>>();
        prop_assert_eq!(ter(&h, &r).unwrap().edits, ter(&rename(&h), &rename(&r)).unwrap().edits);
    }

    #[test]
    fn ter_is_bounded_by_levenshtein(h in seq(10), r in seq(10).prop_filter("non-empty", |v| !v.is_empty())) {
        let t = ter(&h, &r).unwrap();
        prop_assert!(t.edits <= levenshtein(&h, &r));
        prop_assert_eq!(t.score, t.edits as f64 / r.len() as f64);
        prop_assert_eq!(t.edits == 0, h == r);
    }

    #[test]
    fn bleu_of_identity_is_100(corpus in proptest::collection::vec(proptest::collection::vec(0u8..6, 4..10), 1..5)) {
        let b = bleu(&corpus, &corpus, Smoothing::None).unwrap();
        prop_assert!((b.score - 100.0).abs() < 1e-9);
    }
}
