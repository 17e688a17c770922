//! Small synthetic tasks and a bounded hash scorer for demos and tests.

use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::corpus::RawCorpus;
use crate::decoder::{Scorer, StepScores};
use crate::error::Result;
use crate::vocab::TokenId;

/// Deterministic scorer whose logits lie in `[-range/2, range/2]`, derived
/// from a hash of the inputs and the prefix.
#[derive(Debug, Clone, Copy)]
pub struct HashScorer {
    pub vocab_size: usize,
    pub range: f64,
    pub salt: u64,
}

fn mix(mut h: u64) -> u64 {
    h ^= h >> 33;
    h = h.wrapping_mul(0xff51_afd7_ed55_8ccd);
    h ^= h >> 33;
    h = h.wrapping_mul(0xc4ce_b9fe_1a85_ec53);
    h ^ (h >> 33)
}

impl Scorer for HashScorer {
    type Context = u64;

    fn vocab_size(&self) -> usize {
        self.vocab_size
    }

    fn prepare(&self, src: &[TokenId], mt: &[TokenId]) -> Result<u64> {
        let mut h = mix(self.salt);
        for &t in src.iter().chain(&[u32::MAX]).chain(mt) {
            h = mix(h ^ u64::from(t));
        }
        Ok(h)
    }

    fn score(&self, ctx: &u64, prefix: &[TokenId]) -> Result<StepScores> {
        let mut h = *ctx;
        for &t in prefix {
            h = mix(h ^ (u64::from(t) << 17));
        }
        let values = (0..self.vocab_size as u64)
            .map(|v| {
                let x = mix(h ^ v.wrapping_mul(0x9e37_79b9_7f4a_7c15));
                (x as f64 / u64::MAX as f64 - 0.5) * self.range
            })
            .collect();
        Ok(StepScores::logits(values))
    }
}

/// `n` copy-task lines over tokens `w0 .. w{vocab-1}`: `src` and `mt` are the
/// same random sentence and `pe` repeats it.
pub fn copy_task(n: usize, vocab: usize, len: std::ops::RangeInclusive<usize>, seed: u64) -> RawCorpus {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut lines = Vec::with_capacity(n);
    for _ in 0..n {
        let l = rng.random_range(len.clone());
        let words: Vec<String> = (0..l).map(|_| format!("w{}", rng.random_range(0..vocab))).collect();
        lines.push(words.join(" "));
    }
    RawCorpus {
        src: lines.clone(),
        mt: lines.clone(),
        pe: Some(lines),
    }
}

/// Word-for-word "translation" between two invented languages: source word
/// `sK` always maps to target word `tK`. Returns `(src, tgt)` lines; every
/// line is distinct.
pub fn dictionary_corpus(n: usize, words: usize, seed: u64) -> (Vec<String>, Vec<String>) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut seen = std::collections::HashSet::new();
    let (mut src, mut tgt) = (Vec::with_capacity(n), Vec::with_capacity(n));
    while src.len() < n {
        let len = rng.random_range(3..=6);
        let ids: Vec<usize> = (0..len).map(|_| rng.random_range(0..words)).collect();
        if !seen.insert(ids.clone()) {
            continue;
        }
        src.push(ids.iter().map(|k| format!("s{k}")).collect::<Vec<_>>().join(" "));
        tgt.push(ids.iter().map(|k| format!("t{k}")).collect::<Vec<_>>().join(" "));
    }
    (src, tgt)
}

/// A post-editing task built to make an unconstrained model over-edit.
///
/// Each target position holds one of two variants of a word, `tK.a` or
/// `tK.b`. The source carries a hint `sK.a` / `sK.b` that names the right
/// variant with probability `hint_accuracy`. The MT copies the target
/// except that each position is corrupted with probability `rate`, either
/// by swapping the variant or by writing a junk token `zJ`. A model trained
/// at a high corruption rate learns to trust the hint over the MT; on data
/// whose MT is nearly perfect that trust turns into unnecessary edits,
/// while junk tokens remain worth fixing.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OverEditTask {
    pub words: usize,
    pub junk: usize,
    pub min_len: usize,
    pub max_len: usize,
    pub hint_accuracy: f64,
    /// Fraction of corruptions that swap the variant rather than insert junk.
    pub swap_share: f64,
}

impl Default for OverEditTask {
    fn default() -> Self {
        Self {
            words: 12,
            junk: 8,
            min_len: 4,
            max_len: 7,
            hint_accuracy: 0.97,
            swap_share: 0.6,
        }
    }
}

impl OverEditTask {
    pub fn generate(&self, n: usize, rate: f64, seed: u64) -> RawCorpus {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let variant = |b: bool| if b { "b" } else { "a" };
        let mut raw = RawCorpus {
            pe: Some(Vec::with_capacity(n)),
            ..RawCorpus::default()
        };
        for _ in 0..n {
            let len = rng.random_range(self.min_len..=self.max_len.min(self.words));
            let words = sample(&mut rng, self.words, len).into_vec();
            let (mut src, mut mt, mut pe) = (Vec::new(), Vec::new(), Vec::new());
            for k in words {
                let v: bool = rng.random();
                let hint = if rng.random_bool(self.hint_accuracy) { v } else { !v };
                src.push(format!("s{k}.{}", variant(hint)));
                pe.push(format!("t{k}.{}", variant(v)));
                mt.push(if rng.random_bool(rate) {
                    if rng.random_bool(self.swap_share) {
                        format!("t{k}.{}", variant(!v))
                    } else {
                        format!("z{}", rng.random_range(0..self.junk))
                    }
                } else {
                    format!("t{k}.{}", variant(v))
                });
            }
            raw.src.push(src.join(" "));
            raw.mt.push(mt.join(" "));
            raw.pe.as_mut().unwrap().push(pe.join(" "));
        }
        raw
    }
}
