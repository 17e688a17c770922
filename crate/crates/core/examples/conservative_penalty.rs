//! What the conservativeness penalty does to one decoding step, and how
//! beam search drifts from a free rewrite back towards the input as `c`
//! grows.
//!
//! The scorer is a hand-written stand-in for a post-editing model that has
//! learned to paraphrase: at every position it likes the paraphrase token a
//! little more than the MT token, and it stops where the MT ends.
//!
//! ```text
//! cargo run --example conservative_penalty
//! ```

use ape_core::corpus::Triplet;
use ape_core::decoder::{apply_penalty, beam_decode, DecodeConfig, ScoreKind, Scorer, StepScores};
use ape_core::error::Result;
use ape_core::vocab::{TokenId, Vocabulary, EOS, SPECIAL_TOKENS};

struct Paraphraser {
    vocab_size: usize,
    paraphrase: Vec<TokenId>,
}

impl Scorer for Paraphraser {
    type Context = Vec<TokenId>;

    fn vocab_size(&self) -> usize {
        self.vocab_size
    }

    fn prepare(&self, _src: &[TokenId], mt: &[TokenId]) -> Result<Vec<TokenId>> {
        Ok(mt.to_vec())
    }

    fn score(&self, mt: &Vec<TokenId>, prefix: &[TokenId]) -> Result<StepScores> {
        let t = prefix.len() - 1;
        let mut logits = vec![0.0; self.vocab_size];
        if let Some(&m) = mt.get(t) {
            logits[m as usize] += 2.0;
        }
        if let Some(&p) = self.paraphrase.get(t) {
            logits[p as usize] += 3.0;
        }
        logits[EOS as usize] = if t >= mt.len() { 6.0 } else { -6.0 };
        Ok(StepScores::logits(logits))
    }
}

fn main() -> Result<()> {
    let words = ["the", "a", "cat", "kitten", "sat", "rested", "on", "mat", "rug", "big", "dog"];
    let vocab = Vocabulary::from_tokens(SPECIAL_TOKENS.iter().chain(&words).map(|s| s.to_string()))?;
    let item = Triplet::new(
        vocab.encode("the big cat sat on the mat"),
        vocab.encode("the big dog sat on the mat"),
        None,
    )?;
    let vc = item.conservative_set();
    let allowed: Vec<_> = vc.ids().iter().map(|&t| vocab.token_of(t).unwrap()).collect();
    println!("src: {}", vocab.decode(item.src()));
    println!("mt:  {}", vocab.decode(item.mt()));
    println!("V_c = {{{}}} plus end of sentence\n", allowed.join(", "));

    let scorer = Paraphraser {
        vocab_size: vocab.len(),
        paraphrase: vocab.encode("a big kitten rested on a rug"),
    };
    let ctx = scorer.prepare(item.src(), item.mt())?;
    let step = scorer.score(&ctx, &[ape_core::vocab::BOS, vocab.lookup("the"), vocab.lookup("big")])?;
    let logprobs = step.clone().into_logprobs();
    let on_logits = apply_penalty(&step, &vc, 2.0)?.into_logprobs();
    let on_logprobs = apply_penalty(&logprobs, &vc, 2.0)?;
    println!("third step after \"the big\":");
    println!("  {:<8} {:>8} {:>14} {:>13}", "token", "log p", "c=2 on logits", "c=2 on log p");
    for id in SPECIAL_TOKENS.len()..vocab.len() {
        println!(
            "  {:<8} {:>8.3} {:>14.3} {:>13.3}{}",
            vocab.token_of(id as TokenId).unwrap(),
            logprobs.values()[id],
            on_logits.values()[id],
            on_logprobs.values()[id],
            if vc.contains(id as TokenId) { "" } else { "  penalised" }
        );
    }

    println!("\nbeam 4:");
    for c in [0.0, 0.5, 1.0, 1.5, 2.0, 4.0] {
        for apply_at in [ScoreKind::Logits, ScoreKind::LogProbs] {
            let cfg = DecodeConfig {
                c,
                apply_at,
                ..DecodeConfig::default()
            };
            let out = beam_decode(&scorer, &item, &vocab, &cfg)?;
            println!("  c={c:<4} {apply_at:<9} {}", vocab.decode(&out.tokens));
        }
    }
    Ok(())
}
