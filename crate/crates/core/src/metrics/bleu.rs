//! Corpus-level BLEU-4 with the standard brevity penalty.

use std::collections::HashMap;
use std::hash::Hash;

use crate::error::{Error, Result};

pub const MAX_ORDER: usize = 4;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Smoothing {
    #[default]
    None,
    /// Add one to matches and totals for orders 2..=4.
    AddOne,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BleuResult {
    pub precisions: [f64; MAX_ORDER],
    pub brevity_penalty: f64,
    pub hyp_len: usize,
    pub ref_len: usize,
    /// On a 0..=100 scale.
    pub score: f64,
}

fn ngram_counts<T: Eq + Hash>(seq: &[T], n: usize) -> HashMap<&[T], usize> {
    let mut counts = HashMap::new();
    if seq.len() >= n {
        for gram in seq.windows(n) {
            *counts.entry(gram).or_insert(0) += 1;
        }
    }
    counts
}

pub fn bleu<T, S>(hyps: &[S], refs: &[S], smoothing: Smoothing) -> Result<BleuResult>
where
    T: Eq + Hash,
    S: AsRef<[T]>,
{
    if hyps.len() != refs.len() {
        return Err(Error::LengthMismatch {
            what: "hypotheses vs references",
            expected: refs.len(),
            actual: hyps.len(),
        });
    }
    if refs.is_empty() {
        return Err(Error::EmptyInput("BLEU needs at least one segment"));
    }
    if let Some(i) = refs.iter().position(|r| r.as_ref().is_empty()) {
        return Err(Error::EmptyInput("BLEU reference is empty").at_item(i));
    }

    let mut matches = [0usize; MAX_ORDER];
    let mut totals = [0usize; MAX_ORDER];
    let (mut hyp_len, mut ref_len) = (0, 0);
    for (h, r) in hyps.iter().zip(refs) {
        let (h, r) = (h.as_ref(), r.as_ref());
        hyp_len += h.len();
        ref_len += r.len();
        for n in 1..=MAX_ORDER {
            let ref_counts = ngram_counts(r, n);
            for (gram, count) in ngram_counts(h, n) {
                matches[n - 1] += count.min(ref_counts.get(gram).copied().unwrap_or(0));
            }
            totals[n - 1] += h.len().saturating_sub(n - 1);
        }
    }

    let mut precisions = [0.0; MAX_ORDER];
    for n in 0..MAX_ORDER {
        let (m, t) = match smoothing {
            Smoothing::AddOne if n > 0 => (matches[n] + 1, totals[n] + 1),
            _ => (matches[n], totals[n]),
        };
        precisions[n] = if t == 0 { 0.0 } else { m as f64 / t as f64 };
    }

    let brevity_penalty = if hyp_len > ref_len {
        1.0
    } else if hyp_len == 0 {
        0.0
    } else {
        (1.0 - ref_len as f64 / hyp_len as f64).exp()
    };

    let score = if precisions.contains(&0.0) {
        0.0
    } else {
        let log_mean = precisions.iter().map(|p| p.ln()).sum::<f64>() / MAX_ORDER as f64;
        100.0 * brevity_penalty * log_mean.exp()
    };

    Ok(BleuResult {
        precisions,
        brevity_penalty,
        hyp_len,
        ref_len,
        score,
    })
}
