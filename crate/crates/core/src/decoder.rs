//! Beam search with a per-instance conservativeness penalty.
//!
//! At every step the candidate scores of tokens outside the instance's
//! [`ConservativeSet`] are lowered by `c`. The penalty can be applied to the
//! raw logits (then renormalised by log-softmax) or to the log-probabilities
//! (no renormalisation, clamped at 0 when `c < 0`).

use std::cmp::Ordering;

use crate::corpus::{ConservativeSet, Triplet};
use crate::error::{Error, Result};
use crate::vocab::{TokenId, Vocabulary, BOS, EOS, PAD};

/// Tolerance on `logsumexp == 0` accepted from log-probability scorers.
pub const LOGPROB_TOLERANCE: f64 = 1e-4;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum ScoreKind {
    Logits,
    LogProbs,
}

impl ScoreKind {
    pub fn as_str(self) -> &'static str {
        match self {
            ScoreKind::Logits => "logits",
            ScoreKind::LogProbs => "logprobs",
        }
    }
}

impl std::fmt::Display for ScoreKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.pad(self.as_str())
    }
}

impl std::str::FromStr for ScoreKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "logits" => Ok(ScoreKind::Logits),
            "logprobs" => Ok(ScoreKind::LogProbs),
            _ => Err(Error::config("apply_at", format!("expected logits or logprobs, got {s:?}"))),
        }
    }
}

/// One step's candidate scores over the whole vocabulary.
#[derive(Debug, Clone, PartialEq)]
pub struct StepScores {
    values: Vec<f64>,
    kind: ScoreKind,
}

impl StepScores {
    pub fn new(values: Vec<f64>, kind: ScoreKind) -> Self {
        Self { values, kind }
    }

    pub fn logits(values: Vec<f64>) -> Self {
        Self::new(values, ScoreKind::Logits)
    }

    pub fn logprobs(values: Vec<f64>) -> Self {
        Self::new(values, ScoreKind::LogProbs)
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn kind(&self) -> ScoreKind {
        self.kind
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }

    /// Log-softmax of logits; log-probabilities pass through unchanged.
    pub fn into_logprobs(self) -> Self {
        match self.kind {
            ScoreKind::LogProbs => self,
            ScoreKind::Logits => {
                let mut values = self.values;
                log_softmax_in_place(&mut values);
                Self::logprobs(values)
            }
        }
    }

    /// Checks `values <= 0` and `logsumexp(values) ~ 0` for log-probabilities.
    pub fn validate(&self) -> Result<()> {
        if let Some(i) = self.values.iter().position(|v| v.is_nan()) {
            return Err(Error::InvalidScores(format!("NaN score at token {i}")));
        }
        if self.kind == ScoreKind::LogProbs {
            if let Some(i) = self.values.iter().position(|&v| v > LOGPROB_TOLERANCE) {
                return Err(Error::InvalidScores(format!(
                    "log-probability {} > 0 at token {i}",
                    self.values[i]
                )));
            }
            let lse = logsumexp(&self.values);
            if lse.abs() > LOGPROB_TOLERANCE {
                return Err(Error::InvalidScores(format!(
                    "log-probabilities are not normalised (logsumexp = {lse})"
                )));
            }
        }
        Ok(())
    }
}

pub fn logsumexp(values: &[f64]) -> f64 {
    let max = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        return max;
    }
    max + values.iter().map(|v| (v - max).exp()).sum::<f64>().ln()
}

pub fn log_softmax_in_place(values: &mut [f64]) {
    let lse = logsumexp(values);
    for v in values {
        *v -= lse;
    }
}

/// Subtracts `c` from every coordinate whose mask entry is false. With
/// `clamp_at_zero`, rewarded (c < 0) values are capped at 0.
fn penalize_in_place(values: &mut [f64], allowed: &[bool], c: f64, clamp_at_zero: bool) {
    if c == 0.0 {
        return;
    }
    let clamp = clamp_at_zero && c < 0.0;
    for (v, &ok) in values.iter_mut().zip(allowed) {
        if !ok {
            *v -= c;
            if clamp {
                *v = v.min(0.0);
            }
        }
    }
}

/// Applies the conservativeness penalty to one step's scores.
pub fn apply_penalty(scores: &StepScores, vc: &ConservativeSet, c: f64) -> Result<StepScores> {
    let mask = vc.mask(scores.len());
    if let Some(&max_id) = vc.ids().last() {
        if max_id as usize >= scores.len() {
            return Err(Error::LengthMismatch {
                what: "step scores vs conservative set ids",
                expected: max_id as usize + 1,
                actual: scores.len(),
            });
        }
    }
    let mut values = scores.values.clone();
    penalize_in_place(&mut values, &mask, c, scores.kind == ScoreKind::LogProbs);
    Ok(StepScores::new(values, scores.kind))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum LengthNorm {
    #[default]
    Off,
    /// Divide the final score by the number of generated tokens.
    ByLength,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DecodeConfig {
    pub beam_size: usize,
    /// Conservativeness penalty, in score units.
    pub c: f64,
    pub apply_at: ScoreKind,
    pub max_len_factor: f64,
    pub slack: usize,
    pub length_norm: LengthNorm,
}

impl Default for DecodeConfig {
    fn default() -> Self {
        Self {
            beam_size: 4,
            c: 0.0,
            apply_at: ScoreKind::LogProbs,
            max_len_factor: 1.5,
            slack: 5,
            length_norm: LengthNorm::Off,
        }
    }
}

impl DecodeConfig {
    pub fn validate(&self) -> Result<()> {
        if self.beam_size == 0 {
            return Err(Error::config("beam_size", "must be at least 1"));
        }
        if !(self.max_len_factor > 0.0 && self.max_len_factor.is_finite()) {
            return Err(Error::config("max_len_factor", "must be positive and finite"));
        }
        if !self.c.is_finite() {
            return Err(Error::config("c", "must be finite"));
        }
        Ok(())
    }

    /// `ceil(max_len_factor * mt_len) + slack`.
    pub fn max_len(&self, mt_len: usize) -> usize {
        (self.max_len_factor * mt_len as f64).ceil() as usize + self.slack
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Hypothesis {
    /// Starts with `BOS`; ends with `EOS` once finished normally.
    pub tokens: Vec<TokenId>,
    pub score: f64,
    pub finished: bool,
}

impl Hypothesis {
    fn start() -> Self {
        Self {
            tokens: vec![BOS],
            score: 0.0,
            finished: false,
        }
    }

    /// Generated tokens, without `BOS` or the final `EOS`.
    pub fn output(&self) -> &[TokenId] {
        let body = &self.tokens[1..];
        body.strip_suffix(&[EOS]).unwrap_or(body)
    }

    fn generated(&self) -> usize {
        self.tokens.len() - 1
    }
}

/// Best-first order: higher score, then lexicographically smaller tokens
/// (lower ids, shorter prefixes first).
fn rank(a_score: f64, a_tokens: &[TokenId], b_score: f64, b_tokens: &[TokenId]) -> Ordering {
    b_score.total_cmp(&a_score).then_with(|| a_tokens.cmp(b_tokens))
}

/// Source of next-token scores for the decoder.
///
/// Implementations must be deterministic for fixed parameters and must not
/// mutate shared state while scoring.
pub trait Scorer {
    /// Per-instance state computed once before decoding (e.g. encoder output).
    type Context;

    fn vocab_size(&self) -> usize;

    fn prepare(&self, src: &[TokenId], mt: &[TokenId]) -> Result<Self::Context>;

    /// Scores for the token following `prefix` (which starts with `BOS`).
    fn score(&self, ctx: &Self::Context, prefix: &[TokenId]) -> Result<StepScores>;
}

#[derive(Debug, Clone, PartialEq)]
pub struct Decoded {
    /// Output tokens without `BOS`/`EOS`.
    pub tokens: Vec<TokenId>,
    /// Cumulative score of the chosen hypothesis.
    pub score: f64,
    /// Score used for the final choice (differs from `score` under length normalisation).
    pub ranking_score: f64,
    /// False when the hypothesis was cut at the length cap.
    pub ended_with_eos: bool,
}

/// Turns raw scorer output into penalised log-probabilities.
fn step_logprobs(raw: StepScores, allowed: &[bool], cfg: &DecodeConfig) -> Vec<f64> {
    let kind = raw.kind();
    let mut values = raw.into_values();
    match cfg.apply_at {
        ScoreKind::Logits => {
            penalize_in_place(&mut values, allowed, cfg.c, false);
            log_softmax_in_place(&mut values);
        }
        ScoreKind::LogProbs => {
            if kind == ScoreKind::Logits {
                log_softmax_in_place(&mut values);
            }
            penalize_in_place(&mut values, allowed, cfg.c, true);
        }
    }
    values
}

/// The `k` best candidate tokens, by score then lower id.
fn top_tokens(logprobs: &[f64], k: usize) -> Vec<(TokenId, f64)> {
    let mut cands: Vec<(TokenId, f64)> = logprobs
        .iter()
        .enumerate()
        .map(|(i, &lp)| (i as TokenId, lp))
        .filter(|&(t, _)| t != PAD && t != BOS)
        .collect();
    let k = k.min(cands.len());
    let by_rank = |a: &(TokenId, f64), b: &(TokenId, f64)| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0));
    if k < cands.len() {
        cands.select_nth_unstable_by(k, by_rank);
        cands.truncate(k);
    }
    cands.sort_by(by_rank);
    cands
}

/// Beam search from a prepared context, emitting at most `max_len` tokens
/// (including `EOS`).
pub fn beam_search<S: Scorer>(
    scorer: &S,
    ctx: &S::Context,
    vc: &ConservativeSet,
    max_len: usize,
    cfg: &DecodeConfig,
) -> Result<Decoded> {
    cfg.validate()?;
    let vocab_size = scorer.vocab_size();
    let allowed = vc.mask(vocab_size);
    let mut beam = vec![Hypothesis::start()];

    for _ in 0..max_len.max(1) {
        if beam.iter().all(|h| h.finished) {
            break;
        }
        let mut pool: Vec<Hypothesis> = Vec::with_capacity(beam.len() * cfg.beam_size);
        for hyp in &beam {
            if hyp.finished {
                pool.push(hyp.clone());
                continue;
            }
            let raw = scorer.score(ctx, &hyp.tokens)?;
            if raw.len() != vocab_size {
                return Err(Error::LengthMismatch {
                    what: "scorer output vs vocabulary",
                    expected: vocab_size,
                    actual: raw.len(),
                });
            }
            raw.validate()?;
            let logprobs = step_logprobs(raw, &allowed, cfg);
            for (tok, lp) in top_tokens(&logprobs, cfg.beam_size) {
                let mut tokens = Vec::with_capacity(hyp.tokens.len() + 1);
                tokens.extend_from_slice(&hyp.tokens);
                tokens.push(tok);
                pool.push(Hypothesis {
                    tokens,
                    score: hyp.score + lp,
                    finished: tok == EOS,
                });
            }
        }
        pool.sort_by(|a, b| rank(a.score, &a.tokens, b.score, &b.tokens));
        pool.truncate(cfg.beam_size);
        beam = pool;
    }
    // Force-finish whatever is still open at the cap.
    for hyp in &mut beam {
        hyp.finished = true;
    }

    let ranking = |h: &Hypothesis| match cfg.length_norm {
        LengthNorm::Off => h.score,
        LengthNorm::ByLength => h.score / h.generated().max(1) as f64,
    };
    let best = beam
        .iter()
        .min_by(|a, b| rank(ranking(a), &a.tokens, ranking(b), &b.tokens))
        .expect("beam is never empty");
    Ok(Decoded {
        tokens: best.output().to_vec(),
        score: best.score,
        ranking_score: ranking(best),
        ended_with_eos: best.tokens.last() == Some(&EOS) && best.generated() > 0,
    })
}

/// Decodes one triplet with its own conservative set and length cap.
pub fn beam_decode<S: Scorer>(
    scorer: &S,
    triplet: &Triplet,
    vocab: &Vocabulary,
    cfg: &DecodeConfig,
) -> Result<Decoded> {
    cfg.validate()?;
    triplet.check_ids(vocab)?;
    if scorer.vocab_size() != vocab.len() {
        return Err(Error::LengthMismatch {
            what: "scorer vocabulary vs vocabulary",
            expected: vocab.len(),
            actual: scorer.vocab_size(),
        });
    }
    let ctx = scorer.prepare(triplet.src(), triplet.mt())?;
    let vc = triplet.conservative_set();
    beam_search(scorer, &ctx, &vc, cfg.max_len(triplet.mt().len()), cfg)
}

/// Item-wise [`beam_decode`]; errors carry the failing item's index.
pub fn batch_decode<S: Scorer>(
    scorer: &S,
    items: &[Triplet],
    vocab: &Vocabulary,
    cfg: &DecodeConfig,
) -> Result<Vec<Decoded>> {
    items
        .iter()
        .enumerate()
        .map(|(i, t)| beam_decode(scorer, t, vocab, cfg).map_err(|e| e.at_item(i)))
        .collect()
}
