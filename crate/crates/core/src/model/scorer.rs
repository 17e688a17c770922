use ndarray::Array2;

use super::ModelParams;
use crate::decoder::{Scorer, StepScores};
use crate::error::Result;
use crate::vocab::TokenId;

/// What the encoder sees.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum InputMode {
    /// `src [SEP] mt` with segment embeddings.
    #[default]
    PostEdit,
    /// `src` only, for plain translation.
    SourceOnly,
}

/// Adapts [`ModelParams`] to the decoder; emits raw logits.
#[derive(Debug, Clone, Copy)]
pub struct ModelScorer<'a> {
    params: &'a ModelParams,
    mode: InputMode,
}

impl<'a> ModelScorer<'a> {
    pub fn new(params: &'a ModelParams) -> Self {
        Self {
            params,
            mode: InputMode::PostEdit,
        }
    }

    pub fn source_only(params: &'a ModelParams) -> Self {
        Self {
            params,
            mode: InputMode::SourceOnly,
        }
    }

    pub fn params(&self) -> &ModelParams {
        self.params
    }
}

impl Scorer for ModelScorer<'_> {
    type Context = Array2<f64>;

    fn vocab_size(&self) -> usize {
        self.params.config().vocab_size
    }

    fn prepare(&self, src: &[TokenId], mt: &[TokenId]) -> Result<Array2<f64>> {
        let input = match self.mode {
            InputMode::PostEdit => self.params.encode_pair(src, mt)?,
            InputMode::SourceOnly => self.params.encode_source(src)?,
        };
        self.params.encoder_states(&input)
    }

    fn score(&self, memory: &Array2<f64>, prefix: &[TokenId]) -> Result<StepScores> {
        self.params.next_logits(memory, prefix)
    }
}

/// Log-softmax adapter over any scorer.
#[derive(Debug, Clone, Copy)]
pub struct LogProbScorer<S>(pub S);

impl<S: Scorer> Scorer for LogProbScorer<S> {
    type Context = S::Context;

    fn vocab_size(&self) -> usize {
        self.0.vocab_size()
    }

    fn prepare(&self, src: &[TokenId], mt: &[TokenId]) -> Result<S::Context> {
        self.0.prepare(src, mt)
    }

    fn score(&self, ctx: &S::Context, prefix: &[TokenId]) -> Result<StepScores> {
        Ok(self.0.score(ctx, prefix)?.into_logprobs())
    }
}
