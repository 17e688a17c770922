//! Desk-scale BERT-style encoder-decoder for post-editing.
//!
//! A single encoder reads `src [SEP] mt` with segment embeddings (0 for src
//! and the separator, 1 for mt). The decoder's self-attention in layer `i`
//! is the encoder's layer-`i` self-attention (same storage); its
//! cross-attention starts as a copy of those weights and is trained
//! independently. Output logits use the token-embedding matrix as the
//! projection.

mod checkpoint;
mod config;
mod network;
mod optim;
mod params;
mod scorer;
mod train;

pub use checkpoint::{load_checkpoint, read_checkpoint, save_checkpoint, write_checkpoint, MAGIC, VERSION};
pub use config::{ModelConfig, TrainConfig};
pub use network::EncodedInput;
pub use optim::BertAdam;
pub use params::{
    AttentionIds, DecoderLayerIds, EncoderLayerIds, FfnIds, Gradients, Layout, Linear, NormIds,
    Param, ParamId, ParamStore, INIT_STD,
};
pub use scorer::{InputMode, LogProbScorer, ModelScorer};
pub use train::{
    pack_batches, train, train_with, weighted_loss, LogEntry, LossAndGrads, TrainOutcome, TrainSample,
};

use ndarray::{s, Array2};

use crate::corpus::Triplet;
use crate::decoder::StepScores;
use crate::error::{Error, Result};
use crate::vocab::{TokenId, BOS, SEP};

#[derive(Debug, Clone, PartialEq)]
pub struct ModelParams {
    config: ModelConfig,
    store: ParamStore,
    layout: Layout,
}

impl ModelParams {
    /// Freshly initialised parameters: N(0, 0.02) matrices, zero biases,
    /// unit norm gains, and cross-attention copied from self-attention.
    pub fn new(config: ModelConfig) -> Result<Self> {
        config.validate()?;
        let (mut store, layout) = params::allocate(&config);
        params::initialize(&mut store, &layout, config.seed)?;
        Ok(Self {
            config,
            store,
            layout,
        })
    }

    /// Zero-filled parameters with the right layout (used when loading).
    pub(crate) fn allocate(config: ModelConfig) -> Result<Self> {
        config.validate()?;
        let (store, layout) = params::allocate(&config);
        Ok(Self {
            config,
            store,
            layout,
        })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn store(&self) -> &ParamStore {
        &self.store
    }

    pub fn store_mut(&mut self) -> &mut ParamStore {
        &mut self.store
    }

    pub fn layout(&self) -> &Layout {
        &self.layout
    }

    /// `src ++ [SEP] ++ mt` with segments `0..0 0 1..1`.
    pub fn encode_input(&self, triplet: &Triplet) -> Result<EncodedInput> {
        self.encode_pair(triplet.src(), triplet.mt())
    }

    pub fn encode_pair(&self, src: &[TokenId], mt: &[TokenId]) -> Result<EncodedInput> {
        let mut ids = Vec::with_capacity(src.len() + mt.len() + 1);
        ids.extend_from_slice(src);
        ids.push(SEP);
        ids.extend_from_slice(mt);
        let mut segments = vec![0u8; src.len() + 1];
        segments.resize(ids.len(), 1);
        let input = EncodedInput { ids, segments };
        self.check_input(&input)?;
        Ok(input)
    }

    /// Source-only input for plain sequence-to-sequence use (all segment 0).
    pub fn encode_source(&self, src: &[TokenId]) -> Result<EncodedInput> {
        let input = EncodedInput {
            ids: src.to_vec(),
            segments: vec![0; src.len()],
        };
        self.check_input(&input)?;
        Ok(input)
    }

    pub(crate) fn check_input(&self, input: &EncodedInput) -> Result<()> {
        if input.ids.is_empty() {
            return Err(Error::EmptyInput("encoder input is empty"));
        }
        if input.ids.len() != input.segments.len() {
            return Err(Error::LengthMismatch {
                what: "encoder ids vs segments",
                expected: input.ids.len(),
                actual: input.segments.len(),
            });
        }
        if input.ids.len() > self.config.max_positions {
            return Err(Error::TooLarge(format!(
                "encoder input has {} positions, model supports {}",
                input.ids.len(),
                self.config.max_positions
            )));
        }
        self.check_ids(&input.ids)?;
        if input.segments.iter().any(|&s| s > 1) {
            return Err(Error::InvalidTriplet("segment ids must be 0 or 1".into()));
        }
        Ok(())
    }

    fn check_ids(&self, ids: &[TokenId]) -> Result<()> {
        if let Some(&bad) = ids.iter().find(|&&t| t as usize >= self.config.vocab_size) {
            return Err(Error::LengthMismatch {
                what: "token id vs model vocabulary",
                expected: self.config.vocab_size,
                actual: bad as usize,
            });
        }
        Ok(())
    }

    pub(crate) fn check_prefix(&self, prefix: &[TokenId]) -> Result<()> {
        if prefix.first() != Some(&BOS) {
            return Err(Error::InvalidTriplet("decoder prefix must start with BOS".into()));
        }
        if prefix.len() > self.config.max_positions {
            return Err(Error::TooLarge(format!(
                "decoder prefix has {} positions, model supports {}",
                prefix.len(),
                self.config.max_positions
            )));
        }
        self.check_ids(prefix)
    }

    /// Encoder output for `input` in evaluation mode.
    pub fn encoder_states(&self, input: &EncodedInput) -> Result<Array2<f64>> {
        self.check_input(input)?;
        Ok(self.encode(input, &mut None).0)
    }

    /// Next-token logits after `prefix`, given precomputed encoder states.
    pub fn next_logits(&self, memory: &Array2<f64>, prefix: &[TokenId]) -> Result<StepScores> {
        self.check_prefix(prefix)?;
        if memory.ncols() != self.config.d_model {
            return Err(Error::LengthMismatch {
                what: "encoder state width",
                expected: self.config.d_model,
                actual: memory.ncols(),
            });
        }
        let (hidden, _) = self.decode(memory, prefix, &mut None);
        let last = hidden.slice(s![hidden.nrows() - 1.., ..]);
        let logits = self.project(&last);
        Ok(StepScores::logits(logits.into_raw_vec_and_offset().0))
    }

    /// Next-token logits after `prefix` (which starts with `BOS`).
    pub fn forward(&self, input: &EncodedInput, prefix: &[TokenId]) -> Result<StepScores> {
        let memory = self.encoder_states(input)?;
        self.next_logits(&memory, prefix)
    }

    /// Logits for every decoder position, shape `[prefix.len(), vocab]`.
    pub fn forward_all(&self, input: &EncodedInput, prefix: &[TokenId]) -> Result<Array2<f64>> {
        self.check_prefix(prefix)?;
        let memory = self.encoder_states(input)?;
        let (hidden, _) = self.decode(&memory, prefix, &mut None);
        Ok(self.project(&hidden.view()))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn micro() -> ModelParams {
        ModelParams::new(ModelConfig {
            d_model: 8,
            n_layers: 1,
            n_heads: 2,
            ffn_dim: 16,
            max_positions: 16,
            vocab_size: 12,
            seed: 1,
        })
        .unwrap()
    }

    #[test]
    fn encode_input_concatenates_with_separator() {
        let m = micro();
        let t = Triplet::new(vec![5, 6], vec![7], None).unwrap();
        let enc = m.encode_input(&t).unwrap();
        assert_eq!(enc.ids, vec![5, 6, SEP, 7]);
        assert_eq!(enc.segments, vec![0, 0, 0, 1]);

        let t = Triplet::new(vec![5], vec![5], None).unwrap();
        let enc = m.encode_input(&t).unwrap();
        assert_eq!(enc.ids, vec![5, SEP, 5]);
        assert_eq!(enc.segments, vec![0, 0, 1]);
    }

    #[test]
    fn overlong_input_is_rejected() {
        let m = micro();
        let t = Triplet::new(vec![5; 10], vec![6; 6], None).unwrap();
        assert!(matches!(m.encode_input(&t), Err(Error::TooLarge(_))));
        let t = Triplet::new(vec![5; 9], vec![6; 6], None).unwrap();
        assert!(m.encode_input(&t).is_ok());
    }

    #[test]
    fn forward_shape_and_determinism() {
        let m = micro();
        let t = Triplet::new(vec![5, 6, 7], vec![8, 9], None).unwrap();
        let enc = m.encode_input(&t).unwrap();
        let a = m.forward(&enc, &[BOS, 8]).unwrap();
        let b = m.forward(&enc, &[BOS, 8]).unwrap();
        assert_eq!(a.len(), 12);
        assert_eq!(a, b);
        assert!(m.forward(&enc, &[8]).is_err());
        assert!(m.forward(&enc, &[BOS, 40]).is_err());
    }

    #[test]
    fn last_row_of_forward_all_is_forward() {
        let m = micro();
        let enc = m.encode_pair(&[5, 6], &[7, 8, 9]).unwrap();
        let prefix = [BOS, 7, 8];
        let all = m.forward_all(&enc, &prefix).unwrap();
        let last = m.forward(&enc, &prefix).unwrap();
        for (a, b) in all.row(2).iter().zip(last.values()) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn sharing_structure() {
        let m = micro();
        let l = m.layout();
        assert_eq!(l.output_projection, l.token_embeddings);
        for (enc, dec) in l.encoder.iter().zip(&l.decoder) {
            assert_eq!(enc.self_attn, dec.self_attn);
            assert_ne!(dec.cross_attn, dec.self_attn);
            for (a, b) in dec.self_attn.ids().into_iter().zip(dec.cross_attn.ids()) {
                assert_eq!(m.store().get(a).data, m.store().get(b).data);
            }
        }
        // Mutating the encoder tensor is visible through the decoder slot.
        let mut m = m;
        let id = m.layout().encoder[0].self_attn.q.weight;
        m.store_mut().get_mut(id).data[0] = 42.0;
        let dec_id = m.layout().decoder[0].self_attn.q.weight;
        assert_eq!(m.store().get(dec_id).data[0], 42.0);
    }
}
