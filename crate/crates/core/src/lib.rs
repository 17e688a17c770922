//! Conservative automatic post-editing.
//!
//! The crate centres on [`decoder::beam_decode`], a beam search whose
//! scores are penalised by a constant `c` for every token that appears in
//! neither the source nor the machine translation being edited. Around it
//! sit the pieces needed to exercise that mechanism end to end:
//!
//! * [`metrics`]: TER with block shifts (plus an exhaustive oracle) and
//!   corpus BLEU.
//! * [`model`]: a small BERT-style encoder-decoder with shared
//!   self-attention and tied embeddings, trained with sample-weighted
//!   cross-entropy.
//! * [`datapipe`]: k-fold round-trip synthesis of training triplets,
//!   `1 - TER` weights and oversampled mixing.
//! * [`cli`]: the `ape` command line (`eval`, `decode`, `grid`, `train`,
//!   `synthesize`, `weigh`).
//! * [`toy`]: synthetic tasks and scorers for demos and tests.

pub mod cli;
pub mod corpus;
pub mod datapipe;
pub mod decoder;
pub mod error;
pub mod metrics;
pub mod model;
pub mod toy;
pub mod vocab;
