//! Trains the toy encoder-decoder to copy its MT input and decodes a
//! held-out set without any penalty.
//!
//! ```text
//! cargo run --release --example train_copy_task [steps]
//! ```

use ape_core::corpus::Corpus;
use ape_core::datapipe::{training_samples, weigh};
use ape_core::decoder::{batch_decode, DecodeConfig};
use ape_core::metrics::corpus_ter;
use ape_core::model::{train_with, ModelConfig, ModelParams, ModelScorer, TrainConfig};
use ape_core::toy::copy_task;
use ape_core::vocab::Vocabulary;

fn main() -> ape_core::error::Result<()> {
    let steps = std::env::args().nth(1).map_or(3000, |s| s.parse().expect("steps is a number"));
    let train_raw = copy_task(2000, 10, 3..=6, 1);
    let dev_raw = copy_task(100, 10, 3..=6, 2);
    let vocab = Vocabulary::build(train_raw.all_lines())?;
    let train_set = Corpus::from_raw(&train_raw, &vocab)?;
    let dev = Corpus::from_raw(&dev_raw, &vocab)?;

    let params = ModelParams::new(ModelConfig {
        d_model: 32,
        n_layers: 1,
        n_heads: 4,
        ffn_dim: 64,
        max_positions: 32,
        vocab_size: vocab.len(),
        seed: 7,
    })?;
    println!("{} parameters in {} tensors", params.store().num_scalars(), params.store().len());
    let samples = training_samples(&params, &weigh(&train_set)?)?;
    let cfg = TrainConfig {
        peak_lr: 2e-3,
        total_steps: steps,
        warmup_steps: steps / 10,
        tokens_per_batch: 128,
        dropout: 0.0,
        log_every: (steps / 10).max(1),
        ..TrainConfig::default()
    };
    let out = train_with(params, &samples, &cfg, |e| {
        println!("step {:>5}  lr {:.2e}  loss {:.4}", e.step, e.lr, e.loss);
    })?;

    let decoded = batch_decode(&ModelScorer::new(&out.params), dev.items(), &vocab, &DecodeConfig::default())?;
    let hyps: Vec<_> = decoded.iter().map(|d| d.tokens.clone()).collect();
    let refs: Vec<_> = dev.items().iter().map(|t| t.pe().unwrap().to_vec()).collect();
    let exact = hyps.iter().zip(&refs).filter(|(h, r)| h == r).count();
    println!("\ndev: {exact}/{} exact copies, TER {:.4}", refs.len(), corpus_ter(&hyps, &refs)?.score);
    for (t, d) in dev.items().iter().zip(&decoded).take(3) {
        println!("  {}  =>  {}", vocab.decode(t.mt()), vocab.decode(&d.tokens));
    }
    Ok(())
}
