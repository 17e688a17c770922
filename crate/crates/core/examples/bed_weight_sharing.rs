//! Looks inside the encoder-decoder: which tensors are shared, how the
//! cross-attention starts as a copy of self-attention and drifts away
//! during training, and a checkpoint round trip.
//!
//! ```text
//! cargo run --release --example bed_weight_sharing
//! ```

use ape_core::corpus::Corpus;
use ape_core::datapipe::{training_samples, weigh};
use ape_core::model::{
    read_checkpoint, train, write_checkpoint, AttentionIds, ModelConfig, ModelParams, TrainConfig,
};
use ape_core::toy::copy_task;
use ape_core::vocab::{Vocabulary, BOS};

fn gap(p: &ModelParams, a: &AttentionIds, b: &AttentionIds) -> f64 {
    let store = p.store();
    a.ids()
        .iter()
        .zip(b.ids())
        .flat_map(|(x, y)| store.get(*x).data.iter().zip(&store.get(y).data))
        .map(|(u, v)| (u - v).abs())
        .fold(0.0, f64::max)
}

fn main() -> ape_core::error::Result<()> {
    let raw = copy_task(300, 12, 3..=6, 4);
    let vocab = Vocabulary::build(raw.all_lines())?;
    let corpus = Corpus::from_raw(&raw, &vocab)?;
    let mut params = ModelParams::new(ModelConfig {
        d_model: 16,
        n_layers: 2,
        n_heads: 2,
        ffn_dim: 32,
        max_positions: 24,
        vocab_size: vocab.len(),
        seed: 5,
    })?;

    println!("{} stored tensors, {} scalars", params.store().len(), params.store().num_scalars());
    println!("shared names:");
    for (alias, canonical) in params.layout().aliases(params.store()) {
        println!("  {alias:<34} -> {canonical}");
    }

    let samples = training_samples(&params, &weigh(&corpus)?)?;
    println!("\nL∞ distance between cross- and self-attention per layer:");
    let mut done = 0;
    for chunk in [0, 10, 40, 150] {
        if chunk > 0 {
            let cfg = TrainConfig {
                peak_lr: 2e-3,
                total_steps: chunk,
                warmup_steps: 1,
                tokens_per_batch: 64,
                dropout: 0.0,
                seed: done as u64,
                ..TrainConfig::default()
            };
            params = train(params, &samples, &cfg)?.params;
            done += chunk;
        }
        let l = params.layout();
        let gaps: Vec<String> = l
            .decoder
            .iter()
            .map(|d| format!("{:.4}", gap(&params, &d.cross_attn, &d.self_attn)))
            .collect();
        let shared = l.encoder.iter().zip(&l.decoder).all(|(e, d)| e.self_attn == d.self_attn);
        println!("  after {done:>3} steps: [{}], self-attention shared: {shared}", gaps.join(", "));
    }

    let mut bytes = Vec::new();
    write_checkpoint(&params, &mut bytes)?;
    let restored = read_checkpoint(&mut bytes.as_slice())?;
    let input = params.encode_pair(&vocab.encode("w1 w2"), &vocab.encode("w1 w2"))?;
    let (a, b) = (params.forward(&input, &[BOS])?, restored.forward(&input, &[BOS])?);
    let diff = a.values().iter().zip(b.values()).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max);
    println!(
        "\ncheckpoint of {} bytes (32-bit floats); restored logits differ by at most {diff:.1e}",
        bytes.len()
    );
    Ok(())
}
