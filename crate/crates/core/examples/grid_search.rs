//! Desk-scale version of the main experiment. A model trained on MT with
//! 10% corruption learns to distrust the MT; on a dev set whose MT is
//! nearly perfect it over-edits and loses to the "do nothing" baseline.
//! A grid over the penalty `c` finds values that beat both.
//!
//! ```text
//! cargo run --release --example grid_search [c_step]
//! ```

use std::time::Instant;

use ape_core::cli::grid::{c_range, run_grid_with, GridSpec};
use ape_core::corpus::Corpus;
use ape_core::datapipe::{training_samples, weigh};
use ape_core::decoder::{DecodeConfig, ScoreKind};
use ape_core::model::{train_with, ModelConfig, ModelParams, ModelScorer, TrainConfig};
use ape_core::toy::OverEditTask;
use ape_core::vocab::Vocabulary;

fn main() -> ape_core::error::Result<()> {
    let step: f64 = std::env::args().nth(1).map_or(0.5, |s| s.parse().expect("c_step is a number"));
    let task = OverEditTask::default();
    let train_raw = task.generate(3000, 0.10, 1);
    let dev_raw = task.generate(300, 0.02, 2);
    let vocab = Vocabulary::build(train_raw.all_lines().chain(dev_raw.all_lines()))?;
    let train_set = Corpus::from_raw(&train_raw, &vocab)?;
    let dev = Corpus::from_raw(&dev_raw, &vocab)?;
    for i in 0..2 {
        println!("train  src {}", train_raw.src[i]);
        println!("       mt  {}", train_raw.mt[i]);
        println!("       pe  {}", train_raw.pe.as_ref().unwrap()[i]);
    }

    let params = ModelParams::new(ModelConfig {
        d_model: 32,
        n_layers: 1,
        n_heads: 4,
        ffn_dim: 64,
        max_positions: 32,
        vocab_size: vocab.len(),
        seed: 1,
    })?;
    let samples = training_samples(&params, &weigh(&train_set)?)?;
    let cfg = TrainConfig {
        peak_lr: 2e-3,
        total_steps: 4000,
        warmup_steps: 400,
        tokens_per_batch: 128,
        dropout: 0.0,
        log_every: 500,
        ..TrainConfig::default()
    };
    let start = Instant::now();
    let trained = train_with(params, &samples, &cfg, |e| {
        eprintln!("step {:>4} loss {:.4} ({:.0}s)", e.step, e.loss, start.elapsed().as_secs_f64());
    })?
    .params;

    let spec = GridSpec {
        beams: vec![4],
        c_values: c_range(0.0, 5.0, step)?,
        modes: vec![ScoreKind::Logits, ScoreKind::LogProbs],
        base: DecodeConfig::default(),
    };
    let result = run_grid_with(&ModelScorer::new(&trained), &dev, &spec, |row| {
        if let Some(s) = row.scores() {
            eprintln!("  beam {} {:<8} c {:<4} TER {:.4}", row.beam, row.apply_at, row.c, s.ter);
        }
    })?;
    println!("\n{}", result.to_table());
    Ok(())
}
