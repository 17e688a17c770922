//! Builds synthetic post-editing triplets from a parallel corpus by k-fold
//! round-trip translation, weights them by `1 - TER`, and mixes them with
//! a small in-domain set.
//!
//! ```text
//! cargo run --release --example synthetic_pipeline [out_dir]
//! ```

use std::collections::BTreeMap;

use ape_core::corpus::{Corpus, Provenance, RawCorpus};
use ape_core::datapipe::{mix, synthesize, weigh, write_weighted, MixSpec, ParallelCorpus, TransformerTrainer};
use ape_core::model::{ModelConfig, TrainConfig};
use ape_core::toy::dictionary_corpus;
use ape_core::vocab::Vocabulary;

fn main() -> ape_core::error::Result<()> {
    let (src, tgt) = dictionary_corpus(400, 16, 11);

    // A handful of "real" triplets whose MT drops the last word.
    let in_domain_raw = RawCorpus {
        src: src[..30].to_vec(),
        mt: tgt[..30].iter().map(|t| t.rsplit_once(' ').unwrap().0.to_owned()).collect(),
        pe: Some(tgt[..30].to_vec()),
    };
    let vocab = Vocabulary::build(src.iter().chain(&tgt))?;
    let parallel = ParallelCorpus::encode(&src[30..], &tgt[30..], &vocab)?;

    let model = ModelConfig {
        d_model: 16,
        n_layers: 1,
        n_heads: 2,
        ffn_dim: 32,
        max_positions: 24,
        vocab_size: vocab.len(),
        seed: 1,
    };
    let train = TrainConfig {
        peak_lr: 2e-3,
        total_steps: 800,
        warmup_steps: 80,
        tokens_per_batch: 128,
        dropout: 0.0,
        ..TrainConfig::default()
    };
    let synthesis = synthesize(&parallel, 5, &TransformerTrainer::new(model, train), 0)?;
    let audit = &synthesis.audit;
    for fold in 0..audit.plan.k() {
        println!(
            "fold {fold}: model trained on {} lines translated the other {}",
            audit.trained_on[fold].len(),
            audit.translated[fold].len()
        );
    }
    println!("held-out audit passes: {}", audit.is_unbiased());
    println!("{} empty translations dropped", audit.dropped.len());

    let synthetic = weigh(&synthesis.corpus)?;
    let mut by_fold: BTreeMap<Provenance, (usize, f64)> = BTreeMap::new();
    for s in &synthetic {
        let e = by_fold.entry(s.provenance).or_default();
        e.0 += 1;
        e.1 += s.weight;
    }
    for (p, (n, w)) in &by_fold {
        println!("  {p}: {n} triplets, mean weight {:.3}", w / *n as f64);
    }
    for s in synthetic.iter().take(3) {
        let pe = s.triplet.pe().unwrap();
        println!(
            "  src {:<22} mt {:<22} pe {:<22} w {:.3}",
            vocab.decode(s.triplet.src()),
            vocab.decode(s.triplet.mt()),
            vocab.decode(pe),
            s.weight
        );
    }

    let in_domain = weigh(&Corpus::from_raw(&in_domain_raw, &vocab)?)?;
    let spec = MixSpec::default();
    let stream: Vec<_> = mix(&in_domain, &synthetic, &spec)?.collect();
    let real = stream.iter().filter(|s| s.provenance == Provenance::InDomain).count();
    println!(
        "\nmixed stream: {} samples, {real} in-domain ({} lines x {}), {} synthetic",
        stream.len(),
        in_domain.len(),
        spec.in_domain_copies,
        stream.len() - real
    );

    if let Some(dir) = std::env::args().nth(1) {
        write_weighted(std::path::Path::new(&dir), &synthetic, &vocab)?;
        vocab.save(&std::path::Path::new(&dir).join("vocab.txt"))?;
        println!("wrote synthetic corpus to {dir}");
    }
    Ok(())
}
