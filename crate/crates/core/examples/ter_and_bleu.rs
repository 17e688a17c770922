//! Sentence and corpus TER, including a block shift, and corpus BLEU.
//!
//! ```text
//! cargo run --example ter_and_bleu
//! ```

use ape_core::metrics::{bleu, corpus_ter, ter, ter_oracle, Smoothing};

fn words(s: &str) -> Vec<&str> {
    s.split_whitespace().collect()
}

fn main() -> ape_core::error::Result<()> {
    let pairs = [
        ("the cat sat on the mat", "the cat sat on the mat"),
        ("on the mat the cat sat", "the cat sat on the mat"),
        ("the dog sat on a mat", "the cat sat on the mat"),
        ("cat the sat", "the cat sat on the mat"),
    ];
    println!("{:<26} {:>5} {:>6} {:>7}  oracle", "hypothesis", "edits", "shifts", "TER");
    for (hyp, reference) in pairs {
        let (h, r) = (words(hyp), words(reference));
        let t = ter(&h, &r)?;
        let o = ter_oracle(&h, &r)?;
        println!("{hyp:<26} {:>5} {:>6} {:>7.4}  {}", t.edits, t.shifts, t.score, o.edits);
    }

    let hyps: Vec<Vec<&str>> = pairs.iter().map(|p| words(p.0)).collect();
    let refs: Vec<Vec<&str>> = pairs.iter().map(|p| words(p.1)).collect();
    let t = corpus_ter(&hyps, &refs)?;
    println!("\ncorpus TER {:.4} ({} edits over {} reference words)", t.score, t.edits, t.ref_len);
    for smoothing in [Smoothing::None, Smoothing::AddOne] {
        let b = bleu(&hyps, &refs, smoothing)?;
        let p: Vec<String> = b.precisions.iter().map(|p| format!("{p:.3}")).collect();
        println!(
            "BLEU {:7.4} with {smoothing:?} smoothing (precisions {}, brevity penalty {:.4})",
            b.score,
            p.join("/"),
            b.brevity_penalty
        );
    }
    Ok(())
}
