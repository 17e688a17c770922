#![allow(dead_code)]

use ape_core::corpus::{ConservativeSet, Triplet};
use ape_core::decoder::{apply_penalty, DecodeConfig, Scorer, StepScores};
use ape_core::vocab::{Vocabulary, SPECIAL_TOKENS};
use ape_core::model::{weighted_loss, ModelConfig, ModelParams, TrainSample};
use ape_core::vocab::{TokenId, BOS, EOS, PAD};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn micro_config() -> ModelConfig {
    ModelConfig {
        d_model: 8,
        n_layers: 1,
        n_heads: 2,
        ffn_dim: 16,
        max_positions: 16,
        vocab_size: 12,
        seed: 11,
    }
}

/// Micro model with every tensor nudged away from its structured init so
/// biases and norm parameters carry non-trivial values.
pub fn jittered_micro(seed: u64) -> ModelParams {
    let mut p = ModelParams::new(micro_config()).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let ids: Vec<_> = p.store().iter().map(|(id, _)| id).collect();
    for id in ids {
        for x in &mut p.store_mut().get_mut(id).data {
            *x += rng.random_range(-0.3..0.3);
        }
    }
    p
}

pub fn grad_samples(p: &ModelParams) -> Vec<TrainSample> {
    vec![
        TrainSample::new(p.encode_pair(&[5, 6, 7], &[8, 9]).unwrap(), vec![8, 10, 9], 1.0),
        TrainSample::new(p.encode_pair(&[11], &[5, 5, 6]).unwrap(), vec![5, 6], 0.4),
    ]
}

pub struct GradReport {
    pub checked: usize,
    pub worst_rel: f64,
    pub worst_name: String,
    pub failures: usize,
}

/// Relative error with a floor on the denominator so that coordinates whose
/// true gradient is numerically zero are judged on absolute error.
pub fn rel_err(a: f64, n: f64) -> f64 {
    (a - n).abs() / a.abs().max(n.abs()).max(1e-6)
}

pub fn gradient_check(params: &ModelParams, samples: &[TrainSample], tol: f64) -> GradReport {
    let eps = 1e-4;
    let analytic = weighted_loss(params, samples).unwrap().grads;
    let mut p = params.clone();
    let mut report = GradReport {
        checked: 0,
        worst_rel: 0.0,
        worst_name: String::new(),
        failures: 0,
    };
    let ids: Vec<_> = params.store().iter().map(|(id, _)| id).collect();
    for id in ids {
        let n = params.store().get(id).data.len();
        for k in 0..n {
            let orig = p.store().get(id).data[k];
            p.store_mut().get_mut(id).data[k] = orig + eps;
            let up = weighted_loss(&p, samples).unwrap().loss;
            p.store_mut().get_mut(id).data[k] = orig - eps;
            let down = weighted_loss(&p, samples).unwrap().loss;
            p.store_mut().get_mut(id).data[k] = orig;
            let numeric = (up - down) / (2.0 * eps);
            let err = rel_err(analytic.get(id)[k], numeric);
            report.checked += 1;
            if err > tol {
                report.failures += 1;
            }
            if err > report.worst_rel {
                report.worst_rel = err;
                report.worst_name = format!("{}[{k}]", params.store().get(id).name);
            }
        }
    }
    report
}

pub fn random_triplet(rng: &mut ChaCha8Rng, vocab: usize, max_len: usize) -> Triplet {
    let seq = |rng: &mut ChaCha8Rng| -> Vec<TokenId> {
        let n = rng.random_range(1..=max_len);
        (0..n).map(|_| rng.random_range(3..vocab as u32)).collect()
    };
    let src = seq(rng);
    let mt = seq(rng);
    Triplet::new(src, mt, None).unwrap()
}

/// Textbook beam search written independently of the library: no penalty
/// code path at all, same ranking and tie-break rules.
pub fn vanilla_beam<S: Scorer>(
    scorer: &S,
    t: &Triplet,
    cfg: &DecodeConfig,
) -> (Vec<TokenId>, f64) {
    let ctx = scorer.prepare(t.src(), t.mt()).unwrap();
    let max_len = cfg.max_len(t.mt().len());
    let better = |a: &(Vec<TokenId>, f64, bool), b: &(Vec<TokenId>, f64, bool)| {
        b.1.total_cmp(&a.1).then_with(|| a.0.cmp(&b.0))
    };
    let mut beam: Vec<(Vec<TokenId>, f64, bool)> = vec![(vec![BOS], 0.0, false)];
    loop {
        if beam.iter().all(|h| h.2) {
            break;
        }
        let mut next = Vec::new();
        for h in &beam {
            if h.2 {
                next.push(h.clone());
                continue;
            }
            let s = scorer.score(&ctx, &h.0).unwrap();
            let lp = s.into_logprobs().into_values();
            for (v, &x) in lp.iter().enumerate() {
                let v = v as TokenId;
                if v == PAD || v == BOS {
                    continue;
                }
                let mut toks = h.0.clone();
                toks.push(v);
                let done = v == EOS || toks.len() > max_len;
                next.push((toks, h.1 + x, done));
            }
        }
        next.sort_by(better);
        next.truncate(cfg.beam_size);
        beam = next;
    }
    let best = beam.into_iter().min_by(better).unwrap();
    let mut out = best.0[1..].to_vec();
    if out.last() == Some(&EOS) {
        out.pop();
    }
    (out, best.1)
}

/// Plain greedy loop under penalised scores.
pub fn greedy_penalised<S: Scorer>(
    scorer: &S,
    t: &Triplet,
    cfg: &DecodeConfig,
) -> Vec<TokenId> {
    let ctx = scorer.prepare(t.src(), t.mt()).unwrap();
    let vc: ConservativeSet = t.conservative_set();
    let max_len = cfg.max_len(t.mt().len());
    let mut prefix = vec![BOS];
    let mut out = Vec::new();
    while out.len() < max_len {
        let raw = scorer.score(&ctx, &prefix).unwrap();
        let scores = penalised(&raw, &vc, cfg);
        let mut best: Option<(TokenId, f64)> = None;
        for (v, &x) in scores.iter().enumerate() {
            let v = v as TokenId;
            if v == PAD || v == BOS {
                continue;
            }
            if best.is_none_or(|(_, b)| x > b) {
                best = Some((v, x));
            }
        }
        let (v, _) = best.unwrap();
        if v == EOS {
            break;
        }
        out.push(v);
        prefix.push(v);
    }
    out
}

pub fn penalised(raw: &StepScores, vc: &ConservativeSet, cfg: &DecodeConfig) -> Vec<f64> {
    use ape_core::decoder::ScoreKind;
    match cfg.apply_at {
        ScoreKind::Logits => apply_penalty(raw, vc, cfg.c).unwrap().into_logprobs().into_values(),
        ScoreKind::LogProbs => apply_penalty(&raw.clone().into_logprobs(), vc, cfg.c)
            .unwrap()
            .into_values(),
    }
}

/// Specials followed by `w5, w6, ...` up to `size` tokens.
pub fn vocab_of(size: usize) -> Vocabulary {
    let tokens = SPECIAL_TOKENS
        .iter()
        .map(|s| s.to_string())
        .chain((SPECIAL_TOKENS.len()..size).map(|i| format!("w{i}")));
    Vocabulary::from_tokens(tokens).unwrap()
}
