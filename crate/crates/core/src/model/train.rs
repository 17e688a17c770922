//! Sample-weighted cross-entropy and the training loop.

use ndarray::Array2;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::config::TrainConfig;
use super::network::{Dropout, EncodedInput};
use super::optim::BertAdam;
use super::params::Gradients;
use super::ModelParams;
use crate::error::{Error, Result};
use crate::vocab::{TokenId, BOS, EOS};

/// One training example: encoder input, the target sequence (without
/// `BOS`/`EOS`) and its loss weight in `[0, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainSample {
    pub input: EncodedInput,
    pub target: Vec<TokenId>,
    pub weight: f64,
}

impl TrainSample {
    pub fn new(input: EncodedInput, target: Vec<TokenId>, weight: f64) -> Self {
        Self {
            input,
            target,
            weight,
        }
    }

    /// Predicted positions: the target plus `EOS`.
    pub fn num_tokens(&self) -> usize {
        self.target.len() + 1
    }

    fn decoder_input(&self) -> Vec<TokenId> {
        let mut ids = Vec::with_capacity(self.target.len() + 1);
        ids.push(BOS);
        ids.extend_from_slice(&self.target);
        ids
    }

    fn gold(&self) -> Vec<TokenId> {
        let mut ids = self.target.clone();
        ids.push(EOS);
        ids
    }
}

#[derive(Debug, Clone)]
pub struct LossAndGrads {
    pub loss: f64,
    pub grads: Gradients,
}

fn check_sample(params: &ModelParams, s: &TrainSample) -> Result<()> {
    if !(0.0..=1.0).contains(&s.weight) {
        return Err(Error::config("weight", format!("{} is outside [0, 1]", s.weight)));
    }
    params.check_input(&s.input)?;
    params.check_prefix(&s.decoder_input())?;
    params.check_ids(&s.gold())
}

fn check_batch(params: &ModelParams, batch: &[&TrainSample]) -> Result<f64> {
    if batch.is_empty() {
        return Err(Error::EmptyInput("empty batch"));
    }
    let mut denom = 0.0;
    for (i, s) in batch.iter().enumerate() {
        check_sample(params, s).map_err(|e| e.at_item(i))?;
        denom += s.weight * s.num_tokens() as f64;
    }
    if denom == 0.0 {
        return Err(Error::ZeroWeight);
    }
    Ok(denom)
}

fn loss_impl(
    params: &ModelParams,
    batch: &[&TrainSample],
    drop: &mut Option<Dropout<'_>>,
) -> Result<LossAndGrads> {
    let denom = check_batch(params, batch)?;
    let mut grads = params.store.zeros_like();
    let mut total = 0.0;
    for sample in batch {
        // A zero weight contributes nothing to loss or gradient.
        if sample.weight == 0.0 {
            continue;
        }
        let dec_in = sample.decoder_input();
        let gold = sample.gold();
        let (memory, enc_cache) = params.encode(&sample.input, drop);
        let (hidden, dec_cache) = params.decode(&memory, &dec_in, drop);
        let logits = params.project(&hidden.view());

        let scale = sample.weight / denom;
        let mut dlogits = Array2::zeros(logits.raw_dim());
        let mut sample_loss = 0.0;
        for (t, row) in logits.rows().into_iter().enumerate() {
            let max = row.fold(f64::NEG_INFINITY, |m, &v| m.max(v));
            let sum: f64 = row.iter().map(|v| (v - max).exp()).sum();
            let lse = max + sum.ln();
            let target = gold[t] as usize;
            sample_loss += lse - row[target];
            let mut drow = dlogits.row_mut(t);
            for (g, &v) in drow.iter_mut().zip(row) {
                *g = (v - lse).exp() * scale;
            }
            drow[target] -= scale;
        }
        total += sample.weight * sample_loss;
        params.backward(
            &mut grads,
            &sample.input,
            &dec_in,
            &enc_cache,
            &memory,
            &dec_cache,
            &hidden,
            &dlogits,
        );
    }
    Ok(LossAndGrads {
        loss: total / denom,
        grads,
    })
}

/// `Σ_s w_s Σ_t CE / Σ_s w_s n_s` and its gradient, in evaluation mode.
pub fn weighted_loss(params: &ModelParams, batch: &[TrainSample]) -> Result<LossAndGrads> {
    let refs: Vec<&TrainSample> = batch.iter().collect();
    loss_impl(params, &refs, &mut None)
}

/// Groups sample indices into batches of roughly `tokens_per_batch`
/// predicted tokens. Samples are shuffled, then sorted by length so that
/// batches hold similar lengths; batch order is shuffled again. A sample
/// longer than the budget gets a batch of its own; the last partial batch
/// is kept.
pub fn pack_batches(
    samples: &[TrainSample],
    tokens_per_batch: usize,
    rng: &mut ChaCha8Rng,
) -> Vec<Vec<usize>> {
    let mut order: Vec<usize> = (0..samples.len()).collect();
    order.shuffle(rng);
    order.sort_by_key(|&i| samples[i].num_tokens());
    let mut batches = Vec::new();
    let mut current = Vec::new();
    let mut tokens = 0;
    for i in order {
        let n = samples[i].num_tokens();
        if !current.is_empty() && tokens + n > tokens_per_batch {
            batches.push(std::mem::take(&mut current));
            tokens = 0;
        }
        current.push(i);
        tokens += n;
    }
    if !current.is_empty() {
        batches.push(current);
    }
    batches.shuffle(rng);
    batches
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LogEntry {
    pub step: usize,
    pub lr: f64,
    /// Mean training loss since the previous entry.
    pub loss: f64,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub params: ModelParams,
    /// Training loss of every step.
    pub losses: Vec<f64>,
    pub log: Vec<LogEntry>,
}

pub fn train(
    params: ModelParams,
    samples: &[TrainSample],
    cfg: &TrainConfig,
) -> Result<TrainOutcome> {
    train_with(params, samples, cfg, |_| {})
}

/// Trains for `cfg.total_steps` optimizer steps, cycling through freshly
/// packed epochs. `on_log` sees every log entry as it is produced.
pub fn train_with(
    mut params: ModelParams,
    samples: &[TrainSample],
    cfg: &TrainConfig,
    mut on_log: impl FnMut(&LogEntry),
) -> Result<TrainOutcome> {
    cfg.validate()?;
    if samples.is_empty() {
        return Err(Error::EmptyInput("no training samples"));
    }
    // Surface bad samples before spending any compute.
    for (i, s) in samples.iter().enumerate() {
        check_sample(&params, s).map_err(|e| e.at_item(i))?;
    }
    if samples.iter().all(|s| s.weight == 0.0) {
        return Err(Error::ZeroWeight);
    }

    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut optimizer = BertAdam::new(&params.store, cfg);
    let mut losses = Vec::with_capacity(cfg.total_steps);
    let mut log = Vec::new();
    let mut batches: Vec<Vec<usize>> = Vec::new();
    let mut window = (0.0, 0usize);

    for step in 1..=cfg.total_steps {
        let batch: Vec<&TrainSample> = loop {
            let Some(b) = batches.pop() else {
                batches = pack_batches(samples, cfg.tokens_per_batch, &mut rng);
                continue;
            };
            if b.iter().any(|&i| samples[i].weight > 0.0) {
                break b.iter().map(|&i| &samples[i]).collect();
            }
        };
        let mut drop = Some(Dropout {
            rng: &mut rng,
            rate: cfg.dropout,
        });
        let LossAndGrads { loss, mut grads } = loss_impl(&params, &batch, &mut drop)?;
        if !loss.is_finite() {
            return Err(Error::Diverged { step, loss });
        }
        if cfg.max_grad_norm > 0.0 {
            let norm = grads.norm();
            if norm > cfg.max_grad_norm {
                grads.scale(cfg.max_grad_norm / norm);
            }
        }
        let lr = cfg.lr_at(step);
        optimizer.step(&mut params.store, &grads, lr);
        losses.push(loss);

        window.0 += loss;
        window.1 += 1;
        if step == 1 || step % cfg.log_every == 0 || step == cfg.warmup_steps || step == cfg.total_steps {
            let entry = LogEntry {
                step,
                lr,
                loss: window.0 / window.1 as f64,
            };
            on_log(&entry);
            log.push(entry);
            window = (0.0, 0);
        }
    }
    Ok(TrainOutcome {
        params,
        losses,
        log,
    })
}
