use super::config::TrainConfig;
use super::params::{Gradients, ParamStore};

/// Adam without bias correction and with decoupled weight decay on
/// matrices, as used for BERT fine-tuning.
#[derive(Debug, Clone)]
pub struct BertAdam {
    beta1: f64,
    beta2: f64,
    eps: f64,
    weight_decay: f64,
    first: Vec<Vec<f64>>,
    second: Vec<Vec<f64>>,
}

impl BertAdam {
    pub fn new(store: &ParamStore, cfg: &TrainConfig) -> Self {
        let zeros: Vec<Vec<f64>> = store.iter().map(|(_, p)| vec![0.0; p.data.len()]).collect();
        Self {
            beta1: cfg.beta1,
            beta2: cfg.beta2,
            eps: cfg.eps,
            weight_decay: cfg.weight_decay,
            first: zeros.clone(),
            second: zeros,
        }
    }

    pub fn step(&mut self, store: &mut ParamStore, grads: &Gradients, lr: f64) {
        let ids: Vec<_> = store.iter().map(|(id, _)| id).collect();
        for id in ids {
            let g = grads.get(id);
            let param = store.get_mut(id);
            let decay = if param.decays() { self.weight_decay } else { 0.0 };
            let m = &mut self.first[id.index()];
            let v = &mut self.second[id.index()];
            for i in 0..g.len() {
                m[i] = self.beta1 * m[i] + (1.0 - self.beta1) * g[i];
                v[i] = self.beta2 * v[i] + (1.0 - self.beta2) * g[i] * g[i];
                let update = m[i] / (v[i].sqrt() + self.eps) + decay * param.data[i];
                param.data[i] -= lr * update;
            }
        }
    }
}
