//! Parameter storage with explicit sharing.
//!
//! Every tensor lives once in a [`ParamStore`]; the network layout refers to
//! tensors by [`ParamId`]. Sharing is expressed by two layout slots holding
//! the same id: decoder self-attention reuses the encoder self-attention ids
//! of the same layer, and the output projection is the token embedding.

use ndarray::{ArrayView1, ArrayView2, ArrayViewMut1, ArrayViewMut2};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use super::config::ModelConfig;
use crate::error::Result;

pub const INIT_STD: f64 = 0.02;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ParamId(pub(crate) usize);

impl ParamId {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Init {
    Normal,
    Zeros,
    Ones,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Param {
    pub name: String,
    pub shape: Vec<usize>,
    pub data: Vec<f64>,
    init: Init,
}

impl Param {
    /// Matrices get weight decay; biases and norm parameters do not.
    pub fn decays(&self) -> bool {
        self.shape.len() == 2
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct ParamStore {
    params: Vec<Param>,
}

impl ParamStore {
    fn add(&mut self, name: String, shape: Vec<usize>, init: Init) -> ParamId {
        let len = shape.iter().product();
        self.params.push(Param {
            name,
            shape,
            data: vec![0.0; len],
            init,
        });
        ParamId(self.params.len() - 1)
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (ParamId, &Param)> {
        self.params.iter().enumerate().map(|(i, p)| (ParamId(i), p))
    }

    pub fn get(&self, id: ParamId) -> &Param {
        &self.params[id.0]
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Param {
        &mut self.params[id.0]
    }

    pub fn find(&self, name: &str) -> Option<ParamId> {
        self.params.iter().position(|p| p.name == name).map(ParamId)
    }

    /// Total number of scalar parameters (shared tensors counted once).
    pub fn num_scalars(&self) -> usize {
        self.params.iter().map(|p| p.data.len()).sum()
    }

    pub(crate) fn mat(&self, id: ParamId) -> ArrayView2<'_, f64> {
        let p = &self.params[id.0];
        ArrayView2::from_shape((p.shape[0], p.shape[1]), &p.data).expect("matrix shape")
    }

    pub(crate) fn vec(&self, id: ParamId) -> ArrayView1<'_, f64> {
        ArrayView1::from(&self.params[id.0].data)
    }

    pub(crate) fn zeros_like(&self) -> Gradients {
        Gradients {
            data: self.params.iter().map(|p| vec![0.0; p.data.len()]).collect(),
            shapes: self.params.iter().map(|p| p.shape.clone()).collect(),
        }
    }

    fn copy_data(&mut self, from: ParamId, to: ParamId) {
        let data = self.params[from.0].data.clone();
        assert_eq!(data.len(), self.params[to.0].data.len());
        self.params[to.0].data = data;
    }
}

/// Gradient buffers laid out like a [`ParamStore`].
#[derive(Debug, Clone, PartialEq)]
pub struct Gradients {
    data: Vec<Vec<f64>>,
    shapes: Vec<Vec<usize>>,
}

impl Gradients {
    pub fn get(&self, id: ParamId) -> &[f64] {
        &self.data[id.0]
    }

    pub fn iter(&self) -> impl Iterator<Item = (ParamId, &[f64])> {
        self.data.iter().enumerate().map(|(i, g)| (ParamId(i), g.as_slice()))
    }

    pub(crate) fn mat_mut(&mut self, id: ParamId) -> ArrayViewMut2<'_, f64> {
        let shape = (self.shapes[id.0][0], self.shapes[id.0][1]);
        ArrayViewMut2::from_shape(shape, &mut self.data[id.0]).expect("matrix shape")
    }

    pub(crate) fn vec_mut(&mut self, id: ParamId) -> ArrayViewMut1<'_, f64> {
        ArrayViewMut1::from(&mut self.data[id.0])
    }

    pub fn norm(&self) -> f64 {
        self.data.iter().flatten().map(|g| g * g).sum::<f64>().sqrt()
    }

    pub fn scale(&mut self, factor: f64) {
        self.data.iter_mut().flatten().for_each(|g| *g *= factor);
    }

    pub fn add_assign(&mut self, other: &Gradients) {
        for (a, b) in self.data.iter_mut().zip(&other.data) {
            for (x, y) in a.iter_mut().zip(b) {
                *x += y;
            }
        }
    }

    /// Largest absolute difference to `other`.
    pub fn max_abs_diff(&self, other: &Gradients) -> f64 {
        self.data
            .iter()
            .flatten()
            .zip(other.data.iter().flatten())
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Linear {
    pub weight: ParamId,
    pub bias: ParamId,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct AttentionIds {
    pub q: Linear,
    pub k: Linear,
    pub v: Linear,
    pub o: Linear,
}

impl AttentionIds {
    pub fn ids(&self) -> [ParamId; 8] {
        let [q, k, v, o] = [self.q, self.k, self.v, self.o];
        [q.weight, q.bias, k.weight, k.bias, v.weight, v.bias, o.weight, o.bias]
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct NormIds {
    pub gamma: ParamId,
    pub beta: ParamId,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct FfnIds {
    pub inner: Linear,
    pub outer: Linear,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct EncoderLayerIds {
    pub self_attn: AttentionIds,
    pub norm1: NormIds,
    pub ffn: FfnIds,
    pub norm2: NormIds,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct DecoderLayerIds {
    /// Same ids as the encoder layer of the same index.
    pub self_attn: AttentionIds,
    pub norm1: NormIds,
    pub cross_attn: AttentionIds,
    pub norm2: NormIds,
    pub ffn: FfnIds,
    pub norm3: NormIds,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Layout {
    pub token_embeddings: ParamId,
    pub position_embeddings: ParamId,
    pub segment_embeddings: ParamId,
    pub encoder_embed_norm: NormIds,
    pub decoder_embed_norm: NormIds,
    pub encoder: Vec<EncoderLayerIds>,
    pub decoder: Vec<DecoderLayerIds>,
    /// Same id as `token_embeddings`.
    pub output_projection: ParamId,
}

impl Layout {
    /// Alternative names under which shared tensors are also known, as
    /// `(alias, canonical)` pairs.
    pub fn aliases(&self, store: &ParamStore) -> Vec<(String, String)> {
        const PARTS: [&str; 8] = [
            "q.weight", "q.bias", "k.weight", "k.bias", "v.weight", "v.bias", "o.weight", "o.bias",
        ];
        let mut out = Vec::new();
        for (i, layer) in self.decoder.iter().enumerate() {
            for (part, id) in PARTS.iter().zip(layer.self_attn.ids()) {
                out.push((
                    format!("decoder.{i}.self_attn.{part}"),
                    store.get(id).name.clone(),
                ));
            }
        }
        out.push((
            "output_projection.weight".to_owned(),
            store.get(self.output_projection).name.clone(),
        ));
        out
    }
}

fn linear(store: &mut ParamStore, prefix: &str, inp: usize, out: usize) -> Linear {
    Linear {
        weight: store.add(format!("{prefix}.weight"), vec![inp, out], Init::Normal),
        bias: store.add(format!("{prefix}.bias"), vec![out], Init::Zeros),
    }
}

fn attention(store: &mut ParamStore, prefix: &str, d: usize) -> AttentionIds {
    AttentionIds {
        q: linear(store, &format!("{prefix}.q"), d, d),
        k: linear(store, &format!("{prefix}.k"), d, d),
        v: linear(store, &format!("{prefix}.v"), d, d),
        o: linear(store, &format!("{prefix}.o"), d, d),
    }
}

fn norm(store: &mut ParamStore, prefix: &str, d: usize) -> NormIds {
    NormIds {
        gamma: store.add(format!("{prefix}.gamma"), vec![d], Init::Ones),
        beta: store.add(format!("{prefix}.beta"), vec![d], Init::Zeros),
    }
}

fn ffn(store: &mut ParamStore, prefix: &str, d: usize, hidden: usize) -> FfnIds {
    FfnIds {
        inner: linear(store, &format!("{prefix}.inner"), d, hidden),
        outer: linear(store, &format!("{prefix}.outer"), hidden, d),
    }
}

/// Allocates the tensors for `cfg` (zero-filled) and returns the layout.
pub(crate) fn allocate(cfg: &ModelConfig) -> (ParamStore, Layout) {
    let d = cfg.d_model;
    let mut store = ParamStore::default();
    let token = store.add(
        "embeddings.token".into(),
        vec![cfg.vocab_size, d],
        Init::Normal,
    );
    let position = store.add(
        "embeddings.position".into(),
        vec![cfg.max_positions, d],
        Init::Normal,
    );
    let segment = store.add("embeddings.segment".into(), vec![2, d], Init::Normal);
    let encoder_embed_norm = norm(&mut store, "embeddings.encoder_norm", d);
    let decoder_embed_norm = norm(&mut store, "embeddings.decoder_norm", d);

    let mut encoder = Vec::with_capacity(cfg.n_layers);
    for i in 0..cfg.n_layers {
        encoder.push(EncoderLayerIds {
            self_attn: attention(&mut store, &format!("encoder.{i}.self_attn"), d),
            norm1: norm(&mut store, &format!("encoder.{i}.norm1"), d),
            ffn: ffn(&mut store, &format!("encoder.{i}.ffn"), d, cfg.ffn_dim),
            norm2: norm(&mut store, &format!("encoder.{i}.norm2"), d),
        });
    }
    let mut decoder = Vec::with_capacity(cfg.n_layers);
    for (i, enc) in encoder.iter().enumerate() {
        decoder.push(DecoderLayerIds {
            self_attn: enc.self_attn,
            norm1: norm(&mut store, &format!("decoder.{i}.norm1"), d),
            cross_attn: attention(&mut store, &format!("decoder.{i}.cross_attn"), d),
            norm2: norm(&mut store, &format!("decoder.{i}.norm2"), d),
            ffn: ffn(&mut store, &format!("decoder.{i}.ffn"), d, cfg.ffn_dim),
            norm3: norm(&mut store, &format!("decoder.{i}.norm3"), d),
        });
    }
    let layout = Layout {
        token_embeddings: token,
        position_embeddings: position,
        segment_embeddings: segment,
        encoder_embed_norm,
        decoder_embed_norm,
        encoder,
        decoder,
        output_projection: token,
    };
    (store, layout)
}

/// Fills every tensor from its init rule with a seeded generator, then
/// copies each layer's self-attention weights into its cross-attention.
pub(crate) fn initialize(store: &mut ParamStore, layout: &Layout, seed: u32) -> Result<()> {
    let mut rng = ChaCha8Rng::seed_from_u64(u64::from(seed));
    let normal = Normal::new(0.0, INIT_STD).expect("valid std");
    for p in &mut store.params {
        match p.init {
            Init::Normal => p.data.iter_mut().for_each(|x| *x = normal.sample(&mut rng)),
            Init::Zeros => p.data.fill(0.0),
            Init::Ones => p.data.fill(1.0),
        }
    }
    for layer in &layout.decoder {
        for (from, to) in layer.self_attn.ids().into_iter().zip(layer.cross_attn.ids()) {
            store.copy_data(from, to);
        }
    }
    Ok(())
}
