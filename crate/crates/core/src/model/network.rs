//! Forward and backward passes of the encoder-decoder, written out by hand.
//!
//! Rows are sequence positions. Linear maps are `x W + b` with `W` stored
//! as `[in, out]`. Layers are post-norm: `norm(x + sublayer(x))`.

use ndarray::linalg::general_mat_mul;
use ndarray::{s, Array1, Array2, ArrayView2, Axis, Zip};
use rand::Rng;
use rand_chacha::ChaCha8Rng;

use super::params::{
    AttentionIds, DecoderLayerIds, EncoderLayerIds, FfnIds, Gradients, Linear, NormIds, ParamId,
    ParamStore,
};

pub(crate) const NORM_EPS: f64 = 1e-6;

/// Token ids plus segment labels fed to the encoder.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct EncodedInput {
    pub ids: Vec<u32>,
    /// 0 = first segment (src and the separator), 1 = second segment (mt).
    pub segments: Vec<u8>,
}

/// Random dropout masks; `None` everywhere means evaluation mode.
pub(crate) struct Dropout<'a> {
    pub rng: &'a mut ChaCha8Rng,
    pub rate: f64,
}

fn dropout(x: Array2<f64>, drop: &mut Option<Dropout<'_>>) -> (Array2<f64>, Option<Array2<f64>>) {
    match drop {
        Some(d) if d.rate > 0.0 => {
            let keep = 1.0 / (1.0 - d.rate);
            let mask = Array2::from_shape_fn(x.raw_dim(), |_| {
                if d.rng.random::<f64>() < d.rate {
                    0.0
                } else {
                    keep
                }
            });
            (x * &mask, Some(mask))
        }
        _ => (x, None),
    }
}

fn dropout_bwd(dy: Array2<f64>, mask: &Option<Array2<f64>>) -> Array2<f64> {
    match mask {
        Some(m) => dy * m,
        None => dy,
    }
}

fn add_mat(grads: &mut Gradients, id: ParamId, a: &ArrayView2<'_, f64>, b: &ArrayView2<'_, f64>) {
    general_mat_mul(1.0, a, b, 1.0, &mut grads.mat_mut(id));
}

// ---------------------------------------------------------------- linear

fn linear(store: &ParamStore, l: Linear, x: &ArrayView2<'_, f64>) -> Array2<f64> {
    let mut y = x.dot(&store.mat(l.weight));
    y += &store.vec(l.bias);
    y
}

fn linear_bwd(
    store: &ParamStore,
    grads: &mut Gradients,
    l: Linear,
    x: &ArrayView2<'_, f64>,
    dy: &Array2<f64>,
) -> Array2<f64> {
    add_mat(grads, l.weight, &x.t(), &dy.view());
    grads.vec_mut(l.bias).scaled_add(1.0, &dy.sum_axis(Axis(0)));
    dy.dot(&store.mat(l.weight).t())
}

// ------------------------------------------------------------ layer norm

struct NormCache {
    xhat: Array2<f64>,
    inv_std: Array1<f64>,
}

fn layer_norm(store: &ParamStore, ids: NormIds, x: &Array2<f64>) -> (Array2<f64>, NormCache) {
    let d = x.ncols() as f64;
    let mean = x.sum_axis(Axis(1)) / d;
    let centered = x - &mean.view().insert_axis(Axis(1));
    let var = centered.mapv(|v| v * v).sum_axis(Axis(1)) / d;
    let inv_std = var.mapv(|v| 1.0 / (v + NORM_EPS).sqrt());
    let xhat = centered * inv_std.view().insert_axis(Axis(1));
    let mut y = &xhat * &store.vec(ids.gamma);
    y += &store.vec(ids.beta);
    (y, NormCache { xhat, inv_std })
}

fn layer_norm_bwd(
    store: &ParamStore,
    grads: &mut Gradients,
    ids: NormIds,
    cache: &NormCache,
    dy: &Array2<f64>,
) -> Array2<f64> {
    grads
        .vec_mut(ids.gamma)
        .scaled_add(1.0, &(dy * &cache.xhat).sum_axis(Axis(0)));
    grads.vec_mut(ids.beta).scaled_add(1.0, &dy.sum_axis(Axis(0)));
    let d = dy.ncols() as f64;
    let dxhat = dy * &store.vec(ids.gamma);
    let mean_dxhat = dxhat.sum_axis(Axis(1)) / d;
    let mean_dxhat_xhat = (&dxhat * &cache.xhat).sum_axis(Axis(1)) / d;
    let mut dx = dxhat - &mean_dxhat.insert_axis(Axis(1));
    dx -= &(&cache.xhat * &mean_dxhat_xhat.insert_axis(Axis(1)));
    dx * cache.inv_std.view().insert_axis(Axis(1))
}

// ------------------------------------------------------------- attention

struct AttnCache {
    q_in: Array2<f64>,
    kv_in: Array2<f64>,
    q: Array2<f64>,
    k: Array2<f64>,
    v: Array2<f64>,
    probs: Vec<Array2<f64>>,
    ctx: Array2<f64>,
}

fn softmax_rows(scores: &mut Array2<f64>) {
    for mut row in scores.rows_mut() {
        let max = row.fold(f64::NEG_INFINITY, |m, &v| m.max(v));
        row.mapv_inplace(|v| (v - max).exp());
        let sum = row.sum();
        row /= sum;
    }
}

/// Multi-head scaled dot-product attention of `q_in` over `kv_in`.
/// With `causal`, row `i` only sees columns `..=i`.
fn attention(
    store: &ParamStore,
    n_heads: usize,
    ids: &AttentionIds,
    q_in: &Array2<f64>,
    kv_in: &Array2<f64>,
    causal: bool,
) -> (Array2<f64>, AttnCache) {
    let q = linear(store, ids.q, &q_in.view());
    let k = linear(store, ids.k, &kv_in.view());
    let v = linear(store, ids.v, &kv_in.view());
    let (t, d) = q.dim();
    let dh = d / n_heads;
    let scale = 1.0 / (dh as f64).sqrt();
    let mut ctx = Array2::zeros((t, d));
    let mut probs = Vec::with_capacity(n_heads);
    for h in 0..n_heads {
        let cols = s![.., h * dh..(h + 1) * dh];
        let mut scores = q.slice(cols).dot(&k.slice(cols).t()) * scale;
        if causal {
            for ((i, j), x) in scores.indexed_iter_mut() {
                if j > i {
                    *x = f64::NEG_INFINITY;
                }
            }
        }
        softmax_rows(&mut scores);
        general_mat_mul(1.0, &scores, &v.slice(cols), 0.0, &mut ctx.slice_mut(cols));
        probs.push(scores);
    }
    let out = linear(store, ids.o, &ctx.view());
    let cache = AttnCache {
        q_in: q_in.clone(),
        kv_in: kv_in.clone(),
        q,
        k,
        v,
        probs,
        ctx,
    };
    (out, cache)
}

/// Returns the gradients w.r.t. the query input and the key/value input.
fn attention_bwd(
    store: &ParamStore,
    grads: &mut Gradients,
    n_heads: usize,
    ids: &AttentionIds,
    cache: &AttnCache,
    dout: &Array2<f64>,
) -> (Array2<f64>, Array2<f64>) {
    let dctx = linear_bwd(store, grads, ids.o, &cache.ctx.view(), dout);
    let d = cache.q.ncols();
    let dh = d / n_heads;
    let scale = 1.0 / (dh as f64).sqrt();
    let mut dq = Array2::zeros(cache.q.raw_dim());
    let mut dk = Array2::zeros(cache.k.raw_dim());
    let mut dv = Array2::zeros(cache.v.raw_dim());
    for (h, p) in cache.probs.iter().enumerate() {
        let cols = s![.., h * dh..(h + 1) * dh];
        let dctx_h = dctx.slice(cols);
        let dp = dctx_h.dot(&cache.v.slice(cols).t());
        general_mat_mul(1.0, &p.t(), &dctx_h, 0.0, &mut dv.slice_mut(cols));
        let row_dot = (&dp * p).sum_axis(Axis(1));
        let mut ds = dp - &row_dot.insert_axis(Axis(1));
        ds *= p;
        ds *= scale;
        general_mat_mul(1.0, &ds, &cache.k.slice(cols), 0.0, &mut dq.slice_mut(cols));
        general_mat_mul(1.0, &ds.t(), &cache.q.slice(cols), 0.0, &mut dk.slice_mut(cols));
    }
    let dq_in = linear_bwd(store, grads, ids.q, &cache.q_in.view(), &dq);
    let mut dkv_in = linear_bwd(store, grads, ids.k, &cache.kv_in.view(), &dk);
    dkv_in += &linear_bwd(store, grads, ids.v, &cache.kv_in.view(), &dv);
    (dq_in, dkv_in)
}

// ------------------------------------------------------------ feed-forward

const GELU_C: f64 = 0.044_715;
// sqrt(2 / pi)
const GELU_A: f64 = 0.797_884_560_802_865_4;

fn gelu(x: f64) -> f64 {
    0.5 * x * (1.0 + (GELU_A * (x + GELU_C * x * x * x)).tanh())
}

fn gelu_grad(x: f64) -> f64 {
    let t = (GELU_A * (x + GELU_C * x * x * x)).tanh();
    0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * GELU_A * (1.0 + 3.0 * GELU_C * x * x)
}

struct FfnCache {
    x: Array2<f64>,
    pre: Array2<f64>,
    act: Array2<f64>,
}

fn ffn(store: &ParamStore, ids: &FfnIds, x: &Array2<f64>) -> (Array2<f64>, FfnCache) {
    let pre = linear(store, ids.inner, &x.view());
    let act = pre.mapv(gelu);
    let out = linear(store, ids.outer, &act.view());
    (
        out,
        FfnCache {
            x: x.clone(),
            pre,
            act,
        },
    )
}

fn ffn_bwd(
    store: &ParamStore,
    grads: &mut Gradients,
    ids: &FfnIds,
    cache: &FfnCache,
    dout: &Array2<f64>,
) -> Array2<f64> {
    let mut dact = linear_bwd(store, grads, ids.outer, &cache.act.view(), dout);
    Zip::from(&mut dact)
        .and(&cache.pre)
        .for_each(|g, &p| *g *= gelu_grad(p));
    linear_bwd(store, grads, ids.inner, &cache.x.view(), &dact)
}

// ---------------------------------------------------------------- layers

struct EncoderLayerCache {
    attn: AttnCache,
    attn_mask: Option<Array2<f64>>,
    norm1: NormCache,
    ffn: FfnCache,
    ffn_mask: Option<Array2<f64>>,
    norm2: NormCache,
}

fn encoder_layer(
    store: &ParamStore,
    n_heads: usize,
    ids: &EncoderLayerIds,
    x: &Array2<f64>,
    drop: &mut Option<Dropout<'_>>,
) -> (Array2<f64>, EncoderLayerCache) {
    let (a, attn) = attention(store, n_heads, &ids.self_attn, x, x, false);
    let (a, attn_mask) = dropout(a, drop);
    let (h1, norm1) = layer_norm(store, ids.norm1, &(x + &a));
    let (f, ffn_cache) = ffn(store, &ids.ffn, &h1);
    let (f, ffn_mask) = dropout(f, drop);
    let (out, norm2) = layer_norm(store, ids.norm2, &(h1 + &f));
    (
        out,
        EncoderLayerCache {
            attn,
            attn_mask,
            norm1,
            ffn: ffn_cache,
            ffn_mask,
            norm2,
        },
    )
}

fn encoder_layer_bwd(
    store: &ParamStore,
    grads: &mut Gradients,
    n_heads: usize,
    ids: &EncoderLayerIds,
    cache: &EncoderLayerCache,
    dout: &Array2<f64>,
) -> Array2<f64> {
    let dsum2 = layer_norm_bwd(store, grads, ids.norm2, &cache.norm2, dout);
    let df = dropout_bwd(dsum2.clone(), &cache.ffn_mask);
    let dh1 = dsum2 + &ffn_bwd(store, grads, &ids.ffn, &cache.ffn, &df);
    let dsum1 = layer_norm_bwd(store, grads, ids.norm1, &cache.norm1, &dh1);
    let da = dropout_bwd(dsum1.clone(), &cache.attn_mask);
    let (dq, dkv) = attention_bwd(store, grads, n_heads, &ids.self_attn, &cache.attn, &da);
    dsum1 + &dq + &dkv
}

struct DecoderLayerCache {
    self_attn: AttnCache,
    self_mask: Option<Array2<f64>>,
    norm1: NormCache,
    cross_attn: AttnCache,
    cross_mask: Option<Array2<f64>>,
    norm2: NormCache,
    ffn: FfnCache,
    ffn_mask: Option<Array2<f64>>,
    norm3: NormCache,
}

fn decoder_layer(
    store: &ParamStore,
    n_heads: usize,
    ids: &DecoderLayerIds,
    y: &Array2<f64>,
    memory: &Array2<f64>,
    drop: &mut Option<Dropout<'_>>,
) -> (Array2<f64>, DecoderLayerCache) {
    let (a, self_attn) = attention(store, n_heads, &ids.self_attn, y, y, true);
    let (a, self_mask) = dropout(a, drop);
    let (h1, norm1) = layer_norm(store, ids.norm1, &(y + &a));
    let (c, cross_attn) = attention(store, n_heads, &ids.cross_attn, &h1, memory, false);
    let (c, cross_mask) = dropout(c, drop);
    let (h2, norm2) = layer_norm(store, ids.norm2, &(h1 + &c));
    let (f, ffn_cache) = ffn(store, &ids.ffn, &h2);
    let (f, ffn_mask) = dropout(f, drop);
    let (out, norm3) = layer_norm(store, ids.norm3, &(h2 + &f));
    (
        out,
        DecoderLayerCache {
            self_attn,
            self_mask,
            norm1,
            cross_attn,
            cross_mask,
            norm2,
            ffn: ffn_cache,
            ffn_mask,
            norm3,
        },
    )
}

/// Returns the gradient w.r.t. the layer input; adds the memory gradient
/// into `dmemory`.
fn decoder_layer_bwd(
    store: &ParamStore,
    grads: &mut Gradients,
    n_heads: usize,
    ids: &DecoderLayerIds,
    cache: &DecoderLayerCache,
    dout: &Array2<f64>,
    dmemory: &mut Array2<f64>,
) -> Array2<f64> {
    let dsum3 = layer_norm_bwd(store, grads, ids.norm3, &cache.norm3, dout);
    let df = dropout_bwd(dsum3.clone(), &cache.ffn_mask);
    let dh2 = dsum3 + &ffn_bwd(store, grads, &ids.ffn, &cache.ffn, &df);
    let dsum2 = layer_norm_bwd(store, grads, ids.norm2, &cache.norm2, &dh2);
    let dc = dropout_bwd(dsum2.clone(), &cache.cross_mask);
    let (dq, dmem) = attention_bwd(store, grads, n_heads, &ids.cross_attn, &cache.cross_attn, &dc);
    *dmemory += &dmem;
    let dh1 = dsum2 + &dq;
    let dsum1 = layer_norm_bwd(store, grads, ids.norm1, &cache.norm1, &dh1);
    let da = dropout_bwd(dsum1.clone(), &cache.self_mask);
    let (dq, dkv) = attention_bwd(store, grads, n_heads, &ids.self_attn, &cache.self_attn, &da);
    dsum1 + &dq + &dkv
}

// ----------------------------------------------------------------- model

use super::ModelParams;

struct EmbedCache {
    norm: NormCache,
    mask: Option<Array2<f64>>,
}

pub(crate) struct EncoderCache {
    embed: EmbedCache,
    layers: Vec<EncoderLayerCache>,
}

pub(crate) struct DecoderCache {
    embed: EmbedCache,
    layers: Vec<DecoderLayerCache>,
}

impl ModelParams {
    fn embed(
        &self,
        ids: &[u32],
        segments: Option<&[u8]>,
        norm: NormIds,
        drop: &mut Option<Dropout<'_>>,
    ) -> (Array2<f64>, EmbedCache) {
        let store = &self.store;
        let tok = store.mat(self.layout.token_embeddings);
        let pos = store.mat(self.layout.position_embeddings);
        let seg = store.mat(self.layout.segment_embeddings);
        let mut x = Array2::zeros((ids.len(), self.config.d_model));
        for (t, mut row) in x.rows_mut().into_iter().enumerate() {
            row += &tok.row(ids[t] as usize);
            row += &pos.row(t);
            if let Some(segs) = segments {
                row += &seg.row(segs[t] as usize);
            }
        }
        let (x, norm_cache) = layer_norm(store, norm, &x);
        let (x, mask) = dropout(x, drop);
        (
            x,
            EmbedCache {
                norm: norm_cache,
                mask,
            },
        )
    }

    fn embed_bwd(
        &self,
        grads: &mut Gradients,
        ids: &[u32],
        segments: Option<&[u8]>,
        norm: NormIds,
        cache: &EmbedCache,
        dout: Array2<f64>,
    ) {
        let dx = dropout_bwd(dout, &cache.mask);
        let dx = layer_norm_bwd(&self.store, grads, norm, &cache.norm, &dx);
        for (t, row) in dx.rows().into_iter().enumerate() {
            grads
                .mat_mut(self.layout.token_embeddings)
                .row_mut(ids[t] as usize)
                .scaled_add(1.0, &row);
            grads
                .mat_mut(self.layout.position_embeddings)
                .row_mut(t)
                .scaled_add(1.0, &row);
            if let Some(segs) = segments {
                grads
                    .mat_mut(self.layout.segment_embeddings)
                    .row_mut(segs[t] as usize)
                    .scaled_add(1.0, &row);
            }
        }
    }

    /// Encoder states, one row per input position.
    pub(crate) fn encode(
        &self,
        input: &EncodedInput,
        drop: &mut Option<Dropout<'_>>,
    ) -> (Array2<f64>, EncoderCache) {
        let (mut x, embed) = self.embed(
            &input.ids,
            Some(&input.segments),
            self.layout.encoder_embed_norm,
            drop,
        );
        let mut layers = Vec::with_capacity(self.layout.encoder.len());
        for ids in &self.layout.encoder {
            let (out, cache) = encoder_layer(&self.store, self.config.n_heads, ids, &x, drop);
            x = out;
            layers.push(cache);
        }
        (x, EncoderCache { embed, layers })
    }

    /// Decoder hidden states for every position of `dec_ids`.
    pub(crate) fn decode(
        &self,
        memory: &Array2<f64>,
        dec_ids: &[u32],
        drop: &mut Option<Dropout<'_>>,
    ) -> (Array2<f64>, DecoderCache) {
        let (mut y, embed) = self.embed(dec_ids, None, self.layout.decoder_embed_norm, drop);
        let mut layers = Vec::with_capacity(self.layout.decoder.len());
        for ids in &self.layout.decoder {
            let (out, cache) =
                decoder_layer(&self.store, self.config.n_heads, ids, &y, memory, drop);
            y = out;
            layers.push(cache);
        }
        (y, DecoderCache { embed, layers })
    }

    /// `hidden · Eᵀ` with the tied embedding matrix.
    pub(crate) fn project(&self, hidden: &ArrayView2<'_, f64>) -> Array2<f64> {
        hidden.dot(&self.store.mat(self.layout.output_projection).t())
    }

    /// Backpropagates `dlogits` (rows = decoder positions) through the whole
    /// network, accumulating into `grads`.
    #[allow(clippy::too_many_arguments)]
    pub(crate) fn backward(
        &self,
        grads: &mut Gradients,
        input: &EncodedInput,
        dec_ids: &[u32],
        enc_cache: &EncoderCache,
        memory: &Array2<f64>,
        dec_cache: &DecoderCache,
        hidden: &Array2<f64>,
        dlogits: &Array2<f64>,
    ) {
        let store = &self.store;
        let heads = self.config.n_heads;
        let proj = self.layout.output_projection;
        add_mat(grads, proj, &dlogits.t(), &hidden.view());
        let mut dy = dlogits.dot(&store.mat(proj));

        let mut dmemory = Array2::zeros(memory.raw_dim());
        for (ids, cache) in self.layout.decoder.iter().zip(&dec_cache.layers).rev() {
            dy = decoder_layer_bwd(store, grads, heads, ids, cache, &dy, &mut dmemory);
        }
        self.embed_bwd(
            grads,
            dec_ids,
            None,
            self.layout.decoder_embed_norm,
            &dec_cache.embed,
            dy,
        );

        let mut dx = dmemory;
        for (ids, cache) in self.layout.encoder.iter().zip(&enc_cache.layers).rev() {
            dx = encoder_layer_bwd(store, grads, heads, ids, cache, &dx);
        }
        self.embed_bwd(
            grads,
            &input.ids,
            Some(&input.segments),
            self.layout.encoder_embed_norm,
            &enc_cache.embed,
            dx,
        );
    }
}
