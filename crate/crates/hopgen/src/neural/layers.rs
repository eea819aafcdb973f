//! Multi-head attention, feed-forward, and the post-norm encoder/decoder
//! layer stacks, each with an explicit backward pass over cached
//! activations.

use ndarray::s;

use super::ops::{
    dropout_bwd, dropout_fwd, layer_norm_bwd, layer_norm_fwd, linear_bwd, linear_fwd, relu_bwd,
    relu_fwd, softmax_bwd, softmax_rows, NormCache,
};
use super::params::{Gradients, Mat, ParameterStore};
use super::{Scalar, TrainCtx};

pub(crate) struct AttnCache<F: Scalar> {
    q: Mat<F>,
    k: Mat<F>,
    v: Mat<F>,
    attn: Vec<Mat<F>>,
    concat: Mat<F>,
}

/// Scaled dot-product multi-head attention. `x` provides queries, `ctx`
/// provides keys and values (`ctx == x` for self-attention). With `causal`
/// set, position i only attends to context positions j <= i.
pub(crate) fn attention_fwd<F: Scalar>(
    x: &Mat<F>,
    ctx: &Mat<F>,
    store: &ParameterStore<F>,
    prefix: &str,
    causal: bool,
) -> (Mat<F>, AttnCache<F>) {
    let heads = store.dims.heads;
    let p = |n: &str| store.get(&format!("{prefix}.{n}"));
    let q = linear_fwd(x, p("wq"), p("bq"));
    let k = linear_fwd(ctx, p("wk"), p("bk"));
    let v = linear_fwd(ctx, p("wv"), p("bv"));

    let d = q.ncols();
    let dh = d / heads;
    let scale = F::from_f64(1.0 / (dh as f64).sqrt());
    let (l, s_len) = (q.nrows(), k.nrows());

    let mut concat = Mat::zeros((l, d));
    let mut attn = Vec::with_capacity(heads);
    for h in 0..heads {
        let cols = s![.., h * dh..(h + 1) * dh];
        let qh = q.slice(cols);
        let kh = k.slice(cols);
        let vh = v.slice(cols);
        let mut scores = qh.dot(&kh.t()) * scale;
        if causal {
            for i in 0..l {
                for j in (i + 1)..s_len {
                    scores[[i, j]] = F::neg_infinity();
                }
            }
        }
        let a = softmax_rows(&scores);
        concat.slice_mut(cols).assign(&a.dot(&vh));
        attn.push(a);
    }
    let out = linear_fwd(&concat, p("wo"), p("bo"));
    (out, AttnCache { q, k, v, attn, concat })
}

/// Returns (d_x, d_ctx). Masked positions need no special handling: their
/// attention weights are zero, so the softmax backward zeroes them too.
pub(crate) fn attention_bwd<F: Scalar>(
    dout: &Mat<F>,
    x: &Mat<F>,
    ctx: &Mat<F>,
    cache: &AttnCache<F>,
    store: &ParameterStore<F>,
    prefix: &str,
    grads: &mut Gradients<F>,
) -> (Mat<F>, Mat<F>) {
    let heads = store.dims.heads;
    let p = |n: &str| store.get(&format!("{prefix}.{n}"));

    let (dconcat, dwo, dbo) = linear_bwd(dout, &cache.concat, p("wo"));
    grads.add(&format!("{prefix}.wo"), &dwo);
    grads.add(&format!("{prefix}.bo"), &dbo);

    let d = cache.q.ncols();
    let dh = d / heads;
    let scale = F::from_f64(1.0 / (dh as f64).sqrt());

    let mut dq = Mat::zeros(cache.q.raw_dim());
    let mut dk = Mat::zeros(cache.k.raw_dim());
    let mut dv = Mat::zeros(cache.v.raw_dim());
    for h in 0..heads {
        let cols = s![.., h * dh..(h + 1) * dh];
        let doh = dconcat.slice(cols);
        let a = &cache.attn[h];
        let vh = cache.v.slice(cols);
        let da = doh.dot(&vh.t());
        let dvh = a.t().dot(&doh);
        let ds = softmax_bwd(&da, a);
        let dqh = ds.dot(&cache.k.slice(cols)) * scale;
        let dkh = ds.t().dot(&cache.q.slice(cols)) * scale;
        dq.slice_mut(cols).assign(&dqh);
        dk.slice_mut(cols).assign(&dkh);
        dv.slice_mut(cols).assign(&dvh);
    }

    let (dx, dwq, dbq) = linear_bwd(&dq, x, p("wq"));
    let (dctx_k, dwk, dbk) = linear_bwd(&dk, ctx, p("wk"));
    let (dctx_v, dwv, dbv) = linear_bwd(&dv, ctx, p("wv"));
    grads.add(&format!("{prefix}.wq"), &dwq);
    grads.add(&format!("{prefix}.bq"), &dbq);
    grads.add(&format!("{prefix}.wk"), &dwk);
    grads.add(&format!("{prefix}.bk"), &dbk);
    grads.add(&format!("{prefix}.wv"), &dwv);
    grads.add(&format!("{prefix}.bv"), &dbv);
    (dx, dctx_k + dctx_v)
}

pub(crate) struct FfCache<F: Scalar> {
    pre: Mat<F>,
    act: Mat<F>,
}

fn ff_fwd<F: Scalar>(x: &Mat<F>, store: &ParameterStore<F>, prefix: &str) -> (Mat<F>, FfCache<F>) {
    let p = |n: &str| store.get(&format!("{prefix}.{n}"));
    let pre = linear_fwd(x, p("w1"), p("b1"));
    let act = relu_fwd(&pre);
    let y = linear_fwd(&act, p("w2"), p("b2"));
    (y, FfCache { pre, act })
}

fn ff_bwd<F: Scalar>(
    dy: &Mat<F>,
    x: &Mat<F>,
    cache: &FfCache<F>,
    store: &ParameterStore<F>,
    prefix: &str,
    grads: &mut Gradients<F>,
) -> Mat<F> {
    let p = |n: &str| store.get(&format!("{prefix}.{n}"));
    let (dact, dw2, db2) = linear_bwd(dy, &cache.act, p("w2"));
    let dpre = relu_bwd(&dact, &cache.pre);
    let (dx, dw1, db1) = linear_bwd(&dpre, x, p("w1"));
    grads.add(&format!("{prefix}.w1"), &dw1);
    grads.add(&format!("{prefix}.b1"), &db1);
    grads.add(&format!("{prefix}.w2"), &dw2);
    grads.add(&format!("{prefix}.b2"), &db2);
    dx
}

fn maybe_dropout<F: Scalar>(
    x: Mat<F>,
    train: &mut Option<&mut TrainCtx>,
) -> (Mat<F>, Option<Mat<F>>) {
    match train {
        Some(ctx) if ctx.dropout > 0.0 => {
            let (y, mask) = dropout_fwd(&x, ctx.dropout, &mut ctx.rng);
            (y, Some(mask))
        }
        _ => (x, None),
    }
}

fn undrop<F: Scalar>(dy: Mat<F>, mask: &Option<Mat<F>>) -> Mat<F> {
    match mask {
        Some(m) => dropout_bwd(&dy, m),
        None => dy,
    }
}

pub(crate) struct EncLayerCache<F: Scalar> {
    x: Mat<F>,
    attn: AttnCache<F>,
    drop1: Option<Mat<F>>,
    norm1: NormCache<F>,
    h1: Mat<F>,
    ff: FfCache<F>,
    drop2: Option<Mat<F>>,
    norm2: NormCache<F>,
}

fn encoder_layer_fwd<F: Scalar>(
    x: Mat<F>,
    store: &ParameterStore<F>,
    layer: usize,
    mut train: Option<&mut TrainCtx>,
) -> (Mat<F>, EncLayerCache<F>) {
    let attn_prefix = format!("enc{layer}.attn");
    let (a, attn) = attention_fwd(&x, &x, store, &attn_prefix, false);
    let (a, drop1) = maybe_dropout(a, &mut train);
    let (h1, norm1) = layer_norm_fwd(
        &(&x + &a),
        store.get(&format!("enc{layer}.norm1.gain")),
        store.get(&format!("enc{layer}.norm1.bias")),
    );
    let (f, ff) = ff_fwd(&h1, store, &format!("enc{layer}.ff"));
    let (f, drop2) = maybe_dropout(f, &mut train);
    let (y, norm2) = layer_norm_fwd(
        &(&h1 + &f),
        store.get(&format!("enc{layer}.norm2.gain")),
        store.get(&format!("enc{layer}.norm2.bias")),
    );
    (
        y,
        EncLayerCache {
            x,
            attn,
            drop1,
            norm1,
            h1,
            ff,
            drop2,
            norm2,
        },
    )
}

fn encoder_layer_bwd<F: Scalar>(
    dy: &Mat<F>,
    cache: &EncLayerCache<F>,
    store: &ParameterStore<F>,
    layer: usize,
    grads: &mut Gradients<F>,
) -> Mat<F> {
    let (dsum2, dgain2, dbias2) = layer_norm_bwd(
        dy,
        &cache.norm2,
        store.get(&format!("enc{layer}.norm2.gain")),
    );
    grads.add(&format!("enc{layer}.norm2.gain"), &dgain2);
    grads.add(&format!("enc{layer}.norm2.bias"), &dbias2);

    let df = undrop(dsum2.clone(), &cache.drop2);
    let dh1_ff = ff_bwd(&df, &cache.h1, &cache.ff, store, &format!("enc{layer}.ff"), grads);
    let dh1 = dsum2 + dh1_ff;

    let (dsum1, dgain1, dbias1) = layer_norm_bwd(
        &dh1,
        &cache.norm1,
        store.get(&format!("enc{layer}.norm1.gain")),
    );
    grads.add(&format!("enc{layer}.norm1.gain"), &dgain1);
    grads.add(&format!("enc{layer}.norm1.bias"), &dbias1);

    let da = undrop(dsum1.clone(), &cache.drop1);
    let (dx_q, dx_kv) = attention_bwd(
        &da,
        &cache.x,
        &cache.x,
        &cache.attn,
        store,
        &format!("enc{layer}.attn"),
        grads,
    );
    dsum1 + dx_q + dx_kv
}

pub(crate) struct EncoderCache<F: Scalar> {
    layers: Vec<EncLayerCache<F>>,
}

pub(crate) fn encoder_fwd<F: Scalar>(
    x0: Mat<F>,
    store: &ParameterStore<F>,
    mut train: Option<&mut TrainCtx>,
) -> (Mat<F>, EncoderCache<F>) {
    let mut x = x0;
    let mut layers = Vec::with_capacity(store.dims.enc_layers);
    for l in 0..store.dims.enc_layers {
        let (y, cache) = encoder_layer_fwd(x, store, l, train.as_deref_mut());
        layers.push(cache);
        x = y;
    }
    (x, EncoderCache { layers })
}

pub(crate) fn encoder_bwd<F: Scalar>(
    dy: Mat<F>,
    cache: &EncoderCache<F>,
    store: &ParameterStore<F>,
    grads: &mut Gradients<F>,
) -> Mat<F> {
    let mut d = dy;
    for (l, layer_cache) in cache.layers.iter().enumerate().rev() {
        d = encoder_layer_bwd(&d, layer_cache, store, l, grads);
    }
    d
}

pub(crate) struct DecLayerCache<F: Scalar> {
    x: Mat<F>,
    self_attn: AttnCache<F>,
    drop1: Option<Mat<F>>,
    norm1: NormCache<F>,
    h1: Mat<F>,
    cross: AttnCache<F>,
    drop2: Option<Mat<F>>,
    norm2: NormCache<F>,
    h2: Mat<F>,
    ff: FfCache<F>,
    drop3: Option<Mat<F>>,
    norm3: NormCache<F>,
}

fn decoder_layer_fwd<F: Scalar>(
    x: Mat<F>,
    memory: &Mat<F>,
    store: &ParameterStore<F>,
    layer: usize,
    mut train: Option<&mut TrainCtx>,
) -> (Mat<F>, DecLayerCache<F>) {
    let (a, self_attn) = attention_fwd(&x, &x, store, &format!("dec{layer}.self"), true);
    let (a, drop1) = maybe_dropout(a, &mut train);
    let (h1, norm1) = layer_norm_fwd(
        &(&x + &a),
        store.get(&format!("dec{layer}.norm1.gain")),
        store.get(&format!("dec{layer}.norm1.bias")),
    );
    let (c, cross) = attention_fwd(&h1, memory, store, &format!("dec{layer}.cross"), false);
    let (c, drop2) = maybe_dropout(c, &mut train);
    let (h2, norm2) = layer_norm_fwd(
        &(&h1 + &c),
        store.get(&format!("dec{layer}.norm2.gain")),
        store.get(&format!("dec{layer}.norm2.bias")),
    );
    let (f, ff) = ff_fwd(&h2, store, &format!("dec{layer}.ff"));
    let (f, drop3) = maybe_dropout(f, &mut train);
    let (y, norm3) = layer_norm_fwd(
        &(&h2 + &f),
        store.get(&format!("dec{layer}.norm3.gain")),
        store.get(&format!("dec{layer}.norm3.bias")),
    );
    (
        y,
        DecLayerCache {
            x,
            self_attn,
            drop1,
            norm1,
            h1,
            cross,
            drop2,
            norm2,
            h2,
            ff,
            drop3,
            norm3,
        },
    )
}

/// Returns (dx, d_memory).
fn decoder_layer_bwd<F: Scalar>(
    dy: &Mat<F>,
    memory: &Mat<F>,
    cache: &DecLayerCache<F>,
    store: &ParameterStore<F>,
    layer: usize,
    grads: &mut Gradients<F>,
) -> (Mat<F>, Mat<F>) {
    let (dsum3, dgain3, dbias3) = layer_norm_bwd(
        dy,
        &cache.norm3,
        store.get(&format!("dec{layer}.norm3.gain")),
    );
    grads.add(&format!("dec{layer}.norm3.gain"), &dgain3);
    grads.add(&format!("dec{layer}.norm3.bias"), &dbias3);

    let df = undrop(dsum3.clone(), &cache.drop3);
    let dh2_ff = ff_bwd(&df, &cache.h2, &cache.ff, store, &format!("dec{layer}.ff"), grads);
    let dh2 = dsum3 + dh2_ff;

    let (dsum2, dgain2, dbias2) = layer_norm_bwd(
        &dh2,
        &cache.norm2,
        store.get(&format!("dec{layer}.norm2.gain")),
    );
    grads.add(&format!("dec{layer}.norm2.gain"), &dgain2);
    grads.add(&format!("dec{layer}.norm2.bias"), &dbias2);

    let dc = undrop(dsum2.clone(), &cache.drop2);
    let (dh1_cross, dmem) = attention_bwd(
        &dc,
        &cache.h1,
        memory,
        &cache.cross,
        store,
        &format!("dec{layer}.cross"),
        grads,
    );
    let dh1 = dsum2 + dh1_cross;

    let (dsum1, dgain1, dbias1) = layer_norm_bwd(
        &dh1,
        &cache.norm1,
        store.get(&format!("dec{layer}.norm1.gain")),
    );
    grads.add(&format!("dec{layer}.norm1.gain"), &dgain1);
    grads.add(&format!("dec{layer}.norm1.bias"), &dbias1);

    let da = undrop(dsum1.clone(), &cache.drop1);
    let (dx_q, dx_kv) = attention_bwd(
        &da,
        &cache.x,
        &cache.x,
        &cache.self_attn,
        store,
        &format!("dec{layer}.self"),
        grads,
    );
    (dsum1 + dx_q + dx_kv, dmem)
}

pub(crate) struct DecoderCache<F: Scalar> {
    layers: Vec<DecLayerCache<F>>,
}

pub(crate) fn decoder_fwd<F: Scalar>(
    x0: Mat<F>,
    memory: &Mat<F>,
    store: &ParameterStore<F>,
    mut train: Option<&mut TrainCtx>,
) -> (Mat<F>, DecoderCache<F>) {
    let mut x = x0;
    let mut layers = Vec::with_capacity(store.dims.dec_layers);
    for l in 0..store.dims.dec_layers {
        let (y, cache) = decoder_layer_fwd(x, memory, store, l, train.as_deref_mut());
        layers.push(cache);
        x = y;
    }
    (x, DecoderCache { layers })
}

/// Returns (dx0, d_memory) with memory gradients summed over layers.
pub(crate) fn decoder_bwd<F: Scalar>(
    dy: Mat<F>,
    memory: &Mat<F>,
    cache: &DecoderCache<F>,
    store: &ParameterStore<F>,
    grads: &mut Gradients<F>,
) -> (Mat<F>, Mat<F>) {
    let mut d = dy;
    let mut dmem_total = Mat::zeros(memory.raw_dim());
    for (l, layer_cache) in cache.layers.iter().enumerate().rev() {
        let (dx, dmem) = decoder_layer_bwd(&d, memory, layer_cache, store, l, grads);
        d = dx;
        dmem_total += &dmem;
    }
    (d, dmem_total)
}
