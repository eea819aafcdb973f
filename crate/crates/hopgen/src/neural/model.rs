//! Model-level forward/backward graphs: the hop labeller (encoder +
//! 3-way classifier) and the sentence realizer (order-free encoder +
//! autoregressive decoder).

use ndarray::Array1;

use super::layers::{decoder_bwd, decoder_fwd, encoder_bwd, encoder_fwd, DecoderCache, EncoderCache};
use super::ops::{embed_bwd, embed_fwd, linear_bwd, linear_fwd, sinusoidal_encoding, softmax_rows};
use super::params::{Gradients, Mat, ParameterStore};
use super::{Scalar, TrainCtx};
use crate::corpus::BOS_ID;
use crate::error::{Error, Result};

/// Encodes a token id sequence into one hidden vector per position.
/// Positional encoding is added only when `use_positional` is set; without
/// it the stack is permutation-equivariant.
pub fn encode_sequence<F: Scalar>(
    ids: &[u32],
    store: &ParameterStore<F>,
    use_positional: bool,
) -> Result<Mat<F>> {
    let (hidden, _) = encode_ids_full(ids, store, use_positional, None)?;
    Ok(hidden)
}

pub(crate) fn encode_ids_full<F: Scalar>(
    ids: &[u32],
    store: &ParameterStore<F>,
    use_positional: bool,
    train: Option<&mut TrainCtx>,
) -> Result<(Mat<F>, EncoderCache<F>)> {
    if ids.is_empty() {
        return Err(Error::EmptyInput("encode_sequence ids"));
    }
    let mut x = embed_fwd(ids, store.get("embed"))?;
    if use_positional {
        x += &sinusoidal_encoding::<F>(ids.len(), store.dims.d_model);
    }
    Ok(encoder_fwd(x, store, train))
}

/// Runs the encoder stack over already-embedded input vectors (one row per
/// position) without positional encoding; used for path node
/// representations.
pub fn encode_vectors<F: Scalar>(x: &Mat<F>, store: &ParameterStore<F>) -> Result<Mat<F>> {
    if x.nrows() == 0 {
        return Err(Error::EmptyInput("encode_vectors input"));
    }
    let (hidden, _) = encoder_fwd(x.clone(), store, None);
    Ok(hidden)
}

/// Per-position 3-way label probabilities: softmax(W_c·h + b_c).
pub fn classify_positions<F: Scalar>(hidden: &Mat<F>, store: &ParameterStore<F>) -> Result<Mat<F>> {
    if hidden.nrows() == 0 {
        return Err(Error::EmptyInput("classify_positions hidden states"));
    }
    let logits = linear_fwd(hidden, store.get("cls.w"), store.get("cls.b"));
    Ok(softmax_rows(&logits))
}

/// One greedy-decoding step: runs the decoder over the whole prefix and
/// returns the next-token probability row.
pub fn decode_step<F: Scalar>(
    prefix_ids: &[u32],
    memory: &Mat<F>,
    store: &ParameterStore<F>,
) -> Result<Array1<F>> {
    if memory.nrows() == 0 {
        return Err(Error::EmptyInput("decoder memory"));
    }
    if prefix_ids.first() != Some(&BOS_ID) {
        return Err(Error::Data("decoder prefix must start with BOS".into()));
    }
    let mut x = embed_fwd(prefix_ids, store.get("embed"))?;
    x += &sinusoidal_encoding::<F>(prefix_ids.len(), store.dims.d_model);
    let (dec_out, _) = decoder_fwd(x, memory, store, None);
    let last = dec_out.row(dec_out.nrows() - 1).insert_axis(ndarray::Axis(0));
    let logits = linear_fwd(&last.to_owned(), store.get("out.w"), store.get("out.b"));
    Ok(softmax_rows(&logits).row(0).to_owned())
}

/// Mean negative log-likelihood over unmasked positions (`mask[i]` true =
/// position counts). Returns the loss and the gradient with respect to the
/// pre-softmax logits; masked rows are exactly zero.
pub fn cross_entropy_masked<F: Scalar>(
    probs: &Mat<F>,
    gold: &[usize],
    mask: &[bool],
) -> Result<(F, Mat<F>)> {
    if probs.nrows() != gold.len() || gold.len() != mask.len() {
        return Err(Error::ShapeMismatch(format!(
            "rows {} vs gold {} vs mask {}",
            probs.nrows(),
            gold.len(),
            mask.len()
        )));
    }
    let counted = mask.iter().filter(|&&m| m).count();
    if counted == 0 {
        return Err(Error::AllMasked);
    }
    let scale = F::from_f64(1.0 / counted as f64);
    let mut loss = F::zero();
    let mut dlogits = Mat::zeros(probs.raw_dim());
    for i in 0..probs.nrows() {
        if !mask[i] {
            continue;
        }
        if gold[i] >= probs.ncols() {
            return Err(Error::ShapeMismatch(format!(
                "gold class {} out of {} columns",
                gold[i],
                probs.ncols()
            )));
        }
        loss = loss - probs[[i, gold[i]]].ln() * scale;
        for c in 0..probs.ncols() {
            let target = if c == gold[i] { F::one() } else { F::zero() };
            dlogits[[i, c]] = (probs[[i, c]] - target) * scale;
        }
    }
    Ok((loss, dlogits))
}

/// Activations of a labeller forward pass, kept for the backward pass.
pub struct LabellerCache<F: Scalar> {
    ids: Vec<u32>,
    enc: EncoderCache<F>,
    enc_out: Mat<F>,
    pub probs: Mat<F>,
}

/// Embeds `ids` (with positional encoding), runs the encoder stack and the
/// classifier head. Returns per-position probabilities plus the cache.
pub fn labeller_forward<F: Scalar>(
    ids: &[u32],
    store: &ParameterStore<F>,
    train: Option<&mut TrainCtx>,
) -> Result<(Mat<F>, LabellerCache<F>)> {
    let (enc_out, enc) = encode_ids_full(ids, store, true, train)?;
    let logits = linear_fwd(&enc_out, store.get("cls.w"), store.get("cls.b"));
    let probs = softmax_rows(&logits);
    Ok((
        probs.clone(),
        LabellerCache {
            ids: ids.to_vec(),
            enc,
            enc_out,
            probs,
        },
    ))
}

/// Backpropagates a logit gradient through the classifier, encoder stack,
/// and embeddings.
pub fn labeller_backward<F: Scalar>(
    dlogits: &Mat<F>,
    cache: &LabellerCache<F>,
    store: &ParameterStore<F>,
    grads: &mut Gradients<F>,
) {
    let (dh, dw, db) = linear_bwd(dlogits, &cache.enc_out, store.get("cls.w"));
    grads.add("cls.w", &dw);
    grads.add("cls.b", &db);
    let dx0 = encoder_bwd(dh, &cache.enc, store, grads);
    embed_bwd(&dx0, &cache.ids, grads.get_mut("embed"));
}

/// Activations of a realizer forward pass.
pub struct RealizerCache<F: Scalar> {
    enc: EncoderCache<F>,
    memory: Mat<F>,
    dec_ids: Vec<u32>,
    dec: DecoderCache<F>,
    dec_out: Mat<F>,
    pub probs: Mat<F>,
}

/// Encodes path node representations (no positional encoding) into memory,
/// then teacher-forces the decoder over `dec_input_ids` (positional
/// encoding on). Returns next-token probabilities per decoder position.
pub fn realizer_forward<F: Scalar>(
    node_reprs: &Mat<F>,
    dec_input_ids: &[u32],
    store: &ParameterStore<F>,
    mut train: Option<&mut TrainCtx>,
) -> Result<(Mat<F>, RealizerCache<F>)> {
    if node_reprs.nrows() == 0 {
        return Err(Error::EmptyInput("realizer node representations"));
    }
    if dec_input_ids.is_empty() {
        return Err(Error::EmptyInput("realizer decoder input"));
    }
    let (memory, enc) = encoder_fwd(node_reprs.clone(), store, train.as_deref_mut());
    let mut x = embed_fwd(dec_input_ids, store.get("embed"))?;
    x += &sinusoidal_encoding::<F>(dec_input_ids.len(), store.dims.d_model);
    let (dec_out, dec) = decoder_fwd(x, &memory, store, train);
    let logits = linear_fwd(&dec_out, store.get("out.w"), store.get("out.b"));
    let probs = softmax_rows(&logits);
    Ok((
        probs.clone(),
        RealizerCache {
            enc,
            memory,
            dec_ids: dec_input_ids.to_vec(),
            dec,
            dec_out,
            probs,
        },
    ))
}

/// Backpropagates a logit gradient through the output projection, decoder,
/// encoder, and the decoder-side embeddings. Returns the gradient with
/// respect to the node representation inputs so the caller can scatter it
/// into the concept embeddings that were summed into each row.
pub fn realizer_backward<F: Scalar>(
    dlogits: &Mat<F>,
    cache: &RealizerCache<F>,
    store: &ParameterStore<F>,
    grads: &mut Gradients<F>,
) -> Mat<F> {
    let (ddec_out, dow, dob) = linear_bwd(dlogits, &cache.dec_out, store.get("out.w"));
    grads.add("out.w", &dow);
    grads.add("out.b", &dob);
    let (ddec_in, dmem) = decoder_bwd(ddec_out, &cache.memory, &cache.dec, store, grads);
    embed_bwd(&ddec_in, &cache.dec_ids, grads.get_mut("embed"));
    encoder_bwd(dmem, &cache.enc, store, grads)
}
