//! Minimal trainable transformer substrate: embeddings, multi-head
//! attention, feed-forward blocks, layer norm, sinusoidal positional
//! encoding, masked cross-entropy, Adam, and finite-difference gradient
//! verification. Generic over `f32` (training) and `f64` (gradient checks).

mod adam;
mod checkpoint;
mod gradcheck;
mod layers;
mod model;
mod ops;
mod params;

pub use adam::{adam_step, AdamState};
pub use checkpoint::{read_checkpoint, write_checkpoint, Checkpoint};
pub use gradcheck::{finite_difference_check, GradCheckReport};
pub use model::{
    classify_positions, cross_entropy_masked, decode_step, encode_sequence, encode_vectors,
    labeller_backward, labeller_forward, realizer_backward, realizer_forward, LabellerCache,
    RealizerCache,
};
pub use ops::{sinusoidal_encoding, softmax_rows};
pub use params::{
    labeller_params, realizer_params, Gradients, Mat, ModelDims, ModelKind, ParameterStore,
};

/// Floating point used by the substrate; implemented for `f32` and `f64`.
pub trait Scalar:
    num_traits::Float
    + ndarray::ScalarOperand
    + ndarray::LinalgScalar
    + std::fmt::Debug
    + std::fmt::Display
    + Send
    + Sync
    + 'static
{
    fn from_f64(v: f64) -> Self;
    fn to_f64(self) -> f64;
}

impl Scalar for f32 {
    fn from_f64(v: f64) -> f32 {
        v as f32
    }
    fn to_f64(self) -> f64 {
        self as f64
    }
}

impl Scalar for f64 {
    fn from_f64(v: f64) -> f64 {
        v
    }
    fn to_f64(self) -> f64 {
        self
    }
}

/// Dropout state for training-mode forward passes; evaluation passes run
/// without one and are fully deterministic.
pub struct TrainCtx {
    pub rng: rand_chacha::ChaCha8Rng,
    pub dropout: f64,
}

impl TrainCtx {
    pub fn new(seed: u64, dropout: f64) -> Self {
        use rand::SeedableRng;
        TrainCtx {
            rng: rand_chacha::ChaCha8Rng::seed_from_u64(seed),
            dropout,
        }
    }
}
