//! Named parameter tensors and their gradients.

use indexmap::IndexMap;
use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::Scalar;
use crate::error::{Error, Result};

pub type Mat<F> = Array2<F>;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ModelDims {
    pub vocab: usize,
    pub d_model: usize,
    pub heads: usize,
    pub ff: usize,
    pub enc_layers: usize,
    pub dec_layers: usize,
}

impl ModelDims {
    pub fn validate(&self) -> Result<()> {
        if self.d_model == 0 || self.heads == 0 || self.vocab == 0 || self.ff == 0 {
            return Err(Error::Config("model dims must be positive".into()));
        }
        if self.d_model % self.heads != 0 {
            return Err(Error::Config(format!(
                "d_model ({}) must be divisible by heads ({})",
                self.d_model, self.heads
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ModelKind {
    Labeller,
    Realizer,
}

/// All trainable tensors of one model, keyed by name in a stable insertion
/// order. Biases are stored as 1-row matrices so every tensor is 2-D.
#[derive(Debug, Clone)]
pub struct ParameterStore<F: Scalar> {
    pub dims: ModelDims,
    pub kind: ModelKind,
    tensors: IndexMap<String, Mat<F>>,
}

impl<F: Scalar> ParameterStore<F> {
    fn new(dims: ModelDims, kind: ModelKind) -> Self {
        ParameterStore {
            dims,
            kind,
            tensors: IndexMap::new(),
        }
    }

    pub fn insert(&mut self, name: &str, tensor: Mat<F>) {
        debug_assert!(!self.tensors.contains_key(name), "duplicate tensor {name}");
        self.tensors.insert(name.to_string(), tensor);
    }

    pub fn get(&self, name: &str) -> &Mat<F> {
        self.tensors
            .get(name)
            .unwrap_or_else(|| panic!("missing tensor {name}"))
    }

    pub fn get_mut(&mut self, name: &str) -> &mut Mat<F> {
        self.tensors
            .get_mut(name)
            .unwrap_or_else(|| panic!("missing tensor {name}"))
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Mat<F>)> {
        self.tensors.iter().map(|(k, v)| (k.as_str(), v))
    }

    pub fn tensor_count(&self) -> usize {
        self.tensors.len()
    }

    pub fn total_parameters(&self) -> usize {
        self.tensors.values().map(|t| t.len()).sum()
    }

    pub fn all_finite(&self) -> bool {
        self.tensors.values().all(|t| t.iter().all(|v| v.is_finite()))
    }

    /// Converts every tensor elementwise; used to move between the f32
    /// training representation and the f64 checking representation.
    pub fn cast<G: Scalar>(&self) -> ParameterStore<G> {
        let mut out = ParameterStore::new(self.dims, self.kind);
        for (name, t) in &self.tensors {
            out.insert(name, t.mapv(|v| G::from_f64(v.to_f64())));
        }
        out
    }
}

/// Gradient accumulator shaped like a parameter store.
#[derive(Debug, Clone)]
pub struct Gradients<F: Scalar> {
    tensors: IndexMap<String, Mat<F>>,
}

impl<F: Scalar> Gradients<F> {
    pub fn zeros_like(store: &ParameterStore<F>) -> Self {
        Gradients {
            tensors: store
                .tensors
                .iter()
                .map(|(k, v)| (k.clone(), Mat::zeros(v.raw_dim())))
                .collect(),
        }
    }

    pub fn get(&self, name: &str) -> &Mat<F> {
        self.tensors
            .get(name)
            .unwrap_or_else(|| panic!("missing gradient {name}"))
    }

    pub fn get_mut(&mut self, name: &str) -> &mut Mat<F> {
        self.tensors
            .get_mut(name)
            .unwrap_or_else(|| panic!("missing gradient {name}"))
    }

    /// Adds `delta` into the named slot.
    pub fn add(&mut self, name: &str, delta: &Mat<F>) {
        let slot = self.get_mut(name);
        debug_assert_eq!(slot.raw_dim(), delta.raw_dim(), "gradient shape for {name}");
        *slot += delta;
    }

    /// Scales every gradient, e.g. by 1/batch_size.
    pub fn scale(&mut self, factor: F) {
        for t in self.tensors.values_mut() {
            t.mapv_inplace(|v| v * factor);
        }
    }

    /// Accumulates another gradient set (shapes must match).
    pub fn merge(&mut self, other: &Gradients<F>) {
        for (name, t) in &other.tensors {
            self.add(name, t);
        }
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Mat<F>)> {
        self.tensors.iter().map(|(k, v)| (k.as_str(), v))
    }

    pub fn all_finite(&self) -> bool {
        self.tensors.values().all(|t| t.iter().all(|v| v.is_finite()))
    }
}

/// Uniform init in [-1/sqrt(d_model), 1/sqrt(d_model)], reproducible for a
/// fixed seed; biases start at zero and norm gains at one.
struct Init<F: Scalar> {
    rng: ChaCha8Rng,
    bound: f64,
    _marker: std::marker::PhantomData<F>,
}

impl<F: Scalar> Init<F> {
    fn new(seed: u64, d_model: usize) -> Self {
        Init {
            rng: ChaCha8Rng::seed_from_u64(seed),
            bound: 1.0 / (d_model as f64).sqrt(),
            _marker: std::marker::PhantomData,
        }
    }

    fn weight(&mut self, store: &mut ParameterStore<F>, name: &str, rows: usize, cols: usize) {
        let bound = self.bound;
        let t = Mat::from_shape_fn((rows, cols), |_| {
            F::from_f64((self.rng.random::<f64>() * 2.0 - 1.0) * bound)
        });
        store.insert(name, t);
    }

    fn zeros(&mut self, store: &mut ParameterStore<F>, name: &str, rows: usize, cols: usize) {
        store.insert(name, Mat::zeros((rows, cols)));
    }

    fn ones(&mut self, store: &mut ParameterStore<F>, name: &str, rows: usize, cols: usize) {
        store.insert(name, Mat::from_elem((rows, cols), F::one()));
    }

    fn attention(&mut self, store: &mut ParameterStore<F>, prefix: &str, d: usize) {
        for p in ["wq", "wk", "wv", "wo"] {
            self.weight(store, &format!("{prefix}.{p}"), d, d);
        }
        for p in ["bq", "bk", "bv", "bo"] {
            self.zeros(store, &format!("{prefix}.{p}"), 1, d);
        }
    }

    fn norm(&mut self, store: &mut ParameterStore<F>, prefix: &str, d: usize) {
        self.ones(store, &format!("{prefix}.gain"), 1, d);
        self.zeros(store, &format!("{prefix}.bias"), 1, d);
    }

    fn feed_forward(&mut self, store: &mut ParameterStore<F>, prefix: &str, d: usize, ff: usize) {
        self.weight(store, &format!("{prefix}.w1"), d, ff);
        self.zeros(store, &format!("{prefix}.b1"), 1, ff);
        self.weight(store, &format!("{prefix}.w2"), ff, d);
        self.zeros(store, &format!("{prefix}.b2"), 1, d);
    }

    fn encoder_stack(&mut self, store: &mut ParameterStore<F>, layers: usize, d: usize, ff: usize) {
        for l in 0..layers {
            self.attention(store, &format!("enc{l}.attn"), d);
            self.norm(store, &format!("enc{l}.norm1"), d);
            self.feed_forward(store, &format!("enc{l}.ff"), d, ff);
            self.norm(store, &format!("enc{l}.norm2"), d);
        }
    }
}

/// Parameters for the hop labeller: embeddings, encoder stack, and the
/// 3-way classifier head.
pub fn labeller_params<F: Scalar>(dims: ModelDims, seed: u64) -> ParameterStore<F> {
    dims.validate().expect("valid dims");
    let mut store = ParameterStore::new(dims, ModelKind::Labeller);
    let mut init = Init::new(seed, dims.d_model);
    init.weight(&mut store, "embed", dims.vocab, dims.d_model);
    init.encoder_stack(&mut store, dims.enc_layers, dims.d_model, dims.ff);
    init.weight(&mut store, "cls.w", dims.d_model, 3);
    init.zeros(&mut store, "cls.b", 1, 3);
    store
}

/// Parameters for the sentence realizer: embeddings, encoder stack (used
/// without positional encoding), decoder stack, and the vocabulary
/// projection.
pub fn realizer_params<F: Scalar>(dims: ModelDims, seed: u64) -> ParameterStore<F> {
    dims.validate().expect("valid dims");
    let mut store = ParameterStore::new(dims, ModelKind::Realizer);
    let mut init = Init::new(seed, dims.d_model);
    init.weight(&mut store, "embed", dims.vocab, dims.d_model);
    init.encoder_stack(&mut store, dims.enc_layers, dims.d_model, dims.ff);
    for l in 0..dims.dec_layers {
        init.attention(&mut store, &format!("dec{l}.self"), dims.d_model);
        init.norm(&mut store, &format!("dec{l}.norm1"), dims.d_model);
        init.attention(&mut store, &format!("dec{l}.cross"), dims.d_model);
        init.norm(&mut store, &format!("dec{l}.norm2"), dims.d_model);
        init.feed_forward(&mut store, &format!("dec{l}.ff"), dims.d_model, dims.ff);
        init.norm(&mut store, &format!("dec{l}.norm3"), dims.d_model);
    }
    init.weight(&mut store, "out.w", dims.d_model, dims.vocab);
    init.zeros(&mut store, "out.b", 1, dims.vocab);
    store
}
