//! Bias-corrected Adam.

use indexmap::IndexMap;

use super::params::{Gradients, Mat, ParameterStore};
use super::Scalar;
use crate::error::{Error, Result};

#[derive(Debug, Clone)]
pub struct AdamState<F: Scalar> {
    m: IndexMap<String, Mat<F>>,
    v: IndexMap<String, Mat<F>>,
    pub step: u64,
    pub lr: F,
    pub beta1: F,
    pub beta2: F,
    pub eps: F,
}

impl<F: Scalar> AdamState<F> {
    pub fn new(store: &ParameterStore<F>, lr: f64) -> Self {
        let zeros = |_: &Mat<F>| Mat::zeros((0, 0));
        let _ = zeros;
        let m: IndexMap<String, Mat<F>> = store
            .iter()
            .map(|(k, t)| (k.to_string(), Mat::zeros(t.raw_dim())))
            .collect();
        let v = m.clone();
        AdamState {
            m,
            v,
            step: 0,
            lr: F::from_f64(lr),
            beta1: F::from_f64(0.9),
            beta2: F::from_f64(0.999),
            eps: F::from_f64(1e-8),
        }
    }
}

/// One Adam update over every tensor in the store. Non-finite gradients are
/// an error; zero gradients leave parameters bit-identical.
pub fn adam_step<F: Scalar>(
    store: &mut ParameterStore<F>,
    grads: &Gradients<F>,
    state: &mut AdamState<F>,
) -> Result<()> {
    if !grads.all_finite() {
        return Err(Error::NonFinite("gradients"));
    }
    state.step += 1;
    let t = state.step as i32;
    let one = F::one();
    let bc1 = one - state.beta1.powi(t);
    let bc2 = one - state.beta2.powi(t);

    let names: Vec<String> = store.iter().map(|(k, _)| k.to_string()).collect();
    for name in names {
        let g = grads.get(&name);
        let m = state.m.get_mut(&name).expect("adam slot");
        let v = state.v.get_mut(&name).expect("adam slot");
        m.zip_mut_with(g, |m, &g| *m = state.beta1 * *m + (one - state.beta1) * g);
        v.zip_mut_with(g, |v, &g| *v = state.beta2 * *v + (one - state.beta2) * g * g);
        let theta = store.get_mut(&name);
        ndarray::Zip::from(&mut *theta)
            .and(&*m)
            .and(&*v)
            .for_each(|t, &m, &v| {
                let m_hat = m / bc1;
                let v_hat = v / bc2;
                *t = *t - state.lr * m_hat / (v_hat.sqrt() + state.eps);
            });
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::neural::params::{labeller_params, ModelDims};

    fn tiny_dims() -> ModelDims {
        ModelDims {
            vocab: 8,
            d_model: 4,
            heads: 2,
            ff: 8,
            enc_layers: 1,
            dec_layers: 1,
        }
    }

    #[test]
    fn zero_gradients_leave_parameters_unchanged() {
        let mut store = labeller_params::<f64>(tiny_dims(), 9);
        let before = store.get("embed").clone();
        let grads = Gradients::zeros_like(&store);
        let mut adam = AdamState::new(&store, 0.001);
        adam_step(&mut store, &grads, &mut adam).unwrap();
        assert_eq!(store.get("embed"), &before);
    }

    #[test]
    fn first_step_with_unit_gradient_matches_hand_computation() {
        // m_hat = v_hat = 1 at step 1, so the update is lr / (1 + eps).
        let mut store = labeller_params::<f64>(tiny_dims(), 9);
        let theta0 = store.get("cls.b")[[0, 0]];
        let mut grads = Gradients::zeros_like(&store);
        grads.get_mut("cls.b")[[0, 0]] = 1.0;
        let mut adam = AdamState::new(&store, 0.001);
        adam_step(&mut store, &grads, &mut adam).unwrap();
        let got = store.get("cls.b")[[0, 0]] - theta0;
        let want = -0.001 * (1.0 / (1.0 + 1e-8));
        assert!((got - want).abs() < 1e-15, "got {got}, want {want}");
        assert!((got - (-0.000999999)).abs() < 1e-9);
    }

    #[test]
    fn identical_runs_are_bit_identical() {
        let run = || {
            let mut store = labeller_params::<f32>(tiny_dims(), 1);
            let mut adam = AdamState::new(&store, 0.01);
            for step in 0..5 {
                let mut grads = Gradients::zeros_like(&store);
                grads
                    .get_mut("embed")
                    .mapv_inplace(|_| (step as f32 + 1.0) * 0.1);
                adam_step(&mut store, &grads, &mut adam).unwrap();
            }
            store.get("embed").clone()
        };
        let a = run();
        let b = run();
        for (x, y) in a.iter().zip(b.iter()) {
            assert_eq!(x.to_bits(), y.to_bits());
        }
    }

    #[test]
    fn non_finite_gradient_is_an_error() {
        let mut store = labeller_params::<f64>(tiny_dims(), 9);
        let mut grads = Gradients::zeros_like(&store);
        grads.get_mut("cls.w")[[0, 0]] = f64::NAN;
        let mut adam = AdamState::new(&store, 0.001);
        assert!(adam_step(&mut store, &grads, &mut adam).is_err());
    }
}
