//! Central finite-difference verification of analytic gradients.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::params::{Gradients, ParameterStore};

#[derive(Debug, Clone)]
pub struct GradCheckReport {
    pub max_rel_error: f64,
    pub coords_checked: usize,
    /// Name and flat offset of the worst coordinate, for diagnostics.
    pub worst: Option<(String, usize)>,
}

const STEP: f64 = 1e-5;
/// Relative-error denominator floor; keeps coordinates whose true gradient
/// is ~0 from amplifying round-off into spurious failures.
const DENOM_FLOOR: f64 = 1e-6;

/// Samples `sample_count` parameter coordinates, perturbs each by ±`STEP`,
/// and compares the central difference of `loss_fn` against the analytic
/// gradient it reports. `loss_fn` must be deterministic.
pub fn finite_difference_check<L>(
    loss_fn: L,
    params: &mut ParameterStore<f64>,
    sample_count: usize,
    seed: u64,
) -> GradCheckReport
where
    L: Fn(&ParameterStore<f64>) -> (f64, Gradients<f64>),
{
    let (_, analytic) = loss_fn(params);

    let shapes: Vec<(String, usize)> = params
        .iter()
        .map(|(name, t)| (name.to_string(), t.len()))
        .collect();
    let total: usize = shapes.iter().map(|(_, n)| n).sum();

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut max_rel_error = 0.0f64;
    let mut worst = None;

    for _ in 0..sample_count {
        let flat = rng.random_range(0..total);
        let (name, offset) = locate(&shapes, flat);

        let original = tensor_get(params, &name, offset);
        tensor_set(params, &name, offset, original + STEP);
        let (loss_plus, _) = loss_fn(params);
        tensor_set(params, &name, offset, original - STEP);
        let (loss_minus, _) = loss_fn(params);
        tensor_set(params, &name, offset, original);

        let numeric = (loss_plus - loss_minus) / (2.0 * STEP);
        let a = {
            let t = analytic.get(&name);
            t.as_slice().expect("standard layout")[offset]
        };
        let rel = (a - numeric).abs() / a.abs().max(numeric.abs()).max(DENOM_FLOOR);
        if rel > max_rel_error {
            max_rel_error = rel;
            worst = Some((name.clone(), offset));
        }
    }

    GradCheckReport {
        max_rel_error,
        coords_checked: sample_count,
        worst,
    }
}

fn locate(shapes: &[(String, usize)], mut flat: usize) -> (String, usize) {
    for (name, n) in shapes {
        if flat < *n {
            return (name.clone(), flat);
        }
        flat -= n;
    }
    unreachable!("flat index within total parameter count")
}

fn tensor_get(params: &ParameterStore<f64>, name: &str, offset: usize) -> f64 {
    params.get(name).as_slice().expect("standard layout")[offset]
}

fn tensor_set(params: &mut ParameterStore<f64>, name: &str, offset: usize, value: f64) {
    params.get_mut(name).as_slice_mut().expect("standard layout")[offset] = value;
}
