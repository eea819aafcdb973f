//! Primitive tensor operations with explicit backward passes.

use ndarray::{Array2, Axis};
use rand::Rng;
use rand_chacha::ChaCha8Rng;

use super::params::Mat;
use super::Scalar;
use crate::error::{Error, Result};

/// Layer-norm variance floor.
pub(crate) const LN_EPS: f64 = 1e-5;

pub(crate) fn linear_fwd<F: Scalar>(x: &Mat<F>, w: &Mat<F>, b: &Mat<F>) -> Mat<F> {
    x.dot(w) + b
}

/// Returns (dx, dw, db) for y = x·w + b.
pub(crate) fn linear_bwd<F: Scalar>(dy: &Mat<F>, x: &Mat<F>, w: &Mat<F>) -> (Mat<F>, Mat<F>, Mat<F>) {
    let dx = dy.dot(&w.t());
    let dw = x.t().dot(dy);
    let db = dy.sum_axis(Axis(0)).insert_axis(Axis(0));
    (dx, dw, db)
}

pub(crate) fn relu_fwd<F: Scalar>(x: &Mat<F>) -> Mat<F> {
    x.mapv(|v| if v > F::zero() { v } else { F::zero() })
}

pub(crate) fn relu_bwd<F: Scalar>(dy: &Mat<F>, x: &Mat<F>) -> Mat<F> {
    let mut dx = dy.clone();
    dx.zip_mut_with(x, |d, &v| {
        if v <= F::zero() {
            *d = F::zero();
        }
    });
    dx
}

/// Row-wise softmax, numerically stabilized by the row maximum.
pub fn softmax_rows<F: Scalar>(x: &Mat<F>) -> Mat<F> {
    let mut out = x.clone();
    for mut row in out.rows_mut() {
        let max = row.fold(F::neg_infinity(), |a, &b| if b > a { b } else { a });
        row.mapv_inplace(|v| (v - max).exp());
        let sum = row.sum();
        row.mapv_inplace(|v| v / sum);
    }
    out
}

/// Backward through a row-wise softmax given its output `y`:
/// dx = y ⊙ (dy − rowsum(dy ⊙ y)).
pub(crate) fn softmax_bwd<F: Scalar>(dy: &Mat<F>, y: &Mat<F>) -> Mat<F> {
    let inner = (dy * y).sum_axis(Axis(1)).insert_axis(Axis(1));
    y * &(dy - &inner)
}

pub(crate) struct NormCache<F: Scalar> {
    pub xhat: Mat<F>,
    /// 1/sqrt(var + eps) per row, kept as a column for broadcasting.
    pub inv_std: Mat<F>,
}

pub(crate) fn layer_norm_fwd<F: Scalar>(
    x: &Mat<F>,
    gain: &Mat<F>,
    bias: &Mat<F>,
) -> (Mat<F>, NormCache<F>) {
    let d = F::from_f64(x.ncols() as f64);
    let mean = x.sum_axis(Axis(1)).insert_axis(Axis(1)) / d;
    let centered = x - &mean;
    let var = centered.mapv(|v| v * v).sum_axis(Axis(1)).insert_axis(Axis(1)) / d;
    let inv_std = var.mapv(|v| (v + F::from_f64(LN_EPS)).sqrt().recip());
    let xhat = &centered * &inv_std;
    let y = &xhat * gain + bias;
    (y, NormCache { xhat, inv_std })
}

/// Returns (dx, dgain, dbias).
pub(crate) fn layer_norm_bwd<F: Scalar>(
    dy: &Mat<F>,
    cache: &NormCache<F>,
    gain: &Mat<F>,
) -> (Mat<F>, Mat<F>, Mat<F>) {
    let d = F::from_f64(dy.ncols() as f64);
    let dgain = (dy * &cache.xhat).sum_axis(Axis(0)).insert_axis(Axis(0));
    let dbias = dy.sum_axis(Axis(0)).insert_axis(Axis(0));
    let dxhat = dy * gain;
    let mean_dxhat = dxhat.sum_axis(Axis(1)).insert_axis(Axis(1)) / d;
    let mean_dxhat_xhat = (&dxhat * &cache.xhat).sum_axis(Axis(1)).insert_axis(Axis(1)) / d;
    let dx = (&dxhat - &mean_dxhat - &(&cache.xhat * &mean_dxhat_xhat)) * &cache.inv_std;
    (dx, dgain, dbias)
}

/// Inverted dropout: surviving entries are scaled by 1/keep so evaluation
/// needs no rescaling. Returns the dropped output and the mask.
pub(crate) fn dropout_fwd<F: Scalar>(x: &Mat<F>, p: f64, rng: &mut ChaCha8Rng) -> (Mat<F>, Mat<F>) {
    let keep = 1.0 - p;
    let mask = Mat::from_shape_fn(x.raw_dim(), |_| {
        if rng.random::<f64>() < keep {
            F::from_f64(1.0 / keep)
        } else {
            F::zero()
        }
    });
    (x * &mask, mask)
}

pub(crate) fn dropout_bwd<F: Scalar>(dy: &Mat<F>, mask: &Mat<F>) -> Mat<F> {
    dy * mask
}

/// Fixed sinusoidal positional encoding: even columns sine, odd columns
/// cosine, wavelengths geometric in 10000^(2i/d).
pub fn sinusoidal_encoding<F: Scalar>(len: usize, d: usize) -> Mat<F> {
    Array2::from_shape_fn((len, d), |(pos, j)| {
        let i = (j / 2) as f64;
        let angle = pos as f64 / 10000f64.powf(2.0 * i / d as f64);
        F::from_f64(if j % 2 == 0 { angle.sin() } else { angle.cos() })
    })
}

/// Gathers embedding rows for a token id sequence.
pub(crate) fn embed_fwd<F: Scalar>(ids: &[u32], table: &Mat<F>) -> Result<Mat<F>> {
    let mut out = Mat::zeros((ids.len(), table.ncols()));
    for (i, &id) in ids.iter().enumerate() {
        if id as usize >= table.nrows() {
            return Err(Error::IdOutOfRange {
                id,
                size: table.nrows(),
            });
        }
        out.row_mut(i).assign(&table.row(id as usize));
    }
    Ok(out)
}

/// Scatter-adds sequence gradients back into the embedding table gradient.
pub(crate) fn embed_bwd<F: Scalar>(dy: &Mat<F>, ids: &[u32], dtable: &mut Mat<F>) {
    for (i, &id) in ids.iter().enumerate() {
        let mut row = dtable.row_mut(id as usize);
        row.zip_mut_with(&dy.row(i), |a, &b| *a = *a + b);
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    #[test]
    fn softmax_rows_sum_to_one() {
        let x = array![[1.0f64, 2.0, 3.0], [-5.0, 0.0, 5.0]];
        let y = softmax_rows(&x);
        for row in y.rows() {
            assert!((row.sum() - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn softmax_handles_neg_infinity_mask() {
        let x = array![[0.0f64, f64::NEG_INFINITY, 0.0]];
        let y = softmax_rows(&x);
        assert_eq!(y[[0, 1]], 0.0);
        assert!((y[[0, 0]] - 0.5).abs() < 1e-12);
    }

    #[test]
    fn layer_norm_rows_are_standardized() {
        let x = array![[1.0f64, 2.0, 3.0, 4.0]];
        let gain = Mat::from_elem((1, 4), 1.0);
        let bias = Mat::zeros((1, 4));
        let (y, _) = layer_norm_fwd(&x, &gain, &bias);
        assert!(y.sum().abs() < 1e-9);
        let var: f64 = y.iter().map(|v| v * v).sum::<f64>() / 4.0;
        assert!((var - 1.0).abs() < 1e-4);
    }

    #[test]
    fn linear_bwd_matches_finite_difference() {
        let x = array![[0.3f64, -0.7], [1.1, 0.2]];
        let w = array![[0.5f64, -0.2, 0.1], [0.8, 0.3, -0.4]];
        let b = Mat::zeros((1, 3));
        let dy = Mat::from_elem((2, 3), 1.0);
        let (_, dw, _) = linear_bwd(&dy, &x, &w);
        let h = 1e-6;
        for r in 0..2 {
            for c in 0..3 {
                let mut wp = w.clone();
                wp[[r, c]] += h;
                let mut wm = w.clone();
                wm[[r, c]] -= h;
                let lp = linear_fwd(&x, &wp, &b).sum();
                let lm = linear_fwd(&x, &wm, &b).sum();
                let numeric = (lp - lm) / (2.0 * h);
                assert!((numeric - dw[[r, c]]).abs() < 1e-6);
            }
        }
    }

    #[test]
    fn dropout_mask_is_scaled_and_deterministic() {
        use rand::SeedableRng;
        let x = Mat::from_elem((4, 4), 1.0f32);
        let mut rng1 = ChaCha8Rng::seed_from_u64(5);
        let mut rng2 = ChaCha8Rng::seed_from_u64(5);
        let (y1, m1) = dropout_fwd(&x, 0.5, &mut rng1);
        let (y2, _) = dropout_fwd(&x, 0.5, &mut rng2);
        assert_eq!(y1, y2);
        for v in m1.iter() {
            assert!(*v == 0.0 || (*v - 2.0).abs() < 1e-6);
        }
    }

    #[test]
    fn sinusoidal_first_position_alternates_zero_one() {
        let pe: Mat<f64> = sinusoidal_encoding(3, 4);
        assert_eq!(pe[[0, 0]], 0.0);
        assert_eq!(pe[[0, 1]], 1.0);
        assert_eq!(pe[[0, 2]], 0.0);
        assert_eq!(pe[[0, 3]], 1.0);
        assert!((pe[[1, 0]] - 1f64.sin()).abs() < 1e-12);
    }

    #[test]
    fn embedding_gather_and_scatter() {
        let table = array![[1.0f64, 2.0], [3.0, 4.0], [5.0, 6.0]];
        let x = embed_fwd(&[2, 0, 2], &table).unwrap();
        assert_eq!(x.row(0).to_vec(), vec![5.0, 6.0]);
        assert!(embed_fwd(&[3], &table).is_err());

        let mut dtable = Mat::zeros((3, 2));
        let dy = Mat::from_elem((3, 2), 1.0);
        embed_bwd(&dy, &[2, 0, 2], &mut dtable);
        assert_eq!(dtable[[2, 0]], 2.0);
        assert_eq!(dtable[[0, 0]], 1.0);
        assert_eq!(dtable[[1, 0]], 0.0);
    }
}
