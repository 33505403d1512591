//! Weight initialization schemes.

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use super::tensor::Tensor;
use crate::error::{Error, Result};

/// Random matrix whose smaller-dimension factor is orthonormal: rows are
/// orthonormal when rows ≤ cols, columns otherwise. Gaussian start followed
/// by two rounds of modified Gram-Schmidt.
pub fn init_orthonormal(shape: &[usize], rng: &mut ChaCha8Rng) -> Result<Tensor> {
    if shape.len() != 2 {
        return Err(Error::BadShape {
            what: "init_orthonormal",
            details: format!("requires a 2-D shape, got {shape:?}"),
        });
    }
    let (rows, cols) = (shape[0], shape[1]);
    let by_rows = rows <= cols;
    let (nvec, dim) = if by_rows { (rows, cols) } else { (cols, rows) };

    // Work on `nvec` vectors of length `dim`, stored contiguously.
    let mut v: Vec<f64> = (0..nvec * dim).map(|_| rng.sample(StandardNormal)).collect();
    for _round in 0..2 {
        for i in 0..nvec {
            for j in 0..i {
                let dot: f64 = (0..dim).map(|k| v[i * dim + k] * v[j * dim + k]).sum();
                for k in 0..dim {
                    v[i * dim + k] -= dot * v[j * dim + k];
                }
            }
            let norm: f64 = (0..dim)
                .map(|k| v[i * dim + k] * v[i * dim + k])
                .sum::<f64>()
                .sqrt();
            for k in 0..dim {
                v[i * dim + k] /= norm;
            }
        }
    }

    let mut data = vec![0.0; rows * cols];
    if by_rows {
        data.copy_from_slice(&v);
    } else {
        for j in 0..nvec {
            for k in 0..dim {
                data[k * cols + j] = v[j * dim + k];
            }
        }
    }
    Tensor::from_vec(shape, data)
}

/// Uniform in ±√(6 / (fan_in + fan_out)) with fan_in = cols, fan_out = rows.
pub fn init_glorot(shape: &[usize], rng: &mut ChaCha8Rng) -> Result<Tensor> {
    if shape.len() != 2 {
        return Err(Error::BadShape {
            what: "init_glorot",
            details: format!("requires a 2-D shape, got {shape:?}"),
        });
    }
    let (rows, cols) = (shape[0], shape[1]);
    let bound = (6.0 / (rows + cols) as f64).sqrt();
    let data = (0..rows * cols)
        .map(|_| rng.gen_range(-bound..bound))
        .collect();
    Tensor::from_vec(shape, data)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;

    fn max_abs_dev_from_identity(m: &Tensor) -> f64 {
        // Gram matrix of the smaller dimension's vectors.
        let (rows, cols) = (m.shape()[0], m.shape()[1]);
        let by_rows = rows <= cols;
        let (nvec, dim) = if by_rows { (rows, cols) } else { (cols, rows) };
        let at = |i: usize, k: usize| {
            if by_rows {
                m.data()[i * cols + k]
            } else {
                m.data()[k * cols + i]
            }
        };
        let mut worst: f64 = 0.0;
        for i in 0..nvec {
            for j in 0..nvec {
                let dot: f64 = (0..dim).map(|k| at(i, k) * at(j, k)).sum();
                let want = if i == j { 1.0 } else { 0.0 };
                worst = worst.max((dot - want).abs());
            }
        }
        worst
    }

    #[test]
    fn orthonormal_square_gram_is_identity() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let m = init_orthonormal(&[100, 100], &mut rng).unwrap();
        assert!(max_abs_dev_from_identity(&m) < 1e-8);
    }

    #[test]
    fn orthonormal_rectangular_both_orientations() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let wide = init_orthonormal(&[8, 32], &mut rng).unwrap();
        assert!(max_abs_dev_from_identity(&wide) < 1e-10);
        let tall = init_orthonormal(&[32, 8], &mut rng).unwrap();
        assert!(max_abs_dev_from_identity(&tall) < 1e-10);
    }

    #[test]
    fn orthonormal_rejects_vectors() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        assert!(init_orthonormal(&[5], &mut rng).is_err());
    }

    #[test]
    fn glorot_respects_bounds() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let m = init_glorot(&[25, 40], &mut rng).unwrap();
        let bound = (6.0 / 65.0_f64).sqrt();
        assert!(m.data().iter().all(|v| v.abs() < bound));
        // and actually spreads out rather than collapsing near zero
        assert!(m.data().iter().any(|v| v.abs() > bound / 2.0));
    }

    #[test]
    fn same_seed_same_tensor() {
        let a = init_glorot(&[7, 9], &mut ChaCha8Rng::seed_from_u64(5)).unwrap();
        let b = init_glorot(&[7, 9], &mut ChaCha8Rng::seed_from_u64(5)).unwrap();
        assert_eq!(a, b);
        let c = init_orthonormal(&[7, 9], &mut ChaCha8Rng::seed_from_u64(6)).unwrap();
        let d = init_orthonormal(&[7, 9], &mut ChaCha8Rng::seed_from_u64(6)).unwrap();
        assert_eq!(c, d);
    }
}
