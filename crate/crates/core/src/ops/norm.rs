//! Layer normalization over the last axis.

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::tensor::{debug_assert_finite, Scalar, Tensor};

/// Per-row (x - mean) / sqrt(var + eps) * gamma + beta with biased variance
/// (divide by D). Returns the output plus saved per-row mean and 1/std for
/// the backward pass.
pub fn layernorm<T: Scalar>(
    x: &Tensor<T>,
    gamma: &Tensor<T>,
    beta: &Tensor<T>,
    eps: T,
) -> Result<(Tensor<T>, Vec<T>, Vec<T>)> {
    if eps <= T::zero() {
        return Err(Error::Contract("layernorm eps must be > 0".into()));
    }
    let shape = x.shape();
    let dim = *shape.last().unwrap();
    if gamma.shape() != [dim] || beta.shape() != [dim] {
        return Err(Error::Dim(format!(
            "layernorm gamma/beta must be [{dim}], got {:?} and {:?}",
            gamma.shape(),
            beta.shape()
        )));
    }
    let rows = x.numel() / dim;
    let xd = x.data();
    let gd = gamma.data();
    let bd = beta.data();
    let inv_dim = T::one() / T::of_f64(dim as f64);

    let mut out = vec![T::zero(); x.numel()];
    let mut mean = vec![T::zero(); rows];
    let mut rstd = vec![T::zero(); rows];

    out.par_chunks_mut(dim)
        .zip(mean.par_iter_mut().zip(rstd.par_iter_mut()))
        .enumerate()
        .for_each(|(r, (y_row, (mu, rs)))| {
            let x_row = &xd[r * dim..(r + 1) * dim];
            let mut m = T::zero();
            for &v in x_row {
                m += v;
            }
            m *= inv_dim;
            let mut var = T::zero();
            for &v in x_row {
                let d = v - m;
                var += d * d;
            }
            var *= inv_dim;
            let r_inv = T::one() / (var + eps).sqrt();
            for j in 0..dim {
                y_row[j] = (x_row[j] - m) * r_inv * gd[j] + bd[j];
            }
            *mu = m;
            *rs = r_inv;
        });

    let t = Tensor::new(shape, out);
    debug_assert_finite(&t, "layernorm");
    Ok((t, mean, rstd))
}

/// Returns (d_x, d_gamma, d_beta).
pub fn layernorm_backward<T: Scalar>(
    x: &Tensor<T>,
    gamma: &Tensor<T>,
    mean: &[T],
    rstd: &[T],
    d_out: &Tensor<T>,
) -> (Tensor<T>, Tensor<T>, Tensor<T>) {
    let shape = x.shape();
    let dim = *shape.last().unwrap();
    let rows = x.numel() / dim;
    let xd = x.data();
    let gd = gamma.data();
    let od = d_out.data();
    let inv_dim = T::one() / T::of_f64(dim as f64);

    let mut dx = vec![T::zero(); x.numel()];
    dx.par_chunks_mut(dim).enumerate().for_each(|(r, dx_row)| {
        let x_row = &xd[r * dim..(r + 1) * dim];
        let g_row = &od[r * dim..(r + 1) * dim];
        let mu = mean[r];
        let rs = rstd[r];
        // dxhat = g * gamma; dx = rs * (dxhat - mean(dxhat) - xhat * mean(dxhat * xhat))
        let mut m1 = T::zero();
        let mut m2 = T::zero();
        for j in 0..dim {
            let xhat = (x_row[j] - mu) * rs;
            let dxhat = g_row[j] * gd[j];
            m1 += dxhat;
            m2 += dxhat * xhat;
        }
        m1 *= inv_dim;
        m2 *= inv_dim;
        for j in 0..dim {
            let xhat = (x_row[j] - mu) * rs;
            let dxhat = g_row[j] * gd[j];
            dx_row[j] = rs * (dxhat - m1 - xhat * m2);
        }
    });

    // Parameter grads accumulate serially over rows, in row order.
    let mut dg = vec![T::zero(); dim];
    let mut db = vec![T::zero(); dim];
    for r in 0..rows {
        let mu = mean[r];
        let rs = rstd[r];
        for j in 0..dim {
            let xhat = (xd[r * dim + j] - mu) * rs;
            let g = od[r * dim + j];
            dg[j] += g * xhat;
            db[j] += g;
        }
    }

    (
        Tensor::new(shape, dx),
        Tensor::new(&[dim], dg),
        Tensor::new(&[dim], db),
    )
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn constant_row_maps_to_beta() {
        let x = Tensor::full(&[2, 4], 3.0f64);
        let g = Tensor::full(&[4], 1.0);
        let b = Tensor::zeros(&[4]);
        let (y, _, _) = layernorm(&x, &g, &b, 1e-5).unwrap();
        assert!(y.data().iter().all(|&v| v.abs() < 1e-9));
    }

    #[test]
    fn two_element_row_standardizes() {
        let x = Tensor::new(&[1, 2], vec![1.0f64, 3.0]);
        let g = Tensor::full(&[2], 1.0);
        let b = Tensor::zeros(&[2]);
        let (y, _, _) = layernorm(&x, &g, &b, 1e-12).unwrap();
        assert!((y.data()[0] + 1.0).abs() < 1e-5);
        assert!((y.data()[1] - 1.0).abs() < 1e-5);
    }

    #[test]
    fn matches_direct_formula() {
        let dim = 7;
        let x = Tensor::from_fn(&[3, dim], |i| ((i * 31 + 7) % 23) as f64 * 0.21 - 2.0);
        let g = Tensor::from_fn(&[dim], |i| 0.5 + 0.1 * i as f64);
        let b = Tensor::from_fn(&[dim], |i| -0.3 + 0.05 * i as f64);
        let eps = 1e-5;
        let (y, _, _) = layernorm(&x, &g, &b, eps).unwrap();
        for r in 0..3 {
            let row: Vec<f64> = x.data()[r * dim..(r + 1) * dim].to_vec();
            let mean: f64 = row.iter().sum::<f64>() / dim as f64;
            let var: f64 = row.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / dim as f64;
            for j in 0..dim {
                let want = (row[j] - mean) / (var + eps).sqrt() * g.data()[j] + b.data()[j];
                let got = y.data()[r * dim + j];
                assert!((got - want).abs() <= 1e-12 * want.abs().max(1.0));
            }
        }
    }
}
