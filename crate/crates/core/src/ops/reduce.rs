//! Element-wise arithmetic, axis reductions, and the training loss.

use crate::error::{Error, Result};
use crate::tensor::{Scalar, Tensor};

use super::sigmoid;

pub fn add<T: Scalar>(a: &Tensor<T>, b: &Tensor<T>) -> Result<Tensor<T>> {
    if a.shape() != b.shape() {
        return Err(Error::Dim(format!(
            "add wants equal shapes, got {:?} and {:?}",
            a.shape(),
            b.shape()
        )));
    }
    Ok(Tensor::new(
        a.shape(),
        a.data().iter().zip(b.data()).map(|(&x, &y)| x + y).collect(),
    ))
}

pub fn scale<T: Scalar>(x: &Tensor<T>, alpha: T) -> Tensor<T> {
    x.map(|v| v * alpha)
}

/// Mean over a set of axes (sorted, unique). The reduced shape keeps the
/// remaining axes; reducing everything yields shape [1].
pub fn mean_axes<T: Scalar>(x: &Tensor<T>, axes: &[usize]) -> Result<Tensor<T>> {
    let shape = x.shape();
    for &a in axes {
        if a >= shape.len() {
            return Err(Error::Contract(format!(
                "mean axis {a} out of range for shape {shape:?}"
            )));
        }
    }
    let reduce: Vec<bool> = (0..shape.len()).map(|a| axes.contains(&a)).collect();
    let out_shape: Vec<usize> = shape
        .iter()
        .zip(&reduce)
        .filter(|(_, &r)| !r)
        .map(|(&e, _)| e)
        .collect();
    let out_shape = if out_shape.is_empty() { vec![1] } else { out_shape };
    let count: usize = shape
        .iter()
        .zip(&reduce)
        .filter(|(_, &r)| r)
        .map(|(&e, _)| e)
        .product();
    let inv = T::one() / T::of_f64(count as f64);

    let in_strides = x.strides();
    let kept: Vec<usize> = (0..shape.len()).filter(|a| !reduce[*a]).collect();
    let out_strides = {
        let mut s = vec![1usize; kept.len().max(1)];
        for i in (0..kept.len().saturating_sub(1)).rev() {
            s[i] = s[i + 1] * shape[kept[i + 1]];
        }
        s
    };

    // Single pass over the input in storage order: accumulation order per
    // output element is fixed.
    let mut out = vec![T::zero(); out_shape.iter().product()];
    let rank = shape.len();
    let mut idx = vec![0usize; rank];
    let mut out_idx = 0usize;
    let out_stride_by_axis: Vec<usize> = (0..rank)
        .map(|a| {
            if reduce[a] {
                0
            } else {
                let pos = kept.iter().position(|&k| k == a).unwrap();
                out_strides[pos]
            }
        })
        .collect();
    for &v in x.data() {
        out[out_idx] += v;
        for a in (0..rank).rev() {
            idx[a] += 1;
            out_idx += out_stride_by_axis[a];
            if idx[a] < shape[a] {
                break;
            }
            out_idx -= out_stride_by_axis[a] * shape[a];
            idx[a] = 0;
        }
    }
    let _ = in_strides;
    for v in out.iter_mut() {
        *v *= inv;
    }
    Ok(Tensor::new(&out_shape, out))
}

/// Broadcast `d_out / count` back over the reduced axes.
pub fn mean_axes_backward<T: Scalar>(
    input_shape: &[usize],
    axes: &[usize],
    d_out: &Tensor<T>,
) -> Tensor<T> {
    let reduce: Vec<bool> = (0..input_shape.len()).map(|a| axes.contains(&a)).collect();
    let count: usize = input_shape
        .iter()
        .zip(&reduce)
        .filter(|(_, &r)| r)
        .map(|(&e, _)| e)
        .product();
    let inv = T::one() / T::of_f64(count as f64);
    let g = d_out.data();

    let rank = input_shape.len();
    let kept: Vec<usize> = (0..rank).filter(|a| !reduce[*a]).collect();
    let mut out_strides = vec![1usize; kept.len().max(1)];
    for i in (0..kept.len().saturating_sub(1)).rev() {
        out_strides[i] = out_strides[i + 1] * input_shape[kept[i + 1]];
    }
    let out_stride_by_axis: Vec<usize> = (0..rank)
        .map(|a| {
            if reduce[a] {
                0
            } else {
                let pos = kept.iter().position(|&k| k == a).unwrap();
                out_strides[pos]
            }
        })
        .collect();

    let numel: usize = input_shape.iter().product();
    let mut dx = vec![T::zero(); numel];
    let mut idx = vec![0usize; rank];
    let mut out_idx = 0usize;
    for slot in dx.iter_mut() {
        *slot = g[out_idx] * inv;
        for a in (0..rank).rev() {
            idx[a] += 1;
            out_idx += out_stride_by_axis[a];
            if idx[a] < input_shape[a] {
                break;
            }
            out_idx -= out_stride_by_axis[a] * input_shape[a];
            idx[a] = 0;
        }
    }
    Tensor::new(input_shape, dx)
}

/// Stable binary cross-entropy with logits, averaged over the batch:
/// max(z,0) - z*y + log(1 + exp(-|z|)).
pub fn bce_with_logits<T: Scalar>(logits: &Tensor<T>, labels: &[T]) -> Result<Tensor<T>> {
    if logits.numel() != labels.len() {
        return Err(Error::Dim(format!(
            "bce: {} logits vs {} labels",
            logits.numel(),
            labels.len()
        )));
    }
    for &y in labels {
        if y != T::zero() && y != T::one() {
            return Err(Error::Contract("bce labels must be 0 or 1".into()));
        }
    }
    let n = T::of_f64(labels.len() as f64);
    let mut acc = T::zero();
    for (&z, &y) in logits.data().iter().zip(labels) {
        let pos = if z > T::zero() { z } else { T::zero() };
        acc += pos - z * y + (T::one() + (-z.abs()).exp()).ln();
    }
    Ok(Tensor::scalar(acc / n))
}

/// d_z = (sigmoid(z) - y) * g / n
pub fn bce_with_logits_backward<T: Scalar>(
    logits: &Tensor<T>,
    labels: &[T],
    d_out: T,
) -> Tensor<T> {
    let n = T::of_f64(labels.len() as f64);
    let s = d_out / n;
    Tensor::new(
        logits.shape(),
        logits
            .data()
            .iter()
            .zip(labels)
            .map(|(&z, &y)| (sigmoid(z) - y) * s)
            .collect(),
    )
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn bce_at_zero_logit_is_ln2() {
        let z = Tensor::scalar(0.0f64);
        let l = bce_with_logits(&z, &[1.0]).unwrap();
        assert!((l.data()[0] - std::f64::consts::LN_2).abs() < 1e-12);
    }

    #[test]
    fn bce_extreme_logit_stays_finite() {
        let z = Tensor::scalar(-1000.0f64);
        let l = bce_with_logits(&z, &[0.0]).unwrap();
        assert!(l.data()[0].is_finite());
        assert!(l.data()[0].abs() < 1e-12);
    }

    #[test]
    fn bce_matches_direct_formula() {
        let zs = [-3.7, -0.2, 0.9, 4.4];
        let ys = [1.0, 0.0, 1.0, 0.0];
        let l = bce_with_logits(&Tensor::new(&[4], zs.to_vec()), &ys).unwrap();
        let direct: f64 = zs
            .iter()
            .zip(&ys)
            .map(|(&z, &y): (&f64, &f64)| {
                let s = 1.0 / (1.0 + (-z).exp());
                -(y * s.ln() + (1.0 - y) * (1.0 - s).ln())
            })
            .sum::<f64>()
            / 4.0;
        assert!((l.data()[0] - direct).abs() <= 1e-10 * direct.abs().max(1.0));
    }

    #[test]
    fn mean_axes_global() {
        let x = Tensor::from_fn(&[2, 3], |i| i as f64);
        let m = mean_axes(&x, &[0, 1]).unwrap();
        assert_eq!(m.shape(), &[1]);
        assert!((m.data()[0] - 2.5).abs() < 1e-15);
    }

    #[test]
    fn mean_axes_keeps_remaining_axes() {
        let x = Tensor::from_fn(&[2, 2, 3], |i| i as f64);
        // mean over middle axis: out[b, w] = (x[b,0,w] + x[b,1,w]) / 2
        let m = mean_axes(&x, &[1]).unwrap();
        assert_eq!(m.shape(), &[2, 3]);
        assert_eq!(m.data()[0], (0.0 + 3.0) / 2.0);
        assert_eq!(m.data()[5], (8.0 + 11.0) / 2.0);
    }

    #[test]
    fn mean_backward_spreads_evenly() {
        let g = Tensor::scalar(6.0f64);
        let dx = mean_axes_backward(&[2, 3], &[0, 1], &g);
        assert!(dx.data().iter().all(|&v| (v - 1.0).abs() < 1e-15));
    }
}
