//! Element-wise nonlinearities and softmax.

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::tensor::{debug_assert_finite, Scalar, Tensor};

pub fn relu<T: Scalar>(x: &Tensor<T>) -> Tensor<T> {
    x.map(|v| if v > T::zero() { v } else { T::zero() })
}

/// Subgradient convention: zero at the origin.
pub fn relu_backward<T: Scalar>(x: &Tensor<T>, d_out: &Tensor<T>) -> Tensor<T> {
    Tensor::new(
        x.shape(),
        x.data()
            .iter()
            .zip(d_out.data())
            .map(|(&xi, &g)| if xi > T::zero() { g } else { T::zero() })
            .collect(),
    )
}

fn gelu_scalar<T: Scalar>(x: T) -> T {
    // tanh form: 0.5 x (1 + tanh(sqrt(2/pi) (x + 0.044715 x^3)))
    let c = T::of_f64(0.7978845608028654);
    let a = T::of_f64(0.044715);
    let half = T::of_f64(0.5);
    half * x * (T::one() + (c * (x + a * x * x * x)).tanh())
}

pub fn gelu<T: Scalar>(x: &Tensor<T>) -> Tensor<T> {
    let y = x.map(gelu_scalar);
    debug_assert_finite(&y, "gelu");
    y
}

pub fn gelu_backward<T: Scalar>(x: &Tensor<T>, d_out: &Tensor<T>) -> Tensor<T> {
    let c = T::of_f64(0.7978845608028654);
    let a = T::of_f64(0.044715);
    let half = T::of_f64(0.5);
    let three = T::of_f64(3.0);
    Tensor::new(
        x.shape(),
        x.data()
            .iter()
            .zip(d_out.data())
            .map(|(&xi, &g)| {
                let u = c * (xi + a * xi * xi * xi);
                let t = u.tanh();
                let du = c * (T::one() + three * a * xi * xi);
                let d = half * (T::one() + t) + half * xi * (T::one() - t * t) * du;
                g * d
            })
            .collect(),
    )
}

/// Numerically stable softmax along `axis` (row-wise max subtraction).
pub fn softmax<T: Scalar>(x: &Tensor<T>, axis: usize) -> Result<Tensor<T>> {
    let shape = x.shape();
    if axis >= shape.len() {
        return Err(Error::Contract(format!(
            "softmax axis {axis} out of range for shape {shape:?}"
        )));
    }
    let extent = shape[axis];
    let inner: usize = shape[axis + 1..].iter().product();
    let outer: usize = shape[..axis].iter().product();
    let xd = x.data();
    let mut out = vec![T::zero(); x.numel()];

    // Each (outer, inner) pair owns one independent row.
    out.par_chunks_mut(extent * inner).enumerate().for_each(|(o, chunk)| {
        for i in 0..inner {
            let base = o * extent * inner + i;
            let mut max = T::neg_infinity();
            for k in 0..extent {
                let v = xd[base + k * inner];
                if v > max {
                    max = v;
                }
            }
            let mut sum = T::zero();
            for k in 0..extent {
                let e = (xd[base + k * inner] - max).exp();
                chunk[i + k * inner] = e;
                sum += e;
            }
            let inv = T::one() / sum;
            for k in 0..extent {
                chunk[i + k * inner] *= inv;
            }
        }
    });
    let _ = outer;

    let t = Tensor::new(shape, out);
    debug_assert_finite(&t, "softmax");
    Ok(t)
}

/// dx = y * (g - sum_k g_k y_k) along the softmax axis.
pub fn softmax_backward<T: Scalar>(y: &Tensor<T>, axis: usize, d_out: &Tensor<T>) -> Tensor<T> {
    let shape = y.shape();
    let extent = shape[axis];
    let inner: usize = shape[axis + 1..].iter().product();
    let yd = y.data();
    let gd = d_out.data();
    let mut dx = vec![T::zero(); y.numel()];

    dx.par_chunks_mut(extent * inner).enumerate().for_each(|(o, chunk)| {
        for i in 0..inner {
            let base = o * extent * inner + i;
            let mut dotv = T::zero();
            for k in 0..extent {
                dotv += gd[base + k * inner] * yd[base + k * inner];
            }
            for k in 0..extent {
                let off = base + k * inner;
                chunk[i + k * inner] = yd[off] * (gd[off] - dotv);
            }
        }
    });

    Tensor::new(shape, dx)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn relu_clamps_negatives() {
        let x = Tensor::new(&[3], vec![-1.0f64, 0.0, 2.0]);
        assert_eq!(relu(&x).data(), &[0.0, 0.0, 2.0]);
        let all_neg = Tensor::new(&[3], vec![-5.0f64, -0.1, -2.0]);
        assert!(relu(&all_neg).data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn relu_subgradient_zero_at_origin() {
        let x = Tensor::new(&[2], vec![-1.0f64, 2.0]);
        let g = Tensor::full(&[2], 1.0);
        assert_eq!(relu_backward(&x, &g).data(), &[0.0, 1.0]);
        let origin = Tensor::new(&[1], vec![0.0f64]);
        let g1 = Tensor::full(&[1], 1.0);
        assert_eq!(relu_backward(&origin, &g1).data(), &[0.0]);
    }

    #[test]
    fn softmax_symmetric_pair() {
        let x = Tensor::new(&[2], vec![0.0f64, 0.0]);
        let y = softmax(&x, 0).unwrap();
        assert_eq!(y.data(), &[0.5, 0.5]);
    }

    #[test]
    fn softmax_no_overflow_on_large_logits() {
        let x = Tensor::new(&[2], vec![1000.0f32, 0.0]);
        let y = softmax(&x, 0).unwrap();
        assert!(y.is_finite());
        assert!(y.data()[0] > 0.999);
        assert!(y.data()[1] < 1e-6);
    }

    #[test]
    fn softmax_shift_invariant() {
        let x = Tensor::from_fn(&[5], |i| (i as f64) * 0.73 - 1.1);
        let shifted = x.map(|v| v + 17.3);
        let a = softmax(&x, 0).unwrap();
        let b = softmax(&shifted, 0).unwrap();
        for (p, q) in a.data().iter().zip(b.data()) {
            assert!((p - q).abs() < 1e-12);
        }
    }

    #[test]
    fn softmax_rows_sum_to_one_middle_axis() {
        let x = Tensor::from_fn(&[2, 4, 3], |i| ((i * 13 + 5) % 17) as f64 * 0.4 - 2.0);
        let y = softmax(&x, 1).unwrap();
        for o in 0..2 {
            for i in 0..3 {
                let s: f64 = (0..4).map(|k| y.data()[o * 12 + k * 3 + i]).sum();
                assert!((s - 1.0).abs() < 1e-6);
            }
        }
    }
}
