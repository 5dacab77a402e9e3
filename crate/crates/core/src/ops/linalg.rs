//! Matrix products, linear layers, axis permutation.

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::tensor::{debug_assert_finite, Scalar, Tensor};

use super::{axpy, dot};

/// Batched matrix product over equal leading axes. A rank-2 right operand is
/// broadcast across the left operand's batch. `transpose_b` treats `b` as
/// [..., N, K] and computes A · Bᵀ without materializing the transpose.
pub fn matmul<T: Scalar>(a: &Tensor<T>, b: &Tensor<T>, transpose_b: bool) -> Result<Tensor<T>> {
    let asp = a.shape();
    let bsp = b.shape();
    if asp.len() < 2 || bsp.len() < 2 {
        return Err(Error::Dim(format!(
            "matmul wants rank >= 2 operands, got {asp:?} and {bsp:?}"
        )));
    }
    let (m, k) = (asp[asp.len() - 2], asp[asp.len() - 1]);
    let (bk, n) = if transpose_b {
        (bsp[bsp.len() - 1], bsp[bsp.len() - 2])
    } else {
        (bsp[bsp.len() - 2], bsp[bsp.len() - 1])
    };
    if k != bk {
        return Err(Error::Dim(format!(
            "matmul inner extents differ: {asp:?} x {bsp:?} (transpose_b={transpose_b})"
        )));
    }
    let a_batch: usize = asp[..asp.len() - 2].iter().product();
    let b_batch: usize = bsp[..bsp.len() - 2].iter().product();
    let broadcast_b = bsp.len() == 2;
    if !broadcast_b && (a_batch != b_batch || asp[..asp.len() - 2] != bsp[..bsp.len() - 2]) {
        return Err(Error::Dim(format!(
            "matmul leading axes must be equal: {asp:?} x {bsp:?}"
        )));
    }

    let mut out_shape: Vec<usize> = asp[..asp.len() - 2].to_vec();
    out_shape.push(m);
    out_shape.push(n);

    let ad = a.data();
    let bd = b.data();
    let mut out = vec![T::zero(); a_batch * m * n];

    out.par_chunks_mut(m * n).enumerate().for_each(|(batch, c)| {
        let a_off = batch * m * k;
        let b_off = if broadcast_b { 0 } else { batch * k * n };
        if transpose_b {
            // C[i,j] = dot(A[i,:], B[j,:])
            for i in 0..m {
                let a_row = &ad[a_off + i * k..a_off + (i + 1) * k];
                let c_row = &mut c[i * n..(i + 1) * n];
                for (j, cv) in c_row.iter_mut().enumerate() {
                    let b_row = &bd[b_off + j * k..b_off + (j + 1) * k];
                    *cv = dot(a_row, b_row);
                }
            }
        } else {
            for i in 0..m {
                let c_row = &mut c[i * n..(i + 1) * n];
                for kk in 0..k {
                    let av = ad[a_off + i * k + kk];
                    let b_row = &bd[b_off + kk * n..b_off + (kk + 1) * n];
                    axpy(c_row, av, b_row);
                }
            }
        }
    });

    let t = Tensor::new(&out_shape, out);
    debug_assert_finite(&t, "matmul");
    Ok(t)
}

/// Gradients of `matmul(a, b, transpose_b)` given upstream `d_out`.
pub fn matmul_backward<T: Scalar>(
    a: &Tensor<T>,
    b: &Tensor<T>,
    transpose_b: bool,
    d_out: &Tensor<T>,
) -> (Tensor<T>, Tensor<T>) {
    let broadcast_b = b.shape().len() == 2;
    let (d_a, mut d_b_full);
    if transpose_b {
        // C = A Bᵀ: dA = dC · B, dB = dCᵀ · A
        d_a = matmul(d_out, b, false).expect("shapes validated in forward");
        d_b_full = matmul_ta(d_out, a);
    } else {
        // C = A B: dA = dC · Bᵀ, dB = Aᵀ · dC
        d_a = matmul(d_out, b, true).expect("shapes validated in forward");
        d_b_full = matmul_ta(a, d_out);
    }
    if broadcast_b && d_b_full.shape().len() > 2 {
        // Sum the batch axes that were broadcast.
        let s = d_b_full.shape().to_vec();
        let rows = s[s.len() - 2];
        let cols = s[s.len() - 1];
        let batch: usize = s[..s.len() - 2].iter().product();
        let mut acc = vec![T::zero(); rows * cols];
        let data = d_b_full.data();
        for bi in 0..batch {
            for i in 0..rows * cols {
                acc[i] += data[bi * rows * cols + i];
            }
        }
        d_b_full = Tensor::new(&[rows, cols], acc);
    }
    (d_a, d_b_full)
}

/// Batched Aᵀ · B where both operands share leading axes: out[..,k,n] = sum_m a[..,m,k] b[..,m,n]
fn matmul_ta<T: Scalar>(a: &Tensor<T>, b: &Tensor<T>) -> Tensor<T> {
    let asp = a.shape();
    let bsp = b.shape();
    let (m, k) = (asp[asp.len() - 2], asp[asp.len() - 1]);
    let n = bsp[bsp.len() - 1];
    let batch: usize = asp[..asp.len() - 2].iter().product();
    let b_stride = if bsp.len() == 2 { 0 } else { m * n };

    let mut out_shape: Vec<usize> = asp[..asp.len() - 2].to_vec();
    out_shape.push(k);
    out_shape.push(n);

    let ad = a.data();
    let bd = b.data();
    let mut out = vec![T::zero(); batch * k * n];
    out.par_chunks_mut(k * n).enumerate().for_each(|(bi, c)| {
        let a_off = bi * m * k;
        let b_off = bi * b_stride;
        for mm in 0..m {
            let b_row = &bd[b_off + mm * n..b_off + (mm + 1) * n];
            for kk in 0..k {
                let av = ad[a_off + mm * k + kk];
                axpy(&mut c[kk * n..(kk + 1) * n], av, b_row);
            }
        }
    });
    Tensor::new(&out_shape, out)
}

/// y[..., j] = sum_k x[..., k] · w[k, j] + bias[j], applied over the last axis.
pub fn linear<T: Scalar>(x: &Tensor<T>, weight: &Tensor<T>, bias: &Tensor<T>) -> Result<Tensor<T>> {
    let xs = x.shape();
    let ws = weight.shape();
    if ws.len() != 2 {
        return Err(Error::Dim(format!("linear weight must be [in, out], got {ws:?}")));
    }
    let (din, dout) = (ws[0], ws[1]);
    if xs[xs.len() - 1] != din {
        return Err(Error::Dim(format!(
            "linear input last axis {} != weight in extent {din}",
            xs[xs.len() - 1]
        )));
    }
    if bias.shape() != [dout] {
        return Err(Error::Dim(format!("linear bias shape {:?} != [{dout}]", bias.shape())));
    }
    let rows = x.numel() / din;
    let xd = x.data();
    let wd = weight.data();
    let bd = bias.data();

    let mut out = vec![T::zero(); rows * dout];
    out.par_chunks_mut(dout).enumerate().for_each(|(r, y_row)| {
        y_row.copy_from_slice(bd);
        let x_row = &xd[r * din..(r + 1) * din];
        for (kk, &xv) in x_row.iter().enumerate() {
            axpy(y_row, xv, &wd[kk * dout..(kk + 1) * dout]);
        }
    });

    let mut out_shape = xs.to_vec();
    *out_shape.last_mut().unwrap() = dout;
    let t = Tensor::new(&out_shape, out);
    debug_assert_finite(&t, "linear");
    Ok(t)
}

pub fn linear_backward<T: Scalar>(
    x: &Tensor<T>,
    weight: &Tensor<T>,
    d_out: &Tensor<T>,
) -> (Tensor<T>, Tensor<T>, Tensor<T>) {
    let ws = weight.shape();
    let (din, dout) = (ws[0], ws[1]);
    let rows = x.numel() / din;
    let xd = x.data();
    let wd = weight.data();
    let gd = d_out.data();

    let mut dx = vec![T::zero(); rows * din];
    dx.par_chunks_mut(din).enumerate().for_each(|(r, dx_row)| {
        let g_row = &gd[r * dout..(r + 1) * dout];
        for (kk, v) in dx_row.iter_mut().enumerate() {
            *v = dot(g_row, &wd[kk * dout..(kk + 1) * dout]);
        }
    });

    let mut dw = vec![T::zero(); din * dout];
    dw.par_chunks_mut(dout).enumerate().for_each(|(kk, dw_row)| {
        for r in 0..rows {
            axpy(dw_row, xd[r * din + kk], &gd[r * dout..(r + 1) * dout]);
        }
    });

    let mut db = vec![T::zero(); dout];
    for r in 0..rows {
        for j in 0..dout {
            db[j] += gd[r * dout + j];
        }
    }

    (
        Tensor::new(x.shape(), dx),
        Tensor::new(&[din, dout], dw),
        Tensor::new(&[dout], db),
    )
}

/// Materialized axis permutation.
pub fn permute<T: Scalar>(x: &Tensor<T>, perm: &[usize]) -> Result<Tensor<T>> {
    let xs = x.shape();
    if perm.len() != xs.len() {
        return Err(Error::Dim(format!(
            "permutation {perm:?} does not match rank {}",
            xs.len()
        )));
    }
    let mut seen = vec![false; perm.len()];
    for &p in perm {
        if p >= perm.len() || seen[p] {
            return Err(Error::Contract(format!("invalid permutation {perm:?}")));
        }
        seen[p] = true;
    }
    let in_strides = x.strides();
    let out_shape: Vec<usize> = perm.iter().map(|&p| xs[p]).collect();
    let numel = x.numel();
    let xd = x.data();

    // out index -> input index via permuted strides
    let mut out_strides_src = vec![0usize; perm.len()];
    for (o, &p) in perm.iter().enumerate() {
        out_strides_src[o] = in_strides[p];
    }
    let mut out = vec![T::zero(); numel];
    let rank = out_shape.len();
    let mut idx = vec![0usize; rank];
    let mut src = 0usize;
    for slot in out.iter_mut() {
        *slot = xd[src];
        // increment odometer over out_shape, updating src incrementally
        for a in (0..rank).rev() {
            idx[a] += 1;
            src += out_strides_src[a];
            if idx[a] < out_shape[a] {
                break;
            }
            src -= out_strides_src[a] * out_shape[a];
            idx[a] = 0;
        }
    }
    Ok(Tensor::new(&out_shape, out))
}

/// The permutation that undoes `perm`.
pub fn inverse_perm(perm: &[usize]) -> Vec<usize> {
    let mut inv = vec![0usize; perm.len()];
    for (i, &p) in perm.iter().enumerate() {
        inv[p] = i;
    }
    inv
}

#[cfg(test)]
mod tests {
    use super::*;

    fn naive_matmul(a: &[f64], b: &[f64], m: usize, k: usize, n: usize) -> Vec<f64> {
        let mut c = vec![0.0; m * n];
        for i in 0..m {
            for j in 0..n {
                for kk in 0..k {
                    c[i * n + j] += a[i * k + kk] * b[kk * n + j];
                }
            }
        }
        c
    }

    #[test]
    fn identity_is_neutral() {
        let a = Tensor::from_fn(&[3, 3], |i| (i as f64) * 0.7 - 2.0);
        let mut eye = Tensor::zeros(&[3, 3]);
        for i in 0..3 {
            eye.data_mut()[i * 3 + i] = 1.0;
        }
        let c = matmul(&a, &eye, false).unwrap();
        assert_eq!(a, c);
    }

    #[test]
    fn zero_annihilates() {
        let a = Tensor::from_fn(&[2, 4], |i| i as f32 + 1.0);
        let z = Tensor::zeros(&[4, 3]);
        let c = matmul(&a, &z, false).unwrap();
        assert!(c.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn matches_triple_loop() {
        let a = Tensor::from_fn(&[4, 5], |i| ((i * 7 + 3) % 11) as f64 * 0.31 - 1.5);
        let b = Tensor::from_fn(&[5, 6], |i| ((i * 5 + 1) % 13) as f64 * 0.17 - 1.0);
        let c = matmul(&a, &b, false).unwrap();
        let oracle = naive_matmul(a.data(), b.data(), 4, 5, 6);
        for (x, y) in c.data().iter().zip(&oracle) {
            assert!((x - y).abs() <= 1e-12 * y.abs().max(1.0));
        }
    }

    #[test]
    fn transpose_b_agrees_with_explicit_transpose() {
        let a = Tensor::from_fn(&[2, 3, 4], |i| (i as f64).sin());
        let b = Tensor::from_fn(&[2, 5, 4], |i| (i as f64).cos());
        let bt = permute(&b, &[0, 2, 1]).unwrap();
        let c1 = matmul(&a, &b, true).unwrap();
        let c2 = matmul(&a, &bt, false).unwrap();
        // Different accumulation orders; equal up to rounding.
        for (x, y) in c1.data().iter().zip(c2.data()) {
            assert!((x - y).abs() <= 1e-12 * y.abs().max(1.0));
        }
    }

    #[test]
    fn inner_mismatch_is_dimension_error() {
        let a = Tensor::<f32>::zeros(&[2, 3]);
        let b = Tensor::<f32>::zeros(&[4, 2]);
        assert!(matches!(matmul(&a, &b, false), Err(crate::error::Error::Dim(_))));
    }

    #[test]
    fn permute_round_trip() {
        let x = Tensor::from_fn(&[2, 3, 4], |i| i as f64);
        let p = [2, 0, 1];
        let y = permute(&x, &p).unwrap();
        assert_eq!(y.shape(), &[4, 2, 3]);
        let back = permute(&y, &inverse_perm(&p)).unwrap();
        assert_eq!(x, back);
    }

    #[test]
    fn linear_matches_matmul_plus_bias() {
        let x = Tensor::from_fn(&[3, 4], |i| (i as f64) * 0.21 - 0.4);
        let w = Tensor::from_fn(&[4, 2], |i| (i as f64) * 0.13 - 0.2);
        let b = Tensor::new(&[2], vec![0.5, -0.25]);
        let y = linear(&x, &w, &b).unwrap();
        let mm = matmul(&x, &w, false).unwrap();
        for r in 0..3 {
            for j in 0..2 {
                let want = mm.data()[r * 2 + j] + b.data()[j];
                assert!((y.data()[r * 2 + j] - want).abs() < 1e-14);
            }
        }
    }
}
