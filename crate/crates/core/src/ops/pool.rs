//! Max pooling over spatiotemporal volumes and average pooling over token grids.

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::tensor::{Scalar, Tensor};

use super::conv::Triple;

/// Max pooling. Returns the pooled tensor and, per output element, the linear
/// index (into the input buffer) of the element that won; ties go to the
/// lowest linear index.
pub fn maxpool3d<T: Scalar>(
    input: &Tensor<T>,
    window: Triple,
    stride: Triple,
) -> Result<(Tensor<T>, Vec<usize>)> {
    let is = input.shape();
    if is.len() != 5 {
        return Err(Error::Dim(format!("maxpool3d wants [B,C,T,H,W], got {is:?}")));
    }
    let (batch, ch, it, ih, iw) = (is[0], is[1], is[2], is[3], is[4]);
    let mut out_sp = [0usize; 3];
    for a in 0..3 {
        if stride[a] == 0 {
            return Err(Error::Contract("pool stride components must be >= 1".into()));
        }
        if window[a] == 0 || window[a] > is[2 + a] {
            return Err(Error::Geometry(format!(
                "pool window {:?} exceeds input extents {:?}",
                window,
                &is[2..]
            )));
        }
        out_sp[a] = (is[2 + a] - window[a]) / stride[a] + 1;
    }
    let [ot, oh, ow] = out_sp;
    let out_plane = ot * oh * ow;
    let x = input.data();

    let mut out = vec![T::zero(); batch * ch * out_plane];
    let mut arg = vec![0usize; batch * ch * out_plane];
    out.par_chunks_mut(out_plane)
        .zip(arg.par_chunks_mut(out_plane))
        .enumerate()
        .for_each(|(bc, (dst, dst_arg))| {
            let x_base = bc * it * ih * iw;
            for t in 0..ot {
                for hh in 0..oh {
                    for wo in 0..ow {
                        let mut best = T::neg_infinity();
                        let mut best_idx = 0usize;
                        for dt in 0..window[0] {
                            let ti = t * stride[0] + dt;
                            for dh in 0..window[1] {
                                let hi = hh * stride[1] + dh;
                                let row = x_base + (ti * ih + hi) * iw + wo * stride[2];
                                for dw in 0..window[2] {
                                    let v = x[row + dw];
                                    if v > best {
                                        best = v;
                                        best_idx = row + dw;
                                    }
                                }
                            }
                        }
                        dst[(t * oh + hh) * ow + wo] = best;
                        dst_arg[(t * oh + hh) * ow + wo] = best_idx;
                    }
                }
            }
        });

    Ok((Tensor::new(&[batch, ch, ot, oh, ow], out), arg))
}

/// Routes each output gradient to the input element that won the max.
pub fn maxpool3d_backward<T: Scalar>(
    input_shape: &[usize],
    argmax: &[usize],
    d_out: &Tensor<T>,
) -> Tensor<T> {
    let mut dx = vec![T::zero(); input_shape.iter().product()];
    for (g, &idx) in d_out.data().iter().zip(argmax) {
        dx[idx] += *g;
    }
    Tensor::new(input_shape, dx)
}

/// Ceiling-mode output extents of a token-grid pool.
pub fn pooled_grid(grid: Triple, stride: Triple) -> Triple {
    [
        grid[0].div_ceil(stride[0]),
        grid[1].div_ceil(stride[1]),
        grid[2].div_ceil(stride[2]),
    ]
}

/// Average pooling over a [B, L, D] token sequence laid out on a (T, H, W)
/// grid. Windows equal the stride; boundary windows shrink (ceiling mode) and
/// average over the tokens actually present. Stride 1 is the identity.
pub fn token_pool<T: Scalar>(
    tokens: &Tensor<T>,
    grid: Triple,
    stride: Triple,
) -> Result<Tensor<T>> {
    let s = tokens.shape();
    if s.len() != 3 {
        return Err(Error::Dim(format!("token_pool wants [B,L,D], got {s:?}")));
    }
    let (batch, len, dim) = (s[0], s[1], s[2]);
    if grid[0] * grid[1] * grid[2] != len {
        return Err(Error::Geometry(format!(
            "token count {len} does not match grid {grid:?}"
        )));
    }
    if stride.iter().any(|&v| v == 0) {
        return Err(Error::Contract("pool stride components must be >= 1".into()));
    }
    let og = pooled_grid(grid, stride);
    let out_len = og[0] * og[1] * og[2];
    let x = tokens.data();

    let mut out = vec![T::zero(); batch * out_len * dim];
    out.par_chunks_mut(out_len * dim).enumerate().for_each(|(b, dst)| {
        let x_base = b * len * dim;
        for t in 0..og[0] {
            let t0 = t * stride[0];
            let t1 = (t0 + stride[0]).min(grid[0]);
            for h in 0..og[1] {
                let h0 = h * stride[1];
                let h1 = (h0 + stride[1]).min(grid[1]);
                for w in 0..og[2] {
                    let w0 = w * stride[2];
                    let w1 = (w0 + stride[2]).min(grid[2]);
                    let count = T::of_f64(((t1 - t0) * (h1 - h0) * (w1 - w0)) as f64);
                    let dst_row = ((t * og[1] + h) * og[2] + w) * dim;
                    for ti in t0..t1 {
                        for hi in h0..h1 {
                            for wi in w0..w1 {
                                let src = x_base + ((ti * grid[1] + hi) * grid[2] + wi) * dim;
                                for d in 0..dim {
                                    dst[dst_row + d] += x[src + d];
                                }
                            }
                        }
                    }
                    let inv = T::one() / count;
                    for d in 0..dim {
                        dst[dst_row + d] *= inv;
                    }
                }
            }
        }
    });

    Ok(Tensor::new(&[batch, out_len, dim], out))
}

pub fn token_pool_backward<T: Scalar>(
    input_shape: &[usize],
    grid: Triple,
    stride: Triple,
    d_out: &Tensor<T>,
) -> Tensor<T> {
    let (batch, len, dim) = (input_shape[0], input_shape[1], input_shape[2]);
    let og = pooled_grid(grid, stride);
    let out_len = og[0] * og[1] * og[2];
    let g = d_out.data();

    let mut dx = vec![T::zero(); batch * len * dim];
    dx.par_chunks_mut(len * dim).enumerate().for_each(|(b, dst)| {
        let g_base = b * out_len * dim;
        for t in 0..og[0] {
            let t0 = t * stride[0];
            let t1 = (t0 + stride[0]).min(grid[0]);
            for h in 0..og[1] {
                let h0 = h * stride[1];
                let h1 = (h0 + stride[1]).min(grid[1]);
                for w in 0..og[2] {
                    let w0 = w * stride[2];
                    let w1 = (w0 + stride[2]).min(grid[2]);
                    let count = T::of_f64(((t1 - t0) * (h1 - h0) * (w1 - w0)) as f64);
                    let inv = T::one() / count;
                    let g_row = g_base + ((t * og[1] + h) * og[2] + w) * dim;
                    for ti in t0..t1 {
                        for hi in h0..h1 {
                            for wi in w0..w1 {
                                let dst_row = ((ti * grid[1] + hi) * grid[2] + wi) * dim;
                                for d in 0..dim {
                                    dst[dst_row + d] += g[g_row + d] * inv;
                                }
                            }
                        }
                    }
                }
            }
        }
    });

    Tensor::new(input_shape, dx)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn max_of_zero_to_seven() {
        let x = Tensor::new(&[1, 1, 2, 2, 2], (0..8).map(|i| i as f64).collect());
        let (y, arg) = maxpool3d(&x, [2, 2, 2], [2, 2, 2]).unwrap();
        assert_eq!(y.shape(), &[1, 1, 1, 1, 1]);
        assert_eq!(y.data()[0], 7.0);
        assert_eq!(arg[0], 7);
    }

    #[test]
    fn constant_input_stays_constant() {
        let x = Tensor::full(&[1, 2, 4, 4, 4], 3.5f32);
        let (y, _) = maxpool3d(&x, [2, 2, 2], [2, 2, 2]).unwrap();
        assert!(y.data().iter().all(|&v| v == 3.5));
    }

    #[test]
    fn ties_route_gradient_to_lowest_index() {
        let x = Tensor::full(&[1, 1, 1, 1, 4], 1.0f64);
        let (_, arg) = maxpool3d(&x, [1, 1, 2], [1, 1, 2]).unwrap();
        assert_eq!(arg, vec![0, 2]);
        let g = Tensor::new(&[1, 1, 1, 1, 2], vec![5.0, 7.0]);
        let dx = maxpool3d_backward(&[1, 1, 1, 1, 4], &arg, &g);
        assert_eq!(dx.data(), &[5.0, 0.0, 7.0, 0.0]);
    }

    #[test]
    fn token_pool_ceiling_grid() {
        assert_eq!(pooled_grid([8, 14, 14], [1, 2, 2]), [8, 7, 7]);
        assert_eq!(pooled_grid([5, 3, 3], [2, 2, 2]), [3, 2, 2]);
    }

    #[test]
    fn token_pool_stride_one_is_identity() {
        let t = Tensor::from_fn(&[2, 6, 3], |i| i as f64 * 0.25 - 1.0);
        let y = token_pool(&t, [1, 2, 3], [1, 1, 1]).unwrap();
        assert_eq!(t, y);
    }

    #[test]
    fn token_pool_averages_window() {
        // grid (1,1,4), stride (1,1,2): two windows of two tokens each
        let t = Tensor::new(&[1, 4, 1], vec![1.0f64, 3.0, 5.0, 9.0]);
        let y = token_pool(&t, [1, 1, 4], [1, 1, 2]).unwrap();
        assert_eq!(y.data(), &[2.0, 7.0]);
    }
}
