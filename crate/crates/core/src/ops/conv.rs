//! 3D convolution (cross-correlation convention, zero padding).

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::tensor::{debug_assert_finite, Scalar, Tensor};

/// (temporal, height, width) triple for strides/pads/windows.
pub type Triple = [usize; 3];

/// Output extent along one axis: floor((x + 2p - k) / s) + 1.
pub fn conv_out_extent(input: usize, kernel: usize, pad: usize, stride: usize) -> Result<usize> {
    if stride == 0 {
        return Err(Error::Contract("stride components must be >= 1".into()));
    }
    let padded = input + 2 * pad;
    if kernel == 0 || kernel > padded {
        return Err(Error::Geometry(format!(
            "kernel extent {kernel} exceeds padded input extent {padded}"
        )));
    }
    Ok((padded - kernel) / stride + 1)
}

/// Half-open range of output indices whose window hits in-bounds input at
/// kernel offset `k`: 0 <= o*stride + k - pad < input.
#[inline]
fn valid_out_range(input: usize, k: usize, pad: usize, stride: usize, out: usize) -> (usize, usize) {
    let lo = if pad > k { (pad - k).div_ceil(stride) } else { 0 };
    let hi_num = input + pad;
    if hi_num <= k {
        return (0, 0);
    }
    let hi = ((hi_num - 1 - k) / stride + 1).min(out);
    (lo.min(hi), hi)
}

fn check_conv_shapes<T: Scalar>(
    input: &Tensor<T>,
    weight: &Tensor<T>,
    bias: &Tensor<T>,
    stride: Triple,
    pad: Triple,
) -> Result<[usize; 5]> {
    let is = input.shape();
    let ws = weight.shape();
    if is.len() != 5 || ws.len() != 5 {
        return Err(Error::Dim(format!(
            "conv3d wants input [B,C,T,H,W] and weight [O,C,kt,kh,kw], got {is:?} and {ws:?}"
        )));
    }
    if is[1] != ws[1] {
        return Err(Error::Dim(format!(
            "conv3d input channels {} != weight channels {}",
            is[1], ws[1]
        )));
    }
    if bias.shape() != [ws[0]] {
        return Err(Error::Dim(format!(
            "conv3d bias shape {:?} != [{}]",
            bias.shape(),
            ws[0]
        )));
    }
    let mut out = [is[0], ws[0], 0, 0, 0];
    for a in 0..3 {
        out[2 + a] = conv_out_extent(is[2 + a], ws[2 + a], pad[a], stride[a])?;
    }
    Ok(out)
}

/// out[b,o,t',h',w'] = bias[o] + sum_{c,kt,kh,kw} in[b,c,t'*st+kt-pt,...] * w[o,c,kt,kh,kw]
pub fn conv3d<T: Scalar>(
    input: &Tensor<T>,
    weight: &Tensor<T>,
    bias: &Tensor<T>,
    stride: Triple,
    pad: Triple,
) -> Result<Tensor<T>> {
    let os = check_conv_shapes(input, weight, bias, stride, pad)?;
    let [batch, out_ch, ot, oh, ow] = os;
    let is = input.shape();
    let (in_ch, it, ih, iw) = (is[1], is[2], is[3], is[4]);
    let ws = weight.shape();
    let (kt, kh, kw) = (ws[2], ws[3], ws[4]);

    let x = input.data();
    let w = weight.data();
    let bvals = bias.data();
    let plane = ot * oh * ow;
    let mut out = vec![T::zero(); batch * out_ch * plane];

    out.par_chunks_mut(plane).enumerate().for_each(|(bo, dst)| {
        let b = bo / out_ch;
        let o = bo % out_ch;
        dst.fill(bvals[o]);
        for c in 0..in_ch {
            let x_base = (b * in_ch + c) * it * ih * iw;
            let w_base = (o * in_ch + c) * kt * kh * kw;
            for dt in 0..kt {
                let (t_lo, t_hi) = valid_out_range(it, dt, pad[0], stride[0], ot);
                for dh in 0..kh {
                    let (h_lo, h_hi) = valid_out_range(ih, dh, pad[1], stride[1], oh);
                    for dw in 0..kw {
                        let (w_lo, w_hi) = valid_out_range(iw, dw, pad[2], stride[2], ow);
                        if w_lo >= w_hi {
                            continue;
                        }
                        let wgt = w[w_base + (dt * kh + dh) * kw + dw];
                        for t in t_lo..t_hi {
                            let ti = t * stride[0] + dt - pad[0];
                            for hh in h_lo..h_hi {
                                let hi = hh * stride[1] + dh - pad[1];
                                let x_row = x_base + (ti * ih + hi) * iw;
                                let dst_row = (t * oh + hh) * ow;
                                for wo in w_lo..w_hi {
                                    let wi = wo * stride[2] + dw - pad[2];
                                    dst[dst_row + wo] += wgt * x[x_row + wi];
                                }
                            }
                        }
                    }
                }
            }
        }
    });

    let t = Tensor::new(&[batch, out_ch, ot, oh, ow], out);
    debug_assert_finite(&t, "conv3d");
    Ok(t)
}

/// Gradients of conv3d. `d_input` is skipped when `need_dx` is false
/// (first layer of a network).
pub fn conv3d_backward<T: Scalar>(
    input: &Tensor<T>,
    weight: &Tensor<T>,
    d_out: &Tensor<T>,
    stride: Triple,
    pad: Triple,
    need_dx: bool,
) -> (Option<Tensor<T>>, Tensor<T>, Tensor<T>) {
    let is = input.shape();
    let ws = weight.shape();
    let os = d_out.shape();
    let (batch, in_ch, it, ih, iw) = (is[0], is[1], is[2], is[3], is[4]);
    let (out_ch, kt, kh, kw) = (ws[0], ws[2], ws[3], ws[4]);
    let (ot, oh, ow) = (os[2], os[3], os[4]);

    let x = input.data();
    let w = weight.data();
    let g = d_out.data();
    let out_plane = ot * oh * ow;

    // d_bias[o] = sum over batch and output positions.
    let mut d_bias = vec![T::zero(); out_ch];
    d_bias.par_iter_mut().enumerate().for_each(|(o, db)| {
        let mut acc = T::zero();
        for b in 0..batch {
            let base = (b * out_ch + o) * out_plane;
            for v in &g[base..base + out_plane] {
                acc += *v;
            }
        }
        *db = acc;
    });

    // d_weight: one task per (o, c) filter slice.
    let mut d_weight = vec![T::zero(); out_ch * in_ch * kt * kh * kw];
    d_weight
        .par_chunks_mut(kt * kh * kw)
        .enumerate()
        .for_each(|(oc, dw_slice)| {
            let o = oc / in_ch;
            let c = oc % in_ch;
            for dt in 0..kt {
                let (t_lo, t_hi) = valid_out_range(it, dt, pad[0], stride[0], ot);
                for dh in 0..kh {
                    let (h_lo, h_hi) = valid_out_range(ih, dh, pad[1], stride[1], oh);
                    for dwk in 0..kw {
                        let (w_lo, w_hi) = valid_out_range(iw, dwk, pad[2], stride[2], ow);
                        let mut acc = T::zero();
                        for b in 0..batch {
                            let g_base = (b * out_ch + o) * out_plane;
                            let x_base = (b * in_ch + c) * it * ih * iw;
                            for t in t_lo..t_hi {
                                let ti = t * stride[0] + dt - pad[0];
                                for hh in h_lo..h_hi {
                                    let hi = hh * stride[1] + dh - pad[1];
                                    let g_row = g_base + (t * oh + hh) * ow;
                                    let x_row = x_base + (ti * ih + hi) * iw;
                                    for wo in w_lo..w_hi {
                                        let wi = wo * stride[2] + dwk - pad[2];
                                        acc += g[g_row + wo] * x[x_row + wi];
                                    }
                                }
                            }
                        }
                        dw_slice[(dt * kh + dh) * kw + dwk] = acc;
                    }
                }
            }
        });

    // d_input: one task per (b, c) plane; scatter within exclusively owned memory.
    let d_input = if need_dx {
        let in_plane = it * ih * iw;
        let mut dx = vec![T::zero(); batch * in_ch * in_plane];
        dx.par_chunks_mut(in_plane).enumerate().for_each(|(bc, dst)| {
            let b = bc / in_ch;
            let c = bc % in_ch;
            for o in 0..out_ch {
                let g_base = (b * out_ch + o) * out_plane;
                let w_base = (o * in_ch + c) * kt * kh * kw;
                for dt in 0..kt {
                    let (t_lo, t_hi) = valid_out_range(it, dt, pad[0], stride[0], ot);
                    for dh in 0..kh {
                        let (h_lo, h_hi) = valid_out_range(ih, dh, pad[1], stride[1], oh);
                        for dwk in 0..kw {
                            let (w_lo, w_hi) = valid_out_range(iw, dwk, pad[2], stride[2], ow);
                            let wgt = w[w_base + (dt * kh + dh) * kw + dwk];
                            for t in t_lo..t_hi {
                                let ti = t * stride[0] + dt - pad[0];
                                for hh in h_lo..h_hi {
                                    let hi = hh * stride[1] + dh - pad[1];
                                    let g_row = g_base + (t * oh + hh) * ow;
                                    let x_row = (ti * ih + hi) * iw;
                                    for wo in w_lo..w_hi {
                                        let wi = wo * stride[2] + dwk - pad[2];
                                        dst[x_row + wi] += wgt * g[g_row + wo];
                                    }
                                }
                            }
                        }
                    }
                }
            }
        });
        Some(Tensor::new(&[batch, in_ch, it, ih, iw], dx))
    } else {
        None
    };

    (
        d_input,
        Tensor::new(&[out_ch, in_ch, kt, kh, kw], d_weight),
        Tensor::new(&[out_ch], d_bias),
    )
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn all_ones_cube_sums_to_eight() {
        let x = Tensor::full(&[1, 1, 2, 2, 2], 1.0f64);
        let w = Tensor::full(&[1, 1, 2, 2, 2], 1.0f64);
        let b = Tensor::zeros(&[1]);
        let y = conv3d(&x, &w, &b, [1, 1, 1], [0, 0, 0]).unwrap();
        assert_eq!(y.shape(), &[1, 1, 1, 1, 1]);
        assert_eq!(y.data()[0], 8.0);
    }

    #[test]
    fn zero_kernel_emits_bias() {
        let x = Tensor::from_fn(&[1, 2, 3, 4, 4], |i| (i % 7) as f64 - 3.0);
        let w = Tensor::zeros(&[3, 2, 2, 2, 2]);
        let b = Tensor::new(&[3], vec![0.5, -1.25, 2.0]);
        let y = conv3d(&x, &w, &b, [1, 1, 1], [0, 0, 0]).unwrap();
        for o in 0..3 {
            let plane = y.shape()[2] * y.shape()[3] * y.shape()[4];
            for i in 0..plane {
                assert_eq!(y.data()[o * plane + i], b.data()[o]);
            }
        }
    }

    #[test]
    fn channel_mismatch_is_dimension_error() {
        let x = Tensor::<f32>::zeros(&[1, 2, 4, 4, 4]);
        let w = Tensor::<f32>::zeros(&[1, 3, 2, 2, 2]);
        let b = Tensor::<f32>::zeros(&[1]);
        match conv3d(&x, &w, &b, [1, 1, 1], [0, 0, 0]) {
            Err(crate::error::Error::Dim(_)) => {}
            other => panic!("expected dimension error, got {other:?}"),
        }
    }

    #[test]
    fn oversized_kernel_is_geometry_error() {
        let x = Tensor::<f32>::zeros(&[1, 1, 2, 2, 2]);
        let w = Tensor::<f32>::zeros(&[1, 1, 3, 3, 3]);
        let b = Tensor::<f32>::zeros(&[1]);
        match conv3d(&x, &w, &b, [1, 1, 1], [0, 0, 0]) {
            Err(crate::error::Error::Geometry(_)) => {}
            other => panic!("expected geometry error, got {other:?}"),
        }
    }

    #[test]
    fn output_extent_formula() {
        // (6 + 2*1 - 3) / 2 + 1 = 3
        assert_eq!(conv_out_extent(6, 3, 1, 2).unwrap(), 3);
        assert_eq!(conv_out_extent(16, 3, 1, 2).unwrap(), 8);
    }
}
