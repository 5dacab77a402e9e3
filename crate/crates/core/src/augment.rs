//! Spatial transforms on frames and the seeded augmentation pipeline.
//!
//! All transforms use half-pixel center alignment. A clip is transformed as a
//! unit: the same geometric parameters apply to every channel and frame.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::data::ClipTensor;
use crate::tensor::Scalar;

/// Bilinear resize of one H x W plane with half-pixel centers and edge
/// clamping. A constant image stays constant; identity extents are exact.
pub fn resize_plane<T: Scalar>(src: &[T], h: usize, w: usize, oh: usize, ow: usize) -> Vec<T> {
    assert!(oh >= 1 && ow >= 1);
    let sy = h as f64 / oh as f64;
    let sx = w as f64 / ow as f64;
    let mut out = Vec::with_capacity(oh * ow);
    for y in 0..oh {
        let fy = (y as f64 + 0.5) * sy - 0.5;
        let y0 = fy.floor();
        let ty = T::of_f64(fy - y0);
        let y0i = (y0 as isize).clamp(0, h as isize - 1) as usize;
        let y1i = ((y0 as isize) + 1).clamp(0, h as isize - 1) as usize;
        for x in 0..ow {
            let fx = (x as f64 + 0.5) * sx - 0.5;
            let x0 = fx.floor();
            let tx = T::of_f64(fx - x0);
            let x0i = (x0 as isize).clamp(0, w as isize - 1) as usize;
            let x1i = ((x0 as isize) + 1).clamp(0, w as isize - 1) as usize;
            let one = T::one();
            let top = src[y0i * w + x0i] * (one - tx) + src[y0i * w + x1i] * tx;
            let bot = src[y1i * w + x0i] * (one - tx) + src[y1i * w + x1i] * tx;
            out.push(top * (one - ty) + bot * ty);
        }
    }
    out
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FlipAxis {
    Horizontal,
    Vertical,
}

/// Reverse one spatial axis of a plane.
pub fn flip_plane<T: Scalar>(src: &[T], h: usize, w: usize, axis: FlipAxis) -> Vec<T> {
    let mut out = vec![T::zero(); h * w];
    match axis {
        FlipAxis::Horizontal => {
            for y in 0..h {
                for x in 0..w {
                    out[y * w + x] = src[y * w + (w - 1 - x)];
                }
            }
        }
        FlipAxis::Vertical => {
            for y in 0..h {
                out[y * w..(y + 1) * w].copy_from_slice(&src[(h - 1 - y) * w..(h - y) * w]);
            }
        }
    }
    out
}

/// Rotate about the image center (degrees, counter-clockwise for positive
/// angles in image coordinates), bilinear sampling, zero fill outside.
pub fn rotate_plane<T: Scalar>(src: &[T], h: usize, w: usize, angle_degrees: f64) -> Vec<T> {
    let theta = angle_degrees.to_radians();
    let (sin, cos) = theta.sin_cos();
    let cy = (h as f64 - 1.0) / 2.0;
    let cx = (w as f64 - 1.0) / 2.0;
    let mut out = Vec::with_capacity(h * w);
    for y in 0..h {
        for x in 0..w {
            // inverse map: rotate the destination offset by -theta
            let dy = y as f64 - cy;
            let dx = x as f64 - cx;
            let sx = cx + cos * dx + sin * dy;
            let sy = cy - sin * dx + cos * dy;
            out.push(bilinear_zero(src, h, w, sy, sx));
        }
    }
    out
}

fn bilinear_zero<T: Scalar>(src: &[T], h: usize, w: usize, fy: f64, fx: f64) -> T {
    let y0 = fy.floor();
    let x0 = fx.floor();
    let ty = T::of_f64(fy - y0);
    let tx = T::of_f64(fx - x0);
    let y0 = y0 as isize;
    let x0 = x0 as isize;
    let sample = |yy: isize, xx: isize| -> T {
        if yy < 0 || xx < 0 || yy >= h as isize || xx >= w as isize {
            T::zero()
        } else {
            src[yy as usize * w + xx as usize]
        }
    };
    let one = T::one();
    let top = sample(y0, x0) * (one - tx) + sample(y0, x0 + 1) * tx;
    let bot = sample(y0 + 1, x0) * (one - tx) + sample(y0 + 1, x0 + 1) * tx;
    top * (one - ty) + bot * ty
}

// ── Clip-level wrappers ─────────────────────────────────────────────

fn map_planes(clip: &ClipTensor, oh: usize, ow: usize, f: impl Fn(&[f32]) -> Vec<f32>) -> ClipTensor {
    let mut out = ClipTensor::zeros(clip.channels, clip.frames, oh, ow);
    for c in 0..clip.channels {
        for t in 0..clip.frames {
            out.plane_mut(c, t).copy_from_slice(&f(clip.plane(c, t)));
        }
    }
    out
}

pub fn resize_clip(clip: &ClipTensor, oh: usize, ow: usize) -> ClipTensor {
    if oh == clip.height && ow == clip.width {
        return clip.clone();
    }
    let mut out = map_planes(clip, oh, ow, |p| resize_plane(p, clip.height, clip.width, oh, ow));
    clamp_unit(&mut out);
    out
}

pub fn flip_clip(clip: &ClipTensor, axis: FlipAxis) -> ClipTensor {
    map_planes(clip, clip.height, clip.width, |p| flip_plane(p, clip.height, clip.width, axis))
}

pub fn rotate_clip(clip: &ClipTensor, angle_degrees: f64) -> ClipTensor {
    let mut out = map_planes(clip, clip.height, clip.width, |p| {
        rotate_plane(p, clip.height, clip.width, angle_degrees)
    });
    clamp_unit(&mut out);
    out
}

/// Bilinear weights can overshoot [0,1] by rounding; keep the pixel contract.
fn clamp_unit(clip: &mut ClipTensor) {
    for p in clip.data.iter_mut() {
        *p = p.clamp(0.0, 1.0);
    }
}

/// Center-crop or zero-pad a clip back to (oh, ow).
fn crop_or_pad(clip: &ClipTensor, oh: usize, ow: usize) -> ClipTensor {
    let mut out = ClipTensor::zeros(clip.channels, clip.frames, oh, ow);
    // source and destination top-left corners of the copied window
    let copy_h = clip.height.min(oh);
    let copy_w = clip.width.min(ow);
    let sy = (clip.height - copy_h) / 2;
    let sx = (clip.width - copy_w) / 2;
    let dy = (oh - copy_h) / 2;
    let dx = (ow - copy_w) / 2;
    for c in 0..clip.channels {
        for t in 0..clip.frames {
            let src = clip.plane(c, t);
            let dst = out.plane_mut(c, t);
            for row in 0..copy_h {
                let s = (sy + row) * clip.width + sx;
                let d = (dy + row) * ow + dx;
                dst[d..d + copy_w].copy_from_slice(&src[s..s + copy_w]);
            }
        }
    }
    out
}

// ── Policy ──────────────────────────────────────────────────────────

/// Enabled transforms with probabilities and ranges. `AugmentPolicy::none()`
/// is the identity.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AugmentPolicy {
    pub scale_p: f64,
    pub scale_range: (f64, f64),
    pub rotate_p: f64,
    pub rotate_max_degrees: f64,
    pub hflip_p: f64,
    pub vflip_p: f64,
}

impl Default for AugmentPolicy {
    fn default() -> Self {
        AugmentPolicy {
            scale_p: 0.5,
            scale_range: (0.9, 1.1),
            rotate_p: 0.5,
            rotate_max_degrees: 15.0,
            hflip_p: 0.5,
            vflip_p: 0.5,
        }
    }
}

impl AugmentPolicy {
    pub fn none() -> Self {
        AugmentPolicy {
            scale_p: 0.0,
            scale_range: (1.0, 1.0),
            rotate_p: 0.0,
            rotate_max_degrees: 0.0,
            hflip_p: 0.0,
            vflip_p: 0.0,
        }
    }
}

/// Apply the policy with all randomness drawn from `seed`. The same
/// (clip, policy, seed) always produces the bitwise-identical output;
/// geometry (C, T, H, W) is preserved.
pub fn augment(clip: &ClipTensor, policy: &AugmentPolicy, seed: u64) -> ClipTensor {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out: Option<ClipTensor> = None;
    let cur = |out: &Option<ClipTensor>| -> ClipTensor { out.clone().unwrap_or_else(|| clip.clone()) };

    if policy.scale_p > 0.0 && rng.gen::<f64>() < policy.scale_p {
        let s: f64 = rng.gen_range(policy.scale_range.0..=policy.scale_range.1);
        let nh = ((clip.height as f64 * s).round() as usize).max(1);
        let nw = ((clip.width as f64 * s).round() as usize).max(1);
        if nh != clip.height || nw != clip.width {
            let scaled = resize_clip(&cur(&out), nh, nw);
            out = Some(crop_or_pad(&scaled, clip.height, clip.width));
        }
    }
    if policy.rotate_p > 0.0 && rng.gen::<f64>() < policy.rotate_p {
        let a: f64 = rng.gen_range(-policy.rotate_max_degrees..=policy.rotate_max_degrees);
        out = Some(rotate_clip(&cur(&out), a));
    }
    if policy.hflip_p > 0.0 && rng.gen::<f64>() < policy.hflip_p {
        out = Some(flip_clip(&cur(&out), FlipAxis::Horizontal));
    }
    if policy.vflip_p > 0.0 && rng.gen::<f64>() < policy.vflip_p {
        out = Some(flip_clip(&cur(&out), FlipAxis::Vertical));
    }
    out.unwrap_or_else(|| clip.clone())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn test_clip(h: usize, w: usize) -> ClipTensor {
        let mut clip = ClipTensor::zeros(3, 16, h, w);
        for (i, p) in clip.data.iter_mut().enumerate() {
            *p = ((i * 31 + 7) % 101) as f32 / 100.0;
        }
        clip
    }

    #[test]
    fn resize_constant_stays_constant() {
        let src = vec![0.7f64; 5 * 4];
        let out = resize_plane(&src, 5, 4, 9, 13);
        for v in out {
            assert!((v - 0.7).abs() < 1e-12);
        }
    }

    #[test]
    fn resize_identity_extents_is_exact() {
        let src: Vec<f32> = (0..30).map(|i| i as f32 / 29.0).collect();
        let out = resize_plane(&src, 5, 6, 5, 6);
        assert_eq!(src, out);
    }

    #[test]
    fn resize_2x2_to_4x4_matches_half_pixel_oracle() {
        let src = vec![0.0f64, 1.0, 2.0, 3.0];
        let out = resize_plane(&src, 2, 2, 4, 4);
        // direct per-pixel half-pixel bilinear evaluation
        for y in 0..4 {
            for x in 0..4 {
                let fy = ((y as f64 + 0.5) * 0.5 - 0.5).clamp(0.0, 1.0);
                let fx = ((x as f64 + 0.5) * 0.5 - 0.5).clamp(0.0, 1.0);
                let y0 = fy.floor() as usize;
                let x0 = fx.floor() as usize;
                let y1 = (y0 + 1).min(1);
                let x1 = (x0 + 1).min(1);
                let (ty, tx) = (fy - y0 as f64, fx - x0 as f64);
                let want = src[y0 * 2 + x0] * (1.0 - ty) * (1.0 - tx)
                    + src[y0 * 2 + x1] * (1.0 - ty) * tx
                    + src[y1 * 2 + x0] * ty * (1.0 - tx)
                    + src[y1 * 2 + x1] * ty * tx;
                let got = out[y * 4 + x];
                assert!((got - want).abs() < 1e-6, "({y},{x}): {got} vs {want}");
            }
        }
    }

    #[test]
    fn flips_reverse_and_involute() {
        let src = vec![1.0f64, 2.0];
        assert_eq!(flip_plane(&src, 1, 2, FlipAxis::Horizontal), vec![2.0, 1.0]);
        let col = vec![1.0f64, 2.0];
        assert_eq!(flip_plane(&col, 2, 1, FlipAxis::Vertical), vec![2.0, 1.0]);

        let clip = test_clip(7, 9);
        for axis in [FlipAxis::Horizontal, FlipAxis::Vertical] {
            assert_eq!(flip_clip(&flip_clip(&clip, axis), axis), clip);
        }
    }

    #[test]
    fn rotate_zero_is_identity() {
        let src: Vec<f64> = (0..64).map(|i| (i % 9) as f64 / 8.0).collect();
        let out = rotate_plane(&src, 8, 8, 0.0);
        for (a, b) in src.iter().zip(&out) {
            assert!((a - b).abs() < 1e-6);
        }
    }

    #[test]
    fn rotate_180_reverses_both_axes() {
        let src = vec![1.0f64, 2.0, 3.0, 4.0];
        let out = rotate_plane(&src, 2, 2, 180.0);
        let want = [4.0, 3.0, 2.0, 1.0];
        for (a, b) in out.iter().zip(&want) {
            assert!((a - b).abs() < 1e-6, "{out:?}");
        }
    }

    #[test]
    fn rotate_matches_inverse_map_oracle() {
        let src: Vec<f64> = (0..64).map(|i| ((i * 37 + 11) % 64) as f64 / 63.0).collect();
        let angle = 30.0f64;
        let out = rotate_plane(&src, 8, 8, angle);
        let theta = angle.to_radians();
        let (s, c) = theta.sin_cos();
        for y in 0..8 {
            for x in 0..8 {
                let dy = y as f64 - 3.5;
                let dx = x as f64 - 3.5;
                let sx = 3.5 + c * dx + s * dy;
                let sy = 3.5 - s * dx + c * dy;
                let want = bilinear_zero(&src, 8, 8, sy, sx);
                assert!((out[y * 8 + x] - want).abs() < 1e-5);
            }
        }
    }

    #[test]
    fn empty_policy_is_identity() {
        let clip = test_clip(12, 12);
        let out = augment(&clip, &AugmentPolicy::none(), 123);
        assert_eq!(clip, out);
    }

    #[test]
    fn forced_hflip_twice_restores() {
        let clip = test_clip(10, 8);
        let mut policy = AugmentPolicy::none();
        policy.hflip_p = 1.0;
        let once = augment(&clip, &policy, 1);
        let twice = augment(&once, &policy, 999);
        assert_eq!(clip, twice);
    }

    #[test]
    fn fixed_seed_is_bitwise_deterministic() {
        let clip = test_clip(16, 16);
        let policy = AugmentPolicy::default();
        let a = augment(&clip, &policy, 42);
        let b = augment(&clip, &policy, 42);
        assert_eq!(a, b);
        // same geometry out
        assert_eq!((a.channels, a.frames, a.height, a.width), (3, 16, 16, 16));
    }
}
