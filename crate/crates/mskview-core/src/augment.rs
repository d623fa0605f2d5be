//! Training-time stochastic augmentation: horizontal flip, rotation, and
//! integer translation, one shared transform per exam applied identically to
//! every slice in the stack. Evaluation paths never call into this module.

use crate::exam_store::SliceStack;
use ndarray::Array3;
use rand::Rng;
use serde::{Deserialize, Serialize};

/// Augmentation hyperparameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AugmentConfig {
    pub flip_prob: f64,
    /// Degrees, inclusive.
    pub rotation_range_deg: (f64, f64),
    /// Pixels, inclusive.
    pub shift_range_px: (i32, i32),
    pub enabled: bool,
}

impl Default for AugmentConfig {
    fn default() -> Self {
        AugmentConfig {
            flip_prob: 0.5,
            rotation_range_deg: (-25.0, 25.0),
            shift_range_px: (-25, 25),
            enabled: true,
        }
    }
}

/// One sampled transform.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AugmentParams {
    pub flip: bool,
    pub angle_deg: f64,
    pub shift_x_px: i32,
    pub shift_y_px: i32,
}

impl AugmentParams {
    pub const IDENTITY: AugmentParams = AugmentParams {
        flip: false,
        angle_deg: 0.0,
        shift_x_px: 0,
        shift_y_px: 0,
    };

    pub fn is_identity(&self) -> bool {
        *self == Self::IDENTITY
    }
}

/// Draw one transform. A disabled config yields the identity without
/// consuming randomness.
pub fn sample_augmentation(config: &AugmentConfig, rng: &mut impl Rng) -> AugmentParams {
    if !config.enabled {
        return AugmentParams::IDENTITY;
    }
    AugmentParams {
        flip: rng.gen_bool(config.flip_prob),
        angle_deg: rng.gen_range(config.rotation_range_deg.0..=config.rotation_range_deg.1),
        shift_x_px: rng.gen_range(config.shift_range_px.0..=config.shift_range_px.1),
        shift_y_px: rng.gen_range(config.shift_range_px.0..=config.shift_range_px.1),
    }
}

/// Apply one transform to every slice of a stack: flip, then rotation about
/// the slice center (bilinear), then integer translation. Pixels entering
/// from outside the frame are filled with 0.
pub fn apply_augmentation(stack: &SliceStack<f64>, params: &AugmentParams) -> SliceStack<f64> {
    if params.is_identity() {
        return stack.clone();
    }
    let (s, h, w) = stack.data.dim();
    let cy = (h as f64 - 1.0) / 2.0;
    let cx = (w as f64 - 1.0) / 2.0;
    let theta = params.angle_deg.to_radians();
    let (sin_t, cos_t) = theta.sin_cos();

    let mut out = Array3::<f64>::zeros((s, h, w));
    for slice in 0..s {
        for y in 0..h {
            for x in 0..w {
                // invert the forward chain: un-shift, un-rotate, un-flip
                let xs = x as f64 - params.shift_x_px as f64;
                let ys = y as f64 - params.shift_y_px as f64;
                let dx = xs - cx;
                let dy = ys - cy;
                let xr = cx + cos_t * dx + sin_t * dy;
                let yr = cy - sin_t * dx + cos_t * dy;
                let xf = if params.flip { (w - 1) as f64 - xr } else { xr };
                out[[slice, y, x]] = sample_bilinear(&stack.data, slice, yr, xf);
            }
        }
    }
    SliceStack {
        plane: stack.plane,
        data: out,
    }
}

#[inline]
fn sample_bilinear(data: &Array3<f64>, slice: usize, y: f64, x: f64) -> f64 {
    let (_, h, w) = data.dim();
    if y < -1.0 || x < -1.0 || y > h as f64 || x > w as f64 {
        return 0.0;
    }
    let y0 = y.floor();
    let x0 = x.floor();
    let fy = y - y0;
    let fx = x - x0;
    let fetch = |yy: f64, xx: f64| -> f64 {
        if yy < 0.0 || xx < 0.0 || yy >= h as f64 || xx >= w as f64 {
            0.0
        } else {
            data[[slice, yy as usize, xx as usize]]
        }
    };
    fetch(y0, x0) * (1.0 - fy) * (1.0 - fx)
        + fetch(y0, x0 + 1.0) * (1.0 - fy) * fx
        + fetch(y0 + 1.0, x0) * fy * (1.0 - fx)
        + fetch(y0 + 1.0, x0 + 1.0) * fy * fx
}
