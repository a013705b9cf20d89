//! Paired geometric augmentation of an image and its ground-truth mask.

use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::mask::Mask;
use crate::scalar::Scalar;
use crate::tensor::Tensor;

/// Augmentation ranges. Zero translation/rotation and false flips disable a component.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AugmentConfig {
    /// Maximum integer shift in pixels along each axis.
    pub translate_px: usize,
    pub rotate_deg_max: f64,
    /// Flip horizontally with probability 0.5.
    pub hflip: bool,
    pub vflip: bool,
    /// Background noise used to fill pixels that enter the frame.
    pub fill_mean: f64,
    pub fill_sigma: f64,
}

impl Default for AugmentConfig {
    fn default() -> Self {
        AugmentConfig { translate_px: 0, rotate_deg_max: 0.0, hflip: false, vflip: false, fill_mean: 0.3, fill_sigma: 0.08 }
    }
}

impl AugmentConfig {
    /// Shifts up to 10% of `width`, rotations up to 15 degrees, both flips.
    pub fn standard(width: usize) -> Self {
        AugmentConfig { translate_px: width / 10, rotate_deg_max: 15.0, hflip: true, vflip: true, ..Default::default() }
    }

    pub fn is_identity(&self) -> bool {
        self.translate_px == 0 && self.rotate_deg_max == 0.0 && !self.hflip && !self.vflip
    }

    pub fn sample<R: Rng>(&self, rng: &mut R) -> Transform {
        let t = self.translate_px as i64;
        Transform {
            hflip: self.hflip && rng.random_bool(0.5),
            vflip: self.vflip && rng.random_bool(0.5),
            angle_deg: if self.rotate_deg_max > 0.0 {
                rng.random_range(-self.rotate_deg_max..=self.rotate_deg_max)
            } else {
                0.0
            },
            shift_x: if t > 0 { rng.random_range(-t..=t) } else { 0 },
            shift_y: if t > 0 { rng.random_range(-t..=t) } else { 0 },
        }
    }
}

/// Flip, then rotate about the image center, then shift; nearest-neighbour resampling.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct Transform {
    pub hflip: bool,
    pub vflip: bool,
    pub angle_deg: f64,
    pub shift_x: i64,
    pub shift_y: i64,
}

impl Transform {
    /// Source pixel for output pixel `(y, x)`, or `None` when it falls outside the frame.
    fn source(&self, y: usize, x: usize, h: usize, w: usize) -> Option<(usize, usize)> {
        let mut sy = y as i64 - self.shift_y;
        let mut sx = x as i64 - self.shift_x;
        if self.angle_deg != 0.0 {
            let (cy, cx) = ((h as f64 - 1.0) / 2.0, (w as f64 - 1.0) / 2.0);
            let (sin, cos) = self.angle_deg.to_radians().sin_cos();
            let (dy, dx) = (sy as f64 - cy, sx as f64 - cx);
            // inverse rotation
            sy = (cy + cos * dy - sin * dx).round() as i64;
            sx = (cx + sin * dy + cos * dx).round() as i64;
        }
        if sy < 0 || sx < 0 || sy >= h as i64 || sx >= w as i64 {
            return None;
        }
        let (mut sy, mut sx) = (sy as usize, sx as usize);
        if self.vflip {
            sy = h - 1 - sy;
        }
        if self.hflip {
            sx = w - 1 - sx;
        }
        Some((sy, sx))
    }

    /// Applies the transform to a `[C, H, W]` image and its `H x W` mask.
    pub fn apply<T: Scalar, R: Rng>(
        &self,
        image: &Tensor<T>,
        mask: &Mask,
        fill_mean: f64,
        fill_sigma: f64,
        rng: &mut R,
    ) -> Result<(Tensor<T>, Mask)> {
        let (c, h, w) = match image.shape() {
            &[c, h, w] => (c, h, w),
            s => return Err(Error::input(format!("expected [C, H, W] image, got {s:?}"))),
        };
        if mask.height() != h || mask.width() != w {
            return Err(Error::input("mask and image differ in spatial shape"));
        }
        let noise = Normal::new(fill_mean, fill_sigma.max(0.0)).map_err(|e| Error::config(e.to_string()))?;
        let mut out = Tensor::zeros(image.shape());
        let mut out_mask = Mask::empty(h, w);
        for y in 0..h {
            for x in 0..w {
                match self.source(y, x, h, w) {
                    Some((sy, sx)) => {
                        for ch in 0..c {
                            out.set(&[ch, y, x], image.at(&[ch, sy, sx]));
                        }
                        out_mask.set(y, x, mask.get(sy, sx));
                    }
                    None => {
                        for ch in 0..c {
                            out.set(&[ch, y, x], T::of(noise.sample(rng).clamp(0.0, 1.0)));
                        }
                    }
                }
            }
        }
        Ok((out, out_mask))
    }
}

/// Draws an independent random transform and applies it to both image and mask.
pub fn augment<T: Scalar, R: Rng>(
    image: &Tensor<T>,
    mask: &Mask,
    cfg: &AugmentConfig,
    rng: &mut R,
) -> Result<(Tensor<T>, Mask)> {
    if cfg.is_identity() {
        return Ok((image.clone(), mask.clone()));
    }
    let t = cfg.sample(rng);
    t.apply(image, mask, cfg.fill_mean, cfg.fill_sigma, rng)
}
