//! Class activation maps: the multi-layer high-resolution map and two single-layer baselines.
//!
//! All three return maps at the input image's resolution. The multi-layer map is
//! assembled from feature maps that are already at that resolution; the
//! baselines are computed at their layer's resolution and upsampled afterwards.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::backbone::network::{backward, concat_features, forward, forward_traced, BackwardOptions};
use crate::backbone::params::{HeadWeights, Parameters, CLASSIFIER_WEIGHT};
use crate::backbone::spec::{ModelSpec, TapSet};
use crate::error::{Error, Result};
use crate::ops::bilinear_upsample;
use crate::scalar::Scalar;
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CamMethod {
    HrCam,
    Zhou,
    GradCam,
}

impl CamMethod {
    pub const ALL: [CamMethod; 3] = [CamMethod::HrCam, CamMethod::GradCam, CamMethod::Zhou];

    pub fn name(self) -> &'static str {
        match self {
            CamMethod::HrCam => "hrcam",
            CamMethod::Zhou => "zhou",
            CamMethod::GradCam => "gradcam",
        }
    }
}

impl fmt::Display for CamMethod {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for CamMethod {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "hrcam" | "hr-cam" => Ok(CamMethod::HrCam),
            "zhou" | "cam" => Ok(CamMethod::Zhou),
            "gradcam" | "grad-cam" => Ok(CamMethod::GradCam),
            other => Err(Error::input(format!("unknown CAM method {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CamMap<T> {
    /// `[H, W]` at input resolution.
    pub values: Tensor<T>,
    pub class_id: usize,
    pub method: CamMethod,
    pub normalized: bool,
}

impl<T: Scalar> CamMap<T> {
    pub fn height(&self) -> usize {
        self.values.shape()[0]
    }

    pub fn width(&self) -> usize {
        self.values.shape()[1]
    }
}

/// Accepts `[C, H, W]` or `[1, C, H, W]` and returns a batch of one.
fn single_image<T: Scalar>(image: &Tensor<T>) -> Result<Tensor<T>> {
    match image.shape() {
        &[c, h, w] => image.clone().reshape(&[1, c, h, w]),
        &[1, _, _, _] => Ok(image.clone()),
        s => Err(Error::input(format!("expected one [C, H, W] image, got {s:?}"))),
    }
}

fn check_class(spec: &ModelSpec, class_id: usize) -> Result<()> {
    if class_id >= spec.class_count {
        return Err(Error::input(format!("class {class_id} out of range for {} classes", spec.class_count)));
    }
    Ok(())
}

/// `sum_i weights[i] * maps[i]` over the `[N, H, W]` planes of a `[1, N, H, W]` stack.
fn weighted_sum<T: Scalar>(maps: &Tensor<T>, weights: &[T]) -> Result<Tensor<T>> {
    let [_, n, h, w] = maps.dims4()?;
    if n != weights.len() {
        return Err(Error::input(format!("{} weights for {n} feature maps", weights.len())));
    }
    let mut acc = vec![T::zero(); h * w];
    for (plane, &wt) in maps.data().chunks_exact(h * w).zip(weights) {
        for (a, &v) in acc.iter_mut().zip(plane) {
            *a += wt * v;
        }
    }
    Tensor::new(vec![h, w], acc)
}

/// The `[1, N, H, W]` stack of every tap upsampled to the input resolution.
pub fn feature_stack<T: Scalar>(image: &Tensor<T>, params: &Parameters<T>, spec: &ModelSpec) -> Result<Tensor<T>> {
    let x = single_image(image)?;
    let out = forward(params, spec, &x)?;
    let [_, h, w] = spec.input_shape;
    concat_features(&out.taps, h, w)
}

/// Multi-layer map: head weights of `class_id` applied to the full-resolution feature stack.
///
/// No ReLU and no resampling after the sum.
pub fn hrcam<T: Scalar>(
    image: &Tensor<T>,
    params: &Parameters<T>,
    spec: &ModelSpec,
    taps: &TapSet,
    head: &HeadWeights<T>,
    class_id: usize,
) -> Result<CamMap<T>> {
    check_class(spec, class_id)?;
    head.check_against(taps, spec.class_count)?;
    let stack = feature_stack(image, params, spec)?;
    let values = weighted_sum(&stack, &head.class_weights(class_id)?)?;
    Ok(CamMap { values, class_id, method: CamMethod::HrCam, normalized: false })
}

/// Final-layer map weighted by the phase-1 classifier, then upsampled.
pub fn zhou_cam<T: Scalar>(
    image: &Tensor<T>,
    params: &Parameters<T>,
    spec: &ModelSpec,
    class_id: usize,
) -> Result<CamMap<T>> {
    check_class(spec, class_id)?;
    let x = single_image(image)?;
    let out = forward(params, spec, &x)?;
    let cls = params.get(CLASSIFIER_WEIGHT)?;
    let k = spec.class_count;
    let weights: Vec<T> = cls.data().iter().skip(class_id).step_by(k).copied().collect();
    let raw = weighted_sum(&out.features, &weights)?;
    let [_, h, w] = spec.input_shape;
    Ok(CamMap { values: upsample_plane(&raw, h, w)?, class_id, method: CamMethod::Zhou, normalized: false })
}

fn upsample_plane<T: Scalar>(plane: &Tensor<T>, h: usize, w: usize) -> Result<Tensor<T>> {
    let [ph, pw] = plane.dims2()?;
    bilinear_upsample(&plane.clone().reshape(&[1, 1, ph, pw])?, h, w)?.reshape(&[h, w])
}

/// Default Grad-CAM layer: the penultimate tap (the only tap if there is one).
pub fn default_gradcam_tap(taps: &TapSet) -> usize {
    taps.len().saturating_sub(2)
}

/// Spatially averaged gradients of the class logit with respect to one tap's channels,
/// along with that tap's activations `[1, C, h, w]`.
pub fn gradcam_weights<T: Scalar>(
    image: &Tensor<T>,
    params: &Parameters<T>,
    spec: &ModelSpec,
    class_id: usize,
    tap: usize,
) -> Result<(Vec<T>, Tensor<T>)> {
    check_class(spec, class_id)?;
    let taps = spec.tap_set()?;
    let stage = taps
        .taps
        .get(tap)
        .ok_or_else(|| Error::input(format!("tap {tap} out of range for {} taps", taps.len())))?
        .stage;
    let x = single_image(image)?;
    let (out, trace) = forward_traced(params, spec, &x)?;
    let mut seed = Tensor::zeros(&[1, spec.class_count]);
    seed.set(&[0, class_id], T::one());
    let opts = BackwardOptions { param_grads: false, stop_at_stage: Some(stage) };
    let grads = backward(params, spec, &trace, &seed, opts)?;
    let g = grads.taps[tap].as_ref().expect("gradient reaches the requested tap");
    let [_, c, h, w] = g.dims4()?;
    let alphas = g
        .data()
        .chunks_exact(h * w)
        .map(|plane| plane.iter().copied().sum::<T>() / T::of((h * w) as f64))
        .collect::<Vec<_>>();
    debug_assert_eq!(alphas.len(), c);
    Ok((alphas, out.taps[tap].clone()))
}

/// `ReLU(sum_k alpha_k f_k)` at tap `layer` (default: penultimate), then upsampled.
pub fn grad_cam<T: Scalar>(
    image: &Tensor<T>,
    params: &Parameters<T>,
    spec: &ModelSpec,
    class_id: usize,
    layer: Option<usize>,
) -> Result<CamMap<T>> {
    let tap = layer.unwrap_or_else(|| spec.tap_set().map(|t| default_gradcam_tap(&t)).unwrap_or(0));
    let (alphas, features) = gradcam_weights(image, params, spec, class_id, tap)?;
    let raw = weighted_sum(&features, &alphas)?.map(|v| v.max(T::zero()));
    let [_, h, w] = spec.input_shape;
    Ok(CamMap { values: upsample_plane(&raw, h, w)?, class_id, method: CamMethod::GradCam, normalized: false })
}

/// Min-max scaling to `[0, 1]`. A constant map becomes all zeros.
pub fn normalize_cam<T: Scalar>(map: &CamMap<T>) -> CamMap<T> {
    let lo = map.values.min();
    let hi = map.values.max();
    let range = hi - lo;
    let values = if range > T::zero() && range.is_finite() {
        map.values.map(|v| ((v - lo) / range).min(T::one()))
    } else {
        Tensor::zeros(map.values.shape())
    };
    CamMap { values, class_id: map.class_id, method: map.method, normalized: true }
}
