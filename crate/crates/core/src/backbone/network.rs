//! Forward and backward passes through a [`ModelSpec`] network.
//!
//! Phase-1 classification reads the last stage's output through GAP and one
//! dense layer. A pooled stage's output is its tap; the max-pool after the last
//! stage has no consumer and is not executed.

use super::params::{conv_bias_name, conv_weight_name, HeadWeights, Parameters, CLASSIFIER_BIAS, CLASSIFIER_WEIGHT};
use super::spec::{ModelSpec, TapSet};
use crate::error::{Error, Result};
use crate::ops::{
    bilinear_upsample, conv2d_backward, conv2d_forward, dense_backward, dense_forward, gap_backward, gap_forward,
    maxpool_backward, maxpool_forward, relu_backward, relu_forward, softmax, ConvGeometry,
};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

pub struct ForwardOutput<T> {
    pub logits: Tensor<T>,
    /// Pre-max-pool activations in tap order, at native resolution.
    pub taps: Vec<Tensor<T>>,
    /// Output of the last stage, the input of the phase-1 GAP classifier.
    pub features: Tensor<T>,
}

struct StageTrace<T> {
    /// Input of each convolution; `conv_inputs[0]` is the stage input.
    conv_inputs: Vec<Tensor<T>>,
    /// ReLU inputs (convolution output, plus the residual for the last conv when enabled).
    pre_acts: Vec<Tensor<T>>,
    /// Argmax of the max-pool feeding the next stage.
    pool: Option<(Vec<usize>, Vec<usize>)>,
}

/// Cached activations of one traced forward pass, consumed by [`backward`].
#[derive(Default)]
pub struct Trace<T> {
    stages: Vec<StageTrace<T>>,
    features_shape: Vec<usize>,
    pooled: Option<Tensor<T>>,
}

impl<T> Trace<T> {
    pub fn is_empty(&self) -> bool {
        self.stages.is_empty()
    }
}

pub struct Gradients<T> {
    /// Parameter gradients, keyed like [`Parameters`]; empty when not requested.
    pub params: Parameters<T>,
    /// Gradient with respect to each tap, in tap order; `None` for taps below the stopping stage.
    pub taps: Vec<Option<Tensor<T>>>,
}

#[derive(Debug, Clone, Copy)]
pub struct BackwardOptions {
    pub param_grads: bool,
    /// Stop once the gradient reaches the output of this stage.
    pub stop_at_stage: Option<usize>,
}

impl Default for BackwardOptions {
    fn default() -> Self {
        BackwardOptions { param_grads: true, stop_at_stage: None }
    }
}

fn check_images<T: Scalar>(spec: &ModelSpec, images: &Tensor<T>) -> Result<usize> {
    let [b, c, h, w] = images.dims4()?;
    if [c, h, w] != spec.input_shape {
        return Err(Error::input(format!(
            "images are {c}x{h}x{w}, model expects {:?}",
            spec.input_shape
        )));
    }
    Ok(b)
}

fn run<T: Scalar>(
    params: &Parameters<T>,
    spec: &ModelSpec,
    images: &Tensor<T>,
    traced: bool,
) -> Result<(ForwardOutput<T>, Trace<T>)> {
    check_images(spec, images)?;
    let mut trace = Trace::default();
    let mut taps = Vec::new();
    let mut x = images.clone();
    let last = spec.stages.len() - 1;
    for (s, stage) in spec.stages.iter().enumerate() {
        let mut st = StageTrace { conv_inputs: Vec::new(), pre_acts: Vec::new(), pool: None };
        let stage_in = x;
        let mut a = stage_in.clone();
        for (j, conv) in stage.convs.iter().enumerate() {
            let k = params.get(&conv_weight_name(s, j))?;
            let b = params.get(&conv_bias_name(s, j))?;
            let mut pre = conv2d_forward(&a, k, b, ConvGeometry::same(conv.kernel_size))?;
            if stage.residual && j + 1 == stage.convs.len() {
                pre.add_assign(&stage_in)?;
            }
            let next = relu_forward(&pre);
            if traced {
                st.conv_inputs.push(a);
                st.pre_acts.push(pre);
            }
            a = next;
        }
        x = a;
        if stage.pool {
            taps.push(x.clone());
            if s < last {
                let pooled = maxpool_forward(&x, 2, 2)?;
                if traced {
                    st.pool = Some((x.shape().to_vec(), pooled.argmax));
                }
                x = pooled.output;
            }
        }
        if traced {
            trace.stages.push(st);
        }
    }
    let pooled = gap_forward(&x)?;
    let logits = dense_forward(&pooled, params.get(CLASSIFIER_WEIGHT)?, params.get(CLASSIFIER_BIAS)?)?;
    if traced {
        trace.features_shape = x.shape().to_vec();
        trace.pooled = Some(pooled);
    }
    Ok((ForwardOutput { logits, taps, features: x }, trace))
}

/// Inference pass returning phase-1 logits and the tapped activations.
pub fn forward<T: Scalar>(params: &Parameters<T>, spec: &ModelSpec, images: &Tensor<T>) -> Result<ForwardOutput<T>> {
    run(params, spec, images, false).map(|(out, _)| out)
}

/// Forward pass that also records what [`backward`] needs.
pub fn forward_traced<T: Scalar>(
    params: &Parameters<T>,
    spec: &ModelSpec,
    images: &Tensor<T>,
) -> Result<(ForwardOutput<T>, Trace<T>)> {
    run(params, spec, images, true)
}

/// Back-propagates `grad_logits` through a traced forward pass.
pub fn backward<T: Scalar>(
    params: &Parameters<T>,
    spec: &ModelSpec,
    trace: &Trace<T>,
    grad_logits: &Tensor<T>,
    opts: BackwardOptions,
) -> Result<Gradients<T>> {
    let pooled = match &trace.pooled {
        Some(p) if trace.stages.len() == spec.stages.len() => p,
        _ => return Err(Error::Usage("backward needs a trace from forward_traced on this model".into())),
    };
    let batch = pooled.shape()[0];
    grad_logits.expect_shape(&[batch, spec.class_count])?;
    let taps = spec.tap_set()?;
    let mut grads = Parameters::default();
    let mut tap_grads: Vec<Option<Tensor<T>>> = vec![None; taps.len()];

    let dense = dense_backward(pooled, params.get(CLASSIFIER_WEIGHT)?, grad_logits)?;
    if opts.param_grads {
        grads.insert(CLASSIFIER_WEIGHT, dense.weights);
        grads.insert(CLASSIFIER_BIAS, dense.bias);
    }
    let mut g = gap_backward(&trace.features_shape, &dense.input)?;

    for (s, stage) in spec.stages.iter().enumerate().rev() {
        let st = &trace.stages[s];
        if s + 1 < spec.stages.len() {
            if let Some((shape, argmax)) = &st.pool {
                g = maxpool_backward(shape, argmax, &g)?;
            }
        }
        if let Some(t) = taps.position_of_stage(s) {
            tap_grads[t] = Some(g.clone());
        }
        if opts.stop_at_stage == Some(s) {
            break;
        }
        let mut residual_grad = None;
        for (j, conv) in stage.convs.iter().enumerate().rev() {
            let pre = relu_backward(&st.pre_acts[j], &g)?;
            if stage.residual && j + 1 == stage.convs.len() {
                residual_grad = Some(pre.clone());
            }
            let cg = conv2d_backward(
                &st.conv_inputs[j],
                params.get(&conv_weight_name(s, j))?,
                ConvGeometry::same(conv.kernel_size),
                &pre,
            )?;
            if opts.param_grads {
                grads.insert(conv_weight_name(s, j), cg.kernel);
                grads.insert(conv_bias_name(s, j), cg.bias);
            }
            g = cg.input;
        }
        if let Some(r) = residual_grad {
            g.add_assign(&r)?;
        }
    }
    Ok(Gradients { params: grads, taps: tap_grads })
}

/// Upsamples every tap to `out_h x out_w` and concatenates along channels, tap order first.
pub fn concat_features<T: Scalar>(taps: &[Tensor<T>], out_h: usize, out_w: usize) -> Result<Tensor<T>> {
    let first = taps.first().ok_or_else(|| Error::input("no taps to concatenate"))?;
    let batch = first.dims4()?[0];
    let up: Vec<Tensor<T>> = taps.iter().map(|t| bilinear_upsample(t, out_h, out_w)).collect::<Result<_>>()?;
    let mut total = 0;
    for t in &up {
        let [b, c, _, _] = t.dims4()?;
        if b != batch {
            return Err(Error::input("taps disagree on batch size"));
        }
        total += c;
    }
    let plane = out_h * out_w;
    let mut data = Vec::with_capacity(batch * total * plane);
    for b in 0..batch {
        for t in &up {
            let per = t.shape()[1] * plane;
            data.extend_from_slice(&t.data()[b * per..][..per]);
        }
    }
    Tensor::new(vec![batch, total, out_h, out_w], data)
}

/// Phase-2 head input `[B, N]`: per-map means of the upsampled, concatenated tap stack.
///
/// `native_fast_path` averages the taps at native resolution instead; it skips
/// the upsampling and is not what the acceptance runs use.
pub fn head_features<T: Scalar>(
    params: &Parameters<T>,
    spec: &ModelSpec,
    images: &Tensor<T>,
    native_fast_path: bool,
) -> Result<Tensor<T>> {
    let out = forward(params, spec, images)?;
    let [_, h, w] = spec.input_shape;
    if native_fast_path {
        let pooled: Vec<Tensor<T>> = out.taps.iter().map(gap_forward).collect::<Result<_>>()?;
        let batch = pooled[0].shape()[0];
        let total: usize = pooled.iter().map(|p| p.shape()[1]).sum();
        let mut data = Vec::with_capacity(batch * total);
        for b in 0..batch {
            for p in &pooled {
                let c = p.shape()[1];
                data.extend_from_slice(&p.data()[b * c..][..c]);
            }
        }
        return Tensor::new(vec![batch, total], data);
    }
    gap_forward(&concat_features(&out.taps, h, w)?)
}

/// Phase-2 class probabilities `[B, classes]`.
pub fn predict<T: Scalar>(
    params: &Parameters<T>,
    spec: &ModelSpec,
    taps: &TapSet,
    head: &HeadWeights<T>,
    images: &Tensor<T>,
) -> Result<Tensor<T>> {
    head.check_against(taps, spec.class_count)?;
    let feats = head_features(params, spec, images, false)?;
    softmax(&dense_forward(&feats, &head.weight, &head.bias)?)
}

/// Phase-1 (backbone classifier) class probabilities `[B, classes]`.
pub fn predict_backbone<T: Scalar>(params: &Parameters<T>, spec: &ModelSpec, images: &Tensor<T>) -> Result<Tensor<T>> {
    softmax(&forward(params, spec, images)?.logits)
}

/// Index of the largest entry per row; ties go to the lowest class index.
pub fn argmax_rows<T: Scalar>(probs: &Tensor<T>) -> Vec<usize> {
    let k = probs.shape()[1];
    probs
        .data()
        .chunks_exact(k)
        .map(|row| {
            let mut best = 0;
            for (i, &v) in row.iter().enumerate() {
                if v > row[best] {
                    best = i;
                }
            }
            best
        })
        .collect()
}
