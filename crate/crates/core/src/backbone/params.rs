use std::collections::BTreeMap;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use sha2::{Digest, Sha256};

use super::spec::{ModelSpec, TapSet};
use crate::error::{Error, Result};
use crate::io::hrt::encode_tensor;
use crate::scalar::Scalar;
use crate::tensor::Tensor;

pub const CLASSIFIER_WEIGHT: &str = "classifier.weight";
pub const CLASSIFIER_BIAS: &str = "classifier.bias";
pub const HEAD_WEIGHT: &str = "head.weight";
pub const HEAD_BIAS: &str = "head.bias";

pub fn conv_weight_name(stage: usize, conv: usize) -> String {
    format!("stage{stage}.conv{conv}.weight")
}

pub fn conv_bias_name(stage: usize, conv: usize) -> String {
    format!("stage{stage}.conv{conv}.bias")
}

/// Named backbone tensors: convolution kernels and biases plus the phase-1 classifier.
#[derive(Debug, Clone, PartialEq)]
pub struct Parameters<T> {
    tensors: BTreeMap<String, Tensor<T>>,
}

impl<T: Scalar> Default for Parameters<T> {
    fn default() -> Self {
        Parameters { tensors: BTreeMap::new() }
    }
}

impl<T: Scalar> Parameters<T> {
    pub fn get(&self, name: &str) -> Result<&Tensor<T>> {
        self.tensors.get(name).ok_or_else(|| Error::input(format!("missing parameter {name}")))
    }

    pub fn get_mut(&mut self, name: &str) -> Result<&mut Tensor<T>> {
        self.tensors.get_mut(name).ok_or_else(|| Error::input(format!("missing parameter {name}")))
    }

    pub fn insert(&mut self, name: impl Into<String>, t: Tensor<T>) {
        self.tensors.insert(name.into(), t);
    }

    pub fn iter(&self) -> impl Iterator<Item = (&String, &Tensor<T>)> {
        self.tensors.iter()
    }

    pub fn len(&self) -> usize {
        self.tensors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tensors.is_empty()
    }

    pub fn cast<U: Scalar>(&self) -> Parameters<U> {
        Parameters { tensors: self.tensors.iter().map(|(k, v)| (k.clone(), v.cast())).collect() }
    }

    /// SHA-256 over names and HRT1 encodings in name order.
    pub fn checksum(&self) -> String {
        let mut h = Sha256::new();
        for (name, t) in &self.tensors {
            h.update((name.len() as u64).to_le_bytes());
            h.update(name.as_bytes());
            h.update(encode_tensor(t));
        }
        hex::encode(h.finalize())
    }

    /// Checks that every tensor the spec needs is present with the right shape.
    pub fn check_against(&self, spec: &ModelSpec) -> Result<()> {
        for (name, shape) in expected_shapes(spec) {
            self.get(&name)?.expect_shape(&shape)?;
        }
        Ok(())
    }
}

fn expected_shapes(spec: &ModelSpec) -> Vec<(String, Vec<usize>)> {
    let mut out = Vec::new();
    let mut in_ch = spec.input_shape[0];
    for (s, stage) in spec.stages.iter().enumerate() {
        for (j, conv) in stage.convs.iter().enumerate() {
            let k = conv.kernel_size;
            out.push((conv_weight_name(s, j), vec![conv.out_channels, in_ch, k, k]));
            out.push((conv_bias_name(s, j), vec![conv.out_channels]));
            in_ch = conv.out_channels;
        }
    }
    out.push((CLASSIFIER_WEIGHT.to_string(), vec![in_ch, spec.class_count]));
    out.push((CLASSIFIER_BIAS.to_string(), vec![spec.class_count]));
    out
}

fn he_normal<T: Scalar>(shape: &[usize], fan_in: usize, rng: &mut ChaCha8Rng) -> Tensor<T> {
    let normal = Normal::new(0.0, (2.0 / fan_in as f64).sqrt()).expect("positive std");
    Tensor::from_fn(shape, |_| T::of(normal.sample(rng)))
}

/// Initializes backbone parameters (He-normal weights, zero biases) and derives the tap set.
pub fn build_model<T: Scalar>(spec: &ModelSpec, seed: u64) -> Result<(Parameters<T>, TapSet)> {
    let taps = spec.tap_set()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut params = Parameters::default();
    for (name, shape) in expected_shapes(spec) {
        let t = if name.ends_with(".bias") {
            Tensor::zeros(&shape)
        } else {
            // conv kernels are [out, in, kh, kw]; dense weights are [in, out]
            let fan_in = if shape.len() == 2 { shape[0] } else { shape[1..].iter().product() };
            he_normal(&shape, fan_in, &mut rng)
        };
        params.insert(name, t);
    }
    Ok((params, taps))
}

/// Phase-2 head: one affine layer over the pooled stack of all tapped maps.
#[derive(Debug, Clone, PartialEq)]
pub struct HeadWeights<T> {
    /// `[N, classes]`; column `c` holds the per-map weights for class `c`.
    pub weight: Tensor<T>,
    pub bias: Tensor<T>,
}

impl<T: Scalar> HeadWeights<T> {
    pub fn init(taps: &TapSet, classes: usize, seed: u64) -> Self {
        let n = taps.total_channels();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        HeadWeights { weight: he_normal(&[n, classes], n, &mut rng), bias: Tensor::zeros(&[classes]) }
    }

    pub fn zeros(taps: &TapSet, classes: usize) -> Self {
        HeadWeights { weight: Tensor::zeros(&[taps.total_channels(), classes]), bias: Tensor::zeros(&[classes]) }
    }

    pub fn map_count(&self) -> usize {
        self.weight.shape()[0]
    }

    pub fn class_count(&self) -> usize {
        self.weight.shape()[1]
    }

    /// Per-map weights for one class.
    pub fn class_weights(&self, class_id: usize) -> Result<Vec<T>> {
        let k = self.class_count();
        if class_id >= k {
            return Err(Error::input(format!("class {class_id} out of range for {k} classes")));
        }
        Ok(self.weight.data().iter().skip(class_id).step_by(k).copied().collect())
    }

    pub fn check_against(&self, taps: &TapSet, classes: usize) -> Result<()> {
        self.weight.expect_shape(&[taps.total_channels(), classes])?;
        self.bias.expect_shape(&[classes])
    }

    pub fn cast<U: Scalar>(&self) -> HeadWeights<U> {
        HeadWeights { weight: self.weight.cast(), bias: self.bias.cast() }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn same_seed_same_parameters() {
        let spec = ModelSpec::default();
        let (a, ta) = build_model::<f32>(&spec, 7).unwrap();
        let (b, _) = build_model::<f32>(&spec, 7).unwrap();
        let (c, _) = build_model::<f32>(&spec, 8).unwrap();
        assert_eq!(a.checksum(), b.checksum());
        assert_ne!(a.checksum(), c.checksum());
        assert_eq!(ta.total_channels(), 112);
        a.check_against(&spec).unwrap();
    }

    #[test]
    fn biases_start_at_zero_and_weights_scale_with_fan_in() {
        let (p, _) = build_model::<f64>(&ModelSpec::default(), 1).unwrap();
        assert!(p.get("stage1.conv0.bias").unwrap().data().iter().all(|&v| v == 0.0));
        let w = p.get("stage2.conv1.weight").unwrap();
        let var = w.data().iter().map(|v| v * v).sum::<f64>() / w.len() as f64;
        let want = 2.0 / (64.0 * 9.0);
        assert!((var / want - 1.0).abs() < 0.1, "variance {var} vs {want}");
    }

    #[test]
    fn class_weights_selects_column() {
        let taps = ModelSpec::desk(&[2], 4, false).tap_set().unwrap();
        let head = HeadWeights {
            weight: Tensor::new(vec![2, 2], vec![1.0f32, 2.0, 3.0, 4.0]).unwrap(),
            bias: Tensor::zeros(&[2]),
        };
        head.check_against(&taps, 2).unwrap();
        assert_eq!(head.class_weights(1).unwrap(), vec![2.0, 4.0]);
        assert!(head.class_weights(2).is_err());
    }
}
