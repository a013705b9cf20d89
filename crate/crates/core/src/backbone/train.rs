//! Phase-1 end-to-end training and phase-2 frozen-backbone head training.

use std::collections::BTreeMap;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::augment::{augment, AugmentConfig};
use super::network::{argmax_rows, backward, forward_traced, head_features, BackwardOptions};
use super::params::{build_model, HeadWeights, Parameters};
use super::spec::{ModelSpec, TapSet};
use crate::error::{Error, Result};
use crate::ops::{adam_step, dense_backward, dense_forward, one_hot, softmax_ce, AdamConfig, AdamState};
use crate::scalar::Scalar;
use crate::simdata::Sample;
use crate::tensor::Tensor;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub seed: u64,
    pub augmentation: AugmentConfig,
    /// Phase 2 only: average taps at native resolution instead of the upsampled stack.
    pub native_gap_fast_path: bool,
    /// Phase 2 only: starting point of the head weights.
    pub head_init: HeadInit,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum HeadInit {
    /// All zeros. With two classes the per-class weights then stay exact negatives
    /// of each other, so each class column is purely discriminative.
    #[default]
    Zero,
    /// Fan-in scaled Gaussian, like the backbone's dense layer.
    He,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            learning_rate: 1e-4,
            epochs: 10,
            batch_size: 16,
            seed: 0,
            augmentation: AugmentConfig::default(),
            native_gap_fast_path: false,
            head_init: HeadInit::default(),
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 {
            return Err(Error::config("epochs must be at least 1"));
        }
        if self.batch_size == 0 {
            return Err(Error::config("batch_size must be at least 1"));
        }
        if !(self.learning_rate.is_finite() && self.learning_rate >= 0.0) {
            return Err(Error::config("learning_rate must be finite and non-negative"));
        }
        Ok(())
    }

    fn adam(&self) -> AdamConfig {
        AdamConfig { learning_rate: self.learning_rate, ..AdamConfig::default() }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainLog {
    /// Mean training loss per epoch.
    pub epoch_losses: Vec<f64>,
    /// Training accuracy per epoch, measured on the batches as they were trained.
    pub epoch_accuracy: Vec<f64>,
}

/// Salts keep the shuffling stream independent of the initialization stream.
const SHUFFLE_SALT: u64 = 0x5348_5546;
const HEAD_SALT: u64 = 0x4845_4144;

fn batch_tensor<T: Scalar>(
    samples: &[Sample],
    idx: &[usize],
    aug: &AugmentConfig,
    rng: &mut ChaCha8Rng,
) -> Result<(Tensor<T>, Vec<usize>)> {
    let mut images = Vec::with_capacity(idx.len());
    for &i in idx {
        let s = &samples[i];
        let img = if aug.is_identity() {
            s.image.clone()
        } else {
            augment(&s.image, &s.mask, aug, rng)?.0
        };
        images.push(img.cast::<T>());
    }
    let refs: Vec<&Tensor<T>> = images.iter().collect();
    Ok((Tensor::stack(&refs)?, idx.iter().map(|&i| samples[i].label).collect()))
}

fn check_loss(loss: f64, epoch: usize, batch: usize) -> Result<()> {
    if loss.is_finite() {
        Ok(())
    } else {
        Err(Error::NonFinite { loss, epoch, batch })
    }
}

fn correct(probs_or_logits: &Tensor<impl Scalar>, labels: &[usize]) -> usize {
    argmax_rows(probs_or_logits).iter().zip(labels).filter(|(a, b)| a == b).count()
}

/// Phase 1: trains backbone and classifier end to end from a seeded initialization.
pub fn train_backbone<T: Scalar>(
    samples: &[Sample],
    spec: &ModelSpec,
    cfg: &TrainConfig,
    mut on_epoch: impl FnMut(usize, f64, f64),
) -> Result<(Parameters<T>, TrainLog)> {
    cfg.validate()?;
    if samples.is_empty() {
        return Err(Error::Data("no training samples".into()));
    }
    let (mut params, _) = build_model::<T>(spec, cfg.seed)?;
    let adam = cfg.adam();
    let mut states: BTreeMap<String, AdamState<T>> =
        params.iter().map(|(n, t)| (n.clone(), AdamState::new(t.shape()))).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ SHUFFLE_SALT);
    let mut order: Vec<usize> = (0..samples.len()).collect();
    let mut log = TrainLog::default();

    for epoch in 0..cfg.epochs {
        order.shuffle(&mut rng);
        let (mut loss_sum, mut hits) = (0.0, 0);
        for (bi, idx) in order.chunks(cfg.batch_size).enumerate() {
            let (images, labels) = batch_tensor::<T>(samples, idx, &cfg.augmentation, &mut rng)?;
            let targets = one_hot::<T>(&labels, spec.class_count)?;
            let (out, trace) = forward_traced(&params, spec, &images)?;
            let (loss, grad) = softmax_ce(&out.logits, &targets)?;
            check_loss(loss.as_f64(), epoch, bi)?;
            loss_sum += loss.as_f64() * idx.len() as f64;
            hits += correct(&out.logits, &labels);
            let grads = backward(&params, spec, &trace, &grad, BackwardOptions::default())?;
            for (name, g) in grads.params.iter() {
                let state = states.get_mut(name).expect("state per parameter");
                adam_step(params.get_mut(name)?, g, state, &adam)?;
            }
        }
        let n = samples.len() as f64;
        log.epoch_losses.push(loss_sum / n);
        log.epoch_accuracy.push(hits as f64 / n);
        on_epoch(epoch, loss_sum / n, hits as f64 / n);
    }
    Ok((params, log))
}

/// Head inputs `[n, N]` for the given samples, extracted in chunks of `chunk`.
pub fn extract_head_features<T: Scalar>(
    samples: &[Sample],
    params: &Parameters<T>,
    spec: &ModelSpec,
    chunk: usize,
    native_fast_path: bool,
) -> Result<Tensor<T>> {
    let mut rows: Vec<T> = Vec::new();
    let mut width = 0;
    let idx: Vec<usize> = (0..samples.len()).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    for part in idx.chunks(chunk.max(1)) {
        let (images, _) = batch_tensor::<T>(samples, part, &AugmentConfig::default(), &mut rng)?;
        let f = head_features(params, spec, &images, native_fast_path)?;
        width = f.shape()[1];
        rows.extend_from_slice(f.data());
    }
    Tensor::new(vec![samples.len(), width], rows)
}

/// Phase 2: trains only the head on pooled multi-layer features of a frozen backbone.
///
/// The backbone is borrowed immutably, so it cannot change during this call.
pub fn train_gap_head<T: Scalar>(
    samples: &[Sample],
    params: &Parameters<T>,
    spec: &ModelSpec,
    taps: &TapSet,
    cfg: &TrainConfig,
    mut on_epoch: impl FnMut(usize, f64, f64),
) -> Result<(HeadWeights<T>, TrainLog)> {
    cfg.validate()?;
    if samples.is_empty() {
        return Err(Error::Data("no training samples".into()));
    }
    params.check_against(spec)?;
    let mut head = match cfg.head_init {
        HeadInit::Zero => HeadWeights::<T>::zeros(taps, spec.class_count),
        HeadInit::He => HeadWeights::<T>::init(taps, spec.class_count, cfg.seed ^ HEAD_SALT),
    };
    let adam = cfg.adam();
    let mut w_state = AdamState::new(head.weight.shape());
    let mut b_state = AdamState::new(head.bias.shape());
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ SHUFFLE_SALT);
    let labels: Vec<usize> = samples.iter().map(|s| s.label).collect();
    let augmenting = !cfg.augmentation.is_identity();
    let cached = if augmenting {
        None
    } else {
        Some(extract_head_features(samples, params, spec, cfg.batch_size, cfg.native_gap_fast_path)?)
    };
    let n_feat = taps.total_channels();
    let mut order: Vec<usize> = (0..samples.len()).collect();
    let mut log = TrainLog::default();

    for epoch in 0..cfg.epochs {
        order.shuffle(&mut rng);
        let (mut loss_sum, mut hits) = (0.0, 0);
        for (bi, idx) in order.chunks(cfg.batch_size).enumerate() {
            let feats = match &cached {
                Some(all) => {
                    let mut rows = Vec::with_capacity(idx.len() * n_feat);
                    for &i in idx {
                        rows.extend_from_slice(&all.data()[i * n_feat..][..n_feat]);
                    }
                    Tensor::new(vec![idx.len(), n_feat], rows)?
                }
                None => {
                    let (images, _) = batch_tensor::<T>(samples, idx, &cfg.augmentation, &mut rng)?;
                    head_features(params, spec, &images, cfg.native_gap_fast_path)?
                }
            };
            let batch_labels: Vec<usize> = idx.iter().map(|&i| labels[i]).collect();
            let targets = one_hot::<T>(&batch_labels, spec.class_count)?;
            let logits = dense_forward(&feats, &head.weight, &head.bias)?;
            let (loss, grad) = softmax_ce(&logits, &targets)?;
            check_loss(loss.as_f64(), epoch, bi)?;
            loss_sum += loss.as_f64() * idx.len() as f64;
            hits += correct(&logits, &batch_labels);
            let g = dense_backward(&feats, &head.weight, &grad)?;
            adam_step(&mut head.weight, &g.weights, &mut w_state, &adam)?;
            adam_step(&mut head.bias, &g.bias, &mut b_state, &adam)?;
        }
        let n = samples.len() as f64;
        log.epoch_losses.push(loss_sum / n);
        log.epoch_accuracy.push(hits as f64 / n);
        on_epoch(epoch, loss_sum / n, hits as f64 / n);
    }
    Ok((head, log))
}
