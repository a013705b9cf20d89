//! Threshold-sweep localization metrics and classification accuracy.

use serde::{Deserialize, Serialize};

use crate::cam::{normalize_cam, CamMap};
use crate::error::{Error, Result};
use crate::mask::Mask;
use crate::par::map_ordered;
use crate::scalar::Scalar;
use crate::simdata::Sample;

/// Sweep thresholds 0.1, 0.2, ..., 0.9.
pub fn thresholds() -> [f64; 9] {
    std::array::from_fn(|i| (i + 1) as f64 / 10.0)
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConfusionCounts {
    pub tp: u64,
    pub fp: u64,
    pub tn: u64,
    pub fn_: u64,
}

impl ConfusionCounts {
    pub fn total(&self) -> u64 {
        self.tp + self.fp + self.tn + self.fn_
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct Rates {
    pub sensitivity: f64,
    pub specificity: f64,
    pub precision: f64,
    pub fallout: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ThresholdRow {
    pub threshold: f64,
    #[serde(flatten)]
    pub rates: Rates,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalMetrics {
    pub per_threshold: Vec<ThresholdRow>,
    pub means: Rates,
}

/// Pixels strictly above `t` are positive. The map must be normalized.
pub fn binarize<T: Scalar>(map: &CamMap<T>, t: f64) -> Result<Mask> {
    if !map.normalized {
        return Err(Error::input("binarize needs a normalized map"));
    }
    let [h, w] = map.values.dims2()?;
    let mut out = Vec::with_capacity(h * w);
    for &v in map.values.data() {
        let v = v.as_f64();
        if !(0.0..=1.0).contains(&v) {
            return Err(Error::input(format!("normalized map holds out-of-range value {v}")));
        }
        out.push(v > t);
    }
    Mask::from_vec(h, w, out)
}

pub fn confusion(predicted: &Mask, truth: &Mask) -> Result<ConfusionCounts> {
    if !predicted.same_shape(truth) {
        return Err(Error::input("prediction and ground truth differ in shape"));
    }
    let mut c = ConfusionCounts::default();
    for (&p, &t) in predicted.data().iter().zip(truth.data()) {
        match (p, t) {
            (true, true) => c.tp += 1,
            (true, false) => c.fp += 1,
            (false, true) => c.fn_ += 1,
            (false, false) => c.tn += 1,
        }
    }
    Ok(c)
}

fn ratio(num: u64, den: u64) -> f64 {
    if den == 0 {
        0.0
    } else {
        num as f64 / den as f64
    }
}

/// Rates from counts; a 0/0 rate is reported as 0. Fall-out is `1 - specificity`
/// whenever there are negatives.
pub fn metrics_from_counts(c: &ConfusionCounts) -> Rates {
    let negatives = c.fp + c.tn;
    let specificity = ratio(c.tn, negatives);
    Rates {
        sensitivity: ratio(c.tp, c.tp + c.fn_),
        specificity,
        precision: ratio(c.tp, c.tp + c.fp),
        fallout: if negatives == 0 { 0.0 } else { 1.0 - specificity },
    }
}

/// Unweighted mean. Fall-out is taken as `1 - mean specificity`, equal to the mean
/// fall-out because every averaged row has negatives.
fn mean_rates<'a>(rows: impl Iterator<Item = &'a Rates>) -> Rates {
    let mut acc = Rates::default();
    let mut n = 0usize;
    for r in rows {
        acc.sensitivity += r.sensitivity;
        acc.specificity += r.specificity;
        acc.precision += r.precision;
        n += 1;
    }
    let n = n.max(1) as f64;
    let specificity = acc.specificity / n;
    Rates {
        sensitivity: acc.sensitivity / n,
        specificity,
        precision: acc.precision / n,
        fallout: 1.0 - specificity,
    }
}

/// Rows for the nine thresholds plus their unweighted means.
pub fn sweep<T: Scalar>(map: &CamMap<T>, mask: &Mask) -> Result<EvalMetrics> {
    let positives = mask.count();
    if positives == 0 || positives == mask.len() {
        return Err(Error::Data(format!(
            "mask has {positives} of {} pixels positive; localization metrics are undefined",
            mask.len()
        )));
    }
    let per_threshold = thresholds()
        .into_iter()
        .map(|t| Ok(ThresholdRow { threshold: t, rates: metrics_from_counts(&confusion(&binarize(map, t)?, mask)?) }))
        .collect::<Result<Vec<_>>>()?;
    let means = mean_rates(per_threshold.iter().map(|r| &r.rates));
    Ok(EvalMetrics { per_threshold, means })
}

/// Averages per-sample sweeps threshold by threshold (in sample order), then across thresholds.
pub fn aggregate(sweeps: &[EvalMetrics]) -> Result<EvalMetrics> {
    if sweeps.is_empty() {
        return Err(Error::Data("no samples to aggregate".into()));
    }
    let per_threshold: Vec<ThresholdRow> = thresholds()
        .iter()
        .enumerate()
        .map(|(i, &t)| ThresholdRow { threshold: t, rates: mean_rates(sweeps.iter().map(|s| &s.per_threshold[i].rates)) })
        .collect();
    let means = mean_rates(per_threshold.iter().map(|r| &r.rates));
    Ok(EvalMetrics { per_threshold, means })
}

/// Dataset-level metrics for one CAM method.
#[derive(Debug, Clone)]
pub struct MethodEval {
    pub metrics: EvalMetrics,
    pub evaluated: usize,
    /// Sample ids skipped because their mask made the metrics undefined.
    pub skipped: Vec<usize>,
}

/// Sweeps every abnormal sample with the map from `cam` and aggregates in sample order.
///
/// Normal samples are ignored: they have no positive ground truth. Raw maps are
/// normalized first. Up to `threads` workers compute maps; the result does not
/// depend on the worker count.
pub fn evaluate_method<T: Scalar>(
    samples: &[Sample],
    threads: usize,
    cam: impl Fn(&Sample) -> Result<CamMap<T>> + Sync,
) -> Result<MethodEval> {
    let abnormal: Vec<&Sample> = samples.iter().filter(|s| s.label == 1).collect();
    let results = map_ordered(&abnormal, threads, |s| {
        let map = cam(s)?;
        let map = if map.normalized { map } else { normalize_cam(&map) };
        match sweep(&map, &s.mask) {
            Ok(m) => Ok(Some(m)),
            Err(Error::Data(_)) => Ok(None),
            Err(e) => Err(e),
        }
    });
    let mut sweeps = Vec::with_capacity(abnormal.len());
    let mut skipped = Vec::new();
    for (s, r) in abnormal.iter().zip(results) {
        match r? {
            Some(m) => sweeps.push(m),
            None => skipped.push(s.id),
        }
    }
    let metrics = aggregate(&sweeps)?;
    Ok(MethodEval { metrics, evaluated: sweeps.len(), skipped })
}

/// Fraction of predictions equal to the labels.
pub fn classification_accuracy(predictions: &[usize], labels: &[usize]) -> Result<f64> {
    if predictions.len() != labels.len() || labels.is_empty() {
        return Err(Error::input("predictions and labels must be non-empty and equally long"));
    }
    let hits = predictions.iter().zip(labels).filter(|(p, l)| p == l).count();
    Ok(hits as f64 / labels.len() as f64)
}
