use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

/// Lower clamp on probabilities before taking logs.
pub const LOG_CLAMP: f64 = 1e-12;

/// Row-wise softmax of `[B, K]` logits (max-shifted).
pub fn softmax<T: Scalar>(logits: &Tensor<T>) -> Result<Tensor<T>> {
    let [_, k] = logits.dims2()?;
    let mut out = Vec::with_capacity(logits.len());
    for row in logits.data().chunks_exact(k) {
        let m = row.iter().copied().fold(T::neg_infinity(), T::max);
        let exps: Vec<T> = row.iter().map(|&v| (v - m).exp()).collect();
        let z: T = exps.iter().copied().sum();
        out.extend(exps.into_iter().map(|e| e / z));
    }
    Tensor::new(logits.shape().to_vec(), out)
}

/// Mean categorical cross-entropy and its gradient with respect to the logits.
///
/// With two classes this is the binary form `-(y log p + (1 - y) log(1 - p))` on the
/// class-1 probability. Log arguments are clamped to `[LOG_CLAMP, 1 - LOG_CLAMP]`;
/// the gradient is the unclamped `(p - y) / B`.
pub fn softmax_ce<T: Scalar>(logits: &Tensor<T>, targets: &Tensor<T>) -> Result<(T, Tensor<T>)> {
    let [b, k] = logits.dims2()?;
    targets.expect_shape(&[b, k])?;
    for (n, row) in targets.data().chunks_exact(k).enumerate() {
        let ones = row.iter().filter(|&&v| v == T::one()).count();
        let zeros = row.iter().filter(|&&v| v == T::zero()).count();
        if ones != 1 || zeros != k - 1 {
            return Err(Error::input(format!("target row {n} is not one-hot")));
        }
    }
    let probs = softmax(logits)?;
    let lo = T::of(LOG_CLAMP);
    let hi = T::one() - lo;
    let scale = T::of(b as f64);
    let mut loss = T::zero();
    let mut grad = Vec::with_capacity(b * k);
    for (p, y) in probs.data().iter().zip(targets.data()) {
        if *y == T::one() {
            loss -= p.max(lo).min(hi).ln();
        }
        grad.push((*p - *y) / scale);
    }
    Ok((loss / scale, Tensor::new(vec![b, k], grad)?))
}

/// One-hot `[labels.len(), classes]` targets.
pub fn one_hot<T: Scalar>(labels: &[usize], classes: usize) -> Result<Tensor<T>> {
    let mut t = Tensor::zeros(&[labels.len().max(1), classes]);
    if labels.is_empty() {
        return Err(Error::input("no labels"));
    }
    for (n, &l) in labels.iter().enumerate() {
        if l >= classes {
            return Err(Error::input(format!("label {l} out of range for {classes} classes")));
        }
        t.set(&[n, l], T::one());
    }
    Ok(t)
}
