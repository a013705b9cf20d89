use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

pub struct DenseGrads<T> {
    pub input: Tensor<T>,
    pub weights: Tensor<T>,
    pub bias: Tensor<T>,
}

/// Affine map `[B, N] x [N, K] + [K] -> [B, K]`.
pub fn dense_forward<T: Scalar>(input: &Tensor<T>, weights: &Tensor<T>, bias: &Tensor<T>) -> Result<Tensor<T>> {
    let [b, n] = input.dims2()?;
    let [wn, k] = weights.dims2()?;
    if wn != n {
        return Err(Error::input(format!("dense weights expect {wn} inputs, got {n}")));
    }
    bias.expect_shape(&[k])?;
    let x = input.data();
    let w = weights.data();
    let mut out = Vec::with_capacity(b * k);
    for row in x.chunks_exact(n) {
        for kk in 0..k {
            let mut acc = bias.data()[kk];
            for (i, &xv) in row.iter().enumerate() {
                acc += xv * w[i * k + kk];
            }
            out.push(acc);
        }
    }
    Tensor::new(vec![b, k], out)
}

pub fn dense_backward<T: Scalar>(input: &Tensor<T>, weights: &Tensor<T>, grad_out: &Tensor<T>) -> Result<DenseGrads<T>> {
    let [b, n] = input.dims2()?;
    let [wn, k] = weights.dims2()?;
    if wn != n {
        return Err(Error::input(format!("dense weights expect {wn} inputs, got {n}")));
    }
    grad_out.expect_shape(&[b, k])?;
    let x = input.data();
    let w = weights.data();
    let g = grad_out.data();
    let mut gx = vec![T::zero(); b * n];
    let mut gw = vec![T::zero(); n * k];
    let mut gb = vec![T::zero(); k];
    for bi in 0..b {
        let grow = &g[bi * k..][..k];
        for (kk, &gv) in grow.iter().enumerate() {
            gb[kk] += gv;
        }
        for i in 0..n {
            let xv = x[bi * n + i];
            let mut acc = T::zero();
            for (kk, &gv) in grow.iter().enumerate() {
                gw[i * k + kk] += xv * gv;
                acc += w[i * k + kk] * gv;
            }
            gx[bi * n + i] = acc;
        }
    }
    Ok(DenseGrads {
        input: Tensor::new(vec![b, n], gx)?,
        weights: Tensor::new(vec![n, k], gw)?,
        bias: Tensor::new(vec![k], gb)?,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn identity_passthrough() {
        let x = Tensor::new(vec![2, 3], vec![1.0f32, -2.0, 3.0, 0.5, 0.0, 9.0]).unwrap();
        let eye = Tensor::from_fn(&[3, 3], |i| if i % 4 == 0 { 1.0 } else { 0.0 });
        assert_eq!(dense_forward(&x, &eye, &Tensor::zeros(&[3])).unwrap(), x);
    }

    #[test]
    fn zero_weights_give_bias() {
        let x = Tensor::filled(&[4, 5], 3.0f64);
        let b = Tensor::new(vec![2], vec![0.25, -0.5]).unwrap();
        let y = dense_forward(&x, &Tensor::zeros(&[5, 2]), &b).unwrap();
        assert!(y.data().chunks(2).all(|r| r == [0.25, -0.5]));
    }

    #[test]
    fn rejects_inner_mismatch() {
        let x = Tensor::<f32>::zeros(&[1, 4]);
        assert!(matches!(
            dense_forward(&x, &Tensor::zeros(&[3, 2]), &Tensor::zeros(&[2])),
            Err(Error::Input(_))
        ));
    }
}
