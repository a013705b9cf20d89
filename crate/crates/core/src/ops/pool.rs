use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

pub struct MaxPoolOutput<T> {
    pub output: Tensor<T>,
    /// Flat input offset of the winning element for every output element.
    pub argmax: Vec<usize>,
}

/// Max pooling over `[B, C, H, W]`. Ties go to the first maximum in row-major window order.
///
/// Extents must tile exactly: `(H - window)` divisible by `stride`, likewise for `W`.
pub fn maxpool_forward<T: Scalar>(input: &Tensor<T>, window: usize, stride: usize) -> Result<MaxPoolOutput<T>> {
    let [b, c, h, w] = input.dims4()?;
    if window == 0 || stride == 0 {
        return Err(Error::input("pool window and stride must be positive"));
    }
    if h < window || w < window || (h - window) % stride != 0 || (w - window) % stride != 0 {
        return Err(Error::input(format!(
            "{h}x{w} input does not tile with window {window}, stride {stride}"
        )));
    }
    let oh = (h - window) / stride + 1;
    let ow = (w - window) / stride + 1;
    let x = input.data();
    let mut out = Vec::with_capacity(b * c * oh * ow);
    let mut argmax = Vec::with_capacity(b * c * oh * ow);
    for plane in 0..b * c {
        let base = plane * h * w;
        for oy in 0..oh {
            for ox in 0..ow {
                let mut best = base + oy * stride * w + ox * stride;
                for i in 0..window {
                    for j in 0..window {
                        let idx = base + (oy * stride + i) * w + ox * stride + j;
                        if x[idx] > x[best] {
                            best = idx;
                        }
                    }
                }
                out.push(x[best]);
                argmax.push(best);
            }
        }
    }
    Ok(MaxPoolOutput { output: Tensor::new(vec![b, c, oh, ow], out)?, argmax })
}

/// Routes each output gradient to the recorded argmax position.
pub fn maxpool_backward<T: Scalar>(
    input_shape: &[usize],
    argmax: &[usize],
    grad_out: &Tensor<T>,
) -> Result<Tensor<T>> {
    if argmax.len() != grad_out.len() {
        return Err(Error::input("argmax does not match pooled gradient"));
    }
    let mut gx = Tensor::zeros(input_shape);
    let gd = gx.data_mut();
    for (&idx, &g) in argmax.iter().zip(grad_out.data()) {
        gd[idx] += g;
    }
    Ok(gx)
}
