use crate::error::Result;
use crate::scalar::Scalar;
use crate::tensor::Tensor;

/// Global average pooling `[B, C, H, W] -> [B, C]`.
///
/// Uses a running mean so that a constant map reduces to exactly that constant.
pub fn gap_forward<T: Scalar>(input: &Tensor<T>) -> Result<Tensor<T>> {
    let [b, c, h, w] = input.dims4()?;
    let hw = h * w;
    let out = input
        .data()
        .chunks_exact(hw)
        .map(|plane| {
            let mut mean = T::zero();
            for (n, &v) in plane.iter().enumerate() {
                mean += (v - mean) / T::of((n + 1) as f64);
            }
            mean
        })
        .collect();
    Tensor::new(vec![b, c], out)
}

pub fn gap_backward<T: Scalar>(input_shape: &[usize], grad_out: &Tensor<T>) -> Result<Tensor<T>> {
    let [b, c, h, w]: [usize; 4] = input_shape
        .try_into()
        .map_err(|_| crate::Error::input("gap input must be rank 4"))?;
    grad_out.expect_shape(&[b, c])?;
    let hw = h * w;
    let scale = T::of(hw as f64);
    let mut gx = Vec::with_capacity(b * c * hw);
    for &g in grad_out.data() {
        gx.extend(std::iter::repeat_n(g / scale, hw));
    }
    Tensor::new(input_shape.to_vec(), gx)
}
