use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

/// Source coordinate and blend weight along one axis for every output index.
///
/// Half-pixel centers: `src = (i + 0.5) * in / out - 0.5`, clamped to `[0, in - 1]`.
fn axis_taps(input: usize, output: usize) -> Vec<(usize, usize, f64)> {
    let scale = input as f64 / output as f64;
    (0..output)
        .map(|i| {
            let src = ((i as f64 + 0.5) * scale - 0.5).clamp(0.0, (input - 1) as f64);
            let lo = src.floor() as usize;
            let hi = (lo + 1).min(input - 1);
            (lo, hi, src - lo as f64)
        })
        .collect()
}

/// Bilinear resize of `[B, C, h, w]` to `[B, C, out_h, out_w]` with `out >= in`.
///
/// Blends as `a + (b - a) * f`, so constant inputs stay exactly constant.
pub fn bilinear_upsample<T: Scalar>(input: &Tensor<T>, out_h: usize, out_w: usize) -> Result<Tensor<T>> {
    let [b, c, h, w] = input.dims4()?;
    if out_h < h || out_w < w {
        return Err(Error::input(format!("cannot upsample {h}x{w} to smaller {out_h}x{out_w}")));
    }
    if out_h == h && out_w == w {
        return Ok(input.clone());
    }
    let ys = axis_taps(h, out_h);
    let xs: Vec<(usize, usize, T)> = axis_taps(w, out_w).into_iter().map(|(l, r, f)| (l, r, T::of(f))).collect();
    let mut out = Vec::with_capacity(b * c * out_h * out_w);
    for plane in input.data().chunks_exact(h * w) {
        for &(y0, y1, fy) in &ys {
            let fy = T::of(fy);
            let top = &plane[y0 * w..][..w];
            let bot = &plane[y1 * w..][..w];
            for &(x0, x1, fx) in &xs {
                let t = top[x0] + (top[x1] - top[x0]) * fx;
                let u = bot[x0] + (bot[x1] - bot[x0]) * fx;
                out.push(t + (u - t) * fy);
            }
        }
    }
    Tensor::new(vec![b, c, out_h, out_w], out)
}
