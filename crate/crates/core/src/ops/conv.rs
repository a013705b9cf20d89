//! 2-D convolution over `[B, C, H, W]` inputs.
//!
//! Cross-correlation convention: the kernel is not flipped. Padding is zero.
//! Each output element accumulates `bias` first, then `w * x` terms in
//! `(channel, kernel row, kernel column)` order; padded taps add nothing.
//!
//! Stride 1 runs on register tiles of `KB` output channels by `XB` output
//! columns over a zero-padded copy of the input. Other strides use plain loops.

use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ConvGeometry {
    pub stride: usize,
    pub pad: usize,
}

impl ConvGeometry {
    pub fn same(kernel_size: usize) -> Self {
        ConvGeometry { stride: 1, pad: kernel_size / 2 }
    }

    pub fn output_extent(&self, input: usize, kernel: usize) -> usize {
        (input + 2 * self.pad - kernel) / self.stride + 1
    }

    /// Output positions `o` for which `o * stride + k - pad` lands inside `[0, input)`.
    fn valid_range(&self, k: usize, input: usize, output: usize) -> (usize, usize) {
        let s = self.stride;
        // smallest o with o*s + k >= pad
        let lo = if k >= self.pad { 0 } else { (self.pad - k).div_ceil(s) };
        // largest o with o*s + k - pad <= input - 1
        let limit = input - 1 + self.pad;
        let hi = if k > limit { 0 } else { ((limit - k) / s + 1).min(output) };
        (lo.min(hi), hi)
    }
}

pub struct ConvGrads<T> {
    pub input: Tensor<T>,
    pub kernel: Tensor<T>,
    pub bias: Tensor<T>,
}

fn check_shapes<T: Scalar>(
    input: &Tensor<T>,
    kernel: &Tensor<T>,
    geom: ConvGeometry,
) -> Result<([usize; 4], [usize; 4], usize, usize)> {
    let [b, c, h, w] = input.dims4()?;
    let [k, kc, kh, kw] = kernel.dims4()?;
    if kc != c {
        return Err(Error::input(format!("kernel expects {kc} input channels, input has {c}")));
    }
    if geom.stride == 0 {
        return Err(Error::input("stride must be at least 1"));
    }
    if kh > h + 2 * geom.pad || kw > w + 2 * geom.pad {
        return Err(Error::input(format!(
            "kernel {kh}x{kw} larger than padded input {}x{}",
            h + 2 * geom.pad,
            w + 2 * geom.pad
        )));
    }
    let oh = geom.output_extent(h, kh);
    let ow = geom.output_extent(w, kw);
    Ok(([b, c, h, w], [k, kc, kh, kw], oh, ow))
}

pub fn conv2d_forward<T: Scalar>(
    input: &Tensor<T>,
    kernel: &Tensor<T>,
    bias: &Tensor<T>,
    geom: ConvGeometry,
) -> Result<Tensor<T>> {
    let ([b, c, h, w], [k, _, kh, kw], oh, ow) = check_shapes(input, kernel, geom)?;
    bias.expect_shape(&[k])?;
    if geom.stride == 1 {
        let packed = pack_kernel(kernel.data(), k, c * kh * kw);
        let mut out = vec![T::zero(); b * k * oh * ow];
        for bi in 0..b {
            let xp = pad_item(&input.data()[bi * c * h * w..][..c * h * w], c, h, w, geom.pad);
            let dims = TileDims { c, hp: h + 2 * geom.pad, wp: w + 2 * geom.pad, kh, kw, oh, ow };
            forward_item(&xp, &packed, bias.data(), k, &dims, &mut out[bi * k * oh * ow..][..k * oh * ow]);
        }
        return Tensor::new(vec![b, k, oh, ow], out);
    }
    let s = geom.stride;
    let x = input.data();
    let wt = kernel.data();
    let mut out = vec![T::zero(); b * k * oh * ow];

    for bi in 0..b {
        for ki in 0..k {
            let plane = &mut out[(bi * k + ki) * oh * ow..][..oh * ow];
            plane.fill(bias.data()[ki]);
            for ci in 0..c {
                let src = &x[(bi * c + ci) * h * w..][..h * w];
                for i in 0..kh {
                    let (oy0, oy1) = geom.valid_range(i, h, oh);
                    for j in 0..kw {
                        let wv = wt[((ki * c + ci) * kh + i) * kw + j];
                        let (ox0, ox1) = geom.valid_range(j, w, ow);
                        if ox0 >= ox1 {
                            continue;
                        }
                        for oy in oy0..oy1 {
                            let iy = oy * s + i - geom.pad;
                            let row = &src[iy * w..][..w];
                            let dst = &mut plane[oy * ow..][ox0..ox1];
                            if s == 1 {
                                let ix0 = ox0 + j - geom.pad;
                                for (d, &v) in dst.iter_mut().zip(&row[ix0..ix0 + (ox1 - ox0)]) {
                                    *d += wv * v;
                                }
                            } else {
                                for (n, d) in dst.iter_mut().enumerate() {
                                    *d += wv * row[(ox0 + n) * s + j - geom.pad];
                                }
                            }
                        }
                    }
                }
            }
        }
    }
    Tensor::new(vec![b, k, oh, ow], out)
}

/// Gradients of `sum(grad_out * conv2d_forward(input, kernel, bias))`.
pub fn conv2d_backward<T: Scalar>(
    input: &Tensor<T>,
    kernel: &Tensor<T>,
    geom: ConvGeometry,
    grad_out: &Tensor<T>,
) -> Result<ConvGrads<T>> {
    let ([b, _, _, _], [k, _, kh, kw], oh, ow) = check_shapes(input, kernel, geom)?;
    grad_out.expect_shape(&[b, k, oh, ow])?;
    if geom.stride == 1 && kh == kw && geom.pad < kh {
        return backward_unit_stride(input, kernel, geom.pad, grad_out);
    }
    strided_backward(input, kernel, geom, grad_out)
}

fn strided_backward<T: Scalar>(
    input: &Tensor<T>,
    kernel: &Tensor<T>,
    geom: ConvGeometry,
    grad_out: &Tensor<T>,
) -> Result<ConvGrads<T>> {
    let ([b, c, h, _], [k, _, kh, kw], oh, ow) = check_shapes(input, kernel, geom)?;
    let w = input.shape()[3];
    let s = geom.stride;
    let x = input.data();
    let wt = kernel.data();
    let g = grad_out.data();

    let mut gb = vec![T::zero(); k];
    let mut gk = vec![T::zero(); wt.len()];
    let mut gx = vec![T::zero(); x.len()];

    for bi in 0..b {
        for ki in 0..k {
            let gplane = &g[(bi * k + ki) * oh * ow..][..oh * ow];
            gb[ki] += gplane.iter().copied().sum::<T>();
            for ci in 0..c {
                let src = &x[(bi * c + ci) * h * w..][..h * w];
                let gsrc = &mut gx[(bi * c + ci) * h * w..][..h * w];
                for i in 0..kh {
                    let (oy0, oy1) = geom.valid_range(i, h, oh);
                    for j in 0..kw {
                        let widx = ((ki * c + ci) * kh + i) * kw + j;
                        let wv = wt[widx];
                        let (ox0, ox1) = geom.valid_range(j, w, ow);
                        if ox0 >= ox1 {
                            continue;
                        }
                        let mut acc = T::zero();
                        for oy in oy0..oy1 {
                            let iy = oy * s + i - geom.pad;
                            let grow = &gplane[oy * ow..][ox0..ox1];
                            if s == 1 {
                                let ix0 = ox0 + j - geom.pad;
                                let xrow = &src[iy * w + ix0..][..ox1 - ox0];
                                acc += grow.iter().zip(xrow).map(|(&a, &b)| a * b).sum::<T>();
                                let gxrow = &mut gsrc[iy * w + ix0..][..ox1 - ox0];
                                for (d, &gv) in gxrow.iter_mut().zip(grow) {
                                    *d += wv * gv;
                                }
                            } else {
                                for (n, &gv) in grow.iter().enumerate() {
                                    let ix = (ox0 + n) * s + j - geom.pad;
                                    acc += gv * src[iy * w + ix];
                                    gsrc[iy * w + ix] += wv * gv;
                                }
                            }
                        }
                        gk[widx] += acc;
                    }
                }
            }
        }
    }

    Ok(ConvGrads {
        input: Tensor::new(input.shape().to_vec(), gx)?,
        kernel: Tensor::new(kernel.shape().to_vec(), gk)?,
        bias: Tensor::new(vec![k], gb)?,
    })
}


const KB: usize = 4;
const XB: usize = 8;

struct TileDims {
    c: usize,
    hp: usize,
    wp: usize,
    kh: usize,
    kw: usize,
    oh: usize,
    ow: usize,
}

/// Zero-padded copy of one `[C, H, W]` item.
fn pad_item<T: Scalar>(x: &[T], c: usize, h: usize, w: usize, pad: usize) -> Vec<T> {
    if pad == 0 {
        return x.to_vec();
    }
    let (hp, wp) = (h + 2 * pad, w + 2 * pad);
    let mut out = vec![T::zero(); c * hp * wp];
    for ci in 0..c {
        for y in 0..h {
            out[(ci * hp + y + pad) * wp + pad..][..w].copy_from_slice(&x[(ci * h + y) * w..][..w]);
        }
    }
    out
}

/// Kernel `[K, taps]` regrouped into blocks of `KB` output channels laid out
/// `[taps][KB]`, followed by single-channel blocks for the remainder.
fn pack_kernel<T: Scalar>(wt: &[T], k: usize, taps: usize) -> Vec<T> {
    let mut out = Vec::with_capacity(wt.len());
    let full = k / KB * KB;
    for k0 in (0..full).step_by(KB) {
        for t in 0..taps {
            for kb in 0..KB {
                out.push(wt[(k0 + kb) * taps + t]);
            }
        }
    }
    out.extend_from_slice(&wt[full * taps..]);
    out
}

/// Accumulates one tile of `NK` channels by `NX` columns at output row `oy`, column `ox`.
#[inline(always)]
fn tile<T: Scalar, const NK: usize, const NX: usize>(
    xp: &[T],
    wpk: &[T],
    bias: &[T],
    d: &TileDims,
    oy: usize,
    ox: usize,
) -> [[T; NX]; NK] {
    let mut acc = [[T::zero(); NX]; NK];
    for (a, &b) in acc.iter_mut().zip(bias) {
        *a = [b; NX];
    }
    let mut wi = 0;
    for ci in 0..d.c {
        let plane = &xp[ci * d.hp * d.wp..][..d.hp * d.wp];
        for i in 0..d.kh {
            let row = &plane[(oy + i) * d.wp + ox..];
            for j in 0..d.kw {
                let xv: &[T; NX] = row[j..j + NX].try_into().expect("tile width");
                let wv: &[T; NK] = wpk[wi..wi + NK].try_into().expect("tile height");
                wi += NK;
                for kb in 0..NK {
                    for xb in 0..NX {
                        acc[kb][xb] += wv[kb] * xv[xb];
                    }
                }
            }
        }
    }
    acc
}

fn channel_block<T: Scalar, const NK: usize>(xp: &[T], wpk: &[T], bias: &[T], d: &TileDims, out: &mut [T]) {
    let plane = d.oh * d.ow;
    for oy in 0..d.oh {
        let mut ox = 0;
        while ox + XB <= d.ow {
            let acc = tile::<T, NK, XB>(xp, wpk, bias, d, oy, ox);
            for (kb, a) in acc.iter().enumerate() {
                out[kb * plane + oy * d.ow + ox..][..XB].copy_from_slice(a);
            }
            ox += XB;
        }
        while ox < d.ow {
            let acc = tile::<T, NK, 1>(xp, wpk, bias, d, oy, ox);
            for (kb, a) in acc.iter().enumerate() {
                out[kb * plane + oy * d.ow + ox] = a[0];
            }
            ox += 1;
        }
    }
}

/// Stride-1 correlation of one padded item with a packed kernel into `[K, oh, ow]`.
fn forward_item<T: Scalar>(xp: &[T], packed: &[T], bias: &[T], k: usize, d: &TileDims, out: &mut [T]) {
    let taps = d.c * d.kh * d.kw;
    let plane = d.oh * d.ow;
    let full = k / KB * KB;
    for k0 in (0..full).step_by(KB) {
        let wpk = &packed[k0 * taps..][..KB * taps];
        channel_block::<T, KB>(xp, wpk, &bias[k0..k0 + KB], d, &mut out[k0 * plane..][..KB * plane]);
    }
    for k0 in full..k {
        let wpk = &packed[k0 * taps..][..taps];
        channel_block::<T, 1>(xp, wpk, &bias[k0..k0 + 1], d, &mut out[k0 * plane..][..plane]);
    }
}

/// Kernel gradient at tap `(ci, i, j)` for channels `k0..k0 + NK`, summed over
/// the whole batch with eight interleaved partial sums per channel.
#[inline(always)]
fn kernel_grad_tap<T: Scalar, const NK: usize>(
    g: &[T],
    xps: &[Vec<T>],
    k0: usize,
    (k, ci, i, j): (usize, usize, usize, usize),
    (oh, ow, hp, wp): (usize, usize, usize, usize),
) -> [T; NK] {
    let mut lanes = [[T::zero(); 8]; NK];
    let mut tail = [T::zero(); NK];
    let full = ow / 8 * 8;
    for (bi, xp) in xps.iter().enumerate() {
        let plane = &xp[ci * hp * wp..][..hp * wp];
        let gitem = &g[(bi * k + k0) * oh * ow..][..NK * oh * ow];
        for oy in 0..oh {
            let xrow = &plane[(oy + i) * wp + j..][..ow];
            for (kb, lane) in lanes.iter_mut().enumerate() {
                let grow = &gitem[kb * oh * ow + oy * ow..][..ow];
                for (gc, xc) in grow.chunks_exact(8).zip(xrow.chunks_exact(8)) {
                    for l in 0..8 {
                        lane[l] += gc[l] * xc[l];
                    }
                }
            }
            for x in full..ow {
                for (kb, t) in tail.iter_mut().enumerate() {
                    *t += gitem[kb * oh * ow + oy * ow + x] * xrow[x];
                }
            }
        }
    }
    std::array::from_fn(|kb| lanes[kb].iter().copied().sum::<T>() + tail[kb])
}

fn kernel_grad_block<T: Scalar, const NK: usize>(
    g: &[T],
    xps: &[Vec<T>],
    gk: &mut [T],
    k0: usize,
    [k, c, kh, kw]: [usize; 4],
    dims: (usize, usize, usize, usize),
) {
    for ci in 0..c {
        for i in 0..kh {
            for j in 0..kw {
                let sums = kernel_grad_tap::<T, NK>(g, xps, k0, (k, ci, i, j), dims);
                for (kb, v) in sums.into_iter().enumerate() {
                    gk[(((k0 + kb) * c + ci) * kh + i) * kw + j] = v;
                }
            }
        }
    }
}

/// Stride 1, square kernel, `pad < kernel size`. The input gradient is the
/// correlation of `grad_out` with the flipped, channel-transposed kernel.
fn backward_unit_stride<T: Scalar>(
    input: &Tensor<T>,
    kernel: &Tensor<T>,
    pad: usize,
    grad_out: &Tensor<T>,
) -> Result<ConvGrads<T>> {
    let [b, c, h, w] = input.dims4()?;
    let [k, _, kh, kw] = kernel.dims4()?;
    let [_, _, oh, ow] = grad_out.dims4()?;
    let wt = kernel.data();
    let g = grad_out.data();
    let x = input.data();

    let mut flipped = vec![T::zero(); wt.len()];
    for ki in 0..k {
        for ci in 0..c {
            for i in 0..kh {
                for j in 0..kw {
                    flipped[((ci * k + ki) * kh + kh - 1 - i) * kw + kw - 1 - j] = wt[((ki * c + ci) * kh + i) * kw + j];
                }
            }
        }
    }
    let packed = pack_kernel(&flipped, c, k * kh * kw);
    let zero_bias = vec![T::zero(); c];
    let back_pad = kh - 1 - pad;
    let mut gx = vec![T::zero(); x.len()];
    let mut gk = vec![T::zero(); wt.len()];
    let mut gb = vec![T::zero(); k];
    let (hp, wp) = (h + 2 * pad, w + 2 * pad);

    for bi in 0..b {
        let gitem = &g[bi * k * oh * ow..][..k * oh * ow];
        let gp = pad_item(gitem, k, oh, ow, back_pad);
        let d = TileDims { c: k, hp: oh + 2 * back_pad, wp: ow + 2 * back_pad, kh, kw, oh: h, ow: w };
        forward_item(&gp, &packed, &zero_bias, c, &d, &mut gx[bi * c * h * w..][..c * h * w]);

        for (ki, gb) in gb.iter_mut().enumerate() {
            *gb += gitem[ki * oh * ow..][..oh * ow].iter().copied().sum::<T>();
        }
    }

    let xps: Vec<Vec<T>> = (0..b).map(|bi| pad_item(&x[bi * c * h * w..][..c * h * w], c, h, w, pad)).collect();
    let dims = (oh, ow, hp, wp);
    let full = k / KB * KB;
    for k0 in (0..full).step_by(KB) {
        kernel_grad_block::<T, KB>(g, &xps, &mut gk, k0, [k, c, kh, kw], dims);
    }
    for k0 in full..k {
        kernel_grad_block::<T, 1>(g, &xps, &mut gk, k0, [k, c, kh, kw], dims);
    }

    Ok(ConvGrads {
        input: Tensor::new(input.shape().to_vec(), gx)?,
        kernel: Tensor::new(kernel.shape().to_vec(), gk)?,
        bias: Tensor::new(vec![k], gb)?,
    })
}
