//! Forward and backward kernels for the spatial ops.
//!
//! These are plain functions over [`Tensor4`] values; [`Graph`](super::Graph)
//! wires them into the tape. Convolutions go through im2col + GEMM. Within
//! one output element the reduction order is fixed by the GEMM call shape,
//! so results are bitwise reproducible run to run.

use super::{Element, Shape4, Tensor4};
use crate::error::{Error, Result};

/// Upper bound on the im2col scratch buffer, in elements.
const COL_CHUNK: usize = 1 << 21;

/// Sliding-window geometry shared by im2col and col2im.
#[derive(Clone, Copy, Debug)]
struct Window {
    c: usize,
    h: usize,
    w: usize,
    kh: usize,
    kw: usize,
    stride: usize,
    pad: usize,
    oh: usize,
    ow: usize,
}

impl Window {
    fn k(&self) -> usize {
        self.c * self.kh * self.kw
    }

    fn rows_per_chunk(&self) -> usize {
        (COL_CHUNK / (self.k() * self.ow).max(1)).clamp(1, self.oh)
    }

    /// Source coordinate for output position `o` and tap `t`, if inside.
    #[inline]
    fn src(&self, o: usize, t: usize, extent: usize) -> Option<usize> {
        let v = (o * self.stride + t).checked_sub(self.pad)?;
        (v < extent).then_some(v)
    }
}

/// Fills `cols` (K × rows·ow) from image `x` (c, h, w) for output rows `oy0..oy1`.
fn im2col<T: Element>(x: &[T], g: &Window, oy0: usize, oy1: usize, cols: &mut [T]) {
    let p = (oy1 - oy0) * g.ow;
    for ci in 0..g.c {
        let plane = &x[ci * g.h * g.w..(ci + 1) * g.h * g.w];
        for ky in 0..g.kh {
            for kx in 0..g.kw {
                let row = ((ci * g.kh + ky) * g.kw + kx) * p;
                let dst = &mut cols[row..row + p];
                for (r, oy) in (oy0..oy1).enumerate() {
                    let line = &mut dst[r * g.ow..(r + 1) * g.ow];
                    match g.src(oy, ky, g.h) {
                        None => line.fill(T::zero()),
                        Some(iy) => {
                            let src = &plane[iy * g.w..(iy + 1) * g.w];
                            for (ox, d) in line.iter_mut().enumerate() {
                                *d = match g.src(ox, kx, g.w) {
                                    Some(ix) => src[ix],
                                    None => T::zero(),
                                };
                            }
                        }
                    }
                }
            }
        }
    }
}

/// Scatter-adds `cols` back into image `dx` (c, h, w); adjoint of [`im2col`].
fn col2im<T: Element>(cols: &[T], g: &Window, oy0: usize, oy1: usize, dx: &mut [T]) {
    let p = (oy1 - oy0) * g.ow;
    for ci in 0..g.c {
        let plane = &mut dx[ci * g.h * g.w..(ci + 1) * g.h * g.w];
        for ky in 0..g.kh {
            for kx in 0..g.kw {
                let row = ((ci * g.kh + ky) * g.kw + kx) * p;
                let src = &cols[row..row + p];
                for (r, oy) in (oy0..oy1).enumerate() {
                    let Some(iy) = g.src(oy, ky, g.h) else { continue };
                    let line = &src[r * g.ow..(r + 1) * g.ow];
                    let dst = &mut plane[iy * g.w..(iy + 1) * g.w];
                    for (ox, &v) in line.iter().enumerate() {
                        if let Some(ix) = g.src(ox, kx, g.w) {
                            dst[ix] += v;
                        }
                    }
                }
            }
        }
    }
}

fn check_bias<T: Element>(op: &'static str, bias: Option<&Tensor4<T>>, channels: usize) -> Result<()> {
    if let Some(b) = bias {
        let want = Shape4::new(1, channels, 1, 1);
        if b.shape() != want {
            return Err(Error::ShapeMismatch {
                op,
                lhs: want,
                rhs: b.shape(),
            });
        }
    }
    Ok(())
}

fn add_bias<T: Element>(out: &mut Tensor4<T>, bias: Option<&Tensor4<T>>) {
    if let Some(b) = bias {
        let s = out.shape();
        let plane = s.plane();
        let bd = b.data();
        for (i, chunk) in out.data_mut().chunks_mut(plane).enumerate() {
            let v = bd[i % s.c];
            chunk.iter_mut().for_each(|x| *x += v);
        }
    }
}

/// Per-channel sum of `grad` over batch and space, shaped `(1, c, 1, 1)`.
pub fn bias_grad<T: Element>(grad: &Tensor4<T>) -> Tensor4<T> {
    let s = grad.shape();
    let mut db = vec![T::zero(); s.c];
    for (i, chunk) in grad.data().chunks(s.plane()).enumerate() {
        let mut acc = T::zero();
        for &v in chunk {
            acc += v;
        }
        db[i % s.c] += acc;
    }
    Tensor4::from_vec(Shape4::new(1, s.c, 1, 1), db).expect("bias grad shape")
}

fn conv_window(x: Shape4, w: Shape4, stride: usize, padding: usize) -> Result<Window> {
    if x.c != w.c {
        return Err(Error::ShapeMismatch {
            op: "conv2d",
            lhs: x,
            rhs: w,
        });
    }
    if stride == 0 {
        return Err(Error::Config("conv2d stride must be >= 1".into()));
    }
    let out_dim = |extent: usize, k: usize| -> Result<usize> {
        let span = (extent + 2 * padding)
            .checked_sub(k)
            .ok_or_else(|| Error::Config(format!("conv2d kernel {k} exceeds padded extent {}", extent + 2 * padding)))?;
        if span % stride != 0 {
            return Err(Error::Config(format!(
                "conv2d output dim ({extent} + 2*{padding} - {k}) / {stride} + 1 is not integral"
            )));
        }
        Ok(span / stride + 1)
    };
    Ok(Window {
        c: x.c,
        h: x.h,
        w: x.w,
        kh: w.h,
        kw: w.w,
        stride,
        pad: padding,
        oh: out_dim(x.h, w.h)?,
        ow: out_dim(x.w, w.w)?,
    })
}

/// Zero-padded cross-correlation. `weight` is `(out_c, in_c, kh, kw)`, `bias` is `(1, out_c, 1, 1)`.
pub fn conv2d<T: Element>(
    input: &Tensor4<T>,
    weight: &Tensor4<T>,
    bias: Option<&Tensor4<T>>,
    stride: usize,
    padding: usize,
) -> Result<Tensor4<T>> {
    let xs = input.shape();
    let ws = weight.shape();
    let g = conv_window(xs, ws, stride, padding)?;
    check_bias("conv2d", bias, ws.n)?;
    let oc = ws.n;
    let k = g.k();
    let ohw = g.oh * g.ow;
    let mut out = Tensor4::zeros(Shape4::new(xs.n, oc, g.oh, g.ow));
    let rows = g.rows_per_chunk();
    let mut cols = vec![T::zero(); k * rows * g.ow];
    let in_item = xs.c * xs.plane();
    for n in 0..xs.n {
        let x = &input.data()[n * in_item..(n + 1) * in_item];
        let y = &mut out.data_mut()[n * oc * ohw..(n + 1) * oc * ohw];
        let mut oy0 = 0;
        while oy0 < g.oh {
            let oy1 = (oy0 + rows).min(g.oh);
            let p = (oy1 - oy0) * g.ow;
            im2col(x, &g, oy0, oy1, &mut cols[..k * p]);
            T::gemm(
                oc,
                k,
                p,
                weight.data(),
                k as isize,
                1,
                &cols[..k * p],
                p as isize,
                1,
                false,
                &mut y[oy0 * g.ow..],
                ohw as isize,
                1,
            );
            oy0 = oy1;
        }
    }
    add_bias(&mut out, bias);
    Ok(out)
}

/// Gradients of [`conv2d`] with respect to input and weight; either may be skipped.
pub fn conv2d_backward<T: Element>(
    input: &Tensor4<T>,
    weight: &Tensor4<T>,
    grad_out: &Tensor4<T>,
    stride: usize,
    padding: usize,
    need_input: bool,
    need_weight: bool,
) -> Result<(Option<Tensor4<T>>, Option<Tensor4<T>>)> {
    let xs = input.shape();
    let ws = weight.shape();
    let g = conv_window(xs, ws, stride, padding)?;
    let oc = ws.n;
    let k = g.k();
    let ohw = g.oh * g.ow;
    let mut dx = need_input.then(|| Tensor4::zeros(xs));
    let mut dw = need_weight.then(|| Tensor4::zeros(ws));
    if dx.is_none() && dw.is_none() {
        return Ok((None, None));
    }
    let rows = g.rows_per_chunk();
    let mut cols = vec![T::zero(); k * rows * g.ow];
    let in_item = xs.c * xs.plane();
    for n in 0..xs.n {
        let x = &input.data()[n * in_item..(n + 1) * in_item];
        let dy = &grad_out.data()[n * oc * ohw..(n + 1) * oc * ohw];
        let mut oy0 = 0;
        while oy0 < g.oh {
            let oy1 = (oy0 + rows).min(g.oh);
            let p = (oy1 - oy0) * g.ow;
            let dy_chunk = &dy[oy0 * g.ow..];
            if let Some(dw) = dw.as_mut() {
                im2col(x, &g, oy0, oy1, &mut cols[..k * p]);
                T::gemm(
                    oc,
                    p,
                    k,
                    dy_chunk,
                    ohw as isize,
                    1,
                    &cols[..k * p],
                    1,
                    p as isize,
                    true,
                    dw.data_mut(),
                    k as isize,
                    1,
                );
            }
            if let Some(dx) = dx.as_mut() {
                T::gemm(
                    k,
                    oc,
                    p,
                    weight.data(),
                    1,
                    k as isize,
                    dy_chunk,
                    ohw as isize,
                    1,
                    false,
                    &mut cols[..k * p],
                    p as isize,
                    1,
                );
                col2im(&cols[..k * p], &g, oy0, oy1, &mut dx.data_mut()[n * in_item..(n + 1) * in_item]);
            }
            oy0 = oy1;
        }
    }
    Ok((dx, dw))
}

fn transpose_window(x: Shape4, w: Shape4, stride: usize) -> Result<(Window, Shape4)> {
    if x.c != w.n {
        return Err(Error::ShapeMismatch {
            op: "conv_transpose2d",
            lhs: x,
            rhs: w,
        });
    }
    if stride == 0 {
        return Err(Error::Config("conv_transpose2d stride must be >= 1".into()));
    }
    let out = Shape4::new(x.n, w.c, (x.h - 1) * stride + w.h, (x.w - 1) * stride + w.w);
    let g = Window {
        c: w.c,
        h: out.h,
        w: out.w,
        kh: w.h,
        kw: w.w,
        stride,
        pad: 0,
        oh: x.h,
        ow: x.w,
    };
    Ok((g, out))
}

/// Transposed convolution (adjoint of a zero-padding [`conv2d`] with the same weight).
/// `weight` is `(in_c, out_c, kh, kw)`; output dims are `(in - 1) * stride + k`.
pub fn conv_transpose2d<T: Element>(
    input: &Tensor4<T>,
    weight: &Tensor4<T>,
    bias: Option<&Tensor4<T>>,
    stride: usize,
) -> Result<Tensor4<T>> {
    let xs = input.shape();
    let ws = weight.shape();
    let (g, os) = transpose_window(xs, ws, stride)?;
    check_bias("conv_transpose2d", bias, ws.c)?;
    let ic = xs.c;
    let r = g.k();
    let hw = xs.plane();
    let mut out = Tensor4::zeros(os);
    let mut cols = vec![T::zero(); r * hw];
    let out_item = os.c * os.plane();
    for n in 0..xs.n {
        let x = &input.data()[n * ic * hw..(n + 1) * ic * hw];
        T::gemm(r, ic, hw, weight.data(), 1, r as isize, x, hw as isize, 1, false, &mut cols, hw as isize, 1);
        col2im(&cols, &g, 0, g.oh, &mut out.data_mut()[n * out_item..(n + 1) * out_item]);
    }
    add_bias(&mut out, bias);
    Ok(out)
}

pub fn conv_transpose2d_backward<T: Element>(
    input: &Tensor4<T>,
    weight: &Tensor4<T>,
    grad_out: &Tensor4<T>,
    stride: usize,
    need_input: bool,
    need_weight: bool,
) -> Result<(Option<Tensor4<T>>, Option<Tensor4<T>>)> {
    let xs = input.shape();
    let ws = weight.shape();
    let (g, os) = transpose_window(xs, ws, stride)?;
    let ic = xs.c;
    let r = g.k();
    let hw = xs.plane();
    let mut dx = need_input.then(|| Tensor4::zeros(xs));
    let mut dw = need_weight.then(|| Tensor4::zeros(ws));
    if dx.is_none() && dw.is_none() {
        return Ok((None, None));
    }
    let mut cols = vec![T::zero(); r * hw];
    let out_item = os.c * os.plane();
    for n in 0..xs.n {
        im2col(&grad_out.data()[n * out_item..(n + 1) * out_item], &g, 0, g.oh, &mut cols);
        if let Some(dx) = dx.as_mut() {
            let dst = &mut dx.data_mut()[n * ic * hw..(n + 1) * ic * hw];
            T::gemm(ic, r, hw, weight.data(), r as isize, 1, &cols, hw as isize, 1, false, dst, hw as isize, 1);
        }
        if let Some(dw) = dw.as_mut() {
            let x = &input.data()[n * ic * hw..(n + 1) * ic * hw];
            T::gemm(ic, hw, r, x, hw as isize, 1, &cols, 1, hw as isize, true, dw.data_mut(), r as isize, 1);
        }
    }
    Ok((dx, dw))
}

fn check_divisible(op: &'static str, s: Shape4, k: usize) -> Result<()> {
    if k == 0 {
        return Err(Error::Config(format!("{op} factor must be >= 1")));
    }
    if !s.h.is_multiple_of(k) || !s.w.is_multiple_of(k) {
        return Err(Error::Divisibility {
            height: s.h,
            width: s.w,
            divisor: k,
        });
    }
    Ok(())
}

/// Non-overlapping k×k max pooling. Returns the output and, per output
/// element, the flat input index that won (first maximum in row-major scan).
pub fn maxpool2d<T: Element>(input: &Tensor4<T>, k: usize) -> Result<(Tensor4<T>, Vec<usize>)> {
    let s = input.shape();
    check_divisible("maxpool2d", s, k)?;
    let os = Shape4::new(s.n, s.c, s.h / k, s.w / k);
    let x = input.data();
    let mut out = Vec::with_capacity(os.numel());
    let mut arg = Vec::with_capacity(os.numel());
    for nc in 0..s.n * s.c {
        let base = nc * s.plane();
        for oy in 0..os.h {
            for ox in 0..os.w {
                let mut best = base + oy * k * s.w + ox * k;
                for dy in 0..k {
                    let row = base + (oy * k + dy) * s.w + ox * k;
                    for i in row..row + k {
                        if x[i] > x[best] {
                            best = i;
                        }
                    }
                }
                out.push(x[best]);
                arg.push(best);
            }
        }
    }
    Ok((Tensor4::from_vec(os, out)?, arg))
}

pub fn maxpool2d_backward<T: Element>(input: Shape4, argmax: &[usize], grad_out: &Tensor4<T>) -> Tensor4<T> {
    let mut dx = Tensor4::zeros(input);
    let d = dx.data_mut();
    for (&i, &g) in argmax.iter().zip(grad_out.data()) {
        d[i] += g;
    }
    dx
}

/// Replicates each pixel into a `factor`×`factor` block.
pub fn upsample_nearest<T: Element>(input: &Tensor4<T>, factor: usize) -> Result<Tensor4<T>> {
    if factor == 0 {
        return Err(Error::Config("upsample factor must be >= 1".into()));
    }
    let s = input.shape();
    let os = Shape4::new(s.n, s.c, s.h * factor, s.w * factor);
    let mut out = Vec::with_capacity(os.numel());
    for plane in input.data().chunks(s.plane()) {
        for y in 0..os.h {
            let row = &plane[(y / factor) * s.w..(y / factor + 1) * s.w];
            for &v in row {
                out.extend(std::iter::repeat_n(v, factor));
            }
        }
    }
    Tensor4::from_vec(os, out)
}

/// Sums the gradient over each replicated block.
pub fn upsample_nearest_backward<T: Element>(input: Shape4, factor: usize, grad_out: &Tensor4<T>) -> Tensor4<T> {
    block_reduce(grad_out, input, factor, 1.0)
}

/// Mean over each `factor`×`factor` block.
pub fn avgpool_downsample<T: Element>(input: &Tensor4<T>, factor: usize) -> Result<Tensor4<T>> {
    let s = input.shape();
    check_divisible("avgpool_downsample", s, factor)?;
    let os = Shape4::new(s.n, s.c, s.h / factor, s.w / factor);
    Ok(block_reduce(input, os, factor, (factor * factor) as f64))
}

/// Spreads each output gradient uniformly (÷ factor²) over its block.
pub fn avgpool_downsample_backward<T: Element>(input: Shape4, factor: usize, grad_out: &Tensor4<T>) -> Tensor4<T> {
    let inv = T::one() / T::lit((factor * factor) as f64);
    let up = upsample_nearest(grad_out, factor).expect("factor validated on forward");
    debug_assert_eq!(up.shape(), input);
    up.map(|g| g * inv)
}

/// `Σ / divisor` over each `factor`×`factor` block, summed in row-major order
/// in f64 so that averaging replicated values is exact in f32.
fn block_reduce<T: Element>(input: &Tensor4<T>, out: Shape4, factor: usize, divisor: f64) -> Tensor4<T> {
    let s = input.shape();
    let mut data = Vec::with_capacity(out.numel());
    for plane in input.data().chunks(s.plane()) {
        for oy in 0..out.h {
            for ox in 0..out.w {
                let mut acc = 0.0f64;
                for dy in 0..factor {
                    let row = (oy * factor + dy) * s.w + ox * factor;
                    for &v in &plane[row..row + factor] {
                        acc += v.to_f64().unwrap_or(f64::NAN);
                    }
                }
                data.push(T::lit(acc / divisor));
            }
        }
    }
    Tensor4::from_vec(out, data).expect("block_reduce shape")
}

/// Channel concatenation, `a`'s channels first.
pub fn concat_channels<T: Element>(a: &Tensor4<T>, b: &Tensor4<T>) -> Result<Tensor4<T>> {
    let (sa, sb) = (a.shape(), b.shape());
    if (sa.n, sa.h, sa.w) != (sb.n, sb.h, sb.w) {
        return Err(Error::ShapeMismatch {
            op: "concat_channels",
            lhs: sa,
            rhs: sb,
        });
    }
    let ia = sa.c * sa.plane();
    let ib = sb.c * sb.plane();
    let mut data = Vec::with_capacity(a.numel() + b.numel());
    for n in 0..sa.n {
        data.extend_from_slice(&a.data()[n * ia..(n + 1) * ia]);
        data.extend_from_slice(&b.data()[n * ib..(n + 1) * ib]);
    }
    Tensor4::from_vec(Shape4::new(sa.n, sa.c + sb.c, sa.h, sa.w), data)
}
