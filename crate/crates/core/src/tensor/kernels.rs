//! Forward and backward kernels on plain tensors.
//!
//! These are tape-free; [`super::Tape`] wires them together. All image
//! kernels take NCHW row-major input.

use super::{s, Scalar, Tensor};
use crate::error::{shape_err, Error, Result};

/// Convolution hyper-parameters. Kernels are square.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ConvSpec {
    pub stride: usize,
    pub pad: usize,
    pub groups: usize,
}

impl ConvSpec {
    pub fn new(stride: usize, pad: usize, groups: usize) -> Self {
        Self {
            stride,
            pad,
            groups,
        }
    }
}

impl Default for ConvSpec {
    fn default() -> Self {
        Self::new(1, 0, 1)
    }
}

pub fn conv_out_size(input: usize, k: usize, stride: usize, pad: usize) -> Option<usize> {
    let padded = input + 2 * pad;
    if padded < k || stride == 0 {
        None
    } else {
        Some((padded - k) / stride + 1)
    }
}

struct ConvGeom {
    n: usize,
    cin: usize,
    h: usize,
    w: usize,
    cout: usize,
    cig: usize,
    cog: usize,
    k: usize,
    oh: usize,
    ow: usize,
}

fn conv_geom<T: Scalar>(x: &Tensor<T>, w: &Tensor<T>, spec: ConvSpec) -> Result<ConvGeom> {
    let (n, cin, h, wd) = x.dims4()?;
    let (cout, cig, k, k2) = w.dims4()?;
    let g = spec.groups;
    if g == 0 || cin % g != 0 {
        return Err(Error::Indivisible {
            count: cin,
            groups: g,
        });
    }
    if cout % g != 0 {
        return Err(Error::Indivisible {
            count: cout,
            groups: g,
        });
    }
    if cig * g != cin {
        return Err(shape_err(
            "conv2d",
            format!("weight expects {} input channels per group, input has {cin}/{g}", cig),
        ));
    }
    if k != k2 || k % 2 == 0 {
        return Err(shape_err("conv2d", format!("kernel {k}x{k2} must be square and odd")));
    }
    let oh = conv_out_size(h, k, spec.stride, spec.pad)
        .ok_or_else(|| shape_err("conv2d", format!("input height {h} too small")))?;
    let ow = conv_out_size(wd, k, spec.stride, spec.pad)
        .ok_or_else(|| shape_err("conv2d", format!("input width {wd} too small")))?;
    Ok(ConvGeom {
        n,
        cin,
        h,
        w: wd,
        cout,
        cig,
        cog: cout / g,
        k,
        oh,
        ow,
    })
}

/// Output positions `lo..hi` whose input index `o*stride + tap - pad` falls
/// inside `0..len`.
#[inline]
fn valid_range(tap: usize, pad: usize, stride: usize, len: usize, out: usize) -> (usize, usize) {
    let lo = if pad > tap {
        (pad - tap).div_ceil(stride)
    } else {
        0
    };
    let hi = if len + pad > tap {
        ((len - 1 + pad - tap) / stride + 1).min(out)
    } else {
        0
    };
    (lo, hi.max(lo))
}

pub fn conv2d_forward<T: Scalar>(
    x: &Tensor<T>,
    w: &Tensor<T>,
    b: Option<&Tensor<T>>,
    spec: ConvSpec,
) -> Result<Tensor<T>> {
    let g = conv_geom(x, w, spec)?;
    if let Some(b) = b {
        if b.len() != g.cout {
            return Err(shape_err("conv2d", format!("bias length {} != {}", b.len(), g.cout)));
        }
    }
    let (st, pad, k) = (spec.stride, spec.pad, g.k);
    let plane_in = g.h * g.w;
    let plane_out = g.oh * g.ow;
    let mut out = vec![T::zero(); g.n * g.cout * plane_out];
    let xd = x.data();
    let wdat = w.data();
    for n in 0..g.n {
        for oc in 0..g.cout {
            let grp = oc / g.cog;
            let op = &mut out[(n * g.cout + oc) * plane_out..][..plane_out];
            if let Some(b) = b {
                op.fill(b.data()[oc]);
            }
            for icl in 0..g.cig {
                let ic = grp * g.cig + icl;
                let ip = &xd[(n * g.cin + ic) * plane_in..][..plane_in];
                for ky in 0..k {
                    let (oy_lo, oy_hi) = valid_range(ky, pad, st, g.h, g.oh);
                    for kx in 0..k {
                        let wv = wdat[((oc * g.cig + icl) * k + ky) * k + kx];
                        if wv == T::zero() {
                            continue;
                        }
                        let (ox_lo, ox_hi) = valid_range(kx, pad, st, g.w, g.ow);
                        for oy in oy_lo..oy_hi {
                            let iy = oy * st + ky - pad;
                            let row_in = &ip[iy * g.w..][..g.w];
                            let row_out = &mut op[oy * g.ow..][..g.ow];
                            if st == 1 {
                                let shift = kx as isize - pad as isize;
                                let src = &row_in[(ox_lo as isize + shift) as usize..]
                                    [..ox_hi - ox_lo];
                                for (o, &v) in row_out[ox_lo..ox_hi].iter_mut().zip(src) {
                                    *o = *o + wv * v;
                                }
                            } else {
                                for ox in ox_lo..ox_hi {
                                    let ix = ox * st + kx - pad;
                                    row_out[ox] = row_out[ox] + wv * row_in[ix];
                                }
                            }
                        }
                    }
                }
            }
        }
    }
    Tensor::new(vec![g.n, g.cout, g.oh, g.ow], out)
}

/// Returns `(grad_x, grad_w, grad_b)` for an upstream gradient `gy`.
pub fn conv2d_backward<T: Scalar>(
    x: &Tensor<T>,
    w: &Tensor<T>,
    with_bias: bool,
    spec: ConvSpec,
    gy: &[T],
) -> Result<(Tensor<T>, Tensor<T>, Option<Tensor<T>>)> {
    let g = conv_geom(x, w, spec)?;
    let (st, pad, k) = (spec.stride, spec.pad, g.k);
    let plane_in = g.h * g.w;
    let plane_out = g.oh * g.ow;
    let mut gx = vec![T::zero(); x.len()];
    let mut gw = vec![T::zero(); w.len()];
    let mut gb = if with_bias {
        Some(vec![T::zero(); g.cout])
    } else {
        None
    };
    let xd = x.data();
    let wdat = w.data();
    for n in 0..g.n {
        for oc in 0..g.cout {
            let grp = oc / g.cog;
            let gp = &gy[(n * g.cout + oc) * plane_out..][..plane_out];
            if let Some(gb) = gb.as_mut() {
                gb[oc] = gb[oc] + gp.iter().copied().sum::<T>();
            }
            for icl in 0..g.cig {
                let ic = grp * g.cig + icl;
                let base_in = (n * g.cin + ic) * plane_in;
                let ip = &xd[base_in..][..plane_in];
                for ky in 0..k {
                    let (oy_lo, oy_hi) = valid_range(ky, pad, st, g.h, g.oh);
                    for kx in 0..k {
                        let widx = ((oc * g.cig + icl) * k + ky) * k + kx;
                        let wv = wdat[widx];
                        let (ox_lo, ox_hi) = valid_range(kx, pad, st, g.w, g.ow);
                        let mut acc = T::zero();
                        for oy in oy_lo..oy_hi {
                            let iy = oy * st + ky - pad;
                            let row_g = &gp[oy * g.ow..][..g.ow];
                            let row_in = &ip[iy * g.w..][..g.w];
                            let row_gx = &mut gx[base_in + iy * g.w..][..g.w];
                            for ox in ox_lo..ox_hi {
                                let ix = ox * st + kx - pad;
                                let gv = row_g[ox];
                                acc = acc + gv * row_in[ix];
                                row_gx[ix] = row_gx[ix] + wv * gv;
                            }
                        }
                        gw[widx] = gw[widx] + acc;
                    }
                }
            }
        }
    }
    Ok((
        Tensor::new(x.shape().to_vec(), gx)?,
        Tensor::new(w.shape().to_vec(), gw)?,
        gb.map(|v| Tensor::new(vec![g.cout], v)).transpose()?,
    ))
}

/// Per-channel batch statistics and the normalized activations they produce.
pub struct BnForward<T> {
    pub out: Tensor<T>,
    pub xhat: Vec<T>,
    pub inv_std: Vec<T>,
    pub mean: Vec<T>,
    /// Biased (population) variance.
    pub var: Vec<T>,
}

fn check_bn<T: Scalar>(x: &Tensor<T>, gamma: &Tensor<T>, beta: &Tensor<T>) -> Result<(usize, usize, usize)> {
    let (n, c, h, w) = x.dims4()?;
    if gamma.len() != c || beta.len() != c {
        return Err(shape_err(
            "batchnorm2d",
            format!("{c} channels but gamma/beta have {}/{}", gamma.len(), beta.len()),
        ));
    }
    Ok((n, c, h * w))
}

/// Normalizes with batch statistics.
pub fn batchnorm_train<T: Scalar>(
    x: &Tensor<T>,
    gamma: &Tensor<T>,
    beta: &Tensor<T>,
    eps: f64,
) -> Result<BnForward<T>> {
    let (n, c, hw) = check_bn(x, gamma, beta)?;
    let m: T = s((n * hw) as f64);
    let xd = x.data();
    let mut mean = vec![T::zero(); c];
    let mut var = vec![T::zero(); c];
    let mut inv_std = vec![T::zero(); c];
    for ch in 0..c {
        let mut acc = T::zero();
        for b in 0..n {
            acc = acc + xd[(b * c + ch) * hw..][..hw].iter().copied().sum::<T>();
        }
        let mu = acc / m;
        let mut sq = T::zero();
        for b in 0..n {
            for &v in &xd[(b * c + ch) * hw..][..hw] {
                let d = v - mu;
                sq = sq + d * d;
            }
        }
        mean[ch] = mu;
        var[ch] = sq / m;
        inv_std[ch] = T::one() / (var[ch] + s(eps)).sqrt();
    }
    let mut xhat = vec![T::zero(); x.len()];
    let mut out = vec![T::zero(); x.len()];
    for b in 0..n {
        for ch in 0..c {
            let off = (b * c + ch) * hw;
            let (g, be, mu, is) = (gamma.data()[ch], beta.data()[ch], mean[ch], inv_std[ch]);
            for i in off..off + hw {
                let xh = (xd[i] - mu) * is;
                xhat[i] = xh;
                out[i] = g * xh + be;
            }
        }
    }
    Ok(BnForward {
        out: Tensor::new(x.shape().to_vec(), out)?,
        xhat,
        inv_std,
        mean,
        var,
    })
}

/// Normalizes with fixed (running) statistics.
pub fn batchnorm_eval<T: Scalar>(
    x: &Tensor<T>,
    gamma: &Tensor<T>,
    beta: &Tensor<T>,
    running_mean: &[T],
    running_var: &[T],
    eps: f64,
) -> Result<BnForward<T>> {
    let (n, c, hw) = check_bn(x, gamma, beta)?;
    if running_mean.len() != c || running_var.len() != c {
        return Err(shape_err("batchnorm2d", "running statistics length"));
    }
    let inv_std: Vec<T> = running_var
        .iter()
        .map(|&v| T::one() / (v + s(eps)).sqrt())
        .collect();
    let xd = x.data();
    let mut xhat = vec![T::zero(); x.len()];
    let mut out = vec![T::zero(); x.len()];
    for b in 0..n {
        for ch in 0..c {
            let off = (b * c + ch) * hw;
            for i in off..off + hw {
                let xh = (xd[i] - running_mean[ch]) * inv_std[ch];
                xhat[i] = xh;
                out[i] = gamma.data()[ch] * xh + beta.data()[ch];
            }
        }
    }
    Ok(BnForward {
        out: Tensor::new(x.shape().to_vec(), out)?,
        xhat,
        inv_std,
        mean: running_mean.to_vec(),
        var: running_var.to_vec(),
    })
}

/// Returns `(grad_x, grad_gamma, grad_beta)`.
pub fn batchnorm_backward<T: Scalar>(
    shape: &[usize],
    gamma: &[T],
    xhat: &[T],
    inv_std: &[T],
    train: bool,
    gy: &[T],
) -> (Vec<T>, Vec<T>, Vec<T>) {
    let (n, c) = (shape[0], shape[1]);
    let hw: usize = shape[2..].iter().product();
    let m: T = s((n * hw) as f64);
    let mut gx = vec![T::zero(); gy.len()];
    let mut ggamma = vec![T::zero(); c];
    let mut gbeta = vec![T::zero(); c];
    for ch in 0..c {
        let (mut sg, mut sgx) = (T::zero(), T::zero());
        for b in 0..n {
            let off = (b * c + ch) * hw;
            for i in off..off + hw {
                sg = sg + gy[i];
                sgx = sgx + gy[i] * xhat[i];
            }
        }
        ggamma[ch] = sgx;
        gbeta[ch] = sg;
        let scale = gamma[ch] * inv_std[ch];
        for b in 0..n {
            let off = (b * c + ch) * hw;
            for i in off..off + hw {
                gx[i] = if train {
                    scale * (gy[i] - sg / m - xhat[i] * sgx / m)
                } else {
                    scale * gy[i]
                };
            }
        }
    }
    (gx, ggamma, gbeta)
}

/// Per-axis interpolation taps for half-pixel-center bilinear resizing.
#[derive(Clone, Debug)]
pub(crate) struct AxisTaps {
    pub i0: Vec<usize>,
    pub i1: Vec<usize>,
    pub w1: Vec<f64>,
}

pub(crate) fn axis_taps(input: usize, output: usize) -> AxisTaps {
    let scale = input as f64 / output as f64;
    let mut taps = AxisTaps {
        i0: Vec::with_capacity(output),
        i1: Vec::with_capacity(output),
        w1: Vec::with_capacity(output),
    };
    for o in 0..output {
        let src = ((o as f64 + 0.5) * scale - 0.5).max(0.0);
        let lo = (src.floor() as usize).min(input - 1);
        let hi = (lo + 1).min(input - 1);
        taps.i0.push(lo);
        taps.i1.push(hi);
        taps.w1.push(if hi == lo { 0.0 } else { src - lo as f64 });
    }
    taps
}

/// Bilinear resize of the last two axes (half-pixel centers, edge clamped).
pub fn resize_bilinear<T: Scalar>(x: &Tensor<T>, out_h: usize, out_w: usize) -> Result<Tensor<T>> {
    let (n, c, h, w) = x.dims4()?;
    if out_h == 0 || out_w == 0 || h == 0 || w == 0 {
        return Err(shape_err("resize_bilinear", "zero-sized extent"));
    }
    if out_h == h && out_w == w {
        return Ok(x.clone());
    }
    let ty = axis_taps(h, out_h);
    let tx = axis_taps(w, out_w);
    let mut out = vec![T::zero(); n * c * out_h * out_w];
    for (plane, dst) in x.data().chunks(h * w).zip(out.chunks_mut(out_h * out_w)) {
        for oy in 0..out_h {
            let (y0, y1, wy) = (ty.i0[oy], ty.i1[oy], s::<T>(ty.w1[oy]));
            for ox in 0..out_w {
                let (x0, x1, wx) = (tx.i0[ox], tx.i1[ox], s::<T>(tx.w1[ox]));
                let top = plane[y0 * w + x0] * (T::one() - wx) + plane[y0 * w + x1] * wx;
                let bot = plane[y1 * w + x0] * (T::one() - wx) + plane[y1 * w + x1] * wx;
                dst[oy * out_w + ox] = top * (T::one() - wy) + bot * wy;
            }
        }
    }
    Tensor::new(vec![n, c, out_h, out_w], out)
}

pub fn resize_bilinear_backward<T: Scalar>(in_shape: &[usize], out_h: usize, out_w: usize, gy: &[T]) -> Vec<T> {
    let (h, w) = (in_shape[2], in_shape[3]);
    let total: usize = in_shape.iter().product();
    if out_h == h && out_w == w {
        return gy.to_vec();
    }
    let ty = axis_taps(h, out_h);
    let tx = axis_taps(w, out_w);
    let mut gx = vec![T::zero(); total];
    for (dst, src) in gx.chunks_mut(h * w).zip(gy.chunks(out_h * out_w)) {
        for oy in 0..out_h {
            let (y0, y1, wy) = (ty.i0[oy], ty.i1[oy], s::<T>(ty.w1[oy]));
            for ox in 0..out_w {
                let (x0, x1, wx) = (tx.i0[ox], tx.i1[ox], s::<T>(tx.w1[ox]));
                let g = src[oy * out_w + ox];
                let gt = g * (T::one() - wy);
                let gb = g * wy;
                dst[y0 * w + x0] = dst[y0 * w + x0] + gt * (T::one() - wx);
                dst[y0 * w + x1] = dst[y0 * w + x1] + gt * wx;
                dst[y1 * w + x0] = dst[y1 * w + x0] + gb * (T::one() - wx);
                dst[y1 * w + x1] = dst[y1 * w + x1] + gb * wx;
            }
        }
    }
    gx
}

/// Window `[start, end)` along one axis for output index `o`, clipped to the
/// input extent.
#[inline]
fn pool_window(o: usize, k: usize, stride: usize, pad: usize, len: usize) -> (usize, usize) {
    let start = (o * stride) as isize - pad as isize;
    let end = start + k as isize;
    (start.max(0) as usize, (end.max(0) as usize).min(len))
}

/// Average pooling that excludes zero padding from the divisor.
///
/// The window is a rectangle, so sums and valid-cell counts factor into a
/// row pass followed by a column pass.
pub fn avgpool2d<T: Scalar>(x: &Tensor<T>, k: usize, stride: usize, pad: usize) -> Result<Tensor<T>> {
    let (n, c, h, w) = x.dims4()?;
    if k == 0 || stride == 0 || pad >= k {
        return Err(shape_err("avgpool2d", format!("k={k} stride={stride} pad={pad}")));
    }
    let oh = conv_out_size(h, k, stride, pad).ok_or_else(|| shape_err("avgpool2d", "input too small"))?;
    let ow = conv_out_size(w, k, stride, pad).ok_or_else(|| shape_err("avgpool2d", "input too small"))?;
    let wx: Vec<_> = (0..ow).map(|o| pool_window(o, k, stride, pad, w)).collect();
    let wy: Vec<_> = (0..oh).map(|o| pool_window(o, k, stride, pad, h)).collect();
    let mut out = vec![T::zero(); n * c * oh * ow];
    let mut rows = vec![T::zero(); h * ow];
    for (plane, dst) in x.data().chunks(h * w).zip(out.chunks_mut(oh * ow)) {
        for y in 0..h {
            let row = &plane[y * w..][..w];
            for (ox, &(a, b)) in wx.iter().enumerate() {
                rows[y * ow + ox] = row[a..b].iter().copied().sum();
            }
        }
        for (oy, &(a, b)) in wy.iter().enumerate() {
            for (ox, &(xa, xb)) in wx.iter().enumerate() {
                let mut acc = T::zero();
                for y in a..b {
                    acc = acc + rows[y * ow + ox];
                }
                let count = (b - a) * (xb - xa);
                dst[oy * ow + ox] = if count == 0 {
                    T::zero()
                } else {
                    acc / s((count) as f64)
                };
            }
        }
    }
    Tensor::new(vec![n, c, oh, ow], out)
}

pub fn avgpool2d_backward<T: Scalar>(
    in_shape: &[usize],
    out_shape: &[usize],
    k: usize,
    stride: usize,
    pad: usize,
    gy: &[T],
) -> Vec<T> {
    let (h, w) = (in_shape[2], in_shape[3]);
    let (oh, ow) = (out_shape[2], out_shape[3]);
    let wx: Vec<_> = (0..ow).map(|o| pool_window(o, k, stride, pad, w)).collect();
    let wy: Vec<_> = (0..oh).map(|o| pool_window(o, k, stride, pad, h)).collect();
    let total: usize = in_shape.iter().product();
    let mut gx = vec![T::zero(); total];
    let mut rows = vec![T::zero(); h * ow];
    for (dst, src) in gx.chunks_mut(h * w).zip(gy.chunks(oh * ow)) {
        rows.iter_mut().for_each(|v| *v = T::zero());
        for (oy, &(a, b)) in wy.iter().enumerate() {
            for (ox, &(xa, xb)) in wx.iter().enumerate() {
                let count = (b - a) * (xb - xa);
                if count == 0 {
                    continue;
                }
                let g = src[oy * ow + ox] / s(count as f64);
                for y in a..b {
                    rows[y * ow + ox] = rows[y * ow + ox] + g;
                }
            }
        }
        for y in 0..h {
            for (ox, &(a, b)) in wx.iter().enumerate() {
                let g = rows[y * ow + ox];
                for v in &mut dst[y * w + a..y * w + b] {
                    *v = *v + g;
                }
            }
        }
    }
    gx
}

/// Output channel `j` is input channel `index[j]`.
pub fn gather_channels<T: Scalar>(x: &Tensor<T>, index: &[usize]) -> Result<Tensor<T>> {
    let (n, c, h, w) = x.dims4()?;
    if let Some(&bad) = index.iter().find(|&&i| i >= c) {
        return Err(shape_err("gather_channels", format!("channel {bad} of {c}")));
    }
    let hw = h * w;
    let mut out = Vec::with_capacity(n * index.len() * hw);
    for b in 0..n {
        for &ic in index {
            out.extend_from_slice(&x.data()[(b * c + ic) * hw..][..hw]);
        }
    }
    Tensor::new(vec![n, index.len(), h, w], out)
}

pub fn concat_channels<T: Scalar>(parts: &[&Tensor<T>]) -> Result<Tensor<T>> {
    let first = parts.first().ok_or_else(|| shape_err("concat", "no inputs"))?;
    let (n, _, h, w) = first.dims4()?;
    let mut c_total = 0;
    for p in parts {
        let (pn, pc, ph, pw) = p.dims4()?;
        if (pn, ph, pw) != (n, h, w) {
            return Err(shape_err(
                "concat",
                format!("{:?} vs {:?}", first.shape(), p.shape()),
            ));
        }
        c_total += pc;
    }
    let hw = h * w;
    let mut out = Vec::with_capacity(n * c_total * hw);
    for b in 0..n {
        for p in parts {
            let pc = p.shape()[1];
            out.extend_from_slice(&p.data()[b * pc * hw..][..pc * hw]);
        }
    }
    Tensor::new(vec![n, c_total, h, w], out)
}

/// Splits the channel axis into `groups` equal contiguous blocks.
pub fn split_channels<T: Scalar>(x: &Tensor<T>, groups: usize) -> Result<Vec<Tensor<T>>> {
    let (_, c, _, _) = x.dims4()?;
    if groups == 0 || c % groups != 0 {
        return Err(Error::Indivisible { count: c, groups });
    }
    let width = c / groups;
    (0..groups)
        .map(|g| gather_channels(x, &(g * width..(g + 1) * width).collect::<Vec<_>>()))
        .collect()
}
