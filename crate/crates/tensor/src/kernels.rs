//! Forward and backward numeric kernels, independent of the tape.

use crate::tensor::Tensor;

/// `c = a·b (+ c if accumulate)`, with arbitrary row/column strides on `a`, `b`.
#[allow(clippy::too_many_arguments)]
fn gemm(
    m: usize,
    k: usize,
    n: usize,
    a: &[f64],
    rsa: isize,
    csa: isize,
    b: &[f64],
    rsb: isize,
    csb: isize,
    c: &mut [f64],
    accumulate: bool,
) {
    if m == 0 || n == 0 {
        return;
    }
    if k == 0 {
        if !accumulate {
            c[..m * n].fill(0.0);
        }
        return;
    }
    assert!(c.len() >= m * n);
    // SAFETY: callers pass slices covering the strided m×k and k×n extents,
    // and `c` holds at least m×n contiguous row-major elements.
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            1.0,
            a.as_ptr(),
            rsa,
            csa,
            b.as_ptr(),
            rsb,
            csb,
            if accumulate { 1.0 } else { 0.0 },
            c.as_mut_ptr(),
            n as isize,
            1,
        );
    }
}

fn out_extent(size: usize, kernel: usize, pad: usize) -> usize {
    assert!(size + 2 * pad >= kernel, "kernel larger than padded input");
    size + 2 * pad - kernel + 1
}

fn im2col(x: &[f64], c: usize, h: usize, w: usize, k: usize, pad: usize, cols: &mut [f64]) {
    let ho = out_extent(h, k, pad);
    let wo = out_extent(w, k, pad);
    for ci in 0..c {
        let plane = &x[ci * h * w..(ci + 1) * h * w];
        for ky in 0..k {
            for kx in 0..k {
                let row = (ci * k + ky) * k + kx;
                let dst = &mut cols[row * ho * wo..(row + 1) * ho * wo];
                for oy in 0..ho {
                    let iy = oy as isize + ky as isize - pad as isize;
                    let line = &mut dst[oy * wo..(oy + 1) * wo];
                    if iy < 0 || iy >= h as isize {
                        line.fill(0.0);
                        continue;
                    }
                    let src = &plane[iy as usize * w..(iy as usize + 1) * w];
                    for (ox, v) in line.iter_mut().enumerate() {
                        let ix = ox as isize + kx as isize - pad as isize;
                        *v = if ix < 0 || ix >= w as isize {
                            0.0
                        } else {
                            src[ix as usize]
                        };
                    }
                }
            }
        }
    }
}

fn col2im(cols: &[f64], c: usize, h: usize, w: usize, k: usize, pad: usize, x: &mut [f64]) {
    let ho = out_extent(h, k, pad);
    let wo = out_extent(w, k, pad);
    for ci in 0..c {
        let plane = &mut x[ci * h * w..(ci + 1) * h * w];
        for ky in 0..k {
            for kx in 0..k {
                let row = (ci * k + ky) * k + kx;
                let src = &cols[row * ho * wo..(row + 1) * ho * wo];
                for oy in 0..ho {
                    let iy = oy as isize + ky as isize - pad as isize;
                    if iy < 0 || iy >= h as isize {
                        continue;
                    }
                    let dst = &mut plane[iy as usize * w..(iy as usize + 1) * w];
                    for ox in 0..wo {
                        let ix = ox as isize + kx as isize - pad as isize;
                        if ix >= 0 && ix < w as isize {
                            dst[ix as usize] += src[oy * wo + ox];
                        }
                    }
                }
            }
        }
    }
}

fn square_kernel(weight: &Tensor) -> usize {
    let [_, _, kh, kw] = weight.dims();
    assert_eq!(kh, kw, "only square kernels are supported");
    kh
}

/// Stride-1 convolution. `weight` is `[O, C, k, k]`, `bias` is `[1, O, 1, 1]`.
pub fn conv2d(x: &Tensor, weight: &Tensor, bias: Option<&Tensor>, pad: usize) -> Tensor {
    let [n, c, h, w] = x.dims();
    let [o, wc, _, _] = weight.dims();
    assert_eq!(c, wc, "conv2d: input has {c} channels, kernel expects {wc}");
    let k = square_kernel(weight);
    let ho = out_extent(h, k, pad);
    let wo = out_extent(w, k, pad);
    let ckk = c * k * k;
    let direct = k == 1 && pad == 0;
    let mut cols = if direct { Vec::new() } else { vec![0.0; ckk * ho * wo] };
    let mut out = Tensor::zeros([n, o, ho, wo]);
    let in_step = c * h * w;
    let out_step = o * ho * wo;
    for s in 0..n {
        let xs = &x.data()[s * in_step..(s + 1) * in_step];
        let src: &[f64] = if direct {
            xs
        } else {
            im2col(xs, c, h, w, k, pad, &mut cols);
            &cols
        };
        let dst = &mut out.data_mut()[s * out_step..(s + 1) * out_step];
        let hw = (ho * wo) as isize;
        gemm(o, ckk, ho * wo, weight.data(), ckk as isize, 1, src, hw, 1, dst, false);
        if let Some(b) = bias {
            for (oc, plane) in dst.chunks_mut(ho * wo).enumerate() {
                let bv = b.data()[oc];
                plane.iter_mut().for_each(|v| *v += bv);
            }
        }
    }
    out
}

/// Gradients of [`conv2d`] with respect to input, weight and bias.
pub fn conv2d_backward(
    x: &Tensor,
    weight: &Tensor,
    grad_out: &Tensor,
    pad: usize,
) -> (Tensor, Tensor, Tensor) {
    let [n, c, h, w] = x.dims();
    let [o, _, _, _] = weight.dims();
    let k = square_kernel(weight);
    let ho = out_extent(h, k, pad);
    let wo = out_extent(w, k, pad);
    let hw = ho * wo;
    let ckk = c * k * k;
    let direct = k == 1 && pad == 0;
    let mut cols = vec![0.0; ckk * hw];
    let mut dcols = vec![0.0; ckk * hw];
    let mut dx = Tensor::zeros(x.dims());
    let mut dw = Tensor::zeros(weight.dims());
    let mut db = Tensor::zeros([1, o, 1, 1]);
    let in_step = c * h * w;
    let out_step = o * hw;
    for s in 0..n {
        let xs = &x.data()[s * in_step..(s + 1) * in_step];
        let gs = &grad_out.data()[s * out_step..(s + 1) * out_step];
        for (oc, plane) in gs.chunks(hw).enumerate() {
            db.data_mut()[oc] += plane.iter().sum::<f64>();
        }
        let src: &[f64] = if direct {
            xs
        } else {
            im2col(xs, c, h, w, k, pad, &mut cols);
            &cols
        };
        // dW[o, ckk] += dY[o, hw] · colsᵀ[hw, ckk]
        gemm(o, hw, ckk, gs, hw as isize, 1, src, 1, hw as isize, dw.data_mut(), true);
        // dcols[ckk, hw] = Wᵀ[ckk, o] · dY[o, hw]
        let dxs = &mut dx.data_mut()[s * in_step..(s + 1) * in_step];
        if direct {
            gemm(ckk, o, hw, weight.data(), 1, ckk as isize, gs, hw as isize, 1, dxs, false);
        } else {
            gemm(ckk, o, hw, weight.data(), 1, ckk as isize, gs, hw as isize, 1, &mut dcols, false);
            col2im(&dcols, c, h, w, k, pad, dxs);
        }
    }
    (dx, dw, db)
}

/// Transposed convolution with kernel 2 and stride 2. `weight` is `[C, O, 2, 2]`.
pub fn conv_transpose2x2(x: &Tensor, weight: &Tensor, bias: Option<&Tensor>) -> Tensor {
    let [n, c, h, w] = x.dims();
    let [wc, o, kh, kw] = weight.dims();
    assert_eq!(c, wc, "conv_transpose2x2: input has {c} channels, kernel expects {wc}");
    assert_eq!((kh, kw), (2, 2), "conv_transpose2x2 expects a 2×2 kernel");
    let hw = h * w;
    let o4 = o * 4;
    let mut tmp = vec![0.0; o4 * hw];
    let mut out = Tensor::zeros([n, o, 2 * h, 2 * w]);
    for s in 0..n {
        let xs = &x.data()[s * c * hw..(s + 1) * c * hw];
        // tmp[o4, hw] = W'ᵀ[o4, c] · X[c, hw], with W' viewed as [c, o4]
        gemm(o4, c, hw, weight.data(), 1, o4 as isize, xs, hw as isize, 1, &mut tmp, false);
        for oc in 0..o {
            let bv = bias.map_or(0.0, |b| b.data()[oc]);
            for a in 0..2 {
                for b in 0..2 {
                    let row = &tmp[(oc * 4 + a * 2 + b) * hw..(oc * 4 + a * 2 + b + 1) * hw];
                    for i in 0..h {
                        for j in 0..w {
                            out.set(s, oc, 2 * i + a, 2 * j + b, row[i * w + j] + bv);
                        }
                    }
                }
            }
        }
    }
    out
}

pub fn conv_transpose2x2_backward(
    x: &Tensor,
    weight: &Tensor,
    grad_out: &Tensor,
) -> (Tensor, Tensor, Tensor) {
    let [n, c, h, w] = x.dims();
    let [_, o, _, _] = weight.dims();
    let hw = h * w;
    let o4 = o * 4;
    let mut gtmp = vec![0.0; o4 * hw];
    let mut dx = Tensor::zeros(x.dims());
    let mut dw = Tensor::zeros(weight.dims());
    let mut db = Tensor::zeros([1, o, 1, 1]);
    for s in 0..n {
        for oc in 0..o {
            for a in 0..2 {
                for b in 0..2 {
                    let base = (oc * 4 + a * 2 + b) * hw;
                    for i in 0..h {
                        for j in 0..w {
                            let g = grad_out.at(s, oc, 2 * i + a, 2 * j + b);
                            gtmp[base + i * w + j] = g;
                            db.data_mut()[oc] += g;
                        }
                    }
                }
            }
        }
        let xs = &x.data()[s * c * hw..(s + 1) * c * hw];
        // dX[c, hw] = W'[c, o4] · G[o4, hw]
        let dxs = &mut dx.data_mut()[s * c * hw..(s + 1) * c * hw];
        gemm(c, o4, hw, weight.data(), o4 as isize, 1, &gtmp, hw as isize, 1, dxs, false);
        // dW'[c, o4] += X[c, hw] · Gᵀ[hw, o4]
        gemm(c, hw, o4, xs, hw as isize, 1, &gtmp, 1, hw as isize, dw.data_mut(), true);
    }
    (dx, dw, db)
}

/// Per-channel 2×2 stride-2 convolution. `weight` is `[1, C, 2, 2]`, `bias` `[1, C, 1, 1]`.
pub fn depthwise2x2(x: &Tensor, weight: &Tensor, bias: &Tensor) -> Tensor {
    let [n, c, h, w] = x.dims();
    assert_eq!(weight.dims(), [1, c, 2, 2], "depthwise2x2 kernel shape");
    assert!(h % 2 == 0 && w % 2 == 0, "depthwise2x2 needs even spatial dims, got {h}×{w}");
    let (ho, wo) = (h / 2, w / 2);
    Tensor::from_fn([n, c, ho, wo], |s, ch, i, j| {
        let k = |a: usize, b: usize| weight.at(0, ch, a, b);
        k(0, 0) * x.at(s, ch, 2 * i, 2 * j)
            + k(0, 1) * x.at(s, ch, 2 * i, 2 * j + 1)
            + k(1, 0) * x.at(s, ch, 2 * i + 1, 2 * j)
            + k(1, 1) * x.at(s, ch, 2 * i + 1, 2 * j + 1)
            + bias.data()[ch]
    })
}

pub fn depthwise2x2_backward(
    x: &Tensor,
    weight: &Tensor,
    grad_out: &Tensor,
) -> (Tensor, Tensor, Tensor) {
    let [n, c, ho, wo] = grad_out.dims();
    let mut dx = Tensor::zeros(x.dims());
    let mut dw = Tensor::zeros(weight.dims());
    let mut db = Tensor::zeros([1, c, 1, 1]);
    for s in 0..n {
        for ch in 0..c {
            for i in 0..ho {
                for j in 0..wo {
                    let g = grad_out.at(s, ch, i, j);
                    db.data_mut()[ch] += g;
                    for a in 0..2 {
                        for b in 0..2 {
                            let (y, xx) = (2 * i + a, 2 * j + b);
                            let wi = dw.offset(0, ch, a, b);
                            dw.data_mut()[wi] += g * x.at(s, ch, y, xx);
                            let xi = dx.offset(s, ch, y, xx);
                            dx.data_mut()[xi] += g * weight.at(0, ch, a, b);
                        }
                    }
                }
            }
        }
    }
    (dx, dw, db)
}

/// Max pooling with kernel = stride = `k`. Returns the output and the flat
/// input index of each selected maximum (first maximum wins ties).
pub fn max_pool(x: &Tensor, k: usize) -> (Tensor, Vec<usize>) {
    let [n, c, h, w] = x.dims();
    assert!(k > 0 && h % k == 0 && w % k == 0, "max_pool: {h}×{w} not divisible by {k}");
    let (ho, wo) = (h / k, w / k);
    let mut out = Tensor::zeros([n, c, ho, wo]);
    let mut argmax = Vec::with_capacity(out.len());
    for s in 0..n {
        for ch in 0..c {
            for i in 0..ho {
                for j in 0..wo {
                    let mut best = f64::NEG_INFINITY;
                    let mut best_idx = x.offset(s, ch, i * k, j * k);
                    for a in 0..k {
                        for b in 0..k {
                            let idx = x.offset(s, ch, i * k + a, j * k + b);
                            let v = x.data()[idx];
                            if v > best {
                                best = v;
                                best_idx = idx;
                            }
                        }
                    }
                    out.set(s, ch, i, j, best);
                    argmax.push(best_idx);
                }
            }
        }
    }
    (out, argmax)
}

/// Average pooling with kernel = stride = `k`.
pub fn avg_pool(x: &Tensor, k: usize) -> Tensor {
    let [n, c, h, w] = x.dims();
    assert!(k > 0 && h % k == 0 && w % k == 0, "avg_pool: {h}×{w} not divisible by {k}");
    let inv = 1.0 / (k * k) as f64;
    Tensor::from_fn([n, c, h / k, w / k], |s, ch, i, j| {
        let mut acc = 0.0;
        for a in 0..k {
            for b in 0..k {
                acc += x.at(s, ch, i * k + a, j * k + b);
            }
        }
        acc * inv
    })
}

pub fn avg_pool_backward(grad_out: &Tensor, k: usize) -> Tensor {
    let [n, c, ho, wo] = grad_out.dims();
    let inv = 1.0 / (k * k) as f64;
    Tensor::from_fn([n, c, ho * k, wo * k], |s, ch, y, x| {
        grad_out.at(s, ch, y / k, x / k) * inv
    })
}

/// Batch statistics per channel: biased mean and variance over N, H, W.
pub fn channel_moments(x: &Tensor) -> (Vec<f64>, Vec<f64>) {
    let [n, c, _, _] = x.dims();
    let m = (n * x.plane()) as f64;
    let mut mean = vec![0.0; c];
    let mut var = vec![0.0; c];
    for ch in 0..c {
        let mut acc = 0.0;
        for s in 0..n {
            acc += x.plane_slice(s, ch).iter().sum::<f64>();
        }
        let mu = acc / m;
        let mut sq = 0.0;
        for s in 0..n {
            sq += x.plane_slice(s, ch).iter().map(|v| (v - mu) * (v - mu)).sum::<f64>();
        }
        mean[ch] = mu;
        var[ch] = sq / m;
    }
    (mean, var)
}

/// Applies `y = gamma·(x − mean)/sqrt(var + eps) + beta` per channel.
pub fn normalize_channels(
    x: &Tensor,
    mean: &[f64],
    var: &[f64],
    gamma: &Tensor,
    beta: &Tensor,
    eps: f64,
) -> Tensor {
    let [n, c, _, _] = x.dims();
    let mut out = x.clone();
    for ch in 0..c {
        let inv = 1.0 / (var[ch] + eps).sqrt();
        let (g, b) = (gamma.data()[ch], beta.data()[ch]);
        for s in 0..n {
            for v in out.plane_slice_mut(s, ch) {
                *v = g * (*v - mean[ch]) * inv + b;
            }
        }
    }
    out
}

/// Per-pixel maximum across channels, `[N, 1, H, W]`.
pub fn channel_max(x: &Tensor) -> (Tensor, Vec<usize>) {
    let [n, c, h, w] = x.dims();
    let mut out = Tensor::full([n, 1, h, w], f64::NEG_INFINITY);
    let mut arg = vec![0usize; n * h * w];
    for s in 0..n {
        for ch in 0..c {
            for p in 0..h * w {
                let v = x.plane_slice(s, ch)[p];
                let o = &mut out.plane_slice_mut(s, 0)[p];
                if v > *o {
                    *o = v;
                    arg[s * h * w + p] = ch;
                }
            }
        }
    }
    (out, arg)
}

/// Per-pixel mean across channels, `[N, 1, H, W]`.
pub fn channel_mean(x: &Tensor) -> Tensor {
    let [n, c, h, w] = x.dims();
    let mut out = Tensor::zeros([n, 1, h, w]);
    let inv = 1.0 / c as f64;
    for s in 0..n {
        for ch in 0..c {
            let src = x.plane_slice(s, ch).to_vec();
            for (o, v) in out.plane_slice_mut(s, 0).iter_mut().zip(src) {
                *o += v * inv;
            }
        }
    }
    out
}

#[inline]
pub fn sigmoid(v: f64) -> f64 {
    if v >= 0.0 {
        1.0 / (1.0 + (-v).exp())
    } else {
        let e = v.exp();
        e / (1.0 + e)
    }
}
