//! Forward and backward kernels over flat row-major buffers.
//!
//! Kernels parallelize over independent output planes through [`crate::par`];
//! no kernel reduces across worker threads, so outputs do not depend on the
//! thread count.

use super::tensor::{softmax_into, Real};
use crate::par;

/// Geometry of a stride-1 3-D convolution over `[B, Ci, T, H, W]` inputs.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Conv3dGeom {
    pub batch: usize,
    pub in_ch: usize,
    pub out_ch: usize,
    pub input: [usize; 3],
    pub kernel: [usize; 3],
    pub pad: [usize; 3],
}

impl Conv3dGeom {
    pub fn output(&self) -> [usize; 3] {
        std::array::from_fn(|a| self.input[a] + 2 * self.pad[a] + 1 - self.kernel[a])
    }

    fn kernel_len(&self) -> usize {
        self.kernel.iter().product()
    }

    fn in_plane(&self) -> usize {
        self.input.iter().product()
    }

    fn out_plane(&self) -> usize {
        self.output().iter().product()
    }
}

/// Output index range `[lo, hi)` whose input index `o + k - pad` lies in `[0, len)`.
#[inline]
fn valid_range(out_len: usize, in_len: usize, k: usize, pad: usize) -> (usize, usize) {
    let lo = pad.saturating_sub(k);
    let hi = (in_len + pad).saturating_sub(k).min(out_len);
    (lo, hi.max(lo))
}

pub fn conv3d_forward<F: Real>(x: &[F], w: &[F], bias: Option<&[F]>, g: &Conv3dGeom) -> Vec<F> {
    let [ot, oh, ow] = g.output();
    let [it, ih, iw] = g.input;
    let [kt, kh, kw] = g.kernel;
    let out_plane = g.out_plane();
    let in_plane = g.in_plane();
    let klen = g.kernel_len();
    let mut out = vec![F::zero(); g.batch * g.out_ch * out_plane];
    par::for_each_chunk_mut(&mut out, out_plane, |idx, plane| {
        let (b, co) = (idx / g.out_ch, idx % g.out_ch);
        if let Some(bias) = bias {
            plane.fill(bias[co]);
        }
        for ci in 0..g.in_ch {
            let xin = &x[(b * g.in_ch + ci) * in_plane..][..in_plane];
            let wk = &w[(co * g.in_ch + ci) * klen..][..klen];
            for dt in 0..kt {
                let (t_lo, t_hi) = valid_range(ot, it, dt, g.pad[0]);
                for dh in 0..kh {
                    let (h_lo, h_hi) = valid_range(oh, ih, dh, g.pad[1]);
                    for dw in 0..kw {
                        let wv = wk[(dt * kh + dh) * kw + dw];
                        if wv == F::zero() {
                            continue;
                        }
                        let (w_lo, w_hi) = valid_range(ow, iw, dw, g.pad[2]);
                        for t in t_lo..t_hi {
                            let ti = t + dt - g.pad[0];
                            for h in h_lo..h_hi {
                                let hi = h + dh - g.pad[1];
                                let orow = &mut plane[(t * oh + h) * ow..][w_lo..w_hi];
                                let irow = &xin[(ti * ih + hi) * iw + w_lo + dw - g.pad[2]..]
                                    [..w_hi - w_lo];
                                for (o, &i) in orow.iter_mut().zip(irow) {
                                    *o += wv * i;
                                }
                            }
                        }
                    }
                }
            }
        }
    });
    out
}

/// Returns `(grad_input, grad_weight, grad_bias)`.
pub fn conv3d_backward<F: Real>(
    x: &[F],
    w: &[F],
    grad_out: &[F],
    g: &Conv3dGeom,
) -> (Vec<F>, Vec<F>, Vec<F>) {
    let [ot, oh, ow] = g.output();
    let [it, ih, iw] = g.input;
    let [kt, kh, kw] = g.kernel;
    let out_plane = g.out_plane();
    let in_plane = g.in_plane();
    let klen = g.kernel_len();

    let mut gx = vec![F::zero(); x.len()];
    par::for_each_chunk_mut(&mut gx, in_plane, |idx, plane| {
        let (b, ci) = (idx / g.in_ch, idx % g.in_ch);
        for co in 0..g.out_ch {
            let go = &grad_out[(b * g.out_ch + co) * out_plane..][..out_plane];
            let wk = &w[(co * g.in_ch + ci) * klen..][..klen];
            for dt in 0..kt {
                let (t_lo, t_hi) = valid_range(ot, it, dt, g.pad[0]);
                for dh in 0..kh {
                    let (h_lo, h_hi) = valid_range(oh, ih, dh, g.pad[1]);
                    for dw in 0..kw {
                        let wv = wk[(dt * kh + dh) * kw + dw];
                        let (w_lo, w_hi) = valid_range(ow, iw, dw, g.pad[2]);
                        for t in t_lo..t_hi {
                            let ti = t + dt - g.pad[0];
                            for h in h_lo..h_hi {
                                let hi = h + dh - g.pad[1];
                                let grow = &go[(t * oh + h) * ow..][w_lo..w_hi];
                                let xrow = &mut plane[(ti * ih + hi) * iw + w_lo + dw - g.pad[2]..]
                                    [..w_hi - w_lo];
                                for (xg, &o) in xrow.iter_mut().zip(grow) {
                                    *xg += wv * o;
                                }
                            }
                        }
                    }
                }
            }
        }
    });

    let mut gw = vec![F::zero(); w.len()];
    par::for_each_chunk_mut(&mut gw, g.in_ch * klen, |co, wplane| {
        for b in 0..g.batch {
            let go = &grad_out[(b * g.out_ch + co) * out_plane..][..out_plane];
            for ci in 0..g.in_ch {
                let xin = &x[(b * g.in_ch + ci) * in_plane..][..in_plane];
                for dt in 0..kt {
                    let (t_lo, t_hi) = valid_range(ot, it, dt, g.pad[0]);
                    for dh in 0..kh {
                        let (h_lo, h_hi) = valid_range(oh, ih, dh, g.pad[1]);
                        for dw in 0..kw {
                            let (w_lo, w_hi) = valid_range(ow, iw, dw, g.pad[2]);
                            let mut acc = F::zero();
                            for t in t_lo..t_hi {
                                let ti = t + dt - g.pad[0];
                                for h in h_lo..h_hi {
                                    let hi = h + dh - g.pad[1];
                                    let grow = &go[(t * oh + h) * ow..][w_lo..w_hi];
                                    let xrow = &xin[(ti * ih + hi) * iw + w_lo + dw - g.pad[2]..]
                                        [..w_hi - w_lo];
                                    for (&o, &i) in grow.iter().zip(xrow) {
                                        acc += o * i;
                                    }
                                }
                            }
                            wplane[ci * klen + (dt * kh + dh) * kw + dw] += acc;
                        }
                    }
                }
            }
        }
    });

    let gb = (0..g.out_ch)
        .map(|co| {
            (0..g.batch)
                .map(|b| {
                    grad_out[(b * g.out_ch + co) * out_plane..][..out_plane]
                        .iter()
                        .copied()
                        .sum::<F>()
                })
                .sum()
        })
        .collect();
    (gx, gw, gb)
}

/// Non-overlapping 3-D max pooling over `[N, T, H, W]`; trailing remainders
/// are dropped. Returns the pooled values and, per output, the flat input
/// index of the selected element (first maximum wins).
pub fn max_pool3d_forward<F: Real>(
    x: &[F],
    planes: usize,
    input: [usize; 3],
    kernel: [usize; 3],
) -> (Vec<F>, Vec<usize>, [usize; 3]) {
    let out = [input[0] / kernel[0], input[1] / kernel[1], input[2] / kernel[2]];
    let in_plane: usize = input.iter().product();
    let out_plane: usize = out.iter().product();
    let mut values = vec![F::zero(); planes * out_plane];
    let mut argmax = vec![0usize; planes * out_plane];
    par::for_each_chunk_mut(&mut argmax, out_plane, |p, am| {
        let base = p * in_plane;
        for t in 0..out[0] {
            for h in 0..out[1] {
                for w in 0..out[2] {
                    let mut best = F::neg_infinity();
                    let mut best_idx = base;
                    for dt in 0..kernel[0] {
                        for dh in 0..kernel[1] {
                            for dw in 0..kernel[2] {
                                let i = base
                                    + ((t * kernel[0] + dt) * input[1] + h * kernel[1] + dh)
                                        * input[2]
                                    + w * kernel[2]
                                    + dw;
                                if x[i] > best {
                                    best = x[i];
                                    best_idx = i;
                                }
                            }
                        }
                    }
                    am[(t * out[1] + h) * out[2] + w] = best_idx;
                }
            }
        }
    });
    for (v, &i) in values.iter_mut().zip(&argmax) {
        *v = x[i];
    }
    (values, argmax, out)
}

/// Adaptive average pooling of `[N, H, W]` planes to `[N, oh, ow]`, using
/// bins `[floor(i*H/oh), ceil((i+1)*H/oh))`.
pub fn adaptive_bins(len: usize, out: usize) -> Vec<(usize, usize)> {
    (0..out)
        .map(|i| (i * len / out, ((i + 1) * len).div_ceil(out)))
        .collect()
}

pub fn adaptive_avg_pool2d_forward<F: Real>(
    x: &[F],
    planes: usize,
    input: [usize; 2],
    out: [usize; 2],
) -> Vec<F> {
    let rows = adaptive_bins(input[0], out[0]);
    let cols = adaptive_bins(input[1], out[1]);
    let in_plane = input[0] * input[1];
    let mut y = vec![F::zero(); planes * out[0] * out[1]];
    par::for_each_chunk_mut(&mut y, out[0] * out[1], |p, yp| {
        let xp = &x[p * in_plane..][..in_plane];
        for (i, &(r0, r1)) in rows.iter().enumerate() {
            for (j, &(c0, c1)) in cols.iter().enumerate() {
                let mut acc = F::zero();
                for r in r0..r1 {
                    for c in c0..c1 {
                        acc += xp[r * input[1] + c];
                    }
                }
                yp[i * out[1] + j] = acc / F::from_usize((r1 - r0) * (c1 - c0)).unwrap();
            }
        }
    });
    y
}

pub fn adaptive_avg_pool2d_backward<F: Real>(
    grad_out: &[F],
    planes: usize,
    input: [usize; 2],
    out: [usize; 2],
) -> Vec<F> {
    let rows = adaptive_bins(input[0], out[0]);
    let cols = adaptive_bins(input[1], out[1]);
    let in_plane = input[0] * input[1];
    let mut gx = vec![F::zero(); planes * in_plane];
    par::for_each_chunk_mut(&mut gx, in_plane, |p, gp| {
        let go = &grad_out[p * out[0] * out[1]..][..out[0] * out[1]];
        for (i, &(r0, r1)) in rows.iter().enumerate() {
            for (j, &(c0, c1)) in cols.iter().enumerate() {
                let share = go[i * out[1] + j] / F::from_usize((r1 - r0) * (c1 - c0)).unwrap();
                for r in r0..r1 {
                    for c in c0..c1 {
                        gp[r * input[1] + c] += share;
                    }
                }
            }
        }
    });
    gx
}

/// The fixed 3x3 Laplacian high-pass kernel.
pub const LAPLACIAN: [[f64; 3]; 3] = [[0.0, -1.0, 0.0], [-1.0, 4.0, -1.0], [0.0, -1.0, 0.0]];

/// Applies [`LAPLACIAN`] to every `[H, W]` plane with zero padding. The
/// kernel is symmetric, so this is also its own adjoint.
pub fn laplacian2d<F: Real>(x: &[F], planes: usize, h: usize, w: usize) -> Vec<F> {
    let mut y = vec![F::zero(); planes * h * w];
    par::for_each_chunk_mut(&mut y, h * w, |p, yp| {
        let xp = &x[p * h * w..][..h * w];
        for r in 0..h {
            for c in 0..w {
                let i = r * w + c;
                let x0 = xp[i];
                let up = if r > 0 { x0 - xp[i - w] } else { x0 };
                let down = if r + 1 < h { x0 - xp[i + w] } else { x0 };
                let left = if c > 0 { x0 - xp[i - 1] } else { x0 };
                let right = if c + 1 < w { x0 - xp[i + 1] } else { x0 };
                yp[i] = up + down + left + right;
            }
        }
    });
    y
}

/// Saved statistics from a normalization forward pass.
#[derive(Clone, Debug)]
pub struct NormCache<F> {
    pub xhat: Vec<F>,
    pub inv_std: Vec<F>,
}

/// Batch normalization over `[B, C, S]` with batch statistics. Returns the
/// output, the cache, and the per-channel (mean, biased variance).
pub fn batch_norm_train<F: Real>(
    x: &[F],
    batch: usize,
    channels: usize,
    spatial: usize,
    gamma: &[F],
    beta: &[F],
    eps: F,
) -> (Vec<F>, NormCache<F>, Vec<F>, Vec<F>) {
    let count = F::from_usize(batch * spatial).unwrap();
    let stats: Vec<(F, F)> = par::map_range(channels, |c| {
        let mut sum = F::zero();
        for b in 0..batch {
            sum += x[(b * channels + c) * spatial..][..spatial].iter().copied().sum::<F>();
        }
        let mean = sum / count;
        let mut var = F::zero();
        for b in 0..batch {
            for &v in &x[(b * channels + c) * spatial..][..spatial] {
                var += (v - mean) * (v - mean);
            }
        }
        (mean, var / count)
    });
    let mean: Vec<F> = stats.iter().map(|s| s.0).collect();
    let var: Vec<F> = stats.iter().map(|s| s.1).collect();
    let inv_std: Vec<F> = var.iter().map(|&v| F::one() / (v + eps).sqrt()).collect();
    let mut xhat = vec![F::zero(); x.len()];
    let mut y = vec![F::zero(); x.len()];
    par::for_each_chunk_mut(&mut xhat, spatial, |idx, xp| {
        let c = idx % channels;
        for (o, &v) in xp.iter_mut().zip(&x[idx * spatial..][..spatial]) {
            *o = (v - mean[c]) * inv_std[c];
        }
    });
    par::for_each_chunk_mut(&mut y, spatial, |idx, yp| {
        let c = idx % channels;
        for (o, &v) in yp.iter_mut().zip(&xhat[idx * spatial..][..spatial]) {
            *o = gamma[c] * v + beta[c];
        }
    });
    (y, NormCache { xhat, inv_std }, mean, var)
}

/// Returns `(grad_input, grad_gamma, grad_beta)` for batch-statistics
/// normalization. With `batch_stats == false` the statistics were constants
/// and the input gradient is a per-channel scale.
#[allow(clippy::too_many_arguments)]
pub fn batch_norm_backward<F: Real>(
    grad_out: &[F],
    cache: &NormCache<F>,
    batch: usize,
    channels: usize,
    spatial: usize,
    gamma: &[F],
    batch_stats: bool,
) -> (Vec<F>, Vec<F>, Vec<F>) {
    let count = F::from_usize(batch * spatial).unwrap();
    let sums: Vec<(F, F)> = par::map_range(channels, |c| {
        let mut dg = F::zero();
        let mut db = F::zero();
        for b in 0..batch {
            let off = (b * channels + c) * spatial;
            for (&g, &xh) in grad_out[off..][..spatial].iter().zip(&cache.xhat[off..][..spatial]) {
                dg += g * xh;
                db += g;
            }
        }
        (dg, db)
    });
    let mut gx = vec![F::zero(); grad_out.len()];
    par::for_each_chunk_mut(&mut gx, spatial, |idx, gp| {
        let c = idx % channels;
        let (dg, db) = sums[c];
        let off = idx * spatial;
        let scale = gamma[c] * cache.inv_std[c];
        for ((o, &g), &xh) in gp
            .iter_mut()
            .zip(&grad_out[off..][..spatial])
            .zip(&cache.xhat[off..][..spatial])
        {
            *o = if batch_stats {
                scale * (g - (db + xh * dg) / count)
            } else {
                scale * g
            };
        }
    });
    let gg = sums.iter().map(|s| s.0).collect();
    let gb = sums.iter().map(|s| s.1).collect();
    (gx, gg, gb)
}

/// Layer normalization over the last axis of `[M, D]`.
pub fn layer_norm_forward<F: Real>(
    x: &[F],
    d: usize,
    gamma: &[F],
    beta: &[F],
    eps: F,
) -> (Vec<F>, NormCache<F>) {
    let rows = x.len() / d;
    let inv_std: Vec<F> = par::map_range(rows, |r| {
        let row = &x[r * d..][..d];
        let mean = row.iter().copied().sum::<F>() / F::from_usize(d).unwrap();
        let var = row.iter().map(|&v| (v - mean) * (v - mean)).sum::<F>() / F::from_usize(d).unwrap();
        F::one() / (var + eps).sqrt()
    });
    let mut xhat = vec![F::zero(); x.len()];
    par::for_each_chunk_mut(&mut xhat, d, |r, out| {
        let row = &x[r * d..][..d];
        let mean = row.iter().copied().sum::<F>() / F::from_usize(d).unwrap();
        for (o, &v) in out.iter_mut().zip(row) {
            *o = (v - mean) * inv_std[r];
        }
    });
    let mut y = vec![F::zero(); x.len()];
    par::for_each_chunk_mut(&mut y, d, |r, out| {
        for (j, o) in out.iter_mut().enumerate() {
            *o = gamma[j] * xhat[r * d + j] + beta[j];
        }
    });
    (y, NormCache { xhat, inv_std })
}

pub fn layer_norm_backward<F: Real>(
    grad_out: &[F],
    cache: &NormCache<F>,
    d: usize,
    gamma: &[F],
) -> (Vec<F>, Vec<F>, Vec<F>) {
    let df = F::from_usize(d).unwrap();
    let mut gx = vec![F::zero(); grad_out.len()];
    par::for_each_chunk_mut(&mut gx, d, |r, out| {
        let g = &grad_out[r * d..][..d];
        let xh = &cache.xhat[r * d..][..d];
        let mut sum_dxh = F::zero();
        let mut sum_dxh_xh = F::zero();
        for j in 0..d {
            let dxh = g[j] * gamma[j];
            sum_dxh += dxh;
            sum_dxh_xh += dxh * xh[j];
        }
        for j in 0..d {
            let dxh = g[j] * gamma[j];
            out[j] = cache.inv_std[r] * (dxh - (sum_dxh + xh[j] * sum_dxh_xh) / df);
        }
    });
    let mut gg = vec![F::zero(); d];
    let mut gb = vec![F::zero(); d];
    for (g, xh) in grad_out.chunks(d).zip(cache.xhat.chunks(d)) {
        for j in 0..d {
            gg[j] += g[j] * xh[j];
            gb[j] += g[j];
        }
    }
    (gx, gg, gb)
}

/// Multi-head scaled dot-product attention over `groups` independent
/// sequences of `n` tokens with model width `d` split into `heads`.
/// Returns the output `[groups, n, d]` and the attention weights
/// `[groups, heads, n, n]`.
pub fn attention_forward<F: Real>(
    q: &[F],
    k: &[F],
    v: &[F],
    groups: usize,
    n: usize,
    d: usize,
    heads: usize,
) -> (Vec<F>, Vec<F>) {
    let dh = d / heads;
    let scale = F::one() / F::from_usize(dh).unwrap().sqrt();
    let mut probs = vec![F::zero(); groups * heads * n * n];
    par::for_each_chunk_mut(&mut probs, heads * n * n, |g, pg| {
        let base = g * n * d;
        let mut logits = vec![F::zero(); n];
        for h in 0..heads {
            for i in 0..n {
                let qi = &q[base + i * d + h * dh..][..dh];
                for (j, l) in logits.iter_mut().enumerate() {
                    let kj = &k[base + j * d + h * dh..][..dh];
                    *l = qi.iter().zip(kj).map(|(&a, &b)| a * b).sum::<F>() * scale;
                }
                softmax_into(&logits, &mut pg[(h * n + i) * n..][..n]);
            }
        }
    });
    let mut out = vec![F::zero(); groups * n * d];
    par::for_each_chunk_mut(&mut out, n * d, |g, og| {
        let base = g * n * d;
        for h in 0..heads {
            for i in 0..n {
                let p = &probs[((g * heads + h) * n + i) * n..][..n];
                let orow = &mut og[i * d + h * dh..][..dh];
                for (j, &pij) in p.iter().enumerate() {
                    let vj = &v[base + j * d + h * dh..][..dh];
                    for (o, &vv) in orow.iter_mut().zip(vj) {
                        *o += pij * vv;
                    }
                }
            }
        }
    });
    (out, probs)
}

/// Returns `(dq, dk, dv)`.
#[allow(clippy::too_many_arguments)]
pub fn attention_backward<F: Real>(
    q: &[F],
    k: &[F],
    v: &[F],
    probs: &[F],
    grad_out: &[F],
    groups: usize,
    n: usize,
    d: usize,
    heads: usize,
) -> (Vec<F>, Vec<F>, Vec<F>) {
    let dh = d / heads;
    let scale = F::one() / F::from_usize(dh).unwrap().sqrt();
    let per_group: Vec<(Vec<F>, Vec<F>, Vec<F>)> = par::map_range(groups, |g| {
        let base = g * n * d;
        let mut dq = vec![F::zero(); n * d];
        let mut dk = vec![F::zero(); n * d];
        let mut dv = vec![F::zero(); n * d];
        let mut dp = vec![F::zero(); n];
        for h in 0..heads {
            for i in 0..n {
                let p = &probs[((g * heads + h) * n + i) * n..][..n];
                let go = &grad_out[base + i * d + h * dh..][..dh];
                for j in 0..n {
                    let vj = &v[base + j * d + h * dh..][..dh];
                    dp[j] = go.iter().zip(vj).map(|(&a, &b)| a * b).sum();
                    let dvj = &mut dv[j * d + h * dh..][..dh];
                    for (x, &o) in dvj.iter_mut().zip(go) {
                        *x += p[j] * o;
                    }
                }
                let dot: F = p.iter().zip(&dp).map(|(&a, &b)| a * b).sum();
                let qi = &q[base + i * d + h * dh..][..dh];
                for j in 0..n {
                    let ds = p[j] * (dp[j] - dot) * scale;
                    if ds == F::zero() {
                        continue;
                    }
                    let kj = &k[base + j * d + h * dh..][..dh];
                    for t in 0..dh {
                        dq[i * d + h * dh + t] += ds * kj[t];
                        dk[j * d + h * dh + t] += ds * qi[t];
                    }
                }
            }
        }
        (dq, dk, dv)
    });
    let mut dq = Vec::with_capacity(q.len());
    let mut dk = Vec::with_capacity(k.len());
    let mut dv = Vec::with_capacity(v.len());
    for (a, b, c) in per_group {
        dq.extend(a);
        dk.extend(b);
        dv.extend(c);
    }
    (dq, dk, dv)
}

const GELU_C: f64 = 0.797_884_560_802_865_4; // sqrt(2/pi)

/// GELU, tanh approximation.
pub fn gelu<F: Real>(x: F) -> F {
    let c = F::lit(GELU_C);
    let a = F::lit(0.044715);
    F::lit(0.5) * x * (F::one() + (c * (x + a * x * x * x)).tanh())
}

pub fn gelu_grad<F: Real>(x: F) -> F {
    let c = F::lit(GELU_C);
    let a = F::lit(0.044715);
    let u = c * (x + a * x * x * x);
    let t = u.tanh();
    let du = c * (F::one() + F::lit(3.0) * a * x * x);
    F::lit(0.5) * (F::one() + t) + F::lit(0.5) * x * (F::one() - t * t) * du
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn laplacian_on_ones_3x3() {
        let y = laplacian2d(&[1.0f64; 9], 1, 3, 3);
        assert_eq!(y, vec![2.0, 1.0, 2.0, 1.0, 0.0, 1.0, 2.0, 1.0, 2.0]);
    }

    proptest::proptest! {
        #[test]
        fn laplacian_constant_interior_is_zero(v in -1e6f64..1e6, h in 3usize..12, w in 3usize..12) {
            let y = laplacian2d(&vec![v; 2 * h * w], 2, h, w);
            let y32 = laplacian2d(&vec![v as f32; h * w], 1, h, w);
            for r in 1..h - 1 {
                for c in 1..w - 1 {
                    proptest::prop_assert_eq!(y[h * w + r * w + c], 0.0);
                    proptest::prop_assert_eq!(y32[r * w + c], 0.0);
                }
            }
        }
    }

    #[test]
    fn conv_identity_kernel() {
        let g = Conv3dGeom {
            batch: 1,
            in_ch: 1,
            out_ch: 1,
            input: [2, 3, 3],
            kernel: [3, 3, 3],
            pad: [1, 1, 1],
        };
        let mut w = vec![0.0f64; 27];
        w[13] = 1.0;
        let x: Vec<f64> = (0..18).map(|v| v as f64).collect();
        assert_eq!(conv3d_forward(&x, &w, None, &g), x);
    }

    #[test]
    fn conv_matches_naive() {
        let g = Conv3dGeom {
            batch: 2,
            in_ch: 2,
            out_ch: 3,
            input: [3, 4, 5],
            kernel: [3, 3, 3],
            pad: [1, 1, 1],
        };
        let x: Vec<f64> = (0..2 * 2 * 60).map(|v| ((v * 7) % 11) as f64 - 5.0).collect();
        let w: Vec<f64> = (0..3 * 2 * 27).map(|v| ((v * 5) % 13) as f64 * 0.1 - 0.6).collect();
        let b = [0.5, -0.25, 1.0];
        let y = conv3d_forward(&x, &w, Some(&b), &g);
        for bi in 0..2 {
            for co in 0..3 {
                for t in 0..3i64 {
                    for h in 0..4i64 {
                        for ww in 0..5i64 {
                            let mut acc = b[co];
                            for ci in 0..2 {
                                for dt in 0..3i64 {
                                    for dh in 0..3i64 {
                                        for dw in 0..3i64 {
                                            let (it, ih, iw) = (t + dt - 1, h + dh - 1, ww + dw - 1);
                                            if it < 0 || ih < 0 || iw < 0 || it >= 3 || ih >= 4 || iw >= 5 {
                                                continue;
                                            }
                                            let xi = (((bi * 2 + ci) * 3 + it as usize) * 4 + ih as usize) * 5 + iw as usize;
                                            let wi = ((co * 2 + ci) * 3 + dt as usize) * 9 + dh as usize * 3 + dw as usize;
                                            acc += x[xi] * w[wi];
                                        }
                                    }
                                }
                            }
                            let yi = (((bi * 3 + co) * 3 + t as usize) * 4 + h as usize) * 5 + ww as usize;
                            assert!((y[yi] - acc).abs() < 1e-12);
                        }
                    }
                }
            }
        }
    }

    #[test]
    fn adaptive_bins_cover_axis() {
        assert_eq!(adaptive_bins(8, 4), vec![(0, 2), (2, 4), (4, 6), (6, 8)]);
        assert_eq!(adaptive_bins(5, 4), vec![(0, 2), (1, 3), (2, 4), (3, 5)]);
    }

    #[test]
    fn max_pool_picks_max() {
        let x: Vec<f64> = (0..16).map(|v| v as f64).collect();
        let (y, idx, out) = max_pool3d_forward(&x, 1, [1, 4, 4], [1, 2, 2]);
        assert_eq!(out, [1, 2, 2]);
        assert_eq!(y, vec![5.0, 7.0, 13.0, 15.0]);
        assert_eq!(idx, vec![5, 7, 13, 15]);
    }

    #[test]
    fn gelu_grad_matches_difference() {
        for &x in &[-3.0, -0.5, 0.0, 0.7, 2.5f64] {
            let h = 1e-6;
            let fd = (gelu(x + h) - gelu(x - h)) / (2.0 * h);
            assert!((fd - gelu_grad(x)).abs() < 1e-8);
        }
    }
}
