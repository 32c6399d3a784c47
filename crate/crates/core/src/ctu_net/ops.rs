//! Stand-alone building blocks of the network, usable outside the graph.

use std::sync::Arc;

use rustfft::num_complex::Complex;
use rustfft::{Fft, FftPlanner};

use super::ModelError;
use crate::nn::{softmax_into, Real, Tensor};
use crate::par;
use crate::video_data::media::bilinear_taps;

/// Scaled dot-product attention `softmax(Q K^T / sqrt(d)) V` for
/// `q: [n, d]`, `k: [m, d]`, `v: [m, dv]`.
pub fn attention<F: Real>(q: &Tensor<F>, k: &Tensor<F>, v: &Tensor<F>) -> Result<Tensor<F>, ModelError> {
    let (qs, ks, vs) = (q.shape(), k.shape(), v.shape());
    if qs.len() != 2 || ks.len() != 2 || vs.len() != 2 {
        return Err(ModelError::Shape("attention operands must be 2-D".into()));
    }
    let (n, d, m, dv) = (qs[0], qs[1], ks[0], vs[1]);
    if d == 0 {
        return Err(ModelError::Shape("attention key width is zero".into()));
    }
    if ks[1] != d || vs[0] != m {
        return Err(ModelError::Shape(format!(
            "attention shapes do not align: q {qs:?}, k {ks:?}, v {vs:?}"
        )));
    }
    let scale = F::one() / F::from_usize(d).unwrap().sqrt();
    let mut out = vec![F::zero(); n * dv];
    let mut scores = vec![F::zero(); m];
    let mut probs = vec![F::zero(); m];
    for i in 0..n {
        for (j, s) in scores.iter_mut().enumerate() {
            *s = q.row(i).iter().zip(k.row(j)).map(|(&a, &b)| a * b).sum::<F>() * scale;
        }
        softmax_into(&scores, &mut probs);
        for (j, &p) in probs.iter().enumerate() {
            for (o, &x) in out[i * dv..][..dv].iter_mut().zip(v.row(j)) {
                *o += p * x;
            }
        }
    }
    Ok(Tensor::from_vec(&[n, dv], out))
}

/// `alpha_s * slow + alpha_f * fast`; the two gates must sum to one.
pub fn fuse<F: Real>(slow: &Tensor<F>, fast: &Tensor<F>, alpha_s: F, alpha_f: F) -> Result<Tensor<F>, ModelError> {
    if slow.shape() != fast.shape() {
        return Err(ModelError::Shape(format!(
            "fused features differ in shape: {:?} vs {:?}",
            slow.shape(),
            fast.shape()
        )));
    }
    let sum = (alpha_s + alpha_f).to_f64().unwrap();
    if !sum.is_finite() || (sum - 1.0).abs() > 1e-4 {
        return Err(ModelError::Gate(format!("gates sum to {sum}, expected 1")));
    }
    let data = slow
        .data()
        .iter()
        .zip(fast.data())
        .map(|(&s, &f)| alpha_s * s + alpha_f * f)
        .collect();
    Ok(Tensor::from_vec(slow.shape(), data))
}

/// `softmax(W F + b)` for `features: [B, D]`, `weight: [C, D]`, `bias: [C]`.
pub fn classify<F: Real>(features: &Tensor<F>, weight: &Tensor<F>, bias: &Tensor<F>) -> Result<Tensor<F>, ModelError> {
    let (fs, ws) = (features.shape(), weight.shape());
    if fs.len() != 2 || ws.len() != 2 || ws[1] != fs[1] || bias.shape() != [ws[0]] {
        return Err(ModelError::Shape(format!(
            "classifier shapes do not align: features {fs:?}, weight {ws:?}, bias {:?}",
            bias.shape()
        )));
    }
    let c = ws[0];
    let mut out = vec![F::zero(); fs[0] * c];
    let mut logits = vec![F::zero(); c];
    for (r, o) in out.chunks_mut(c).enumerate() {
        for (j, l) in logits.iter_mut().enumerate() {
            *l = features.row(r).iter().zip(weight.row(j)).map(|(&a, &b)| a * b).sum::<F>() + bias.data()[j];
        }
        softmax_into(&logits, o);
    }
    Ok(Tensor::from_vec(&[fs[0], c], out))
}

/// Frame indices kept by the fast path: `0, stride, 2 * stride, ...`.
pub fn temporal_stride_indices(frames: usize, stride: usize) -> Vec<usize> {
    (0..frames).step_by(stride.max(1)).collect()
}

struct Fft2 {
    rows: Arc<dyn Fft<f64>>,
    cols: Arc<dyn Fft<f64>>,
    h: usize,
    w: usize,
}

impl Fft2 {
    fn new(h: usize, w: usize) -> Self {
        let mut planner = FftPlanner::new();
        Self {
            rows: planner.plan_fft_forward(w),
            cols: planner.plan_fft_forward(h),
            h,
            w,
        }
    }

    /// Magnitude of the orthonormal real 2-D DFT, `[h, w / 2 + 1]`.
    fn magnitude(&self, plane: &[f64]) -> Vec<f64> {
        let (h, w) = (self.h, self.w);
        let half = w / 2 + 1;
        let mut buf: Vec<Complex<f64>> = plane.iter().map(|&v| Complex::new(v, 0.0)).collect();
        for row in buf.chunks_mut(w) {
            self.rows.process(row);
        }
        let mut col = vec![Complex::new(0.0, 0.0); h];
        let mut out = vec![0.0; h * half];
        let norm = 1.0 / ((h * w) as f64).sqrt();
        for x in 0..half {
            for y in 0..h {
                col[y] = buf[y * w + x];
            }
            self.cols.process(&mut col);
            for y in 0..h {
                out[y * half + x] = col[y].norm() * norm;
            }
        }
        out
    }
}

/// Orthonormal real 2-D DFT magnitude of a `[h, w]` plane, `[h, w / 2 + 1]`.
pub fn spectral_magnitude(plane: &[f64], h: usize, w: usize) -> Vec<f64> {
    assert_eq!(plane.len(), h * w);
    Fft2::new(h, w).magnitude(plane)
}

/// Bilinear resize of each `[h, src_w]` row block to `[h, dst_w]`
/// (half-pixel alignment).
pub fn upsample_width(x: &[f64], h: usize, src_w: usize, dst_w: usize) -> Vec<f64> {
    let taps = bilinear_taps(src_w, dst_w);
    let mut out = Vec::with_capacity(h * dst_w);
    for y in 0..h {
        let row = &x[y * src_w..][..src_w];
        for &(x0, x1, t) in &taps {
            let t = t as f64;
            out.push(row[x0] * (1.0 - t) + row[x1] * t);
        }
    }
    out
}

/// Spectra of every frame and channel of `video: [B, T, H, W, C]`, laid out
/// as `[B, 1, T * C, H, W]` (planes ordered by frame, then channel).
pub fn video_spectra<F: Real>(video: &Tensor<F>) -> Tensor<F> {
    let s = video.shape();
    let (b, t, h, w, c) = (s[0], s[1], s[2], s[3], s[4]);
    let fft = Fft2::new(h, w);
    let data = video.data();
    let planes = par::map_range(b * t * c, |idx| {
        let (bt, ch) = (idx / c, idx % c);
        let base = bt * h * w * c;
        let plane: Vec<f64> = (0..h * w).map(|p| data[base + p * c + ch].to_f64().unwrap()).collect();
        upsample_width(&fft.magnitude(&plane), h, w / 2 + 1, w)
    });
    let out = planes.into_iter().flatten().map(F::lit).collect();
    Tensor::from_vec(&[b, 1, t * c, h, w], out)
}

/// Non-overlapping `p x p` patches of the strided frames of
/// `video: [B, T, H, W, C]` as `[B * T', N, p * p * C]`; each patch vector is
/// ordered (row, column, channel).
pub fn extract_patches<F: Real>(video: &Tensor<F>, p: usize, stride: usize) -> Tensor<F> {
    let s = video.shape();
    let (b, t, h, w, c) = (s[0], s[1], s[2], s[3], s[4]);
    let frames = temporal_stride_indices(t, stride);
    let (gh, gw) = (h / p, w / p);
    let dim = p * p * c;
    let data = video.data();
    let mut out = Vec::with_capacity(b * frames.len() * gh * gw * dim);
    for bi in 0..b {
        for &f in &frames {
            let base = (bi * t + f) * h * w * c;
            for py in 0..gh {
                for px in 0..gw {
                    for y in 0..p {
                        let row = base + ((py * p + y) * w + px * p) * c;
                        out.extend_from_slice(&data[row..row + p * c]);
                    }
                }
            }
        }
    }
    Tensor::from_vec(&[b * frames.len(), gh * gw, dim], out)
}
