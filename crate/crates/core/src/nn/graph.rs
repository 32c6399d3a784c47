//! Tape-based reverse-mode differentiation.
//!
//! A [`Graph`] records every tensor produced during one forward pass in
//! creation order; [`Graph::backward`] walks the tape in reverse and
//! accumulates gradients into every node that contributed to the output.

use super::kernels::{self, Conv3dGeom, NormCache};
use super::tensor::{softmax_into, Real, Tensor};
use crate::par;

/// Handle to a node of a [`Graph`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

enum Op<F> {
    Leaf,
    Add(Var, Var),
    Scale(Var, F),
    Relu(Var),
    Gelu(Var),
    Reshape(Var),
    Permute {
        x: Var,
        perm: Vec<usize>,
    },
    Linear {
        x: Var,
        w: Var,
        b: Option<Var>,
    },
    Conv3d {
        x: Var,
        w: Var,
        b: Option<Var>,
        geom: Conv3dGeom,
    },
    BatchNorm {
        x: Var,
        gamma: Var,
        beta: Var,
        cache: NormCache<F>,
        dims: [usize; 3],
        batch_stats: bool,
    },
    LayerNorm {
        x: Var,
        gamma: Var,
        beta: Var,
        cache: NormCache<F>,
    },
    MaxPool3d {
        x: Var,
        argmax: Vec<usize>,
    },
    MeanAxis {
        x: Var,
        dims: [usize; 3],
    },
    AdaptiveAvgPool2d {
        x: Var,
        planes: usize,
        input: [usize; 2],
        out: [usize; 2],
    },
    Laplacian {
        x: Var,
        planes: usize,
        h: usize,
        w: usize,
    },
    Softmax(Var),
    Attention {
        q: Var,
        k: Var,
        v: Var,
        heads: usize,
        probs: Vec<F>,
    },
    PrependToken {
        x: Var,
        token: Var,
    },
    AddTable {
        x: Var,
        table: Var,
    },
    SelectToken {
        x: Var,
        index: usize,
    },
    GateFuse {
        gates: Var,
        slow: Var,
        fast: Var,
    },
    Dropout {
        x: Var,
        mask: Vec<F>,
    },
    CrossEntropy {
        logits: Var,
        labels: Vec<usize>,
        probs: Vec<F>,
    },
    WeightedSum {
        x: Var,
        weights: Vec<F>,
    },
}

struct Node<F> {
    value: Tensor<F>,
    op: Op<F>,
}

/// Recorded computation over tensors of element type `F`.
pub struct Graph<F> {
    nodes: Vec<Node<F>>,
}

impl<F: Real> Default for Graph<F> {
    fn default() -> Self {
        Self::new()
    }
}

fn permuted_shape(shape: &[usize], perm: &[usize]) -> Vec<usize> {
    perm.iter().map(|&p| shape[p]).collect()
}

fn strides(shape: &[usize]) -> Vec<usize> {
    let mut s = vec![1; shape.len()];
    for i in (0..shape.len().saturating_sub(1)).rev() {
        s[i] = s[i + 1] * shape[i + 1];
    }
    s
}

/// Moves axes: output axis `i` is input axis `perm[i]`.
pub fn permute_data<F: Copy + Default>(data: &[F], shape: &[usize], perm: &[usize]) -> Vec<F> {
    let out_shape = permuted_shape(shape, perm);
    let in_strides = strides(shape);
    let out_strides = strides(&out_shape);
    let mut out = vec![F::default(); data.len()];
    for (o, slot) in out.iter_mut().enumerate() {
        let mut src = 0;
        for (axis, &p) in perm.iter().enumerate() {
            let coord = (o / out_strides[axis]) % out_shape[axis];
            src += coord * in_strides[p];
        }
        *slot = data[src];
    }
    out
}

fn inverse_perm(perm: &[usize]) -> Vec<usize> {
    let mut inv = vec![0; perm.len()];
    for (i, &p) in perm.iter().enumerate() {
        inv[p] = i;
    }
    inv
}

/// `[m, k] @ [k, n]` with optional transposes of either operand.
fn matmul<F: Real>(a: &[F], ta: bool, b: &[F], tb: bool, m: usize, k: usize, n: usize) -> Vec<F> {
    let mut c = vec![F::zero(); m * n];
    let a_strides = if ta { (1, m as isize) } else { (k as isize, 1) };
    let b_strides = if tb { (1, k as isize) } else { (n as isize, 1) };
    // Row blocks keep the work split independent of thread count.
    let block = 64;
    par::for_each_chunk_mut(&mut c, block * n, |bi, cblock| {
        let rows = cblock.len() / n;
        let row0 = bi * block;
        let a_off = row0 as isize * a_strides.0;
        F::gemm(
            rows,
            k,
            n,
            F::one(),
            &a[a_off as usize..],
            a_strides,
            b,
            b_strides,
            F::zero(),
            cblock,
        );
    });
    c
}

impl<F: Real> Graph<F> {
    pub fn new() -> Self {
        Self { nodes: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: Tensor<F>, op: Op<F>) -> Var {
        self.nodes.push(Node { value, op });
        Var(self.nodes.len() - 1)
    }

    /// Adds an input or parameter.
    pub fn leaf(&mut self, value: Tensor<F>) -> Var {
        self.push(value, Op::Leaf)
    }

    pub fn value(&self, v: Var) -> &Tensor<F> {
        &self.nodes[v.0].value
    }

    /// Hash of every piecewise branch taken (ReLU signs, max-pool winners).
    /// Two passes with equal signatures lie on the same smooth piece.
    pub fn branch_signature(&self) -> u64 {
        use std::hash::{Hash, Hasher};
        let mut h = std::collections::hash_map::DefaultHasher::new();
        for node in &self.nodes {
            match &node.op {
                Op::Relu(x) => {
                    for v in self.data(*x) {
                        (*v > F::zero()).hash(&mut h);
                    }
                }
                Op::MaxPool3d { argmax, .. } => argmax.hash(&mut h),
                _ => {}
            }
        }
        h.finish()
    }

    fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    fn data(&self, v: Var) -> &[F] {
        self.nodes[v.0].value.data()
    }

    pub fn add(&mut self, a: Var, b: Var) -> Var {
        assert_eq!(self.shape(a), self.shape(b), "add: shape mismatch");
        let data = self.data(a).iter().zip(self.data(b)).map(|(&x, &y)| x + y).collect();
        let t = Tensor::from_vec(self.shape(a), data);
        self.push(t, Op::Add(a, b))
    }

    pub fn scale(&mut self, x: Var, s: F) -> Var {
        let t = self.value(x).map(|v| v * s);
        self.push(t, Op::Scale(x, s))
    }

    pub fn relu(&mut self, x: Var) -> Var {
        let t = self.value(x).map(|v| v.max(F::zero()));
        self.push(t, Op::Relu(x))
    }

    pub fn gelu(&mut self, x: Var) -> Var {
        let t = self.value(x).map(kernels::gelu);
        self.push(t, Op::Gelu(x))
    }

    pub fn reshape(&mut self, x: Var, shape: &[usize]) -> Var {
        let t = self.value(x).clone().reshaped(shape);
        self.push(t, Op::Reshape(x))
    }

    pub fn permute(&mut self, x: Var, perm: &[usize]) -> Var {
        let shape = self.shape(x).to_vec();
        assert_eq!(shape.len(), perm.len());
        let data = permute_data(self.data(x), &shape, perm);
        let t = Tensor::from_vec(&permuted_shape(&shape, perm), data);
        self.push(
            t,
            Op::Permute {
                x,
                perm: perm.to_vec(),
            },
        )
    }

    /// `x @ w + b` over the last axis of `x`; `w` is `[k, n]`.
    pub fn linear(&mut self, x: Var, w: Var, b: Option<Var>) -> Var {
        let xs = self.shape(x).to_vec();
        let ws = self.shape(w);
        let k = *xs.last().expect("linear input has an axis");
        assert_eq!(ws[0], k, "linear: inner dimension mismatch");
        let n = ws[1];
        let m = self.value(x).len() / k;
        let mut out = matmul(self.data(x), false, self.data(w), false, m, k, n);
        if let Some(b) = b {
            let bias = self.data(b);
            for row in out.chunks_mut(n) {
                for (o, &bb) in row.iter_mut().zip(bias) {
                    *o += bb;
                }
            }
        }
        let mut shape = xs;
        *shape.last_mut().unwrap() = n;
        self.push(Tensor::from_vec(&shape, out), Op::Linear { x, w, b })
    }

    /// Stride-1 3-D convolution with "same" padding for odd kernels.
    /// `x: [B, Ci, T, H, W]`, `w: [Co, Ci, kt, kh, kw]`.
    pub fn conv3d(&mut self, x: Var, w: Var, b: Option<Var>) -> Var {
        let xs = self.shape(x).to_vec();
        let ws = self.shape(w).to_vec();
        assert_eq!(xs.len(), 5, "conv3d expects [B, C, T, H, W]");
        assert_eq!(xs[1], ws[1], "conv3d: channel mismatch");
        let geom = Conv3dGeom {
            batch: xs[0],
            in_ch: xs[1],
            out_ch: ws[0],
            input: [xs[2], xs[3], xs[4]],
            kernel: [ws[2], ws[3], ws[4]],
            pad: [ws[2] / 2, ws[3] / 2, ws[4] / 2],
        };
        let bias = b.map(|b| self.data(b));
        let out = kernels::conv3d_forward(self.data(x), self.data(w), bias, &geom);
        let o = geom.output();
        let t = Tensor::from_vec(&[xs[0], ws[0], o[0], o[1], o[2]], out);
        self.push(t, Op::Conv3d { x, w, b, geom })
    }

    /// Batch normalization of `[B, C, ...]` with batch statistics. Returns
    /// the output and the per-channel batch (mean, biased variance).
    pub fn batch_norm(&mut self, x: Var, gamma: Var, beta: Var, eps: F) -> (Var, Vec<F>, Vec<F>) {
        let dims = self.bn_dims(x);
        let (y, cache, mean, var) = kernels::batch_norm_train(
            self.data(x),
            dims[0],
            dims[1],
            dims[2],
            self.data(gamma),
            self.data(beta),
            eps,
        );
        let t = Tensor::from_vec(self.shape(x), y);
        let v = self.push(
            t,
            Op::BatchNorm {
                x,
                gamma,
                beta,
                cache,
                dims,
                batch_stats: true,
            },
        );
        (v, mean, var)
    }

    /// Batch normalization with fixed (running) statistics.
    pub fn batch_norm_fixed(
        &mut self,
        x: Var,
        gamma: Var,
        beta: Var,
        mean: &[F],
        var: &[F],
        eps: F,
    ) -> Var {
        let dims = self.bn_dims(x);
        let spatial = dims[2];
        let inv_std: Vec<F> = var.iter().map(|&v| F::one() / (v + eps).sqrt()).collect();
        let src = self.data(x);
        let (g, b) = (self.data(gamma), self.data(beta));
        let mut xhat = vec![F::zero(); src.len()];
        let mut y = vec![F::zero(); src.len()];
        for (idx, (xp, yp)) in xhat.chunks_mut(spatial).zip(y.chunks_mut(spatial)).enumerate() {
            let c = idx % dims[1];
            for j in 0..spatial {
                xp[j] = (src[idx * spatial + j] - mean[c]) * inv_std[c];
                yp[j] = g[c] * xp[j] + b[c];
            }
        }
        let t = Tensor::from_vec(self.shape(x), y);
        self.push(
            t,
            Op::BatchNorm {
                x,
                gamma,
                beta,
                cache: NormCache { xhat, inv_std },
                dims,
                batch_stats: false,
            },
        )
    }

    fn bn_dims(&self, x: Var) -> [usize; 3] {
        let s = self.shape(x);
        assert!(s.len() >= 2, "batch norm expects [B, C, ...]");
        [s[0], s[1], s[2..].iter().product()]
    }

    /// Layer normalization over the last axis.
    pub fn layer_norm(&mut self, x: Var, gamma: Var, beta: Var, eps: F) -> Var {
        let d = *self.shape(x).last().unwrap();
        let (y, cache) =
            kernels::layer_norm_forward(self.data(x), d, self.data(gamma), self.data(beta), eps);
        let t = Tensor::from_vec(self.shape(x), y);
        self.push(
            t,
            Op::LayerNorm {
                x,
                gamma,
                beta,
                cache,
            },
        )
    }

    /// Non-overlapping max pooling over the last three axes.
    pub fn max_pool3d(&mut self, x: Var, kernel: [usize; 3]) -> Var {
        let s = self.shape(x).to_vec();
        let n = s.len();
        assert!(n >= 3);
        let planes: usize = s[..n - 3].iter().product();
        let (values, argmax, out) =
            kernels::max_pool3d_forward(self.data(x), planes, [s[n - 3], s[n - 2], s[n - 1]], kernel);
        let mut shape = s[..n - 3].to_vec();
        shape.extend_from_slice(&out);
        self.push(Tensor::from_vec(&shape, values), Op::MaxPool3d { x, argmax })
    }

    /// Mean over `axis`, removing it.
    pub fn mean_axis(&mut self, x: Var, axis: usize) -> Var {
        let s = self.shape(x).to_vec();
        let outer: usize = s[..axis].iter().product();
        let len = s[axis];
        let inner: usize = s[axis + 1..].iter().product();
        let src = self.data(x);
        let inv = F::one() / F::from_usize(len).unwrap();
        let mut out = vec![F::zero(); outer * inner];
        for o in 0..outer {
            for a in 0..len {
                let row = &src[(o * len + a) * inner..][..inner];
                for (dst, &v) in out[o * inner..][..inner].iter_mut().zip(row) {
                    *dst += v;
                }
            }
        }
        for v in out.iter_mut() {
            *v *= inv;
        }
        let mut shape = s.clone();
        shape.remove(axis);
        self.push(
            Tensor::from_vec(&shape, out),
            Op::MeanAxis {
                x,
                dims: [outer, len, inner],
            },
        )
    }

    /// Adaptive average pooling over the last two axes.
    pub fn adaptive_avg_pool2d(&mut self, x: Var, out: [usize; 2]) -> Var {
        let s = self.shape(x).to_vec();
        let n = s.len();
        let planes: usize = s[..n - 2].iter().product();
        let input = [s[n - 2], s[n - 1]];
        let y = kernels::adaptive_avg_pool2d_forward(self.data(x), planes, input, out);
        let mut shape = s[..n - 2].to_vec();
        shape.extend_from_slice(&out);
        self.push(
            Tensor::from_vec(&shape, y),
            Op::AdaptiveAvgPool2d {
                x,
                planes,
                input,
                out,
            },
        )
    }

    /// Fixed Laplacian high-pass over the last two axes, per plane.
    pub fn laplacian(&mut self, x: Var) -> Var {
        let s = self.shape(x).to_vec();
        let n = s.len();
        let planes: usize = s[..n - 2].iter().product();
        let (h, w) = (s[n - 2], s[n - 1]);
        let y = kernels::laplacian2d(self.data(x), planes, h, w);
        self.push(Tensor::from_vec(&s, y), Op::Laplacian { x, planes, h, w })
    }

    /// Softmax over the last axis.
    pub fn softmax(&mut self, x: Var) -> Var {
        let s = self.shape(x).to_vec();
        let d = *s.last().unwrap();
        let src = self.data(x);
        let mut out = vec![F::zero(); src.len()];
        for (row, o) in src.chunks(d).zip(out.chunks_mut(d)) {
            softmax_into(row, o);
        }
        self.push(Tensor::from_vec(&s, out), Op::Softmax(x))
    }

    /// Multi-head attention; `q`, `k`, `v` are `[G, n, D]`.
    pub fn attention(&mut self, q: Var, k: Var, v: Var, heads: usize) -> Var {
        let s = self.shape(q).to_vec();
        assert_eq!(s.len(), 3, "attention expects [G, n, D]");
        assert_eq!(self.shape(k), &s[..]);
        assert_eq!(self.shape(v), &s[..]);
        assert!(heads >= 1 && s[2].is_multiple_of(heads), "width not divisible by heads");
        let (out, probs) = kernels::attention_forward(
            self.data(q),
            self.data(k),
            self.data(v),
            s[0],
            s[1],
            s[2],
            heads,
        );
        self.push(
            Tensor::from_vec(&s, out),
            Op::Attention {
                q,
                k,
                v,
                heads,
                probs,
            },
        )
    }

    /// `[G, n, D]` and token `[D]` → `[G, n + 1, D]` with the token first.
    pub fn prepend_token(&mut self, x: Var, token: Var) -> Var {
        let s = self.shape(x).to_vec();
        let d = s[2];
        let tok = self.data(token).to_vec();
        assert_eq!(tok.len(), d);
        let src = self.data(x);
        let mut out = Vec::with_capacity(s[0] * (s[1] + 1) * d);
        for g in 0..s[0] {
            out.extend_from_slice(&tok);
            out.extend_from_slice(&src[g * s[1] * d..][..s[1] * d]);
        }
        self.push(
            Tensor::from_vec(&[s[0], s[1] + 1, d], out),
            Op::PrependToken { x, token },
        )
    }

    /// Broadcast-adds `table: [n, D]` to every group of `x: [G, n, D]`.
    pub fn add_table(&mut self, x: Var, table: Var) -> Var {
        let s = self.shape(x).to_vec();
        let tab = self.data(table).to_vec();
        assert_eq!(tab.len(), s[1] * s[2]);
        let mut out = self.data(x).to_vec();
        for chunk in out.chunks_mut(tab.len()) {
            for (o, &t) in chunk.iter_mut().zip(&tab) {
                *o += t;
            }
        }
        self.push(Tensor::from_vec(&s, out), Op::AddTable { x, table })
    }

    /// `[G, n, D]` → `[G, D]` taking token `index` of every group.
    pub fn select_token(&mut self, x: Var, index: usize) -> Var {
        let s = self.shape(x).to_vec();
        let d = s[2];
        let src = self.data(x);
        let out: Vec<F> = (0..s[0])
            .flat_map(|g| src[(g * s[1] + index) * d..][..d].iter().copied())
            .collect();
        self.push(
            Tensor::from_vec(&[s[0], d], out),
            Op::SelectToken { x, index },
        )
    }

    /// `gates[:, 0] * slow + gates[:, 1] * fast` per row.
    pub fn gate_fuse(&mut self, gates: Var, slow: Var, fast: Var) -> Var {
        let s = self.shape(slow).to_vec();
        assert_eq!(self.shape(fast), &s[..]);
        let d = s[1];
        let gt = self.data(gates);
        let (a, b) = (self.data(slow), self.data(fast));
        let mut out = vec![F::zero(); a.len()];
        for r in 0..s[0] {
            for j in 0..d {
                out[r * d + j] = gt[2 * r] * a[r * d + j] + gt[2 * r + 1] * b[r * d + j];
            }
        }
        self.push(Tensor::from_vec(&s, out), Op::GateFuse { gates, slow, fast })
    }

    /// Multiplies by a precomputed (already rescaled) keep mask.
    pub fn dropout(&mut self, x: Var, mask: Vec<F>) -> Var {
        assert_eq!(mask.len(), self.value(x).len());
        let data = self.data(x).iter().zip(&mask).map(|(&v, &m)| v * m).collect();
        let t = Tensor::from_vec(self.shape(x), data);
        self.push(t, Op::Dropout { x, mask })
    }

    /// Mean categorical cross-entropy of `logits: [B, C]`.
    pub fn cross_entropy(&mut self, logits: Var, labels: &[usize]) -> Var {
        let s = self.shape(logits).to_vec();
        assert_eq!(s[0], labels.len());
        let c = s[1];
        let src = self.data(logits);
        let mut probs = vec![F::zero(); src.len()];
        let mut loss = F::zero();
        for (r, (row, p)) in src.chunks(c).zip(probs.chunks_mut(c)).enumerate() {
            softmax_into(row, p);
            let max = row.iter().copied().fold(F::neg_infinity(), F::max);
            let lse = max + row.iter().map(|&v| (v - max).exp()).sum::<F>().ln();
            loss += lse - row[labels[r]];
        }
        loss /= F::from_usize(labels.len()).unwrap();
        self.push(
            Tensor::scalar(loss),
            Op::CrossEntropy {
                logits,
                labels: labels.to_vec(),
                probs,
            },
        )
    }

    /// `sum(x * weights)` as a scalar.
    pub fn weighted_sum(&mut self, x: Var, weights: Vec<F>) -> Var {
        assert_eq!(weights.len(), self.value(x).len());
        let s = self.data(x).iter().zip(&weights).map(|(&a, &b)| a * b).sum();
        self.push(Tensor::scalar(s), Op::WeightedSum { x, weights })
    }

    /// Gradients of the scalar `loss` with respect to every node.
    pub fn backward(&self, loss: Var) -> Gradients<F> {
        assert_eq!(self.value(loss).len(), 1, "backward needs a scalar");
        let mut grads: Vec<Option<Tensor<F>>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[loss.0] = Some(Tensor::full(self.shape(loss), F::one()));
        for i in (0..=loss.0).rev() {
            if matches!(self.nodes[i].op, Op::Leaf) {
                continue;
            }
            let Some(g) = grads[i].take() else { continue };
            self.backprop_node(i, g, &mut grads);
        }
        Gradients { grads }
    }

    fn backprop_node(&self, i: usize, g: Tensor<F>, grads: &mut [Option<Tensor<F>>]) {
        let node = &self.nodes[i];
        let gd = g.data();
        match &node.op {
            Op::Leaf => {}
            Op::Add(a, b) => {
                accumulate(grads, *a, g.clone());
                accumulate(grads, *b, g);
            }
            Op::Scale(x, s) => accumulate(grads, *x, g.map(|v| v * *s)),
            Op::Relu(x) => {
                let xv = self.data(*x);
                let d = gd
                    .iter()
                    .zip(xv)
                    .map(|(&gv, &v)| if v > F::zero() { gv } else { F::zero() })
                    .collect();
                accumulate(grads, *x, Tensor::from_vec(self.shape(*x), d));
            }
            Op::Gelu(x) => {
                let xv = self.data(*x);
                let d = gd.iter().zip(xv).map(|(&gv, &v)| gv * kernels::gelu_grad(v)).collect();
                accumulate(grads, *x, Tensor::from_vec(self.shape(*x), d));
            }
            Op::Reshape(x) => {
                let shape = self.shape(*x).to_vec();
                accumulate(grads, *x, g.reshaped(&shape));
            }
            Op::Permute { x, perm } => {
                let inv = inverse_perm(perm);
                let d = permute_data(gd, g.shape(), &inv);
                accumulate(grads, *x, Tensor::from_vec(self.shape(*x), d));
            }
            Op::Linear { x, w, b } => {
                let ws = self.shape(*w);
                let (k, n) = (ws[0], ws[1]);
                let m = gd.len() / n;
                let dx = matmul(gd, false, self.data(*w), true, m, n, k);
                let dw = matmul(self.data(*x), true, gd, false, k, m, n);
                accumulate(grads, *x, Tensor::from_vec(self.shape(*x), dx));
                accumulate(grads, *w, Tensor::from_vec(ws, dw));
                if let Some(b) = b {
                    let mut db = vec![F::zero(); n];
                    for row in gd.chunks(n) {
                        for (d, &v) in db.iter_mut().zip(row) {
                            *d += v;
                        }
                    }
                    accumulate(grads, *b, Tensor::from_vec(&[n], db));
                }
            }
            Op::Conv3d { x, w, b, geom } => {
                let (dx, dw, db) = kernels::conv3d_backward(self.data(*x), self.data(*w), gd, geom);
                accumulate(grads, *x, Tensor::from_vec(self.shape(*x), dx));
                accumulate(grads, *w, Tensor::from_vec(self.shape(*w), dw));
                if let Some(b) = b {
                    accumulate(grads, *b, Tensor::from_vec(self.shape(*b), db));
                }
            }
            Op::BatchNorm {
                x,
                gamma,
                beta,
                cache,
                dims,
                batch_stats,
            } => {
                let (dx, dg, db) = kernels::batch_norm_backward(
                    gd,
                    cache,
                    dims[0],
                    dims[1],
                    dims[2],
                    self.data(*gamma),
                    *batch_stats,
                );
                accumulate(grads, *x, Tensor::from_vec(self.shape(*x), dx));
                accumulate(grads, *gamma, Tensor::from_vec(self.shape(*gamma), dg));
                accumulate(grads, *beta, Tensor::from_vec(self.shape(*beta), db));
            }
            Op::LayerNorm {
                x,
                gamma,
                beta,
                cache,
            } => {
                let d = *self.shape(*x).last().unwrap();
                let (dx, dg, db) = kernels::layer_norm_backward(gd, cache, d, self.data(*gamma));
                accumulate(grads, *x, Tensor::from_vec(self.shape(*x), dx));
                accumulate(grads, *gamma, Tensor::from_vec(&[d], dg));
                accumulate(grads, *beta, Tensor::from_vec(&[d], db));
            }
            Op::MaxPool3d { x, argmax } => {
                let mut dx = vec![F::zero(); self.value(*x).len()];
                for (&idx, &gv) in argmax.iter().zip(gd) {
                    dx[idx] += gv;
                }
                accumulate(grads, *x, Tensor::from_vec(self.shape(*x), dx));
            }
            Op::MeanAxis { x, dims } => {
                let [outer, len, inner] = *dims;
                let inv = F::one() / F::from_usize(len).unwrap();
                let mut dx = vec![F::zero(); outer * len * inner];
                for o in 0..outer {
                    for a in 0..len {
                        for j in 0..inner {
                            dx[(o * len + a) * inner + j] = gd[o * inner + j] * inv;
                        }
                    }
                }
                accumulate(grads, *x, Tensor::from_vec(self.shape(*x), dx));
            }
            Op::AdaptiveAvgPool2d {
                x,
                planes,
                input,
                out,
            } => {
                let dx = kernels::adaptive_avg_pool2d_backward(gd, *planes, *input, *out);
                accumulate(grads, *x, Tensor::from_vec(self.shape(*x), dx));
            }
            Op::Laplacian { x, planes, h, w } => {
                let dx = kernels::laplacian2d(gd, *planes, *h, *w);
                accumulate(grads, *x, Tensor::from_vec(self.shape(*x), dx));
            }
            Op::Softmax(x) => {
                let y = node.value.data();
                let d = *g.shape().last().unwrap();
                let mut dx = vec![F::zero(); y.len()];
                for ((yr, gr), dr) in y.chunks(d).zip(gd.chunks(d)).zip(dx.chunks_mut(d)) {
                    let dot: F = yr.iter().zip(gr).map(|(&a, &b)| a * b).sum();
                    for j in 0..d {
                        dr[j] = yr[j] * (gr[j] - dot);
                    }
                }
                accumulate(grads, *x, Tensor::from_vec(self.shape(*x), dx));
            }
            Op::Attention {
                q,
                k,
                v,
                heads,
                probs,
            } => {
                let s = self.shape(*q).to_vec();
                let (dq, dk, dv) = kernels::attention_backward(
                    self.data(*q),
                    self.data(*k),
                    self.data(*v),
                    probs,
                    gd,
                    s[0],
                    s[1],
                    s[2],
                    *heads,
                );
                accumulate(grads, *q, Tensor::from_vec(&s, dq));
                accumulate(grads, *k, Tensor::from_vec(&s, dk));
                accumulate(grads, *v, Tensor::from_vec(&s, dv));
            }
            Op::PrependToken { x, token } => {
                let s = self.shape(*x).to_vec();
                let d = s[2];
                let mut dx = Vec::with_capacity(self.value(*x).len());
                let mut dt = vec![F::zero(); d];
                for grp in gd.chunks((s[1] + 1) * d) {
                    for (a, &b) in dt.iter_mut().zip(&grp[..d]) {
                        *a += b;
                    }
                    dx.extend_from_slice(&grp[d..]);
                }
                accumulate(grads, *x, Tensor::from_vec(&s, dx));
                accumulate(grads, *token, Tensor::from_vec(self.shape(*token), dt));
            }
            Op::AddTable { x, table } => {
                let tlen = self.value(*table).len();
                let mut dt = vec![F::zero(); tlen];
                for chunk in gd.chunks(tlen) {
                    for (a, &b) in dt.iter_mut().zip(chunk) {
                        *a += b;
                    }
                }
                accumulate(grads, *table, Tensor::from_vec(self.shape(*table), dt));
                accumulate(grads, *x, g);
            }
            Op::SelectToken { x, index } => {
                let s = self.shape(*x).to_vec();
                let d = s[2];
                let mut dx = vec![F::zero(); self.value(*x).len()];
                for grp in 0..s[0] {
                    dx[(grp * s[1] + index) * d..][..d].copy_from_slice(&gd[grp * d..][..d]);
                }
                accumulate(grads, *x, Tensor::from_vec(&s, dx));
            }
            Op::GateFuse { gates, slow, fast } => {
                let s = self.shape(*slow).to_vec();
                let d = s[1];
                let gt = self.data(*gates);
                let (a, b) = (self.data(*slow), self.data(*fast));
                let mut dg = vec![F::zero(); gt.len()];
                let mut da = vec![F::zero(); a.len()];
                let mut db = vec![F::zero(); b.len()];
                for r in 0..s[0] {
                    for j in 0..d {
                        let go = gd[r * d + j];
                        dg[2 * r] += go * a[r * d + j];
                        dg[2 * r + 1] += go * b[r * d + j];
                        da[r * d + j] = go * gt[2 * r];
                        db[r * d + j] = go * gt[2 * r + 1];
                    }
                }
                accumulate(grads, *gates, Tensor::from_vec(self.shape(*gates), dg));
                accumulate(grads, *slow, Tensor::from_vec(&s, da));
                accumulate(grads, *fast, Tensor::from_vec(&s, db));
            }
            Op::Dropout { x, mask } => {
                let d = gd.iter().zip(mask).map(|(&a, &m)| a * m).collect();
                accumulate(grads, *x, Tensor::from_vec(self.shape(*x), d));
            }
            Op::CrossEntropy {
                logits,
                labels,
                probs,
            } => {
                let c = self.shape(*logits)[1];
                let scale = gd[0] / F::from_usize(labels.len()).unwrap();
                let mut d = probs.clone();
                for (r, &l) in labels.iter().enumerate() {
                    d[r * c + l] -= F::one();
                }
                for v in d.iter_mut() {
                    *v *= scale;
                }
                accumulate(grads, *logits, Tensor::from_vec(self.shape(*logits), d));
            }
            Op::WeightedSum { x, weights } => {
                let d = weights.iter().map(|&w| w * gd[0]).collect();
                accumulate(grads, *x, Tensor::from_vec(self.shape(*x), d));
            }
        }
    }
}

fn accumulate<F: Real>(grads: &mut [Option<Tensor<F>>], v: Var, g: Tensor<F>) {
    match &mut grads[v.0] {
        Some(existing) => {
            for (a, &b) in existing.data_mut().iter_mut().zip(g.data()) {
                *a += b;
            }
        }
        slot @ None => *slot = Some(g),
    }
}

/// Result of [`Graph::backward`]. Nodes that did not influence the loss
/// have no gradient.
pub struct Gradients<F> {
    grads: Vec<Option<Tensor<F>>>,
}

impl<F: Real> Gradients<F> {
    pub fn get(&self, v: Var) -> Option<&Tensor<F>> {
        self.grads[v.0].as_ref()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    /// Central-difference check of d(loss)/d(input) for a graph builder.
    fn check_input_grad(
        shape: &[usize],
        build: impl Fn(&mut Graph<f64>, Var) -> Var,
        tol: f64,
    ) {
        let n: usize = shape.iter().product();
        let x0: Vec<f64> = (0..n).map(|i| ((i * 37 % 17) as f64 - 8.0) * 0.13 + 0.01 * i as f64).collect();
        let eval = |x: &[f64]| {
            let mut g = Graph::new();
            let v = g.leaf(Tensor::from_vec(shape, x.to_vec()));
            let out = build(&mut g, v);
            let w: Vec<f64> = (0..g.value(out).len()).map(|i| ((i % 7) as f64 - 3.0) * 0.3 + 0.05).collect();
            let l = g.weighted_sum(out, w);
            (g, v, l)
        };
        let (g, v, l) = eval(&x0);
        let grads = g.backward(l);
        let analytic = grads.get(v).unwrap().data().to_vec();
        let h = 1e-6;
        for i in 0..n {
            let mut xp = x0.clone();
            xp[i] += h;
            let mut xm = x0.clone();
            xm[i] -= h;
            let (gp, _, lp) = eval(&xp);
            let (gm, _, lm) = eval(&xm);
            let fd = (gp.value(lp).data()[0] - gm.value(lm).data()[0]) / (2.0 * h);
            let denom = analytic[i].abs().max(fd.abs()).max(1e-8);
            assert!(
                (analytic[i] - fd).abs() / denom < tol || (analytic[i] - fd).abs() < 1e-8,
                "element {i}: analytic {} vs fd {fd}",
                analytic[i]
            );
        }
    }

    #[test]
    fn grad_softmax() {
        check_input_grad(&[2, 3], |g, x| g.softmax(x), 1e-6);
    }

    #[test]
    fn grad_layer_norm() {
        check_input_grad(&[3, 4], |g, x| {
            let gamma = g.leaf(Tensor::from_vec(&[4], vec![1.0, 0.5, -0.3, 2.0]));
            let beta = g.leaf(Tensor::from_vec(&[4], vec![0.1, 0.0, 0.2, -0.1]));
            g.layer_norm(x, gamma, beta, 1e-5)
        }, 1e-5);
    }

    #[test]
    fn grad_batch_norm() {
        check_input_grad(&[2, 3, 4], |g, x| {
            let gamma = g.leaf(Tensor::from_vec(&[3], vec![1.0, 0.5, -0.3]));
            let beta = g.leaf(Tensor::from_vec(&[3], vec![0.1, 0.0, 0.2]));
            g.batch_norm(x, gamma, beta, 1e-5).0
        }, 1e-5);
    }

    #[test]
    fn grad_attention() {
        check_input_grad(&[2, 3, 4], |g, x| {
            let q = g.scale(x, 0.7);
            let k = g.gelu(x);
            g.attention(q, k, x, 2)
        }, 1e-5);
    }

    #[test]
    fn grad_conv_pool_permute() {
        check_input_grad(&[1, 2, 2, 4, 4], |g, x| {
            let w: Vec<f64> = (0..3 * 2 * 27).map(|i| ((i * 13 % 7) as f64 - 3.0) * 0.1).collect();
            let w = g.leaf(Tensor::from_vec(&[3, 2, 3, 3, 3], w));
            let y = g.conv3d(x, w, None);
            let y = g.max_pool3d(y, [1, 2, 2]);
            let y = g.permute(y, &[0, 2, 1, 3, 4]);
            let y = g.laplacian(y);
            g.adaptive_avg_pool2d(y, [1, 2])
        }, 1e-5);
    }

    #[test]
    fn grad_tokens_and_mean() {
        check_input_grad(&[2, 3, 2], |g, x| {
            let tok = g.leaf(Tensor::from_vec(&[2], vec![0.3, -0.2]));
            let y = g.prepend_token(x, tok);
            let tab = g.leaf(Tensor::from_vec(&[4, 2], vec![0.1; 8]));
            let y = g.add_table(y, tab);
            let w = g.leaf(Tensor::from_vec(&[2, 2], vec![1.0, 0.5, -0.5, 2.0]));
            let y = g.linear(y, w, None);
            let y = g.mean_axis(y, 1);
            g.relu(y)
        }, 1e-6);
    }

    #[test]
    fn permute_roundtrip() {
        let data: Vec<i32> = (0..24).collect();
        let p = permute_data(&data, &[2, 3, 4], &[2, 0, 1]);
        let back = permute_data(&p, &[4, 2, 3], &inverse_perm(&[2, 0, 1]));
        assert_eq!(back, data);
    }
}
