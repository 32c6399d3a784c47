use std::collections::BTreeMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::ops::{extract_patches, video_spectra};
use super::params::ParamStore;
use super::{Ablation, ModelConfig, ModelError};
use crate::nn::{permute_data, Graph, Real, Tensor, Var};

const BN_EPS: f64 = 1e-5;
const LN_EPS: f64 = 1e-5;
/// Running-statistics update rate.
pub const BN_MOMENTUM: f64 = 0.1;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ForwardOptions {
    /// Normalize with batch statistics instead of running statistics.
    pub batch_stats: bool,
    /// Seed for dropout masks; `None` disables dropout.
    pub dropout_seed: Option<u64>,
}

impl ForwardOptions {
    pub fn train(dropout_seed: u64) -> Self {
        Self {
            batch_stats: true,
            dropout_seed: Some(dropout_seed),
        }
    }

    pub fn eval() -> Self {
        Self {
            batch_stats: false,
            dropout_seed: None,
        }
    }

    /// Batch statistics without dropout: a pure function of the parameters,
    /// as needed for finite-difference checks.
    pub fn deterministic() -> Self {
        Self {
            batch_stats: true,
            dropout_seed: None,
        }
    }
}

/// Batch statistics observed by one batch-norm layer.
#[derive(Clone, Debug)]
pub struct BnUpdate<F> {
    pub layer: String,
    pub mean: Vec<F>,
    /// Biased batch variance.
    pub var: Vec<F>,
    /// Values per channel that produced the statistics.
    pub count: usize,
}

/// A recorded forward pass; `graph` can be extended with a loss and
/// differentiated.
pub struct ForwardPass<F> {
    pub graph: Graph<F>,
    pub logits: Var,
    pub probs: Var,
    pub fused: Var,
    pub gates: Var,
    pub slow: Option<Var>,
    pub fast: Option<Var>,
    pub freq: Option<Var>,
    pub params: BTreeMap<String, Var>,
    pub bn_updates: Vec<BnUpdate<F>>,
}

/// Class probabilities with the intermediate path outputs.
#[derive(Clone, Debug, PartialEq)]
pub struct Prediction<F> {
    /// `[B, C]`, rows sum to one.
    pub probs: Tensor<F>,
    pub logits: Tensor<F>,
    /// `[B, 2]` as (slow, fast).
    pub gates: Tensor<F>,
    pub features: PathFeatures<F>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct PathFeatures<F> {
    pub slow: Option<Tensor<F>>,
    pub fast: Option<Tensor<F>>,
    pub freq: Option<Tensor<F>>,
    pub fused: Tensor<F>,
}

impl<F: Real> Prediction<F> {
    /// Arg-max class per row; ties resolve to the lowest index.
    pub fn classes(&self) -> Vec<usize> {
        let c = self.probs.shape()[1];
        self.probs
            .data()
            .chunks(c)
            .map(|row| {
                let mut best = 0;
                for (j, &v) in row.iter().enumerate() {
                    if v > row[best] {
                        best = j;
                    }
                }
                best
            })
            .collect()
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct CtuNet<F> {
    config: ModelConfig,
    store: ParamStore<F>,
}

impl<F: Real> CtuNet<F> {
    pub fn new(config: ModelConfig) -> Result<Self, ModelError> {
        config.validate()?;
        let store = ParamStore::init(&config);
        Ok(Self { config, store })
    }

    pub fn from_parts(config: ModelConfig, store: ParamStore<F>) -> Result<Self, ModelError> {
        config.validate()?;
        store.check_layout(&config)?;
        Ok(Self { config, store })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn store(&self) -> &ParamStore<F> {
        &self.store
    }

    pub fn store_mut(&mut self) -> &mut ParamStore<F> {
        &mut self.store
    }

    /// Switches the path configuration without touching the parameters.
    pub fn set_ablation(&mut self, ablation: Ablation) {
        self.config.ablation = ablation;
    }

    pub fn cast<G: Real>(&self) -> CtuNet<G> {
        CtuNet {
            config: self.config.clone(),
            store: self.store.cast(),
        }
    }

    fn check_input(&self, input: &Tensor<F>) -> Result<(), ModelError> {
        let s = input.shape();
        let i = &self.config.input;
        if s.len() != 5 {
            return Err(ModelError::Shape(format!("input must be [B, T, H, W, C], got {s:?}")));
        }
        if s[0] == 0 {
            return Err(ModelError::Shape("batch axis is empty".into()));
        }
        let want = [i.frames, i.height, i.width, i.channels];
        for (axis, (&got, &w)) in ["frames", "height", "width", "channels"].iter().zip(s[1..].iter().zip(&want)) {
            if got != w {
                return Err(ModelError::Shape(format!("{axis} axis is {got}, config expects {w}")));
            }
        }
        if !input.all_finite() {
            return Err(ModelError::NonFinite("input".into()));
        }
        Ok(())
    }

    /// Records a forward pass over `input: [B, T, H, W, C]`.
    pub fn forward(&self, input: &Tensor<F>, opts: ForwardOptions) -> Result<ForwardPass<F>, ModelError> {
        self.check_input(input)?;
        let mut b = Builder {
            g: Graph::new(),
            store: &self.store,
            config: &self.config,
            params: BTreeMap::new(),
            bn_updates: Vec::new(),
            opts,
        };
        let batch = input.shape()[0];
        let ablation = self.config.ablation;
        let slow = ablation.uses_slow().then(|| b.slow_path(input));
        let fast = ablation.uses_fast().then(|| b.fast_path(input));
        let (freq, gates) = if ablation.uses_freq() {
            let (f, g) = b.freq_path(input);
            (Some(f), g)
        } else {
            let pair = match ablation {
                Ablation::NoSlow => [0.0, 1.0],
                Ablation::NoFast => [1.0, 0.0],
                _ => [0.5, 0.5],
            };
            let data = (0..batch).flat_map(|_| pair).map(F::lit).collect();
            (None, b.g.leaf(Tensor::from_vec(&[batch, 2], data)))
        };
        let fused = match (slow, fast) {
            (Some(s), Some(f)) => b.g.gate_fuse(gates, s, f),
            (Some(s), None) => s,
            (None, Some(f)) => f,
            (None, None) => unreachable!("every ablation keeps a feature path"),
        };
        let (w, bias) = (b.p("head.weight"), b.p("head.bias"));
        let logits = b.g.linear(fused, w, Some(bias));
        let probs = b.g.softmax(logits);
        if !b.g.value(logits).all_finite() {
            return Err(ModelError::NonFinite("logits".into()));
        }
        Ok(ForwardPass {
            graph: b.g,
            logits,
            probs,
            fused,
            gates,
            slow,
            fast,
            freq,
            params: b.params,
            bn_updates: b.bn_updates,
        })
    }

    /// Inference with running statistics and no dropout.
    pub fn predict(&self, input: &Tensor<F>) -> Result<Prediction<F>, ModelError> {
        let pass = self.forward(input, ForwardOptions::eval())?;
        let g = &pass.graph;
        let get = |v: Option<Var>| v.map(|v| g.value(v).clone());
        Ok(Prediction {
            probs: g.value(pass.probs).clone(),
            logits: g.value(pass.logits).clone(),
            gates: g.value(pass.gates).clone(),
            features: PathFeatures {
                slow: get(pass.slow),
                fast: get(pass.fast),
                freq: get(pass.freq),
                fused: g.value(pass.fused).clone(),
            },
        })
    }

    /// Folds observed batch statistics into the running buffers
    /// (`running = (1 - m) * running + m * batch`, unbiased variance).
    pub fn apply_bn_updates(&mut self, updates: &[BnUpdate<F>]) {
        let m = F::lit(BN_MOMENTUM);
        let keep = F::one() - m;
        for u in updates {
            let n = u.count.max(2);
            let unbias = F::from_usize(n).unwrap() / F::from_usize(n - 1).unwrap();
            if let Some(rm) = self.store.buffer_mut(&format!("{}.running_mean", u.layer)) {
                for (r, &v) in rm.data_mut().iter_mut().zip(&u.mean) {
                    *r = keep * *r + m * v;
                }
            }
            if let Some(rv) = self.store.buffer_mut(&format!("{}.running_var", u.layer)) {
                for (r, &v) in rv.data_mut().iter_mut().zip(&u.var) {
                    *r = keep * *r + m * v * unbias;
                }
            }
        }
    }
}

struct Builder<'a, F> {
    g: Graph<F>,
    store: &'a ParamStore<F>,
    config: &'a ModelConfig,
    params: BTreeMap<String, Var>,
    bn_updates: Vec<BnUpdate<F>>,
    opts: ForwardOptions,
}

impl<F: Real> Builder<'_, F> {
    fn p(&mut self, name: &str) -> Var {
        if let Some(&v) = self.params.get(name) {
            return v;
        }
        let t = self
            .store
            .param(name)
            .unwrap_or_else(|| panic!("parameter {name} missing from a validated store"))
            .clone();
        let v = self.g.leaf(t);
        self.params.insert(name.to_string(), v);
        v
    }

    fn bn(&mut self, x: Var, layer: &str) -> Var {
        let gamma = self.p(&format!("{layer}.gamma"));
        let beta = self.p(&format!("{layer}.beta"));
        let eps = F::lit(BN_EPS);
        if self.opts.batch_stats {
            let s = self.g.value(x).shape();
            let count = s[0] * s[2..].iter().product::<usize>();
            let (y, mean, var) = self.g.batch_norm(x, gamma, beta, eps);
            self.bn_updates.push(BnUpdate {
                layer: layer.to_string(),
                mean,
                var,
                count,
            });
            y
        } else {
            let mean = self.store.buffer(&format!("{layer}.running_mean")).unwrap().data().to_vec();
            let var = self.store.buffer(&format!("{layer}.running_var")).unwrap().data().to_vec();
            self.g.batch_norm_fixed(x, gamma, beta, &mean, &var, eps)
        }
    }

    fn conv(&mut self, x: Var, name: &str, bias: bool) -> Var {
        let w = self.p(&format!("{name}.weight"));
        let b = bias.then(|| self.p(&format!("{name}.bias")));
        self.g.conv3d(x, w, b)
    }

    fn linear(&mut self, x: Var, name: &str) -> Var {
        let w = self.p(&format!("{name}.weight"));
        let b = self.p(&format!("{name}.bias"));
        self.g.linear(x, w, Some(b))
    }

    /// Returns `[B, D]`.
    fn slow_path(&mut self, input: &Tensor<F>) -> Var {
        let s = input.shape();
        let x = permute_data(input.data(), s, &[0, 4, 1, 2, 3]);
        let x = self.g.leaf(Tensor::from_vec(&[s[0], s[4], s[1], s[2], s[3]], x));
        let x = self.conv(x, "slow.stem.conv", false);
        let x = self.bn(x, "slow.stem.bn");
        let x = self.g.relu(x);
        let mut x = self.g.max_pool3d(x, self.config.stem_pool());
        let mut in_ch = self.config.slow.stem_channels;
        for (i, &c) in self.config.slow.block_channels.iter().enumerate() {
            let p = format!("slow.block{i}");
            let h = self.conv(x, &format!("{p}.conv1"), false);
            let h = self.bn(h, &format!("{p}.bn1"));
            let h = self.g.relu(h);
            let h = self.conv(h, &format!("{p}.conv2"), false);
            let h = self.bn(h, &format!("{p}.bn2"));
            let shortcut = if in_ch != c {
                let sc = self.conv(x, &format!("{p}.shortcut.conv"), false);
                self.bn(sc, &format!("{p}.shortcut.bn"))
            } else {
                x
            };
            let sum = self.g.add(h, shortcut);
            x = self.g.relu(sum);
            in_ch = c;
        }
        let s = self.g.value(x).shape().to_vec();
        let flat = self.g.reshape(x, &[s[0], s[1], s[2] * s[3] * s[4]]);
        let pooled = self.g.mean_axis(flat, 2);
        self.linear(pooled, "slow.proj")
    }

    fn dropout_mask(&self, len: usize, salt: u64) -> Option<Vec<F>> {
        let seed = self.opts.dropout_seed?;
        let rate = self.config.fast.dropout_rate;
        if rate == 0.0 {
            return None;
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ salt.wrapping_mul(0x9E37_79B9_7F4A_7C15));
        let scale = F::lit(1.0 / (1.0 - rate));
        Some(
            (0..len)
                .map(|_| if rng.random::<f64>() < rate { F::zero() } else { scale })
                .collect(),
        )
    }

    /// Returns `[B, D]`.
    fn fast_path(&mut self, input: &Tensor<F>) -> Var {
        let cfg = &self.config.fast;
        let batch = input.shape()[0];
        let tf = self.config.fast_frames();
        let d = cfg.embed_dim;
        let heads = cfg.num_heads;
        let patches = self.g.leaf(extract_patches(input, cfg.patch_size, cfg.temporal_stride));
        let z = self.linear(patches, "fast.patch");
        let cls = self.p("fast.cls");
        let z = self.g.prepend_token(z, cls);
        let pos = self.p("fast.pos");
        let mut z = self.g.add_table(z, pos);
        let n = self.config.num_patches() + 1;
        for l in 0..cfg.num_layers {
            let p = format!("fast.layer{l}");
            // Spatial attention within each frame: [B * T', n, D].
            let q = self.linear(z, &format!("{p}.spatial.q"));
            let k = self.linear(z, &format!("{p}.spatial.k"));
            let v = self.linear(z, &format!("{p}.spatial.v"));
            let zs = self.g.attention(q, k, v, heads);
            // Temporal attention per token position: [B * n, T', D].
            let zt = self.g.reshape(zs, &[batch, tf, n, d]);
            let zt = self.g.permute(zt, &[0, 2, 1, 3]);
            let zt = self.g.reshape(zt, &[batch * n, tf, d]);
            let q = self.linear(zt, &format!("{p}.temporal.q"));
            let k = self.linear(zt, &format!("{p}.temporal.k"));
            let v = self.linear(zt, &format!("{p}.temporal.v"));
            let zt = self.g.attention(q, k, v, heads);
            let zt = self.g.reshape(zt, &[batch, n, tf, d]);
            let zt = self.g.permute(zt, &[0, 2, 1, 3]);
            let z2 = self.g.reshape(zt, &[batch * tf, n, d]);
            let gamma = self.p(&format!("{p}.norm.gamma"));
            let beta = self.p(&format!("{p}.norm.beta"));
            let h = self.g.layer_norm(z2, gamma, beta, F::lit(LN_EPS));
            let h = self.linear(h, &format!("{p}.mlp.fc1"));
            let h = self.g.gelu(h);
            let mut h = self.linear(h, &format!("{p}.mlp.fc2"));
            if let Some(mask) = self.dropout_mask(self.g.value(h).len(), l as u64 + 1) {
                h = self.g.dropout(h, mask);
            }
            z = self.g.add(z2, h);
        }
        let cls = self.g.select_token(z, 0);
        let cls = self.g.reshape(cls, &[batch, tf, d]);
        self.g.mean_axis(cls, 1)
    }

    /// Returns the pooled spectral descriptor `[B, d_freq]` and the gates `[B, 2]`.
    fn freq_path(&mut self, input: &Tensor<F>) -> (Var, Var) {
        let s = input.shape();
        let (batch, t, c) = (s[0], s[1], s[4]);
        let cfg = &self.config.freq;
        let (k, grid) = (cfg.conv_channels, cfg.pool_grid);
        let spectra = self.g.leaf(video_spectra(input));
        let x = self.conv(spectra, "freq.conv", true);
        let x = self.g.laplacian(x);
        let x = self.g.max_pool3d(x, [1, 2, 2]);
        let x = self.g.adaptive_avg_pool2d(x, [grid, grid]);
        let x = self.g.reshape(x, &[batch, k, t, c * grid * grid]);
        let x = self.g.mean_axis(x, 2);
        let feat = self.g.reshape(x, &[batch, k * c * grid * grid]);
        let h = self.linear(feat, "freq.gate.fc1");
        let h = self.g.relu(h);
        let logits = self.linear(h, "freq.gate.fc2");
        let gates = self.g.softmax(logits);
        (feat, gates)
    }
}

/// Stacks clips into a `[B, T, H, W, C]` batch.
pub fn stack_clips<F: Real>(clips: &[&Tensor<f32>]) -> Result<Tensor<F>, ModelError> {
    let first = clips
        .first()
        .ok_or_else(|| ModelError::Shape("cannot stack an empty batch".into()))?;
    let shape = first.shape().to_vec();
    let mut data = Vec::with_capacity(clips.len() * first.len());
    for c in clips {
        if c.shape() != shape {
            return Err(ModelError::Shape(format!(
                "clip shape {:?} differs from {:?}",
                c.shape(),
                shape
            )));
        }
        data.extend(c.data().iter().map(|&v| F::lit(v as f64)));
    }
    let mut full = vec![clips.len()];
    full.extend(shape);
    Ok(Tensor::from_vec(&full, data))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::video_data::synth_video;

    fn batch(config: &ModelConfig, n: usize) -> Tensor<f64> {
        let i = config.input;
        let clips: Vec<_> = (0..n)
            .map(|k| synth_video(k % 5, k as u64, (i.frames, i.height, i.width)).unwrap().frames)
            .collect();
        stack_clips(&clips.iter().collect::<Vec<_>>()).unwrap()
    }

    #[test]
    fn output_shapes_and_normalization() {
        for ablation in Ablation::ALL {
            let c = ModelConfig::tiny().with_ablation(ablation);
            let net = CtuNet::<f64>::new(c.clone()).unwrap();
            let p = net.predict(&batch(&c, 3)).unwrap();
            assert_eq!(p.probs.shape(), &[3, 5]);
            assert_eq!(p.gates.shape(), &[3, 2]);
            for r in 0..3 {
                assert!((p.probs.row(r).iter().sum::<f64>() - 1.0).abs() < 1e-12);
                assert!((p.gates.row(r).iter().sum::<f64>() - 1.0).abs() < 1e-12);
            }
            assert_eq!(p.features.fused.shape(), &[3, c.fast.embed_dim]);
        }
    }

    #[test]
    fn ablation_gates_and_features() {
        let c = ModelConfig::tiny();
        let x = batch(&c, 2);
        let mut net = CtuNet::<f64>::new(c).unwrap();
        net.set_ablation(Ablation::NoSlow);
        let p = net.predict(&x).unwrap();
        assert_eq!(p.gates.data(), &[0.0, 1.0, 0.0, 1.0]);
        assert!(p.features.slow.is_none());
        assert_eq!(p.features.fused, p.features.fast.clone().unwrap());
        net.set_ablation(Ablation::NoFast);
        let p = net.predict(&x).unwrap();
        assert_eq!(p.gates.data(), &[1.0, 0.0, 1.0, 0.0]);
        assert_eq!(p.features.fused, p.features.slow.clone().unwrap());
        net.set_ablation(Ablation::NoFreq);
        let p = net.predict(&x).unwrap();
        assert!(p.gates.data().iter().all(|&g| g == 0.5));
        assert!(p.features.freq.is_none());
    }

    #[test]
    fn zero_head_gives_uniform_probs() {
        let c = ModelConfig::tiny();
        let mut net = CtuNet::<f64>::new(c.clone()).unwrap();
        for v in net.store_mut().param_mut("head.weight").unwrap().data_mut() {
            *v = 0.0;
        }
        let p = net.predict(&batch(&c, 2)).unwrap();
        assert!(p.probs.data().iter().all(|&v| (v - 0.2).abs() < 1e-15));
    }

    #[test]
    fn zero_gate_logits_split_evenly() {
        let c = ModelConfig::tiny();
        let mut net = CtuNet::<f64>::new(c.clone()).unwrap();
        for name in ["freq.gate.fc2.weight", "freq.gate.fc2.bias"] {
            for v in net.store_mut().param_mut(name).unwrap().data_mut() {
                *v = 0.0;
            }
        }
        let p = net.predict(&batch(&c, 2)).unwrap();
        assert!(p.gates.data().iter().all(|&g| (g - 0.5).abs() < 1e-15));
        // Logits (ln 3, 0) give a 0.75 slow-path weight.
        net.store_mut().param_mut("freq.gate.fc2.bias").unwrap().data_mut()[0] = 3f64.ln();
        let p = net.predict(&batch(&c, 2)).unwrap();
        assert!((p.gates.data()[0] - 0.75).abs() < 1e-12);
    }

    #[test]
    fn zeroed_block_reduces_to_shortcut() {
        let c = ModelConfig::tiny().with_ablation(Ablation::NoFast);
        let mut net = CtuNet::<f64>::new(c.clone()).unwrap();
        for name in ["slow.block0.conv1.weight", "slow.block0.conv2.weight"] {
            for v in net.store_mut().param_mut(name).unwrap().data_mut() {
                *v = 0.0;
            }
        }
        let x = batch(&c, 2);
        let with_block = net.forward(&x, ForwardOptions::deterministic()).unwrap();
        // Recompute the stem output by hand and apply the remaining layers.
        let g = &with_block.graph;
        let slow = g.value(with_block.slow.unwrap()).clone();
        let mut reference = Builder {
            g: Graph::new(),
            store: net.store(),
            config: net.config(),
            params: BTreeMap::new(),
            bn_updates: Vec::new(),
            opts: ForwardOptions::deterministic(),
        };
        let s = x.shape();
        let xp = permute_data(x.data(), s, &[0, 4, 1, 2, 3]);
        let v = reference.g.leaf(Tensor::from_vec(&[s[0], s[4], s[1], s[2], s[3]], xp));
        let v = reference.conv(v, "slow.stem.conv", false);
        let v = reference.bn(v, "slow.stem.bn");
        let v = reference.g.relu(v);
        let v = reference.g.max_pool3d(v, c.stem_pool());
        let v = reference.g.relu(v);
        let sh = reference.g.value(v).shape().to_vec();
        let v = reference.g.reshape(v, &[sh[0], sh[1], sh[2] * sh[3] * sh[4]]);
        let v = reference.g.mean_axis(v, 2);
        let v = reference.linear(v, "slow.proj");
        for (a, b) in slow.data().iter().zip(reference.g.value(v).data()) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn constant_input_has_finite_output() {
        let c = ModelConfig::tiny();
        let net = CtuNet::<f64>::new(c.clone()).unwrap();
        let i = c.input;
        let x = Tensor::full(&[2, i.frames, i.height, i.width, i.channels], 0.5);
        let p = net.forward(&x, ForwardOptions::deterministic()).unwrap();
        assert!(p.graph.value(p.probs).all_finite());
    }

    #[test]
    fn rejects_wrong_shape_and_nan() {
        let c = ModelConfig::tiny();
        let net = CtuNet::<f32>::new(c.clone()).unwrap();
        assert!(net.predict(&Tensor::zeros(&[1, 7, 16, 16, 1])).is_err());
        let mut x = Tensor::zeros(&[1, 8, 16, 16, 1]);
        x.data_mut()[3] = f32::NAN;
        assert!(matches!(net.predict(&x), Err(ModelError::NonFinite(_))));
    }

    #[test]
    fn dropout_only_in_training() {
        let c = ModelConfig::tiny();
        let net = CtuNet::<f64>::new(c.clone()).unwrap();
        let x = batch(&c, 2);
        let a = net.forward(&x, ForwardOptions::train(1)).unwrap();
        let b = net.forward(&x, ForwardOptions::train(2)).unwrap();
        let d = net.forward(&x, ForwardOptions::deterministic()).unwrap();
        assert_ne!(a.graph.value(a.logits), b.graph.value(b.logits));
        let e = net.forward(&x, ForwardOptions::deterministic()).unwrap();
        assert_eq!(d.graph.value(d.logits), e.graph.value(e.logits));
    }

    #[test]
    fn running_stats_update() {
        let c = ModelConfig::tiny();
        let mut net = CtuNet::<f64>::new(c.clone()).unwrap();
        let pass = net.forward(&batch(&c, 2), ForwardOptions::deterministic()).unwrap();
        let u = pass.bn_updates[0].clone();
        net.apply_bn_updates(&pass.bn_updates);
        let rm = net.store().buffer("slow.stem.bn.running_mean").unwrap();
        assert!((rm.data()[0] - 0.1 * u.mean[0]).abs() < 1e-15);
        let rv = net.store().buffer("slow.stem.bn.running_var").unwrap();
        let n = u.count as f64;
        assert!((rv.data()[0] - (0.9 + 0.1 * u.var[0] * n / (n - 1.0))).abs() < 1e-12);
    }

    #[test]
    fn f32_and_f64_agree() {
        let c = ModelConfig::tiny();
        let net64 = CtuNet::<f64>::new(c.clone()).unwrap();
        let net32: CtuNet<f32> = net64.cast();
        let x = batch(&c, 2);
        let p64 = net64.predict(&x).unwrap();
        let p32 = net32.predict(&x.cast()).unwrap();
        for (a, b) in p64.probs.data().iter().zip(p32.probs.data()) {
            assert!((a - *b as f64).abs() < 1e-4);
        }
    }
}
