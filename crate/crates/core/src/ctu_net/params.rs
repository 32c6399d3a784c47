use std::collections::BTreeMap;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use super::{ModelConfig, ModelError};
use crate::nn::{Real, Tensor};

#[derive(Clone, Copy, Debug, PartialEq)]
pub(crate) enum Init {
    /// Normal with std `sqrt(2 / fan_in)`.
    He(usize),
    /// Normal with std `1 / sqrt(fan_in)`.
    FanIn(usize),
    /// Normal with std 0.02, redrawn beyond two standard deviations.
    TruncNormal,
    Zeros,
    Ones,
}

#[derive(Clone, Debug)]
pub(crate) struct ParamSpec {
    pub name: String,
    pub shape: Vec<usize>,
    pub init: Init,
}

fn spec(name: impl Into<String>, shape: &[usize], init: Init) -> ParamSpec {
    ParamSpec {
        name: name.into(),
        shape: shape.to_vec(),
        init,
    }
}

fn bn_specs(out: &mut Vec<ParamSpec>, prefix: &str, c: usize) {
    out.push(spec(format!("{prefix}.gamma"), &[c], Init::Ones));
    out.push(spec(format!("{prefix}.beta"), &[c], Init::Zeros));
}

fn linear_specs(out: &mut Vec<ParamSpec>, prefix: &str, k: usize, n: usize, init: Init) {
    out.push(spec(format!("{prefix}.weight"), &[k, n], init));
    out.push(spec(format!("{prefix}.bias"), &[n], Init::Zeros));
}

/// Names of the batch-norm layers, in forward order.
pub(crate) fn bn_layers(config: &ModelConfig) -> Vec<(String, usize)> {
    let mut out = vec![("slow.stem.bn".to_string(), config.slow.stem_channels)];
    let mut in_ch = config.slow.stem_channels;
    for (i, &c) in config.slow.block_channels.iter().enumerate() {
        out.push((format!("slow.block{i}.bn1"), c));
        out.push((format!("slow.block{i}.bn2"), c));
        if in_ch != c {
            out.push((format!("slow.block{i}.shortcut.bn"), c));
        }
        in_ch = c;
    }
    out
}

/// Every trainable tensor of the model, in initialization order.
pub(crate) fn param_specs(config: &ModelConfig) -> Vec<ParamSpec> {
    let mut out = Vec::new();
    let cin = config.input.channels;
    let stem = config.slow.stem_channels;
    out.push(spec("slow.stem.conv.weight", &[stem, cin, 3, 3, 3], Init::He(cin * 27)));
    bn_specs(&mut out, "slow.stem.bn", stem);
    let mut in_ch = stem;
    for (i, &c) in config.slow.block_channels.iter().enumerate() {
        let p = format!("slow.block{i}");
        out.push(spec(format!("{p}.conv1.weight"), &[c, in_ch, 3, 3, 3], Init::He(in_ch * 27)));
        bn_specs(&mut out, &format!("{p}.bn1"), c);
        out.push(spec(format!("{p}.conv2.weight"), &[c, c, 3, 3, 3], Init::He(c * 27)));
        bn_specs(&mut out, &format!("{p}.bn2"), c);
        if in_ch != c {
            out.push(spec(format!("{p}.shortcut.conv.weight"), &[c, in_ch, 1, 1, 1], Init::He(in_ch)));
            bn_specs(&mut out, &format!("{p}.shortcut.bn"), c);
        }
        in_ch = c;
    }
    let d = config.fast.embed_dim;
    linear_specs(&mut out, "slow.proj", in_ch, d, Init::FanIn(in_ch));

    let p = config.fast.patch_size;
    linear_specs(&mut out, "fast.patch", p * p * cin, d, Init::TruncNormal);
    out.push(spec("fast.cls", &[d], Init::TruncNormal));
    out.push(spec("fast.pos", &[config.num_patches() + 1, d], Init::TruncNormal));
    let hidden = d * config.fast.mlp_ratio;
    for l in 0..config.fast.num_layers {
        for part in ["spatial", "temporal"] {
            for m in ["q", "k", "v"] {
                linear_specs(&mut out, &format!("fast.layer{l}.{part}.{m}"), d, d, Init::TruncNormal);
            }
        }
        out.push(spec(format!("fast.layer{l}.norm.gamma"), &[d], Init::Ones));
        out.push(spec(format!("fast.layer{l}.norm.beta"), &[d], Init::Zeros));
        linear_specs(&mut out, &format!("fast.layer{l}.mlp.fc1"), d, hidden, Init::TruncNormal);
        linear_specs(&mut out, &format!("fast.layer{l}.mlp.fc2"), hidden, d, Init::TruncNormal);
    }

    let k = config.freq.conv_channels;
    out.push(spec("freq.conv.weight", &[k, 1, 1, 3, 3], Init::He(9)));
    out.push(spec("freq.conv.bias", &[k], Init::Zeros));
    let fd = config.freq_dim();
    let gh = config.freq.gate_hidden_dim;
    linear_specs(&mut out, "freq.gate.fc1", fd, gh, Init::FanIn(fd));
    linear_specs(&mut out, "freq.gate.fc2", gh, 2, Init::FanIn(gh));

    linear_specs(&mut out, "head", d, config.num_classes, Init::FanIn(d));
    out
}

fn sample(init: Init, n: usize, rng: &mut ChaCha8Rng) -> Vec<f64> {
    let normal = |std: f64, rng: &mut ChaCha8Rng| -> Vec<f64> {
        (0..n)
            .map(|_| {
                let z: f64 = StandardNormal.sample(rng);
                z * std
            })
            .collect()
    };
    match init {
        Init::He(fan_in) => normal((2.0 / fan_in as f64).sqrt(), rng),
        Init::FanIn(fan_in) => normal(1.0 / (fan_in as f64).sqrt(), rng),
        Init::TruncNormal => (0..n)
            .map(|_| loop {
                let z: f64 = StandardNormal.sample(rng);
                if z.abs() <= 2.0 {
                    break 0.02 * z;
                }
            })
            .collect(),
        Init::Zeros => vec![0.0; n],
        Init::Ones => vec![1.0; n],
    }
}

/// Named parameters plus non-trainable buffers (batch-norm running
/// statistics).
#[derive(Clone, Debug, PartialEq)]
pub struct ParamStore<F> {
    params: BTreeMap<String, Tensor<F>>,
    buffers: BTreeMap<String, Tensor<F>>,
}

impl<F: Real> ParamStore<F> {
    /// Seeded initialization. Values are drawn in f64 and rounded, so f32
    /// and f64 stores built from the same config agree to f32 precision.
    pub fn init(config: &ModelConfig) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let params = param_specs(config)
            .into_iter()
            .map(|s| {
                let n = s.shape.iter().product();
                let data = sample(s.init, n, &mut rng).into_iter().map(F::lit).collect();
                (s.name, Tensor::from_vec(&s.shape, data))
            })
            .collect();
        let mut buffers = BTreeMap::new();
        for (name, c) in bn_layers(config) {
            buffers.insert(format!("{name}.running_mean"), Tensor::zeros(&[c]));
            buffers.insert(format!("{name}.running_var"), Tensor::full(&[c], F::one()));
        }
        Self { params, buffers }
    }

    pub fn from_maps(
        params: BTreeMap<String, Tensor<F>>,
        buffers: BTreeMap<String, Tensor<F>>,
    ) -> Self {
        Self { params, buffers }
    }

    /// Errors unless names and shapes match exactly what `config` needs.
    pub fn check_layout(&self, config: &ModelConfig) -> Result<(), ModelError> {
        let expected = Self::init(&config.clone().with_seed(0));
        for (kind, have, want) in [
            ("parameter", &self.params, &expected.params),
            ("buffer", &self.buffers, &expected.buffers),
        ] {
            for (name, t) in want {
                match have.get(name) {
                    None => return Err(ModelError::Layout(format!("missing {kind} {name}"))),
                    Some(h) if h.shape() != t.shape() => {
                        return Err(ModelError::Layout(format!(
                            "{kind} {name} has shape {:?}, expected {:?}",
                            h.shape(),
                            t.shape()
                        )))
                    }
                    Some(_) => {}
                }
            }
            if let Some(extra) = have.keys().find(|k| !want.contains_key(*k)) {
                return Err(ModelError::Layout(format!("unexpected {kind} {extra}")));
            }
        }
        Ok(())
    }

    pub fn param(&self, name: &str) -> Option<&Tensor<F>> {
        self.params.get(name)
    }

    pub fn param_mut(&mut self, name: &str) -> Option<&mut Tensor<F>> {
        self.params.get_mut(name)
    }

    pub fn buffer(&self, name: &str) -> Option<&Tensor<F>> {
        self.buffers.get(name)
    }

    pub fn buffer_mut(&mut self, name: &str) -> Option<&mut Tensor<F>> {
        self.buffers.get_mut(name)
    }

    pub fn params(&self) -> &BTreeMap<String, Tensor<F>> {
        &self.params
    }

    pub fn params_mut(&mut self) -> impl Iterator<Item = (&String, &mut Tensor<F>)> {
        self.params.iter_mut()
    }

    pub fn buffers(&self) -> &BTreeMap<String, Tensor<F>> {
        &self.buffers
    }

    pub fn num_params(&self) -> usize {
        self.params.values().map(|t| t.len()).sum()
    }

    pub fn cast<G: Real>(&self) -> ParamStore<G> {
        ParamStore {
            params: self.params.iter().map(|(k, v)| (k.clone(), v.cast())).collect(),
            buffers: self.buffers.iter().map(|(k, v)| (k.clone(), v.cast())).collect(),
        }
    }
}
