use std::collections::BTreeMap;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::metrics::{compute_metrics, MetricsReport};
use super::TrainError;
use crate::ctu_net::{stack_clips, Ablation, CtuNet, ForwardOptions, ModelConfig};
use crate::nn::Tensor;
use crate::par;
use crate::video_data::{load_video, DatasetManifest, Split, VideoSample};

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Optimizer {
    #[default]
    Adam,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainSpec {
    pub optimizer: Optimizer,
    pub beta1: f64,
    pub beta2: f64,
    pub adam_eps: f64,
    /// L2 penalty added to every gradient.
    pub weight_decay: f64,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub epochs: usize,
    pub input_size: (usize, usize),
    pub seed: u64,
}

impl Default for TrainSpec {
    fn default() -> Self {
        Self {
            optimizer: Optimizer::Adam,
            beta1: 0.9,
            beta2: 0.999,
            adam_eps: 1e-8,
            weight_decay: 1e-4,
            batch_size: 4,
            learning_rate: 1e-4,
            epochs: 10,
            input_size: (32, 32),
            seed: 0,
        }
    }
}

impl TrainSpec {
    pub fn validate(&self, config: &ModelConfig) -> Result<(), TrainError> {
        let err = |m: String| Err(TrainError::Validation(m));
        if self.batch_size < 1 {
            return err("batch_size must be at least 1".into());
        }
        if !(self.learning_rate >= 0.0 && self.learning_rate.is_finite()) {
            return err(format!("learning_rate must be finite and non-negative, got {}", self.learning_rate));
        }
        if !(0.0..1.0).contains(&self.beta1) || !(0.0..1.0).contains(&self.beta2) {
            return err("Adam betas must lie in [0, 1)".into());
        }
        if self.weight_decay < 0.0 || self.adam_eps <= 0.0 {
            return err("weight_decay must be >= 0 and adam_eps > 0".into());
        }
        if self.input_size != (config.input.height, config.input.width) {
            return err(format!(
                "input_size {:?} differs from the model input {}x{}",
                self.input_size, config.input.height, config.input.width
            ));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LossPoint {
    pub step: usize,
    pub epoch: usize,
    pub loss: f64,
}

pub struct TrainOutcome {
    pub model: CtuNet<f32>,
    /// One point per optimizer step.
    pub loss_curve: Vec<LossPoint>,
    /// Mean training loss of each epoch.
    pub epoch_losses: Vec<f64>,
}

struct Adam {
    m: BTreeMap<String, Vec<f32>>,
    v: BTreeMap<String, Vec<f32>>,
    t: i32,
}

impl Adam {
    fn new(model: &CtuNet<f32>) -> Self {
        let zeros: BTreeMap<String, Vec<f32>> = model
            .store()
            .params()
            .iter()
            .map(|(k, t)| (k.clone(), vec![0.0; t.len()]))
            .collect();
        Self {
            m: zeros.clone(),
            v: zeros,
            t: 0,
        }
    }

    fn step(&mut self, model: &mut CtuNet<f32>, grads: &BTreeMap<String, Tensor<f32>>, spec: &TrainSpec) {
        self.t += 1;
        let (b1, b2) = (spec.beta1 as f32, spec.beta2 as f32);
        let c1 = 1.0 - b1.powi(self.t);
        let c2 = 1.0 - b2.powi(self.t);
        let (lr, wd, eps) = (spec.learning_rate as f32, spec.weight_decay as f32, spec.adam_eps as f32);
        for (name, p) in model.store_mut().params_mut() {
            let Some(g) = grads.get(name) else { continue };
            let (m, v) = (self.m.get_mut(name).unwrap(), self.v.get_mut(name).unwrap());
            for (((w, &g), m), v) in p.data_mut().iter_mut().zip(g.data()).zip(m.iter_mut()).zip(v.iter_mut()) {
                let g = g + wd * *w;
                *m = b1 * *m + (1.0 - b1) * g;
                *v = b2 * *v + (1.0 - b2) * g * g;
                *w -= lr * (*m / c1) / ((*v / c2).sqrt() + eps);
            }
        }
    }
}

fn check_coverage(samples: &[VideoSample], num_classes: usize) -> Result<(), TrainError> {
    if samples.is_empty() {
        return Err(TrainError::Validation("training set is empty".into()));
    }
    let mut counts = vec![0usize; num_classes];
    for s in samples {
        if s.class_id >= num_classes {
            return Err(TrainError::Validation(format!(
                "sample {} has class {} outside [0, {num_classes})",
                s.id, s.class_id
            )));
        }
        counts[s.class_id] += 1;
    }
    if let Some(c) = counts.iter().position(|&n| n == 0) {
        return Err(TrainError::Validation(format!("no training sample for class {c}")));
    }
    Ok(())
}

/// Minibatch Adam on cross-entropy over in-memory clips.
pub fn train_samples(config: &ModelConfig, samples: &[VideoSample], spec: &TrainSpec) -> Result<TrainOutcome, TrainError> {
    spec.validate(config)?;
    check_coverage(samples, config.num_classes)?;
    let mut model = CtuNet::<f32>::new(config.clone())?;
    let mut adam = Adam::new(&model);
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let mut order: Vec<usize> = (0..samples.len()).collect();
    let mut loss_curve = Vec::new();
    let mut epoch_losses = Vec::with_capacity(spec.epochs);
    let mut step = 0;
    for epoch in 0..spec.epochs {
        order.shuffle(&mut rng);
        let mut total = 0.0;
        for batch in order.chunks(spec.batch_size) {
            let clips: Vec<&Tensor<f32>> = batch.iter().map(|&i| &samples[i].frames).collect();
            let labels: Vec<usize> = batch.iter().map(|&i| samples[i].class_id).collect();
            let x = stack_clips::<f32>(&clips)?;
            let dropout_seed = spec.seed.wrapping_mul(0x5851_F42D_4C95_7F2D).wrapping_add(step as u64);
            let mut pass = model.forward(&x, ForwardOptions::train(dropout_seed))?;
            let loss = pass.graph.cross_entropy(pass.logits, &labels);
            let value = pass.graph.value(loss).data()[0] as f64;
            if !value.is_finite() {
                return Err(TrainError::Diverged {
                    epoch,
                    step,
                    recent: loss_curve.iter().rev().take(5).map(|p: &LossPoint| p.loss).collect(),
                });
            }
            let grads = pass.graph.backward(loss);
            let named: BTreeMap<String, Tensor<f32>> = pass
                .params
                .iter()
                .filter_map(|(name, &v)| grads.get(v).map(|g| (name.clone(), g.clone())))
                .collect();
            if let Some((name, _)) = named.iter().find(|(_, g)| !g.all_finite()) {
                return Err(TrainError::DivergedParam {
                    epoch,
                    step,
                    param: name.clone(),
                    loss: value,
                });
            }
            adam.step(&mut model, &named, spec);
            model.apply_bn_updates(&pass.bn_updates);
            loss_curve.push(LossPoint { step, epoch, loss: value });
            total += value * batch.len() as f64;
            step += 1;
        }
        epoch_losses.push(total / samples.len() as f64);
    }
    Ok(TrainOutcome {
        model,
        loss_curve,
        epoch_losses,
    })
}

/// Decodes every entry of `split` at the model's input resolution.
pub fn load_split(
    manifest: &DatasetManifest,
    base: &Path,
    split: Split,
    config: &ModelConfig,
) -> Result<Vec<VideoSample>, TrainError> {
    let entries: Vec<_> = manifest.entries.iter().filter(|e| e.split == split).cloned().collect();
    let hw = (config.input.height, config.input.width);
    let loaded = par::map_slice(&entries, |e| load_video(e, base, hw, config.input.frames));
    let samples = loaded.into_iter().collect::<Result<Vec<_>, _>>()?;
    if let Some(s) = samples.iter().find(|s| s.channels() != config.input.channels) {
        return Err(TrainError::Validation(format!(
            "{} has {} channels, model expects {}",
            s.id,
            s.channels(),
            config.input.channels
        )));
    }
    Ok(samples)
}

/// Trains on the manifest's train split; media paths resolve against `base`.
pub fn train(config: &ModelConfig, manifest: &DatasetManifest, base: &Path, spec: &TrainSpec) -> Result<TrainOutcome, TrainError> {
    let samples = load_split(manifest, base, Split::Train, config)?;
    train_samples(config, &samples, spec)
}

/// Class probabilities in inference mode, evaluated in parallel chunks.
pub fn predict_probs(model: &CtuNet<f32>, samples: &[VideoSample], chunk: usize) -> Result<Vec<Vec<f64>>, TrainError> {
    let chunks: Vec<&[VideoSample]> = samples.chunks(chunk.max(1)).collect();
    let out = par::map_slice(&chunks, |c| -> Result<Vec<Vec<f64>>, TrainError> {
        let clips: Vec<&Tensor<f32>> = c.iter().map(|s| &s.frames).collect();
        let p = model.predict(&stack_clips::<f32>(&clips)?)?;
        let k = p.probs.shape()[1];
        Ok(p.probs.data().chunks(k).map(|r| r.iter().map(|&v| v as f64).collect()).collect())
    });
    let mut rows = Vec::with_capacity(samples.len());
    for r in out {
        rows.extend(r?);
    }
    Ok(rows)
}

pub fn evaluate_samples(model: &CtuNet<f32>, samples: &[VideoSample]) -> Result<MetricsReport, TrainError> {
    if samples.is_empty() {
        return Err(TrainError::Validation("cannot evaluate an empty split".into()));
    }
    let probs = predict_probs(model, samples, 8)?;
    let labels: Vec<usize> = samples.iter().map(|s| s.class_id).collect();
    compute_metrics(&labels, &probs, model.config().num_classes)
}

pub fn evaluate(model: &CtuNet<f32>, manifest: &DatasetManifest, base: &Path, split: Split) -> Result<MetricsReport, TrainError> {
    let samples = load_split(manifest, base, split, model.config())?;
    evaluate_samples(model, &samples)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AblationRow {
    pub variant: Ablation,
    pub seed: u64,
    pub result: Result<MetricsReport, String>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AblationTable {
    pub spec: TrainSpec,
    pub base_config: ModelConfig,
    pub rows: Vec<AblationRow>,
}

/// One training per variant with identical seed and spec, run in parallel.
/// A failing variant is reported in its row without stopping the others.
pub fn run_ablations(
    base_config: &ModelConfig,
    train_set: &[VideoSample],
    test_set: &[VideoSample],
    spec: &TrainSpec,
) -> AblationTable {
    let rows = par::map_slice(&Ablation::ALL, |&variant| {
        let config = base_config.clone().with_ablation(variant);
        let result = train_samples(&config, train_set, spec)
            .and_then(|o| evaluate_samples(&o.model, test_set))
            .map_err(|e| e.to_string());
        AblationRow {
            variant,
            seed: spec.seed,
            result,
        }
    });
    AblationTable {
        spec: spec.clone(),
        base_config: base_config.clone(),
        rows,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::video_data::synth_video;

    fn fixture(per_class: usize, config: &ModelConfig, seed: u64) -> Vec<VideoSample> {
        let i = config.input;
        (0..5)
            .flat_map(|c| (0..per_class).map(move |k| (c, k)))
            .map(|(c, k)| synth_video(c, seed * 1000 + (c * per_class + k) as u64, (i.frames, i.height, i.width)).unwrap())
            .collect()
    }

    fn tiny_spec(epochs: usize) -> TrainSpec {
        TrainSpec {
            epochs,
            input_size: (16, 16),
            learning_rate: 1e-3,
            ..TrainSpec::default()
        }
    }

    #[test]
    fn zero_learning_rate_keeps_parameters() {
        let config = ModelConfig::tiny();
        let data = fixture(1, &config, 0);
        let spec = TrainSpec {
            learning_rate: 0.0,
            ..tiny_spec(2)
        };
        let out = train_samples(&config, &data, &spec).unwrap();
        let fresh = CtuNet::<f32>::new(config).unwrap();
        assert_eq!(out.model.store().params(), fresh.store().params());
    }

    #[test]
    fn same_seed_same_curve() {
        let config = ModelConfig::tiny();
        let data = fixture(1, &config, 1);
        let a = train_samples(&config, &data, &tiny_spec(2)).unwrap();
        let b = train_samples(&config, &data, &tiny_spec(2)).unwrap();
        assert_eq!(a.loss_curve, b.loss_curve);
        assert_eq!(a.loss_curve.len(), 4);
        assert_eq!(a.epoch_losses.len(), 2);
    }

    #[test]
    fn missing_class_rejected() {
        let config = ModelConfig::tiny();
        let data: Vec<_> = fixture(1, &config, 0).into_iter().filter(|s| s.class_id != 3).collect();
        assert!(matches!(
            train_samples(&config, &data, &tiny_spec(1)),
            Err(TrainError::Validation(m)) if m.contains("class 3")
        ));
    }

    #[test]
    fn spec_validation() {
        let config = ModelConfig::tiny();
        assert!(TrainSpec { batch_size: 0, ..tiny_spec(1) }.validate(&config).is_err());
        assert!(TrainSpec { learning_rate: f64::NAN, ..tiny_spec(1) }.validate(&config).is_err());
        assert!(TrainSpec { input_size: (32, 32), ..tiny_spec(1) }.validate(&config).is_err());
    }

    #[test]
    fn evaluate_is_repeatable() {
        let config = ModelConfig::tiny();
        let data = fixture(2, &config, 4);
        let model = CtuNet::<f32>::new(config).unwrap();
        let a = evaluate_samples(&model, &data).unwrap();
        assert_eq!(a, evaluate_samples(&model, &data).unwrap());
        assert!(evaluate_samples(&model, &[]).is_err());
    }

    #[test]
    fn ablations_share_protocol() {
        let config = ModelConfig::tiny();
        let data = fixture(1, &config, 2);
        let table = run_ablations(&config, &data, &data, &tiny_spec(1));
        assert_eq!(table.rows.len(), 4);
        assert!(table.rows.iter().all(|r| r.seed == table.spec.seed && r.result.is_ok()));
    }
}
