use std::path::Path;

use autous_agent::diagnosis::{opinion_from_prediction, DiagnosisOpinion};
use autous_core::ctu_net::{checkpoint, stack_clips, CtuNet};
use autous_core::video_data::media::{decode_bytes, read_media, sample_from_raw, RawVideo};
use autous_core::video_data::DEFAULT_CLASS_NAMES;

use crate::workflow::Classification;
use crate::ServiceError;

/// An immutable model plus the names of its output classes.
pub struct Classifier {
    model: CtuNet<f32>,
    class_names: Vec<String>,
}

pub fn default_class_names() -> Vec<String> {
    DEFAULT_CLASS_NAMES.iter().map(|s| s.to_string()).collect()
}

impl Classifier {
    pub fn new(model: CtuNet<f32>, class_names: Vec<String>) -> Result<Self, ServiceError> {
        if class_names.len() != model.config().num_classes {
            return Err(ServiceError::Validation(format!(
                "{} class names for a {}-class model",
                class_names.len(),
                model.config().num_classes
            )));
        }
        Ok(Self { model, class_names })
    }

    pub fn load(checkpoint_path: &Path, class_names: Option<Vec<String>>) -> Result<Self, ServiceError> {
        let model = checkpoint::load(checkpoint_path)?;
        Self::new(model, class_names.unwrap_or_else(default_class_names))
    }

    pub fn class_names(&self) -> &[String] {
        &self.class_names
    }

    pub fn model(&self) -> &CtuNet<f32> {
        &self.model
    }

    pub fn classify_raw(&self, raw: &RawVideo) -> Result<Classification, ServiceError> {
        let input = self.model.config().input;
        if raw.channels != input.channels {
            return Err(ServiceError::Validation(format!(
                "video has {} channels, model expects {}",
                raw.channels, input.channels
            )));
        }
        let sample = sample_from_raw(raw, 0, "input", (input.height, input.width), input.frames)?;
        let x = stack_clips::<f32>(&[&sample.frames])?;
        let pred = self.model.predict(&x)?;
        let probs: Vec<f64> = pred.probs.row(0).iter().map(|&p| p as f64).collect();
        let class_id = pred.classes()[0];
        Ok(Classification {
            class_id,
            label: self.class_names[class_id].clone(),
            confidence: probs[class_id],
            probs,
        })
    }

    pub fn classify_bytes(&self, bytes: &[u8]) -> Result<Classification, ServiceError> {
        self.classify_raw(&decode_bytes(bytes)?)
    }

    pub fn classify_path(&self, path: &Path) -> Result<Classification, ServiceError> {
        self.classify_raw(&read_media(path)?)
    }

    pub fn opinion(&self, c: &Classification) -> Result<DiagnosisOpinion, ServiceError> {
        Ok(opinion_from_prediction(&c.probs, &self.class_names)?)
    }
}
