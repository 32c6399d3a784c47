//! Dataset manifests, curation rules, video decoding and synthetic fixtures.

mod filter;
mod manifest;
pub mod media;
mod synth;

use std::path::{Path, PathBuf};

pub use filter::{evaluate_dataset_acceptance, FilterDecision, LogBase, DEFAULT_THETA};
pub use manifest::{
    classes_path, merge_categories, split_train_test, DatasetManifest, ManifestEntry, Split,
    DEFAULT_CLASS_NAMES,
};
pub use synth::{synth_video, SYNTH_CLASSES};

use crate::nn::Tensor;

#[derive(Debug, thiserror::Error)]
pub enum DataError {
    #[error("validation error: {0}")]
    Validation(String),
    #[error("manifest line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error("class {class_id} ({name}) has no target in the mapping")]
    UnmappedClass { class_id: usize, name: String },
    #[error("decode error: {0}")]
    Decode(String),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl DataError {
    pub(crate) fn io(path: &Path, source: std::io::Error) -> Self {
        DataError::Io {
            path: path.to_path_buf(),
            source,
        }
    }
}

/// One clip as a `[T, H, W, Cch]` block of values in `[0, 1]`.
#[derive(Clone, Debug, PartialEq)]
pub struct VideoSample {
    pub frames: Tensor<f32>,
    pub class_id: usize,
    pub id: String,
}

impl VideoSample {
    pub fn new(frames: Tensor<f32>, class_id: usize, id: impl Into<String>) -> Result<Self, DataError> {
        let s = frames.shape();
        if s.len() != 4 {
            return Err(DataError::Validation(format!("frames must be [T, H, W, C], got {s:?}")));
        }
        if s[0] == 0 || s[1] < 8 || s[2] < 8 || !matches!(s[3], 1 | 3) {
            return Err(DataError::Validation(format!("unsupported clip shape {s:?}")));
        }
        if frames.data().iter().any(|v| !v.is_finite() || *v < 0.0 || *v > 1.0) {
            return Err(DataError::Validation("pixel values must be finite and in [0, 1]".into()));
        }
        Ok(Self {
            frames,
            class_id,
            id: id.into(),
        })
    }

    pub fn num_frames(&self) -> usize {
        self.frames.shape()[0]
    }

    pub fn height(&self) -> usize {
        self.frames.shape()[1]
    }

    pub fn width(&self) -> usize {
        self.frames.shape()[2]
    }

    pub fn channels(&self) -> usize {
        self.frames.shape()[3]
    }
}

/// Decodes `entry` (path resolved against `base`) to exactly
/// `[target_frames, H, W, Cch]`.
pub fn load_video(
    entry: &ManifestEntry,
    base: &Path,
    target_hw: (usize, usize),
    target_frames: usize,
) -> Result<VideoSample, DataError> {
    media::load_video_path(&entry.resolve(base), entry.class_id, &entry.id, target_hw, target_frames)
}

/// Writes `per_class` synthetic clips per class as `.npy` files under
/// `dir/videos/` and returns the (unsplit) manifest describing them.
pub fn write_synthetic_corpus(
    dir: &Path,
    per_class: usize,
    shape: (usize, usize, usize),
    seed: u64,
) -> Result<DatasetManifest, DataError> {
    let videos = dir.join("videos");
    std::fs::create_dir_all(&videos).map_err(|e| DataError::io(&videos, e))?;
    let mut entries = Vec::new();
    for class_id in 0..SYNTH_CLASSES {
        for i in 0..per_class {
            let clip_seed = seed.wrapping_mul(1_000_003).wrapping_add((class_id * per_class + i) as u64);
            let sample = synth_video(class_id, clip_seed, shape)?;
            let name = format!("synth_{class_id}_{i:04}.npy");
            let path = videos.join(&name);
            std::fs::write(&path, media::sample_to_npy(&sample)).map_err(|e| DataError::io(&path, e))?;
            entries.push(ManifestEntry {
                id: format!("synth_{class_id}_{i:04}"),
                media_path: format!("videos/{name}"),
                class_id,
                split: Split::Unassigned,
                source_dataset: "synthetic".into(),
                num_frames: shape.0,
            });
        }
    }
    DatasetManifest::new(
        "synthetic",
        DEFAULT_CLASS_NAMES.iter().map(|s| s.to_string()).collect(),
        entries,
    )
}
