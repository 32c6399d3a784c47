use serde::{Deserialize, Serialize};

use super::ModelError;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Ablation {
    #[default]
    Full,
    NoSlow,
    NoFast,
    NoFreq,
}

impl Ablation {
    pub const ALL: [Ablation; 4] = [Ablation::Full, Ablation::NoSlow, Ablation::NoFast, Ablation::NoFreq];

    pub fn name(self) -> &'static str {
        match self {
            Ablation::Full => "full",
            Ablation::NoSlow => "no_slow",
            Ablation::NoFast => "no_fast",
            Ablation::NoFreq => "no_freq",
        }
    }

    pub fn uses_slow(self) -> bool {
        self != Ablation::NoSlow
    }

    pub fn uses_fast(self) -> bool {
        self != Ablation::NoFast
    }

    /// The gate network only matters when both feature paths are fused.
    pub fn uses_freq(self) -> bool {
        self == Ablation::Full
    }
}

impl std::str::FromStr for Ablation {
    type Err = ModelError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Ablation::ALL
            .into_iter()
            .find(|a| a.name() == s)
            .ok_or_else(|| ModelError::Config(format!("unknown ablation {s:?}")))
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct InputShape {
    pub frames: usize,
    pub height: usize,
    pub width: usize,
    pub channels: usize,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SlowConfig {
    pub stem_channels: usize,
    /// Output channels of each residual block; length must equal `num_blocks`.
    pub block_channels: Vec<usize>,
    pub num_blocks: usize,
    /// Stem max-pool window (T, H, W), applied with equal stride.
    pub stem_pool: [usize; 3],
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FastConfig {
    pub temporal_stride: usize,
    pub patch_size: usize,
    pub embed_dim: usize,
    pub num_layers: usize,
    pub num_heads: usize,
    pub mlp_ratio: usize,
    pub dropout_rate: f64,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct FreqConfig {
    pub conv_channels: usize,
    pub gate_hidden_dim: usize,
    /// Side of the adaptive average-pool grid.
    pub pool_grid: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub num_classes: usize,
    pub input: InputShape,
    pub slow: SlowConfig,
    pub fast: FastConfig,
    pub freq: FreqConfig,
    pub ablation: Ablation,
    pub seed: u64,
}

impl ModelConfig {
    /// Full-resolution setting: 224x224 input, four residual blocks,
    /// temporal stride 5, patch size 4.
    pub fn full_scale() -> Self {
        Self {
            num_classes: 5,
            input: InputShape {
                frames: 16,
                height: 224,
                width: 224,
                channels: 3,
            },
            slow: SlowConfig {
                stem_channels: 32,
                block_channels: vec![32, 64, 64, 128],
                num_blocks: 4,
                stem_pool: [2, 2, 2],
            },
            fast: FastConfig {
                temporal_stride: 5,
                patch_size: 4,
                embed_dim: 128,
                num_layers: 4,
                num_heads: 4,
                mlp_ratio: 4,
                dropout_rate: 0.1,
            },
            freq: FreqConfig {
                conv_channels: 8,
                gate_hidden_dim: 32,
                pool_grid: 4,
            },
            ablation: Ablation::Full,
            seed: 0,
        }
    }

    /// Desk-scale setting for 8-frame 32x32 grayscale clips.
    pub fn desk() -> Self {
        Self {
            num_classes: 5,
            input: InputShape {
                frames: 8,
                height: 32,
                width: 32,
                channels: 1,
            },
            slow: SlowConfig {
                stem_channels: 8,
                block_channels: vec![8],
                num_blocks: 1,
                stem_pool: [2, 2, 2],
            },
            fast: FastConfig {
                temporal_stride: 5,
                patch_size: 4,
                embed_dim: 16,
                num_layers: 1,
                num_heads: 1,
                mlp_ratio: 2,
                dropout_rate: 0.1,
            },
            freq: FreqConfig {
                conv_channels: 4,
                gate_hidden_dim: 16,
                pool_grid: 4,
            },
            ablation: Ablation::Full,
            seed: 0,
        }
    }

    /// Smallest configuration used for gradient checks.
    pub fn tiny() -> Self {
        Self {
            num_classes: 5,
            input: InputShape {
                frames: 8,
                height: 16,
                width: 16,
                channels: 1,
            },
            slow: SlowConfig {
                stem_channels: 4,
                block_channels: vec![4],
                num_blocks: 1,
                stem_pool: [2, 2, 2],
            },
            fast: FastConfig {
                temporal_stride: 5,
                patch_size: 4,
                embed_dim: 8,
                num_layers: 1,
                num_heads: 1,
                mlp_ratio: 2,
                dropout_rate: 0.1,
            },
            freq: FreqConfig {
                conv_channels: 2,
                gate_hidden_dim: 8,
                pool_grid: 4,
            },
            ablation: Ablation::Full,
            seed: 0,
        }
    }

    pub fn with_ablation(mut self, ablation: Ablation) -> Self {
        self.ablation = ablation;
        self
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }

    /// Frames kept by the fast path: `ceil(T / stride)`.
    pub fn fast_frames(&self) -> usize {
        self.input.frames.div_ceil(self.fast.temporal_stride)
    }

    /// Patches per frame: `(H / p) * (W / p)`.
    pub fn num_patches(&self) -> usize {
        (self.input.height / self.fast.patch_size) * (self.input.width / self.fast.patch_size)
    }

    /// Width of the pooled spectral descriptor.
    pub fn freq_dim(&self) -> usize {
        self.freq.conv_channels * self.input.channels * self.freq.pool_grid * self.freq.pool_grid
    }

    pub fn slow_out_channels(&self) -> usize {
        *self.slow.block_channels.last().unwrap_or(&self.slow.stem_channels)
    }

    /// Effective stem pool window; axes shorter than the window are not pooled.
    pub fn stem_pool(&self) -> [usize; 3] {
        let dims = [self.input.frames, self.input.height, self.input.width];
        let mut k = self.slow.stem_pool;
        for a in 0..3 {
            if dims[a] < k[a] {
                k[a] = 1;
            }
        }
        k
    }

    pub fn validate(&self) -> Result<(), ModelError> {
        let err = |m: String| Err(ModelError::Config(m));
        let i = &self.input;
        if self.num_classes < 1 {
            return err("num_classes must be at least 1".into());
        }
        if i.frames < 1 || i.height < 8 || i.width < 8 {
            return err(format!("input shape {i:?} too small"));
        }
        if !matches!(i.channels, 1 | 3) {
            return err(format!("input channels must be 1 or 3, got {}", i.channels));
        }
        let p = self.fast.patch_size;
        if p == 0 || !i.height.is_multiple_of(p) || !i.width.is_multiple_of(p) {
            return err(format!(
                "patch size {p} must divide height {} and width {}",
                i.height, i.width
            ));
        }
        if self.fast.temporal_stride < 1 {
            return err("temporal stride must be at least 1".into());
        }
        if self.slow.num_blocks < 1 {
            return err("slow path needs at least one residual block".into());
        }
        if self.slow.block_channels.len() != self.slow.num_blocks {
            return err(format!(
                "{} block channel widths given for {} blocks",
                self.slow.block_channels.len(),
                self.slow.num_blocks
            ));
        }
        if self.slow.stem_channels == 0 || self.slow.block_channels.contains(&0) {
            return err("slow path channel widths must be positive".into());
        }
        if self.slow.stem_pool.contains(&0) {
            return err("stem pool window must be positive".into());
        }
        if self.fast.num_layers < 1 {
            return err("fast path needs at least one layer".into());
        }
        let (d, h) = (self.fast.embed_dim, self.fast.num_heads);
        if d == 0 || h == 0 || d % h != 0 {
            return err(format!("embed dim {d} not divisible by {h} heads"));
        }
        if self.fast.mlp_ratio == 0 {
            return err("mlp ratio must be positive".into());
        }
        if !(0.0..1.0).contains(&self.fast.dropout_rate) {
            return err(format!("dropout rate {} outside [0, 1)", self.fast.dropout_rate));
        }
        if self.freq.conv_channels == 0 || self.freq.gate_hidden_dim == 0 || self.freq.pool_grid == 0 {
            return err("frequency path widths must be positive".into());
        }
        if i.height / 2 < self.freq.pool_grid || i.width / 2 < self.freq.pool_grid {
            return err("pool grid larger than the pooled spectrum".into());
        }
        Ok(())
    }
}
