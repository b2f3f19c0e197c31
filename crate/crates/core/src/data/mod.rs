//! Synthetic visible/infrared tracklets: generation, on-disk format,
//! augmentation and identity-balanced batch sampling.

pub mod augment;
pub mod format;
pub mod sampler;
pub mod synth;

pub use augment::{augment, AugmentConfig, AugmentParams};
pub use format::{Dataset, ManifestEntry, Split};
pub use sampler::{batch_for, epoch_groups, sample_batch, BatchPlan, SequenceBatch};
pub use synth::{generate, synthesize, SyntheticSpec};

use serde::{Deserialize, Serialize};

/// One RGB frame, `height x width x 3`, values in `[0, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Frame {
    pub height: usize,
    pub width: usize,
    pub data: Vec<f64>,
}

impl Frame {
    pub fn zeros(height: usize, width: usize) -> Self {
        Self { height, width, data: vec![0.0; height * width * 3] }
    }

    #[inline]
    pub fn at(&self, y: usize, x: usize, c: usize) -> f64 {
        self.data[(y * self.width + x) * 3 + c]
    }

    #[inline]
    pub fn set(&mut self, y: usize, x: usize, c: usize, v: f64) {
        self.data[(y * self.width + x) * 3 + c] = v;
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Modality {
    Visible,
    Infrared,
}

impl Modality {
    pub fn as_str(self) -> &'static str {
        match self {
            Modality::Visible => "visible",
            Modality::Infrared => "infrared",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "visible" => Some(Modality::Visible),
            "infrared" => Some(Modality::Infrared),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Tracklet {
    pub id: u64,
    pub identity: usize,
    pub modality: Modality,
    pub camera: usize,
    pub frames: Vec<Frame>,
}
