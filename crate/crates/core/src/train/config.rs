use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::net::{Architecture, CeForm, DecoderMode};

/// Training objective.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum LossForm {
    /// Softmax + median-frequency-weighted categorical cross-entropy.
    Categorical,
    /// Softmax + weighted per-level binary cross-entropy.
    PerLevelBinary,
    /// One output channel regressed onto the saliency map scaled to `[0, 1]`.
    EuclideanRegression,
}

impl LossForm {
    pub fn is_segmentation(self) -> bool {
        self != LossForm::EuclideanRegression
    }

    pub fn ce_form(self) -> Option<CeForm> {
        match self {
            LossForm::Categorical => Some(CeForm::Categorical),
            LossForm::PerLevelBinary => Some(CeForm::PerLevelBinary),
            LossForm::EuclideanRegression => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub base_lr: f64,
    /// Iterations between learning-rate drops.
    pub step_size: usize,
    /// Factor applied at every drop.
    pub gamma: f64,
    pub max_iters: usize,
    pub batch_size: usize,
    pub num_levels: usize,
    pub decoder: DecoderMode,
    pub loss: LossForm,
    pub seed: u64,
    pub arch: Architecture,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            base_lr: 0.01,
            step_size: 500,
            gamma: 0.8,
            max_iters: 3000,
            batch_size: 4,
            num_levels: 3,
            decoder: DecoderMode::Unpool,
            loss: LossForm::Categorical,
            seed: 0,
            arch: Architecture::default(),
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.base_lr > 0.0 && self.base_lr.is_finite()) {
            return Err(Error::invalid(format!("base_lr must be positive, got {}", self.base_lr)));
        }
        if !(self.gamma > 0.0 && self.gamma <= 1.0) {
            return Err(Error::invalid(format!("gamma must lie in (0, 1], got {}", self.gamma)));
        }
        if self.step_size == 0 {
            return Err(Error::invalid("step_size must be at least 1"));
        }
        if self.batch_size == 0 {
            return Err(Error::invalid("batch_size must be at least 1"));
        }
        if self.num_levels < 2 {
            return Err(Error::invalid(format!("need at least 2 levels, got {}", self.num_levels)));
        }
        if self.arch.stage_widths.is_empty() || self.arch.stage_widths.contains(&0) {
            return Err(Error::invalid("architecture needs at least one non-empty stage"));
        }
        if self.arch.convs_per_stage == 0 || self.arch.kernel.is_multiple_of(2) {
            return Err(Error::invalid("stages need at least one odd-sized convolution"));
        }
        Ok(())
    }

    /// Input extents must be multiples of this.
    pub fn size_multiple(&self) -> usize {
        1 << self.arch.stage_widths.len()
    }
}

/// Step policy: `base_lr * gamma^floor(iter / step_size)`.
pub fn lr_schedule(cfg: &TrainConfig, iter: usize) -> f64 {
    let drops = (iter / cfg.step_size.max(1)) as i32;
    cfg.base_lr * cfg.gamma.powi(drops)
}
