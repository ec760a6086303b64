use std::fs;
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::config::{LossForm, TrainConfig};
use super::data::TrainingSample;
use super::trainer::{train, write_loss_csv, LogRow};
use crate::error::{Error, Result};
use crate::maps::{quantize, to_display};
use crate::net::DecoderMode;

/// Pixel accuracy a segmentation run must reach.
pub const SEGMENTATION_TARGET: f64 = 0.95;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VariantResult {
    pub name: String,
    pub decoder: DecoderMode,
    pub loss: LossForm,
    /// Loss (regression) or pixel accuracy (segmentation) that counts as converged.
    pub target: f64,
    /// First logged iteration that met the target.
    pub iterations_to_target: Option<usize>,
    pub final_loss: f64,
    pub final_pixel_acc: f64,
    #[serde(skip)]
    pub log: Vec<LogRow>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComparisonReport {
    pub max_iters: usize,
    pub seed: u64,
    pub variants: Vec<VariantResult>,
}

impl ComparisonReport {
    pub fn variant(&self, decoder: DecoderMode, segmentation: bool) -> Option<&VariantResult> {
        self.variants
            .iter()
            .find(|v| v.decoder == decoder && v.loss.is_segmentation() == segmentation)
    }

    /// Writes `<name>.csv` per variant and `summary.json`.
    pub fn save(&self, dir: &Path) -> Result<()> {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        for v in &self.variants {
            write_loss_csv(&dir.join(format!("{}.csv", v.name)), &v.log)?;
        }
        let path = dir.join("summary.json");
        fs::write(&path, serde_json::to_vec_pretty(self)?).map_err(|e| Error::io(&path, e))
    }

    pub fn to_table(&self) -> String {
        let mut s = format!("{:<20} {:>10} {:>12} {:>12} {:>10}\n", "variant", "target", "iters", "final loss", "final acc");
        for v in &self.variants {
            let iters = v.iterations_to_target.map_or("-".to_string(), |i| i.to_string());
            s += &format!(
                "{:<20} {:>10.5} {:>12} {:>12.6} {:>10.4}\n",
                v.name, v.target, iters, v.final_loss, v.final_pixel_acc
            );
        }
        s
    }
}

/// Half mean squared error between each ground-truth map and its
/// quantize-then-display rendition, both scaled to `[0, 1]`.
pub fn quantization_mse(dataset: &[TrainingSample], num_levels: usize) -> Result<f64> {
    let mut total = 0.0;
    let mut n = 0usize;
    for s in dataset {
        let shown = to_display(&quantize(&s.gt_saliency, num_levels)?);
        for (a, b) in shown.values().iter().zip(s.gt_saliency.values()) {
            let d = (a - b) / 255.0;
            total += 0.5 * d * d;
        }
        n += s.gt_saliency.values().len();
    }
    if n == 0 {
        return Err(Error::invalid("comparison needs a non-empty dataset"));
    }
    Ok(total / n as f64)
}

/// Trains segmentation and regression models with both decoders on the same
/// data and seed. The segmentation variants use `cfg.loss` when it is a
/// segmentation loss and categorical cross-entropy otherwise.
pub fn compare_convergence(dataset: &[TrainingSample], cfg: &TrainConfig) -> Result<ComparisonReport> {
    let seg_loss = if cfg.loss.is_segmentation() { cfg.loss } else { LossForm::Categorical };
    let reg_target = quantization_mse(dataset, cfg.num_levels)?;
    let mut plan = Vec::new();
    for (seg, loss) in [(true, seg_loss), (false, LossForm::EuclideanRegression)] {
        for decoder in [DecoderMode::Unpool, DecoderMode::Deconv] {
            let kind = if seg { "segmentation" } else { "regression" };
            let dec = match decoder {
                DecoderMode::Unpool => "unpool",
                DecoderMode::Deconv => "deconv",
            };
            plan.push((format!("{kind}_{dec}"), seg, decoder, loss));
        }
    }
    let variants = plan
        .into_par_iter()
        .map(|(name, seg, decoder, loss)| {
            let run_cfg = TrainConfig {
                decoder,
                loss,
                ..cfg.clone()
            };
            let out = train(dataset, &run_cfg)?;
            let target = if seg { SEGMENTATION_TARGET } else { reg_target };
            let iterations_to_target = out
                .log
                .iter()
                .find(|r| if seg { r.pixel_acc >= target } else { r.loss <= target })
                .map(|r| r.iter);
            let last = out.log.last();
            Ok(VariantResult {
                name,
                decoder,
                loss,
                target,
                iterations_to_target,
                final_loss: last.map_or(f64::NAN, |r| r.loss),
                final_pixel_acc: last.map_or(f64::NAN, |r| r.pixel_acc),
                log: out.log,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(ComparisonReport {
        max_iters: cfg.max_iters,
        seed: cfg.seed,
        variants,
    })
}
