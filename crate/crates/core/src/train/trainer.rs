use std::fs;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::checkpoint::Checkpoint;
use super::config::{lr_schedule, LossForm, TrainConfig};
use super::data::TrainingSample;
use crate::balancing::{class_frequencies, median_frequency_weights, ClassWeights};
use crate::error::{Error, Result};
use crate::maps::{level_of, SalientRegionMap};
use crate::net::{euclidean_loss, weighted_ce_loss, Gradients, Head, Network, Tensor};

/// One line of the loss log.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LogRow {
    pub iter: usize,
    pub lr: f64,
    /// Batch loss before the update of this iteration.
    pub loss: f64,
    /// Batch pixel accuracy before the update of this iteration.
    pub pixel_acc: f64,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub checkpoint: Checkpoint,
    pub log: Vec<LogRow>,
}

pub fn write_loss_csv(path: &Path, log: &[LogRow]) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(|e| Error::format("loss log", e.to_string()))?;
    for row in log {
        w.serialize(row).map_err(|e| Error::format("loss log", e.to_string()))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn read_loss_csv(path: &Path) -> Result<Vec<LogRow>> {
    let mut r = csv::Reader::from_path(path).map_err(|e| Error::format("loss log", e.to_string()))?;
    r.deserialize()
        .map(|row| row.map_err(|e| Error::format("loss log", e.to_string())))
        .collect()
}

/// Median-frequency weights over the whole training set.
pub fn dataset_weights(dataset: &[TrainingSample]) -> Result<ClassWeights> {
    let maps: Vec<SalientRegionMap> = dataset.iter().map(|s| s.gt_region.clone()).collect();
    median_frequency_weights(&class_frequencies(&maps)?)
}

/// Dataset index used at stream position `pos` (`pos = iter * batch + slot`).
/// Each epoch visits every sample once, in an order fixed by `seed` and the epoch.
fn sample_at(seed: u64, n: usize, pos: usize) -> usize {
    let epoch = (pos / n) as u64;
    let mut order: Vec<usize> = (0..n).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ epoch.wrapping_mul(0x9E37_79B9_7F4A_7C15));
    order.shuffle(&mut rng);
    order[pos % n]
}

fn batch_indices(cfg: &TrainConfig, n: usize, iter: usize) -> Vec<usize> {
    (0..cfg.batch_size)
        .map(|slot| sample_at(cfg.seed, n, iter * cfg.batch_size + slot))
        .collect()
}

fn head_for(cfg: &TrainConfig) -> Head {
    if cfg.loss.is_segmentation() {
        Head::Classes(cfg.num_levels)
    } else {
        Head::Regression
    }
}

/// Levels the network assigns to each pixel of a traced sample.
fn output_levels(net: &Network, output: &Tensor, num_levels: usize) -> Result<Vec<usize>> {
    let (_, c, h, w) = output.dims4()?;
    let hw = h * w;
    let d = output.data();
    Ok(if net.ends_in_softmax() {
        (0..hw)
            .map(|pix| {
                // first maximum wins, so ties go to the lower level
                let mut best = 0;
                for ch in 1..c {
                    if d[ch * hw + pix] > d[best * hw + pix] {
                        best = ch;
                    }
                }
                best
            })
            .collect()
    } else {
        d[..hw]
            .iter()
            .map(|&v| level_of((v * 255.0).clamp(0.0, 255.0), num_levels))
            .collect()
    })
}

struct SampleResult {
    loss: f64,
    correct: usize,
    pixels: usize,
    grads: Gradients,
}

fn sample_step(net: &Network, sample: &TrainingSample, cfg: &TrainConfig, weights: Option<&ClassWeights>) -> Result<SampleResult> {
    let trace = net.trace(&sample.input)?;
    let (loss, grads) = match cfg.loss.ce_form() {
        Some(form) => {
            let w = weights.expect("segmentation runs carry class weights");
            let (loss, g) = weighted_ce_loss(trace.output(), std::slice::from_ref(&sample.gt_region), w, form)?;
            let grads = match cfg.loss {
                LossForm::Categorical => net.backward_logits(&trace, &g)?,
                _ => net.backward_trace(&trace, &g)?,
            };
            (loss, grads)
        }
        None => {
            let (loss, g) = euclidean_loss(trace.output(), std::slice::from_ref(&sample.gt_saliency))?;
            (loss, net.backward_trace(&trace, &g)?)
        }
    };
    let levels = output_levels(net, trace.output(), cfg.num_levels)?;
    let correct = levels
        .iter()
        .zip(sample.gt_region.levels())
        .filter(|(a, b)| a == b)
        .count();
    Ok(SampleResult {
        loss,
        correct,
        pixels: levels.len(),
        grads,
    })
}

fn check_dataset(dataset: &[TrainingSample], cfg: &TrainConfig) -> Result<()> {
    if dataset.is_empty() {
        return Err(Error::invalid("training set is empty"));
    }
    let m = cfg.size_multiple();
    for s in dataset {
        if s.width() % m != 0 || s.height() % m != 0 {
            return Err(Error::invalid(format!(
                "sample {} is {}x{}; extents must be divisible by {m}",
                s.name,
                s.width(),
                s.height()
            )));
        }
        if s.gt_region.num_levels() != cfg.num_levels {
            return Err(Error::mismatch(
                format!("K = {}", cfg.num_levels),
                format!("K = {} in sample {}", s.gt_region.num_levels(), s.name),
            ));
        }
    }
    Ok(())
}

/// Runs SGD from `start` up to `cfg.max_iters`, mutating `net` in place.
fn run(
    net: &mut Network,
    dataset: &[TrainingSample],
    cfg: &TrainConfig,
    weights: Option<&ClassWeights>,
    start: usize,
) -> Result<Vec<LogRow>> {
    let mut log = Vec::with_capacity(cfg.max_iters.saturating_sub(start));
    for iter in start..cfg.max_iters {
        let batch = batch_indices(cfg, dataset.len(), iter);
        let shared: &Network = net;
        let results = batch
            .par_iter()
            .map(|&i| sample_step(shared, &dataset[i], cfg, weights))
            .collect::<Result<Vec<_>>>()?;

        // fixed reduction order keeps runs bit-identical
        let mut grads = Gradients::zeros_like(net);
        let (mut loss, mut correct, mut pixels) = (0.0, 0, 0);
        for r in &results {
            grads.add_assign(&r.grads);
            loss += r.loss;
            correct += r.correct;
            pixels += r.pixels;
        }
        let b = results.len() as f64;
        loss /= b;
        grads.scale(1.0 / b);
        if !loss.is_finite() || grads.flatten().iter().any(|g| !g.is_finite()) {
            return Err(Error::NonFiniteLoss {
                iteration: iter,
                detail: format!("loss = {loss}"),
            });
        }
        let lr = lr_schedule(cfg, iter);
        net.sgd_step(&grads, lr);
        log.push(LogRow {
            iter,
            lr,
            loss,
            pixel_acc: correct as f64 / pixels as f64,
        });
    }
    Ok(log)
}

/// Trains a fresh network (seeded by `cfg.seed`) for `cfg.max_iters` SGD steps.
pub fn train(dataset: &[TrainingSample], cfg: &TrainConfig) -> Result<TrainOutcome> {
    cfg.validate()?;
    check_dataset(dataset, cfg)?;
    let input_channels = dataset[0].input.shape()[1];
    let specs = cfg.arch.layer_specs(input_channels, cfg.decoder, head_for(cfg));
    let mut net = Network::init(specs, cfg.seed)?;
    let weights = if cfg.loss.is_segmentation() {
        Some(dataset_weights(dataset)?)
    } else {
        None
    };
    let log = run(&mut net, dataset, cfg, weights.as_ref(), 0)?;
    Ok(TrainOutcome {
        checkpoint: Checkpoint {
            config: cfg.clone(),
            class_weights: weights,
            iteration: cfg.max_iters,
            loss_log: None,
            network: net,
        },
        log,
    })
}

/// Continues a run from `ckpt.iteration` until `max_iters`. With the same
/// data this reproduces the uninterrupted run exactly.
pub fn resume(ckpt: &Checkpoint, dataset: &[TrainingSample], max_iters: usize) -> Result<TrainOutcome> {
    let cfg = TrainConfig {
        max_iters,
        ..ckpt.config.clone()
    };
    cfg.validate()?;
    check_dataset(dataset, &cfg)?;
    let mut net = ckpt.network.clone();
    let log = run(&mut net, dataset, &cfg, ckpt.class_weights.as_ref(), ckpt.iteration)?;
    Ok(TrainOutcome {
        checkpoint: Checkpoint {
            config: cfg,
            class_weights: ckpt.class_weights.clone(),
            iteration: max_iters.max(ckpt.iteration),
            loss_log: ckpt.loss_log.clone(),
            network: net,
        },
        log,
    })
}

/// Per-pixel argmax of the class probabilities (lower level on ties).
/// Regression checkpoints are quantized into `K` levels instead.
pub fn predict(ckpt: &Checkpoint, input: &Tensor) -> Result<SalientRegionMap> {
    let (_, _, h, w) = input.dims4()?;
    let m = 1usize << ckpt.network.encoder_stages();
    if h % m != 0 || w % m != 0 {
        return Err(Error::invalid(format!(
            "input is {w}x{h}; width and height must be divisible by {m}"
        )));
    }
    let trace = ckpt.network.trace(input)?;
    let k = ckpt.config.num_levels;
    let levels = output_levels(&ckpt.network, trace.output(), k)?;
    SalientRegionMap::new(w, h, k, levels)
}

/// Pixel accuracy of `predict` over a whole dataset.
pub fn dataset_accuracy(ckpt: &Checkpoint, dataset: &[TrainingSample]) -> Result<f64> {
    let mut correct = 0;
    let mut total = 0;
    for s in dataset {
        let p = predict(ckpt, &s.input)?;
        correct += p
            .levels()
            .iter()
            .zip(s.gt_region.levels())
            .filter(|(a, b)| a == b)
            .count();
        total += p.levels().len();
    }
    Ok(correct as f64 / total as f64)
}

/// Saves the checkpoint and its loss log side by side.
pub fn save_run(dir: &Path, outcome: &TrainOutcome) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    write_loss_csv(&dir.join("loss.csv"), &outcome.log)?;
    let mut ck = outcome.checkpoint.clone();
    ck.loss_log = Some("loss.csv".into());
    ck.save(&dir.join("model.srseg"))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::train::synthesize_dataset;

    #[test]
    fn epochs_visit_every_sample_once() {
        for n in [1, 3, 8] {
            for epoch in 0..4 {
                let mut seen: Vec<usize> = (0..n).map(|i| sample_at(7, n, epoch * n + i)).collect();
                seen.sort();
                assert_eq!(seen, (0..n).collect::<Vec<_>>());
            }
        }
    }

    #[test]
    fn rejects_bad_datasets() {
        let cfg = TrainConfig::default();
        assert!(train(&[], &cfg).is_err());
        let data = synthesize_dataset(1, 18, 3, 0).unwrap();
        assert!(train(&data, &cfg).is_err());
        let data = synthesize_dataset(1, 16, 2, 0).unwrap();
        assert!(train(&data, &cfg).is_err());
    }

    #[test]
    fn predict_shape_and_divisibility() {
        let data = synthesize_dataset(1, 16, 3, 0).unwrap();
        let cfg = TrainConfig {
            max_iters: 2,
            ..TrainConfig::default()
        };
        let out = train(&data, &cfg).unwrap();
        let p = predict(&out.checkpoint, &data[0].input).unwrap();
        assert_eq!((p.width(), p.height(), p.num_levels()), (16, 16, 3));
        let err = predict(&out.checkpoint, &Tensor::zeros(&[1, 1, 16, 18])).unwrap_err();
        assert!(err.to_string().contains("divisible by 4"), "{err}");
    }

    #[test]
    fn uniform_logits_predict_level_zero() {
        let data = synthesize_dataset(1, 16, 3, 0).unwrap();
        let cfg = TrainConfig {
            max_iters: 0,
            ..TrainConfig::default()
        };
        let mut ck = train(&data, &cfg).unwrap().checkpoint;
        ck.network = Network::new(ck.network.specs()).unwrap();
        let p = predict(&ck, &data[0].input).unwrap();
        assert!(p.levels().iter().all(|&l| l == 0));
    }

    #[test]
    fn nan_input_aborts_with_iteration() {
        let mut data = synthesize_dataset(1, 16, 3, 0).unwrap();
        data[0].input.data_mut()[5] = f64::NAN;
        let cfg = TrainConfig {
            max_iters: 3,
            ..TrainConfig::default()
        };
        match train(&data, &cfg) {
            Err(Error::NonFiniteLoss { iteration, .. }) => assert_eq!(iteration, 0),
            other => panic!("expected abort, got {other:?}"),
        }
    }
}
