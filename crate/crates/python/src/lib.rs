//! Python bindings. Maps travel as nested lists indexed `[y][x]`; fixations as
//! lists of `(x, y)` pairs.

use std::path::PathBuf;

use pyo3::exceptions::{PyFloatingPointError, PyValueError};
use pyo3::prelude::*;

use salseg::balancing::{self, ClassWeights};
use salseg::maps::{self, FixationMap, SaliencyMap, SalientRegionMap};
use salseg::metrics;
use salseg::net::{DecoderMode, Tensor};
use salseg::train::{self, Checkpoint, LogRow, LossForm, TrainConfig};

fn to_py(e: salseg::Error) -> PyErr {
    if e.is_numerical() {
        PyFloatingPointError::new_err(e.to_string())
    } else {
        PyValueError::new_err(e.to_string())
    }
}

fn flatten<T: Copy>(grid: &[Vec<T>]) -> PyResult<(usize, usize, Vec<T>)> {
    let h = grid.len();
    let w = grid.first().map_or(0, Vec::len);
    if h == 0 || w == 0 || grid.iter().any(|r| r.len() != w) {
        return Err(PyValueError::new_err("expected a non-empty rectangular grid"));
    }
    Ok((w, h, grid.concat()))
}

fn nest<T: Copy>(w: usize, flat: &[T]) -> Vec<Vec<T>> {
    flat.chunks(w).map(<[T]>::to_vec).collect()
}

fn saliency(grid: &[Vec<f64>]) -> PyResult<SaliencyMap> {
    let (w, h, v) = flatten(grid)?;
    SaliencyMap::new(w, h, v).map_err(to_py)
}

fn region(grid: &[Vec<usize>], num_levels: usize) -> PyResult<SalientRegionMap> {
    let (w, h, v) = flatten(grid)?;
    SalientRegionMap::new(w, h, num_levels, v).map_err(to_py)
}

fn fixations(w: usize, h: usize, points: &[(usize, usize)]) -> PyResult<FixationMap> {
    FixationMap::from_points(w, h, points).map_err(to_py)
}

/// Gaussian-blurred fixation map rescaled to a maximum of 255.
#[pyfunction]
#[pyo3(signature = (width, height, points, sigma = maps::DEFAULT_SIGMA))]
fn saliency_from_fixations(width: usize, height: usize, points: Vec<(usize, usize)>, sigma: f64) -> PyResult<Vec<Vec<f64>>> {
    let sm = maps::saliency_from_fixations(&fixations(width, height, &points)?, sigma).map_err(to_py)?;
    Ok(nest(width, sm.values()))
}

/// Saliency levels `0..levels` of a map with values in `[0, 255]`.
#[pyfunction]
fn quantize(saliency_map: Vec<Vec<f64>>, levels: usize) -> PyResult<Vec<Vec<usize>>> {
    let srm = maps::quantize(&saliency(&saliency_map)?, levels).map_err(to_py)?;
    Ok(nest(srm.width(), srm.levels()))
}

/// Display grey values of a level map.
#[pyfunction]
fn to_display(levels: Vec<Vec<usize>>, num_levels: usize) -> PyResult<Vec<Vec<f64>>> {
    let srm = region(&levels, num_levels)?;
    Ok(nest(srm.width(), maps::to_display(&srm).values()))
}

/// Zeroes every level where the binary map is 0.
#[pyfunction]
fn restrict(levels: Vec<Vec<usize>>, num_levels: usize, binary: Vec<Vec<usize>>) -> PyResult<Vec<Vec<usize>>> {
    let out = maps::restrict(&region(&levels, num_levels)?, &region(&binary, 2)?).map_err(to_py)?;
    Ok(nest(out.width(), out.levels()))
}

/// Presence-conditioned class frequencies over a set of level maps.
#[pyfunction]
fn class_frequencies(level_maps: Vec<Vec<Vec<usize>>>, num_levels: usize) -> PyResult<Vec<f64>> {
    let maps = level_maps
        .iter()
        .map(|g| region(g, num_levels))
        .collect::<PyResult<Vec<_>>>()?;
    balancing::class_frequencies(&maps).map_err(to_py)
}

#[pyfunction]
fn median_frequency_weights(freqs: Vec<f64>) -> PyResult<Vec<f64>> {
    balancing::median_frequency_weights(&freqs)
        .map(|w| w.as_slice().to_vec())
        .map_err(to_py)
}

#[pyfunction]
fn auc_judd(prediction: Vec<Vec<f64>>, points: Vec<(usize, usize)>) -> PyResult<f64> {
    let sm = saliency(&prediction)?;
    metrics::auc_judd(&sm, &fixations(sm.width(), sm.height(), &points)?).map_err(to_py)
}

/// Shuffled AUC with negatives drawn from the other images' fixations.
#[pyfunction]
#[pyo3(signature = (prediction, points, other_points, n_splits = metrics::DEFAULT_SPLITS, seed = 0))]
fn auc_shuffled(
    prediction: Vec<Vec<f64>>,
    points: Vec<(usize, usize)>,
    other_points: Vec<Vec<(usize, usize)>>,
    n_splits: usize,
    seed: u64,
) -> PyResult<f64> {
    let sm = saliency(&prediction)?;
    let (w, h) = (sm.width(), sm.height());
    let others = other_points
        .iter()
        .map(|p| fixations(w, h, p))
        .collect::<PyResult<Vec<_>>>()?;
    let refs: Vec<&FixationMap> = others.iter().collect();
    metrics::auc_shuffled(&sm, &fixations(w, h, &points)?, &refs, n_splits, seed).map_err(to_py)
}

#[pyfunction]
fn nss(prediction: Vec<Vec<f64>>, points: Vec<(usize, usize)>) -> PyResult<f64> {
    let sm = saliency(&prediction)?;
    metrics::nss(&sm, &fixations(sm.width(), sm.height(), &points)?).map_err(to_py)
}

#[pyfunction]
#[pyo3(signature = (iteration, base_lr = 0.01, step_size = 500, gamma = 0.8))]
fn lr_schedule(iteration: usize, base_lr: f64, step_size: usize, gamma: f64) -> f64 {
    let cfg = TrainConfig {
        base_lr,
        step_size,
        gamma,
        ..TrainConfig::default()
    };
    train::lr_schedule(&cfg, iteration)
}

fn decoder(name: &str) -> PyResult<DecoderMode> {
    match name {
        "unpool" => Ok(DecoderMode::Unpool),
        "deconv" => Ok(DecoderMode::Deconv),
        _ => Err(PyValueError::new_err(format!("decoder must be unpool or deconv, got {name}"))),
    }
}

fn loss_form(name: &str) -> PyResult<LossForm> {
    match name {
        "categorical" => Ok(LossForm::Categorical),
        "per-level" => Ok(LossForm::PerLevelBinary),
        "regression" => Ok(LossForm::EuclideanRegression),
        _ => Err(PyValueError::new_err(format!("loss must be categorical, per-level or regression, got {name}"))),
    }
}

/// A trained network with its configuration and loss log.
#[pyclass(module = "salseg_py")]
struct Model {
    checkpoint: Checkpoint,
    log: Vec<LogRow>,
}

#[pymethods]
impl Model {
    /// Trains on `count` synthetic `size x size` samples.
    #[staticmethod]
    #[allow(clippy::too_many_arguments)]
    #[pyo3(signature = (count = 8, size = 32, levels = 3, iters = 3000, decoder_mode = "unpool", loss = "categorical", seed = 0))]
    fn train_synthetic(
        py: Python<'_>,
        count: usize,
        size: usize,
        levels: usize,
        iters: usize,
        decoder_mode: &str,
        loss: &str,
        seed: u64,
    ) -> PyResult<Self> {
        let cfg = TrainConfig {
            max_iters: iters,
            num_levels: levels,
            decoder: decoder(decoder_mode)?,
            loss: loss_form(loss)?,
            seed,
            ..TrainConfig::default()
        };
        let out = py
            .detach(|| train::synthesize_dataset(count, size, levels, seed).and_then(|d| train::train(&d, &cfg)))
            .map_err(to_py)?;
        Ok(Model {
            checkpoint: out.checkpoint,
            log: out.log,
        })
    }

    #[staticmethod]
    fn load(path: PathBuf) -> PyResult<Self> {
        Ok(Model {
            checkpoint: Checkpoint::load(&path).map_err(to_py)?,
            log: Vec::new(),
        })
    }

    fn save(&self, path: PathBuf) -> PyResult<()> {
        self.checkpoint.save(&path).map_err(to_py)
    }

    /// Level map for a grayscale image with values in `[0, 1]`.
    fn predict(&self, image: Vec<Vec<f64>>) -> PyResult<Vec<Vec<usize>>> {
        let (w, h, v) = flatten(&image)?;
        let x = Tensor::from_vec(&[1, 1, h, w], v).map_err(to_py)?;
        let srm = train::predict(&self.checkpoint, &x).map_err(to_py)?;
        Ok(nest(w, srm.levels()))
    }

    /// `(iter, lr, loss, pixel_acc)` per training iteration.
    #[getter]
    fn loss_log(&self) -> Vec<(usize, f64, f64, f64)> {
        self.log.iter().map(|r| (r.iter, r.lr, r.loss, r.pixel_acc)).collect()
    }

    #[getter]
    fn iteration(&self) -> usize {
        self.checkpoint.iteration
    }

    #[getter]
    fn class_weights(&self) -> Option<Vec<f64>> {
        self.checkpoint.class_weights.as_ref().map(|w: &ClassWeights| w.as_slice().to_vec())
    }

    #[getter]
    fn parameter_count(&self) -> usize {
        self.checkpoint.network.parameter_count()
    }
}

#[pymodule]
fn salseg_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_function(wrap_pyfunction!(saliency_from_fixations, m)?)?;
    m.add_function(wrap_pyfunction!(quantize, m)?)?;
    m.add_function(wrap_pyfunction!(to_display, m)?)?;
    m.add_function(wrap_pyfunction!(restrict, m)?)?;
    m.add_function(wrap_pyfunction!(class_frequencies, m)?)?;
    m.add_function(wrap_pyfunction!(median_frequency_weights, m)?)?;
    m.add_function(wrap_pyfunction!(auc_judd, m)?)?;
    m.add_function(wrap_pyfunction!(auc_shuffled, m)?)?;
    m.add_function(wrap_pyfunction!(nss, m)?)?;
    m.add_function(wrap_pyfunction!(lr_schedule, m)?)?;
    m.add_class::<Model>()?;
    Ok(())
}
