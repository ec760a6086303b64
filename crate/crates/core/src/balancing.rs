//! Median frequency class balancing.
//!
//! Class `c` gets weight `median(freq) / freq(c)`, where `freq(c)` is the
//! share of class `c` among the pixels of the maps in which `c` occurs at all.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::maps::SalientRegionMap;

/// Per-level loss weights, indexed by saliency level.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct ClassWeights(Vec<f64>);

impl ClassWeights {
    pub fn new(weights: Vec<f64>) -> Result<Self> {
        if weights.iter().any(|w| !(w.is_finite() && *w >= 0.0)) {
            return Err(Error::invalid("class weights must be finite and non-negative"));
        }
        Ok(ClassWeights(weights))
    }

    pub fn uniform(k: usize) -> Self {
        ClassWeights(vec![1.0; k])
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn scaled(&self, factor: f64) -> Self {
        ClassWeights(self.0.iter().map(|w| w * factor).collect())
    }
}

pub fn class_frequencies(dataset: &[SalientRegionMap]) -> Result<Vec<f64>> {
    let first = dataset
        .first()
        .ok_or_else(|| Error::invalid("class frequencies need at least one map"))?;
    let k = first.num_levels();
    let mut class_pixels = vec![0u64; k];
    let mut present_pixels = vec![0u64; k];
    for srm in dataset {
        if srm.num_levels() != k {
            return Err(Error::mismatch(format!("K = {k}"), format!("K = {}", srm.num_levels())));
        }
        let mut counts = vec![0u64; k];
        for &l in srm.levels() {
            counts[l] += 1;
        }
        let total = srm.levels().len() as u64;
        for (c, &n) in counts.iter().enumerate() {
            if n > 0 {
                class_pixels[c] += n;
                present_pixels[c] += total;
            }
        }
    }
    Ok(class_pixels
        .iter()
        .zip(&present_pixels)
        .map(|(&n, &d)| if d == 0 { 0.0 } else { n as f64 / d as f64 })
        .collect())
}

pub(crate) fn median(values: &mut [f64]) -> f64 {
    values.sort_by(|a, b| a.total_cmp(b));
    let n = values.len();
    if n % 2 == 1 {
        values[n / 2]
    } else {
        (values[n / 2 - 1] + values[n / 2]) / 2.0
    }
}

/// Absent classes (frequency 0) get weight 0.
pub fn median_frequency_weights(freqs: &[f64]) -> Result<ClassWeights> {
    if freqs.iter().any(|f| !(f.is_finite() && *f >= 0.0)) {
        return Err(Error::invalid("frequencies must be finite and non-negative"));
    }
    let mut present: Vec<f64> = freqs.iter().cloned().filter(|&f| f > 0.0).collect();
    if present.is_empty() {
        return Err(Error::invalid("all class frequencies are zero"));
    }
    let med = median(&mut present);
    ClassWeights::new(
        freqs
            .iter()
            .map(|&f| if f > 0.0 { med / f } else { 0.0 })
            .collect(),
    )
}
