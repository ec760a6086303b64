//! Fixation-based saliency metrics and the reports built from them.
//!
//! Both AUC variants use the rank-statistic form of the ROC area: the chance
//! that a random positive outscores a random negative, ties counting one half.
//! This is exactly the trapezoidal area over every distinct threshold.

use rand::seq::index;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::maps::{quantize, to_display, FixationMap, SaliencyMap, SalientRegionMap};

pub const DEFAULT_SPLITS: usize = 100;

/// ROC area of `pos` against `neg` via midranks (Mann-Whitney U).
pub fn auc_from_scores(pos: &[f64], neg: &[f64]) -> Result<f64> {
    if pos.is_empty() || neg.is_empty() {
        return Err(Error::DegenerateAuc);
    }
    let mut all: Vec<(f64, bool)> = pos
        .iter()
        .map(|&v| (v, true))
        .chain(neg.iter().map(|&v| (v, false)))
        .collect();
    all.sort_by(|a, b| a.0.total_cmp(&b.0));
    let mut rank_sum = 0.0;
    let mut i = 0;
    while i < all.len() {
        let mut j = i;
        while j + 1 < all.len() && all[j + 1].0 == all[i].0 {
            j += 1;
        }
        // ranks i+1 ..= j+1 share their mean
        let mid = (i + j + 2) as f64 / 2.0;
        let n_pos = all[i..=j].iter().filter(|e| e.1).count();
        rank_sum += mid * n_pos as f64;
        i = j + 1;
    }
    let (np, nn) = (pos.len() as f64, neg.len() as f64);
    Ok((rank_sum - np * (np + 1.0) / 2.0) / (np * nn))
}

fn check_dims(pred: &SaliencyMap, fm: &FixationMap) -> Result<()> {
    if (pred.width(), pred.height()) != (fm.width(), fm.height()) {
        return Err(Error::mismatch(
            format!("{}x{}", fm.width(), fm.height()),
            format!("{}x{}", pred.width(), pred.height()),
        ));
    }
    Ok(())
}

/// Fixated pixels are positives, every other pixel a negative.
pub fn auc_judd(pred: &SaliencyMap, fm: &FixationMap) -> Result<f64> {
    check_dims(pred, fm)?;
    let (mut pos, mut neg) = (Vec::new(), Vec::new());
    for (&v, &hit) in pred.values().iter().zip(fm.hits()) {
        if hit {
            pos.push(v);
        } else {
            neg.push(v);
        }
    }
    auc_from_scores(&pos, &neg)
}

/// Shuffled AUC: negatives are fixation locations of *other* images, which
/// cancels the reward a centre-biased map would otherwise collect.
///
/// Per split, `min(#positives, pool size)` distinct pool locations are drawn;
/// any that coincide with this image's own fixations are dropped from that
/// split. The result is the mean over splits that kept at least one negative.
pub fn auc_shuffled(
    pred: &SaliencyMap,
    fm: &FixationMap,
    other_fixations: &[&FixationMap],
    n_splits: usize,
    seed: u64,
) -> Result<f64> {
    check_dims(pred, fm)?;
    if n_splits == 0 {
        return Err(Error::invalid("shuffled AUC needs at least one split"));
    }
    let (w, h) = (fm.width(), fm.height());
    let mut pool = vec![false; w * h];
    for other in other_fixations {
        for (x, y) in other.points() {
            if x < w && y < h {
                pool[y * w + x] = true;
            }
        }
    }
    let pool: Vec<usize> = pool
        .iter()
        .enumerate()
        .filter_map(|(i, &p)| p.then_some(i))
        .collect();
    if pool.is_empty() {
        return Err(Error::EmptyNegativePool);
    }
    let positives = fm.hit_indices();
    if positives.is_empty() {
        return Err(Error::DegenerateAuc);
    }
    let pos: Vec<f64> = positives.iter().map(|&i| pred.values()[i]).collect();
    let take = positives.len().min(pool.len());

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut total = 0.0;
    let mut used = 0usize;
    for _ in 0..n_splits {
        let neg: Vec<f64> = index::sample(&mut rng, pool.len(), take)
            .into_iter()
            .map(|j| pool[j])
            .filter(|&i| !fm.hits()[i])
            .map(|i| pred.values()[i])
            .collect();
        if neg.is_empty() {
            continue;
        }
        total += auc_from_scores(&pos, &neg)?;
        used += 1;
    }
    if used == 0 {
        return Err(Error::EmptyNegativePool);
    }
    Ok(total / used as f64)
}

/// `(mean, population standard deviation)`.
pub(crate) fn mean_std(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
    (mean, var.sqrt())
}

/// Normalized scanpath saliency: mean z-score of the prediction at fixations.
pub fn nss(pred: &SaliencyMap, fm: &FixationMap) -> Result<f64> {
    check_dims(pred, fm)?;
    let hits = fm.hit_indices();
    if hits.is_empty() {
        return Err(Error::EmptyFixationMap);
    }
    let (mean, std) = mean_std(pred.values());
    if std.is_nan() || std <= 0.0 {
        return Err(Error::UndefinedNss);
    }
    let sum: f64 = hits.iter().map(|&i| (pred.values()[i] - mean) / std).sum();
    Ok(sum / hits.len() as f64)
}

/// Overall and per-level pixel accuracy (per-level = recall of that level).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AccuracyReport {
    pub overall: f64,
    /// `None` for levels that never occur in the ground truth.
    pub per_class: Vec<Option<f64>>,
    pub correct: Vec<u64>,
    pub total: Vec<u64>,
}

impl AccuracyReport {
    pub fn from_counts(correct: Vec<u64>, total: Vec<u64>) -> Self {
        let all: u64 = total.iter().sum();
        let hit: u64 = correct.iter().sum();
        let overall = if all == 0 { 0.0 } else { hit as f64 / all as f64 };
        let per_class = correct
            .iter()
            .zip(&total)
            .map(|(&c, &t)| (t > 0).then(|| c as f64 / t as f64))
            .collect();
        AccuracyReport {
            overall,
            per_class,
            correct,
            total,
        }
    }

    /// Pools the counts of several reports.
    pub fn merge(reports: &[AccuracyReport]) -> Option<AccuracyReport> {
        let k = reports.first()?.total.len();
        let mut correct = vec![0; k];
        let mut total = vec![0; k];
        for r in reports {
            for c in 0..k.min(r.total.len()) {
                correct[c] += r.correct[c];
                total[c] += r.total[c];
            }
        }
        Some(AccuracyReport::from_counts(correct, total))
    }

    pub fn to_table(&self) -> String {
        let mut rows = vec![("all class".to_string(), Some(self.overall))];
        for (i, v) in self.per_class.iter().enumerate() {
            rows.push((format!("saliency level {}", i + 1), *v));
        }
        let mut out = format!("{:<18}{:>10}\n", "Class", "Accuracy");
        for (name, v) in rows {
            let cell = v.map_or("-".to_string(), |v| format!("{:.2}%", 100.0 * v));
            out.push_str(&format!("{name:<18}{cell:>10}\n"));
        }
        out
    }
}

pub fn classification_accuracy(pred: &SalientRegionMap, gt: &SalientRegionMap) -> Result<AccuracyReport> {
    if (pred.width(), pred.height()) != (gt.width(), gt.height()) {
        return Err(Error::mismatch(
            format!("{}x{}", gt.width(), gt.height()),
            format!("{}x{}", pred.width(), pred.height()),
        ));
    }
    if pred.num_levels() != gt.num_levels() {
        return Err(Error::mismatch(
            format!("K = {}", gt.num_levels()),
            format!("K = {}", pred.num_levels()),
        ));
    }
    let k = gt.num_levels();
    let mut correct = vec![0u64; k];
    let mut total = vec![0u64; k];
    for (&p, &g) in pred.levels().iter().zip(gt.levels()) {
        total[g] += 1;
        if p == g {
            correct[g] += 1;
        }
    }
    Ok(AccuracyReport::from_counts(correct, total))
}

/// The three fixation metrics side by side.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MetricTriple {
    pub auc_judd: f64,
    pub auc_shuffled: f64,
    pub nss: f64,
}

impl MetricTriple {
    fn mean(rows: &[MetricTriple]) -> MetricTriple {
        let n = rows.len() as f64;
        let mut acc = MetricTriple {
            auc_judd: 0.0,
            auc_shuffled: 0.0,
            nss: 0.0,
        };
        for r in rows {
            acc.auc_judd += r.auc_judd;
            acc.auc_shuffled += r.auc_shuffled;
            acc.nss += r.nss;
        }
        MetricTriple {
            auc_judd: acc.auc_judd / n,
            auc_shuffled: acc.auc_shuffled / n,
            nss: acc.nss / n,
        }
    }
}

/// Which metrics [`evaluate`] computes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct MetricSet {
    pub auc_judd: bool,
    pub auc_shuffled: bool,
    pub nss: bool,
    pub accuracy: bool,
}

impl Default for MetricSet {
    fn default() -> Self {
        MetricSet {
            auc_judd: true,
            auc_shuffled: true,
            nss: true,
            accuracy: true,
        }
    }
}

/// One prediction to score.
#[derive(Debug, Clone)]
pub struct EvalItem {
    pub name: String,
    pub prediction: SaliencyMap,
    pub fixations: FixationMap,
    /// Predicted levels and ground-truth levels, for classification accuracy.
    pub levels: Option<(SalientRegionMap, SalientRegionMap)>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MapScores {
    pub name: String,
    pub auc_judd: Option<f64>,
    pub auc_shuffled: Option<f64>,
    pub nss: Option<f64>,
    pub accuracy: Option<AccuracyReport>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub auc_judd: Option<f64>,
    pub auc_shuffled: Option<f64>,
    pub nss: Option<f64>,
    /// Counts pooled over every map that carried levels.
    pub accuracy: Option<AccuracyReport>,
    pub per_map: Vec<MapScores>,
}

fn mean_of(rows: &[MapScores], f: impl Fn(&MapScores) -> Option<f64>) -> Option<f64> {
    let vals: Vec<f64> = rows.iter().map(f).collect::<Option<Vec<_>>>()?;
    if vals.is_empty() {
        return None;
    }
    let mut sum = 0.0;
    for v in &vals {
        sum += v;
    }
    Some(sum / vals.len() as f64)
}

/// Scores every item. Shuffled AUC draws its negatives from the fixations
/// of all the other items.
pub fn evaluate(items: &[EvalItem], metrics: MetricSet, n_splits: usize, seed: u64) -> Result<EvalReport> {
    if items.is_empty() {
        return Err(Error::invalid("nothing to evaluate"));
    }
    let per_map = items
        .par_iter()
        .enumerate()
        .map(|(i, item)| {
            let others: Vec<&FixationMap> = items
                .iter()
                .enumerate()
                .filter(|&(j, _)| j != i)
                .map(|(_, o)| &o.fixations)
                .collect();
            Ok(MapScores {
                name: item.name.clone(),
                auc_judd: metrics
                    .auc_judd
                    .then(|| auc_judd(&item.prediction, &item.fixations))
                    .transpose()?,
                auc_shuffled: metrics
                    .auc_shuffled
                    .then(|| auc_shuffled(&item.prediction, &item.fixations, &others, n_splits, seed))
                    .transpose()?,
                nss: metrics
                    .nss
                    .then(|| nss(&item.prediction, &item.fixations))
                    .transpose()?,
                accuracy: match (&item.levels, metrics.accuracy) {
                    (Some((p, g)), true) => Some(classification_accuracy(p, g)?),
                    _ => None,
                },
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let accs: Vec<AccuracyReport> = per_map.iter().filter_map(|m| m.accuracy.clone()).collect();
    Ok(EvalReport {
        auc_judd: mean_of(&per_map, |m| m.auc_judd),
        auc_shuffled: mean_of(&per_map, |m| m.auc_shuffled),
        nss: mean_of(&per_map, |m| m.nss),
        accuracy: AccuracyReport::merge(&accs),
        per_map,
    })
}

impl EvalReport {
    pub fn to_table(&self) -> String {
        let cell = |v: Option<f64>| v.map_or("-".to_string(), |v| format!("{v:.4}"));
        let mut out = format!("{:<24}{:>10}{:>14}{:>10}\n", "Map", "AUC-Judd", "AUC-shuffled", "NSS");
        for m in &self.per_map {
            out.push_str(&format!(
                "{:<24}{:>10}{:>14}{:>10}\n",
                m.name,
                cell(m.auc_judd),
                cell(m.auc_shuffled),
                cell(m.nss)
            ));
        }
        out.push_str(&format!(
            "{:<24}{:>10}{:>14}{:>10}\n",
            "mean",
            cell(self.auc_judd),
            cell(self.auc_shuffled),
            cell(self.nss)
        ));
        if let Some(acc) = &self.accuracy {
            out.push('\n');
            out.push_str(&acc.to_table());
        }
        out
    }
}

/// Scores lost when a ground-truth saliency map is replaced by the display
/// rendition of its `K`-level quantization.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QuantizationReport {
    pub num_levels: usize,
    pub saliency_map: MetricTriple,
    pub region_map: MetricTriple,
    /// `(SM - SRM) / SM * 100` per metric.
    pub loss_percent: MetricTriple,
    pub per_map: Vec<(MetricTriple, MetricTriple)>,
}

impl QuantizationReport {
    pub fn to_table(&self) -> String {
        let mut out = format!("{:<34}{:>10}{:>14}{:>10}\n", "Ground truth", "AUC-Judd", "AUC-shuffled", "NSS");
        let row = |name: &str, t: &MetricTriple| {
            format!("{name:<34}{:>10.4}{:>14.4}{:>10.4}\n", t.auc_judd, t.auc_shuffled, t.nss)
        };
        out.push_str(&row("saliency map", &self.saliency_map));
        out.push_str(&row(
            &format!("salient region map ({} levels)", self.num_levels),
            &self.region_map,
        ));
        let l = &self.loss_percent;
        out.push_str(&format!(
            "{:<34}{:>10}{:>14}{:>10}\n",
            "quantization loss",
            format!("{:.2}%", l.auc_judd),
            format!("{:.2}%", l.auc_shuffled),
            format!("{:.2}%", l.nss)
        ));
        out
    }
}

fn triple(pred: &SaliencyMap, fm: &FixationMap, others: &[&FixationMap], n_splits: usize, seed: u64) -> Result<MetricTriple> {
    Ok(MetricTriple {
        auc_judd: auc_judd(pred, fm)?,
        auc_shuffled: auc_shuffled(pred, fm, others, n_splits, seed)?,
        nss: nss(pred, fm)?,
    })
}

pub fn quantization_loss_report(
    dataset: &[(SaliencyMap, FixationMap)],
    k: usize,
    n_splits: usize,
    seed: u64,
) -> Result<QuantizationReport> {
    if dataset.is_empty() {
        return Err(Error::invalid("quantization report needs at least one map"));
    }
    let per_map = dataset
        .par_iter()
        .enumerate()
        .map(|(i, (sm, fm))| {
            let others: Vec<&FixationMap> = dataset
                .iter()
                .enumerate()
                .filter(|&(j, _)| j != i)
                .map(|(_, (_, f))| f)
                .collect();
            let srm = to_display(&quantize(sm, k)?);
            Ok((
                triple(sm, fm, &others, n_splits, seed)?,
                triple(&srm, fm, &others, n_splits, seed)?,
            ))
        })
        .collect::<Result<Vec<_>>>()?;
    let sm_rows: Vec<MetricTriple> = per_map.iter().map(|p| p.0).collect();
    let srm_rows: Vec<MetricTriple> = per_map.iter().map(|p| p.1).collect();
    let sm = MetricTriple::mean(&sm_rows);
    let srm = MetricTriple::mean(&srm_rows);
    let loss = |a: f64, b: f64| (a - b) / a * 100.0;
    Ok(QuantizationReport {
        num_levels: k,
        saliency_map: sm,
        region_map: srm,
        loss_percent: MetricTriple {
            auc_judd: loss(sm.auc_judd, srm.auc_judd),
            auc_shuffled: loss(sm.auc_shuffled, srm.auc_shuffled),
            nss: loss(sm.nss, srm.nss),
        },
        per_map,
    })
}

/// Why a map's NSS is high or low: its spread, and how far its peak sits
/// above the mean once normalized.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StdRow {
    pub name: String,
    /// Population std of the map min-max rescaled to `[0, 1]`.
    pub std: f64,
    /// Largest z-score; `None` for a constant map.
    pub normalized_max: Option<f64>,
    pub nss: Option<f64>,
}

pub fn nss_std_analysis(maps: &[(String, SaliencyMap)], fm: &FixationMap) -> Vec<StdRow> {
    maps.iter()
        .map(|(name, sm)| {
            let v = sm.values();
            let lo = v.iter().cloned().fold(f64::INFINITY, f64::min);
            let hi = v.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let unit: Vec<f64> = if hi > lo {
                v.iter().map(|x| (x - lo) / (hi - lo)).collect()
            } else {
                vec![0.0; v.len()]
            };
            let (_, std) = mean_std(&unit);
            let (mean, raw_std) = mean_std(v);
            let normalized_max = (raw_std > 0.0).then(|| (hi - mean) / raw_std);
            StdRow {
                name: name.clone(),
                std,
                normalized_max,
                nss: nss(sm, fm).ok(),
            }
        })
        .collect()
}

pub fn std_table(rows: &[StdRow]) -> String {
    let cell = |v: Option<f64>| v.map_or("-".to_string(), |v| format!("{v:.4}"));
    let mut out = format!("{:<20}{:>10}{:>16}{:>10}\n", "Map", "std", "normalized max", "NSS");
    for r in rows {
        out.push_str(&format!(
            "{:<20}{:>10.4}{:>16}{:>10}\n",
            r.name,
            r.std,
            cell(r.normalized_max),
            cell(r.nss)
        ));
    }
    out
}
