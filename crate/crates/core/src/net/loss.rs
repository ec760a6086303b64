//! Training losses. Every loss is averaged over all pixels of the batch.

use serde::{Deserialize, Serialize};

use super::Tensor;
use crate::balancing::ClassWeights;
use crate::error::{Error, Result};
use crate::maps::{SaliencyMap, SalientRegionMap};

/// Probabilities are clamped to `[PROB_EPS, 1 - PROB_EPS]` before any log.
pub const PROB_EPS: f64 = 1e-12;

/// Which cross-entropy to train segmentation with.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum CeForm {
    /// `-W_g ln p_g` for the true level `g`. The gradient is taken w.r.t. the logits.
    Categorical,
    /// `-sum_i W_i (g_i ln p_i + (1 - g_i) ln(1 - p_i))`, a per-level binary
    /// cross-entropy. The gradient is taken w.r.t. the probabilities.
    PerLevelBinary,
}

fn check_batch(probs: &Tensor, gt: &[SalientRegionMap], w: &ClassWeights) -> Result<(usize, usize, usize)> {
    let (n, k, h, wd) = probs.dims4()?;
    if gt.len() != n {
        return Err(Error::mismatch(format!("{n} ground-truth maps"), gt.len()));
    }
    if w.len() != k {
        return Err(Error::mismatch(format!("{k} class weights"), w.len()));
    }
    for g in gt {
        if (g.width(), g.height()) != (wd, h) {
            return Err(Error::mismatch(format!("{wd}x{h}"), format!("{}x{}", g.width(), g.height())));
        }
        if g.num_levels() != k {
            return Err(Error::mismatch(format!("K = {k}"), format!("K = {}", g.num_levels())));
        }
    }
    Ok((n, k, h * wd))
}

/// Weighted cross-entropy of `probs` (`[N, K, H, W]`, softmax output)
/// against one region map per batch element.
pub fn weighted_ce_loss(
    probs: &Tensor,
    gt: &[SalientRegionMap],
    w: &ClassWeights,
    form: CeForm,
) -> Result<(f64, Tensor)> {
    let (n, k, hw) = check_batch(probs, gt, w)?;
    let weights = w.as_slice();
    let scale = 1.0 / (n * hw) as f64;
    let p = probs.data();
    let mut grad = Tensor::zeros(probs.shape());
    let mut loss = 0.0;
    for (ni, g) in gt.iter().enumerate() {
        let base = ni * k * hw;
        for (pix, &level) in g.levels().iter().enumerate() {
            match form {
                CeForm::Categorical => {
                    let wg = weights[level];
                    let pg = p[base + level * hw + pix].clamp(PROB_EPS, 1.0 - PROB_EPS);
                    loss -= wg * pg.ln();
                    for c in 0..k {
                        let at = base + c * hw + pix;
                        let target = if c == level { 1.0 } else { 0.0 };
                        grad.data_mut()[at] = scale * wg * (p[at] - target);
                    }
                }
                CeForm::PerLevelBinary => {
                    for (c, &wc) in weights.iter().enumerate() {
                        let at = base + c * hw + pix;
                        if c == level {
                            let pc = p[at].clamp(PROB_EPS, 1.0 - PROB_EPS);
                            loss -= wc * pc.ln();
                            grad.data_mut()[at] = -scale * wc / pc;
                        } else {
                            // 1 - p_c as the mass of the other levels, which does
                            // not cancel when p_c is close to 1
                            let rest: f64 = (0..k).filter(|&j| j != c).map(|j| p[base + j * hw + pix]).sum();
                            let rest = rest.clamp(PROB_EPS, 1.0 - PROB_EPS);
                            loss -= wc * rest.ln();
                            grad.data_mut()[at] = scale * wc / rest;
                        }
                    }
                }
            }
        }
    }
    Ok((loss * scale, grad))
}

/// `0.5 * mean((pred - target / 255)^2)`; `pred` is `[N, 1, H, W]`.
pub fn euclidean_loss(pred: &Tensor, target: &[SaliencyMap]) -> Result<(f64, Tensor)> {
    let (n, c, h, w) = pred.dims4()?;
    if c != 1 || target.len() != n {
        return Err(Error::mismatch(
            format!("[{}, 1, {h}, {w}]", target.len()),
            format!("{:?}", pred.shape()),
        ));
    }
    let total = (n * h * w) as f64;
    let mut grad = Tensor::zeros(pred.shape());
    let mut loss = 0.0;
    for (ni, t) in target.iter().enumerate() {
        if (t.width(), t.height()) != (w, h) {
            return Err(Error::mismatch(format!("{w}x{h}"), format!("{}x{}", t.width(), t.height())));
        }
        for (pix, &s) in t.values().iter().enumerate() {
            let at = ni * h * w + pix;
            let d = pred.data()[at] - s / 255.0;
            loss += d * d;
            grad.data_mut()[at] = d / total;
        }
    }
    Ok((0.5 * loss / total, grad))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::net::ops::softmax_forward;

    fn probs(v: &[f64], k: usize, hw: usize) -> Tensor {
        Tensor::from_vec(&[1, k, 1, hw], v.to_vec()).unwrap()
    }

    #[test]
    fn half_half_binary_case() {
        let p = probs(&[0.5, 0.5], 2, 1);
        let gt = [SalientRegionMap::new(1, 1, 2, vec![1]).unwrap()];
        let w = ClassWeights::uniform(2);
        let (cat, _) = weighted_ce_loss(&p, &gt, &w, CeForm::Categorical).unwrap();
        let (lit, _) = weighted_ce_loss(&p, &gt, &w, CeForm::PerLevelBinary).unwrap();
        assert!((cat - 2f64.ln()).abs() < 1e-12);
        assert!((lit - 2.0 * 2f64.ln()).abs() < 1e-12);
        // 4-decimal values as usually quoted
        assert_eq!(((cat * 1e4).round(), (lit * 1e4).round()), (6931.0, 13863.0));
    }

    #[test]
    fn perfect_prediction_costs_nothing() {
        let p = probs(&[0.0, 1.0, 0.0], 3, 1);
        let gt = [SalientRegionMap::new(1, 1, 3, vec![1]).unwrap()];
        let w = ClassWeights::new(vec![0.5, 2.0, 3.0]).unwrap();
        for form in [CeForm::Categorical, CeForm::PerLevelBinary] {
            let (l, _) = weighted_ce_loss(&p, &gt, &w, form).unwrap();
            assert!(l.abs() < 1e-10, "{form:?}: {l}");
        }
    }

    #[test]
    fn loss_and_gradient_are_linear_in_weights() {
        let p = softmax_forward(&probs(&[0.1, -0.3, 0.7, 0.2, 0.4, -1.0], 3, 2)).unwrap();
        let gt = [SalientRegionMap::new(2, 1, 3, vec![2, 0]).unwrap()];
        let w = ClassWeights::new(vec![0.4, 1.0, 2.5]).unwrap();
        for form in [CeForm::Categorical, CeForm::PerLevelBinary] {
            let (l1, g1) = weighted_ce_loss(&p, &gt, &w, form).unwrap();
            let (l2, g2) = weighted_ce_loss(&p, &gt, &w.scaled(2.0), form).unwrap();
            assert!((l2 - 2.0 * l1).abs() < 1e-12);
            for (a, b) in g1.data().iter().zip(g2.data()) {
                assert!((b - 2.0 * a).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn uniform_weights_give_plain_cross_entropy() {
        let p = softmax_forward(&probs(&[0.3, 1.2, -0.5, 0.0], 2, 2)).unwrap();
        let gt = [SalientRegionMap::new(2, 1, 2, vec![0, 1]).unwrap()];
        let (l, _) = weighted_ce_loss(&p, &gt, &ClassWeights::uniform(2), CeForm::Categorical).unwrap();
        let direct = -(p.data()[0].ln() + p.data()[3].ln()) / 2.0;
        assert!((l - direct).abs() < 1e-14);
    }

    #[test]
    fn weight_count_must_match() {
        let p = probs(&[0.5, 0.5], 2, 1);
        let gt = [SalientRegionMap::new(1, 1, 2, vec![1]).unwrap()];
        let w = ClassWeights::uniform(3);
        assert!(weighted_ce_loss(&p, &gt, &w, CeForm::Categorical).is_err());
    }

    #[test]
    fn euclidean_examples() {
        let t = SaliencyMap::new(3, 3, (0..9).map(|i| i as f64 * 30.0).collect()).unwrap();
        let exact = Tensor::from_vec(&[1, 1, 3, 3], t.values().iter().map(|v| v / 255.0).collect()).unwrap();
        let (l, g) = euclidean_loss(&exact, std::slice::from_ref(&t)).unwrap();
        assert_eq!(l, 0.0);
        assert!(g.data().iter().all(|&v| v == 0.0));

        let (l, _) = euclidean_loss(&exact.map(|v| v + 1.0), std::slice::from_ref(&t)).unwrap();
        assert!((l - 0.5).abs() < 1e-12);

        let pred: Vec<f64> = (0..9).map(|i| ((i * 7) % 5) as f64 * 0.2 - 0.1).collect();
        let mut sum = 0.0;
        for (i, p) in pred.iter().enumerate() {
            let d = p - (i as f64 * 30.0) / 255.0;
            sum += d * d;
        }
        let (l, _) = euclidean_loss(&Tensor::from_vec(&[1, 1, 3, 3], pred).unwrap(), std::slice::from_ref(&t)).unwrap();
        assert!((l - 0.5 * sum / 9.0).abs() < 1e-12);

        assert!(euclidean_loss(&Tensor::zeros(&[1, 1, 2, 2]), &[t]).is_err());
    }
}
