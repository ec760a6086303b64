//! Independent oracles shared by the integration tests.
#![allow(dead_code)]

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use salseg::balancing::ClassWeights;
use salseg::net::{euclidean_loss, weighted_ce_loss, Architecture, CeForm, DecoderMode, Head, LayerKind, Network, Tensor, Trace};
use salseg::{FixationMap, SaliencyMap, SalientRegionMap};

/// ROC area by sweeping every distinct score as a threshold (descending) and
/// summing trapezoids between consecutive (FPR, TPR) points.
pub fn trapezoid_auc(pred: &[f64], hits: &[bool]) -> f64 {
    let p = hits.iter().filter(|&&h| h).count() as f64;
    let n = hits.len() as f64 - p;
    let mut thresholds: Vec<f64> = pred.to_vec();
    thresholds.sort_by(|a, b| b.total_cmp(a));
    thresholds.dedup();
    let (mut fpr0, mut tpr0, mut area) = (0.0, 0.0, 0.0);
    for t in thresholds {
        let tp = pred.iter().zip(hits).filter(|(v, h)| **h && **v >= t).count() as f64;
        let fp = pred.iter().zip(hits).filter(|(v, h)| !**h && **v >= t).count() as f64;
        let (fpr, tpr) = (fp / n, tp / p);
        area += (fpr - fpr0) * (tpr + tpr0) / 2.0;
        fpr0 = fpr;
        tpr0 = tpr;
    }
    area
}

/// Mean z-score at fixated pixels, spelled out.
pub fn direct_nss(pred: &[f64], hits: &[bool]) -> f64 {
    let n = pred.len() as f64;
    let mean = pred.iter().sum::<f64>() / n;
    let var = pred.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
    let sd = var.sqrt();
    let z: Vec<f64> = pred
        .iter()
        .zip(hits)
        .filter(|(_, h)| **h)
        .map(|(v, _)| (v - mean) / sd)
        .collect();
    z.iter().sum::<f64>() / z.len() as f64
}

pub fn random_map(rng: &mut ChaCha8Rng, w: usize, h: usize) -> SaliencyMap {
    // coarse values so ties occur
    let v = (0..w * h).map(|_| rng.random_range(0..32) as f64 * 8.0).collect();
    SaliencyMap::new(w, h, v).unwrap()
}

pub fn random_fixations(rng: &mut ChaCha8Rng, w: usize, h: usize, count: usize) -> FixationMap {
    let mut fm = FixationMap::new(w, h);
    while fm.hit_count() < count {
        fm.set(rng.random_range(0..w), rng.random_range(0..h)).unwrap();
    }
    fm
}

/// Which objective a gradient check exercises.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Objective {
    Ce(CeForm),
    Euclidean,
}

pub struct GradCase {
    pub net: Network,
    pub input: Tensor,
    pub regions: Vec<SalientRegionMap>,
    pub saliency: Vec<SaliencyMap>,
    pub weights: ClassWeights,
    pub objective: Objective,
}

/// A two-stage encoder-decoder small enough to perturb every parameter.
pub fn grad_case(seed: u64, decoder: DecoderMode, objective: Objective) -> GradCase {
    let k = 3;
    let arch = Architecture {
        stage_widths: vec![2, 3],
        convs_per_stage: 1,
        kernel: 3,
    };
    let head = match objective {
        Objective::Ce(_) => Head::Classes(k),
        Objective::Euclidean => Head::Regression,
    };
    let mut net = Network::init(arch.layer_specs(1, decoder, head), seed).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0xABCD);
    // random biases so no unit starts exactly at a kink
    for layer in net.layers_mut() {
        for b in layer.bias.iter_mut() {
            *b = rng.random_range(-0.1..0.1);
        }
    }
    let (n, h, w) = (2, 8, 8);
    let input = Tensor::from_vec(&[n, 1, h, w], (0..n * h * w).map(|_| rng.random_range(0.0..1.0)).collect()).unwrap();
    let regions = (0..n)
        .map(|_| SalientRegionMap::new(w, h, k, (0..h * w).map(|_| rng.random_range(0..k)).collect()).unwrap())
        .collect();
    let saliency = (0..n)
        .map(|_| SaliencyMap::new(w, h, (0..h * w).map(|_| rng.random_range(0.0..255.0)).collect()).unwrap())
        .collect();
    let weights = ClassWeights::new((0..k).map(|_| rng.random_range(0.2..2.0)).collect()).unwrap();
    GradCase {
        net,
        input,
        regions,
        saliency,
        weights,
        objective,
    }
}

impl GradCase {
    pub fn loss(&self, net: &Network) -> (f64, Trace) {
        let trace = net.trace(&self.input).unwrap();
        let loss = match self.objective {
            Objective::Ce(form) => weighted_ce_loss(trace.output(), &self.regions, &self.weights, form).unwrap().0,
            Objective::Euclidean => euclidean_loss(trace.output(), &self.saliency).unwrap().0,
        };
        (loss, trace)
    }

    pub fn analytic(&self) -> Vec<f64> {
        let trace = self.net.trace(&self.input).unwrap();
        let grads = match self.objective {
            Objective::Ce(form) => {
                let (_, g) = weighted_ce_loss(trace.output(), &self.regions, &self.weights, form).unwrap();
                match form {
                    CeForm::Categorical => self.net.backward_logits(&trace, &g).unwrap(),
                    CeForm::PerLevelBinary => self.net.backward_trace(&trace, &g).unwrap(),
                }
            }
            Objective::Euclidean => {
                let (_, g) = euclidean_loss(trace.output(), &self.saliency).unwrap();
                self.net.backward_trace(&trace, &g).unwrap()
            }
        };
        grads.flatten()
    }
}

/// ReLU sign pattern and pooling argmaxes of a trace; finite differences are
/// only meaningful when a perturbation leaves these unchanged.
pub fn activation_pattern(net: &Network, trace: &Trace) -> (Vec<bool>, Vec<u8>) {
    let mut signs = Vec::new();
    let mut offsets = Vec::new();
    for (i, layer) in net.layers().iter().enumerate() {
        match layer.spec.kind {
            LayerKind::Relu => signs.extend(trace.input(i).data().iter().map(|&v| v > 0.0)),
            LayerKind::MaxPool => offsets.extend_from_slice(trace.pool_indices(i).unwrap().offsets()),
            _ => {}
        }
    }
    (signs, offsets)
}

pub struct GradReport {
    pub checked: usize,
    /// Parameters whose perturbation crossed a ReLU kink or changed a pool argmax.
    pub skipped: usize,
    pub worst_rel: f64,
}

/// Relative error `|a - n| / max(|a|, |n|, floor)`; the floor keeps
/// gradients that are zero up to rounding from dominating.
pub const REL_FLOOR: f64 = 1e-6;

/// Central differences with step `h` over every parameter.
pub fn check_gradients(case: &GradCase, h: f64) -> GradReport {
    let analytic = case.analytic();
    let (_, base_trace) = case.loss(&case.net);
    let base = activation_pattern(&case.net, &base_trace);
    let mut net = case.net.clone();
    let mut report = GradReport {
        checked: 0,
        skipped: 0,
        worst_rel: 0.0,
    };
    for (i, &a) in analytic.iter().enumerate() {
        let orig = *net.parameter_mut(i).unwrap();
        *net.parameter_mut(i).unwrap() = orig + h;
        let (lp, tp) = case.loss(&net);
        let pp = activation_pattern(&net, &tp);
        *net.parameter_mut(i).unwrap() = orig - h;
        let (lm, tm) = case.loss(&net);
        let pm = activation_pattern(&net, &tm);
        *net.parameter_mut(i).unwrap() = orig;
        if pp != base || pm != base {
            report.skipped += 1;
            continue;
        }
        let numeric = (lp - lm) / (2.0 * h);
        let rel = (a - numeric).abs() / a.abs().max(numeric.abs()).max(REL_FLOOR);
        report.worst_rel = report.worst_rel.max(rel);
        report.checked += 1;
    }
    report
}

/// Receptive field computed with explicit dense matrices: every convolution
/// becomes its full `(out*h*w) x (in*h*w)` operator, the reverse pass applies
/// the transpose and rectifies, pools become 0/1 top-left upsampling matrices.
pub fn dense_reverse_field(net: &Network, top: usize, channel: usize, side: usize, seed_at: usize) -> Vec<f64> {
    let layers = &net.layers()[..=top];
    let ch = layers[top].spec.out_channels;
    let (mut c, mut s) = (ch, side);
    let mut v = vec![0.0; c * s * s];
    v[channel * s * s + seed_at * s + seed_at] = 1.0;
    for layer in layers.iter().rev() {
        match layer.spec.kind {
            LayerKind::MaxPool => {
                let big = 2 * s;
                let rows = c * big * big;
                let cols = c * s * s;
                let mut u = vec![0.0; rows * cols];
                for ci in 0..c {
                    for y in 0..s {
                        for x in 0..s {
                            let r = ci * big * big + 2 * y * big + 2 * x;
                            u[r * cols + ci * s * s + y * s + x] = 1.0;
                        }
                    }
                }
                v = (0..rows).map(|r| (0..cols).map(|j| u[r * cols + j] * v[j]).sum()).collect();
                s = big;
            }
            LayerKind::Conv => {
                let (o, cin, k) = (layer.spec.out_channels, layer.spec.in_channels, layer.spec.kernel);
                let p = (k / 2) as isize;
                let w = layer.weight.data();
                let rows = o * s * s;
                let cols = cin * s * s;
                // forward operator: y[oi, y, x] = sum w[oi, ci, dy + p, dx + p] * x[ci, y + dy, x + dx]
                let mut m = vec![0.0; rows * cols];
                for oi in 0..o {
                    for yy in 0..s as isize {
                        for xx in 0..s as isize {
                            for ci in 0..cin {
                                for dy in -p..=p {
                                    for dx in -p..=p {
                                        let (sy, sx) = (yy + dy, xx + dx);
                                        if sy < 0 || sx < 0 || sy >= s as isize || sx >= s as isize {
                                            continue;
                                        }
                                        let r = oi * s * s + (yy as usize) * s + xx as usize;
                                        let col = ci * s * s + (sy as usize) * s + sx as usize;
                                        m[r * cols + col] += w[((oi * cin + ci) * k + (dy + p) as usize) * k + (dx + p) as usize];
                                    }
                                }
                            }
                        }
                    }
                }
                v = (0..cols)
                    .map(|j| (0..rows).map(|r| m[r * cols + j] * v[r]).sum::<f64>().max(0.0))
                    .collect();
                c = cin;
            }
            _ => {}
        }
    }
    (0..s * s).map(|i| (0..c).map(|ci| v[ci * s * s + i]).sum()).collect()
}
