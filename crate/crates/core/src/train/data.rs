use std::fs;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::io::{self, GrayImage};
use crate::maps::{quantize, saliency_from_fixations, FixationMap, SaliencyMap, SalientRegionMap};
use crate::net::Tensor;

/// One image with its three ground truths.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainingSample {
    pub name: String,
    /// `[1, 1, H, W]`, values in `[0, 1]`.
    pub input: Tensor,
    pub gt_region: SalientRegionMap,
    pub gt_saliency: SaliencyMap,
    pub fixations: FixationMap,
}

impl TrainingSample {
    pub fn new(name: impl Into<String>, image: &GrayImage, fixations: FixationMap, gt_saliency: SaliencyMap, num_levels: usize) -> Result<Self> {
        let dims = (image.width, image.height);
        if dims != (fixations.width(), fixations.height()) || dims != (gt_saliency.width(), gt_saliency.height()) {
            return Err(Error::mismatch(
                format!("{}x{} for image, fixations and saliency", image.width, image.height),
                format!(
                    "{}x{} fixations, {}x{} saliency",
                    fixations.width(),
                    fixations.height(),
                    gt_saliency.width(),
                    gt_saliency.height()
                ),
            ));
        }
        let input = Tensor::from_vec(&[1, 1, image.height, image.width], image.to_unit())?;
        let gt_region = quantize(&gt_saliency, num_levels)?;
        Ok(TrainingSample {
            name: name.into(),
            input,
            gt_region,
            gt_saliency,
            fixations,
        })
    }

    pub fn width(&self) -> usize {
        self.gt_region.width()
    }

    pub fn height(&self) -> usize {
        self.gt_region.height()
    }

    /// The input rounded to bytes.
    pub fn image(&self) -> GrayImage {
        let px = self
            .input
            .data()
            .iter()
            .map(|v| (v * 255.0 + 0.5).floor().clamp(0.0, 255.0) as u8)
            .collect();
        GrayImage::new(self.width(), self.height(), px).expect("shape matches")
    }
}

/// Peak brightness each blob adds to the input.
pub const BLOB_AMPLITUDE: f64 = 0.8;
/// Upper end of the background noise.
pub const NOISE_LEVEL: f64 = 0.05;

/// Saliency blur used for synthetic data of side `size`.
pub fn synthetic_sigma(size: usize) -> f64 {
    size as f64 / 6.0
}

/// Bright Gaussian blobs of amplitude [`BLOB_AMPLITUDE`] on faint uniform
/// noise, one fixation at each blob centre.
///
/// Blob centres keep at least `3 * sigma` apart so that every blob reaches
/// the top saliency level.
pub fn synthesize_dataset(n: usize, size: usize, num_levels: usize, seed: u64) -> Result<Vec<TrainingSample>> {
    if n == 0 {
        return Err(Error::invalid("need at least one sample"));
    }
    if size < 16 {
        return Err(Error::invalid(format!("synthetic images must be at least 16 px, got {size}")));
    }
    let sigma = synthetic_sigma(size);
    let margin = (sigma.ceil() as usize).max(2);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n)
        .map(|i| {
            let blobs = rng.random_range(1..=3usize);
            let mut centres: Vec<(usize, usize)> = Vec::new();
            for _ in 0..200 {
                if centres.len() == blobs {
                    break;
                }
                let c = (rng.random_range(margin..size - margin), rng.random_range(margin..size - margin));
                let far = centres.iter().all(|&(x, y)| {
                    let (dx, dy) = (x as f64 - c.0 as f64, y as f64 - c.1 as f64);
                    (dx * dx + dy * dy).sqrt() >= 3.0 * sigma
                });
                if far {
                    centres.push(c);
                }
            }
            let mut pixels = Vec::with_capacity(size * size);
            for y in 0..size {
                for x in 0..size {
                    let mut v: f64 = rng.random_range(0.0..NOISE_LEVEL);
                    for &(cx, cy) in &centres {
                        let d2 = (x as f64 - cx as f64).powi(2) + (y as f64 - cy as f64).powi(2);
                        v += BLOB_AMPLITUDE * (-d2 / (2.0 * sigma * sigma)).exp();
                    }
                    pixels.push(v.min(1.0));
                }
            }
            let fixations = FixationMap::from_points(size, size, &centres)?;
            let gt_saliency = saliency_from_fixations(&fixations, sigma)?;
            let gt_region = quantize(&gt_saliency, num_levels)?;
            Ok(TrainingSample {
                name: format!("synth_{i:04}"),
                input: Tensor::from_vec(&[1, 1, size, size], pixels)?,
                gt_region,
                gt_saliency,
                fixations,
            })
        })
        .collect()
}

/// Writes `<stem>.pgm`, `<stem>.fix.csv` and `<stem>.sal.pgm` per sample.
pub fn save_dataset(dir: &Path, samples: &[TrainingSample]) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    for s in samples {
        io::write_gray(&dir.join(format!("{}.pgm", s.name)), &s.image())?;
        io::write_fixations(&dir.join(format!("{}.fix.csv", s.name)), &s.fixations)?;
        io::write_gray(&dir.join(format!("{}.sal.pgm", s.name)), &GrayImage::from(&s.gt_saliency))?;
    }
    Ok(())
}

/// Stems of every `<stem>.pgm` image in `dir` (saliency maps excluded), sorted.
pub fn dataset_stems(dir: &Path) -> Result<Vec<String>> {
    let mut stems: Vec<String> = fs::read_dir(dir)
        .map_err(|e| Error::io(dir, e))?
        .filter_map(|e| e.ok())
        .filter_map(|e| e.file_name().into_string().ok())
        .filter(|n| n.ends_with(".pgm") && !n.ends_with(".sal.pgm"))
        .map(|n| n.trim_end_matches(".pgm").to_string())
        .collect();
    stems.sort();
    Ok(stems)
}

/// Loads a dataset directory. A missing `<stem>.sal.pgm` is rebuilt by
/// blurring the fixations with `sigma`.
pub fn load_dataset(dir: &Path, num_levels: usize, sigma: f64) -> Result<Vec<TrainingSample>> {
    dataset_stems(dir)?
        .into_iter()
        .map(|stem| {
            let image = io::read_gray(&dir.join(format!("{stem}.pgm")))?;
            let fixations = io::read_fixations(&dir.join(format!("{stem}.fix.csv")), image.width, image.height)?;
            let sal_path = dir.join(format!("{stem}.sal.pgm"));
            let saliency = if sal_path.exists() {
                io::read_gray(&sal_path)?.to_saliency()
            } else {
                saliency_from_fixations(&fixations, sigma)?
            };
            TrainingSample::new(stem, &image, fixations, saliency, num_levels)
        })
        .collect()
}
