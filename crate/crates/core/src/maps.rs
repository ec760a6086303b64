//! Fixation maps, saliency maps and salient region maps.
//!
//! The pipeline is `FixationMap --blur--> SaliencyMap --quantize--> SalientRegionMap`.
//! Region maps store integer levels; the gray value used to draw a level is
//! a presentation detail handled by [`to_display`].

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Blur width used when none is given.
pub const DEFAULT_SIGMA: f64 = 19.0;

/// Binary grid of fixated pixels, row-major.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FixationMap {
    width: usize,
    height: usize,
    hits: Vec<bool>,
}

impl FixationMap {
    /// An empty map (no fixations).
    pub fn new(width: usize, height: usize) -> Self {
        FixationMap {
            width,
            height,
            hits: vec![false; width * height],
        }
    }

    pub fn from_hits(width: usize, height: usize, hits: Vec<bool>) -> Result<Self> {
        if hits.len() != width * height {
            return Err(Error::mismatch(width * height, hits.len()));
        }
        Ok(FixationMap { width, height, hits })
    }

    /// Builds a map from `(x, y)` pixel coordinates. Repeated points collapse.
    pub fn from_points(width: usize, height: usize, points: &[(usize, usize)]) -> Result<Self> {
        let mut fm = FixationMap::new(width, height);
        for &(x, y) in points {
            fm.set(x, y)?;
        }
        Ok(fm)
    }

    pub fn set(&mut self, x: usize, y: usize) -> Result<()> {
        if x >= self.width || y >= self.height {
            return Err(Error::invalid(format!(
                "fixation ({x}, {y}) outside {}x{} map",
                self.width, self.height
            )));
        }
        self.hits[y * self.width + x] = true;
        Ok(())
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn hits(&self) -> &[bool] {
        &self.hits
    }

    pub fn is_hit(&self, x: usize, y: usize) -> bool {
        self.hits[y * self.width + x]
    }

    pub fn hit_count(&self) -> usize {
        self.hits.iter().filter(|&&h| h).count()
    }

    /// Row-major indices of fixated pixels, ascending.
    pub fn hit_indices(&self) -> Vec<usize> {
        self.hits
            .iter()
            .enumerate()
            .filter_map(|(i, &h)| h.then_some(i))
            .collect()
    }

    /// Fixated pixels as `(x, y)`, in row-major order.
    pub fn points(&self) -> Vec<(usize, usize)> {
        self.hit_indices()
            .into_iter()
            .map(|i| (i % self.width, i / self.width))
            .collect()
    }
}

/// Continuous saliency in `[0, 255]`, row-major.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SaliencyMap {
    width: usize,
    height: usize,
    values: Vec<f64>,
}

impl SaliencyMap {
    pub fn new(width: usize, height: usize, values: Vec<f64>) -> Result<Self> {
        if values.len() != width * height {
            return Err(Error::mismatch(width * height, values.len()));
        }
        if let Some(v) = values.iter().find(|v| !(0.0..=255.0).contains(*v)) {
            return Err(Error::invalid(format!("saliency value {v} outside [0, 255]")));
        }
        Ok(SaliencyMap { width, height, values })
    }

    pub fn from_u8(width: usize, height: usize, values: &[u8]) -> Result<Self> {
        SaliencyMap::new(width, height, values.iter().map(|&v| f64::from(v)).collect())
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn get(&self, x: usize, y: usize) -> f64 {
        self.values[y * self.width + x]
    }

    /// Rounds every value to the nearest byte (half-up).
    pub fn to_u8(&self) -> Vec<u8> {
        self.values
            .iter()
            .map(|&v| (v + 0.5).floor().clamp(0.0, 255.0) as u8)
            .collect()
    }
}

/// Per-pixel saliency level in `0..num_levels`, row-major.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SalientRegionMap {
    width: usize,
    height: usize,
    num_levels: usize,
    levels: Vec<usize>,
}

impl SalientRegionMap {
    pub fn new(width: usize, height: usize, num_levels: usize, levels: Vec<usize>) -> Result<Self> {
        check_levels(num_levels)?;
        if levels.len() != width * height {
            return Err(Error::mismatch(width * height, levels.len()));
        }
        if let Some(l) = levels.iter().find(|&&l| l >= num_levels) {
            return Err(Error::invalid(format!("level {l} not below K = {num_levels}")));
        }
        Ok(SalientRegionMap {
            width,
            height,
            num_levels,
            levels,
        })
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn num_levels(&self) -> usize {
        self.num_levels
    }

    pub fn levels(&self) -> &[usize] {
        &self.levels
    }

    pub fn get(&self, x: usize, y: usize) -> usize {
        self.levels[y * self.width + x]
    }

    /// Gray value of `level`: `round(level * 255 / (K - 1))`, ties rounded up.
    pub fn display_value(&self, level: usize) -> u8 {
        display_value(level, self.num_levels)
    }

    /// Recovers a region map from its display rendition by matching each
    /// byte against the exact gray value of every level.
    pub fn from_display(width: usize, height: usize, num_levels: usize, pixels: &[u8]) -> Result<Self> {
        check_levels(num_levels)?;
        let table: Vec<u8> = (0..num_levels).map(|l| display_value(l, num_levels)).collect();
        let levels = pixels
            .iter()
            .map(|p| {
                table.iter().position(|t| t == p).ok_or_else(|| {
                    Error::format("region map", format!("gray value {p} is not a level of K = {num_levels}"))
                })
            })
            .collect::<Result<Vec<_>>>()?;
        SalientRegionMap::new(width, height, num_levels, levels)
    }
}

fn check_levels(k: usize) -> Result<()> {
    if k < 2 {
        return Err(Error::invalid(format!("number of levels must be at least 2, got {k}")));
    }
    Ok(())
}

fn display_value(level: usize, k: usize) -> u8 {
    let v = (level * 255) as f64 / (k - 1) as f64;
    (v + 0.5).floor() as u8
}

/// Normalized 1-D Gaussian taps for offsets `-r..=r`, `r = ceil(3 sigma)`.
pub(crate) fn gaussian_taps(sigma: f64) -> Vec<f64> {
    let r = (3.0 * sigma).ceil() as i64;
    let mut taps: Vec<f64> = (-r..=r)
        .map(|d| (-((d * d) as f64) / (2.0 * sigma * sigma)).exp())
        .collect();
    let sum: f64 = taps.iter().sum();
    taps.iter_mut().for_each(|t| *t /= sum);
    taps
}

/// Blurs the fixation hits with a truncated Gaussian and stretches the result
/// so that its maximum is exactly 255. Pixels outside the map count as zero.
pub fn saliency_from_fixations(fm: &FixationMap, sigma: f64) -> Result<SaliencyMap> {
    if !(sigma > 0.0 && sigma.is_finite()) {
        return Err(Error::invalid(format!("sigma must be positive, got {sigma}")));
    }
    if fm.hit_count() == 0 {
        return Err(Error::EmptyFixationMap);
    }
    let (w, h) = (fm.width, fm.height);
    let taps = gaussian_taps(sigma);
    let r = (taps.len() / 2) as isize;

    let src: Vec<f64> = fm.hits.iter().map(|&b| if b { 255.0 } else { 0.0 }).collect();
    // separable: rows, then columns
    let mut tmp = vec![0.0; w * h];
    for y in 0..h {
        for x in 0..w {
            let mut acc = 0.0;
            for (t, &k) in taps.iter().enumerate() {
                let sx = x as isize + t as isize - r;
                if sx >= 0 && (sx as usize) < w {
                    acc += k * src[y * w + sx as usize];
                }
            }
            tmp[y * w + x] = acc;
        }
    }
    let mut out = vec![0.0; w * h];
    for y in 0..h {
        for x in 0..w {
            let mut acc = 0.0;
            for (t, &k) in taps.iter().enumerate() {
                let sy = y as isize + t as isize - r;
                if sy >= 0 && (sy as usize) < h {
                    acc += k * tmp[sy as usize * w + x];
                }
            }
            out[y * w + x] = acc;
        }
    }

    let max = out.iter().cloned().fold(0.0, f64::max);
    out.iter_mut().for_each(|v| *v = (*v / max) * 255.0);
    SaliencyMap::new(w, h, out)
}

/// Level of a single saliency value: `min(floor(s * k / 255), k - 1)`.
pub fn level_of(s: f64, k: usize) -> usize {
    let l = (s * k as f64 / 255.0).floor();
    if l <= 0.0 {
        0
    } else {
        (l as usize).min(k - 1)
    }
}

/// Splits `[0, 255]` into `k` equal bins and assigns every pixel its bin.
pub fn quantize(sm: &SaliencyMap, k: usize) -> Result<SalientRegionMap> {
    check_levels(k)?;
    let levels = sm.values.iter().map(|&s| level_of(s, k)).collect();
    SalientRegionMap::new(sm.width, sm.height, k, levels)
}

/// Zeroes every pixel of `quantized` that the binary map marks as non-salient.
pub fn restrict(quantized: &SalientRegionMap, binary: &SalientRegionMap) -> Result<SalientRegionMap> {
    if binary.num_levels != 2 {
        return Err(Error::invalid(format!(
            "restriction map must have 2 levels, got {}",
            binary.num_levels
        )));
    }
    if (quantized.width, quantized.height) != (binary.width, binary.height) {
        return Err(Error::mismatch(
            format!("{}x{}", quantized.width, quantized.height),
            format!("{}x{}", binary.width, binary.height),
        ));
    }
    let levels = quantized
        .levels
        .iter()
        .zip(&binary.levels)
        .map(|(&q, &b)| if b == 0 { 0 } else { q })
        .collect();
    SalientRegionMap::new(quantized.width, quantized.height, quantized.num_levels, levels)
}

/// Gray rendition of a region map: level `l` becomes `round(l * 255 / (K - 1))`.
pub fn to_display(srm: &SalientRegionMap) -> SaliencyMap {
    let values = srm
        .levels
        .iter()
        .map(|&l| f64::from(srm.display_value(l)))
        .collect();
    SaliencyMap {
        width: srm.width,
        height: srm.height,
        values,
    }
}
