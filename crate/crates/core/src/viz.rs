//! Receptive fields of encoder neurons.
//!
//! A single unit is switched on in a pooled feature map and pushed back to
//! the input: each pool is undone by placing values at the top-left of their
//! 2x2 window, each convolution by its transpose (no bias), and the result of
//! every transposed convolution is rectified. No input image is involved.

use std::path::{Path, PathBuf};

use crate::error::{Error, Result};
use crate::io::{self, GrayImage};
use crate::net::ops::{conv_transpose, unpool_forward};
use crate::net::{LayerKind, Network, PoolIndices, Tensor};

#[derive(Debug, Clone, PartialEq)]
pub struct ReceptiveField {
    /// Channel of the seeded neuron.
    pub neuron_id: usize,
    pub width: usize,
    pub height: usize,
    /// Pre-normalization field, row-major.
    pub raw: Vec<f64>,
}

impl ReceptiveField {
    /// Min-max rescaled to `[0, 255]`; a constant field maps to zeros.
    pub fn normalized(&self) -> Vec<f64> {
        let lo = self.raw.iter().copied().fold(f64::INFINITY, f64::min);
        let hi = self.raw.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        if !(hi > lo) {
            return vec![0.0; self.raw.len()];
        }
        self.raw.iter().map(|v| (v - lo) / (hi - lo) * 255.0).collect()
    }

    pub fn to_image(&self) -> GrayImage {
        let px = self
            .normalized()
            .iter()
            .map(|v| (v + 0.5).floor().clamp(0.0, 255.0) as u8)
            .collect();
        GrayImage::new(self.width, self.height, px).expect("shape matches")
    }
}

/// Index of the max pool closing encoder stage `stage` (1-based).
pub fn stage_layer(net: &Network, stage: usize) -> Result<usize> {
    let stages = net.encoder_stages();
    if stage == 0 || stage > stages {
        return Err(Error::invalid(format!("encoder stage {stage} out of range 1..={stages}")));
    }
    net.layers()
        .iter()
        .enumerate()
        .filter(|(_, l)| l.spec.kind == LayerKind::MaxPool)
        .nth(stage - 1)
        .map(|(i, _)| i)
        .ok_or_else(|| Error::invalid(format!("no max pool for stage {stage}")))
}

fn check_prefix(net: &Network, top: usize) -> Result<()> {
    let layers = net.layers();
    if top >= layers.len() {
        return Err(Error::invalid(format!("layer {top} out of range (network has {})", layers.len())));
    }
    for (i, l) in layers[..=top].iter().enumerate() {
        if !matches!(l.spec.kind, LayerKind::Conv | LayerKind::Relu | LayerKind::MaxPool) {
            return Err(Error::invalid(format!("layer {i} ({:?}) is not part of the encoder", l.spec.kind)));
        }
    }
    Ok(())
}

/// Largest offset from the seed's anchor that the reverse pass through
/// layers `0..=top` can reach, in input pixels.
pub fn field_radius(net: &Network, top: usize) -> Result<usize> {
    check_prefix(net, top)?;
    let mut r = 0;
    for l in net.layers()[..=top].iter().rev() {
        match l.spec.kind {
            LayerKind::Conv => r += l.spec.kernel / 2,
            LayerKind::MaxPool => r *= 2,
            _ => {}
        }
    }
    Ok(r)
}

/// Receptive field of channel `channel` at the output of layer `top`.
///
/// The seed sits at the centre of a map just large enough that the field is
/// never clipped; the anchor `(c, c)` in input pixels is returned alongside.
pub fn reverse_field(net: &Network, top: usize, channel: usize) -> Result<(ReceptiveField, usize)> {
    let radius = field_radius(net, top)?;
    let layers = &net.layers()[..=top];
    let width = layers[top].spec.out_channels;
    if channel >= width {
        return Err(Error::invalid(format!("channel {channel} out of range (layer has {width})")));
    }
    let pools = layers.iter().filter(|l| l.spec.kind == LayerKind::MaxPool).count();
    let scale = 1usize << pools;
    let m = radius.div_ceil(scale);
    let side = 2 * m + 1;

    let mut cur = Tensor::zeros(&[1, width, side, side]);
    cur.plane_mut(0, channel)[m * side + m] = 1.0;
    for l in layers.iter().rev() {
        cur = match l.spec.kind {
            LayerKind::MaxPool => {
                let (_, c, h, w) = cur.dims4()?;
                let idx = PoolIndices::new([1, c, 2 * h, 2 * w], vec![0; c * h * w])?;
                unpool_forward(&cur, &idx)?
            }
            LayerKind::Conv => conv_transpose(&cur, &l.weight)?.map(|v| v.max(0.0)),
            _ => cur,
        };
    }
    let (_, c, h, w) = cur.dims4()?;
    // a multi-channel input is summed into one picture
    let mut raw = vec![0.0; h * w];
    for ci in 0..c {
        for (a, b) in raw.iter_mut().zip(cur.plane(0, ci)) {
            *a += b;
        }
    }
    Ok((
        ReceptiveField {
            neuron_id: channel,
            width: w,
            height: h,
            raw,
        },
        m * scale,
    ))
}

/// Receptive field of channel `channel` after encoder stage `stage` (1-based).
pub fn visualize_neuron(net: &Network, stage: usize, channel: usize) -> Result<ReceptiveField> {
    Ok(reverse_field(net, stage_layer(net, stage)?, channel)?.0)
}

/// Tiles the fields of the first `first_n` channels of `stage` row by row into
/// a grid of `ceil(sqrt(n))` columns with 1-pixel white separators.
pub fn visualize_grid(net: &Network, stage: usize, first_n: usize) -> Result<GrayImage> {
    let top = stage_layer(net, stage)?;
    let width = net.layers()[top].spec.out_channels;
    if first_n == 0 || first_n > width {
        return Err(Error::invalid(format!("first_n must lie in 1..={width}, got {first_n}")));
    }
    let cols = (1..=first_n).find(|c| c * c >= first_n).expect("n is a bound");
    let rows = first_n.div_ceil(cols);
    let tiles = (0..first_n)
        .map(|ch| reverse_field(net, top, ch).map(|(f, _)| f.to_image()))
        .collect::<Result<Vec<_>>>()?;
    let (tw, th) = (tiles[0].width, tiles[0].height);
    let gw = cols * tw + cols - 1;
    let gh = rows * th + rows - 1;
    let mut px = vec![255u8; gw * gh];
    for r in 0..rows {
        for c in 0..cols {
            let i = r * cols + c;
            for y in 0..th {
                let row = &mut px[(r * (th + 1) + y) * gw + c * (tw + 1)..][..tw];
                match tiles.get(i) {
                    Some(t) => row.copy_from_slice(&t.pixels[y * tw..(y + 1) * tw]),
                    None => row.fill(0),
                }
            }
        }
    }
    GrayImage::new(gw, gh, px)
}

pub fn grid_filename(stage: usize, first_n: usize) -> String {
    format!("rf_layer{stage}_n{first_n}.pgm")
}

/// Writes the grid to `dir/rf_layer<L>_n<N>.pgm` and returns the path.
pub fn export_grid(net: &Network, stage: usize, first_n: usize, dir: &Path) -> Result<PathBuf> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let path = dir.join(grid_filename(stage, first_n));
    io::write_gray(&path, &visualize_grid(net, stage, first_n)?)?;
    Ok(path)
}
