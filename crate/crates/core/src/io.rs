//! On-disk formats.
//!
//! * gray images: binary PGM (`P5`, maxval 255) and 8-bit PNG; PGM is what
//!   every command writes by default
//! * fixations: CSV with header `x,y`, 0-based integer pixel coordinates
//! * region maps: PGM of display values plus a `<stem>.json` sidecar
//!   holding `{"num_levels": K}`

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::maps::{to_display, FixationMap, SaliencyMap, SalientRegionMap};

/// An 8-bit grayscale raster.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct GrayImage {
    pub width: usize,
    pub height: usize,
    pub pixels: Vec<u8>,
}

impl GrayImage {
    pub fn new(width: usize, height: usize, pixels: Vec<u8>) -> Result<Self> {
        if pixels.len() != width * height {
            return Err(Error::mismatch(width * height, pixels.len()));
        }
        Ok(GrayImage { width, height, pixels })
    }

    pub fn to_saliency(&self) -> SaliencyMap {
        SaliencyMap::from_u8(self.width, self.height, &self.pixels).expect("bytes are in range")
    }

    /// Pixels scaled to `[0, 1]`.
    pub fn to_unit(&self) -> Vec<f64> {
        self.pixels.iter().map(|&p| f64::from(p) / 255.0).collect()
    }
}

impl From<&SaliencyMap> for GrayImage {
    fn from(sm: &SaliencyMap) -> Self {
        GrayImage {
            width: sm.width(),
            height: sm.height(),
            pixels: sm.to_u8(),
        }
    }
}

pub fn encode_pgm(img: &GrayImage) -> Vec<u8> {
    let mut out = format!("P5\n{} {}\n255\n", img.width, img.height).into_bytes();
    out.extend_from_slice(&img.pixels);
    out
}

pub fn decode_pgm(bytes: &[u8]) -> Result<GrayImage> {
    let mut pos = 0;
    let mut fields = Vec::with_capacity(4);
    while fields.len() < 4 {
        // whitespace and comments between header fields
        while pos < bytes.len() {
            match bytes[pos] {
                b'#' => {
                    while pos < bytes.len() && bytes[pos] != b'\n' {
                        pos += 1;
                    }
                }
                c if c.is_ascii_whitespace() => pos += 1,
                _ => break,
            }
        }
        let start = pos;
        while pos < bytes.len() && !bytes[pos].is_ascii_whitespace() && bytes[pos] != b'#' {
            pos += 1;
        }
        if start == pos {
            return Err(Error::format("PGM", "truncated header"));
        }
        fields.push(std::str::from_utf8(&bytes[start..pos]).unwrap_or("").to_string());
    }
    if fields[0] != "P5" {
        return Err(Error::format("PGM", format!("unsupported magic {:?}", fields[0])));
    }
    let parse = |s: &str, what: &str| {
        s.parse::<usize>()
            .map_err(|_| Error::format("PGM", format!("bad {what} {s:?}")))
    };
    let width = parse(&fields[1], "width")?;
    let height = parse(&fields[2], "height")?;
    let maxval = parse(&fields[3], "maxval")?;
    if maxval != 255 {
        return Err(Error::format("PGM", format!("only maxval 255 is supported, got {maxval}")));
    }
    // exactly one whitespace byte separates the header from the raster
    pos += 1;
    let n = width * height;
    if bytes.len() < pos + n {
        return Err(Error::format("PGM", "truncated raster"));
    }
    GrayImage::new(width, height, bytes[pos..pos + n].to_vec())
}

fn is_png(path: &Path) -> bool {
    path.extension()
        .and_then(|e| e.to_str())
        .is_some_and(|e| e.eq_ignore_ascii_case("png"))
}

/// Reads a PGM, or a PNG when the extension says so (converted to luma).
pub fn read_gray(path: &Path) -> Result<GrayImage> {
    if is_png(path) {
        let img = image::open(path)?.into_luma8();
        let (w, h) = img.dimensions();
        return GrayImage::new(w as usize, h as usize, img.into_raw());
    }
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_pgm(&bytes)
}

/// Writes a PGM, or a PNG when the extension says so.
pub fn write_gray(path: &Path, img: &GrayImage) -> Result<()> {
    if is_png(path) {
        image::save_buffer(
            path,
            &img.pixels,
            img.width as u32,
            img.height as u32,
            image::ExtendedColorType::L8,
        )?;
        return Ok(());
    }
    fs::write(path, encode_pgm(img)).map_err(|e| Error::io(path, e))
}

#[derive(Debug, Serialize, Deserialize)]
struct FixationRow {
    x: usize,
    y: usize,
}

pub fn read_fixations(path: &Path, width: usize, height: usize) -> Result<FixationMap> {
    let mut reader = csv::Reader::from_path(path)
        .map_err(|e| Error::format("fixation CSV", format!("{}: {e}", path.display())))?;
    let headers = reader
        .headers()
        .map_err(|e| Error::format("fixation CSV", e.to_string()))?;
    if headers.len() != 2 || &headers[0] != "x" || &headers[1] != "y" {
        return Err(Error::format("fixation CSV", "header must be `x,y`"));
    }
    let mut fm = FixationMap::new(width, height);
    for row in reader.deserialize() {
        let row: FixationRow = row.map_err(|e| Error::format("fixation CSV", e.to_string()))?;
        fm.set(row.x, row.y)?;
    }
    Ok(fm)
}

pub fn write_fixations(path: &Path, fm: &FixationMap) -> Result<()> {
    let mut w = csv::Writer::from_path(path)
        .map_err(|e| Error::format("fixation CSV", format!("{}: {e}", path.display())))?;
    for (x, y) in fm.points() {
        w.serialize(FixationRow { x, y })
            .map_err(|e| Error::format("fixation CSV", e.to_string()))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct RegionSidecar {
    pub num_levels: usize,
}

/// `maps/foo.pgm` -> `maps/foo.json`.
pub fn sidecar_path(image_path: &Path) -> PathBuf {
    image_path.with_extension("json")
}

pub fn write_region_map(path: &Path, srm: &SalientRegionMap) -> Result<()> {
    write_gray(path, &GrayImage::from(&to_display(srm)))?;
    let side = sidecar_path(path);
    let json = serde_json::to_string(&RegionSidecar {
        num_levels: srm.num_levels(),
    })?;
    fs::write(&side, json).map_err(|e| Error::io(side, e))
}

pub fn read_region_map(path: &Path) -> Result<SalientRegionMap> {
    let img = read_gray(path)?;
    let side = sidecar_path(path);
    let text = fs::read_to_string(&side).map_err(|e| Error::io(&side, e))?;
    let meta: RegionSidecar = serde_json::from_str(&text)?;
    SalientRegionMap::from_display(img.width, img.height, meta.num_levels, &img.pixels)
}

/// Number of levels recorded next to `path`, if a sidecar exists.
pub fn read_sidecar(path: &Path) -> Result<Option<RegionSidecar>> {
    let side = sidecar_path(path);
    if !side.exists() {
        return Ok(None);
    }
    let text = fs::read_to_string(&side).map_err(|e| Error::io(&side, e))?;
    Ok(Some(serde_json::from_str(&text)?))
}
