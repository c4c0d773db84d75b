//! Per-face vectors: built-in photographic-cue features computed from pixels,
//! or externally computed descriptors ingested from FSPE1 files.

mod augment;
pub mod color;
mod embeddings;
mod image_io;

use image::RgbImage;
use serde::{Deserialize, Serialize};

use crate::dataset::BBox;
use crate::error::{Error, Result};

pub use augment::{augment_views, canonical_view, AugmentConfig, AugmentMode};
pub use color::{lab_to_rgb, rgb_to_lab};
pub use embeddings::{format_embeddings, load_embeddings, parse_embeddings, save_embeddings, EmbeddingMap};
pub use image_io::{decode_bytes, decode_image, encode_png, encode_ppm, write_image, ImageKind};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum VectorSource {
    CueFeatures,
    External,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FaceVector {
    pub face_id: String,
    pub values: Vec<f64>,
    pub source: VectorSource,
}

impl FaceVector {
    pub fn new(face_id: impl Into<String>, values: Vec<f64>, source: VectorSource) -> Self {
        FaceVector {
            face_id: face_id.into(),
            values,
            source,
        }
    }

    pub fn dim(&self) -> usize {
        self.values.len()
    }
}

/// Fractional bbox growth applied before cropping.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CropExpansion {
    pub scale_set: Vec<f64>,
}

impl Default for CropExpansion {
    fn default() -> Self {
        CropExpansion {
            scale_set: vec![0.0, 0.15],
        }
    }
}

impl CropExpansion {
    pub fn validate(&self) -> Result<()> {
        match self.scale_set.iter().find(|s| !s.is_finite() || **s < 0.0) {
            Some(s) => Err(Error::validation(format!("crop expansion {s} must be >= 0"))),
            None => Ok(()),
        }
    }
}

/// Grows `bbox` by `expansion * w` horizontally and `expansion * h`
/// vertically about its center. Returns `(x, y, w, h)` before clamping; the
/// origin may be negative.
pub fn expand_bbox(bbox: BBox, expansion: f64) -> (i64, i64, u32, u32) {
    let grow = |origin: u32, size: u32| {
        let grown = (f64::from(size) * (1.0 + expansion)).round();
        let start = (f64::from(origin) + f64::from(size) / 2.0 - grown / 2.0).floor();
        (start as i64, grown as u32)
    };
    let (x, w) = grow(bbox.x, bbox.w);
    let (y, h) = grow(bbox.y, bbox.h);
    (x, y, w, h)
}

/// Extracts the expanded face region, clamped to the image bounds.
pub fn crop_face(img: &RgbImage, bbox: BBox, expansion: f64) -> RgbImage {
    let (x, y, w, h) = expand_bbox(bbox, expansion);
    let clamp_axis = |start: i64, len: u32, limit: u32| {
        let limit = i64::from(limit);
        let lo = start.clamp(0, limit - 1);
        let hi = (start + i64::from(len)).clamp(lo + 1, limit);
        (lo as u32, (hi - lo) as u32)
    };
    let (x0, cw) = clamp_axis(x, w, img.width());
    let (y0, ch) = clamp_axis(y, h, img.height());
    image::imageops::crop_imm(img, x0, y0, cw, ch).to_image()
}

pub const HIST_BINS: usize = 8;
pub const CHROMA_RANGE: (f64, f64) = (-60.0, 60.0);
pub const LIGHTNESS_RANGE: (f64, f64) = (0.0, 100.0);
pub const CUE_DIM: usize = 6 + 3 * HIST_BINS + 2;

/// Positions of the cue-feature components.
pub mod layout {
    use super::HIST_BINS;
    use std::ops::Range;

    pub const MEAN_L: usize = 0;
    pub const MEAN_A: usize = 1;
    pub const MEAN_B: usize = 2;
    pub const STD_L: usize = 3;
    pub const STD_A: usize = 4;
    pub const STD_B: usize = 5;
    pub const HIST_A: Range<usize> = 6..6 + HIST_BINS;
    pub const HIST_B: Range<usize> = 6 + HIST_BINS..6 + 2 * HIST_BINS;
    pub const HIST_L: Range<usize> = 6 + 2 * HIST_BINS..6 + 3 * HIST_BINS;
    pub const LAPLACIAN: usize = 6 + 3 * HIST_BINS;
    pub const LOG2_PIXELS: usize = LAPLACIAN + 1;

    /// The a* and b* means: the chrominance-only baseline.
    pub const CHROMA_MEANS: [usize; 2] = [MEAN_A, MEAN_B];
}

fn histogram_bin(v: f64, (lo, hi): (f64, f64)) -> usize {
    let t = ((v - lo) / (hi - lo) * HIST_BINS as f64).floor();
    t.clamp(0.0, (HIST_BINS - 1) as f64) as usize
}

/// Photographic-cue vector of a crop, in this order:
///
/// | index  | component                                  |
/// |--------|--------------------------------------------|
/// | 0..3   | mean L*, a*, b*                            |
/// | 3..6   | standard deviation of L*, a*, b*           |
/// | 6..14  | a* histogram, 8 bins over [-60, 60]        |
/// | 14..22 | b* histogram, 8 bins over [-60, 60]        |
/// | 22..30 | L* histogram, 8 bins over [0, 100]         |
/// | 30     | mean absolute 4-neighbour Laplacian of L*  |
/// | 31     | log2 of the pixel count                    |
///
/// Histograms hold bin fractions; values outside a range land in the end bin.
pub fn cue_features(crop: &RgbImage) -> Vec<f64> {
    let (w, h) = crop.dimensions();
    let n = (w as usize) * (h as usize);
    assert!(n > 0, "cue features need a non-empty crop");
    let lab: Vec<[f64; 3]> = crop.pixels().map(|p| rgb_to_lab(p.0)).collect();

    let mut out = vec![0.0; CUE_DIM];
    let mut sum = [0.0; 3];
    for px in &lab {
        for c in 0..3 {
            sum[c] += px[c];
        }
    }
    let mean = sum.map(|s| s / n as f64);
    let mut sq = [0.0; 3];
    let inv = 1.0 / n as f64;
    for px in &lab {
        for c in 0..3 {
            let d = px[c] - mean[c];
            sq[c] += d * d;
        }
        out[layout::HIST_A.start + histogram_bin(px[1], CHROMA_RANGE)] += inv;
        out[layout::HIST_B.start + histogram_bin(px[2], CHROMA_RANGE)] += inv;
        out[layout::HIST_L.start + histogram_bin(px[0], LIGHTNESS_RANGE)] += inv;
    }
    out[..3].copy_from_slice(&mean);
    for c in 0..3 {
        out[layout::STD_L + c] = (sq[c] / n as f64).sqrt();
    }

    if w >= 3 && h >= 3 {
        let (w, h) = (w as usize, h as usize);
        let l = |x: usize, y: usize| lab[y * w + x][0];
        let mut acc = 0.0;
        for y in 1..h - 1 {
            for x in 1..w - 1 {
                acc += (4.0 * l(x, y) - l(x - 1, y) - l(x + 1, y) - l(x, y - 1) - l(x, y + 1)).abs();
            }
        }
        out[layout::LAPLACIAN] = acc / ((w - 2) * (h - 2)) as f64;
    }
    out[layout::LOG2_PIXELS] = (n as f64).log2();
    out
}

/// Keeps only the listed components of each vector.
pub fn select_dims(values: &[f64], dims: &[usize]) -> Vec<f64> {
    dims.iter().map(|&d| values[d]).collect()
}

/// How a trained scorer expects its per-face vectors to be produced.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureSpec {
    pub source: VectorSource,
    #[serde(default)]
    pub augment: AugmentConfig,
    /// Crop expansion used for the training vectors.
    #[serde(default)]
    pub expansion: f64,
    /// Cue components kept, in order; `None` keeps all of them.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub dims: Option<Vec<usize>>,
}

impl FeatureSpec {
    pub fn cue(augment: AugmentConfig) -> Self {
        FeatureSpec {
            source: VectorSource::CueFeatures,
            augment,
            expansion: 0.0,
            dims: None,
        }
    }

    pub fn external() -> Self {
        FeatureSpec {
            source: VectorSource::External,
            augment: AugmentConfig::default(),
            expansion: 0.0,
            dims: None,
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.augment.validate()?;
        if let Some(bad) = self.dims.iter().flatten().find(|d| **d >= CUE_DIM) {
            return Err(Error::validation(format!(
                "cue component {bad} is out of range 0..{CUE_DIM}"
            )));
        }
        if self.dims.as_ref().is_some_and(|d| d.is_empty()) {
            return Err(Error::validation("cue component selection is empty"));
        }
        Ok(())
    }

    /// Length of the vectors this spec produces in cue mode.
    pub fn cue_dim(&self) -> usize {
        self.dims.as_ref().map_or(CUE_DIM, Vec::len)
    }

    fn project(&self, values: Vec<f64>) -> Vec<f64> {
        match &self.dims {
            Some(d) => select_dims(&values, d),
            None => values,
        }
    }

    /// Cue vector of the canonical view of one face crop.
    pub fn face_vector(&self, img: &RgbImage, bbox: BBox, expansion: f64) -> Result<Vec<f64>> {
        let crop = crop_face(img, bbox, expansion);
        Ok(self.project(cue_features(&canonical_view(&crop, &self.augment)?)))
    }

    /// Cue vectors of every test-time view of one face crop, in view order.
    pub fn tta_vectors(&self, img: &RgbImage, bbox: BBox, expansion: f64) -> Result<Vec<Vec<f64>>> {
        let crop = crop_face(img, bbox, expansion);
        Ok(augment_views(&crop, &self.augment, AugmentMode::Tta)?
            .iter()
            .map(|v| self.project(cue_features(v)))
            .collect())
    }
}
