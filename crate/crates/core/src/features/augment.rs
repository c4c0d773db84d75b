//! Resize/crop/flip view generation for training and test-time augmentation.

use image::imageops::{self, FilterType};
use image::RgbImage;
use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct AugmentConfig {
    pub resize_px: u32,
    pub crop_px: u32,
    pub tta_views: usize,
}

impl Default for AugmentConfig {
    fn default() -> Self {
        AugmentConfig {
            resize_px: 256,
            crop_px: 224,
            tta_views: 10,
        }
    }
}

impl AugmentConfig {
    pub fn validate(&self) -> Result<()> {
        if self.crop_px == 0 || self.crop_px > self.resize_px {
            return Err(Error::validation(format!(
                "crop_px {} must be in 1..={}",
                self.crop_px, self.resize_px
            )));
        }
        if self.tta_views == 0 || !self.tta_views.is_multiple_of(2) {
            return Err(Error::validation(format!(
                "tta_views must be a positive even number, got {}",
                self.tta_views
            )));
        }
        Ok(())
    }

    /// Top-left corners of the canonical crops: center, then the four corners.
    fn canonical_offsets(&self) -> [(u32, u32); 5] {
        let m = self.resize_px - self.crop_px;
        [(m / 2, m / 2), (0, 0), (m, 0), (0, m), (m, m)]
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AugmentMode {
    /// One view with a random crop offset and a random horizontal flip.
    TrainRandom(u64),
    /// `tta_views` deterministic views.
    Tta,
}

fn resized(crop: &RgbImage, cfg: &AugmentConfig) -> RgbImage {
    if crop.dimensions() == (cfg.resize_px, cfg.resize_px) {
        crop.clone()
    } else {
        imageops::resize(crop, cfg.resize_px, cfg.resize_px, FilterType::Triangle)
    }
}

fn view(base: &RgbImage, cfg: &AugmentConfig, (x, y): (u32, u32), flip: bool) -> RgbImage {
    let cut = imageops::crop_imm(base, x, y, cfg.crop_px, cfg.crop_px).to_image();
    if flip {
        imageops::flip_horizontal(&cut)
    } else {
        cut
    }
}

/// Training mode yields one random view; TTA mode yields `tta_views` views
/// ordered as (crop 0, crop 0 flipped, crop 1, crop 1 flipped, ...), cycling
/// through center, top-left, top-right, bottom-left, bottom-right.
pub fn augment_views(crop: &RgbImage, cfg: &AugmentConfig, mode: AugmentMode) -> Result<Vec<RgbImage>> {
    cfg.validate()?;
    let base = resized(crop, cfg);
    Ok(match mode {
        AugmentMode::TrainRandom(seed) => {
            let mut rng = rng::seeded(seed);
            let slack = cfg.resize_px - cfg.crop_px;
            let x = rng.random_range(0..=slack);
            let y = rng.random_range(0..=slack);
            let flip = rng.random::<bool>();
            vec![view(&base, cfg, (x, y), flip)]
        }
        AugmentMode::Tta => {
            let offsets = cfg.canonical_offsets();
            (0..cfg.tta_views / 2)
                .flat_map(|i| {
                    let at = offsets[i % offsets.len()];
                    [view(&base, cfg, at, false), view(&base, cfg, at, true)]
                })
                .collect()
        }
    })
}

/// The un-flipped center view; this is the first TTA view.
pub fn canonical_view(crop: &RgbImage, cfg: &AugmentConfig) -> Result<RgbImage> {
    cfg.validate()?;
    let base = resized(crop, cfg);
    Ok(view(&base, cfg, cfg.canonical_offsets()[0], false))
}
