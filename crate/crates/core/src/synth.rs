//! Synthetic group photos with a controllable shared photographic cue.
//!
//! Each photo is a grid of tiles, one face per tile. Tile content (background
//! tone, stripe texture, face ellipse) is drawn independently per face. The
//! photo draws one latent: a tone cast in a* and b* (uniform in ±15), a
//! lightness offset (uniform in ±20) and a blur sigma (uniform in [0, 1.5]
//! px). The latent is multiplied by `cue_strength` and applied to every
//! pixel, so at strength 0 faces from one photo are independent of each
//! other. Per-pixel Gaussian noise is added last, in RGB units.

use std::f64::consts::PI;
use std::path::{Path, PathBuf};

use image::{imageops, Rgb, RgbImage};
use rand::Rng as _;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::dataset::{
    save_manifest, BBox, ChildGender, DatasetManifest, FaceRecord, Label, PairExample, PhotoRecord, Relation, Role,
    TripletExample,
};
use crate::error::{Error, Result};
use crate::features::{lab_to_rgb, write_image, ImageKind};
use crate::rng;

pub const CAST_RANGE: f64 = 15.0;
pub const BRIGHTNESS_RANGE: f64 = 20.0;
pub const MAX_BLUR_SIGMA: f64 = 1.5;
/// Smallest face side; matches the default usable-face threshold.
pub const MIN_FACE_PX: u32 = 50;
/// Tile side over face side; leaves a margin for crop expansion.
const TILE_OVER_FACE: f64 = 1.5;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthConfig {
    pub n_photos: usize,
    pub faces_min: usize,
    pub faces_max: usize,
    pub image_px: u32,
    pub cue_strength: f64,
    pub noise_sigma: f64,
    pub seed: u64,
    pub format: ImageKind,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            n_photos: 200,
            faces_min: 4,
            faces_max: 7,
            image_px: 300,
            cue_strength: 0.9,
            noise_sigma: 2.0,
            seed: 0,
            format: ImageKind::Png,
        }
    }
}

impl SynthConfig {
    fn grid(&self) -> u32 {
        (self.faces_max as f64).sqrt().ceil() as u32
    }

    fn tile_px(&self) -> u32 {
        self.image_px / self.grid().max(1)
    }

    /// Largest face side that fits a tile with its margin.
    pub fn max_face_px(&self) -> u32 {
        (f64::from(self.tile_px()) / TILE_OVER_FACE).floor() as u32
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_photos < 2 {
            return Err(Error::validation("synthetic dataset needs at least 2 photos"));
        }
        if self.faces_min < 2 || self.faces_min > self.faces_max {
            return Err(Error::validation(format!(
                "faces per photo {}..={} must start at 2 or more and be non-empty",
                self.faces_min, self.faces_max
            )));
        }
        if !(0.0..=1.0).contains(&self.cue_strength) {
            return Err(Error::validation(format!(
                "cue_strength {} must be in [0, 1]",
                self.cue_strength
            )));
        }
        if !(self.noise_sigma >= 0.0 && self.noise_sigma.is_finite()) {
            return Err(Error::validation(format!(
                "noise_sigma {} must be >= 0",
                self.noise_sigma
            )));
        }
        if self.max_face_px() < MIN_FACE_PX {
            return Err(Error::validation(format!(
                "image_px {} is too small for {} faces of at least {MIN_FACE_PX} px",
                self.image_px, self.faces_max
            )));
        }
        Ok(())
    }
}

/// Shared per-photo cue, before scaling by `cue_strength`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PhotoLatent {
    pub cast_a: f64,
    pub cast_b: f64,
    pub brightness: f64,
    pub blur_sigma: f64,
}

impl PhotoLatent {
    fn draw(r: &mut rng::Rng) -> Self {
        PhotoLatent {
            cast_a: r.random_range(-CAST_RANGE..=CAST_RANGE),
            cast_b: r.random_range(-CAST_RANGE..=CAST_RANGE),
            brightness: r.random_range(-BRIGHTNESS_RANGE..=BRIGHTNESS_RANGE),
            blur_sigma: r.random_range(0.0..=MAX_BLUR_SIGMA),
        }
    }
}

/// Independent content of one face tile.
struct Tile {
    background: [f64; 3],
    stripe_amp: f64,
    stripe_freq: f64,
    stripe_angle: f64,
    skin: [f64; 3],
    face: BBox,
    radii: (f64, f64),
}

impl Tile {
    fn draw(r: &mut rng::Rng, origin: (u32, u32), tile_px: u32, max_face: u32) -> Self {
        let side = r.random_range(MIN_FACE_PX..=max_face);
        let margin = ((f64::from(side) * 0.25).ceil() as u32).min((tile_px - side) / 2);
        let x = origin.0 + r.random_range(margin..=tile_px - side - margin);
        let y = origin.1 + r.random_range(margin..=tile_px - side - margin);
        let s = f64::from(side);
        Tile {
            background: [
                r.random_range(45.0..65.0),
                r.random_range(-4.0..4.0),
                r.random_range(-4.0..4.0),
            ],
            stripe_amp: r.random_range(0.0..4.0),
            stripe_freq: r.random_range(0.05..0.3),
            stripe_angle: r.random_range(0.0..PI),
            skin: [
                r.random_range(60.0..75.0),
                r.random_range(10.0..16.0),
                r.random_range(16.0..24.0),
            ],
            face: BBox::new(x, y, side, side),
            radii: (s * r.random_range(0.36..0.46), s * r.random_range(0.44..0.5)),
        }
    }

    fn lab_at(&self, px: u32, py: u32) -> [f64; 3] {
        let (fx, fy) = (f64::from(px) + 0.5, f64::from(py) + 0.5);
        let cx = f64::from(self.face.x) + f64::from(self.face.w) / 2.0;
        let cy = f64::from(self.face.y) + f64::from(self.face.h) / 2.0;
        let (dx, dy) = ((fx - cx) / self.radii.0, (fy - cy) / self.radii.1);
        if dx * dx + dy * dy <= 1.0 {
            // Two darker eye spots on the upper half.
            let eye = |ex: f64| {
                let (u, v) = ((dx - ex) / 0.16, (dy + 0.3) / 0.1);
                u * u + v * v <= 1.0
            };
            let shade = if eye(-0.35) || eye(0.35) { -30.0 } else { -8.0 * dy * dy };
            return [self.skin[0] + shade, self.skin[1], self.skin[2]];
        }
        let t = (fx * self.stripe_angle.cos() + fy * self.stripe_angle.sin()) * self.stripe_freq;
        let mut lab = self.background;
        lab[0] += self.stripe_amp * t.sin();
        lab
    }
}

/// Renders photo `index` of the dataset described by `cfg`, returning the
/// image, its record and the latent that was drawn.
pub fn render_photo(cfg: &SynthConfig, index: usize) -> Result<(RgbImage, PhotoRecord, PhotoLatent)> {
    cfg.validate()?;
    let mut r = rng::stream(cfg.seed, index as u64);
    let latent = PhotoLatent::draw(&mut r);
    let n_faces = r.random_range(cfg.faces_min..=cfg.faces_max);
    let grid = cfg.grid();
    let tile_px = cfg.tile_px();
    // Every cell gets independent content; a random subset holds the faces.
    let tiles: Vec<Tile> = (0..grid * grid)
        .map(|cell| {
            let origin = ((cell % grid) * tile_px, (cell / grid) * tile_px);
            Tile::draw(&mut r, origin, tile_px, cfg.max_face_px())
        })
        .collect();
    let mut order: Vec<usize> = (0..tiles.len()).collect();
    rand::seq::SliceRandom::shuffle(order.as_mut_slice(), &mut r);
    let mut face_tiles: Vec<usize> = order[..n_faces].to_vec();
    face_tiles.sort_unstable();

    let k = cfg.cue_strength;
    let shift = [k * latent.brightness, k * latent.cast_a, k * latent.cast_b];
    let mut img = RgbImage::from_fn(cfg.image_px, cfg.image_px, |x, y| {
        let (cx, cy) = (x / tile_px, y / tile_px);
        let lab = if cx < grid && cy < grid {
            tiles[(cy * grid + cx) as usize].lab_at(x, y)
        } else {
            [50.0, 0.0, 0.0]
        };
        Rgb(lab_to_rgb([lab[0] + shift[0], lab[1] + shift[1], lab[2] + shift[2]]))
    });

    let sigma = k * latent.blur_sigma;
    if sigma > 0.05 {
        img = imageops::blur(&img, sigma as f32);
    }
    if cfg.noise_sigma > 0.0 {
        let noise = Normal::new(0.0, cfg.noise_sigma).expect("validated sigma");
        for px in img.pixels_mut() {
            for c in px.0.iter_mut() {
                *c = (f64::from(*c) + noise.sample(&mut r)).round().clamp(0.0, 255.0) as u8;
            }
        }
    }

    let photo_id = format!("photo{index:05}");
    let faces = face_tiles
        .iter()
        .enumerate()
        .map(|(j, &t)| FaceRecord::new(format!("{photo_id}_f{j}"), tiles[t].face))
        .collect();
    let record = PhotoRecord {
        image_path: PathBuf::from("images").join(format!("{photo_id}.{}", cfg.format.extension())),
        photo_id,
        width: cfg.image_px,
        height: cfg.image_px,
        faces,
    };
    Ok((img, record, latent))
}

/// All photos in memory, with a manifest whose image paths are relative.
pub fn synthesize(cfg: &SynthConfig) -> Result<(DatasetManifest, Vec<RgbImage>)> {
    cfg.validate()?;
    let mut manifest = DatasetManifest::default();
    let mut images = Vec::with_capacity(cfg.n_photos);
    for i in 0..cfg.n_photos {
        let (img, record, _) = render_photo(cfg, i)?;
        manifest.photos.push(record);
        images.push(img);
    }
    manifest.metadata.insert("generator".into(), "synth".into());
    manifest
        .metadata
        .insert("cue_strength".into(), cfg.cue_strength.to_string());
    manifest.metadata.insert("seed".into(), cfg.seed.to_string());
    Ok((manifest, images))
}

/// Benchmark layout laid over synthetic photos by [`kinship_manifest`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum KinshipStyle {
    /// Parent-child positive pairs, negatives left to substitution.
    Pairs,
    /// Father-mother-child positive triplets.
    Triplets,
}

/// Treats the first four faces of each photo as father, mother, son and
/// daughter, and lists the requested relations between them as positives.
/// Every kinship pair therefore comes from one photo, which is the confound
/// the audit measures. Photos with fewer than four faces are skipped.
pub fn kinship_manifest(m: &DatasetManifest, style: KinshipStyle, relations: &[Relation]) -> DatasetManifest {
    const ROLES: [Role; 4] = [Role::Father, Role::Mother, Role::Son, Role::Daughter];
    let mut out = DatasetManifest {
        metadata: m.metadata.clone(),
        ..Default::default()
    };
    for photo in m.photos.iter().filter(|p| p.faces.len() >= ROLES.len()) {
        let mut photo = photo.clone();
        photo.faces.truncate(ROLES.len());
        for (face, role) in photo.faces.iter_mut().zip(ROLES) {
            face.role = Some(role);
            face.family_id = Some(photo.photo_id.clone());
        }
        let id = |i: usize| photo.faces[i].face_id.clone();
        match style {
            KinshipStyle::Pairs => {
                for &rel in relations {
                    let (parent, child) = match rel {
                        Relation::FS => (0, 2),
                        Relation::FD => (0, 3),
                        Relation::MS => (1, 2),
                        Relation::MD => (1, 3),
                        Relation::Sibling | Relation::None => continue,
                    };
                    out.pairs
                        .push(PairExample::new(id(parent), id(child), Label::Positive).with_relation(rel));
                }
            }
            KinshipStyle::Triplets => {
                for (child, gender) in [(2, ChildGender::Son), (3, ChildGender::Daughter)] {
                    out.triplets.push(TripletExample {
                        father: id(0),
                        mother: id(1),
                        child: id(child),
                        label: Label::Positive,
                        child_gender: gender,
                    });
                }
            }
        }
        out.photos.push(photo);
    }
    out
}

/// Writes `images/*` and `manifest.json` under `out_root` and returns the
/// manifest path.
pub fn generate(cfg: &SynthConfig, out_root: impl AsRef<Path>) -> Result<PathBuf> {
    let root = out_root.as_ref();
    let image_dir = root.join("images");
    std::fs::create_dir_all(&image_dir).map_err(|e| Error::io(&image_dir, e))?;
    let (manifest, images) = synthesize(cfg)?;
    for (photo, img) in manifest.photos.iter().zip(&images) {
        write_image(img, root.join(&photo.image_path), cfg.format)?;
    }
    let path = root.join("manifest.json");
    save_manifest(&manifest, &path)?;
    Ok(path)
}
