//! Photos, faces, pairs, triplets and splits, plus manifest ingestion.
//!
//! A manifest is one JSON document with top-level keys `photos`, `pairs`,
//! `triplets` and `metadata`. Loading always validates: ids are unique, face
//! boxes lie inside their photo, and every face referenced by a pair or
//! triplet exists.

use std::collections::{BTreeMap, HashMap, HashSet};
use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng;

/// Default minimum face side, in pixels, for a photo to count as usable.
pub const DEFAULT_MIN_FACE_PX: u32 = 50;

/// Face bounding box in pixels; serialized as `[x, y, w, h]`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(from = "[u32; 4]", into = "[u32; 4]")]
pub struct BBox {
    pub x: u32,
    pub y: u32,
    pub w: u32,
    pub h: u32,
}

impl BBox {
    pub fn new(x: u32, y: u32, w: u32, h: u32) -> Self {
        BBox { x, y, w, h }
    }

    fn fits_in(&self, width: u32, height: u32) -> bool {
        u64::from(self.x) + u64::from(self.w) <= u64::from(width)
            && u64::from(self.y) + u64::from(self.h) <= u64::from(height)
    }
}

impl From<[u32; 4]> for BBox {
    fn from(v: [u32; 4]) -> Self {
        BBox::new(v[0], v[1], v[2], v[3])
    }
}

impl From<BBox> for [u32; 4] {
    fn from(b: BBox) -> Self {
        [b.x, b.y, b.w, b.h]
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Role {
    Father,
    Mother,
    Son,
    Daughter,
    Child,
    Other,
}

impl Role {
    pub fn is_parent(self) -> bool {
        matches!(self, Role::Father | Role::Mother)
    }

    pub fn is_child(self) -> bool {
        matches!(self, Role::Son | Role::Daughter | Role::Child)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FaceRecord {
    pub face_id: String,
    pub bbox: BBox,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub person_id: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub family_id: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub role: Option<Role>,
}

impl FaceRecord {
    pub fn new(face_id: impl Into<String>, bbox: BBox) -> Self {
        FaceRecord {
            face_id: face_id.into(),
            bbox,
            person_id: None,
            family_id: None,
            role: None,
        }
    }

    pub fn with_role(mut self, role: Role) -> Self {
        self.role = Some(role);
        self
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PhotoRecord {
    pub photo_id: String,
    pub image_path: PathBuf,
    pub width: u32,
    pub height: u32,
    pub faces: Vec<FaceRecord>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Label {
    Positive,
    Negative,
}

impl Label {
    pub fn is_positive(self) -> bool {
        self == Label::Positive
    }
}

/// Bi-subject relation of a kinship benchmark pair.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Relation {
    MD,
    MS,
    FD,
    FS,
    #[serde(rename = "sibling")]
    Sibling,
    #[serde(rename = "none")]
    None,
}

impl Relation {
    pub fn is_parent_child(self) -> bool {
        matches!(self, Relation::MD | Relation::MS | Relation::FD | Relation::FS)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PairExample {
    #[serde(rename = "a")]
    pub face_a: String,
    #[serde(rename = "b")]
    pub face_b: String,
    pub label: Label,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub relation: Option<Relation>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub fold: Option<u32>,
}

impl PairExample {
    pub fn new(face_a: impl Into<String>, face_b: impl Into<String>, label: Label) -> Self {
        PairExample {
            face_a: face_a.into(),
            face_b: face_b.into(),
            label,
            relation: None,
            fold: None,
        }
    }

    pub fn with_relation(mut self, relation: Relation) -> Self {
        self.relation = Some(relation);
        self
    }

    pub fn with_fold(mut self, fold: u32) -> Self {
        self.fold = Some(fold);
        self
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ChildGender {
    Son,
    Daughter,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TripletExample {
    pub father: String,
    pub mother: String,
    pub child: String,
    pub label: Label,
    pub child_gender: ChildGender,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct DatasetManifest {
    pub photos: Vec<PhotoRecord>,
    #[serde(default)]
    pub pairs: Vec<PairExample>,
    #[serde(default)]
    pub triplets: Vec<TripletExample>,
    #[serde(default)]
    pub metadata: BTreeMap<String, String>,
}

/// Where a face lives inside a manifest.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct FaceLocation {
    pub photo: usize,
    pub face: usize,
}

impl DatasetManifest {
    pub fn face_count(&self) -> usize {
        self.photos.iter().map(|p| p.faces.len()).sum()
    }

    /// Maps every face id to its photo and position.
    pub fn face_index(&self) -> HashMap<&str, FaceLocation> {
        let mut index = HashMap::with_capacity(self.face_count());
        for (pi, photo) in self.photos.iter().enumerate() {
            for (fi, face) in photo.faces.iter().enumerate() {
                index.insert(face.face_id.as_str(), FaceLocation { photo: pi, face: fi });
            }
        }
        index
    }

    pub fn face(&self, loc: FaceLocation) -> &FaceRecord {
        &self.photos[loc.photo].faces[loc.face]
    }

    /// Checks every manifest invariant and names the first offending record.
    pub fn validate(&self) -> Result<()> {
        let mut photo_ids = HashSet::new();
        let mut face_ids = HashSet::new();
        for photo in &self.photos {
            if !photo_ids.insert(photo.photo_id.as_str()) {
                return Err(Error::validation(format!("duplicate photo_id \"{}\"", photo.photo_id)));
            }
            if photo.width == 0 || photo.height == 0 {
                return Err(Error::validation(format!(
                    "photo \"{}\" has zero width or height",
                    photo.photo_id
                )));
            }
            for face in &photo.faces {
                if !face_ids.insert(face.face_id.as_str()) {
                    return Err(Error::validation(format!("duplicate face_id \"{}\"", face.face_id)));
                }
                if face.bbox.w == 0 || face.bbox.h == 0 {
                    return Err(Error::validation(format!(
                        "face \"{}\" has an empty bbox",
                        face.face_id
                    )));
                }
                if !face.bbox.fits_in(photo.width, photo.height) {
                    return Err(Error::validation(format!(
                        "face \"{}\" bbox {:?} exceeds photo \"{}\" bounds {}x{}",
                        face.face_id,
                        <[u32; 4]>::from(face.bbox),
                        photo.photo_id,
                        photo.width,
                        photo.height
                    )));
                }
            }
        }

        let known = |id: &str, ctx: &str| -> Result<()> {
            if face_ids.contains(id) {
                Ok(())
            } else {
                Err(Error::validation(format!("{ctx} references unknown face_id \"{id}\"")))
            }
        };
        for (i, pair) in self.pairs.iter().enumerate() {
            let ctx = format!("pair #{i}");
            known(&pair.face_a, &ctx)?;
            known(&pair.face_b, &ctx)?;
            if pair.face_a == pair.face_b {
                return Err(Error::validation(format!(
                    "{ctx} pairs face \"{}\" with itself",
                    pair.face_a
                )));
            }
        }
        for (i, t) in self.triplets.iter().enumerate() {
            let ctx = format!("triplet #{i}");
            known(&t.father, &ctx)?;
            known(&t.mother, &ctx)?;
            known(&t.child, &ctx)?;
            if t.father == t.mother || t.father == t.child || t.mother == t.child {
                return Err(Error::validation(format!(
                    "{ctx} repeats a face_id ({}, {}, {})",
                    t.father, t.mother, t.child
                )));
            }
        }
        Ok(())
    }
}

/// Parses and validates a manifest from JSON text.
pub fn parse_manifest(text: &str) -> Result<DatasetManifest> {
    let manifest: DatasetManifest = serde_json::from_str(text).map_err(|e| Error::parse("manifest", e))?;
    manifest.validate()?;
    Ok(manifest)
}

pub fn load_manifest(path: impl AsRef<Path>) -> Result<DatasetManifest> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_manifest(&text).map_err(|e| match e {
        Error::Parse { detail, .. } => Error::parse(format!("manifest {}", path.display()), detail),
        other => other,
    })
}

pub fn save_manifest(manifest: &DatasetManifest, path: impl AsRef<Path>) -> Result<()> {
    write_json(manifest, path)
}

pub(crate) fn write_json<T: Serialize>(value: &T, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let mut text = serde_json::to_string_pretty(value).map_err(|e| Error::parse("json output", e))?;
    text.push('\n');
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}

pub(crate) fn read_json<T: for<'de> Deserialize<'de>>(path: impl AsRef<Path>, what: &str) -> Result<T> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    serde_json::from_str(&text).map_err(|e| Error::parse(format!("{what} {}", path.display()), e))
}

/// Keeps photos with at least two faces whose width and height both reach
/// `min_face_px`. Smaller faces are removed outright, and any pair or triplet
/// that referenced a removed face is dropped with it.
pub fn filter_usable_photos(m: &DatasetManifest, min_face_px: u32) -> DatasetManifest {
    let min = min_face_px.max(1);
    let photos: Vec<PhotoRecord> = m
        .photos
        .iter()
        .filter_map(|photo| {
            let faces: Vec<FaceRecord> = photo
                .faces
                .iter()
                .filter(|f| f.bbox.w >= min && f.bbox.h >= min)
                .cloned()
                .collect();
            (faces.len() >= 2).then(|| PhotoRecord { faces, ..photo.clone() })
        })
        .collect();

    let kept: HashSet<&str> = photos
        .iter()
        .flat_map(|p| p.faces.iter().map(|f| f.face_id.as_str()))
        .collect();
    let pairs = m
        .pairs
        .iter()
        .filter(|p| kept.contains(p.face_a.as_str()) && kept.contains(p.face_b.as_str()))
        .cloned()
        .collect();
    let triplets = m
        .triplets
        .iter()
        .filter(|t| {
            [&t.father, &t.mother, &t.child]
                .iter()
                .all(|id| kept.contains(id.as_str()))
        })
        .cloned()
        .collect();

    DatasetManifest {
        photos,
        pairs,
        triplets,
        metadata: m.metadata.clone(),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Validation,
    Test,
}

impl Split {
    pub const ALL: [Split; 3] = [Split::Train, Split::Validation, Split::Test];

    pub fn name(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Validation => "validation",
            Split::Test => "test",
        }
    }
}

impl fmt::Display for Split {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// Train/validation/test fractions.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SplitRatios {
    pub train: f64,
    pub validation: f64,
    pub test: f64,
}

impl Default for SplitRatios {
    fn default() -> Self {
        SplitRatios {
            train: 0.7,
            validation: 0.1,
            test: 0.2,
        }
    }
}

impl SplitRatios {
    pub fn validate(&self) -> Result<()> {
        let parts = [self.train, self.validation, self.test];
        if parts.iter().any(|r| !r.is_finite() || *r <= 0.0) {
            return Err(Error::validation(format!(
                "split ratios must be positive, got {parts:?}"
            )));
        }
        let sum: f64 = parts.iter().sum();
        if (sum - 1.0).abs() > 1e-9 {
            return Err(Error::validation(format!("split ratios must sum to 1, got {sum}")));
        }
        Ok(())
    }

    /// Per-split sizes for `n` items by largest-remainder rounding.
    /// Remainder ties go to the earlier split (train, then validation).
    pub fn counts(&self, n: usize) -> [usize; 3] {
        let targets = [self.train, self.validation, self.test].map(|r| r * n as f64);
        // The small epsilon absorbs representation error such as 0.7 * 100.
        let mut counts = targets.map(|t| (t + 1e-9).floor() as usize);
        let assigned: usize = counts.iter().sum();
        let mut order: Vec<usize> = (0..3).collect();
        order.sort_by(|&i, &j| {
            let ri = targets[i] - counts[i] as f64;
            let rj = targets[j] - counts[j] as f64;
            rj.partial_cmp(&ri).unwrap_or(std::cmp::Ordering::Equal).then(i.cmp(&j))
        });
        for &i in order.iter().take(n.saturating_sub(assigned)) {
            counts[i] += 1;
        }
        counts
    }
}

impl FromStr for SplitRatios {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let parts: Vec<f64> = s
            .split(',')
            .map(|p| p.trim().parse::<f64>())
            .collect::<std::result::Result<_, _>>()
            .map_err(|e| Error::validation(format!("bad split \"{s}\": {e}")))?;
        let [train, validation, test] = parts[..] else {
            return Err(Error::validation(format!(
                "split \"{s}\" must have three comma-separated fractions"
            )));
        };
        let ratios = SplitRatios {
            train,
            validation,
            test,
        };
        ratios.validate()?;
        Ok(ratios)
    }
}

/// Photo id to split label. Every photo of the manifest it was built from is
/// assigned exactly once.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct SplitAssignment(pub BTreeMap<String, Split>);

impl SplitAssignment {
    pub fn get(&self, photo_id: &str) -> Option<Split> {
        self.0.get(photo_id).copied()
    }

    pub fn photos_in(&self, split: Split) -> impl Iterator<Item = &str> {
        self.0
            .iter()
            .filter(move |(_, s)| **s == split)
            .map(|(id, _)| id.as_str())
    }

    pub fn count(&self, split: Split) -> usize {
        self.photos_in(split).count()
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }
}

/// Assigns whole photos to train/validation/test. The result depends only on
/// the set of photo ids, the ratios and the seed.
pub fn split_photos(m: &DatasetManifest, ratios: SplitRatios, seed: u64) -> Result<SplitAssignment> {
    ratios.validate()?;
    if m.photos.is_empty() {
        return Err(Error::validation("cannot split an empty manifest"));
    }
    let mut ids: Vec<&str> = m.photos.iter().map(|p| p.photo_id.as_str()).collect();
    ids.sort_unstable();
    ids.shuffle(&mut rng::seeded(seed));

    let [n_train, n_val, _] = ratios.counts(ids.len());
    let assignment = ids
        .into_iter()
        .enumerate()
        .map(|(i, id)| {
            let split = if i < n_train {
                Split::Train
            } else if i < n_train + n_val {
                Split::Validation
            } else {
                Split::Test
            };
            (id.to_string(), split)
        })
        .collect();
    Ok(SplitAssignment(assignment))
}
