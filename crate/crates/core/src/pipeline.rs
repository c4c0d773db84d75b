//! Glue shared by the command line and the end-to-end tests: building
//! same-photo pair sets, extracting per-face vectors, scoring kinship test
//! sets, and running a whole synthetic experiment in memory.

use std::collections::{BTreeSet, HashMap};
use std::path::{Path, PathBuf};

use image::RgbImage;

use crate::dataset::{
    filter_usable_photos, split_photos, BBox, DatasetManifest, PairExample, PhotoRecord, Split, SplitAssignment,
    SplitRatios,
};
use crate::error::{Error, Result};
use crate::evaluation::{
    evaluate_scores, relation_breakdown, triplet_score, EvalReport, Protocol, ScoredPair, ScoredTriplet,
};
use crate::features::{decode_image, EmbeddingMap, FaceVector, FeatureSpec, VectorSource};
use crate::pairs::{enumerate_positive_pairs, generate_negative_pairs, triplet_to_pairs, KinshipTestSet};
use crate::rng::derive_seed;
use crate::scorer::{score_pair, score_pair_tta, train, PairSample, ScorerConfig, ScorerFile, ScorerParams, TrainLog};
use crate::synth::{synthesize, SynthConfig};

/// Image path of a photo, relative paths being taken from `root`.
pub fn image_path(root: &Path, photo: &PhotoRecord) -> PathBuf {
    if photo.image_path.is_absolute() {
        photo.image_path.clone()
    } else {
        root.join(&photo.image_path)
    }
}

/// Loader that decodes photos from disk relative to `root`.
pub fn disk_loader(root: &Path) -> impl FnMut(&PhotoRecord) -> Result<RgbImage> + '_ {
    move |photo| {
        let img = decode_image(image_path(root, photo))?;
        if img.dimensions() != (photo.width, photo.height) {
            return Err(Error::validation(format!(
                "image {} is {}x{} but the manifest says {}x{}",
                image_path(root, photo).display(),
                img.width(),
                img.height(),
                photo.width,
                photo.height
            )));
        }
        Ok(img)
    }
}

/// Positives of one subset followed by one negative per positive.
pub fn fsp_pairs(m: &DatasetManifest, split: &SplitAssignment, subset: Split, seed: u64) -> Result<Vec<PairExample>> {
    let mut pairs = enumerate_positive_pairs(m, split, subset);
    let stream = Split::ALL.iter().position(|s| *s == subset).unwrap_or_default() as u64;
    let negatives = generate_negative_pairs(&pairs, m, split, derive_seed(seed, stream))?;
    pairs.extend(negatives);
    Ok(pairs)
}

/// Runs `f` on every wanted face, decoding each photo that holds one once.
/// Faces are visited in manifest order; `wanted = None` visits all faces.
pub fn map_faces<T>(
    m: &DatasetManifest,
    wanted: Option<&BTreeSet<&str>>,
    load: &mut dyn FnMut(&PhotoRecord) -> Result<RgbImage>,
    mut f: impl FnMut(&RgbImage, BBox) -> Result<T>,
) -> Result<Vec<(String, T)>> {
    let mut out = Vec::new();
    for photo in &m.photos {
        let faces: Vec<_> = photo
            .faces
            .iter()
            .filter(|face| wanted.is_none_or(|w| w.contains(face.face_id.as_str())))
            .collect();
        if faces.is_empty() {
            continue;
        }
        let img = load(photo)?;
        for face in faces {
            out.push((face.face_id.clone(), f(&img, face.bbox)?));
        }
    }
    Ok(out)
}

/// Cue vectors of the canonical view of every face.
pub fn extract_cue_vectors(
    m: &DatasetManifest,
    spec: &FeatureSpec,
    load: &mut dyn FnMut(&PhotoRecord) -> Result<RgbImage>,
) -> Result<EmbeddingMap> {
    spec.validate()?;
    let vectors = map_faces(m, None, load, |img, bbox| spec.face_vector(img, bbox, spec.expansion))?;
    Ok(vectors
        .into_iter()
        .map(|(id, v)| (id.clone(), FaceVector::new(id, v, VectorSource::CueFeatures)))
        .collect())
}

fn lookup<'a>(vectors: &'a EmbeddingMap, id: &str) -> Result<&'a [f64]> {
    vectors
        .get(id)
        .map(|v| v.values.as_slice())
        .ok_or_else(|| Error::validation(format!("no feature vector for face \"{id}\"")))
}

pub fn pair_samples<'a>(pairs: &[PairExample], vectors: &'a EmbeddingMap) -> Result<Vec<PairSample<'a>>> {
    pairs
        .iter()
        .map(|p| {
            Ok(PairSample {
                a: lookup(vectors, &p.face_a)?,
                b: lookup(vectors, &p.face_b)?,
                positive: p.label.is_positive(),
            })
        })
        .collect()
}

/// Scores pairs with a single vector per face.
pub fn score_pairs(params: &ScorerParams, pairs: &[PairExample], vectors: &EmbeddingMap) -> Result<Vec<ScoredPair>> {
    pairs
        .iter()
        .map(|p| {
            let score = score_pair(params, lookup(vectors, &p.face_a)?, lookup(vectors, &p.face_b)?)?;
            Ok(ScoredPair { pair: p.clone(), score })
        })
        .collect()
}

/// Per-face views used to score a kinship test set: one vector per face for
/// external descriptors, every test-time view for cue features.
pub type FaceViews = HashMap<String, Vec<Vec<f64>>>;

fn testset_faces(set: &KinshipTestSet) -> BTreeSet<&str> {
    let mut ids = BTreeSet::new();
    match set {
        KinshipTestSet::Pairs(versions) => {
            for p in versions.iter().flatten() {
                ids.insert(p.face_a.as_str());
                ids.insert(p.face_b.as_str());
            }
        }
        KinshipTestSet::Triplets(versions) => {
            for t in versions.iter().flatten() {
                ids.extend([t.father.as_str(), t.mother.as_str(), t.child.as_str()]);
            }
        }
    }
    ids
}

/// Test-time cue views of every face in the test set at one crop expansion.
pub fn kinship_cue_views(
    m: &DatasetManifest,
    set: &KinshipTestSet,
    spec: &FeatureSpec,
    expansion: f64,
    load: &mut dyn FnMut(&PhotoRecord) -> Result<RgbImage>,
) -> Result<FaceViews> {
    let wanted = testset_faces(set);
    Ok(map_faces(m, Some(&wanted), load, |img, bbox| {
        spec.tta_vectors(img, bbox, expansion)
    })?
    .into_iter()
    .collect())
}

/// Wraps external descriptors as single-view face views.
pub fn embedding_views(vectors: &EmbeddingMap) -> FaceViews {
    vectors
        .iter()
        .map(|(id, v)| (id.clone(), vec![v.values.clone()]))
        .collect()
}

fn views_of<'a>(views: &'a FaceViews, id: &str) -> Result<&'a [Vec<f64>]> {
    views
        .get(id)
        .map(Vec::as_slice)
        .ok_or_else(|| Error::validation(format!("no feature vector for face \"{id}\"")))
}

fn tta_score(params: &ScorerParams, views: &FaceViews, a: &str, b: &str) -> Result<f64> {
    score_pair_tta(params, views_of(views, a)?, views_of(views, b)?)
}

/// Scores every version of a kinship test set and runs the per-relation
/// threshold protocol.
pub fn audit_testset(
    params: &ScorerParams,
    set: &KinshipTestSet,
    views: &FaceViews,
    protocol: &Protocol,
) -> Result<(EvalReport, Vec<ScoredPair>)> {
    match set {
        KinshipTestSet::Pairs(versions) => {
            let scored = versions
                .iter()
                .map(|v| {
                    v.iter()
                        .map(|p| {
                            let score = tta_score(params, views, &p.face_a, &p.face_b)?;
                            Ok(ScoredPair { pair: p.clone(), score })
                        })
                        .collect::<Result<Vec<_>>>()
                })
                .collect::<Result<Vec<_>>>()?;
            let report = relation_breakdown(&scored, protocol)?;
            let first = scored.into_iter().next().unwrap_or_default();
            Ok((report, first))
        }
        KinshipTestSet::Triplets(versions) => {
            let mut parts = Vec::new();
            let scored = versions
                .iter()
                .enumerate()
                .map(|(vi, v)| {
                    v.iter()
                        .map(|t| {
                            let (fc, mc) = triplet_to_pairs(t);
                            let s_fc = tta_score(params, views, &fc.face_a, &fc.face_b)?;
                            let s_mc = tta_score(params, views, &mc.face_a, &mc.face_b)?;
                            if vi == 0 {
                                parts.push(ScoredPair { pair: fc, score: s_fc });
                                parts.push(ScoredPair { pair: mc, score: s_mc });
                            }
                            Ok(ScoredTriplet {
                                triplet: t.clone(),
                                score: triplet_score(s_fc, s_mc),
                            })
                        })
                        .collect::<Result<Vec<_>>>()
                })
                .collect::<Result<Vec<_>>>()?;
            Ok((relation_breakdown(&scored, protocol)?, parts))
        }
    }
}

/// Settings of one in-memory synthetic experiment.
#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentConfig {
    pub synth: SynthConfig,
    pub min_face_px: u32,
    pub ratios: SplitRatios,
    pub features: FeatureSpec,
    pub scorer: ScorerConfig,
    pub protocol: Protocol,
    /// Seed for the split and the negative draws.
    pub seed: u64,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            synth: SynthConfig::default(),
            min_face_px: crate::dataset::DEFAULT_MIN_FACE_PX,
            ratios: SplitRatios::default(),
            features: FeatureSpec::cue(Default::default()),
            scorer: ScorerConfig::default(),
            protocol: Protocol::default(),
            seed: 0,
        }
    }
}

#[derive(Debug, Clone)]
pub struct ExperimentResult {
    pub report: EvalReport,
    pub log: TrainLog,
    pub scorer: ScorerFile,
    /// Pair counts (positives plus negatives) per subset, in split order.
    pub pair_counts: [usize; 3],
}

/// Synthesize, filter, split, pair, extract, train and evaluate on the test
/// subset.
pub fn run_experiment(cfg: &ExperimentConfig) -> Result<ExperimentResult> {
    let (raw, images) = synthesize(&cfg.synth)?;
    let by_id: HashMap<String, usize> = raw
        .photos
        .iter()
        .enumerate()
        .map(|(i, p)| (p.photo_id.clone(), i))
        .collect();
    let m = filter_usable_photos(&raw, cfg.min_face_px);
    let split = split_photos(&m, cfg.ratios, cfg.seed)?;
    let mut load = |p: &PhotoRecord| Ok(images[by_id[&p.photo_id]].clone());
    let vectors = extract_cue_vectors(&m, &cfg.features, &mut load)?;

    let [train_pairs, val_pairs, test_pairs] = Split::ALL.map(|s| fsp_pairs(&m, &split, s, cfg.seed));
    let (train_pairs, val_pairs, test_pairs) = (train_pairs?, val_pairs?, test_pairs?);
    let scorer_cfg = ScorerConfig {
        input_dim: cfg.features.cue_dim(),
        ..cfg.scorer.clone()
    };
    let (params, log) = train(
        &scorer_cfg,
        &pair_samples(&train_pairs, &vectors)?,
        &pair_samples(&val_pairs, &vectors)?,
    )?;
    let scored = score_pairs(&params, &test_pairs, &vectors)?;
    let report = evaluate_scores(&scored, &cfg.protocol)?;
    Ok(ExperimentResult {
        report,
        log,
        pair_counts: [train_pairs.len(), val_pairs.len(), test_pairs.len()],
        scorer: ScorerFile {
            config: scorer_cfg,
            features: cfg.features.clone(),
            params,
        },
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::{FaceRecord, Label};
    use crate::features::AugmentConfig;

    #[test]
    fn fsp_pairs_are_balanced() {
        let (m, _) = synthesize(&SynthConfig {
            n_photos: 20,
            ..Default::default()
        })
        .unwrap();
        let split = split_photos(&m, SplitRatios::default(), 1).unwrap();
        for s in Split::ALL {
            let pairs = fsp_pairs(&m, &split, s, 3).unwrap();
            let pos = pairs.iter().filter(|p| p.label == Label::Positive).count();
            assert_eq!(2 * pos, pairs.len());
        }
    }

    #[test]
    fn missing_vector_is_named() {
        let vectors = EmbeddingMap::new();
        let err = pair_samples(&[PairExample::new("x", "y", Label::Positive)], &vectors).unwrap_err();
        assert!(err.to_string().contains("\"x\""));
    }

    #[test]
    fn map_faces_loads_each_photo_once() {
        let mut m = DatasetManifest::default();
        for p in 0..3 {
            m.photos.push(PhotoRecord {
                photo_id: format!("p{p}"),
                image_path: format!("p{p}.png").into(),
                width: 10,
                height: 10,
                faces: (0..2)
                    .map(|f| FaceRecord::new(format!("p{p}f{f}"), BBox::new(0, 0, 5, 5)))
                    .collect(),
            });
        }
        let mut loads = 0;
        let wanted: BTreeSet<&str> = ["p0f1", "p2f0", "p2f1"].into();
        let mut load = |_: &PhotoRecord| {
            loads += 1;
            Ok(RgbImage::new(10, 10))
        };
        let got = map_faces(&m, Some(&wanted), &mut load, |_, b| Ok(b.w)).unwrap();
        assert_eq!(got.len(), 3);
        assert_eq!(loads, 2);
    }

    #[test]
    fn tiny_experiment_runs() {
        let cfg = ExperimentConfig {
            synth: SynthConfig {
                n_photos: 20,
                ..Default::default()
            },
            features: FeatureSpec::cue(AugmentConfig {
                resize_px: 40,
                crop_px: 32,
                tta_views: 10,
            }),
            scorer: ScorerConfig {
                proj_dim: 8,
                hidden_dims: (8, 8),
                max_epochs: 3,
                ..Default::default()
            },
            ..Default::default()
        };
        let r = run_experiment(&cfg).unwrap();
        assert!(r.log.epochs.len() <= 3);
        assert_eq!(r.report.n_positive, r.report.n_negative);
        assert_eq!(r.report.n_positive * 2, r.pair_counts[2]);
    }
}
