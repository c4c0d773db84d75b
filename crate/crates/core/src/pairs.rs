//! Pair and triplet construction: same-photo positives, face-swap negatives,
//! and the test sets of the kinship benchmarks.

use std::collections::{BTreeMap, HashMap, HashSet};
use std::ops::Range;

use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::dataset::{
    ChildGender, DatasetManifest, Label, PairExample, Relation, Split, SplitAssignment, TripletExample,
};
use crate::error::{Error, Result};
use crate::rng;

/// Default number of independently drawn negative sets for substitution-style
/// benchmarks.
pub const DEFAULT_NEG_VERSIONS: usize = 5;

/// Every unordered face pair inside each photo of `subset`, ordered by photo
/// id and then face id.
pub fn enumerate_positive_pairs(m: &DatasetManifest, split: &SplitAssignment, subset: Split) -> Vec<PairExample> {
    let mut photos: Vec<_> = m
        .photos
        .iter()
        .filter(|p| split.get(&p.photo_id) == Some(subset))
        .collect();
    photos.sort_by(|a, b| a.photo_id.cmp(&b.photo_id));

    let mut pairs = Vec::new();
    for photo in photos {
        let mut ids: Vec<&str> = photo.faces.iter().map(|f| f.face_id.as_str()).collect();
        ids.sort_unstable();
        for (i, a) in ids.iter().enumerate() {
            for b in &ids[i + 1..] {
                pairs.push(PairExample::new(*a, *b, Label::Positive));
            }
        }
    }
    pairs
}

/// Faces of one subset, grouped so each photo occupies a contiguous range.
struct FacePool<'a> {
    faces: Vec<&'a str>,
    ranges: HashMap<usize, Range<usize>>,
}

impl<'a> FacePool<'a> {
    fn photo_count(&self) -> usize {
        self.ranges.len()
    }

    /// Uniform draw over the pool, skipping the faces of `exclude_photo`.
    fn draw_outside(&self, exclude_photo: usize, rng: &mut rng::Rng) -> &'a str {
        let skip = self.ranges[&exclude_photo].clone();
        let mut idx = rng.random_range(0..self.faces.len() - skip.len());
        if idx >= skip.start {
            idx += skip.len();
        }
        self.faces[idx]
    }
}

fn subset_pools<'a>(m: &'a DatasetManifest, split: &SplitAssignment) -> HashMap<Split, FacePool<'a>> {
    let mut order: Vec<usize> = (0..m.photos.len()).collect();
    order.sort_by(|&a, &b| m.photos[a].photo_id.cmp(&m.photos[b].photo_id));

    let mut pools: HashMap<Split, FacePool<'a>> = HashMap::new();
    for pi in order {
        let photo = &m.photos[pi];
        let Some(subset) = split.get(&photo.photo_id) else {
            continue;
        };
        let pool = pools.entry(subset).or_insert_with(|| FacePool {
            faces: Vec::new(),
            ranges: HashMap::new(),
        });
        let start = pool.faces.len();
        let mut ids: Vec<&str> = photo.faces.iter().map(|f| f.face_id.as_str()).collect();
        ids.sort_unstable();
        pool.faces.extend(ids);
        if pool.faces.len() > start {
            pool.ranges.insert(pi, start..pool.faces.len());
        }
    }
    pools
}

/// One negative per positive: a randomly chosen member of the pair is
/// replaced by a face drawn uniformly from a different photo of the same
/// split subset. Faces may be reused across negatives.
pub fn generate_negative_pairs(
    positives: &[PairExample],
    m: &DatasetManifest,
    split: &SplitAssignment,
    seed: u64,
) -> Result<Vec<PairExample>> {
    let index = m.face_index();
    let pools = subset_pools(m, split);
    let mut rng = rng::seeded(seed);

    let locate = |id: &str| {
        index
            .get(id)
            .copied()
            .ok_or_else(|| Error::validation(format!("positive pair references unknown face_id \"{id}\"")))
    };

    let mut negatives = Vec::with_capacity(positives.len());
    for pos in positives {
        let loc_a = locate(&pos.face_a)?;
        let loc_b = locate(&pos.face_b)?;
        if loc_a.photo != loc_b.photo {
            return Err(Error::validation(format!(
                "positive pair ({}, {}) spans two photos",
                pos.face_a, pos.face_b
            )));
        }
        let replace_b: bool = rng.random();
        let partner = if replace_b { loc_a } else { loc_b };
        let photo_id = &m.photos[partner.photo].photo_id;
        let subset = split
            .get(photo_id)
            .ok_or_else(|| Error::validation(format!("photo \"{photo_id}\" has no split assignment")))?;
        let pool = pools.get(&subset).filter(|p| p.photo_count() >= 2).ok_or_else(|| {
            Error::validation(format!(
                "{subset} subset has faces from fewer than 2 photos; cannot build negatives"
            ))
        })?;
        let swapped = pool.draw_outside(partner.photo, &mut rng).to_string();
        let (a, b) = if replace_b {
            (pos.face_a.clone(), swapped)
        } else {
            (swapped, pos.face_b.clone())
        };
        negatives.push(PairExample::new(a, b, Label::Negative));
    }
    Ok(negatives)
}

/// Union of every fold's positive and negative pairs of a KinFaceW-style
/// manifest, in manifest order.
pub fn build_kinfacew_testset(m: &DatasetManifest) -> Result<Vec<PairExample>> {
    for (i, pair) in m.pairs.iter().enumerate() {
        match pair.fold {
            Some(1..=5) => {}
            Some(f) => {
                return Err(Error::validation(format!(
                    "pair #{i} ({}, {}) has fold {f}; expected 1..=5",
                    pair.face_a, pair.face_b
                )))
            }
            None => {
                return Err(Error::validation(format!(
                    "pair #{i} ({}, {}) has no fold annotation",
                    pair.face_a, pair.face_b
                )))
            }
        }
        if !pair.relation.is_some_and(Relation::is_parent_child) {
            return Err(Error::validation(format!(
                "pair #{i} ({}, {}) needs a relation in MD/MS/FD/FS",
                pair.face_a, pair.face_b
            )));
        }
    }
    Ok(m.pairs.clone())
}

#[derive(Clone, Copy, PartialEq, Eq)]
enum Member {
    Parent,
    Child,
}

/// `versions` negative sets for a positives-only benchmark. In each, every
/// positive has its parent or its child (coin flip) replaced by the
/// same-kind member of a different positive pair. Candidates that would
/// recreate a positive pair are excluded. Version `v` draws from seed
/// `seed + v`.
pub fn build_substitution_negatives(
    positives: &[PairExample],
    m: &DatasetManifest,
    versions: usize,
    seed: u64,
) -> Result<Vec<Vec<PairExample>>> {
    if versions == 0 {
        return Err(Error::validation("neg-versions must be at least 1"));
    }
    if positives.len() < 2 {
        return Err(Error::validation(format!(
            "substitution negatives need at least 2 positive pairs, got {}",
            positives.len()
        )));
    }
    let index = m.face_index();
    let role_of = |id: &str| index.get(id).and_then(|loc| m.face(*loc).role);

    // (parent, child, parent_is_a)
    let mut members: Vec<(&str, &str, bool)> = Vec::with_capacity(positives.len());
    for (i, p) in positives.iter().enumerate() {
        let (ra, rb) = (role_of(&p.face_a), role_of(&p.face_b));
        let entry = match (ra, rb) {
            (Some(a), Some(b)) if a.is_parent() && b.is_child() => (p.face_a.as_str(), p.face_b.as_str(), true),
            (Some(a), Some(b)) if a.is_child() && b.is_parent() => (p.face_b.as_str(), p.face_a.as_str(), false),
            _ => {
                return Err(Error::validation(format!(
                    "positive #{i} ({}, {}) needs one parent and one child role",
                    p.face_a, p.face_b
                )))
            }
        };
        members.push(entry);
    }
    let existing: HashSet<(&str, &str)> = members.iter().map(|&(p, c, _)| (p, c)).collect();

    let mut out = Vec::with_capacity(versions);
    for v in 0..versions {
        let mut rng = rng::seeded(seed.wrapping_add(v as u64));
        let mut negatives = Vec::with_capacity(positives.len());
        for (i, pos) in positives.iter().enumerate() {
            let (parent, child, parent_is_a) = members[i];
            let first = if rng.random::<bool>() {
                Member::Parent
            } else {
                Member::Child
            };
            let second = if first == Member::Parent {
                Member::Child
            } else {
                Member::Parent
            };

            let candidate = |j: usize, which: Member| -> Option<(&str, &str)> {
                if j == i {
                    return None;
                }
                let pair = match which {
                    Member::Parent => (members[j].0, child),
                    Member::Child => (parent, members[j].1),
                };
                (!existing.contains(&pair)).then_some(pair)
            };

            let picked = [first, second]
                .into_iter()
                .find_map(|which| pick_uniform(members.len(), &mut rng, |j| candidate(j, which)));
            let Some((new_parent, new_child)) = picked else {
                return Err(Error::validation(format!(
                    "no substitution for positive #{i} avoids recreating a positive pair"
                )));
            };
            let (a, b) = if parent_is_a {
                (new_parent, new_child)
            } else {
                (new_child, new_parent)
            };
            negatives.push(PairExample {
                face_a: a.to_string(),
                face_b: b.to_string(),
                label: Label::Negative,
                relation: pos.relation,
                fold: pos.fold,
            });
        }
        out.push(negatives);
    }
    Ok(out)
}

/// Uniform choice among indices `0..n` for which `accept` yields a value.
/// Tries rejection sampling first and falls back to enumeration.
fn pick_uniform<T>(n: usize, rng: &mut rng::Rng, accept: impl Fn(usize) -> Option<T>) -> Option<T> {
    for _ in 0..32 {
        if let Some(v) = accept(rng.random_range(0..n)) {
            return Some(v);
        }
    }
    let valid: Vec<usize> = (0..n).filter(|&j| accept(j).is_some()).collect();
    if valid.is_empty() {
        return None;
    }
    accept(valid[rng.random_range(0..valid.len())])
}

/// One negative per positive triplet: the parents are kept and the child is
/// replaced by the child of another triplet with the same child gender.
/// Empty gender strata are allowed; a stratum of exactly one is an error.
pub fn build_tskin_negatives(triplets: &[TripletExample], seed: u64) -> Result<Vec<TripletExample>> {
    let positives: Vec<&TripletExample> = triplets.iter().filter(|t| t.label.is_positive()).collect();
    let mut strata: BTreeMap<u8, Vec<usize>> = BTreeMap::new();
    for (i, t) in positives.iter().enumerate() {
        strata.entry(gender_key(t.child_gender)).or_default().push(i);
    }
    for (key, members) in &strata {
        if members.len() < 2 {
            return Err(Error::validation(format!(
                "child gender stratum {:?} has {} positive triplet(s); at least 2 are needed",
                if *key == 0 {
                    ChildGender::Son
                } else {
                    ChildGender::Daughter
                },
                members.len()
            )));
        }
    }
    let existing: HashSet<(&str, &str, &str)> = positives
        .iter()
        .map(|t| (t.father.as_str(), t.mother.as_str(), t.child.as_str()))
        .collect();

    let mut rng = rng::seeded(seed);
    let mut negatives = Vec::with_capacity(positives.len());
    for (i, t) in positives.iter().enumerate() {
        let stratum = &strata[&gender_key(t.child_gender)];
        let picked = pick_uniform(stratum.len(), &mut rng, |k| {
            let j = stratum[k];
            let child = positives[j].child.as_str();
            let ok = j != i
                && child != t.child
                && child != t.father
                && child != t.mother
                && !existing.contains(&(t.father.as_str(), t.mother.as_str(), child));
            ok.then_some(child)
        });
        let Some(child) = picked else {
            return Err(Error::validation(format!(
                "no replacement child available for triplet ({}, {}, {})",
                t.father, t.mother, t.child
            )));
        };
        negatives.push(TripletExample {
            father: t.father.clone(),
            mother: t.mother.clone(),
            child: child.to_string(),
            label: Label::Negative,
            child_gender: t.child_gender,
        });
    }
    Ok(negatives)
}

fn gender_key(g: ChildGender) -> u8 {
    match g {
        ChildGender::Son => 0,
        ChildGender::Daughter => 1,
    }
}

/// Splits a triplet into its father-child and mother-child pairs.
pub fn triplet_to_pairs(t: &TripletExample) -> (PairExample, PairExample) {
    let (fc, mc) = match t.child_gender {
        ChildGender::Son => (Relation::FS, Relation::MS),
        ChildGender::Daughter => (Relation::FD, Relation::MD),
    };
    (
        PairExample::new(t.father.clone(), t.child.clone(), t.label).with_relation(fc),
        PairExample::new(t.mother.clone(), t.child.clone(), t.label).with_relation(mc),
    )
}

/// How a kinship manifest's test set was assembled.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BenchmarkKind {
    /// Fold-annotated positive and negative pairs used as published.
    FoldedPairs,
    /// Positive and negative pairs used verbatim (no fold annotation).
    VerbatimPairs,
    /// Positive pairs only; negatives drawn by member substitution.
    SubstitutionPairs,
    /// Father-mother-child triplets.
    Triplets,
}

/// Test set versions of one kinship benchmark. Each version holds positives
/// followed by that version's negatives.
#[derive(Debug, Clone, PartialEq)]
pub enum KinshipTestSet {
    Pairs(Vec<Vec<PairExample>>),
    Triplets(Vec<Vec<TripletExample>>),
}

impl KinshipTestSet {
    pub fn versions(&self) -> usize {
        match self {
            KinshipTestSet::Pairs(v) => v.len(),
            KinshipTestSet::Triplets(v) => v.len(),
        }
    }
}

/// Picks the construction rule from what the manifest contains:
/// triplets → triplet protocol (negatives drawn when none are given);
/// pairs with negatives and folds → folded union; pairs with negatives but no
/// folds → verbatim; positive pairs only → substitution negatives.
pub fn build_kinship_testset(
    m: &DatasetManifest,
    versions: usize,
    seed: u64,
) -> Result<(BenchmarkKind, KinshipTestSet)> {
    if !m.triplets.is_empty() {
        if m.triplets.iter().any(|t| !t.label.is_positive()) {
            return Ok((
                BenchmarkKind::Triplets,
                KinshipTestSet::Triplets(vec![m.triplets.clone()]),
            ));
        }
        if versions == 0 {
            return Err(Error::validation("neg-versions must be at least 1"));
        }
        let sets = (0..versions)
            .map(|v| {
                let mut set = m.triplets.clone();
                set.extend(build_tskin_negatives(&m.triplets, seed.wrapping_add(v as u64))?);
                Ok(set)
            })
            .collect::<Result<Vec<_>>>()?;
        return Ok((BenchmarkKind::Triplets, KinshipTestSet::Triplets(sets)));
    }
    if m.pairs.is_empty() {
        return Err(Error::validation("kinship manifest has neither pairs nor triplets"));
    }
    let has_negatives = m.pairs.iter().any(|p| !p.label.is_positive());
    if has_negatives {
        if m.pairs.iter().all(|p| p.fold.is_some()) {
            let set = build_kinfacew_testset(m)?;
            return Ok((BenchmarkKind::FoldedPairs, KinshipTestSet::Pairs(vec![set])));
        }
        return Ok((
            BenchmarkKind::VerbatimPairs,
            KinshipTestSet::Pairs(vec![m.pairs.clone()]),
        ));
    }
    let sets = build_substitution_negatives(&m.pairs, m, versions, seed)?
        .into_iter()
        .map(|neg| {
            let mut set = m.pairs.clone();
            set.extend(neg);
            set
        })
        .collect();
    Ok((BenchmarkKind::SubstitutionPairs, KinshipTestSet::Pairs(sets)))
}
