//! Independent reference implementations and generators shared by the
//! integration tests.

#![allow(dead_code)]

use std::collections::BTreeSet;

use fsp_core::dataset::{BBox, DatasetManifest, FaceRecord, PhotoRecord};
use fsp_core::scorer::{backward, forward_logits, init_params, loss, Dense, InputNorm, ScorerConfig, ScorerParams};
use num_rational::Ratio;
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type Q = Ratio<i128>;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Random scored set with scores on a 1/16 grid so ties are common and every
/// midpoint is exact.
pub fn random_scored(r: &mut ChaCha8Rng, min_per_class: usize, max_len: usize) -> Vec<(f64, bool)> {
    loop {
        let n = r.random_range(2 * min_per_class.max(1)..=max_len);
        let set: Vec<(f64, bool)> = (0..n)
            .map(|_| (f64::from(r.random_range(0..=16u8)) / 16.0, r.random::<bool>()))
            .collect();
        let pos = set.iter().filter(|s| s.1).count();
        if pos >= min_per_class.max(1) && n - pos >= min_per_class.max(1) {
            return set;
        }
    }
}

/// -inf, midpoints of adjacent distinct scores, +inf.
pub fn brute_thresholds(items: &[(f64, bool)]) -> Vec<f64> {
    let mut distinct: Vec<f64> = items.iter().map(|s| s.0).collect();
    distinct.sort_by(f64::total_cmp);
    distinct.dedup();
    let mut t = vec![f64::NEG_INFINITY];
    t.extend(distinct.windows(2).map(|w| (w[0] + w[1]) / 2.0));
    t.push(f64::INFINITY);
    t
}

fn counts(items: &[(f64, bool)]) -> (i128, i128) {
    let p = items.iter().filter(|s| s.1).count() as i128;
    (p, items.len() as i128 - p)
}

/// Probability that a random positive outscores a random negative, ties ½.
pub fn brute_auc(items: &[(f64, bool)]) -> Q {
    let (p, n) = counts(items);
    let mut twice = 0i128;
    for a in items.iter().filter(|s| s.1) {
        for b in items.iter().filter(|s| !s.1) {
            twice += if a.0 > b.0 {
                2
            } else if a.0 == b.0 {
                1
            } else {
                0
            };
        }
    }
    Q::new(twice, 2 * p * n)
}

/// Step-wise AP over descending distinct score levels.
pub fn brute_ap(items: &[(f64, bool)]) -> Q {
    let (p, _) = counts(items);
    let mut levels: Vec<f64> = items.iter().map(|s| s.0).collect();
    levels.sort_by(|a, b| b.total_cmp(a));
    levels.dedup();
    let mut ap = Q::from_integer(0);
    let mut prev_recall = Q::from_integer(0);
    for t in levels {
        let tp = items.iter().filter(|s| s.1 && s.0 >= t).count() as i128;
        let fp = items.iter().filter(|s| !s.1 && s.0 >= t).count() as i128;
        let recall = Q::new(tp, p);
        ap += (recall - prev_recall) * Q::new(tp, tp + fp);
        prev_recall = recall;
    }
    ap
}

/// (threshold, fp, fn) minimising |FPR - FNR|; the lowest threshold wins ties.
pub fn brute_eer(items: &[(f64, bool)]) -> (f64, i128, i128) {
    let (p, n) = counts(items);
    let mut best: Option<(Q, f64, i128, i128)> = None;
    for t in brute_thresholds(items) {
        let fp = items.iter().filter(|s| !s.1 && s.0 >= t).count() as i128;
        let fn_ = items.iter().filter(|s| s.1 && s.0 < t).count() as i128;
        let diff = Q::new(fp, n) - Q::new(fn_, p);
        let gap = if diff < Q::from_integer(0) { -diff } else { diff };
        if best.as_ref().is_none_or(|b| gap < b.0) {
            best = Some((gap, t, fp, fn_));
        }
    }
    let (_, t, fp, fn_) = best.expect("thresholds");
    (t, fp, fn_)
}

/// Accuracy-maximising threshold (lowest on ties) and its correct count.
pub fn brute_best_threshold(items: &[(f64, bool)]) -> (f64, usize) {
    let mut best = (f64::NAN, 0usize);
    for t in brute_thresholds(items) {
        let correct = items.iter().filter(|s| (s.0 >= t) == s.1).count();
        if best.0.is_nan() || correct > best.1 {
            best = (t, correct);
        }
    }
    best
}

/// Per-fold (threshold, held-out accuracy) for a given fold assignment.
pub fn brute_cv(items: &[(f64, bool)], assignment: &[usize], folds: usize) -> Vec<(f64, f64)> {
    (0..folds)
        .map(|k| {
            let train: Vec<(f64, bool)> = items
                .iter()
                .zip(assignment)
                .filter(|(_, f)| **f != k)
                .map(|(s, _)| *s)
                .collect();
            let held: Vec<(f64, bool)> = items
                .iter()
                .zip(assignment)
                .filter(|(_, f)| **f == k)
                .map(|(s, _)| *s)
                .collect();
            let (t, _) = brute_best_threshold(&train);
            let correct = held.iter().filter(|s| (s.0 >= t) == s.1).count();
            (t, correct as f64 / held.len() as f64)
        })
        .collect()
}

/// Largest relative error between `backward` and central differences over
/// every parameter, with differences below `floor` treated as absolute.
pub fn gradient_check(
    params: &ScorerParams,
    va: &[f64],
    vb: &[f64],
    positive: bool,
    mask: Option<&[f64]>,
    step: f64,
    floor: f64,
) -> f64 {
    let (_, grads) = backward(params, va, vb, positive, mask).unwrap();
    let objective = |p: &ScorerParams| loss(forward_logits(p, va, vb, mask).unwrap(), positive);
    let mut worst: f64 = 0.0;
    let mut probe = params.clone();
    for (li, g_layer) in grads.layers.iter().enumerate() {
        let analytic: Vec<f64> = g_layer.flat().copied().collect();
        for (k, &a) in analytic.iter().enumerate() {
            let original = *probe.layers_mut()[li].flat_mut().nth(k).unwrap();
            *probe.layers_mut()[li].flat_mut().nth(k).unwrap() = original + step;
            let up = objective(&probe);
            *probe.layers_mut()[li].flat_mut().nth(k).unwrap() = original - step;
            let down = objective(&probe);
            *probe.layers_mut()[li].flat_mut().nth(k).unwrap() = original;
            let numeric = (up - down) / (2.0 * step);
            let err = (a - numeric).abs() / a.abs().max(numeric.abs()).max(floor);
            worst = worst.max(err);
        }
    }
    worst
}

pub fn layer_shapes(p: &ScorerParams) -> Vec<(usize, usize)> {
    p.layers().iter().map(|l: &&Dense| (l.out_dim, l.in_dim)).collect()
}

/// Manifest of `usable` photos that pass the 50 px filter, plus `unusable`
/// photos that do not, with face counts and sizes drawn at random.
pub fn random_manifest(r: &mut ChaCha8Rng, usable: usize, unusable: usize) -> DatasetManifest {
    let mut photos = Vec::new();
    let mut ids: Vec<usize> = (0..usable + unusable).collect();
    // Interleave so photo order says nothing about usability.
    for i in (1..ids.len()).rev() {
        ids.swap(i, r.random_range(0..=i));
    }
    for (slot, &i) in ids.iter().enumerate() {
        let photo_id = format!("ph{slot:04}");
        let big = r.random_range(if i < usable { 2..=6 } else { 0..=1 });
        let small = r.random_range(0..=2);
        let mut faces = Vec::new();
        for k in 0..big + small {
            let side = if k < big {
                r.random_range(50..=90)
            } else {
                r.random_range(10..50)
            };
            let col = (k % 4) as u32;
            let row = (k / 4) as u32;
            faces.push(FaceRecord::new(
                format!("{photo_id}_f{k}"),
                BBox::new(col * 100, row * 100, side, side),
            ));
        }
        photos.push(PhotoRecord {
            photo_id,
            image_path: format!("img/{slot}.png").into(),
            width: 400,
            height: 200,
            faces,
        });
    }
    DatasetManifest {
        photos,
        ..Default::default()
    }
}

pub fn photo_of(m: &DatasetManifest, face: &str) -> String {
    let loc = m.face_index()[face];
    m.photos[loc.photo].photo_id.clone()
}

pub fn photo_set<'a>(ids: impl IntoIterator<Item = &'a str>) -> BTreeSet<String> {
    ids.into_iter().map(str::to_string).collect()
}

/// Small scorer configuration with every weight redrawn from U[-1, 1].
pub fn random_params(r: &mut ChaCha8Rng, shared: bool, standardize: bool) -> (ScorerConfig, ScorerParams) {
    let cfg = ScorerConfig {
        input_dim: r.random_range(1..=8),
        proj_dim: r.random_range(1..=8),
        hidden_dims: (r.random_range(1..=8), r.random_range(1..=8)),
        shared_projection: shared,
        seed: r.random(),
        ..Default::default()
    };
    let mut params = init_params(&cfg).unwrap();
    for layer in params.layers_mut() {
        for w in layer.flat_mut() {
            *w = r.random_range(-1.0..1.0);
        }
    }
    if standardize {
        let d = cfg.input_dim;
        params.input_norm = Some(InputNorm {
            shift: (0..d).map(|_| r.random_range(-1.0..1.0)).collect(),
            scale: (0..d).map(|_| r.random_range(0.5..2.0)).collect(),
        });
    }
    (cfg, params)
}

pub fn random_vec(r: &mut ChaCha8Rng, len: usize) -> Vec<f64> {
    (0..len).map(|_| r.random_range(-2.0..2.0)).collect()
}

/// Inverted-dropout mask with keep scale 1 / (1 - p).
pub fn random_mask(r: &mut ChaCha8Rng, len: usize, p: f64) -> Vec<f64> {
    (0..len)
        .map(|_| if r.random::<f64>() < p { 0.0 } else { 1.0 / (1.0 - p) })
        .collect()
}

/// The scorer's logits written out as explicit loops.
pub fn reference_logits(p: &ScorerParams, va: &[f64], vb: &[f64], mask: Option<&[f64]>) -> [f64; 2] {
    #[allow(clippy::needless_range_loop)]
    fn dense(l: &Dense, x: &[f64], relu: bool) -> Vec<f64> {
        let mut out = vec![0.0; l.out_dim];
        for o in 0..l.out_dim {
            let mut acc = 0.0;
            for i in 0..l.in_dim {
                acc += l.weight[o * l.in_dim + i] * x[i];
            }
            acc += l.bias[o];
            out[o] = if relu && acc < 0.0 { 0.0 } else { acc };
        }
        out
    }
    let norm = |v: &[f64]| -> Vec<f64> {
        match &p.input_norm {
            Some(n) => v
                .iter()
                .enumerate()
                .map(|(i, x)| (x - n.shift[i]) * n.scale[i])
                .collect(),
            None => v.to_vec(),
        }
    };
    let pa = dense(&p.projection, &norm(va), true);
    let pb = dense(p.projection_b.as_ref().unwrap_or(&p.projection), &norm(vb), true);
    let mut cat = pa;
    cat.extend(pb);
    let mut h1 = dense(&p.hidden1, &cat, true);
    if let Some(m) = mask {
        for (h, k) in h1.iter_mut().zip(m) {
            *h *= k;
        }
    }
    let h2 = dense(&p.hidden2, &h1, true);
    let z = dense(&p.output, &h2, false);
    [z[0], z[1]]
}

pub struct Run {
    pub code: i32,
    pub stdout: String,
    pub stderr: String,
}

/// Runs the `fsp` binary with `args`.
pub fn fsp<S: AsRef<std::ffi::OsStr>>(args: &[S]) -> Run {
    let out = std::process::Command::new(env!("CARGO_BIN_EXE_fsp"))
        .args(args)
        .output()
        .expect("spawn fsp");
    Run {
        code: out.status.code().unwrap_or(-1),
        stdout: String::from_utf8_lossy(&out.stdout).into_owned(),
        stderr: String::from_utf8_lossy(&out.stderr).into_owned(),
    }
}

/// Like [`fsp`] but panics with stderr unless the command succeeds.
pub fn fsp_ok<S: AsRef<std::ffi::OsStr>>(args: &[S]) -> Run {
    let run = fsp(args);
    assert_eq!(
        run.code,
        0,
        "fsp {:?} failed: {}",
        args.iter().map(|a| a.as_ref().to_owned()).collect::<Vec<_>>(),
        run.stderr
    );
    run
}

/// Synthesizes a dataset with kinship benchmarks and trains a small cue
/// scorer on it; returns the model path.
pub fn small_trained_model(dir: &std::path::Path, photos: usize, seed: u64) -> std::path::PathBuf {
    let d = |name: &str| dir.join(name).to_string_lossy().into_owned();
    let seed = seed.to_string();
    fsp_ok(&[
        "synth",
        "--out",
        &d("data"),
        "--photos",
        &photos.to_string(),
        "--seed",
        &seed,
        "--kinship",
        "pairs",
    ]);
    fsp_ok(&[
        "split",
        "--manifest",
        &d("data/manifest.json"),
        "--out",
        &d("split.json"),
        "--seed",
        &seed,
    ]);
    fsp_ok(&[
        "pairs",
        "--manifest",
        &d("data/manifest.json"),
        "--assignment",
        &d("split.json"),
        "--out",
        &d("pairs.json"),
        "--seed",
        &seed,
    ]);
    fsp_ok(&[
        "features",
        "--manifest",
        &d("data/manifest.json"),
        "--out",
        &d("feat.fspe"),
        "--resize-px",
        "64",
        "--crop-px",
        "56",
    ]);
    fsp_ok(&[
        "train",
        "--features",
        &d("feat.fspe"),
        "--pairs",
        &d("pairs.json"),
        "--out",
        &d("model.fspw"),
        "--proj-dim",
        "32",
        "--hidden",
        "64,32",
        "--max-epochs",
        "15",
        "--patience",
        "4",
        "--seed",
        &seed,
    ]);
    dir.join("model.fspw")
}
