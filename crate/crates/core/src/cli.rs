//! The `fsp` command line. Every stage reads and writes plain files so each
//! can be rerun on its own.

use std::collections::{BTreeMap, BTreeSet};
use std::ffi::OsString;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use image::{imageops, RgbImage};
use serde::{Deserialize, Serialize};

use crate::dataset::{
    filter_usable_photos, load_manifest, read_json, split_photos, write_json, DatasetManifest, Label, PairExample,
    Relation, Split, SplitAssignment, SplitRatios, DEFAULT_MIN_FACE_PX,
};
use crate::error::{Error, Result};
use crate::evaluation::{breakdown_csv, evaluate_scores, pr_csv, roc_csv, Column, EvalReport, Protocol, ScoredPair};
use crate::features::{
    crop_face, layout, load_embeddings, save_embeddings, write_image, AugmentConfig, EmbeddingMap, FeatureSpec,
    ImageKind, VectorSource,
};
use crate::pairs::{build_kinship_testset, BenchmarkKind, DEFAULT_NEG_VERSIONS};
use crate::pipeline::{
    audit_testset, disk_loader, embedding_views, extract_cue_vectors, fsp_pairs, kinship_cue_views, pair_samples,
    score_pairs,
};
use crate::scorer::{load_params, save_params, train, ScorerConfig, ScorerFile};
use crate::synth::{generate, kinship_manifest, KinshipStyle, SynthConfig};

#[derive(Debug, Parser)]
#[command(
    name = "fsp",
    version,
    about = "Same-photograph confound audit for face-pair and kinship datasets"
)]
struct Cli {
    /// Seed for every random choice made by the command.
    #[arg(long, global = true, default_value_t = 0)]
    seed: u64,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Generate synthetic group photos and their manifest.
    Synth(SynthArgs),
    /// Drop unusable photos and assign the rest to train/validation/test.
    Split(SplitArgs),
    /// Build same-photo positive and different-photo negative pairs.
    Pairs(PairsArgs),
    /// Compute cue features, or ingest external descriptors.
    Features(FeaturesArgs),
    /// Train the pair scorer.
    Train(TrainArgs),
    /// Evaluate a trained scorer on the same-photo test pairs.
    Eval(EvalArgs),
    /// Score a kinship benchmark with a trained scorer.
    Audit(AuditArgs),
    /// Merge evaluation or audit reports into one table.
    Report(ReportArgs),
}

#[derive(Debug, Args)]
struct SynthArgs {
    /// Output directory; receives manifest.json and images/.
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 200)]
    photos: usize,
    #[arg(long, default_value_t = 4)]
    faces_min: usize,
    #[arg(long, default_value_t = 7)]
    faces_max: usize,
    #[arg(long, default_value_t = 300)]
    image_px: u32,
    #[arg(long, default_value_t = 0.9)]
    cue_strength: f64,
    #[arg(long, default_value_t = 2.0)]
    noise_sigma: f64,
    #[arg(long, value_enum, default_value_t = ImageKind::Png)]
    format: ImageKind,
    /// Also write `kinship.json`, a kinship benchmark over the same photos.
    #[arg(long, value_enum)]
    kinship: Option<KinshipStyle>,
}

#[derive(Debug, Args)]
struct SplitArgs {
    #[arg(long)]
    manifest: PathBuf,
    /// Output split file.
    #[arg(long)]
    out: PathBuf,
    /// Train, validation and test fractions.
    #[arg(long, default_value = "0.7,0.1,0.2")]
    split: SplitRatios,
    #[arg(long, default_value_t = DEFAULT_MIN_FACE_PX)]
    min_face_px: u32,
}

#[derive(Debug, Args)]
struct PairsArgs {
    #[arg(long)]
    manifest: PathBuf,
    /// Split file written by `split`.
    #[arg(long)]
    assignment: PathBuf,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Debug, Args)]
struct FeaturesArgs {
    #[arg(long)]
    manifest: PathBuf,
    /// Output FSPE1 file; the feature recipe goes next to it as `<out>.spec.json`.
    #[arg(long)]
    out: PathBuf,
    /// Ingest this FSPE1 file instead of computing cue features.
    #[arg(long)]
    embeddings: Option<PathBuf>,
    /// Crop expansion for the face crops.
    #[arg(long, default_value_t = 0.0)]
    expansion: f64,
    #[arg(long, default_value_t = 256)]
    resize_px: u32,
    #[arg(long, default_value_t = 224)]
    crop_px: u32,
    /// Keep only the mean a* and b* components.
    #[arg(long)]
    chroma_only: bool,
}

#[derive(Debug, Args)]
struct TrainArgs {
    /// FSPE1 features written by `features`.
    #[arg(long)]
    features: PathBuf,
    /// Pair file written by `pairs`.
    #[arg(long)]
    pairs: PathBuf,
    /// Output parameter file (.fspw); the training log goes to `<out>.log.json`.
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 64)]
    batch: usize,
    #[arg(long, default_value_t = 30)]
    max_epochs: usize,
    #[arg(long, default_value_t = 3)]
    patience: usize,
    #[arg(long, default_value_t = 512)]
    proj_dim: usize,
    /// Widths of the two hidden layers.
    #[arg(long, value_delimiter = ',', default_values_t = [1024, 256])]
    hidden: Vec<usize>,
    #[arg(long, default_value_t = 0.1)]
    dropout: f64,
    #[arg(long, default_value_t = 0.1)]
    lr0: f64,
    /// Use a separate projection for each face.
    #[arg(long)]
    separate_projections: bool,
}

#[derive(Debug, Args)]
struct EvalArgs {
    #[arg(long)]
    model: PathBuf,
    #[arg(long)]
    features: PathBuf,
    #[arg(long)]
    pairs: PathBuf,
    /// Output report JSON; ROC and PR curves go next to it as CSV.
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 5)]
    folds: usize,
}

#[derive(Debug, Args)]
struct AuditArgs {
    #[arg(long)]
    model: PathBuf,
    /// Kinship benchmark manifest.
    #[arg(long)]
    manifest: PathBuf,
    /// Output directory.
    #[arg(long)]
    out: PathBuf,
    /// External descriptors for the benchmark faces; required for models
    /// trained on external descriptors.
    #[arg(long)]
    embeddings: Option<PathBuf>,
    /// Crop expansions to audit, comma separated.
    #[arg(long, value_delimiter = ',', default_values_t = [0.0, 0.15])]
    expansion: Vec<f64>,
    #[arg(long, default_value_t = 5)]
    folds: usize,
    /// Use the manifest's published folds when every pair has one.
    #[arg(long)]
    published_folds: bool,
    #[arg(long, default_value_t = DEFAULT_NEG_VERSIONS)]
    neg_versions: usize,
    /// Number of top-scoring pairs rendered to the gallery.
    #[arg(long, default_value_t = 8)]
    gallery: usize,
}

#[derive(Debug, Args)]
struct ReportArgs {
    /// Report files from `eval` or `audit`, each optionally prefixed by `NAME=`.
    #[arg(long = "input", required = true)]
    inputs: Vec<String>,
    /// Output CSV table; a JSON copy goes to `<out>.json`.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Debug, Serialize, Deserialize)]
struct SplitFile {
    min_face_px: u32,
    ratios: SplitRatios,
    seed: u64,
    assignment: SplitAssignment,
}

#[derive(Debug, Serialize, Deserialize)]
struct PairsFile {
    seed: u64,
    train: Vec<PairExample>,
    validation: Vec<PairExample>,
    test: Vec<PairExample>,
}

#[derive(Debug, Serialize, Deserialize)]
struct AuditEntry {
    expansion: Option<f64>,
    report: EvalReport,
}

#[derive(Debug, Serialize, Deserialize)]
struct AuditFile {
    benchmark: BenchmarkKind,
    versions: usize,
    results: Vec<AuditEntry>,
}

#[derive(Debug, Serialize)]
struct GalleryEntry {
    rank: usize,
    file: String,
    face_a: String,
    face_b: String,
    label: Label,
    relation: Option<Relation>,
    score: f64,
}

#[derive(Debug, Serialize)]
struct ReportRow {
    name: String,
    auc: f64,
    eer: f64,
    ap: f64,
    accuracy: BTreeMap<Column, f64>,
}

/// Parses `argv` (program name first), runs the command and returns the
/// process exit code: 0 on success, 1 for invalid input, 2 for I/O failures.
pub fn run<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    match dispatch(cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}

fn dispatch(cli: Cli) -> Result<()> {
    let seed = cli.seed;
    match cli.command {
        Command::Synth(a) => synth(a, seed),
        Command::Split(a) => split(a, seed),
        Command::Pairs(a) => pairs(a, seed),
        Command::Features(a) => features(a),
        Command::Train(a) => train_cmd(a, seed),
        Command::Eval(a) => eval(a, seed),
        Command::Audit(a) => audit(a, seed),
        Command::Report(a) => report(a),
    }
}

fn manifest_root(path: &Path) -> PathBuf {
    path.parent().map(Path::to_path_buf).unwrap_or_default()
}

fn sidecar(path: &Path, suffix: &str) -> PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(suffix);
    PathBuf::from(s)
}

fn create_dir(dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}

fn synth(a: SynthArgs, seed: u64) -> Result<()> {
    let cfg = SynthConfig {
        n_photos: a.photos,
        faces_min: a.faces_min,
        faces_max: a.faces_max,
        image_px: a.image_px,
        cue_strength: a.cue_strength,
        noise_sigma: a.noise_sigma,
        seed,
        format: a.format,
    };
    let path = generate(&cfg, &a.out)?;
    println!("{}", path.display());
    if let Some(style) = a.kinship {
        let all = [Relation::FD, Relation::FS, Relation::MD, Relation::MS];
        let kin = kinship_manifest(&load_manifest(&path)?, style, &all);
        let kin_path = a.out.join("kinship.json");
        write_json(&kin, &kin_path)?;
        println!("{}", kin_path.display());
    }
    Ok(())
}

fn split(a: SplitArgs, seed: u64) -> Result<()> {
    a.split.validate()?;
    let m = filter_usable_photos(&load_manifest(&a.manifest)?, a.min_face_px);
    let assignment = split_photos(&m, a.split, seed)?;
    log::info!(
        "split {} usable photos: {} / {} / {}",
        assignment.len(),
        assignment.count(Split::Train),
        assignment.count(Split::Validation),
        assignment.count(Split::Test)
    );
    write_json(
        &SplitFile {
            min_face_px: a.min_face_px,
            ratios: a.split,
            seed,
            assignment,
        },
        &a.out,
    )
}

fn pairs(a: PairsArgs, seed: u64) -> Result<()> {
    let split: SplitFile = read_json(&a.assignment, "split file")?;
    let m = filter_usable_photos(&load_manifest(&a.manifest)?, split.min_face_px);
    let [train, validation, test] = Split::ALL.map(|s| fsp_pairs(&m, &split.assignment, s, seed));
    write_json(
        &PairsFile {
            seed,
            train: train?,
            validation: validation?,
            test: test?,
        },
        &a.out,
    )
}

fn features(a: FeaturesArgs) -> Result<()> {
    let m = load_manifest(&a.manifest)?;
    let (vectors, spec) = match &a.embeddings {
        Some(path) => {
            let vectors = load_embeddings(path)?;
            let missing = m
                .photos
                .iter()
                .flat_map(|p| &p.faces)
                .filter(|f| !vectors.contains_key(&f.face_id))
                .count();
            if missing > 0 {
                log::warn!("{missing} manifest faces have no vector in {}", path.display());
            }
            (vectors, FeatureSpec::external())
        }
        None => {
            let spec = FeatureSpec {
                expansion: a.expansion,
                dims: a.chroma_only.then(|| layout::CHROMA_MEANS.to_vec()),
                ..FeatureSpec::cue(AugmentConfig {
                    resize_px: a.resize_px,
                    crop_px: a.crop_px,
                    ..Default::default()
                })
            };
            let root = manifest_root(&a.manifest);
            let vectors = extract_cue_vectors(&m, &spec, &mut disk_loader(&root))?;
            (vectors, spec)
        }
    };
    save_embeddings(vectors.values(), &a.out)?;
    write_json(&spec, sidecar(&a.out, ".spec.json"))
}

/// Vectors plus the recipe that produced them. Files without a recipe are
/// treated as external descriptors.
fn load_features(path: &Path) -> Result<(EmbeddingMap, FeatureSpec)> {
    let vectors = load_embeddings(path)?;
    let spec_path = sidecar(path, ".spec.json");
    let spec = if spec_path.exists() {
        read_json(&spec_path, "feature recipe")?
    } else {
        FeatureSpec::external()
    };
    Ok((vectors, spec))
}

fn train_cmd(a: TrainArgs, seed: u64) -> Result<()> {
    let [h1, h2] = a.hidden[..] else {
        return Err(Error::validation(format!(
            "--hidden takes two widths, got {:?}",
            a.hidden
        )));
    };
    let (vectors, features) = load_features(&a.features)?;
    let pairs: PairsFile = read_json(&a.pairs, "pair file")?;
    let input_dim = vectors
        .values()
        .next()
        .map(|v| v.dim())
        .ok_or_else(|| Error::validation(format!("{} holds no vectors", a.features.display())))?;
    let config = ScorerConfig {
        input_dim,
        proj_dim: a.proj_dim,
        hidden_dims: (h1, h2),
        dropout_p: a.dropout,
        lr0: a.lr0,
        max_epochs: a.max_epochs,
        patience: a.patience,
        batch_size: a.batch,
        shared_projection: !a.separate_projections,
        seed,
        ..Default::default()
    };
    let (params, log) = train(
        &config,
        &pair_samples(&pairs.train, &vectors)?,
        &pair_samples(&pairs.validation, &vectors)?,
    )?;
    log::info!(
        "best validation AUC {:.4} at epoch {} ({:?})",
        log.best_val_auc,
        log.best_epoch,
        log.stop_reason
    );
    save_params(
        &ScorerFile {
            config,
            features,
            params,
        },
        &a.out,
    )?;
    write_json(&log, sidecar(&a.out, ".log.json"))
}

fn write_curves(report: &EvalReport, stem: &Path) -> Result<()> {
    write_text(&sidecar(stem, ".roc.csv"), &roc_csv(&report.roc))?;
    write_text(&sidecar(stem, ".pr.csv"), &pr_csv(&report.pr))
}

fn eval(a: EvalArgs, seed: u64) -> Result<()> {
    let model = load_params(&a.model)?;
    let (vectors, _) = load_features(&a.features)?;
    let pairs: PairsFile = read_json(&a.pairs, "pair file")?;
    let scored = score_pairs(&model.params, &pairs.test, &vectors)?;
    let protocol = Protocol {
        folds: a.folds,
        seed,
        published_folds: false,
    };
    let report = evaluate_scores(&scored, &protocol)?;
    println!("AUC {:.4}  EER {:.4}  AP {:.4}", report.auc, report.eer, report.ap);
    write_json(&report, &a.out)?;
    write_curves(&report, &a.out.with_extension(""))
}

fn expansion_label(e: Option<f64>) -> String {
    e.map_or_else(|| "external".to_string(), |e| format!("e{e}"))
}

fn audit(a: AuditArgs, seed: u64) -> Result<()> {
    let model = load_params(&a.model)?;
    let m = load_manifest(&a.manifest)?;
    let root = manifest_root(&a.manifest);
    if let Some(bad) = a.expansion.iter().find(|e| !e.is_finite() || **e < 0.0) {
        return Err(Error::validation(format!("crop expansion {bad} must be >= 0")));
    }
    let (kind, set) = build_kinship_testset(&m, a.neg_versions, seed)?;
    let protocol = Protocol {
        folds: a.folds,
        seed,
        published_folds: a.published_folds,
    };
    create_dir(&a.out)?;

    // External descriptors have no crops to vary, so they give one result.
    let external = model.features.source == VectorSource::External;
    let runs: Vec<Option<f64>> = if external {
        vec![None]
    } else {
        a.expansion.iter().copied().map(Some).collect()
    };
    let embeddings = match (&a.embeddings, external) {
        (Some(path), true) => Some(load_embeddings(path)?),
        (None, true) => {
            return Err(Error::validation(
                "this model was trained on external descriptors; pass --embeddings",
            ))
        }
        (Some(_), false) => {
            log::warn!("--embeddings ignored: the model scores cue features");
            None
        }
        (None, false) => None,
    };

    let mut load = disk_loader(&root);
    let mut results = Vec::new();
    let mut top_pairs = Vec::new();
    for e in runs {
        let views = match (&embeddings, e) {
            (Some(v), _) => embedding_views(v),
            (None, Some(e)) => kinship_cue_views(&m, &set, &model.features, e, &mut load)?,
            (None, None) => unreachable!("cue audits always carry an expansion"),
        };
        let (report, scored) = audit_testset(&model.params, &set, &views, &protocol)?;
        for w in &report.warnings {
            log::warn!("{w}");
        }
        write_curves(&report, &a.out.join(expansion_label(e)))?;
        if top_pairs.is_empty() {
            top_pairs = scored;
        }
        results.push(AuditEntry { expansion: e, report });
    }

    let rows: Vec<(String, &EvalReport)> = results
        .iter()
        .map(|r| (expansion_label(r.expansion), &r.report))
        .collect();
    write_text(&a.out.join("breakdown.csv"), &breakdown_csv(&rows))?;
    let first_expansion = results.first().and_then(|r| r.expansion).unwrap_or(0.0);
    write_json(
        &AuditFile {
            benchmark: kind,
            versions: set.versions(),
            results,
        },
        a.out.join("audit.json"),
    )?;
    if a.gallery > 0 {
        write_gallery(&m, &root, top_pairs, a.gallery, first_expansion, &a.out.join("gallery"))?;
    }
    Ok(())
}

const GALLERY_PX: u32 = 112;

/// Side-by-side crops of the highest-scoring pairs, with an index file.
fn write_gallery(
    m: &DatasetManifest,
    root: &Path,
    mut scored: Vec<ScoredPair>,
    count: usize,
    expansion: f64,
    dir: &Path,
) -> Result<()> {
    scored.sort_by(|x, y| y.score.total_cmp(&x.score));
    scored.truncate(count);
    let wanted: BTreeSet<&str> = scored
        .iter()
        .flat_map(|s| [s.pair.face_a.as_str(), s.pair.face_b.as_str()])
        .collect();
    let mut load = disk_loader(root);
    let crops = match crate::pipeline::map_faces(m, Some(&wanted), &mut load, |img, bbox| {
        let crop = crop_face(img, bbox, expansion);
        Ok(imageops::resize(
            &crop,
            GALLERY_PX,
            GALLERY_PX,
            imageops::FilterType::Triangle,
        ))
    }) {
        Ok(c) => c.into_iter().collect::<BTreeMap<String, RgbImage>>(),
        Err(e) => {
            log::warn!("gallery skipped: {e}");
            return Ok(());
        }
    };
    create_dir(dir)?;
    let mut index = Vec::new();
    for (rank, s) in scored.iter().enumerate() {
        let (Some(a), Some(b)) = (crops.get(&s.pair.face_a), crops.get(&s.pair.face_b)) else {
            continue;
        };
        let mut canvas = RgbImage::new(2 * GALLERY_PX, GALLERY_PX);
        imageops::replace(&mut canvas, a, 0, 0);
        imageops::replace(&mut canvas, b, i64::from(GALLERY_PX), 0);
        let file = format!("rank{:02}.png", rank + 1);
        write_image(&canvas, dir.join(&file), ImageKind::Png)?;
        index.push(GalleryEntry {
            rank: rank + 1,
            file,
            face_a: s.pair.face_a.clone(),
            face_b: s.pair.face_b.clone(),
            label: s.pair.label,
            relation: s.pair.relation,
            score: s.score,
        });
    }
    write_json(&index, dir.join("gallery.json"))
}

fn report(a: ReportArgs) -> Result<()> {
    let mut rows = Vec::new();
    for input in &a.inputs {
        let (name, path) = match input.split_once('=') {
            Some((n, p)) => (n.to_string(), PathBuf::from(p)),
            None => {
                let p = PathBuf::from(input);
                let stem = p
                    .file_stem()
                    .map(|s| s.to_string_lossy().into_owned())
                    .unwrap_or_default();
                (stem, p)
            }
        };
        let value: serde_json::Value = read_json(&path, "report")?;
        let bad = |e: serde_json::Error| Error::parse(format!("report {}", path.display()), e);
        if value.get("results").is_some() {
            let audit: AuditFile = serde_json::from_value(value).map_err(bad)?;
            let several = audit.results.len() > 1;
            for r in audit.results {
                let label = if several {
                    format!("{name}@{}", expansion_label(r.expansion))
                } else {
                    name.clone()
                };
                rows.push((label, r.report));
            }
        } else {
            rows.push((name, serde_json::from_value(value).map_err(bad)?));
        }
    }
    let refs: Vec<(String, &EvalReport)> = rows.iter().map(|(n, r)| (n.clone(), r)).collect();
    write_text(&a.out, &breakdown_csv(&refs))?;
    let summary: Vec<ReportRow> = rows
        .iter()
        .map(|(name, r)| ReportRow {
            name: name.clone(),
            auc: r.auc,
            eer: r.eer,
            ap: r.ap,
            accuracy: r.accuracy.clone(),
        })
        .collect();
    write_json(&summary, sidecar(&a.out, ".json"))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_pipeline_flags() {
        let cli = Cli::try_parse_from([
            "fsp",
            "split",
            "--manifest",
            "m.json",
            "--out",
            "s.json",
            "--split",
            "0.8,0.1,0.1",
            "--seed",
            "4",
        ])
        .unwrap();
        assert_eq!(cli.seed, 4);
        let Command::Split(a) = cli.command else {
            panic!("wrong subcommand")
        };
        assert_eq!(a.split.train, 0.8);
        assert_eq!(a.min_face_px, 50);
    }

    #[test]
    fn expansion_list() {
        let cli = Cli::try_parse_from([
            "fsp",
            "audit",
            "--model",
            "w",
            "--manifest",
            "k",
            "--out",
            "o",
            "--expansion",
            "0.0,0.15,0.3",
        ])
        .unwrap();
        let Command::Audit(a) = cli.command else {
            panic!("wrong subcommand")
        };
        assert_eq!(a.expansion, vec![0.0, 0.15, 0.3]);
        assert_eq!(a.neg_versions, 5);
        assert_eq!(a.folds, 5);
    }

    #[test]
    fn usage_errors_exit_one() {
        assert_eq!(run(["fsp", "train", "--bogus"]), 1);
        assert_eq!(
            run(["fsp", "split", "--manifest", "m", "--out", "o", "--split", "0.5,0.5"]),
            1
        );
        assert_eq!(run(["fsp", "--help"]), 0);
    }

    #[test]
    fn sidecar_names() {
        assert_eq!(
            sidecar(Path::new("a/f.fspe"), ".spec.json"),
            PathBuf::from("a/f.fspe.spec.json")
        );
        assert_eq!(expansion_label(Some(0.15)), "e0.15");
        assert_eq!(expansion_label(None), "external");
    }
}
