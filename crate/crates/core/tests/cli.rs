mod common;

use std::fs;

use common::*;
use serde_json::Value;

fn read_json(path: &std::path::Path) -> Value {
    serde_json::from_str(&fs::read_to_string(path).unwrap()).unwrap()
}

fn accuracy_keys(report: &Value) -> Vec<String> {
    report["accuracy"].as_object().unwrap().keys().cloned().collect()
}

#[test]
fn end_to_end_workflow() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path();
    let d = |name: &str| dir.join(name).to_string_lossy().into_owned();
    let model = small_trained_model(dir, 200, 7);
    assert!(model.exists());
    assert!(dir.join("model.fspw.log.json").exists());
    assert!(dir.join("feat.fspe.spec.json").exists());

    fsp_ok(&[
        "eval",
        "--model",
        &d("model.fspw"),
        "--features",
        &d("feat.fspe"),
        "--pairs",
        &d("pairs.json"),
        "--out",
        &d("eval.json"),
    ]);
    let report = read_json(&dir.join("eval.json"));
    let auc = report["auc"].as_f64().unwrap();
    assert!((0.5..=1.0).contains(&auc), "auc {auc}");
    assert!(report["n_positive"].as_u64().unwrap() > 0);
    assert_eq!(report["n_positive"], report["n_negative"]);
    assert!(fs::read_to_string(dir.join("eval.roc.csv"))
        .unwrap()
        .starts_with("fpr,tpr\n"));
    assert!(fs::read_to_string(dir.join("eval.pr.csv"))
        .unwrap()
        .starts_with("recall,precision\n"));

    fsp_ok(&[
        "audit",
        "--model",
        &d("model.fspw"),
        "--manifest",
        &d("data/kinship.json"),
        "--out",
        &d("audit"),
        "--gallery",
        "3",
    ]);
    let audit = read_json(&dir.join("audit/audit.json"));
    let results = audit["results"].as_array().unwrap();
    assert_eq!(results.len(), 2);
    assert_eq!(accuracy_keys(&results[0]["report"]), ["All", "FD", "FS", "MD", "MS"]);
    let csv = fs::read_to_string(dir.join("audit/breakdown.csv")).unwrap();
    assert!(csv.starts_with("dataset,MD,MS,FD,FS,All\n"), "{csv}");
    assert_eq!(csv.lines().count(), 3);
    assert!(dir.join("audit/gallery/rank01.png").exists());
    assert!(!dir
        .join("audit")
        .read_dir()
        .unwrap()
        .any(|e| e.unwrap().path().extension().is_some_and(|x| x == "fspw")));

    fsp_ok(&[
        "report",
        "--input",
        &format!("fsp={}", d("eval.json")),
        "--input",
        &d("audit/audit.json"),
        "--out",
        &d("table.csv"),
    ]);
    let table = fs::read_to_string(dir.join("table.csv")).unwrap();
    assert!(table.lines().nth(1).unwrap().starts_with("fsp,"), "{table}");
    assert!(dir.join("table.csv.json").exists());
}

#[test]
fn same_seed_gives_identical_split_and_pairs() {
    let tmp = tempfile::tempdir().unwrap();
    let d = |name: &str| tmp.path().join(name).to_string_lossy().into_owned();
    fsp_ok(&[
        "synth",
        "--out",
        &d("data"),
        "--photos",
        "30",
        "--faces-max",
        "4",
        "--image-px",
        "200",
        "--seed",
        "3",
    ]);
    for run in ["a", "b"] {
        fsp_ok(&[
            "split",
            "--manifest",
            &d("data/manifest.json"),
            "--out",
            &d(&format!("split_{run}.json")),
            "--seed",
            "11",
        ]);
        fsp_ok(&[
            "pairs",
            "--manifest",
            &d("data/manifest.json"),
            "--assignment",
            &d(&format!("split_{run}.json")),
            "--out",
            &d(&format!("pairs_{run}.json")),
            "--seed",
            "11",
        ]);
    }
    for stem in ["split", "pairs"] {
        let a = fs::read(d(&format!("{stem}_a.json"))).unwrap();
        let b = fs::read(d(&format!("{stem}_b.json"))).unwrap();
        assert_eq!(a, b, "{stem} differs");
    }
    fsp_ok(&[
        "split",
        "--manifest",
        &d("data/manifest.json"),
        "--out",
        &d("split_c.json"),
        "--seed",
        "12",
    ]);
    assert_ne!(
        fs::read(d("split_a.json")).unwrap(),
        fs::read(d("split_c.json")).unwrap()
    );
}

#[test]
fn missing_input_exits_with_io_code() {
    let tmp = tempfile::tempdir().unwrap();
    let missing = tmp.path().join("nowhere.fspe");
    let run = fsp(&[
        "train".as_ref(),
        "--features".as_ref(),
        missing.as_os_str(),
        "--pairs".as_ref(),
        tmp.path().join("p.json").as_os_str(),
        "--out".as_ref(),
        tmp.path().join("m.fspw").as_os_str(),
    ]);
    assert_eq!(run.code, 2, "{}", run.stderr);
    assert!(run.stderr.contains("nowhere.fspe"), "{}", run.stderr);
    assert!(run.stderr.starts_with("error:"));
}

#[test]
fn usage_errors_exit_with_one() {
    assert_eq!(fsp(&["split", "--bogus"]).code, 1);
    assert_eq!(fsp(&["frobnicate"]).code, 1);
    assert_eq!(fsp::<&str>(&[]).code, 1);
    let help = fsp(&["--help"]);
    assert_eq!(help.code, 0);
    assert!(help.stdout.contains("audit"));
}

#[test]
fn invalid_values_exit_with_one() {
    let tmp = tempfile::tempdir().unwrap();
    let d = |name: &str| tmp.path().join(name).to_string_lossy().into_owned();
    let run = fsp(&[
        "synth",
        "--out",
        &d("data"),
        "--photos",
        "5",
        "--faces-min",
        "3",
        "--faces-max",
        "2",
    ]);
    assert_eq!(run.code, 1, "{}", run.stderr);
    fsp_ok(&[
        "synth",
        "--out",
        &d("data"),
        "--photos",
        "10",
        "--faces-max",
        "4",
        "--image-px",
        "200",
    ]);
    let run = fsp(&[
        "split",
        "--manifest",
        &d("data/manifest.json"),
        "--out",
        &d("s.json"),
        "--split",
        "0.5,0.5,0.5",
    ]);
    assert_eq!(run.code, 1, "{}", run.stderr);
}

#[test]
fn triplet_audit_reports_mother_father_columns() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path();
    let d = |name: &str| dir.join(name).to_string_lossy().into_owned();
    small_trained_model(dir, 60, 5);
    fsp_ok(&[
        "synth",
        "--out",
        &d("trip"),
        "--photos",
        "60",
        "--seed",
        "9",
        "--kinship",
        "triplets",
    ]);
    fsp_ok(&[
        "audit",
        "--model",
        &d("model.fspw"),
        "--manifest",
        &d("trip/kinship.json"),
        "--out",
        &d("audit"),
        "--expansion",
        "0",
    ]);
    let audit = read_json(&dir.join("audit/audit.json"));
    let results = audit["results"].as_array().unwrap();
    assert_eq!(results.len(), 1);
    assert_eq!(accuracy_keys(&results[0]["report"]), ["All", "FMD", "FMS"]);
    assert_eq!(audit["versions"], 5);
}
