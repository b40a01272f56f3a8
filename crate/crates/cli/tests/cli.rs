use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use sake_core::model::{save_checkpoint, ModelConfig, ModelParams};
use serde_json::Value;

const SMALL: [&str; 10] = [
    "--set",
    "data.counts.original_photos=10",
    "--set",
    "data.counts.source_photos=6",
    "--set",
    "data.counts.source_sketches=4",
    "--set",
    "data.counts.gallery_photos=8",
    "--set",
    "data.counts.query_sketches=4",
];

fn sake(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_sake")).args(args).output().expect("binary runs")
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

fn json(path: &Path) -> Value {
    serde_json::from_str(&std::fs::read_to_string(path).unwrap()).unwrap()
}

fn small_data(dir: &Path) -> PathBuf {
    let data = dir.join("data");
    let mut args = vec!["gen-data", "--out", p(&data)];
    args.extend(SMALL);
    let out = sake(&args);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    data
}

/// An untrained model stands in for a teacher where only plumbing is tested.
fn random_model(dir: &Path) -> PathBuf {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let params = ModelParams::<f32>::init(ModelConfig::default(), &mut rng).unwrap();
    let path = dir.join("random.ckpt");
    save_checkpoint(&params, &path).unwrap();
    path
}

#[test]
fn default_manifest_has_twenty_ten_six_classes() {
    let dir = tempfile::tempdir().unwrap();
    let data = small_data(dir.path());
    let m = json(&data.join("manifest.json"));
    let len = |k: &str| m[k].as_array().unwrap().len();
    assert_eq!((len("original_classes"), len("source_classes"), len("target_classes")), (20, 10, 6));
    let report = json(&data.join("gen-data.json"));
    assert_eq!(report["tool"], "sake");
    assert_eq!(report["config"]["data"]["counts"]["original_photos"], 10);
}

#[test]
fn rerunning_gen_data_gives_identical_files() {
    let dir = tempfile::tempdir().unwrap();
    let a = small_data(&dir.path().join("a"));
    let b = small_data(&dir.path().join("b"));
    let mut names: Vec<_> = std::fs::read_dir(&a).unwrap().map(|e| e.unwrap().file_name()).collect();
    names.sort();
    assert_eq!(names.len(), 6);
    for n in names {
        assert_eq!(std::fs::read(a.join(&n)).unwrap(), std::fs::read(b.join(&n)).unwrap(), "{n:?}");
    }
}

#[test]
fn overlapping_split_exits_with_two() {
    let dir = tempfile::tempdir().unwrap();
    let out = sake(&[
        "gen-data",
        "--out",
        p(dir.path()),
        "--set",
        "data.original=[0,1,2,4,6,10,11,15,16,20,21,25,26,27,30,31,33,35,36,38]",
    ]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("split violation"));
}

#[test]
fn config_errors_exit_with_two() {
    let dir = tempfile::tempdir().unwrap();
    let out = sake(&["gen-data", "--out", p(dir.path()), "--set", "train.epoch=3"]);
    assert_eq!(out.status.code(), Some(2));
    let out = sake(&["gen-data", "--out", p(dir.path()), "--set", "itq.bits=0"]);
    assert_eq!(out.status.code(), Some(2));
    let out = sake(&["gen-data"]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn config_file_keys_are_overridden_by_flags() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("cfg.json");
    std::fs::write(&cfg, r#"{"seed": 5, "data.counts.original_photos": 10, "data": {"counts": {"source_photos": 6}}}"#).unwrap();
    let data = dir.path().join("data");
    let mut args = vec!["gen-data", "--out", p(&data), "--config", p(&cfg), "--seed", "7"];
    args.extend(&SMALL[2..]);
    assert!(sake(&args).status.success());
    let r = json(&data.join("gen-data.json"));
    assert_eq!(r["config"]["seed"], 7);
    assert_eq!(r["config"]["data"]["seed"], 7);
    assert_eq!(r["config"]["itq"]["seed"], 7);
    assert_eq!(r["config"]["data"]["counts"]["original_photos"], 10);
}

#[test]
fn train_needs_an_existing_teacher() {
    let dir = tempfile::tempdir().unwrap();
    let data = small_data(dir.path());
    let missing = dir.path().join("nope.ckpt");
    let out = sake(&["train", "--data", p(&data), "--teacher", p(&missing), "--out", p(dir.path())]);
    assert_eq!(out.status.code(), Some(2));
    let out = sake(&["train", "--data", p(&data), "--out", p(dir.path())]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn train_echoes_default_lambdas_and_drops_the_teacher_term_at_zero() {
    let dir = tempfile::tempdir().unwrap();
    let data = small_data(dir.path());
    let teacher = random_model(dir.path());
    let run = |name: &str, extra: &[&str]| {
        let out_dir = dir.path().join(name);
        let mut args = vec!["train", "--data", p(&data), "--teacher", p(&teacher), "--out", p(&out_dir), "--epochs", "1"];
        args.extend(extra);
        let out = sake(&args);
        assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
        json(&out_dir.join("report.json"))
    };
    let r = run("sake", &[]);
    let loss = &r["config"]["train"]["loss"];
    assert_eq!((loss["lambda_sake"].as_f64(), loss["lambda1"].as_f64(), loss["lambda2"].as_f64()), (Some(1.0), Some(1.0), Some(0.3)));
    assert_eq!(r["report"]["objective"]["kind"], "sake");
    assert!(r["report"]["epochs"][0]["loss"]["sake"].as_f64().unwrap() > 0.0);

    let r = run("plain", &["--lambda-sake", "0"]);
    assert_eq!(r["report"]["objective"]["kind"], "benchmark");
    assert!(r["report"]["epochs"].as_array().unwrap().iter().all(|e| e["loss"]["sake"] == 0.0));
}

#[test]
fn eval_guards_metric_and_representation() {
    let dir = tempfile::tempdir().unwrap();
    let data = small_data(dir.path());
    let model = random_model(dir.path());
    let out = sake(&["eval", "--data", p(&data), "--model", p(&model), "--metric", "hamming"]);
    assert_eq!(out.status.code(), Some(2));

    let hashed = dir.path().join("hash");
    assert!(sake(&["hash", "--data", p(&data), "--model", p(&model), "--out", p(&hashed), "--bits", "8"]).status.success());
    let codec = hashed.join("codec.itq");
    let out = sake(&["eval", "--data", p(&data), "--model", p(&model), "--codec", p(&codec), "--metric", "cosine"]);
    assert_eq!(out.status.code(), Some(2));
    let out = sake(&["eval", "--data", p(&data), "--model", p(&model), "--codec", p(&codec), "--bits", "16"]);
    assert_eq!(out.status.code(), Some(2));
    let report = dir.path().join("eval.json");
    let out = sake(&["eval", "--data", p(&data), "--model", p(&model), "--codec", p(&codec), "--out", p(&report)]);
    assert!(out.status.success());
    assert_eq!(json(&report)["report"]["metric"], "hamming");
    assert_eq!(json(&report)["bits"], 8);
}

#[test]
fn eval_k_list_produces_precision_fields() {
    let dir = tempfile::tempdir().unwrap();
    let data = small_data(dir.path());
    let model = random_model(dir.path());
    let report = dir.path().join("eval.json");
    let csv = dir.path().join("emb.csv");
    let out = sake(&["eval", "--data", p(&data), "--model", p(&model), "--k", "100,5", "--out", p(&report), "--csv", p(&csv)]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let r = json(&report);
    let ks: Vec<u64> = r["report"]["prec_at_k"].as_array().unwrap().iter().map(|e| e["k"].as_u64().unwrap()).collect();
    assert_eq!(ks, vec![100, 5]);
    assert_eq!(r["config"]["eval"]["ks"], serde_json::json!([100, 5]));
    assert!(String::from_utf8_lossy(&out.stdout).contains("Prec@100"));
    // Header plus 6 classes x (4 sketches + 8 photos).
    assert_eq!(std::fs::read_to_string(&csv).unwrap().lines().count(), 1 + 72);

    let photo = dir.path().join("photo.json");
    assert!(sake(&["eval", "--data", p(&data), "--model", p(&model), "--photo-queries", "--out", p(&photo)]).status.success());
    assert_eq!(json(&photo)["mode"], "photo-to-photo");
    assert_eq!(json(&photo)["report"]["queries"], 48);
}

#[test]
fn eval_rejects_a_dataset_whose_splits_overlap() {
    let dir = tempfile::tempdir().unwrap();
    let data = small_data(dir.path());
    let model = random_model(dir.path());
    let path = data.join("manifest.json");
    let mut m = json(&path);
    // Relabel one source class as a target class.
    let target = m["target_classes"][0].clone();
    for split in m["splits"].as_array_mut().unwrap() {
        if split["name"] == "source-train" {
            split["classes"][0]["class_id"] = target.clone();
        }
    }
    std::fs::write(&path, serde_json::to_string_pretty(&m).unwrap()).unwrap();
    let out = sake(&["eval", "--data", p(&data), "--model", p(&model)]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("split violation"));
}

#[test]
fn analyze_splits_six_classes_into_three_pairs() {
    let dir = tempfile::tempdir().unwrap();
    let data = small_data(dir.path());
    let a = random_model(dir.path());
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let b = dir.path().join("other.ckpt");
    save_checkpoint(&ModelParams::<f32>::init(ModelConfig::default(), &mut rng).unwrap(), &b).unwrap();
    let report = dir.path().join("analysis.json");
    let args = ["analyze", "--data", p(&data), "--teacher", p(&a), "--student", p(&b), "--baseline", p(&a), "--out", p(&report)];
    let out = sake(&args);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let r = json(&report);
    let groups = r["analysis"]["groups"].as_array().unwrap();
    assert_eq!(groups.len(), 3);
    assert!(groups.iter().all(|g| g["classes"].as_array().unwrap().len() == 2));
    let again = sake(&args);
    assert_eq!(out.stdout, again.stdout);
}

#[test]
fn sweep_runs_every_grid_point() {
    let dir = tempfile::tempdir().unwrap();
    let data = small_data(dir.path());
    let teacher = random_model(dir.path());
    let out_dir = dir.path().join("sweep");
    let out = sake(&[
        "sweep",
        "--data",
        p(&data),
        "--teacher",
        p(&teacher),
        "--out",
        p(&out_dir),
        "--vary",
        "train.loss.lambda2=0,0.3",
        "--set",
        "train.epochs=1",
        "--jobs",
        "2",
    ]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let r = json(&out_dir.join("sweep.json"));
    let runs = r["runs"].as_array().unwrap();
    assert_eq!(runs.len(), 2);
    assert!(runs.iter().all(|run| run["exit_code"] == 0 && run["map_all"].as_f64().is_some()));
    assert_eq!(json(&out_dir.join("run001/report.json"))["config"]["train"]["loss"]["lambda2"], 0.3);

    let bad = sake(&["sweep", "--data", p(&data), "--teacher", p(&teacher), "--out", p(&out_dir), "--vary", "train.nope=1"]);
    assert_eq!(bad.status.code(), Some(2));
}
