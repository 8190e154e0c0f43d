//! End-to-end pipeline through the binary: ingest -> train -> eval ->
//! ensemble -> report, plus the documented failure modes.

use hemonet::data::synthetic::{synthetic_blobs, write_synthetic_tree};
use std::path::PathBuf;
use std::process::{Command, Output};

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_hemonet"))
}

fn run_ok(cmd: &mut Command) -> Output {
    let output = cmd.output().expect("spawning hemonet");
    assert!(
        output.status.success(),
        "command failed\nstdout: {}\nstderr: {}",
        String::from_utf8_lossy(&output.stdout),
        String::from_utf8_lossy(&output.stderr)
    );
    output
}

struct Fixture {
    _tmp: tempfile::TempDir,
    data_root: PathBuf,
    out_dir: PathBuf,
    config_path: PathBuf,
}

fn fixture(classes: usize, per_class: usize) -> Fixture {
    let tmp = tempfile::tempdir().unwrap();
    let data_root = tmp.path().join("data");
    let dataset = synthetic_blobs(classes, per_class, 32, 77);
    write_synthetic_tree(&dataset, &data_root).unwrap();
    let out_dir = tmp.path().join("out");
    let config_path = tmp.path().join("run.json");
    let config = serde_json::json!({
        "dataset_root": data_root,
        "out_dir": out_dir,
        "seed": 7,
        "architecture": "vgg_mini",
        "training": {
            "epochs": 2,
            "batch_size": 8,
            "learning_rate": 1e-3,
            "patience": 10
        }
    });
    std::fs::write(&config_path, serde_json::to_string_pretty(&config).unwrap()).unwrap();
    Fixture {
        _tmp: tmp,
        data_root,
        out_dir,
        config_path,
    }
}

fn ingest(f: &Fixture) {
    run_ok(
        bin()
            .arg("ingest")
            .arg(&f.data_root)
            .arg("--config")
            .arg(&f.config_path),
    );
}

fn train(f: &Fixture) {
    run_ok(bin().arg("train").arg("--config").arg(&f.config_path));
}

#[test]
fn full_pipeline_writes_every_artifact() {
    let f = fixture(3, 10);
    let output = run_ok(
        bin()
            .arg("ingest")
            .arg(&f.data_root)
            .arg("--config")
            .arg(&f.config_path),
    );
    let stdout = String::from_utf8_lossy(&output.stdout);
    assert!(stdout.contains("class_0"), "{stdout}");
    assert!(f.out_dir.join("dataset.json").exists());

    train(&f);
    for name in ["model.ckpt", "history.csv", "train_report.json"] {
        assert!(f.out_dir.join(name).exists(), "missing {name}");
    }
    let history = std::fs::read_to_string(f.out_dir.join("history.csv")).unwrap();
    assert_eq!(history.lines().count(), 2 + 2, "meta + header + 2 epochs");

    let ckpt = f.out_dir.join("model.ckpt");
    run_ok(
        bin()
            .arg("eval")
            .arg("--checkpoint")
            .arg(&ckpt)
            .arg("--split")
            .arg("test")
            .arg("--config")
            .arg(&f.config_path),
    );
    for name in ["confusion.csv", "metrics.json", "probs.csv"] {
        assert!(f.out_dir.join(name).exists(), "missing {name}");
    }

    run_ok(
        bin()
            .arg("ensemble")
            .arg("--members")
            .arg(format!("{},{}", ckpt.display(), ckpt.display()))
            .arg("--split")
            .arg("test")
            .arg("--config")
            .arg(&f.config_path),
    );
    for name in [
        "ensemble_probs.csv",
        "ensemble_confusion.csv",
        "ensemble_metrics.json",
        "ensemble_report.json",
    ] {
        assert!(f.out_dir.join(name).exists(), "missing {name}");
    }
    // Two identical members: the fused accuracy equals the member accuracy.
    let report: serde_json::Value = serde_json::from_str(
        &std::fs::read_to_string(f.out_dir.join("ensemble_report.json")).unwrap(),
    )
    .unwrap();
    let members = report["members"].as_array().unwrap();
    assert_eq!(members.len(), 2);
    assert_eq!(members[0]["accuracy"], report["ensemble_accuracy"]);

    run_ok(
        bin()
            .arg("report")
            .arg(&f.out_dir)
            .arg("--config")
            .arg(&f.config_path),
    );
    assert!(f.out_dir.join("report.json").exists());
    let curves: Vec<_> = std::fs::read_dir(&f.out_dir)
        .unwrap()
        .filter_map(|e| e.ok())
        .filter(|e| e.file_name().to_string_lossy().starts_with("curves_"))
        .collect();
    assert!(!curves.is_empty(), "no curve CSVs written");
}

#[test]
fn offline_probability_fusion_matches_in_process() {
    let f = fixture(2, 8);
    ingest(&f);
    train(&f);
    let ckpt = f.out_dir.join("model.ckpt");
    run_ok(
        bin()
            .arg("eval")
            .arg("--checkpoint")
            .arg(&ckpt)
            .arg("--split")
            .arg("test")
            .arg("--config")
            .arg(&f.config_path),
    );
    let probs = f.out_dir.join("probs.csv");

    // In-process fusion of the same checkpoint twice.
    run_ok(
        bin()
            .arg("ensemble")
            .arg("--members")
            .arg(format!("{},{}", ckpt.display(), ckpt.display()))
            .arg("--split")
            .arg("test")
            .arg("--config")
            .arg(&f.config_path),
    );
    let in_process = std::fs::read_to_string(f.out_dir.join("ensemble_probs.csv")).unwrap();

    // Offline fusion of the exported probability files.
    run_ok(
        bin()
            .arg("ensemble")
            .arg("--probs")
            .arg(format!("{},{}", probs.display(), probs.display()))
            .arg("--config")
            .arg(&f.config_path),
    );
    let offline = std::fs::read_to_string(f.out_dir.join("ensemble_probs.csv")).unwrap();
    assert_eq!(in_process, offline);
}

#[test]
fn from_confusion_import_reproduces_published_table() {
    let f = fixture(2, 6);
    let csv_path = f.out_dir.join("external_confusion.csv");
    std::fs::create_dir_all(&f.out_dir).unwrap();
    std::fs::write(
        &csv_path,
        "Benign,Malignant Early Pre-B,Malignant Pre-B,Malignant Pro-B\n\
         1436,10,1,17\n\
         175,3064,81,6\n\
         23,131,3088,2\n\
         23,1,2,2564\n",
    )
    .unwrap();
    let output = run_ok(
        bin()
            .arg("eval")
            .arg("--from-confusion")
            .arg(&csv_path)
            .arg("--config")
            .arg(&f.config_path),
    );
    let stdout = String::from_utf8_lossy(&output.stdout);
    assert!(stdout.contains("1657"), "{stdout}");
    let metrics: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(f.out_dir.join("metrics.json")).unwrap())
            .unwrap();
    let classes = metrics["classes"].as_array().unwrap();
    assert_eq!(classes[0]["support"], 1657);
    let precision = classes[0]["precision"]["value"].as_f64().unwrap();
    assert!((precision - 0.9809).abs() < 1e-3);
}

#[test]
fn empty_root_fails_with_message() {
    let tmp = tempfile::tempdir().unwrap();
    let empty = tmp.path().join("empty");
    std::fs::create_dir_all(&empty).unwrap();
    let output = bin()
        .arg("ingest")
        .arg(&empty)
        .arg("--out")
        .arg(tmp.path().join("out"))
        .output()
        .unwrap();
    assert!(!output.status.success());
    let stderr = String::from_utf8_lossy(&output.stderr);
    assert!(stderr.contains("no class directories"), "{stderr}");
}

#[test]
fn report_on_empty_directory_fails_listing_expectations() {
    let tmp = tempfile::tempdir().unwrap();
    let output = bin()
        .arg("report")
        .arg(tmp.path())
        .arg("--out")
        .arg(tmp.path().join("out"))
        .output()
        .unwrap();
    assert!(!output.status.success());
    let stderr = String::from_utf8_lossy(&output.stderr);
    assert!(stderr.contains("history.csv"), "{stderr}");
}

#[test]
fn eval_rejects_class_count_mismatch() {
    let f2 = fixture(2, 8);
    ingest(&f2);
    train(&f2);
    let ckpt_two_classes = f2.out_dir.join("model.ckpt");

    let f3 = fixture(3, 8);
    ingest(&f3);
    let output = bin()
        .arg("eval")
        .arg("--checkpoint")
        .arg(&ckpt_two_classes)
        .arg("--config")
        .arg(&f3.config_path)
        .output()
        .unwrap();
    assert!(!output.status.success());
    let stderr = String::from_utf8_lossy(&output.stderr);
    assert!(stderr.contains("classes"), "{stderr}");
}

#[test]
fn ensemble_of_distinct_members_does_not_lose_accuracy() {
    // Train two different families on the same easy fixture, fuse them, and
    // require the fused accuracy to stay within a point of the best member.
    let f = fixture(3, 10);
    ingest(&f);

    let second_out = f.out_dir.parent().unwrap().join("out_b");
    let second_config = f.out_dir.parent().unwrap().join("run_b.json");
    let mut config: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(&f.config_path).unwrap()).unwrap();
    config["architecture"] = serde_json::json!("resnet_mini");
    config["out_dir"] = serde_json::json!(second_out);
    // The batchnorm families need a few more steps on this tiny fixture to
    // count as converged members.
    config["training"]["epochs"] = serde_json::json!(8);
    std::fs::write(
        &second_config,
        serde_json::to_string_pretty(&config).unwrap(),
    )
    .unwrap();

    train(&f);
    run_ok(
        bin()
            .arg("train")
            .arg("--config")
            .arg(&second_config)
            .arg("--dataset")
            .arg(f.out_dir.join("dataset.json")),
    );

    let members = format!(
        "{},{}",
        f.out_dir.join("model.ckpt").display(),
        second_out.join("model.ckpt").display()
    );
    run_ok(
        bin()
            .arg("ensemble")
            .arg("--members")
            .arg(&members)
            .arg("--split")
            .arg("test")
            .arg("--config")
            .arg(&f.config_path),
    );

    let report: serde_json::Value = serde_json::from_str(
        &std::fs::read_to_string(f.out_dir.join("ensemble_report.json")).unwrap(),
    )
    .unwrap();
    let member_best = report["members"]
        .as_array()
        .unwrap()
        .iter()
        .map(|m| m["accuracy"].as_f64().unwrap())
        .fold(0.0f64, f64::max);
    let fused = report["ensemble_accuracy"].as_f64().unwrap();
    assert!(
        fused >= member_best - 0.01,
        "fused {fused} fell more than a point below best member {member_best}"
    );

    // The other fusion rules run through the same artifacts.
    for fusion in ["weighted=0.5,0.5", "trained"] {
        run_ok(
            bin()
                .arg("ensemble")
                .arg("--members")
                .arg(&members)
                .arg("--fusion")
                .arg(fusion)
                .arg("--split")
                .arg("test")
                .arg("--config")
                .arg(&f.config_path),
        );
        assert!(f.out_dir.join("ensemble_metrics.json").exists());
    }

    // A report over the parent directory merges both runs, best model first.
    let parent = f.out_dir.parent().unwrap().to_path_buf();
    run_ok(
        bin()
            .arg("report")
            .arg(&parent)
            .arg("--out")
            .arg(&f.out_dir)
            .arg("--config")
            .arg(&f.config_path),
    );
    let merged: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(f.out_dir.join("report.json")).unwrap())
            .unwrap();
    let models = merged["models"].as_array().unwrap();
    assert_eq!(models.len(), 2, "{models:?}");
    let acc = |m: &serde_json::Value| {
        m["eval_accuracy"]
            .as_f64()
            .unwrap_or_else(|| m["best_val_accuracy"].as_f64().unwrap())
    };
    assert!(acc(&models[0]) >= acc(&models[1]));
}
