use crate::artifacts::{meta_line, parse_history_csv, write_json, write_text};
use crate::config::RunConfig;
use anyhow::{bail, Context, Result};
use hemonet::checkpoint::ArtifactMeta;
use serde::{Deserialize, Serialize};
use std::path::{Path, PathBuf};

#[derive(Serialize)]
struct ModelSummary {
    name: String,
    epochs_run: usize,
    best_epoch: usize,
    best_val_loss: f32,
    best_val_accuracy: f32,
    final_train_accuracy: f32,
    eval_accuracy: Option<f64>,
    curve_csv: String,
}

#[derive(Serialize)]
struct RunReport {
    meta: ArtifactMeta,
    models: Vec<ModelSummary>,
}

#[derive(Deserialize)]
struct MetricsFile {
    accuracy: f64,
}

/// One run directory: a history.csv and optionally a metrics.json.
fn candidate_dirs(run_dir: &Path) -> Vec<(String, PathBuf)> {
    let mut dirs = vec![(
        run_dir
            .file_name()
            .map(|n| n.to_string_lossy().to_string())
            .unwrap_or_else(|| "run".to_string()),
        run_dir.to_path_buf(),
    )];
    if let Ok(entries) = std::fs::read_dir(run_dir) {
        let mut subs: Vec<_> = entries
            .filter_map(|e| e.ok())
            .map(|e| e.path())
            .filter(|p| p.is_dir())
            .collect();
        subs.sort();
        for sub in subs {
            let name = sub
                .file_name()
                .map(|n| n.to_string_lossy().to_string())
                .unwrap_or_default();
            dirs.push((name, sub));
        }
    }
    dirs
}

pub fn run(run_dir: &Path, config: &RunConfig) -> Result<()> {
    let meta = ArtifactMeta::new(config.seed, config.digest());
    let mut models = Vec::new();
    for (name, dir) in candidate_dirs(run_dir) {
        let history_path = dir.join("history.csv");
        if !history_path.exists() {
            continue;
        }
        let text = std::fs::read_to_string(&history_path)
            .with_context(|| format!("reading {}", history_path.display()))?;
        let history = parse_history_csv(&text)?;
        if history.epochs.is_empty() {
            continue;
        }
        let eval_accuracy = std::fs::read_to_string(dir.join("metrics.json"))
            .ok()
            .and_then(|t| serde_json::from_str::<MetricsFile>(&t).ok())
            .map(|m| m.accuracy);
        let best = history
            .epochs
            .iter()
            .find(|e| e.epoch == history.best_epoch)
            .expect("best epoch recorded");
        let last = history.epochs.last().expect("non-empty");

        // Curve CSV for external plotting.
        let curve_name = format!("curves_{name}.csv");
        let mut curve = meta_line(&meta);
        curve.push_str("epoch,train_loss,train_acc,val_loss,val_acc\n");
        for e in &history.epochs {
            curve.push_str(&format!(
                "{},{:.6},{:.6},{:.6},{:.6}\n",
                e.epoch, e.train_loss, e.train_accuracy, e.val_loss, e.val_accuracy
            ));
        }
        write_text(&config.out_dir.join(&curve_name), &curve)?;

        models.push(ModelSummary {
            name,
            epochs_run: history.epochs.len(),
            best_epoch: history.best_epoch,
            best_val_loss: best.val_loss,
            best_val_accuracy: best.val_accuracy,
            final_train_accuracy: last.train_accuracy,
            eval_accuracy,
            curve_csv: curve_name,
        });
    }

    if models.is_empty() {
        bail!(
            "no artifacts found under {}: expected history.csv (and optionally metrics.json) in the directory or its subdirectories",
            run_dir.display()
        );
    }

    // Highest accuracy first: evaluation accuracy when present, otherwise
    // the best validation accuracy.
    models.sort_by(|a, b| {
        let ka = a.eval_accuracy.unwrap_or(a.best_val_accuracy as f64);
        let kb = b.eval_accuracy.unwrap_or(b.best_val_accuracy as f64);
        kb.partial_cmp(&ka).unwrap_or(std::cmp::Ordering::Equal)
    });

    println!(
        "{:<20} {:>7} {:>10} {:>12} {:>10}",
        "model", "epochs", "best", "val_acc", "eval_acc"
    );
    for m in &models {
        println!(
            "{:<20} {:>7} {:>10} {:>11.2}% {}",
            m.name,
            m.epochs_run,
            m.best_epoch,
            m.best_val_accuracy * 100.0,
            m.eval_accuracy
                .map(|a| format!("{:>9.2}%", a * 100.0))
                .unwrap_or_else(|| "        --".to_string()),
        );
    }

    write_json(
        &config.out_dir.join("report.json"),
        &RunReport { meta, models },
    )?;
    println!("wrote {}", config.out_dir.join("report.json").display());
    Ok(())
}
