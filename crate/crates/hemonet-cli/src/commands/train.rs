use crate::artifacts::{history_csv, write_json, write_text};
use crate::config::RunConfig;
use anyhow::{Context, Result};
use hemonet::arch::build_model;
use hemonet::checkpoint::{save_checkpoint, ArtifactMeta};
use hemonet::data::{augment_training_split, materialize_augmented, Split};
use hemonet::train::train;
use serde::Serialize;
use std::path::Path;

#[derive(Serialize)]
struct TrainReport {
    meta: ArtifactMeta,
    architecture: String,
    parameters: usize,
    epochs_run: usize,
    best_epoch: usize,
    stopped_early: bool,
    final_train_loss: f32,
    final_train_accuracy: f32,
    best_val_loss: f32,
    best_val_accuracy: f32,
    wall_time_seconds: f64,
}

pub fn run(config: &RunConfig, dataset_path: Option<&Path>) -> Result<()> {
    let manifest_path = dataset_path
        .map(|p| p.to_path_buf())
        .unwrap_or_else(|| config.out_dir.join("dataset.json"));
    let manifest = super::read_manifest(&manifest_path)?;
    let mut dataset = super::load_dataset(&manifest, &config.filters)?;

    if let Some(plan) = &config.augment {
        augment_training_split(&mut dataset, plan);
        if let Some(dir) = &config.materialize_augmented {
            let written = materialize_augmented(&dataset, dir)?;
            eprintln!(
                "materialized {written} augmented images under {}",
                dir.display()
            );
        }
    }

    let arch = config.architecture.resolve(dataset.classes.len())?;
    let (h, w) = (arch.input_shape[1], arch.input_shape[2]);
    let (train_set, _) = super::split_tensors(&dataset, Split::Train, (h, w))?;
    let (val_set, _) = super::split_tensors(&dataset, Split::Validation, (h, w))?;

    let mut model = build_model(&arch, config.seed)?;
    let training = config.training.to_training_config(config.seed);
    let started = std::time::Instant::now();
    let history = train(&mut model, &train_set, &val_set, &training)?;
    let wall_time = started.elapsed().as_secs_f64();

    let meta = ArtifactMeta::new(config.seed, config.digest());
    std::fs::create_dir_all(&config.out_dir)
        .with_context(|| format!("creating {}", config.out_dir.display()))?;
    let ckpt_path = config.out_dir.join("model.ckpt");
    save_checkpoint(
        &model,
        Some(&training),
        history.best_epoch,
        &meta,
        &ckpt_path,
    )
    .context("writing checkpoint")?;
    write_text(
        &config.out_dir.join("history.csv"),
        &history_csv(&meta, &history),
    )?;

    let last = history.epochs.last().context("history has no epochs")?;
    let best = history
        .epochs
        .iter()
        .find(|e| e.epoch == history.best_epoch)
        .unwrap_or(last);
    let report = TrainReport {
        meta,
        architecture: arch.name.clone(),
        parameters: model.count_parameters(),
        epochs_run: history.epochs.len(),
        best_epoch: history.best_epoch,
        stopped_early: history.stopped_early,
        final_train_loss: last.train_loss,
        final_train_accuracy: last.train_accuracy,
        best_val_loss: best.val_loss,
        best_val_accuracy: best.val_accuracy,
        wall_time_seconds: wall_time,
    };
    write_json(&config.out_dir.join("train_report.json"), &report)?;

    println!(
        "trained {} ({} parameters) for {} epoch(s); best epoch {} (val_loss {:.6})",
        arch.name, report.parameters, report.epochs_run, report.best_epoch, report.best_val_loss
    );
    println!("wrote {}", ckpt_path.display());
    Ok(())
}
