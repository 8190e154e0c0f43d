use crate::artifacts::{meta_line, write_json, write_text};
use crate::config::RunConfig;
use anyhow::{bail, Context, Result};
use hemonet::checkpoint::{load_checkpoint, ArtifactMeta};
use hemonet::ensemble::{hard_labels, probs_to_csv};
use hemonet::metrics::{classification_report, ClassReport, ConfusionMatrix, MetricsReport};
use hemonet::train::predict;
use serde::Serialize;
use std::path::Path;

#[derive(Serialize)]
struct MetricsArtifact {
    meta: ArtifactMeta,
    accuracy: f64,
    macro_precision: f64,
    macro_recall: f64,
    macro_f1: f64,
    macro_specificity: f64,
    total: u64,
    classes: Vec<ClassReport>,
}

impl MetricsArtifact {
    fn new(meta: ArtifactMeta, report: MetricsReport) -> Self {
        Self {
            meta,
            accuracy: report.accuracy,
            macro_precision: report.macro_precision,
            macro_recall: report.macro_recall,
            macro_f1: report.macro_f1,
            macro_specificity: report.macro_specificity,
            total: report.total,
            classes: report.classes,
        }
    }
}

pub fn write_metrics_artifacts(
    out_dir: &Path,
    prefix: &str,
    meta: &ArtifactMeta,
    cm: &ConfusionMatrix,
) -> Result<MetricsReport> {
    let report = classification_report(cm);
    let confusion_path = out_dir.join(format!("{prefix}confusion.csv"));
    write_text(
        &confusion_path,
        &format!("{}{}", meta_line(meta), cm.to_csv()),
    )?;
    write_json(
        &out_dir.join(format!("{prefix}metrics.json")),
        &MetricsArtifact::new(meta.clone(), report.clone()),
    )?;
    Ok(report)
}

pub fn run(
    config: &RunConfig,
    checkpoint: Option<&Path>,
    split_name: &str,
    from_confusion: Option<&Path>,
    dataset_path: Option<&Path>,
) -> Result<()> {
    let meta = ArtifactMeta::new(config.seed, config.digest());

    if let Some(csv_path) = from_confusion {
        let text = std::fs::read_to_string(csv_path)
            .with_context(|| format!("reading {}", csv_path.display()))?;
        let cm = ConfusionMatrix::from_csv(&text)?;
        let report = write_metrics_artifacts(&config.out_dir, "", &meta, &cm)?;
        print!("{}", report.render_table(0));
        return Ok(());
    }

    let ckpt_path =
        checkpoint.context("--checkpoint is required unless --from-confusion is used")?;
    let (mut model, _info) = load_checkpoint(ckpt_path)?;

    let manifest_path = dataset_path
        .map(|p| p.to_path_buf())
        .unwrap_or_else(|| config.out_dir.join("dataset.json"));
    let manifest = super::read_manifest(&manifest_path)?;
    if manifest.classes.len() != model.config.classes {
        bail!(
            "checkpoint expects {} classes but the dataset has {}",
            model.config.classes,
            manifest.classes.len()
        );
    }
    let dataset = super::load_dataset(&manifest, &config.filters)?;
    let split = super::parse_split(split_name)?;
    let (h, w) = (model.config.input_shape[1], model.config.input_shape[2]);
    let (tensors, ids) = super::split_tensors(&dataset, split, (h, w))?;

    let (probs, labels) = predict(&mut model, &tensors, config.training.batch_size)?;
    let predictions = hard_labels(&probs);
    let cm = ConfusionMatrix::from_labels(&predictions, &labels, manifest.classes.clone())?;

    write_text(
        &config.out_dir.join("probs.csv"),
        &format!("{}{}", meta_line(&meta), probs_to_csv(&ids, &probs)),
    )?;
    let report = write_metrics_artifacts(&config.out_dir, "", &meta, &cm)?;
    print!("{}", report.render_table(0));
    Ok(())
}
