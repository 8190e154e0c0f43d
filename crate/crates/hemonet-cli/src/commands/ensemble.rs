use crate::artifacts::{meta_line, write_json, write_text};
use crate::config::RunConfig;
use anyhow::{bail, Context, Result};
use hemonet::checkpoint::{load_checkpoint, ArtifactMeta};
use hemonet::data::Split;
use hemonet::ensemble::{
    accuracy_of, fuse_mean, fuse_weighted, hard_labels, probs_from_csv, probs_to_csv, FusionSpec,
    LinearFusion,
};
use hemonet::metrics::ConfusionMatrix;
use hemonet::tensor::Tensor;
use hemonet::train::predict;
use serde::Serialize;
use std::path::Path;

#[derive(Serialize)]
struct MemberSummary {
    name: String,
    accuracy: f64,
}

#[derive(Serialize)]
struct EnsembleReport {
    meta: ArtifactMeta,
    fusion: String,
    split: String,
    members: Vec<MemberSummary>,
    ensemble_accuracy: f64,
}

fn parse_fusion(flag: Option<&str>, config: &RunConfig) -> Result<FusionSpec> {
    if let Some(text) = flag {
        return if text == "mean" {
            Ok(FusionSpec::Mean)
        } else if text == "trained" {
            Ok(FusionSpec::TrainedLinear)
        } else if let Some(rest) = text.strip_prefix("weighted=") {
            let weights: Vec<f32> = rest
                .split(',')
                .map(|w| w.trim().parse().context("parsing fusion weight"))
                .collect::<Result<_>>()?;
            Ok(FusionSpec::Weighted { weights })
        } else {
            bail!("unknown fusion `{text}` (expected mean, weighted=..., or trained)")
        };
    }
    Ok(config.fusion.clone().unwrap_or(FusionSpec::Mean))
}

fn fusion_name(spec: &FusionSpec) -> String {
    match spec {
        FusionSpec::Mean => "mean".to_string(),
        FusionSpec::Weighted { weights } => format!(
            "weighted={}",
            weights
                .iter()
                .map(|w| w.to_string())
                .collect::<Vec<_>>()
                .join(",")
        ),
        FusionSpec::TrainedLinear => "trained".to_string(),
    }
}

/// Member predictions gathered from checkpoints or probability files.
struct MemberData {
    names: Vec<String>,
    probs: Vec<Tensor<f32>>,
    ids: Vec<String>,
    labels: Vec<usize>,
    classes: Vec<String>,
    /// Validation-split predictions to fit a trained fusion on.
    fit: Option<(Vec<Tensor<f32>>, Vec<usize>)>,
}

fn members_from_probs(
    prob_files: &[std::path::PathBuf],
    manifest_path: &Path,
) -> Result<MemberData> {
    let manifest = super::read_manifest(manifest_path)?;
    let class_of = |path: &str| -> Result<usize> {
        let record = manifest
            .images
            .iter()
            .find(|r| r.path == path)
            .with_context(|| format!("sample `{path}` not found in dataset manifest"))?;
        manifest
            .classes
            .iter()
            .position(|c| c == &record.class)
            .context("class missing")
    };
    let mut names = Vec::new();
    let mut probs = Vec::new();
    let mut ids: Option<Vec<String>> = None;
    for file in prob_files {
        let text =
            std::fs::read_to_string(file).with_context(|| format!("reading {}", file.display()))?;
        let (file_ids, p) = probs_from_csv(&text)?;
        match &ids {
            None => ids = Some(file_ids),
            Some(existing) => {
                if existing != &file_ids {
                    bail!(
                        "{} lists different samples than the first member",
                        file.display()
                    );
                }
            }
        }
        names.push(file.display().to_string());
        probs.push(p);
    }
    let ids = ids.context("no probability files given")?;
    let labels = ids
        .iter()
        .map(|id| class_of(id))
        .collect::<Result<Vec<_>>>()?;
    Ok(MemberData {
        names,
        probs,
        ids,
        labels,
        classes: manifest.classes,
        fit: None,
    })
}

fn members_from_checkpoints(
    config: &RunConfig,
    member_ckpts: &[std::path::PathBuf],
    manifest_path: &Path,
    split_name: &str,
    want_fit: bool,
) -> Result<MemberData> {
    let manifest = super::read_manifest(manifest_path)?;
    let dataset = super::load_dataset(&manifest, &config.filters)?;
    let split = super::parse_split(split_name)?;
    let mut names = Vec::new();
    let mut probs = Vec::new();
    let mut ids_out = Vec::new();
    let mut labels_out = Vec::new();
    let mut fit_members = Vec::new();
    let mut fit_labels = Vec::new();
    for (mi, path) in member_ckpts.iter().enumerate() {
        let (mut model, _) = load_checkpoint(path)?;
        if model.config.classes != manifest.classes.len() {
            bail!(
                "member {} expects {} classes but the dataset has {}",
                path.display(),
                model.config.classes,
                manifest.classes.len()
            );
        }
        let (h, w) = (model.config.input_shape[1], model.config.input_shape[2]);
        let (tensors, ids) = super::split_tensors(&dataset, split, (h, w))?;
        let (p, labels) = predict(&mut model, &tensors, config.training.batch_size)?;
        if mi == 0 {
            ids_out = ids;
            labels_out = labels;
        }
        if want_fit {
            // The trained fusion is fit on the validation split.
            let (val_tensors, _) = super::split_tensors(&dataset, Split::Validation, (h, w))?;
            let (vp, vl) = predict(&mut model, &val_tensors, config.training.batch_size)?;
            fit_members.push(vp);
            if fit_labels.is_empty() {
                fit_labels = vl;
            }
        }
        names.push(path.display().to_string());
        probs.push(p);
    }
    Ok(MemberData {
        names,
        probs,
        ids: ids_out,
        labels: labels_out,
        classes: manifest.classes,
        fit: want_fit.then_some((fit_members, fit_labels)),
    })
}

pub fn run(
    config: &RunConfig,
    member_ckpts: &[std::path::PathBuf],
    prob_files: &[std::path::PathBuf],
    fusion_flag: Option<&str>,
    split_name: &str,
    dataset_path: Option<&Path>,
) -> Result<()> {
    let fusion = parse_fusion(fusion_flag, config)?;
    let meta = ArtifactMeta::new(config.seed, config.digest());

    let manifest_path = dataset_path
        .map(|p| p.to_path_buf())
        .unwrap_or_else(|| config.out_dir.join("dataset.json"));

    let members_data = if !prob_files.is_empty() {
        if !member_ckpts.is_empty() {
            bail!("pass either --members or --probs, not both");
        }
        members_from_probs(prob_files, &manifest_path)?
    } else {
        if member_ckpts.len() < 2 {
            bail!("an ensemble needs at least two --members checkpoints");
        }
        members_from_checkpoints(
            config,
            member_ckpts,
            &manifest_path,
            split_name,
            fusion == FusionSpec::TrainedLinear,
        )?
    };
    let MemberData {
        names: member_names,
        probs: member_probs,
        ids,
        labels,
        classes,
        fit: fit_data,
    } = members_data;

    let fused = match &fusion {
        FusionSpec::Mean => fuse_mean(&member_probs)?,
        FusionSpec::Weighted { weights } => fuse_weighted(&member_probs, weights)?,
        FusionSpec::TrainedLinear => {
            let (fit_members, fit_labels) = match fit_data {
                Some(data) => data,
                // Offline fusion has no validation predictions; fit in-sample.
                None => (member_probs.clone(), labels.clone()),
            };
            let fitted = LinearFusion::fit(&fit_members, &fit_labels, 300)?;
            fitted.fuse(&member_probs)?
        }
    };

    let predictions = hard_labels(&fused);
    let cm = ConfusionMatrix::from_labels(&predictions, &labels, classes)?;
    write_text(
        &config.out_dir.join("ensemble_probs.csv"),
        &format!("{}{}", meta_line(&meta), probs_to_csv(&ids, &fused)),
    )?;
    let report = super::eval::write_metrics_artifacts(&config.out_dir, "ensemble_", &meta, &cm)?;

    let members: Vec<MemberSummary> = member_names
        .iter()
        .zip(&member_probs)
        .map(|(name, p)| MemberSummary {
            name: name.clone(),
            accuracy: accuracy_of(p, &labels),
        })
        .collect();
    let ensemble_accuracy = accuracy_of(&fused, &labels);
    write_json(
        &config.out_dir.join("ensemble_report.json"),
        &EnsembleReport {
            meta,
            fusion: fusion_name(&fusion),
            split: split_name.to_string(),
            members: members
                .iter()
                .map(|m| MemberSummary {
                    name: m.name.clone(),
                    accuracy: m.accuracy,
                })
                .collect(),
            ensemble_accuracy,
        },
    )?;

    println!("{:<40} {:>9}", "member", "accuracy");
    for m in &members {
        println!("{:<40} {:>8.2}%", m.name, m.accuracy * 100.0);
    }
    println!(
        "{:<40} {:>8.2}%",
        format!("ensemble ({})", fusion_name(&fusion)),
        ensemble_accuracy * 100.0
    );
    print!("{}", report.render_table(0));
    Ok(())
}
