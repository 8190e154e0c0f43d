pub mod ensemble;
pub mod eval;
pub mod ingest;
pub mod report;
pub mod train;

use anyhow::{bail, Context, Result};
use hemonet::data::{
    load_from_manifest, Dataset, DatasetManifest, Filter, LabeledImage, Lineage, Split,
};
use hemonet::train::TensorDataset;
use std::path::Path;

pub fn parse_split(name: &str) -> Result<Split> {
    match name {
        "train" => Ok(Split::Train),
        "validation" | "val" => Ok(Split::Validation),
        "test" => Ok(Split::Test),
        other => bail!("unknown split `{other}` (expected train, validation, or test)"),
    }
}

pub fn read_manifest(path: &Path) -> Result<DatasetManifest> {
    let text = std::fs::read_to_string(path)
        .with_context(|| format!("reading dataset manifest {}", path.display()))?;
    serde_json::from_str(&text)
        .with_context(|| format!("parsing dataset manifest {}", path.display()))
}

pub fn load_dataset(manifest: &DatasetManifest, filters: &[Filter]) -> Result<Dataset> {
    load_from_manifest(manifest, filters).map_err(Into::into)
}

/// Normalized tensors plus stable sample ids for one split, resized to the
/// model input.
pub fn split_tensors(
    dataset: &Dataset,
    split: Split,
    target_hw: (usize, usize),
) -> Result<(TensorDataset, Vec<String>)> {
    let ids: Vec<String> = dataset
        .split_indices(split)
        .into_iter()
        .map(|i| augmented_id(&dataset.images[i], i))
        .collect();
    let tensors = hemonet::data::to_tensor_dataset(dataset, split, Some(target_hw))
        .map_err(|e| anyhow::anyhow!(e))?;
    Ok((tensors, ids))
}

fn augmented_id(image: &LabeledImage, index: usize) -> String {
    match &image.lineage {
        Lineage::Original => image.origin.clone(),
        Lineage::Augmented { .. } => format!("{}#aug{}", image.origin, index),
    }
}
