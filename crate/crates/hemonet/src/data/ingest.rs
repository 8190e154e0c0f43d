//! Dataset ingestion from a class-per-folder layout:
//! `root/<class_name>/*.{png,jpg,jpeg}`.

use super::{DataError, Dataset, DatasetManifest, Filter, LabeledImage, Lineage};
use std::path::Path;

const EXTENSIONS: [&str; 3] = ["png", "jpg", "jpeg"];

/// Reads every decodable image under the class folders. Class names are the
/// directory names, ordered lexicographically; file order within a class is
/// lexicographic too, so ingestion is deterministic. Undecodable files are
/// skipped with a warning; empty class folders warn but stay in the class
/// list.
pub fn ingest_dataset(root: &Path) -> Result<(Dataset, Vec<String>), DataError> {
    let io_err = |path: &Path, source: std::io::Error| DataError::Io {
        path: path.display().to_string(),
        source,
    };
    let mut class_dirs: Vec<(String, std::path::PathBuf)> = Vec::new();
    let entries = std::fs::read_dir(root).map_err(|e| io_err(root, e))?;
    for entry in entries {
        let entry = entry.map_err(|e| io_err(root, e))?;
        let path = entry.path();
        if path.is_dir() {
            class_dirs.push((entry.file_name().to_string_lossy().to_string(), path));
        }
    }
    class_dirs.sort_by(|a, b| a.0.cmp(&b.0));
    if class_dirs.is_empty() {
        return Err(DataError::NoClasses(root.display().to_string()));
    }
    if class_dirs.len() == 1 {
        return Err(DataError::SingleClass(class_dirs[0].0.clone()));
    }

    let mut warnings = Vec::new();
    let mut images = Vec::new();
    let classes: Vec<String> = class_dirs.iter().map(|(name, _)| name.clone()).collect();
    for (label, (class_name, dir)) in class_dirs.iter().enumerate() {
        let mut files: Vec<std::path::PathBuf> = std::fs::read_dir(dir)
            .map_err(|e| io_err(dir, e))?
            .filter_map(|e| e.ok())
            .map(|e| e.path())
            .filter(|p| {
                p.extension()
                    .and_then(|e| e.to_str())
                    .map(|e| EXTENSIONS.contains(&e.to_ascii_lowercase().as_str()))
                    .unwrap_or(false)
            })
            .collect();
        files.sort();
        if files.is_empty() {
            warnings.push(format!("class folder `{class_name}` contains no images"));
            continue;
        }
        for file in files {
            match image::open(&file) {
                Ok(decoded) => {
                    let relative = file
                        .strip_prefix(root)
                        .unwrap_or(&file)
                        .to_string_lossy()
                        .replace('\\', "/");
                    images.push(LabeledImage {
                        pixels: decoded.to_rgb8(),
                        label,
                        origin: relative,
                        lineage: Lineage::Original,
                    });
                }
                Err(err) => {
                    warnings.push(format!("skipping `{}`: {err}", file.display()));
                }
            }
        }
    }
    Ok((Dataset::new(classes, images), warnings))
}

/// Rebuilds the dataset a manifest describes: every listed image is decoded
/// from the manifest's root, the given filters are applied, and the recorded
/// split assignments are restored.
pub fn load_from_manifest(
    manifest: &DatasetManifest,
    filters: &[Filter],
) -> Result<Dataset, DataError> {
    let root = Path::new(&manifest.root);
    let mut images = Vec::with_capacity(manifest.images.len());
    let mut splits = Vec::with_capacity(manifest.images.len());
    for record in &manifest.images {
        let path = root.join(&record.path);
        let decoded = image::open(&path).map_err(|e| DataError::Io {
            path: path.display().to_string(),
            source: std::io::Error::other(e),
        })?;
        let mut pixels = decoded.to_rgb8();
        for filter in filters {
            pixels = super::imageops::preprocess_filter(&pixels, filter)?;
        }
        let label = manifest
            .classes
            .iter()
            .position(|c| c == &record.class)
            .ok_or_else(|| DataError::Io {
                path: path.display().to_string(),
                source: std::io::Error::other(format!(
                    "class `{}` missing from manifest class list",
                    record.class
                )),
            })?;
        images.push(LabeledImage {
            pixels,
            label,
            origin: record.path.clone(),
            lineage: Lineage::Original,
        });
        splits.push(record.split);
    }
    let mut dataset = Dataset::new(manifest.classes.clone(), images);
    dataset.splits = splits;
    Ok(dataset)
}
