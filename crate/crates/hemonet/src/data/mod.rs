//! Dataset handling: class-folder ingestion, deterministic splitting,
//! normalization, augmentation, and preprocessing filters.

pub mod augment;
pub mod imageops;
pub mod ingest;
pub mod synthetic;

pub use augment::{
    augment_image, augment_training_split, materialize_augmented, AugmentPlan, TransformRecord,
};
pub use imageops::Filter;
pub use ingest::{ingest_dataset, load_from_manifest};

use crate::checkpoint::ArtifactMeta;
use crate::tensor::Tensor;
use crate::train::TensorDataset;
use image::RgbImage;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum DataError {
    #[error("no class directories under {0}")]
    NoClasses(String),
    #[error("only one class directory ({0}); classification needs at least two")]
    SingleClass(String),
    #[error("io error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("split ratios must be positive and sum to 1, got {0:?}")]
    BadRatios([f64; 3]),
    #[error("invalid filter parameter: {0}")]
    FilterParam(String),
    #[error("dataset has no images in the {0:?} split")]
    EmptySplit(Split),
    #[error(transparent)]
    Train(#[from] crate::train::TrainError),
}

/// Which partition an image belongs to.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Split {
    Train,
    Validation,
    Test,
}

/// How an image came to be.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Lineage {
    Original,
    Augmented {
        seed: u64,
        transforms: Vec<TransformRecord>,
    },
}

/// A class-labeled RGB image with provenance.
#[derive(Debug, Clone)]
pub struct LabeledImage {
    pub pixels: RgbImage,
    /// Index into the dataset's class list.
    pub label: usize,
    /// Source identity: path relative to the dataset root, or a synthetic id.
    pub origin: String,
    pub lineage: Lineage,
}

/// Class-labeled images with per-image split assignment.
#[derive(Debug, Clone, Default)]
pub struct Dataset {
    pub classes: Vec<String>,
    pub images: Vec<LabeledImage>,
    /// Parallel to `images`. Everything starts in the train split until
    /// [`split_dataset`] assigns partitions.
    pub splits: Vec<Split>,
}

impl Dataset {
    pub fn new(classes: Vec<String>, images: Vec<LabeledImage>) -> Self {
        let splits = vec![Split::Train; images.len()];
        Self {
            classes,
            images,
            splits,
        }
    }

    pub fn len(&self) -> usize {
        self.images.len()
    }

    pub fn is_empty(&self) -> bool {
        self.images.is_empty()
    }

    /// Per-class image counts.
    pub fn class_counts(&self) -> Vec<usize> {
        let mut counts = vec![0usize; self.classes.len()];
        for img in &self.images {
            counts[img.label] += 1;
        }
        counts
    }

    /// Count of images in one split.
    pub fn split_len(&self, split: Split) -> usize {
        self.splits.iter().filter(|&&s| s == split).count()
    }

    /// Indices of one split, in dataset order.
    pub fn split_indices(&self, split: Split) -> Vec<usize> {
        self.splits
            .iter()
            .enumerate()
            .filter(|(_, &s)| s == split)
            .map(|(i, _)| i)
            .collect()
    }
}

/// Fractions assigned to train/validation; the remainder is the test split.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SplitRatios {
    pub train: f64,
    pub validation: f64,
    pub test: f64,
}

impl Default for SplitRatios {
    fn default() -> Self {
        Self {
            train: 0.7,
            validation: 0.2,
            test: 0.1,
        }
    }
}

/// Assigns splits per class: after a seeded shuffle, the first
/// `floor(train * n)` images go to train, the next `floor(validation * n)`
/// to validation, and the rest to test. Classes too small to seed a train
/// split fall back entirely to train (with a warning).
pub fn split_dataset(
    dataset: &mut Dataset,
    ratios: SplitRatios,
    seed: u64,
) -> Result<Vec<String>, DataError> {
    let total = ratios.train + ratios.validation + ratios.test;
    if ratios.train <= 0.0
        || ratios.validation <= 0.0
        || ratios.test <= 0.0
        || (total - 1.0).abs() > 1e-9
    {
        return Err(DataError::BadRatios([
            ratios.train,
            ratios.validation,
            ratios.test,
        ]));
    }
    let mut warnings = Vec::new();
    for (class_idx, class_name) in dataset.classes.iter().enumerate() {
        let mut indices: Vec<usize> = dataset
            .images
            .iter()
            .enumerate()
            .filter(|(_, img)| img.label == class_idx)
            .map(|(i, _)| i)
            .collect();
        let n = indices.len();
        if n == 0 {
            continue;
        }
        let mut rng = ChaCha8Rng::seed_from_u64(crate::mix_seed(seed, &[class_idx as u64]));
        indices.shuffle(&mut rng);

        let n_train = (ratios.train * n as f64).floor() as usize;
        let n_val = (ratios.validation * n as f64).floor() as usize;
        if n_train == 0 {
            warnings.push(format!(
                "class `{class_name}` has only {n} image(s); assigning all to train"
            ));
            for &i in &indices {
                dataset.splits[i] = Split::Train;
            }
            continue;
        }
        for (rank, &i) in indices.iter().enumerate() {
            dataset.splits[i] = if rank < n_train {
                Split::Train
            } else if rank < n_train + n_val {
                Split::Validation
            } else {
                Split::Test
            };
        }
    }
    Ok(warnings)
}

/// Converts 8-bit pixels to a `[3, H, W]` float tensor by dividing by 255.
pub fn normalize_image(img: &RgbImage) -> Tensor<f32> {
    let (w, h) = img.dimensions();
    let (w, h) = (w as usize, h as usize);
    let mut data = vec![0.0f32; 3 * h * w];
    for (x, y, pixel) in img.enumerate_pixels() {
        let (x, y) = (x as usize, y as usize);
        for c in 0..3 {
            data[c * h * w + y * w + x] = pixel.0[c] as f32 / 255.0;
        }
    }
    Tensor::from_vec(&[3, h, w], data).expect("pixel count")
}

/// Normalizes one split into batched tensors, optionally resizing every image
/// first.
pub fn to_tensor_dataset(
    dataset: &Dataset,
    split: Split,
    resize_to: Option<(usize, usize)>,
) -> Result<TensorDataset, DataError> {
    let indices = dataset.split_indices(split);
    if indices.is_empty() {
        return Err(DataError::EmptySplit(split));
    }
    let mut images = Vec::with_capacity(indices.len());
    let mut labels = Vec::with_capacity(indices.len());
    for i in indices {
        let img = &dataset.images[i];
        let tensor = match resize_to {
            Some((h, w)) => {
                normalize_image(&imageops::resize_bilinear(&img.pixels, h as u32, w as u32))
            }
            None => normalize_image(&img.pixels),
        };
        images.push(tensor);
        labels.push(img.label);
    }
    Ok(TensorDataset::new(images, labels, dataset.classes.len())?)
}

/// One image's entry in the dataset manifest.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ImageRecord {
    pub path: String,
    pub class: String,
    pub split: Split,
}

/// Serialized dataset description (`dataset.json`): class counts and the
/// exact split assignment of every image.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetManifest {
    pub meta: ArtifactMeta,
    pub root: String,
    pub classes: Vec<String>,
    pub counts: Vec<usize>,
    pub train_count: usize,
    pub validation_count: usize,
    pub test_count: usize,
    pub images: Vec<ImageRecord>,
}

impl DatasetManifest {
    pub fn from_dataset(dataset: &Dataset, root: &str, meta: ArtifactMeta) -> Self {
        Self {
            meta,
            root: root.to_string(),
            classes: dataset.classes.clone(),
            counts: dataset.class_counts(),
            train_count: dataset.split_len(Split::Train),
            validation_count: dataset.split_len(Split::Validation),
            test_count: dataset.split_len(Split::Test),
            images: dataset
                .images
                .iter()
                .zip(&dataset.splits)
                .map(|(img, &split)| ImageRecord {
                    path: img.origin.clone(),
                    class: dataset.classes[img.label].clone(),
                    split,
                })
                .collect(),
        }
    }
}
