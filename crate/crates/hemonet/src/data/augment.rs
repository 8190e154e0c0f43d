//! Seeded augmentation: each original image yields a fixed number of
//! variants, each produced by a random non-empty subset of the transform
//! menu, with the exact parameters recorded in the image's lineage.

use super::imageops;
use super::{DataError, Dataset, LabeledImage, Lineage, Split};
use image::RgbImage;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use std::path::Path;

/// One applied transform with its exact parameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "transform", rename_all = "snake_case")]
pub enum TransformRecord {
    Rotation { degrees: f64 },
    QuarterRotation { turns: u8 },
    Distortion { amplitude: f64, field_seed: u64 },
    Shear { x: f64, y: f64 },
    FlipVertical,
    FlipHorizontal,
    Skew { strength: f64 },
    Intensity { factor: f64, offset: f64 },
}

impl TransformRecord {
    /// Applies this transform to an image.
    pub fn apply(&self, img: &RgbImage) -> RgbImage {
        match *self {
            TransformRecord::Rotation { degrees } => imageops::rotate_degrees(img, degrees),
            TransformRecord::QuarterRotation { turns } => imageops::rotate_quarter(img, turns),
            TransformRecord::Distortion {
                amplitude,
                field_seed,
            } => imageops::elastic_distortion(img, amplitude, field_seed),
            TransformRecord::Shear { x, y } => imageops::shear(img, x, y),
            TransformRecord::FlipVertical => imageops::flip_vertical(img),
            TransformRecord::FlipHorizontal => imageops::flip_horizontal(img),
            TransformRecord::Skew { strength } => imageops::skew(img, strength),
            TransformRecord::Intensity { factor, offset } => {
                imageops::intensity(img, factor, offset)
            }
        }
    }
}

/// How many variants to derive per original image and from which seed.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct AugmentPlan {
    pub variants: usize,
    pub seed: u64,
}

impl Default for AugmentPlan {
    fn default() -> Self {
        Self {
            variants: 10,
            seed: 0,
        }
    }
}

const MENU_LEN: usize = 8;

/// Draws one transform with freshly sampled parameters.
fn draw_transform(slot: usize, rng: &mut ChaCha8Rng) -> TransformRecord {
    match slot {
        0 => TransformRecord::Rotation {
            degrees: rng.random_range(-15.0..=15.0),
        },
        1 => TransformRecord::QuarterRotation {
            turns: rng.random_range(1..=3),
        },
        2 => TransformRecord::Distortion {
            amplitude: rng.random_range(1.0..=3.0),
            field_seed: rng.random(),
        },
        3 => TransformRecord::Shear {
            x: rng.random_range(-0.15..=0.15),
            y: rng.random_range(-0.15..=0.15),
        },
        4 => TransformRecord::FlipVertical,
        5 => TransformRecord::FlipHorizontal,
        6 => TransformRecord::Skew {
            strength: rng.random_range(0.05..=0.2),
        },
        _ => TransformRecord::Intensity {
            factor: rng.random_range(0.8..=1.2),
            offset: rng.random_range(-20.0..=20.0),
        },
    }
}

/// Derives `plan.variants` augmented images from one original. Every variant
/// applies a random subset (at least one) of the transform menu; outputs keep
/// the source label and dimensions (quarter turns are restricted to half
/// turns for non-square images so dimensions never change).
pub fn augment_image(image: &LabeledImage, plan: &AugmentPlan) -> Vec<LabeledImage> {
    let origin_hash = crate::fnv1a64(image.origin.as_bytes());
    let square = image.pixels.width() == image.pixels.height();
    (0..plan.variants)
        .map(|variant| {
            let seed = crate::mix_seed(plan.seed, &[origin_hash, variant as u64]);
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let mut chosen: Vec<usize> = (0..MENU_LEN).filter(|_| rng.random_bool(0.3)).collect();
            if chosen.is_empty() {
                chosen.push(rng.random_range(0..MENU_LEN));
            }
            let mut pixels = image.pixels.clone();
            let mut transforms = Vec::with_capacity(chosen.len());
            for slot in chosen {
                let mut record = draw_transform(slot, &mut rng);
                if let TransformRecord::QuarterRotation { turns } = &mut record {
                    if !square {
                        *turns = 2;
                    }
                }
                pixels = record.apply(&pixels);
                transforms.push(record);
            }
            LabeledImage {
                pixels,
                label: image.label,
                origin: image.origin.clone(),
                lineage: Lineage::Augmented { seed, transforms },
            }
        })
        .collect()
}

/// Expands the training split in place: every train image gains
/// `plan.variants` augmented siblings; validation and test stay untouched.
/// Outputs are appended in a deterministic order keyed by source then
/// variant index.
pub fn augment_training_split(dataset: &mut Dataset, plan: &AugmentPlan) {
    let train: Vec<usize> = dataset.split_indices(Split::Train);
    let mut appended = Vec::new();
    for idx in train {
        appended.extend(augment_image(&dataset.images[idx], plan));
    }
    for img in appended {
        dataset.images.push(img);
        dataset.splits.push(Split::Train);
    }
}

/// Sidecar describing one materialized augmented image.
#[derive(Debug, Serialize, Deserialize)]
struct LineageSidecar {
    origin: String,
    class: String,
    seed: u64,
    transforms: Vec<TransformRecord>,
}

/// Writes augmented images as `<out>/<class>/<stem>__augNN.png` with a JSON
/// lineage sidecar next to each. Returns the number of files written.
pub fn materialize_augmented(dataset: &Dataset, out_dir: &Path) -> Result<usize, DataError> {
    let io_err = |path: &Path, source: std::io::Error| DataError::Io {
        path: path.display().to_string(),
        source,
    };
    let mut written = 0usize;
    let mut per_origin: std::collections::HashMap<&str, usize> = std::collections::HashMap::new();
    for image in &dataset.images {
        let Lineage::Augmented { seed, transforms } = &image.lineage else {
            continue;
        };
        let class = &dataset.classes[image.label];
        let class_dir = out_dir.join(class);
        std::fs::create_dir_all(&class_dir).map_err(|e| io_err(&class_dir, e))?;
        let stem = Path::new(&image.origin)
            .file_stem()
            .map(|s| s.to_string_lossy().to_string())
            .unwrap_or_else(|| "image".to_string());
        let counter = per_origin.entry(image.origin.as_str()).or_insert(0);
        let png_path = class_dir.join(format!("{stem}__aug{counter:02}.png"));
        let json_path = class_dir.join(format!("{stem}__aug{counter:02}.json"));
        *counter += 1;
        image
            .pixels
            .save(&png_path)
            .map_err(|e| io_err(&png_path, std::io::Error::other(e)))?;
        let sidecar = LineageSidecar {
            origin: image.origin.clone(),
            class: class.clone(),
            seed: *seed,
            transforms: transforms.clone(),
        };
        let text = serde_json::to_string_pretty(&sidecar).expect("sidecar serializes");
        std::fs::write(&json_path, text).map_err(|e| io_err(&json_path, e))?;
        written += 1;
    }
    Ok(written)
}
