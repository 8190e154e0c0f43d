//! Seeded synthetic datasets for tests and demos: each class gets a distinct
//! base color and a bright disc in a class-specific corner, plus pixel noise,
//! so small networks can separate the classes quickly.

use super::{Dataset, LabeledImage, Lineage};
use image::{Rgb, RgbImage};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn class_color(class: usize) -> [u8; 3] {
    const PALETTE: [[u8; 3]; 8] = [
        [200, 70, 70],
        [70, 200, 70],
        [70, 70, 200],
        [200, 200, 70],
        [200, 70, 200],
        [70, 200, 200],
        [230, 140, 40],
        [140, 40, 230],
    ];
    PALETTE[class % PALETTE.len()]
}

/// Generates `per_class` square images per class, deterministically from the
/// seed.
pub fn synthetic_blobs(classes: usize, per_class: usize, size: u32, seed: u64) -> Dataset {
    assert!(classes >= 2, "need at least two classes");
    let class_names: Vec<String> = (0..classes).map(|c| format!("class_{c}")).collect();
    let mut images = Vec::with_capacity(classes * per_class);
    for class in 0..classes {
        let base = class_color(class);
        // Disc centre rotates through the four quadrants by class.
        let quadrant = class % 4;
        let (cx, cy) = match quadrant {
            0 => (size / 4, size / 4),
            1 => (3 * size / 4, size / 4),
            2 => (size / 4, 3 * size / 4),
            _ => (3 * size / 4, 3 * size / 4),
        };
        let radius = (size as f64 / 5.0).max(2.0);
        for index in 0..per_class {
            let mut rng =
                ChaCha8Rng::seed_from_u64(crate::mix_seed(seed, &[class as u64, index as u64]));
            let mut pixels = RgbImage::new(size, size);
            for y in 0..size {
                for x in 0..size {
                    let dx = x as f64 - cx as f64;
                    let dy = y as f64 - cy as f64;
                    let in_disc = (dx * dx + dy * dy).sqrt() < radius;
                    let mut channel = [0u8; 3];
                    for c in 0..3 {
                        let mut v = base[c] as i32;
                        if in_disc {
                            v += 55;
                        }
                        v += rng.random_range(-18..=18);
                        channel[c] = v.clamp(0, 255) as u8;
                    }
                    pixels.put_pixel(x, y, Rgb(channel));
                }
            }
            images.push(LabeledImage {
                pixels,
                label: class,
                origin: format!("class_{class}/synthetic_{index:04}.png"),
                lineage: Lineage::Original,
            });
        }
    }
    Dataset::new(class_names, images)
}

/// Writes a synthetic dataset to disk in the class-folder layout, for
/// exercising the ingestion path end to end.
pub fn write_synthetic_tree(
    dataset: &Dataset,
    root: &std::path::Path,
) -> Result<(), super::DataError> {
    for image in &dataset.images {
        let path = root.join(&image.origin);
        if let Some(parent) = path.parent() {
            std::fs::create_dir_all(parent).map_err(|e| super::DataError::Io {
                path: parent.display().to_string(),
                source: e,
            })?;
        }
        image.pixels.save(&path).map_err(|e| super::DataError::Io {
            path: path.display().to_string(),
            source: std::io::Error::other(e),
        })?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn deterministic_and_sized() {
        let a = synthetic_blobs(4, 3, 16, 7);
        let b = synthetic_blobs(4, 3, 16, 7);
        assert_eq!(a.len(), 12);
        assert_eq!(a.classes.len(), 4);
        for (x, y) in a.images.iter().zip(&b.images) {
            assert_eq!(x.pixels, y.pixels);
        }
        let c = synthetic_blobs(4, 3, 16, 8);
        assert!(a
            .images
            .iter()
            .zip(&c.images)
            .any(|(x, y)| x.pixels != y.pixels));
    }

    #[test]
    fn classes_are_visually_distinct() {
        let d = synthetic_blobs(2, 1, 16, 3);
        let a = &d.images[0].pixels;
        let b = &d.images[1].pixels;
        let mean = |img: &RgbImage, c: usize| -> f64 {
            img.pixels().map(|p| p.0[c] as f64).sum::<f64>() / (16.0 * 16.0)
        };
        // Class 0 is red-dominant, class 1 green-dominant.
        assert!(mean(a, 0) > mean(a, 1) + 50.0);
        assert!(mean(b, 1) > mean(b, 0) + 50.0);
    }
}
