use crate::artifacts::write_json;
use crate::config::RunConfig;
use anyhow::Result;
use hemonet::checkpoint::ArtifactMeta;
use hemonet::data::{ingest_dataset, split_dataset, DatasetManifest, Split};
use std::path::Path;

pub fn run(root: &Path, config: &RunConfig) -> Result<()> {
    let (mut dataset, warnings) = ingest_dataset(root)?;
    for w in &warnings {
        eprintln!("warning: {w}");
    }
    let split_warnings = split_dataset(&mut dataset, config.split.into(), config.seed)?;
    for w in &split_warnings {
        eprintln!("warning: {w}");
    }

    let meta = ArtifactMeta::new(config.seed, config.digest());
    let manifest = DatasetManifest::from_dataset(&dataset, &root.display().to_string(), meta);
    let out = config.out_dir.join("dataset.json");
    write_json(&out, &manifest)?;

    println!(
        "{:<24} {:>7} {:>7} {:>11} {:>6}",
        "class", "total", "train", "validation", "test"
    );
    for (idx, class) in dataset.classes.iter().enumerate() {
        let (mut train, mut val, mut test) = (0usize, 0usize, 0usize);
        for (img, &split) in dataset.images.iter().zip(&dataset.splits) {
            if img.label != idx {
                continue;
            }
            match split {
                Split::Train => train += 1,
                Split::Validation => val += 1,
                Split::Test => test += 1,
            }
        }
        println!(
            "{:<24} {:>7} {:>7} {:>11} {:>6}",
            class,
            train + val + test,
            train,
            val,
            test
        );
    }
    println!(
        "{:<24} {:>7} {:>7} {:>11} {:>6}",
        "total",
        dataset.len(),
        dataset.split_len(Split::Train),
        dataset.split_len(Split::Validation),
        dataset.split_len(Split::Test)
    );
    println!("wrote {}", out.display());
    Ok(())
}
