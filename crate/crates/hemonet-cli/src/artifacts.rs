//! Artifact writers. Every file embeds the seed, config digest, and tool
//! version: JSON artifacts in a `meta` object, CSV artifacts in a leading
//! `#` comment line.

use anyhow::{Context, Result};
use hemonet::checkpoint::ArtifactMeta;
use hemonet::train::TrainingHistory;
use serde::Serialize;
use std::path::Path;

pub fn meta_line(meta: &ArtifactMeta) -> String {
    format!(
        "# hemonet {} seed={} config={}\n",
        meta.version, meta.seed, meta.config_digest
    )
}

pub fn write_text(path: &Path, text: &str) -> Result<()> {
    if let Some(parent) = path.parent() {
        std::fs::create_dir_all(parent)
            .with_context(|| format!("creating {}", parent.display()))?;
    }
    std::fs::write(path, text).with_context(|| format!("writing {}", path.display()))
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value).context("serializing artifact")?;
    text.push('\n');
    write_text(path, &text)
}

pub fn history_csv(meta: &ArtifactMeta, history: &TrainingHistory) -> String {
    let mut out = meta_line(meta);
    out.push_str("epoch,train_loss,train_acc,val_loss,val_acc\n");
    for e in &history.epochs {
        out.push_str(&format!(
            "{},{:.6},{:.6},{:.6},{:.6}\n",
            e.epoch, e.train_loss, e.train_accuracy, e.val_loss, e.val_accuracy
        ));
    }
    out
}

/// Parses a history CSV back (comment lines skipped), for the report command.
pub fn parse_history_csv(text: &str) -> Result<TrainingHistory> {
    let mut epochs = Vec::new();
    for line in text
        .lines()
        .map(str::trim)
        .filter(|l| !l.is_empty() && !l.starts_with('#'))
        .skip(1)
    {
        let cells: Vec<&str> = line.split(',').collect();
        if cells.len() != 5 {
            anyhow::bail!("history row `{line}` does not have 5 columns");
        }
        epochs.push(hemonet::train::EpochRecord {
            epoch: cells[0].parse().context("epoch column")?,
            train_loss: cells[1].parse().context("train_loss column")?,
            train_accuracy: cells[2].parse().context("train_acc column")?,
            val_loss: cells[3].parse().context("val_loss column")?,
            val_accuracy: cells[4].parse().context("val_acc column")?,
        });
    }
    // Best epoch is recomputed from the parsed rows.
    let best_epoch = epochs
        .iter()
        .min_by(|a, b| a.val_loss.partial_cmp(&b.val_loss).unwrap())
        .map(|e| e.epoch)
        .unwrap_or(0);
    Ok(TrainingHistory {
        best_epoch,
        stopped_early: false,
        epochs,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use hemonet::train::EpochRecord;

    #[test]
    fn history_round_trips_through_csv() {
        let meta = ArtifactMeta::new(7, "digest");
        let history = TrainingHistory {
            epochs: vec![
                EpochRecord {
                    epoch: 1,
                    train_loss: 1.25,
                    train_accuracy: 0.5,
                    val_loss: 1.5,
                    val_accuracy: 0.4,
                },
                EpochRecord {
                    epoch: 2,
                    train_loss: 0.75,
                    train_accuracy: 0.8,
                    val_loss: 0.9,
                    val_accuracy: 0.7,
                },
            ],
            best_epoch: 2,
            stopped_early: false,
        };
        let text = history_csv(&meta, &history);
        assert!(text.starts_with("# hemonet"));
        let parsed = parse_history_csv(&text).unwrap();
        assert_eq!(parsed.epochs.len(), 2);
        assert_eq!(parsed.best_epoch, 2);
        assert!((parsed.epochs[0].train_loss - 1.25).abs() < 1e-6);
    }
}
