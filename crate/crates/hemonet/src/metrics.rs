//! Classification metrics over a confusion matrix.
//!
//! The matrix orientation is rows = predicted class, columns = actual class,
//! so a class's support is its column sum and its precision denominator is
//! its row sum. Zero-denominator rates come back as 0 with an explicit
//! degeneracy flag instead of aborting the report.

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum MetricsError {
    #[error(
        "predicted and actual label sequences have different lengths ({predicted} vs {actual})"
    )]
    LengthMismatch { predicted: usize, actual: usize },
    #[error("label {label} out of range for {classes} classes")]
    LabelOutOfRange { label: usize, classes: usize },
    #[error("confusion matrix needs at least one class")]
    NoClasses,
    #[error("count matrix has {got} cells, expected {expected}")]
    CountShape { expected: usize, got: usize },
    #[error("empty confusion matrix has no accuracy")]
    EmptyMatrix,
    #[error("malformed confusion CSV: {0}")]
    MalformedCsv(String),
}

/// Index of the row maximum, ties broken toward the lowest index.
pub fn argmax_label<T: PartialOrd + Copy>(row: &[T]) -> usize {
    assert!(!row.is_empty(), "argmax of an empty row");
    let mut best = 0;
    for (i, &v) in row.iter().enumerate().skip(1) {
        if v > row[best] {
            best = i;
        }
    }
    best
}

/// One-vs-rest counts for a single class.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ClassCounts {
    pub tpc: u64,
    pub fpc: u64,
    pub fnc: u64,
    pub tnc: u64,
}

/// A rate in `[0, 1]`; `degenerate` marks a zero denominator, in which case
/// the value is 0.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Rate {
    pub value: f64,
    pub degenerate: bool,
}

impl Rate {
    fn of(numerator: u64, denominator: u64) -> Self {
        if denominator == 0 {
            Self {
                value: 0.0,
                degenerate: true,
            }
        } else {
            Self {
                value: numerator as f64 / denominator as f64,
                degenerate: false,
            }
        }
    }
}

impl ClassCounts {
    /// `TP / (TP + FP)`.
    pub fn precision(&self) -> Rate {
        Rate::of(self.tpc, self.tpc + self.fpc)
    }

    /// `TP / (TP + FN)`.
    pub fn recall(&self) -> Rate {
        Rate::of(self.tpc, self.tpc + self.fnc)
    }

    /// Harmonic mean of precision and recall; 0 when both are 0.
    pub fn f1(&self) -> Rate {
        let p = self.precision();
        let r = self.recall();
        if p.value + r.value == 0.0 {
            Rate {
                value: 0.0,
                degenerate: true,
            }
        } else {
            Rate {
                value: 2.0 * p.value * r.value / (p.value + r.value),
                degenerate: p.degenerate || r.degenerate,
            }
        }
    }

    /// `TN / (TN + FP)`.
    pub fn specificity(&self) -> Rate {
        Rate::of(self.tnc, self.tnc + self.fpc)
    }
}

/// Integer count matrix with rows = predicted and columns = actual.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ConfusionMatrix {
    classes: Vec<String>,
    counts: Vec<u64>,
}

impl ConfusionMatrix {
    /// Counts paired predicted/actual label sequences.
    pub fn from_labels(
        predicted: &[usize],
        actual: &[usize],
        classes: Vec<String>,
    ) -> Result<Self, MetricsError> {
        if predicted.len() != actual.len() {
            return Err(MetricsError::LengthMismatch {
                predicted: predicted.len(),
                actual: actual.len(),
            });
        }
        let k = classes.len();
        if k == 0 {
            return Err(MetricsError::NoClasses);
        }
        let mut counts = vec![0u64; k * k];
        for (&p, &a) in predicted.iter().zip(actual) {
            for label in [p, a] {
                if label >= k {
                    return Err(MetricsError::LabelOutOfRange { label, classes: k });
                }
            }
            counts[p * k + a] += 1;
        }
        Ok(Self { classes, counts })
    }

    /// Wraps precomputed counts (row-major, rows = predicted).
    pub fn from_counts(classes: Vec<String>, counts: Vec<u64>) -> Result<Self, MetricsError> {
        let k = classes.len();
        if k == 0 {
            return Err(MetricsError::NoClasses);
        }
        if counts.len() != k * k {
            return Err(MetricsError::CountShape {
                expected: k * k,
                got: counts.len(),
            });
        }
        Ok(Self { classes, counts })
    }

    pub fn k(&self) -> usize {
        self.classes.len()
    }

    pub fn class_names(&self) -> &[String] {
        &self.classes
    }

    pub fn count(&self, predicted: usize, actual: usize) -> u64 {
        self.counts[predicted * self.k() + actual]
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().sum()
    }

    /// Column sum: how often the class actually occurred.
    pub fn support(&self, class: usize) -> u64 {
        (0..self.k()).map(|p| self.count(p, class)).sum()
    }

    /// Row sum: how often the class was predicted.
    pub fn predicted_count(&self, class: usize) -> u64 {
        (0..self.k()).map(|a| self.count(class, a)).sum()
    }

    /// One-vs-rest reduction for a class.
    pub fn class_counts(&self, class: usize) -> ClassCounts {
        let tpc = self.count(class, class);
        let fpc = self.predicted_count(class) - tpc;
        let fnc = self.support(class) - tpc;
        let tnc = self.total() - tpc - fpc - fnc;
        ClassCounts { tpc, fpc, fnc, tnc }
    }

    /// Multiclass accuracy: trace over total.
    pub fn accuracy(&self) -> Result<f64, MetricsError> {
        let total = self.total();
        if total == 0 {
            return Err(MetricsError::EmptyMatrix);
        }
        let trace: u64 = (0..self.k()).map(|c| self.count(c, c)).sum();
        Ok(trace as f64 / total as f64)
    }

    /// CSV: one header row of class names, then K count rows (rows =
    /// predicted). Lines starting with `#` are ignored on import.
    pub fn to_csv(&self) -> String {
        let mut out = String::new();
        out.push_str(&self.classes.join(","));
        out.push('\n');
        for p in 0..self.k() {
            let row: Vec<String> = (0..self.k())
                .map(|a| self.count(p, a).to_string())
                .collect();
            out.push_str(&row.join(","));
            out.push('\n');
        }
        out
    }

    pub fn from_csv(text: &str) -> Result<Self, MetricsError> {
        let mut lines = text
            .lines()
            .map(str::trim)
            .filter(|l| !l.is_empty() && !l.starts_with('#'));
        let header = lines
            .next()
            .ok_or_else(|| MetricsError::MalformedCsv("missing header".into()))?;
        let classes: Vec<String> = header.split(',').map(|s| s.trim().to_string()).collect();
        let k = classes.len();
        let mut counts = Vec::with_capacity(k * k);
        for (i, line) in lines.enumerate() {
            if i >= k {
                return Err(MetricsError::MalformedCsv(format!(
                    "more than {k} count rows"
                )));
            }
            for cell in line.split(',') {
                let v: u64 = cell.trim().parse().map_err(|_| {
                    MetricsError::MalformedCsv(format!("bad count `{cell}` in row {i}"))
                })?;
                counts.push(v);
            }
        }
        Self::from_counts(classes, counts)
    }
}

/// Per-class metric row of a [`MetricsReport`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassReport {
    pub class: String,
    pub precision: Rate,
    pub recall: Rate,
    pub f1: Rate,
    pub specificity: Rate,
    pub support: u64,
}

/// Full-precision report over a confusion matrix.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub classes: Vec<ClassReport>,
    pub accuracy: f64,
    pub macro_precision: f64,
    pub macro_recall: f64,
    pub macro_f1: f64,
    pub macro_specificity: f64,
    pub total: u64,
}

/// Computes every per-class metric, supports, overall accuracy, and macro
/// averages.
pub fn classification_report(cm: &ConfusionMatrix) -> MetricsReport {
    let k = cm.k();
    let classes: Vec<ClassReport> = (0..k)
        .map(|c| {
            let counts = cm.class_counts(c);
            ClassReport {
                class: cm.class_names()[c].clone(),
                precision: counts.precision(),
                recall: counts.recall(),
                f1: counts.f1(),
                specificity: counts.specificity(),
                support: cm.support(c),
            }
        })
        .collect();
    let mean =
        |f: &dyn Fn(&ClassReport) -> f64| -> f64 { classes.iter().map(f).sum::<f64>() / k as f64 };
    MetricsReport {
        accuracy: cm.accuracy().unwrap_or(0.0),
        macro_precision: mean(&|c| c.precision.value),
        macro_recall: mean(&|c| c.recall.value),
        macro_f1: mean(&|c| c.f1.value),
        macro_specificity: mean(&|c| c.specificity.value),
        total: cm.total(),
        classes,
    }
}

/// Rounds half-up to `decimals` places (values here are non-negative).
pub fn round_half_up(value: f64, decimals: u32) -> f64 {
    let scale = 10f64.powi(decimals as i32);
    (value * scale + 0.5).floor() / scale
}

impl MetricsReport {
    /// Renders the per-class table (metrics as rows, classes as columns) with
    /// percentages rounded half-up to `decimals` places.
    pub fn render_table(&self, decimals: u32) -> String {
        let pct = |v: f64| {
            format!(
                "{:.*}%",
                decimals as usize,
                round_half_up(v * 100.0, decimals)
            )
        };
        let mut rows: Vec<Vec<String>> = vec![
            vec!["".to_string()],
            vec!["precision".to_string()],
            vec!["recall".to_string()],
            vec!["f1-score".to_string()],
            vec!["specificity".to_string()],
            vec!["support".to_string()],
        ];
        for c in &self.classes {
            rows[0].push(c.class.clone());
            rows[1].push(pct(c.precision.value));
            rows[2].push(pct(c.recall.value));
            rows[3].push(pct(c.f1.value));
            rows[4].push(pct(c.specificity.value));
            rows[5].push(c.support.to_string());
        }
        let widths: Vec<usize> = (0..rows[0].len())
            .map(|col| rows.iter().map(|r| r[col].len()).max().unwrap_or(0))
            .collect();
        let mut out = String::new();
        for row in &rows {
            let line: Vec<String> = row
                .iter()
                .zip(&widths)
                .map(|(cell, &w)| format!("{cell:>w$}"))
                .collect();
            out.push_str(line.join("  ").trim_end());
            out.push('\n');
        }
        out.push_str(&format!(
            "accuracy {} over {} samples\n",
            pct(self.accuracy),
            self.total
        ));
        out
    }
}
