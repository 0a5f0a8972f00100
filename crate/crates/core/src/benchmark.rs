//! Desk-scale benchmark: baseline versus metric-learning model on the bundled
//! fixtures, and the published accuracies for user-supplied UCI files.

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::data::Dataset;
use crate::error::Result;
use crate::experiment::{grid_search_cv, CvReport, ExperimentConfig, ModelKind};
use crate::fixtures::standard_fixtures;

/// Seed of the bundled fixtures and their fold assignment.
pub const FIXTURE_SEED: u64 = 42;

/// Grid used on the bundled fixtures. Smaller than the full protocol so the
/// whole comparison runs in seconds on one core. The `model` field is
/// replaced per comparison.
pub fn fixture_config(seed: u64) -> ExperimentConfig {
    ExperimentConfig {
        c_grid: vec![0.01, 0.1, 1.0, 10.0],
        rho_grid: vec![0.01, 0.1, 1.0],
        gamma_grid: vec![0.5, 2.0],
        kpca_dims: vec![9],
        seed,
        ..ExperimentConfig::default()
    }
}

/// One dataset, evaluated with a baseline and its metric-learning counterpart.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Comparison {
    pub dataset: String,
    pub baseline: CvReport,
    pub learned: CvReport,
}

impl Comparison {
    /// Accuracy gain of the learned metric, in percentage points.
    pub fn gain_points(&self) -> f64 {
        100.0 * (self.learned.mean_accuracy - self.baseline.mean_accuracy)
    }
}

/// The pair of models compared on a dataset: kernel models for the XOR
/// fixture (no linear separator exists), linear ones otherwise.
pub fn models_for(dataset: &str) -> (ModelKind, ModelKind) {
    if dataset == "xor" {
        (ModelKind::KernelSvm, ModelKind::KernelFsvm)
    } else {
        (ModelKind::Svm, ModelKind::Fsvm)
    }
}

/// Both models of a pair on one dataset, sharing every setting but `model`.
pub fn compare(ds: &Dataset, base: ModelKind, learned: ModelKind, cfg: &ExperimentConfig) -> Result<Comparison> {
    let run = |model| grid_search_cv(ds, &ExperimentConfig { model, ..cfg.clone() }).map(|(_, r)| r);
    Ok(Comparison {
        dataset: ds.name.clone(),
        baseline: run(base)?,
        learned: run(learned)?,
    })
}

/// Runs the comparison on [`standard_fixtures`] generated from `cfg.seed`.
pub fn run_fixture_bench(cfg: &ExperimentConfig) -> Result<Vec<Comparison>> {
    standard_fixtures(cfg.seed)
        .iter()
        .map(|ds| {
            let (base, learned) = models_for(&ds.name);
            compare(ds, base, learned, cfg)
        })
        .collect()
}

/// Mean accuracies (percent) reported for the UCI benchmark.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Published {
    pub dataset: &'static str,
    pub svm: f64,
    pub fsvm: f64,
    pub kernel_svm: f64,
    pub kernel_fsvm: f64,
}

impl Published {
    pub fn accuracy(&self, model: ModelKind) -> f64 {
        match model {
            ModelKind::Svm => self.svm,
            ModelKind::Fsvm => self.fsvm,
            ModelKind::KernelSvm => self.kernel_svm,
            ModelKind::KernelFsvm => self.kernel_fsvm,
        }
    }
}

const fn row(dataset: &'static str, svm: f64, fsvm: f64, kernel_svm: f64, kernel_fsvm: f64) -> Published {
    Published {
        dataset,
        svm,
        fsvm,
        kernel_svm,
        kernel_fsvm,
    }
}

pub const PUBLISHED: [Published; 11] = [
    row("Breast cancer", 71.40, 71.68, 73.74, 73.95),
    row("Diabetes", 76.57, 77.00, 76.83, 78.84),
    row("Solar Flare", 67.66, 67.69, 67.64, 67.66),
    row("German", 75.58, 76.04, 76.36, 76.90),
    row("Heart", 83.61, 84.02, 83.43, 84.25),
    row("Image", 83.77, 84.32, 97.14, 96.93),
    row("Ringnorm", 75.41, 77.05, 98.41, 98.58),
    row("Splice", 84.54, 84.81, 90.16, 90.55),
    row("Thyroid", 89.76, 86.81, 95.91, 96.13),
    row("Twonorm", 96.92, 97.08, 97.59, 97.79),
    row("Waveform", 86.95, 86.76, 89.75, 90.95),
];

fn normalize(name: &str) -> String {
    name.chars()
        .filter(|c| c.is_ascii_alphanumeric())
        .map(|c| c.to_ascii_lowercase())
        .collect()
}

/// Looks up a dataset by name, ignoring case, spaces and punctuation, so a
/// file called `breast_cancer.libsvm` matches "Breast cancer".
pub fn published(name: &str) -> Option<&'static Published> {
    let key = normalize(name);
    PUBLISHED.iter().find(|p| normalize(p.dataset) == key)
}

fn pct(v: f64) -> String {
    format!("{:6.2}", 100.0 * v)
}

/// Plain-text table of measured accuracies, with published numbers where
/// the dataset is known.
pub fn format_table(comparisons: &[Comparison]) -> String {
    let mut out = String::new();
    let _ = writeln!(
        out,
        "{:<18} {:<12} {:>8} {:>8} {:>8} {:>8} {:>8}",
        "dataset", "models", "base", "learned", "gain", "pub.base", "pub.lrn"
    );
    for c in comparisons {
        let (base, learned) = (c.baseline.model, c.learned.model);
        let (pb, pl) = match published(&c.dataset) {
            Some(p) => (
                format!("{:6.2}", p.accuracy(base)),
                format!("{:6.2}", p.accuracy(learned)),
            ),
            None => ("-".to_string(), "-".to_string()),
        };
        let _ = writeln!(
            out,
            "{:<18} {:<12} {:>8} {:>8} {:>+8.2} {:>8} {:>8}",
            c.dataset,
            if base.is_kernel() { "kernel" } else { "linear" },
            pct(c.baseline.mean_accuracy),
            pct(c.learned.mean_accuracy),
            c.gain_points(),
            pb,
            pl
        );
    }
    out
}
