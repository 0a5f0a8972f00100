//! Cross-validated grid search, classifier bundles and report documents.

use std::cmp::Ordering;
use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::time::Instant;

use nalgebra::DMatrix;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::cv::{accuracy, fold_split, multiclass_train, stratified_kfold, MulticlassModel, Scheme};
use crate::data::{load_dataset, DataFormat, Dataset, Scaler};
use crate::error::{check_dim, FsvmError, Result};
use crate::fsvm::{train_fsvm, FsvmHyperParams, FsvmModel, ModelDocument, TrainingTrace};
use crate::kernel::{kernel_pca_fit, KernelPcaDocument, KernelPcaMap, KernelSpec};
use crate::metric::transform_samples;
use crate::radius::{verify_bounds, BoundReport, PointCloud};

pub const REPORT_FORMAT_VERSION: u32 = 1;
pub const CLASSIFIER_FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ModelKind {
    /// Linear SVM, identity metric.
    Svm,
    /// Linear F-SVM.
    Fsvm,
    /// Linear SVM on RBF kernel PCA coordinates.
    KernelSvm,
    /// F-SVM on RBF kernel PCA coordinates.
    KernelFsvm,
}

impl ModelKind {
    pub const ALL: [ModelKind; 4] = [
        ModelKind::Svm,
        ModelKind::Fsvm,
        ModelKind::KernelSvm,
        ModelKind::KernelFsvm,
    ];

    pub fn name(self) -> &'static str {
        match self {
            ModelKind::Svm => "svm",
            ModelKind::Fsvm => "fsvm",
            ModelKind::KernelSvm => "kernel-svm",
            ModelKind::KernelFsvm => "kernel-fsvm",
        }
    }

    pub fn is_kernel(self) -> bool {
        matches!(self, ModelKind::KernelSvm | ModelKind::KernelFsvm)
    }

    pub fn learns_metric(self) -> bool {
        matches!(self, ModelKind::Fsvm | ModelKind::KernelFsvm)
    }
}

impl fmt::Display for ModelKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for ModelKind {
    type Err = FsvmError;

    fn from_str(s: &str) -> Result<Self> {
        ModelKind::ALL
            .into_iter()
            .find(|k| k.name() == s)
            .ok_or_else(|| FsvmError::invalid(format!("unknown model '{s}' (svm, fsvm, kernel-svm, kernel-fsvm)")))
    }
}

pub fn default_c_grid() -> Vec<f64> {
    (-5..=15).step_by(2).map(|e| 2f64.powi(e)).collect()
}

pub fn default_rho_grid() -> Vec<f64> {
    vec![0.0, 1e-4, 1e-3, 1e-2, 1e-1, 1.0, 10.0]
}

pub fn default_gamma_grid() -> Vec<f64> {
    (-15..=3).step_by(2).map(|e| 2f64.powi(e)).collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub model: ModelKind,
    pub c_grid: Vec<f64>,
    /// Only used by metric-learning models.
    pub rho_grid: Vec<f64>,
    /// RBF `γ`; only used by kernel models.
    pub gamma_grid: Vec<f64>,
    /// Explicit kernel PCA dimensions. When empty, `kpca_fractions` of the
    /// smallest training-fold size are used.
    pub kpca_dims: Vec<usize>,
    pub kpca_fractions: Vec<f64>,
    pub folds: usize,
    /// Independent fold assignments, repeat `r` seeded with `seed + r`.
    pub repeats: usize,
    pub seed: u64,
    pub standardize: bool,
    /// Refit the selected point on all data and report radii under its metric.
    pub radius_diagnostics: bool,
    /// Solver settings shared by every grid point; `c` and `rho` are
    /// overwritten by the grid.
    pub hyper: FsvmHyperParams,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            model: ModelKind::Fsvm,
            c_grid: default_c_grid(),
            rho_grid: default_rho_grid(),
            gamma_grid: default_gamma_grid(),
            kpca_dims: Vec::new(),
            kpca_fractions: vec![1.0, 0.75, 0.5, 0.25],
            folds: 10,
            repeats: 1,
            seed: 42,
            standardize: true,
            radius_diagnostics: true,
            hyper: FsvmHyperParams::default(),
        }
    }
}

impl ExperimentConfig {
    pub fn validate(&self) -> Result<()> {
        let nonempty = |name: &str, len: usize| {
            if len == 0 {
                Err(FsvmError::invalid(format!("{name} grid is empty")))
            } else {
                Ok(())
            }
        };
        nonempty("C", self.c_grid.len())?;
        if self.c_grid.iter().any(|c| !(c.is_finite() && *c > 0.0)) {
            return Err(FsvmError::invalid("C grid values must be positive"));
        }
        if self.model.learns_metric() {
            nonempty("rho", self.rho_grid.len())?;
            if self.rho_grid.iter().any(|r| !(r.is_finite() && *r >= 0.0)) {
                return Err(FsvmError::invalid("rho grid values must be non-negative"));
            }
        }
        if self.model.is_kernel() {
            nonempty("gamma", self.gamma_grid.len())?;
            if self.gamma_grid.iter().any(|g| !(g.is_finite() && *g > 0.0)) {
                return Err(FsvmError::invalid("gamma grid values must be positive"));
            }
            if self.kpca_dims.is_empty() {
                nonempty("kernel PCA fraction", self.kpca_fractions.len())?;
                if self.kpca_fractions.iter().any(|f| !(*f > 0.0 && *f <= 1.0)) {
                    return Err(FsvmError::invalid("kernel PCA fractions must lie in (0, 1]"));
                }
            } else if self.kpca_dims.contains(&0) {
                return Err(FsvmError::invalid("kernel PCA dimensions must be at least 1"));
            }
        }
        if self.folds < 2 {
            return Err(FsvmError::invalid(format!("need at least 2 folds, got {}", self.folds)));
        }
        if self.repeats == 0 {
            return Err(FsvmError::invalid("repeats must be at least 1"));
        }
        self.hyper.validate()
    }

    pub fn from_json(text: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| FsvmError::Document(format!("config: {e}")))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|source| FsvmError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        Self::from_json(&text)
    }

    /// Kernel PCA dimensions for a training size of `n_train`, ascending.
    fn resolve_dims(&self, n_train: usize) -> Vec<Option<usize>> {
        if !self.model.is_kernel() {
            return vec![None];
        }
        let mut dims: Vec<usize> = if self.kpca_dims.is_empty() {
            self.kpca_fractions
                .iter()
                .map(|f| ((f * n_train as f64).ceil() as usize).max(1))
                .collect()
        } else {
            self.kpca_dims.clone()
        };
        for d in dims.iter_mut() {
            if *d > n_train {
                log::warn!("kernel PCA dimension {d} exceeds training size {n_train}; clamped");
                *d = n_train;
            }
        }
        dims.sort_unstable();
        dims.dedup();
        dims.into_iter().map(Some).collect()
    }

    fn grid_points(&self, dims: &[Option<usize>]) -> Vec<GridPoint> {
        let rhos: Vec<Option<f64>> = if self.model.learns_metric() {
            self.rho_grid.iter().copied().map(Some).collect()
        } else {
            vec![None]
        };
        let gammas: Vec<Option<f64>> = if self.model.is_kernel() {
            self.gamma_grid.iter().copied().map(Some).collect()
        } else {
            vec![None]
        };
        let mut out = Vec::new();
        for &c in &self.c_grid {
            for &rho in &rhos {
                for &gamma in &gammas {
                    for &kpca_dim in dims {
                        out.push(GridPoint {
                            c,
                            rho,
                            gamma,
                            kpca_dim,
                        });
                    }
                }
            }
        }
        out
    }
}

/// One hyperparameter combination. Fields irrelevant to the model are absent.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GridPoint {
    pub c: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub rho: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub gamma: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub kpca_dim: Option<usize>,
}

impl GridPoint {
    /// Tie-break order: smaller `C`, then `ρ`, then `γ`, then `d`.
    pub fn tie_order(&self, other: &GridPoint) -> Ordering {
        let opt = |a: Option<f64>, b: Option<f64>| match (a, b) {
            (Some(a), Some(b)) => a.total_cmp(&b),
            (a, b) => a.is_some().cmp(&b.is_some()),
        };
        self.c
            .total_cmp(&other.c)
            .then(opt(self.rho, other.rho))
            .then(opt(self.gamma, other.gamma))
            .then(self.kpca_dim.cmp(&other.kpca_dim))
    }

    pub fn hyper(&self, kind: ModelKind, base: &FsvmHyperParams) -> FsvmHyperParams {
        if kind.learns_metric() {
            FsvmHyperParams {
                c: self.c,
                rho: self.rho.unwrap_or(base.rho),
                ..base.clone()
            }
        } else {
            base.to_plain_svm(self.c)
        }
    }

    fn kernel(&self) -> Result<Option<KernelSpec>> {
        self.gamma.map(KernelSpec::rbf).transpose()
    }
}

impl fmt::Display for GridPoint {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "C={}", self.c)?;
        if let Some(r) = self.rho {
            write!(f, " rho={r}")?;
        }
        if let Some(g) = self.gamma {
            write!(f, " gamma={g}")?;
        }
        if let Some(d) = self.kpca_dim {
            write!(f, " d={d}")?;
        }
        Ok(())
    }
}

fn train_linear_multiclass(
    x: &DMatrix<f64>,
    y: &[i64],
    hyper: &FsvmHyperParams,
) -> Result<(MulticlassModel<FsvmModel>, Vec<TrainingTrace>)> {
    let paired = multiclass_train(x, y, |x, s| train_fsvm(x, s, hyper))?;
    let (models, traces) = paired.models.into_iter().unzip();
    Ok((
        MulticlassModel {
            classes: paired.classes,
            models,
            scheme: paired.scheme,
        },
        traces,
    ))
}

/// Standardization, optional kernel PCA and one or more F-SVM models.
#[derive(Debug, Clone, PartialEq)]
pub struct Classifier {
    pub kind: ModelKind,
    pub point: GridPoint,
    pub scaler: Option<Scaler>,
    pub kpca: Option<KernelPcaMap>,
    pub inner: MulticlassModel<FsvmModel>,
}

impl Classifier {
    pub fn input_dim(&self) -> usize {
        match (&self.scaler, &self.kpca) {
            (Some(s), _) => s.mean.len(),
            (None, Some(k)) => k.input_dim(),
            (None, None) => self.inner.models[0].dim(),
        }
    }

    /// Coordinates the linear models operate on.
    pub fn features(&self, x: &DMatrix<f64>) -> Result<DMatrix<f64>> {
        check_dim(self.input_dim(), x.ncols())?;
        let scaled = match &self.scaler {
            Some(s) => s.transform(x)?,
            None => x.clone(),
        };
        match &self.kpca {
            Some(map) => map.project_many(&scaled),
            None => Ok(scaled),
        }
    }

    pub fn predict_many(&self, x: &DMatrix<f64>) -> Result<Vec<i64>> {
        self.inner.predict_many(&self.features(x)?)
    }

    /// Per-model decision values for every row.
    pub fn scores(&self, x: &DMatrix<f64>) -> Result<Vec<Vec<f64>>> {
        let f = self.features(x)?;
        f.row_iter()
            .map(|r| self.inner.scores(r.transpose().as_slice()))
            .collect()
    }

    pub fn to_document(&self) -> ClassifierDocument {
        ClassifierDocument {
            format_version: CLASSIFIER_FORMAT_VERSION,
            model: self.kind,
            point: self.point,
            classes: self.inner.classes.clone(),
            scheme: self.inner.scheme,
            scaler: self.scaler.clone(),
            kpca: self.kpca.as_ref().map(KernelPcaMap::to_document),
            models: self.inner.models.iter().map(FsvmModel::to_document).collect(),
        }
    }

    pub fn from_document(doc: ClassifierDocument) -> Result<Self> {
        if doc.format_version != CLASSIFIER_FORMAT_VERSION {
            return Err(FsvmError::Document(format!(
                "unsupported classifier format version {}",
                doc.format_version
            )));
        }
        let expected = match doc.scheme {
            Scheme::Binary => 1,
            Scheme::OneVsRest => doc.classes.len(),
        };
        if doc.models.len() != expected || doc.classes.len() < 2 {
            return Err(FsvmError::Document("model count does not match classes".into()));
        }
        let models = doc
            .models
            .into_iter()
            .map(FsvmModel::from_document)
            .collect::<Result<Vec<_>>>()?;
        let kpca = doc.kpca.map(KernelPcaMap::from_document).transpose()?;
        let feature_dim = kpca
            .as_ref()
            .map_or_else(|| doc.scaler.as_ref().map(|s| s.mean.len()), |k| Some(k.dim()));
        if let Some(d) = feature_dim {
            for m in &models {
                check_dim(d, m.dim())?;
            }
        }
        Ok(Classifier {
            kind: doc.model,
            point: doc.point,
            scaler: doc.scaler,
            kpca,
            inner: MulticlassModel {
                classes: doc.classes,
                models,
                scheme: doc.scheme,
            },
        })
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(&self.to_document()).expect("classifier document serializes")
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let doc: ClassifierDocument = serde_json::from_str(text).map_err(|e| FsvmError::Document(e.to_string()))?;
        Self::from_document(doc)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassifierDocument {
    pub format_version: u32,
    pub model: ModelKind,
    pub point: GridPoint,
    pub classes: Vec<i64>,
    pub scheme: Scheme,
    pub scaler: Option<Scaler>,
    pub kpca: Option<KernelPcaDocument>,
    pub models: Vec<ModelDocument>,
}

/// Fits the full pipeline on `ds` at one grid point.
pub fn train_classifier(
    ds: &Dataset,
    kind: ModelKind,
    point: &GridPoint,
    base: &FsvmHyperParams,
    standardize: bool,
) -> Result<(Classifier, Vec<TrainingTrace>)> {
    if kind.is_kernel() != point.gamma.is_some() {
        return Err(FsvmError::invalid(format!(
            "{kind} needs gamma exactly when it is a kernel model"
        )));
    }
    let scaler = if standardize { Some(Scaler::fit(&ds.x)?) } else { None };
    let scaled = match &scaler {
        Some(s) => s.transform(&ds.x)?,
        None => ds.x.clone(),
    };
    let (kpca, features) = match point.kernel()? {
        Some(spec) => {
            let d = point.kpca_dim.unwrap_or(ds.len()).min(ds.len());
            let map = kernel_pca_fit(&scaled, &spec, d)?;
            let f = map.project_many(&scaled)?;
            (Some(map), f)
        }
        None => (None, scaled),
    };
    let hyper = point.hyper(kind, base);
    let (inner, traces) = train_linear_multiclass(&features, &ds.y, &hyper)?;
    Ok((
        Classifier {
            kind,
            point: *point,
            scaler,
            kpca,
            inner,
        },
        traces,
    ))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceSummary {
    /// Class treated as `+1` by this binary model.
    pub positive_class: i64,
    pub outer_iterations: usize,
    pub converged: bool,
    pub objectives: Vec<f64>,
}

fn summarize(inner_classes: &[i64], scheme: Scheme, traces: &[TrainingTrace]) -> Vec<TraceSummary> {
    traces
        .iter()
        .enumerate()
        .map(|(i, t)| TraceSummary {
            positive_class: match scheme {
                Scheme::Binary => inner_classes[1],
                Scheme::OneVsRest => inner_classes[i],
            },
            outer_iterations: t.iterations.len(),
            converged: t.converged,
            objectives: t.objectives(),
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FoldRecord {
    pub repeat: usize,
    pub fold: usize,
    pub n_train: usize,
    pub n_test: usize,
    pub accuracy: f64,
    /// Wall-clock training time, preprocessing included, loading excluded.
    pub train_seconds: f64,
    pub traces: Vec<TraceSummary>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridScore {
    pub point: GridPoint,
    pub mean_accuracy: f64,
    pub std_accuracy: f64,
}

/// Radii of the full training set under the refitted model's metric.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RadiusDiagnostics {
    pub positive_class: i64,
    /// Points `M^{1/2}xᵢ`.
    pub learned: BoundReport,
    /// Points `xᵢ` (identity metric) in the same coordinates.
    pub identity: BoundReport,
    /// `‖v‖ = √(wᵀM⁻¹w)`.
    pub weight_norm: f64,
    /// `R‖v‖` under the learned metric.
    pub radius_margin: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CvReport {
    pub format_version: u32,
    pub dataset: String,
    pub model: ModelKind,
    pub n_samples: usize,
    pub n_features: usize,
    pub classes: Vec<i64>,
    pub best: GridPoint,
    pub mean_accuracy: f64,
    /// Population standard deviation over `folds`.
    pub std_accuracy: f64,
    pub folds: Vec<FoldRecord>,
    pub mean_train_seconds: f64,
    pub grid: Vec<GridScore>,
    pub radius: Vec<RadiusDiagnostics>,
    pub config: ExperimentConfig,
}

impl CvReport {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }

    pub fn from_json(text: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| FsvmError::Document(e.to_string()))
    }

    /// Copy with every wall-clock field zeroed, for reproducibility checks.
    pub fn without_timing(&self) -> CvReport {
        let mut r = self.clone();
        r.mean_train_seconds = 0.0;
        for f in &mut r.folds {
            f.train_seconds = 0.0;
        }
        r
    }
}

pub fn mean_std(v: &[f64]) -> (f64, f64) {
    if v.is_empty() {
        return (0.0, 0.0);
    }
    let n = v.len() as f64;
    let mean = v.iter().sum::<f64>() / n;
    let var = v.iter().map(|a| (a - mean) * (a - mean)).sum::<f64>() / n;
    (mean, var.sqrt())
}

struct Split {
    repeat: usize,
    fold: usize,
    train: Vec<usize>,
    test: Vec<usize>,
}

/// Preprocessed coordinates for one split (and one `γ` for kernel models).
struct Prepared {
    train: DMatrix<f64>,
    test: DMatrix<f64>,
    seconds: f64,
}

struct Evaluation {
    accuracy: f64,
    seconds: f64,
    traces: Vec<TraceSummary>,
}

fn prepare(
    ds: &Dataset,
    split: &Split,
    gamma: Option<f64>,
    max_dim: Option<usize>,
    standardize: bool,
) -> Result<Prepared> {
    let started = Instant::now();
    let train = ds.x.select_rows(&split.train);
    let test = ds.x.select_rows(&split.test);
    let (train, test) = if standardize {
        let s = Scaler::fit(&train)?;
        (s.transform(&train)?, s.transform(&test)?)
    } else {
        (train, test)
    };
    let (train, test) = match gamma {
        Some(g) => {
            let d = max_dim.unwrap_or(train.nrows()).min(train.nrows());
            let map = kernel_pca_fit(&train, &KernelSpec::rbf(g)?, d)?;
            (map.project_many(&train)?, map.project_many(&test)?)
        }
        None => (train, test),
    };
    Ok(Prepared {
        train,
        test,
        seconds: started.elapsed().as_secs_f64(),
    })
}

fn evaluate(
    ds: &Dataset,
    split: &Split,
    prep: &Prepared,
    point: &GridPoint,
    cfg: &ExperimentConfig,
) -> Result<Evaluation> {
    let started = Instant::now();
    let cols = point.kpca_dim.map_or(prep.train.ncols(), |d| d.min(prep.train.ncols()));
    let train_x = prep.train.columns(0, cols).into_owned();
    let test_x = prep.test.columns(0, cols).into_owned();
    let train_y: Vec<i64> = split.train.iter().map(|&i| ds.y[i]).collect();
    let test_y: Vec<i64> = split.test.iter().map(|&i| ds.y[i]).collect();
    let hyper = point.hyper(cfg.model, &cfg.hyper);
    let (model, traces) = train_linear_multiclass(&train_x, &train_y, &hyper)?;
    let seconds = prep.seconds + started.elapsed().as_secs_f64();
    let predicted = model.predict_many(&test_x)?;
    Ok(Evaluation {
        accuracy: accuracy(&predicted, &test_y),
        seconds,
        traces: summarize(&model.classes, model.scheme, &traces),
    })
}

/// Evaluates every grid point on identical folds and returns the point with
/// the highest mean accuracy, ties broken by [`GridPoint::tie_order`].
pub fn grid_search_cv(ds: &Dataset, cfg: &ExperimentConfig) -> Result<(GridPoint, CvReport)> {
    cfg.validate()?;
    let classes = ds.classes();
    if classes.len() < 2 {
        return Err(FsvmError::degenerate(format!("{}: only one class present", ds.name)));
    }
    let mut splits = Vec::new();
    for repeat in 0..cfg.repeats {
        let assignment = stratified_kfold(&ds.y, cfg.folds, cfg.seed.wrapping_add(repeat as u64))?;
        for fold in 0..cfg.folds {
            let (train, test) = fold_split(&assignment, fold);
            splits.push(Split {
                repeat,
                fold,
                train,
                test,
            });
        }
    }
    let min_train = splits.iter().map(|s| s.train.len()).min().unwrap_or(0);
    let dims = cfg.resolve_dims(min_train);
    let max_dim = dims.iter().flatten().copied().max();
    let gammas: Vec<Option<f64>> = if cfg.model.is_kernel() {
        cfg.gamma_grid.iter().copied().map(Some).collect()
    } else {
        vec![None]
    };

    let prep_units: Vec<(usize, usize)> = (0..splits.len())
        .flat_map(|s| (0..gammas.len()).map(move |g| (s, g)))
        .collect();
    let prepared: Vec<Prepared> = prep_units
        .par_iter()
        .map(|&(s, g)| prepare(ds, &splits[s], gammas[g], max_dim, cfg.standardize))
        .collect::<Result<_>>()?;
    let prepared_for = |s: usize, gamma: Option<f64>| {
        let g = gammas
            .iter()
            .position(|&x| x == gamma)
            .expect("gamma comes from the grid");
        &prepared[s * gammas.len() + g]
    };

    let points = cfg.grid_points(&dims);
    let units: Vec<(usize, usize)> = (0..points.len())
        .flat_map(|p| (0..splits.len()).map(move |s| (p, s)))
        .collect();
    let evals: Vec<Evaluation> = units
        .par_iter()
        .map(|&(p, s)| evaluate(ds, &splits[s], prepared_for(s, points[p].gamma), &points[p], cfg))
        .collect::<Result<_>>()?;

    let per_point = |p: usize| &evals[p * splits.len()..(p + 1) * splits.len()];
    let grid: Vec<GridScore> = points
        .iter()
        .enumerate()
        .map(|(p, point)| {
            let acc: Vec<f64> = per_point(p).iter().map(|e| e.accuracy).collect();
            let (mean_accuracy, std_accuracy) = mean_std(&acc);
            GridScore {
                point: *point,
                mean_accuracy,
                std_accuracy,
            }
        })
        .collect();
    let mut best = 0;
    for (p, g) in grid.iter().enumerate().skip(1) {
        let b = &grid[best];
        if g.mean_accuracy > b.mean_accuracy
            || (g.mean_accuracy == b.mean_accuracy && g.point.tie_order(&b.point) == Ordering::Less)
        {
            best = p;
        }
    }
    let best_point = grid[best].point;
    let folds: Vec<FoldRecord> = splits
        .iter()
        .zip(per_point(best))
        .map(|(s, e)| FoldRecord {
            repeat: s.repeat,
            fold: s.fold,
            n_train: s.train.len(),
            n_test: s.test.len(),
            accuracy: e.accuracy,
            train_seconds: e.seconds,
            traces: e.traces.clone(),
        })
        .collect();
    let (mean_accuracy, std_accuracy) = mean_std(&folds.iter().map(|f| f.accuracy).collect::<Vec<_>>());
    let (mean_train_seconds, _) = mean_std(&folds.iter().map(|f| f.train_seconds).collect::<Vec<_>>());
    let radius = if cfg.radius_diagnostics {
        radius_diagnostics(ds, cfg, &best_point)?
    } else {
        Vec::new()
    };
    let report = CvReport {
        format_version: REPORT_FORMAT_VERSION,
        dataset: ds.name.clone(),
        model: cfg.model,
        n_samples: ds.len(),
        n_features: ds.dim(),
        classes,
        best: best_point,
        mean_accuracy,
        std_accuracy,
        folds,
        mean_train_seconds,
        grid,
        radius,
        config: cfg.clone(),
    };
    Ok((best_point, report))
}

/// Refits `point` on the whole dataset and measures radii of the training
/// features under each binary model's metric.
pub fn radius_diagnostics(ds: &Dataset, cfg: &ExperimentConfig, point: &GridPoint) -> Result<Vec<RadiusDiagnostics>> {
    let (clf, _) = train_classifier(ds, cfg.model, point, &cfg.hyper, cfg.standardize)?;
    let features = clf.features(&ds.x)?;
    let identity = verify_bounds(&PointCloud::new(features.clone())?);
    let positives: Vec<i64> = match clf.inner.scheme {
        Scheme::Binary => vec![clf.inner.classes[1]],
        Scheme::OneVsRest => clf.inner.classes.clone(),
    };
    clf.inner
        .models
        .iter()
        .zip(positives)
        .map(|(m, positive_class)| {
            let z = transform_samples(&m.metric, &features)?;
            let learned = verify_bounds(&PointCloud::new(z)?);
            let weight_norm = m.metric.inverse_quadratic_form(&m.w)?.max(0.0).sqrt();
            Ok(RadiusDiagnostics {
                positive_class,
                radius_margin: learned.radius * weight_norm,
                learned,
                identity: identity.clone(),
                weight_norm,
            })
        })
        .collect()
}

/// Runs the grid search on each dataset file and writes
/// `<out_dir>/<stem>.<model>.json`.
pub fn run_experiment(
    cfg: &ExperimentConfig,
    paths: &[PathBuf],
    format: Option<DataFormat>,
    label_col: Option<&str>,
    out_dir: &Path,
) -> Result<Vec<(PathBuf, CvReport)>> {
    let mut out = Vec::new();
    for path in paths {
        let fmt = format.unwrap_or_else(|| DataFormat::guess(path));
        let mut ds = load_dataset(path, fmt, label_col)?;
        if let Some(stem) = path.file_stem() {
            ds.name = stem.to_string_lossy().into_owned();
        }
        let (_, report) = grid_search_cv(&ds, cfg)?;
        let file = write_report(&report, out_dir)?;
        out.push((file, report));
    }
    Ok(out)
}

pub fn write_report(report: &CvReport, out_dir: &Path) -> Result<PathBuf> {
    let io = |path: &Path| {
        let path = path.to_path_buf();
        move |source| FsvmError::Io { path, source }
    };
    fs::create_dir_all(out_dir).map_err(io(out_dir))?;
    let file = out_dir.join(format!("{}.{}.json", report.dataset, report.model));
    fs::write(&file, report.to_json()).map_err(io(&file))?;
    Ok(file)
}
