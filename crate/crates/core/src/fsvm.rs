//! Joint learning of a metric `M` and a linear classifier `(w, b)` by
//! alternating minimization of
//!
//! ```text
//! ½ wᵀM⁻¹w + C Σᵢ max(0, 1 − yᵢ(wᵀxᵢ + b)) + ρ tr(MS),   M ≻ 0
//! ```
//!
//! With `M` fixed the problem is a standard soft-margin SVM on the samples
//! `zᵢ = M^{1/2} xᵢ`; with `(w, b)` fixed it is a smooth convex problem in `M`
//! handled by projected gradient descent.

use std::time::Instant;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{check_dim, FsvmError, Result};
use crate::metric::{compute_scatter, init_m, recover_w, relative_eig_floor, transform_samples, update_m, MetricStep};
use crate::svm::{solve_linear_svm, LinearSvmProblem, SolverOptions, SvmSolution};
use crate::symmat::{trace_product, SpdMatrix, SymmetricMatrix};

/// Version tag written into serialized models.
pub const MODEL_FORMAT_VERSION: u32 = 1;

/// How the metric is initialized before the first `(w, b)` step.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum MetricInit {
    /// `√τ · S^{-1/2}` with eigenvalue flooring, `τ = ρ` (or 1 when `ρ = 0`).
    SemiWhitened,
    Identity,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FsvmHyperParams {
    /// Hinge-loss tradeoff.
    pub c: f64,
    /// Weight of the `tr(MS)` radius term.
    pub rho: f64,
    /// Eigenvalue floor keeping `M` positive definite.
    pub eps_pd: f64,
    /// Relative eigenvalue floor (times `λ_max(S)`) used by the initialization.
    pub eps_eig: f64,
    pub t0: f64,
    pub beta: f64,
    pub max_outer: usize,
    pub max_inner: usize,
    pub tol_outer: f64,
    pub tol_inner: f64,
    pub init: MetricInit,
    /// Keep the initial metric and only solve for `(w, b)`. Implied by
    /// `rho == 0`, where the metric subproblem has no minimizer.
    pub fix_metric: bool,
    pub svm_tol: f64,
    pub svm_max_sweeps: usize,
    pub seed: u64,
}

impl Default for FsvmHyperParams {
    fn default() -> Self {
        FsvmHyperParams {
            c: 1.0,
            rho: 0.1,
            eps_pd: crate::symmat::DEFAULT_EPS_PD,
            eps_eig: 1e-6,
            t0: 1.0,
            beta: 0.5,
            max_outer: 100,
            max_inner: 50,
            tol_outer: 1e-6,
            tol_inner: 1e-6,
            init: MetricInit::SemiWhitened,
            fix_metric: false,
            svm_tol: 1e-6,
            svm_max_sweeps: 10_000,
            seed: 42,
        }
    }
}

impl FsvmHyperParams {
    pub fn new(c: f64, rho: f64) -> Self {
        FsvmHyperParams {
            c,
            rho,
            ..Default::default()
        }
    }

    /// A plain linear SVM: identity metric, never updated.
    pub fn plain_svm(c: f64) -> Self {
        FsvmHyperParams {
            c,
            rho: 0.0,
            init: MetricInit::Identity,
            fix_metric: true,
            max_outer: 1,
            ..Default::default()
        }
    }

    /// These solver settings turned into a plain SVM with cost `c`.
    pub fn to_plain_svm(&self, c: f64) -> Self {
        FsvmHyperParams {
            c,
            rho: 0.0,
            init: MetricInit::Identity,
            fix_metric: true,
            max_outer: 1,
            ..self.clone()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let positive = |name: &str, v: f64| {
            if v.is_finite() && v > 0.0 {
                Ok(())
            } else {
                Err(FsvmError::invalid(format!("{name} must be positive, got {v}")))
            }
        };
        positive("C", self.c)?;
        positive("eps_pd", self.eps_pd)?;
        positive("eps_eig", self.eps_eig)?;
        positive("t0", self.t0)?;
        positive("svm_tol", self.svm_tol)?;
        if !(self.rho.is_finite() && self.rho >= 0.0) {
            return Err(FsvmError::invalid(format!(
                "rho must be non-negative, got {}",
                self.rho
            )));
        }
        if !(self.beta > 0.0 && self.beta < 1.0) {
            return Err(FsvmError::invalid(format!(
                "beta must lie in (0, 1), got {}",
                self.beta
            )));
        }
        if self.max_outer == 0 {
            return Err(FsvmError::invalid("max_outer must be at least 1"));
        }
        if !(self.tol_outer >= 0.0 && self.tol_inner >= 0.0) {
            return Err(FsvmError::invalid("tolerances must be non-negative"));
        }
        Ok(())
    }

    pub fn solver_options(&self) -> SolverOptions {
        SolverOptions {
            tol: self.svm_tol,
            max_sweeps: self.svm_max_sweeps,
            seed: self.seed,
        }
    }

    fn metric_step(&self) -> MetricStep {
        MetricStep {
            rho: self.rho,
            eps_pd: self.eps_pd,
            t0: self.t0,
            beta: self.beta,
            max_inner: self.max_inner,
            tol_inner: self.tol_inner,
        }
    }

    /// `τ′` used by the semi-whitened initialization.
    pub fn init_tau(&self) -> f64 {
        if self.rho > 0.0 {
            self.rho
        } else {
            1.0
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FsvmModel {
    pub metric: SpdMatrix,
    pub w: DVector<f64>,
    pub b: f64,
    pub centroid: DVector<f64>,
    pub hyper: FsvmHyperParams,
}

/// Objective value split into its three terms.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ObjectiveParts {
    /// `½ wᵀM⁻¹w`
    pub margin: f64,
    /// `C Σ ξᵢ`
    pub slack: f64,
    /// `ρ tr(MS)`
    pub trace: f64,
    pub total: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IterationRecord {
    pub objective: ObjectiveParts,
    pub inner_steps: usize,
    pub rejected_steps: usize,
    pub svm_sweeps: usize,
    /// True when the fresh `(w, b)` was worse than the previous one and was discarded.
    pub kept_previous_classifier: bool,
    pub seconds: f64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainingTrace {
    pub iterations: Vec<IterationRecord>,
    pub converged: bool,
}

impl TrainingTrace {
    pub fn objectives(&self) -> Vec<f64> {
        self.iterations.iter().map(|r| r.objective.total).collect()
    }
}

fn validate_data(x: &DMatrix<f64>, y: &[f64]) -> Result<()> {
    check_dim(x.nrows(), y.len())?;
    if x.nrows() < 2 {
        return Err(FsvmError::degenerate("training needs at least two samples"));
    }
    if x.iter().any(|v| !v.is_finite()) {
        return Err(FsvmError::invalid("training samples contain non-finite values"));
    }
    if let Some(bad) = y.iter().find(|&&l| l != 1.0 && l != -1.0) {
        return Err(FsvmError::invalid(format!("labels must be +1 or -1, got {bad}")));
    }
    let pos = y.iter().any(|&l| l > 0.0);
    let neg = y.iter().any(|&l| l < 0.0);
    if !(pos && neg) {
        return Err(FsvmError::degenerate("training data contains a single class"));
    }
    Ok(())
}

fn objective_parts(
    metric: &SpdMatrix,
    w: &DVector<f64>,
    b: f64,
    x: &DMatrix<f64>,
    y: &[f64],
    s: &SymmetricMatrix,
    hyper: &FsvmHyperParams,
) -> Result<ObjectiveParts> {
    check_dim(metric.dim(), x.ncols())?;
    check_dim(x.nrows(), y.len())?;
    let margin = 0.5 * metric.inverse_quadratic_form(w)?;
    let scores = x * w;
    let hinge: f64 = scores
        .iter()
        .zip(y)
        .map(|(sc, yi)| (1.0 - yi * (sc + b)).max(0.0))
        .sum();
    let slack = hyper.c * hinge;
    let trace = hyper.rho * trace_product(metric.as_symmetric(), s)?;
    Ok(ObjectiveParts {
        margin,
        slack,
        trace,
        total: margin + slack + trace,
    })
}

/// Evaluates the training objective of `model` on `(x, y)` with scatter `s`.
pub fn fsvm_objective(model: &FsvmModel, x: &DMatrix<f64>, y: &[f64], s: &SymmetricMatrix) -> Result<ObjectiveParts> {
    objective_parts(&model.metric, &model.w, model.b, x, y, s, &model.hyper)
}

fn initial_metric(s: &SymmetricMatrix, hyper: &FsvmHyperParams) -> Result<SpdMatrix> {
    match hyper.init {
        MetricInit::Identity => Ok(SpdMatrix::identity(s.dim())),
        MetricInit::SemiWhitened => init_m(s, hyper.init_tau(), relative_eig_floor(s, hyper.eps_eig)),
    }
}

/// Trains a model on samples `x` (one per row) with labels `y ∈ {−1, +1}`.
pub fn train_fsvm(x: &DMatrix<f64>, y: &[f64], hyper: &FsvmHyperParams) -> Result<(FsvmModel, TrainingTrace)> {
    hyper.validate()?;
    validate_data(x, y)?;
    let (s, centroid) = compute_scatter(x)?;
    let metric = initial_metric(&s, hyper)?;
    train_from(x, y, &s, centroid, metric, hyper)
}

/// Same as [`train_fsvm`] but starting from a caller-supplied metric.
pub fn train_fsvm_from_metric(
    x: &DMatrix<f64>,
    y: &[f64],
    metric: SpdMatrix,
    hyper: &FsvmHyperParams,
) -> Result<(FsvmModel, TrainingTrace)> {
    hyper.validate()?;
    validate_data(x, y)?;
    check_dim(x.ncols(), metric.dim())?;
    let (s, centroid) = compute_scatter(x)?;
    train_from(x, y, &s, centroid, metric, hyper)
}

fn train_from(
    x: &DMatrix<f64>,
    y: &[f64],
    s: &SymmetricMatrix,
    centroid: DVector<f64>,
    mut metric: SpdMatrix,
    hyper: &FsvmHyperParams,
) -> Result<(FsvmModel, TrainingTrace)> {
    let opts = hyper.solver_options();
    let step = hyper.metric_step();
    // Without the trace term, inf over M of ½wᵀM⁻¹w is 0 and is not attained:
    // every metric step just inflates M. Keep the initial metric instead.
    let fix_metric = hyper.fix_metric || hyper.rho == 0.0;
    let mut trace = TrainingTrace::default();
    let mut warm: Option<SvmSolution> = None;
    let mut classifier: Option<(DVector<f64>, f64)> = None;
    let mut prev_total: Option<f64> = None;

    for _ in 0..hyper.max_outer {
        let started = Instant::now();

        let z = transform_samples(&metric, x)?;
        let problem = LinearSvmProblem::new(z, y.to_vec(), hyper.c)?;
        let sol = solve_linear_svm(&problem, warm.as_ref(), &opts)?;
        let w_new = recover_w(&metric, &sol.v)?;
        let new_parts = objective_parts(&metric, &w_new, sol.b, x, y, s, hyper)?;

        // The subproblem is only solved to tolerance; never accept a (w, b)
        // that is worse than the one it replaces under the current metric.
        let mut kept_previous = false;
        let (w, b) = match classifier.take() {
            Some((w_old, b_old)) => {
                let old = objective_parts(&metric, &w_old, b_old, x, y, s, hyper)?;
                if old.total < new_parts.total {
                    kept_previous = true;
                    (w_old, b_old)
                } else {
                    (w_new, sol.b)
                }
            }
            None => (w_new, sol.b),
        };
        let svm_sweeps = sol.sweeps;
        warm = Some(sol);

        let (next_metric, inner_steps, rejected) = if fix_metric {
            (metric.clone(), 0, 0)
        } else {
            let upd = update_m(&metric, &w, s, &step)?;
            (upd.metric, upd.steps, upd.rejected)
        };
        let parts = objective_parts(&next_metric, &w, b, x, y, s, hyper)?;
        trace.iterations.push(IterationRecord {
            objective: parts,
            inner_steps,
            rejected_steps: rejected,
            svm_sweeps,
            kept_previous_classifier: kept_previous,
            seconds: started.elapsed().as_secs_f64(),
        });

        let metric_change = (next_metric.as_matrix() - metric.as_matrix()).norm()
            / metric.as_symmetric().frobenius_norm().max(f64::MIN_POSITIVE);
        let obj_change = prev_total
            .map(|p| (p - parts.total).abs() / p.abs().max(f64::MIN_POSITIVE))
            .unwrap_or(f64::INFINITY);
        metric = next_metric;
        classifier = Some((w, b));
        prev_total = Some(parts.total);

        if fix_metric || obj_change < hyper.tol_outer || metric_change < hyper.tol_outer {
            trace.converged = true;
            break;
        }
    }

    let (w, b) = classifier.expect("at least one outer iteration runs");
    Ok((
        FsvmModel {
            metric,
            w,
            b,
            centroid,
            hyper: hyper.clone(),
        },
        trace,
    ))
}

impl FsvmModel {
    pub fn dim(&self) -> usize {
        self.w.len()
    }

    /// `(label, score)` with `score = wᵀx + b` and a zero score mapped to `+1`.
    pub fn predict(&self, x: &[f64]) -> Result<(i8, f64)> {
        check_dim(self.dim(), x.len())?;
        let score = self.w.iter().zip(x).map(|(a, b)| a * b).sum::<f64>() + self.b;
        Ok((if score >= 0.0 { 1 } else { -1 }, score))
    }

    /// Scores for every row of `x`.
    pub fn decision_function(&self, x: &DMatrix<f64>) -> Result<DVector<f64>> {
        check_dim(self.dim(), x.ncols())?;
        Ok((x * &self.w).add_scalar(self.b))
    }

    pub fn to_document(&self) -> ModelDocument {
        ModelDocument {
            format_version: MODEL_FORMAT_VERSION,
            dim: self.dim(),
            metric: self.metric.as_symmetric().to_row_major(),
            w: self.w.iter().copied().collect(),
            b: self.b,
            centroid: self.centroid.iter().copied().collect(),
            hyper: self.hyper.clone(),
        }
    }

    pub fn from_document(doc: ModelDocument) -> Result<Self> {
        if doc.format_version != MODEL_FORMAT_VERSION {
            return Err(FsvmError::Document(format!(
                "unsupported model format version {}",
                doc.format_version
            )));
        }
        check_dim(doc.dim, doc.w.len())?;
        check_dim(doc.dim, doc.centroid.len())?;
        let m = SymmetricMatrix::from_row_slice(doc.dim, &doc.metric)?;
        let floor = m.eigen().min_eigenvalue().min(doc.hyper.eps_pd);
        if floor <= 0.0 {
            return Err(FsvmError::Document("metric is not positive definite".into()));
        }
        Ok(FsvmModel {
            metric: SpdMatrix::new(m, floor)?,
            w: DVector::from_vec(doc.w),
            b: doc.b,
            centroid: DVector::from_vec(doc.centroid),
            hyper: doc.hyper,
        })
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(&self.to_document()).expect("model document serializes")
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let doc: ModelDocument = serde_json::from_str(text).map_err(|e| FsvmError::Document(e.to_string()))?;
        Self::from_document(doc)
    }
}

/// Serialized form of [`FsvmModel`]. `metric` is stored row-major.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelDocument {
    pub format_version: u32,
    pub dim: usize,
    pub metric: Vec<f64>,
    pub w: Vec<f64>,
    pub b: f64,
    pub centroid: Vec<f64>,
    pub hyper: FsvmHyperParams,
}

/// Free-function form of [`FsvmModel::predict`].
pub fn predict(model: &FsvmModel, x: &[f64]) -> Result<(i8, f64)> {
    model.predict(x)
}
