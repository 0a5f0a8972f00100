//! Kernels, kernel PCA and the kernelized trainer.
//!
//! Kernel F-SVM is linear F-SVM run on kernel PCA coordinates: with all
//! positive-eigenvalue components retained, inner products of the projections
//! reproduce the centered Gram matrix, so a linear SVM on the projections is a
//! kernel SVM.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{check_dim, FsvmError, Result};
use crate::fsvm::{train_fsvm, FsvmHyperParams, FsvmModel, ModelDocument, TrainingTrace};
use crate::symmat::SymmetricMatrix;

pub const KERNEL_MODEL_FORMAT_VERSION: u32 = 1;

/// Relative eigenvalue threshold (times `λ_max`) below which kernel PCA
/// components are dropped.
pub const EPS_KPCA: f64 = 1e-10;

/// `linear: xᵀx′`, `rbf: exp(−γ‖x − x′‖²)`.
///
/// A Gaussian width `σ` corresponds to `γ = 1/(2σ²)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum KernelSpec {
    Linear,
    Rbf { gamma: f64 },
}

impl KernelSpec {
    pub fn rbf(gamma: f64) -> Result<Self> {
        let spec = KernelSpec::Rbf { gamma };
        spec.validate()?;
        Ok(spec)
    }

    pub fn from_sigma(sigma: f64) -> Result<Self> {
        Self::rbf(1.0 / (2.0 * sigma * sigma))
    }

    pub fn validate(&self) -> Result<()> {
        match *self {
            KernelSpec::Rbf { gamma } if !(gamma.is_finite() && gamma > 0.0) => {
                Err(FsvmError::invalid(format!("rbf gamma must be positive, got {gamma}")))
            }
            _ => Ok(()),
        }
    }

    fn eval_unchecked(&self, x: &[f64], z: &[f64]) -> f64 {
        match *self {
            KernelSpec::Linear => x.iter().zip(z).map(|(a, b)| a * b).sum(),
            KernelSpec::Rbf { gamma } => {
                let sq: f64 = x.iter().zip(z).map(|(a, b)| (a - b) * (a - b)).sum();
                (-gamma * sq).exp()
            }
        }
    }
}

pub fn kernel_eval(spec: &KernelSpec, x: &[f64], z: &[f64]) -> Result<f64> {
    check_dim(x.len(), z.len())?;
    Ok(spec.eval_unchecked(x, z))
}

fn rows(x: &DMatrix<f64>) -> Vec<Vec<f64>> {
    x.row_iter().map(|r| r.iter().copied().collect()).collect()
}

/// Gram matrix `K_ij = k(xᵢ, xⱼ)` over the rows of `x`.
pub fn gram_matrix(spec: &KernelSpec, x: &DMatrix<f64>) -> Result<SymmetricMatrix> {
    spec.validate()?;
    let r = rows(x);
    let n = r.len();
    let mut k = DMatrix::zeros(n, n);
    for i in 0..n {
        for j in i..n {
            let v = spec.eval_unchecked(&r[i], &r[j]);
            k[(i, j)] = v;
            k[(j, i)] = v;
        }
    }
    SymmetricMatrix::new(k)
}

/// Double centering `K − 1K/n − K1/n + 1K1/n²`; every row of the result sums
/// to zero.
pub fn center_gram(k: &SymmetricMatrix) -> SymmetricMatrix {
    let (row_means, grand) = gram_means(k.as_matrix());
    let n = k.dim();
    let kc = DMatrix::from_fn(n, n, |i, j| k.get(i, j) - row_means[i] - row_means[j] + grand);
    SymmetricMatrix::new(kc).expect("centering keeps the matrix square and finite")
}

fn gram_means(k: &DMatrix<f64>) -> (DVector<f64>, f64) {
    let row_means = k.column_mean();
    let grand = row_means.mean();
    (row_means, grand)
}

/// Fitted kernel PCA projection.
#[derive(Debug, Clone, PartialEq)]
pub struct KernelPcaMap {
    train: DMatrix<f64>,
    kernel: KernelSpec,
    /// `n × d`; column `k` is the `k`-th eigenvector of the centered Gram
    /// scaled by `λ_k^{-1/2}`.
    coefficients: DMatrix<f64>,
    eigenvalues: DVector<f64>,
    row_means: DVector<f64>,
    grand_mean: f64,
}

impl KernelPcaMap {
    pub fn dim(&self) -> usize {
        self.eigenvalues.len()
    }

    pub fn input_dim(&self) -> usize {
        self.train.ncols()
    }

    pub fn kernel(&self) -> &KernelSpec {
        &self.kernel
    }

    pub fn eigenvalues(&self) -> &DVector<f64> {
        &self.eigenvalues
    }

    pub fn training_points(&self) -> &DMatrix<f64> {
        &self.train
    }

    fn kernel_row(&self, x: &[f64]) -> DVector<f64> {
        let n = self.train.nrows();
        DVector::from_iterator(
            n,
            self.train
                .row_iter()
                .map(|r| self.kernel.eval_unchecked(r.transpose().as_slice(), x)),
        )
    }

    fn centered_row(&self, row: DVector<f64>) -> DVector<f64> {
        let mean = row.mean();
        let mut c = row;
        for (j, v) in c.iter_mut().enumerate() {
            *v += self.grand_mean - mean - self.row_means[j];
        }
        c
    }

    /// `f = Wᵀφ(x)`, centered with the training statistics.
    pub fn project(&self, x: &[f64]) -> Result<DVector<f64>> {
        check_dim(self.input_dim(), x.len())?;
        let kc = self.centered_row(self.kernel_row(x));
        Ok(self.coefficients.transpose() * kc)
    }

    /// Projects every row of `x`.
    pub fn project_many(&self, x: &DMatrix<f64>) -> Result<DMatrix<f64>> {
        check_dim(self.input_dim(), x.ncols())?;
        let mut out = DMatrix::zeros(x.nrows(), self.dim());
        for (i, r) in x.row_iter().enumerate() {
            let f = self.project(r.transpose().as_slice())?;
            out.set_row(i, &f.transpose());
        }
        Ok(out)
    }

    pub fn to_document(&self) -> KernelPcaDocument {
        KernelPcaDocument {
            kernel: self.kernel,
            n_train: self.train.nrows(),
            input_dim: self.input_dim(),
            dim: self.dim(),
            train: row_major(&self.train),
            coefficients: row_major(&self.coefficients),
            eigenvalues: self.eigenvalues.iter().copied().collect(),
            row_means: self.row_means.iter().copied().collect(),
            grand_mean: self.grand_mean,
        }
    }

    pub fn from_document(doc: KernelPcaDocument) -> Result<Self> {
        doc.kernel.validate()?;
        check_dim(doc.n_train * doc.input_dim, doc.train.len())?;
        check_dim(doc.n_train * doc.dim, doc.coefficients.len())?;
        check_dim(doc.dim, doc.eigenvalues.len())?;
        check_dim(doc.n_train, doc.row_means.len())?;
        Ok(KernelPcaMap {
            train: DMatrix::from_row_slice(doc.n_train, doc.input_dim, &doc.train),
            kernel: doc.kernel,
            coefficients: DMatrix::from_row_slice(doc.n_train, doc.dim, &doc.coefficients),
            eigenvalues: DVector::from_vec(doc.eigenvalues),
            row_means: DVector::from_vec(doc.row_means),
            grand_mean: doc.grand_mean,
        })
    }
}

fn row_major(m: &DMatrix<f64>) -> Vec<f64> {
    m.row_iter()
        .flat_map(|r| r.iter().copied().collect::<Vec<_>>())
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KernelPcaDocument {
    pub kernel: KernelSpec,
    pub n_train: usize,
    pub input_dim: usize,
    pub dim: usize,
    pub train: Vec<f64>,
    pub coefficients: Vec<f64>,
    pub eigenvalues: Vec<f64>,
    pub row_means: Vec<f64>,
    pub grand_mean: f64,
}

/// Fits kernel PCA keeping at most `d` leading components.
///
/// Components whose eigenvalue does not exceed `EPS_KPCA · λ_max` are dropped,
/// so the fitted dimension can be smaller than `d`.
pub fn kernel_pca_fit(x: &DMatrix<f64>, spec: &KernelSpec, d: usize) -> Result<KernelPcaMap> {
    let n = x.nrows();
    if n < 2 {
        return Err(FsvmError::invalid("kernel PCA needs at least two samples"));
    }
    if d == 0 || d > n {
        return Err(FsvmError::invalid(format!(
            "kernel PCA dimension must lie in 1..={n}, got {d}"
        )));
    }
    if x.iter().any(|v| !v.is_finite()) {
        return Err(FsvmError::invalid("samples contain non-finite values"));
    }
    let k = gram_matrix(spec, x)?;
    let (row_means, grand_mean) = gram_means(k.as_matrix());
    let kc = center_gram(&k);
    let eig = kc.eigen();
    let top = eig.max_eigenvalue().max(0.0);
    if eig.min_eigenvalue() < -1e-9 * top.max(1.0) {
        log::debug!("centered Gram has eigenvalue {:e}; clamping", eig.min_eigenvalue());
    }
    let threshold = EPS_KPCA * top;
    let kept: Vec<usize> = (0..d.min(n))
        .filter(|&i| eig.eigenvalues[i].max(0.0) > threshold && eig.eigenvalues[i] > 0.0)
        .collect();
    if kept.is_empty() {
        return Err(FsvmError::degenerate("centered Gram matrix has no positive eigenvalue"));
    }
    let dim = kept.len();
    let eigenvalues = DVector::from_iterator(dim, kept.iter().map(|&i| eig.eigenvalues[i]));
    let mut coefficients = DMatrix::zeros(n, dim);
    for (c, &i) in kept.iter().enumerate() {
        let col = eig.eigenvectors.column(i) / eig.eigenvalues[i].sqrt();
        coefficients.set_column(c, &col);
    }
    Ok(KernelPcaMap {
        train: x.clone(),
        kernel: *spec,
        coefficients,
        eigenvalues,
        row_means,
        grand_mean,
    })
}

/// Kernel PCA coordinates of `x` under `map`.
pub fn kernel_pca_project(map: &KernelPcaMap, x: &[f64]) -> Result<DVector<f64>> {
    map.project(x)
}

/// Kernel PCA projection followed by a linear model on the projections.
#[derive(Debug, Clone, PartialEq)]
pub struct KernelFsvmModel {
    pub map: KernelPcaMap,
    pub model: FsvmModel,
}

impl KernelFsvmModel {
    pub fn predict(&self, x: &[f64]) -> Result<(i8, f64)> {
        let f = self.map.project(x)?;
        self.model.predict(f.as_slice())
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(&KernelModelDocument {
            format_version: KERNEL_MODEL_FORMAT_VERSION,
            kpca: self.map.to_document(),
            model: self.model.to_document(),
        })
        .expect("kernel model document serializes")
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let doc: KernelModelDocument = serde_json::from_str(text).map_err(|e| FsvmError::Document(e.to_string()))?;
        if doc.format_version != KERNEL_MODEL_FORMAT_VERSION {
            return Err(FsvmError::Document(format!(
                "unsupported kernel model format version {}",
                doc.format_version
            )));
        }
        Ok(KernelFsvmModel {
            map: KernelPcaMap::from_document(doc.kpca)?,
            model: FsvmModel::from_document(doc.model)?,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KernelModelDocument {
    pub format_version: u32,
    pub kpca: KernelPcaDocument,
    pub model: ModelDocument,
}

/// Fits kernel PCA on `x`, then trains F-SVM on the projected samples.
///
/// The projections are centered, so the scatter used by the trainer equals
/// `Σ fᵢfᵢᵀ`.
pub fn train_kernel_fsvm(
    x: &DMatrix<f64>,
    y: &[f64],
    spec: &KernelSpec,
    d: usize,
    hyper: &FsvmHyperParams,
) -> Result<(KernelFsvmModel, TrainingTrace)> {
    let map = kernel_pca_fit(x, spec, d)?;
    let f = map.project_many(x)?;
    let (model, trace) = train_fsvm(&f, y, hyper)?;
    Ok((KernelFsvmModel { map, model }, trace))
}
