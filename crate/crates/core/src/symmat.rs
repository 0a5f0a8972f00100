//! Dense symmetric matrices and the handful of spectral operations the rest of
//! the crate is built on: eigendecomposition, eigenvalue flooring onto the
//! positive-definite cone, inversion and trace products.
//!
//! Storage is always dense. Every matrix handled here is at most a few hundred
//! rows wide, so there is no sparse path.

use std::sync::OnceLock;

use nalgebra::{DMatrix, DVector};

use crate::error::{check_dim, FsvmError, Result};

/// Default eigenvalue floor used when projecting onto the positive-definite cone.
pub const DEFAULT_EPS_PD: f64 = 1e-8;

/// A dense real symmetric matrix.
///
/// The constructor symmetrizes its input by averaging `A` and `Aᵀ`, so
/// `get(i, j) == get(j, i)` holds exactly. The eigendecomposition is computed
/// lazily and cached.
#[derive(Debug, Clone)]
pub struct SymmetricMatrix {
    data: DMatrix<f64>,
    eig: OnceLock<EigenDecomposition>,
}

/// Eigenvalues sorted in descending order, paired column-wise with an
/// orthonormal eigenvector matrix.
///
/// Each eigenvector is sign-normalized so that its first entry with magnitude
/// above `1e-10` is positive, which makes downstream projections deterministic.
#[derive(Debug, Clone, PartialEq)]
pub struct EigenDecomposition {
    pub eigenvalues: DVector<f64>,
    pub eigenvectors: DMatrix<f64>,
}

impl EigenDecomposition {
    pub fn dim(&self) -> usize {
        self.eigenvalues.len()
    }

    /// `V · diag(f(λ)) · Vᵀ`.
    pub fn rebuild_with(&self, f: impl Fn(f64) -> f64) -> DMatrix<f64> {
        let scaled = DVector::from_iterator(self.dim(), self.eigenvalues.iter().map(|&l| f(l)));
        let mut vs = self.eigenvectors.clone();
        for (k, mut col) in vs.column_iter_mut().enumerate() {
            col *= scaled[k];
        }
        &vs * self.eigenvectors.transpose()
    }

    pub fn reconstruct(&self) -> DMatrix<f64> {
        self.rebuild_with(|l| l)
    }

    pub fn min_eigenvalue(&self) -> f64 {
        self.eigenvalues[self.dim() - 1]
    }

    pub fn max_eigenvalue(&self) -> f64 {
        self.eigenvalues[0]
    }
}

impl SymmetricMatrix {
    /// Builds a symmetric matrix from a square dense matrix, averaging it with
    /// its transpose.
    pub fn new(m: DMatrix<f64>) -> Result<Self> {
        if m.nrows() == 0 {
            return Err(FsvmError::invalid("symmetric matrix must have dim >= 1"));
        }
        check_dim(m.nrows(), m.ncols())?;
        if m.iter().any(|v| !v.is_finite()) {
            return Err(FsvmError::invalid("matrix has non-finite entries"));
        }
        let n = m.nrows();
        let mut data = m;
        for i in 0..n {
            for j in (i + 1)..n {
                let avg = 0.5 * (data[(i, j)] + data[(j, i)]);
                data[(i, j)] = avg;
                data[(j, i)] = avg;
            }
        }
        Ok(SymmetricMatrix {
            data,
            eig: OnceLock::new(),
        })
    }

    pub fn from_row_slice(dim: usize, entries: &[f64]) -> Result<Self> {
        check_dim(dim * dim, entries.len())?;
        Self::new(DMatrix::from_row_slice(dim, dim, entries))
    }

    pub fn identity(dim: usize) -> Self {
        Self::new(DMatrix::identity(dim, dim)).expect("identity is a valid symmetric matrix")
    }

    pub fn zeros(dim: usize) -> Self {
        Self::new(DMatrix::zeros(dim, dim)).expect("zero matrix is a valid symmetric matrix")
    }

    pub fn from_diagonal(diag: &[f64]) -> Result<Self> {
        Self::new(DMatrix::from_diagonal(&DVector::from_column_slice(diag)))
    }

    /// Builds `V diag(λ) Vᵀ` and keeps the given decomposition as the cached one.
    fn from_eigen(eig: EigenDecomposition) -> Self {
        let sym = Self::new(eig.reconstruct()).expect("finite eigen parts reconstruct a finite matrix");
        let _ = sym.eig.set(eig);
        sym
    }

    pub fn dim(&self) -> usize {
        self.data.nrows()
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.data[(i, j)]
    }

    pub fn as_matrix(&self) -> &DMatrix<f64> {
        &self.data
    }

    pub fn into_matrix(self) -> DMatrix<f64> {
        self.data
    }

    /// Row-major copy of the entries.
    pub fn to_row_major(&self) -> Vec<f64> {
        let n = self.dim();
        let mut out = Vec::with_capacity(n * n);
        for i in 0..n {
            for j in 0..n {
                out.push(self.data[(i, j)]);
            }
        }
        out
    }

    pub fn trace(&self) -> f64 {
        self.data.trace()
    }

    pub fn frobenius_norm(&self) -> f64 {
        self.data.norm()
    }

    /// Cached eigendecomposition, see [`sym_eig`].
    pub fn eigen(&self) -> &EigenDecomposition {
        self.eig.get_or_init(|| compute_eigen(&self.data))
    }

    /// `a·self + b·other`.
    pub fn affine_combination(&self, a: f64, other: &SymmetricMatrix, b: f64) -> Result<Self> {
        check_dim(self.dim(), other.dim())?;
        Self::new(&self.data * a + &other.data * b)
    }

    pub fn scale(&self, factor: f64) -> Result<Self> {
        Self::new(&self.data * factor)
    }
}

impl PartialEq for SymmetricMatrix {
    fn eq(&self, other: &Self) -> bool {
        self.data == other.data
    }
}

fn compute_eigen(a: &DMatrix<f64>) -> EigenDecomposition {
    let n = a.nrows();
    let se = nalgebra::SymmetricEigen::new(a.clone());
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| se.eigenvalues[j].total_cmp(&se.eigenvalues[i]));

    let eigenvalues = DVector::from_iterator(n, order.iter().map(|&k| se.eigenvalues[k]));
    let mut eigenvectors = DMatrix::zeros(n, n);
    for (dst, &src) in order.iter().enumerate() {
        let mut col = se.eigenvectors.column(src).into_owned();
        if let Some(first) = col.iter().find(|v| v.abs() > 1e-10) {
            if *first < 0.0 {
                col.neg_mut();
            }
        }
        eigenvectors.set_column(dst, &col);
    }
    EigenDecomposition {
        eigenvalues,
        eigenvectors,
    }
}

/// Symmetric eigendecomposition with eigenvalues in descending order.
pub fn sym_eig(a: &SymmetricMatrix) -> EigenDecomposition {
    a.eigen().clone()
}

/// A symmetric matrix whose eigenvalues are all at least `eps_pd > 0`.
///
/// Equality compares matrix entries only; `eps_pd` is the floor the matrix
/// was certified against, not part of its value.
#[derive(Debug, Clone)]
pub struct SpdMatrix {
    inner: SymmetricMatrix,
    eps_pd: f64,
}

impl SpdMatrix {
    /// Certifies `a` as positive definite with floor `eps_pd`, failing if any
    /// eigenvalue lies below it.
    pub fn new(a: SymmetricMatrix, eps_pd: f64) -> Result<Self> {
        check_eps(eps_pd)?;
        let min = a.eigen().min_eigenvalue();
        if min < eps_pd {
            return Err(FsvmError::invalid(format!(
                "matrix is not positive definite: smallest eigenvalue {min:e} < {eps_pd:e}"
            )));
        }
        Ok(SpdMatrix { inner: a, eps_pd })
    }

    pub fn identity(dim: usize) -> Self {
        SpdMatrix {
            inner: SymmetricMatrix::identity(dim),
            eps_pd: DEFAULT_EPS_PD,
        }
    }

    pub fn dim(&self) -> usize {
        self.inner.dim()
    }

    pub fn eps_pd(&self) -> f64 {
        self.eps_pd
    }

    pub fn as_symmetric(&self) -> &SymmetricMatrix {
        &self.inner
    }

    pub fn as_matrix(&self) -> &DMatrix<f64> {
        self.inner.as_matrix()
    }

    pub fn eigen(&self) -> &EigenDecomposition {
        self.inner.eigen()
    }

    /// `M^{1/2}` applied as `diag(λ^{1/2}) Vᵀ`, i.e. the map `x ↦ Σ^{1/2} Vᵀ x`.
    pub fn half_transform(&self) -> DMatrix<f64> {
        let eig = self.eigen();
        let mut t = eig.eigenvectors.transpose();
        for (k, mut row) in t.row_iter_mut().enumerate() {
            row *= eig.eigenvalues[k].sqrt();
        }
        t
    }

    /// `xᵀ M⁻¹ x`.
    pub fn inverse_quadratic_form(&self, x: &DVector<f64>) -> Result<f64> {
        check_dim(self.dim(), x.len())?;
        let eig = self.eigen();
        let proj = eig.eigenvectors.transpose() * x;
        Ok(proj.iter().zip(eig.eigenvalues.iter()).map(|(p, l)| p * p / l).sum())
    }
}

impl PartialEq for SpdMatrix {
    fn eq(&self, other: &Self) -> bool {
        self.inner == other.inner
    }
}

fn check_eps(eps_pd: f64) -> Result<()> {
    if eps_pd.is_finite() && eps_pd > 0.0 {
        Ok(())
    } else {
        Err(FsvmError::invalid(format!("eps_pd must be positive, got {eps_pd}")))
    }
}

/// Projects onto `{X : λ_min(X) ≥ eps_pd}` by flooring eigenvalues and keeping
/// the eigenvectors of `a`.
///
/// When `a` already satisfies the floor it is returned unchanged.
pub fn psd_project(a: &SymmetricMatrix, eps_pd: f64) -> Result<SpdMatrix> {
    check_eps(eps_pd)?;
    let eig = a.eigen();
    if eig.min_eigenvalue() >= eps_pd {
        return Ok(SpdMatrix {
            inner: a.clone(),
            eps_pd,
        });
    }
    let floored = EigenDecomposition {
        eigenvalues: eig.eigenvalues.map(|l| l.max(eps_pd)),
        eigenvectors: eig.eigenvectors.clone(),
    };
    Ok(SpdMatrix {
        inner: SymmetricMatrix::from_eigen(floored),
        eps_pd,
    })
}

/// Inverse of an SPD matrix through its eigendecomposition.
///
/// Logs a warning when the condition number exceeds `1/eps_pd²`; the inverse
/// is still returned.
pub fn spd_inverse(m: &SpdMatrix) -> SpdMatrix {
    let eig = m.eigen();
    let cond = eig.max_eigenvalue() / eig.min_eigenvalue();
    if cond > 1.0 / (m.eps_pd * m.eps_pd) {
        log::warn!("inverting an ill-conditioned matrix (condition number {cond:e})");
    }
    let n = eig.dim();
    let mut order: Vec<usize> = (0..n).rev().collect();
    // 1/λ reverses the ordering.
    let eigenvalues = DVector::from_iterator(n, order.iter().map(|&k| 1.0 / eig.eigenvalues[k]));
    let mut eigenvectors = DMatrix::zeros(n, n);
    for (dst, src) in order.drain(..).enumerate() {
        eigenvectors.set_column(dst, &eig.eigenvectors.column(src));
    }
    let inv = EigenDecomposition {
        eigenvalues,
        eigenvectors,
    };
    let floor = inv.min_eigenvalue().min(m.eps_pd);
    SpdMatrix {
        inner: SymmetricMatrix::from_eigen(inv),
        eps_pd: floor,
    }
}

/// `tr(A·B)` for symmetric `A`, `B`, computed as `Σ A_ij B_ij`.
pub fn trace_product(a: &SymmetricMatrix, b: &SymmetricMatrix) -> Result<f64> {
    check_dim(a.dim(), b.dim())?;
    Ok(a.as_matrix().dot(b.as_matrix()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_symmetric(rng: &mut ChaCha8Rng, n: usize) -> SymmetricMatrix {
        let m = DMatrix::from_fn(n, n, |_, _| rng.random_range(-2.0..2.0));
        SymmetricMatrix::new(&m + m.transpose()).unwrap()
    }

    fn random_spd(rng: &mut ChaCha8Rng, n: usize) -> SpdMatrix {
        let a = DMatrix::from_fn(n, n, |_, _| rng.random_range(-1.0..1.0));
        let m = &a * a.transpose() + DMatrix::identity(n, n) * 0.5;
        SpdMatrix::new(SymmetricMatrix::new(m).unwrap(), DEFAULT_EPS_PD).unwrap()
    }

    fn naive_trace_of_product(a: &DMatrix<f64>, b: &DMatrix<f64>) -> f64 {
        let n = a.nrows();
        let mut t = 0.0;
        for i in 0..n {
            for k in 0..n {
                t += a[(i, k)] * b[(k, i)];
            }
        }
        t
    }

    #[test]
    fn constructor_symmetrizes() {
        let s = SymmetricMatrix::from_row_slice(2, &[1.0, 2.0, 4.0, 1.0]).unwrap();
        assert_eq!(s.get(0, 1), 3.0);
        assert_eq!(s.get(1, 0), 3.0);
    }

    #[test]
    fn rejects_non_finite_and_empty() {
        assert!(SymmetricMatrix::from_row_slice(1, &[f64::NAN]).is_err());
        assert!(SymmetricMatrix::new(DMatrix::zeros(0, 0)).is_err());
        assert!(SymmetricMatrix::new(DMatrix::zeros(2, 3)).is_err());
    }

    #[test]
    fn eig_identity() {
        let e = sym_eig(&SymmetricMatrix::identity(2));
        assert_eq!(e.eigenvalues.as_slice(), &[1.0, 1.0]);
        let vtv = e.eigenvectors.transpose() * &e.eigenvectors;
        assert_abs_diff_eq!(vtv, DMatrix::identity(2, 2), epsilon = 1e-12);
    }

    #[test]
    fn eig_two_by_two() {
        let e = sym_eig(&SymmetricMatrix::from_row_slice(2, &[2.0, 1.0, 1.0, 2.0]).unwrap());
        assert_abs_diff_eq!(e.eigenvalues[0], 3.0, epsilon = 1e-12);
        assert_abs_diff_eq!(e.eigenvalues[1], 1.0, epsilon = 1e-12);
        let r = std::f64::consts::FRAC_1_SQRT_2;
        // Sign convention: first significant entry positive.
        assert_abs_diff_eq!(e.eigenvectors[(0, 0)], r, epsilon = 1e-12);
        assert_abs_diff_eq!(e.eigenvectors[(1, 0)], r, epsilon = 1e-12);
        assert_abs_diff_eq!(e.eigenvectors[(0, 1)], r, epsilon = 1e-12);
        assert_abs_diff_eq!(e.eigenvectors[(1, 1)], -r, epsilon = 1e-12);
    }

    #[test]
    fn eig_diagonal_sorted_descending() {
        let e = sym_eig(&SymmetricMatrix::from_diagonal(&[2.0, 5.0, 0.0]).unwrap());
        assert_eq!(e.eigenvalues.as_slice(), &[5.0, 2.0, 0.0]);
        for k in 0..3 {
            let col = e.eigenvectors.column(k);
            assert_abs_diff_eq!(col.norm(), 1.0, epsilon = 1e-12);
            assert_eq!(col.iter().filter(|v| v.abs() > 1e-12).count(), 1);
        }
    }

    #[test]
    fn eig_reconstructs_random() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for n in 1..12 {
            let a = random_symmetric(&mut rng, n);
            let e = sym_eig(&a);
            let err = (e.reconstruct() - a.as_matrix()).norm() / a.frobenius_norm().max(1.0);
            assert!(err <= 1e-10, "n={n} err={err}");
            let vtv = e.eigenvectors.transpose() * &e.eigenvectors;
            assert!((vtv - DMatrix::identity(n, n)).norm() <= 1e-10);
            for k in 1..n {
                assert!(e.eigenvalues[k - 1] >= e.eigenvalues[k]);
            }
        }
    }

    #[test]
    fn project_floors_diagonal() {
        let a = SymmetricMatrix::from_diagonal(&[2.0, -1.0]).unwrap();
        let p = psd_project(&a, 1e-8).unwrap();
        assert_abs_diff_eq!(p.as_matrix()[(0, 0)], 2.0, epsilon = 1e-15);
        assert_abs_diff_eq!(p.as_matrix()[(1, 1)], 1e-8, epsilon = 1e-15);
        assert_abs_diff_eq!(p.as_matrix()[(0, 1)], 0.0, epsilon = 1e-15);
    }

    #[test]
    fn project_is_identity_on_spd() {
        let a = SymmetricMatrix::from_row_slice(2, &[2.0, 0.5, 0.5, 1.0]).unwrap();
        let p = psd_project(&a, 1e-8).unwrap();
        assert_eq!(p.as_symmetric(), &a);
    }

    #[test]
    fn project_off_diagonal_swap() {
        // λ = ±1 with eigenvectors (1,1)/√2 and (1,-1)/√2.
        let a = SymmetricMatrix::from_row_slice(2, &[0.0, 1.0, 1.0, 0.0]).unwrap();
        let p = psd_project(&a, 1e-8).unwrap();
        let m = p.as_matrix();
        assert_abs_diff_eq!(m[(0, 0)], 0.5 + 0.5e-8, epsilon = 1e-15);
        assert_abs_diff_eq!(m[(1, 1)], 0.5 + 0.5e-8, epsilon = 1e-15);
        assert_abs_diff_eq!(m[(0, 1)], 0.5 - 0.5e-8, epsilon = 1e-15);
    }

    #[test]
    fn project_is_idempotent_on_eigenvalues() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for n in 1..8 {
            let a = random_symmetric(&mut rng, n);
            let p1 = psd_project(&a, 1e-3).unwrap();
            let p2 = psd_project(p1.as_symmetric(), 1e-3).unwrap();
            assert_eq!(p1.eigen().eigenvalues, p2.eigen().eigenvalues);
        }
    }

    #[test]
    fn project_is_closest_among_floored_spectra() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let eps = 1e-2;
        for _ in 0..50 {
            let n = rng.random_range(2..6);
            let a = random_symmetric(&mut rng, n);
            let p = psd_project(&a, eps).unwrap();
            let best = (p.as_matrix() - a.as_matrix()).norm();
            let eig = a.eigen();
            for _ in 0..20 {
                let cand = EigenDecomposition {
                    eigenvalues: eig.eigenvalues.map(|l| l.max(eps) + rng.random_range(0.0..0.5)),
                    eigenvectors: eig.eigenvectors.clone(),
                };
                let dist = (cand.reconstruct() - a.as_matrix()).norm();
                assert!(dist >= best - 1e-12);
            }
        }
    }

    #[test]
    fn inverse_diagonal_and_identity() {
        let inv = spd_inverse(&SpdMatrix::identity(3));
        assert_abs_diff_eq!(inv.as_matrix().clone(), DMatrix::identity(3, 3), epsilon = 1e-15);
        let d = SpdMatrix::new(SymmetricMatrix::from_diagonal(&[2.0, 4.0]).unwrap(), 1e-8).unwrap();
        let inv = spd_inverse(&d);
        assert_abs_diff_eq!(inv.as_matrix()[(0, 0)], 0.5, epsilon = 1e-15);
        assert_abs_diff_eq!(inv.as_matrix()[(1, 1)], 0.25, epsilon = 1e-15);
    }

    #[test]
    fn inverse_multiplies_back() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for n in 1..10 {
            let m = random_spd(&mut rng, n);
            let inv = spd_inverse(&m);
            let prod = m.as_matrix() * inv.as_matrix();
            assert!((prod - DMatrix::identity(n, n)).norm() <= 1e-9);
            assert!(inv.eigen().min_eigenvalue() > 0.0);
        }
    }

    #[test]
    fn trace_product_examples() {
        let i2 = SymmetricMatrix::identity(2);
        assert_eq!(trace_product(&i2, &i2).unwrap(), 2.0);
        let a = SymmetricMatrix::from_diagonal(&[1.0, 2.0]).unwrap();
        let b = SymmetricMatrix::from_diagonal(&[3.0, 4.0]).unwrap();
        assert_eq!(trace_product(&a, &b).unwrap(), 11.0);
        assert!(trace_product(&a, &SymmetricMatrix::identity(3)).is_err());
    }

    #[test]
    fn trace_product_matches_naive_and_is_bilinear() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        for _ in 0..50 {
            let n = rng.random_range(1..7);
            let a = random_symmetric(&mut rng, n);
            let b = random_symmetric(&mut rng, n);
            let c = random_symmetric(&mut rng, n);
            let t = trace_product(&a, &b).unwrap();
            assert_abs_diff_eq!(t, naive_trace_of_product(a.as_matrix(), b.as_matrix()), epsilon = 1e-12);
            assert_abs_diff_eq!(t, trace_product(&b, &a).unwrap(), epsilon = 1e-12);
            let (s, r) = (rng.random_range(-2.0..2.0), rng.random_range(-2.0..2.0));
            let lhs = trace_product(&a.affine_combination(s, &c, r).unwrap(), &b).unwrap();
            let rhs = s * t + r * trace_product(&c, &b).unwrap();
            assert_abs_diff_eq!(lhs, rhs, epsilon = 1e-12);
        }
    }
}
