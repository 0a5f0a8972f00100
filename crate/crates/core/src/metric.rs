//! Operations on the learned metric `M`: scatter statistics, the semi-whitened
//! initialization, the change of coordinates that turns the `(w, b)` step into a
//! plain SVM, and the projected-gradient step on `M`.

use nalgebra::{DMatrix, DVector};

use crate::error::{check_dim, FsvmError, Result};
use crate::symmat::{psd_project, trace_product, EigenDecomposition, SpdMatrix, SymmetricMatrix};

/// Absolute lower bound on the eigenvalue floor used by [`init_m`] callers.
pub const MIN_EIG_FLOOR: f64 = 1e-12;

/// Backtracking gives up after this many consecutive rejected trial steps.
const MAX_BACKTRACK: usize = 60;

/// Mean of the rows of `x` and the scatter `Σᵢ (xᵢ − x̄)(xᵢ − x̄)ᵀ`.
pub fn compute_scatter(x: &DMatrix<f64>) -> Result<(SymmetricMatrix, DVector<f64>)> {
    let n = x.nrows();
    if n == 0 {
        return Err(FsvmError::invalid("scatter of an empty sample set"));
    }
    if x.ncols() == 0 {
        return Err(FsvmError::invalid("samples have no features"));
    }
    let mean = x.row_mean().transpose();
    let mut centered = x.clone();
    for mut row in centered.row_iter_mut() {
        row -= mean.transpose();
    }
    let s = SymmetricMatrix::new(centered.transpose() * &centered)?;
    Ok((s, mean))
}

/// Semi-whitened initialization `√τ · U diag(max(λᵢ, floor)^{-1/2}) Uᵀ` where
/// `S = U Λ Uᵀ`.
pub fn init_m(s: &SymmetricMatrix, tau: f64, eig_floor: f64) -> Result<SpdMatrix> {
    if !(tau.is_finite() && tau > 0.0) {
        return Err(FsvmError::invalid(format!("tau must be positive, got {tau}")));
    }
    if !(eig_floor.is_finite() && eig_floor > 0.0) {
        return Err(FsvmError::invalid(format!(
            "eigenvalue floor must be positive, got {eig_floor}"
        )));
    }
    let eig = s.eigen();
    let scale = tau.sqrt();
    let m = eig.rebuild_with(|l| scale / l.max(eig_floor).sqrt());
    let m = SymmetricMatrix::new(m)?;
    let min = m.eigen().min_eigenvalue();
    SpdMatrix::new(m, min.min(crate::symmat::DEFAULT_EPS_PD))
}

/// `B̂ = U (τΛ)^{1/2} Uᵀ` for `S = UΛUᵀ` positive definite: the minimizer of
/// [`whitening_bound`] over positive-definite `B`.
pub fn semi_whitening_factor(s: &SymmetricMatrix, tau: f64) -> Result<SpdMatrix> {
    if !(tau.is_finite() && tau > 0.0) {
        return Err(FsvmError::invalid(format!("tau must be positive, got {tau}")));
    }
    let eig = s.eigen();
    if eig.min_eigenvalue() <= 0.0 {
        return Err(FsvmError::invalid("scatter matrix must be positive definite"));
    }
    let b = SymmetricMatrix::new(eig.rebuild_with(|l| (tau * l).sqrt()))?;
    let min = b.eigen().min_eigenvalue();
    SpdMatrix::new(b, min.min(crate::symmat::DEFAULT_EPS_PD))
}

/// `‖B‖_* + τ tr(B⁻¹S)`, the bound minimized by the initialization.
pub fn whitening_bound(b: &SpdMatrix, s: &SymmetricMatrix, tau: f64) -> Result<f64> {
    check_dim(b.dim(), s.dim())?;
    let nuclear: f64 = b.eigen().eigenvalues.iter().map(|l| l.abs()).sum();
    let inv = crate::symmat::spd_inverse(b);
    Ok(nuclear + tau * trace_product(inv.as_symmetric(), s)?)
}

/// Eigenvalue floor for the initialization: `eps_eig · λ_max(S)`, but never
/// below [`MIN_EIG_FLOOR`].
pub fn relative_eig_floor(s: &SymmetricMatrix, eps_eig: f64) -> f64 {
    (eps_eig * s.eigen().max_eigenvalue()).max(MIN_EIG_FLOOR)
}

/// `zᵢ = Σ^{1/2} Vᵀ xᵢ` for `M = V Σ Vᵀ`, so that `zᵢᵀzⱼ = xᵢᵀ M xⱼ`.
pub fn transform_samples(m: &SpdMatrix, x: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    check_dim(m.dim(), x.ncols())?;
    Ok(x * m.half_transform().transpose())
}

/// Maps a weight vector from transformed coordinates back: `w = V Σ^{1/2} v`.
///
/// Then `wᵀxᵢ = vᵀzᵢ` and `wᵀM⁻¹w = vᵀv`.
pub fn recover_w(m: &SpdMatrix, v: &DVector<f64>) -> Result<DVector<f64>> {
    check_dim(m.dim(), v.len())?;
    Ok(m.half_transform().transpose() * v)
}

fn inverse_times(eig: &EigenDecomposition, w: &DVector<f64>) -> DVector<f64> {
    let mut proj = eig.eigenvectors.transpose() * w;
    for (p, l) in proj.iter_mut().zip(eig.eigenvalues.iter()) {
        *p /= l;
    }
    &eig.eigenvectors * proj
}

/// `f(M) = ½ wᵀM⁻¹w + ρ tr(MS)`, the part of the objective that depends on `M`.
pub fn metric_objective(m: &SpdMatrix, w: &DVector<f64>, s: &SymmetricMatrix, rho: f64) -> Result<f64> {
    let quad = m.inverse_quadratic_form(w)?;
    Ok(0.5 * quad + rho * trace_product(m.as_symmetric(), s)?)
}

/// `∇f(M) = −½ M⁻¹wwᵀM⁻¹ + ρS`.
pub fn grad_m(m: &SpdMatrix, w: &DVector<f64>, s: &SymmetricMatrix, rho: f64) -> Result<SymmetricMatrix> {
    check_dim(m.dim(), w.len())?;
    check_dim(m.dim(), s.dim())?;
    let u = inverse_times(m.eigen(), w);
    let g = &u * u.transpose() * -0.5 + s.as_matrix() * rho;
    SymmetricMatrix::new(g)
}

/// Settings for the projected-gradient step on `M`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MetricStep {
    pub rho: f64,
    pub eps_pd: f64,
    /// Initial stepsize of every inner loop.
    pub t0: f64,
    /// Stepsize decay applied after a rejected step.
    pub beta: f64,
    pub max_inner: usize,
    pub tol_inner: f64,
}

#[derive(Debug, Clone)]
pub struct MetricUpdate {
    pub metric: SpdMatrix,
    pub objective: f64,
    /// Accepted gradient steps.
    pub steps: usize,
    /// Trial steps rejected for increasing the objective.
    pub rejected: usize,
}

/// Runs projected gradient descent on `f(M)` starting from `m`.
///
/// Each trial point `P(M − t∇f(M))` is accepted only if it does not increase
/// `f`; otherwise `t ← β·t` and the step is retried. The loop ends when an
/// accepted step changes `f` by less than `tol_inner` relatively, after
/// `max_inner` accepted steps, or when backtracking stalls.
pub fn update_m(m: &SpdMatrix, w: &DVector<f64>, s: &SymmetricMatrix, step: &MetricStep) -> Result<MetricUpdate> {
    let mut current = m.clone();
    let mut f_cur = metric_objective(&current, w, s, step.rho)?;
    let mut t = step.t0;
    let mut steps = 0;
    let mut rejected = 0;
    'outer: while steps < step.max_inner {
        let g = grad_m(&current, w, s, step.rho)?;
        let mut backtracks = 0;
        loop {
            let trial = current.as_symmetric().affine_combination(1.0, &g, -t)?;
            let cand = psd_project(&trial, step.eps_pd)?;
            let f_cand = metric_objective(&cand, w, s, step.rho)?;
            if f_cand <= f_cur {
                let rel = (f_cur - f_cand) / f_cur.abs().max(f64::MIN_POSITIVE);
                current = cand;
                f_cur = f_cand;
                steps += 1;
                if rel < step.tol_inner {
                    break 'outer;
                }
                break;
            }
            rejected += 1;
            backtracks += 1;
            t *= step.beta;
            if backtracks >= MAX_BACKTRACK {
                break 'outer;
            }
        }
    }
    Ok(MetricUpdate {
        metric: current,
        objective: f_cur,
        steps,
        rejected,
    })
}

/// `Σ_{i,j} (xᵢ − xⱼ)ᵀ M (xᵢ − xⱼ)` over all ordered pairs, by direct summation.
///
/// Equals `2n · tr(MS)` with `S` the scatter of `x`.
pub fn pairwise_metric_sum(x: &DMatrix<f64>, m: &SymmetricMatrix) -> Result<f64> {
    check_dim(m.dim(), x.ncols())?;
    let n = x.nrows();
    let mut total = 0.0;
    for i in 0..n {
        for j in 0..n {
            let diff = (x.row(i) - x.row(j)).transpose();
            total += diff.dot(&(m.as_matrix() * &diff));
        }
    }
    Ok(total)
}
