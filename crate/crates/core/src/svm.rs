//! Soft-margin linear SVM solved in the dual.
//!
//! The solver works on pairs of dual variables so the equality constraint
//! `Σ αᵢ yᵢ = 0` is preserved exactly. Each sweep visits the samples in a
//! seeded random order; a visited sample that takes part in a violating pair is
//! updated jointly with its maximally violating partner. The run stops once the
//! maximal violating pair gap drops below `tol` or the sweep budget is spent.

use nalgebra::{DMatrix, DVector};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{check_dim, FsvmError, Result};

/// Above this many samples the Gram matrix is not cached and kernel columns are
/// recomputed on demand.
const GRAM_CACHE_LIMIT: usize = 3000;

const TAU: f64 = 1e-12;

#[derive(Debug, Clone)]
pub struct LinearSvmProblem {
    samples: DMatrix<f64>,
    labels: Vec<f64>,
    cost: f64,
}

impl LinearSvmProblem {
    /// `samples` holds one sample per row; `labels` must be `±1`.
    pub fn new(samples: DMatrix<f64>, labels: Vec<f64>, cost: f64) -> Result<Self> {
        check_dim(samples.nrows(), labels.len())?;
        if samples.nrows() == 0 {
            return Err(FsvmError::invalid("SVM problem needs at least one sample"));
        }
        if !(cost.is_finite() && cost > 0.0) {
            return Err(FsvmError::invalid(format!("C must be positive, got {cost}")));
        }
        if let Some(bad) = labels.iter().find(|&&y| y != 1.0 && y != -1.0) {
            return Err(FsvmError::invalid(format!("labels must be +1 or -1, got {bad}")));
        }
        if samples.iter().any(|v| !v.is_finite()) {
            return Err(FsvmError::invalid("samples contain non-finite values"));
        }
        Ok(LinearSvmProblem { samples, labels, cost })
    }

    pub fn samples(&self) -> &DMatrix<f64> {
        &self.samples
    }

    pub fn labels(&self) -> &[f64] {
        &self.labels
    }

    pub fn cost(&self) -> f64 {
        self.cost
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.samples.ncols()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SolverOptions {
    /// Stop when the maximal violating pair gap is at most this.
    pub tol: f64,
    pub max_sweeps: usize,
    /// Seed of the per-sweep visiting order.
    pub seed: u64,
}

impl Default for SolverOptions {
    fn default() -> Self {
        SolverOptions {
            tol: 1e-6,
            max_sweeps: 10_000,
            seed: 42,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SvmSolution {
    pub v: DVector<f64>,
    pub b: f64,
    pub xi: DVector<f64>,
    pub alpha: DVector<f64>,
    pub dual_objective: f64,
    pub primal_objective: f64,
    /// Full passes over the data taken by the solver.
    pub sweeps: usize,
    /// Number of two-variable updates.
    pub updates: usize,
    pub converged: bool,
}

impl SvmSolution {
    pub fn decision(&self, z: &[f64]) -> f64 {
        self.v.iter().zip(z).map(|(a, b)| a * b).sum::<f64>() + self.b
    }

    /// `(primal − dual) / max(1, |primal|)`.
    pub fn relative_gap(&self) -> f64 {
        (self.primal_objective - self.dual_objective) / self.primal_objective.abs().max(1.0)
    }
}

enum Columns<'a> {
    Cached(DMatrix<f64>),
    OnDemand(&'a DMatrix<f64>),
}

impl Columns<'_> {
    fn new(z: &DMatrix<f64>) -> Columns<'_> {
        if z.nrows() <= GRAM_CACHE_LIMIT {
            Columns::Cached(z * z.transpose())
        } else {
            Columns::OnDemand(z)
        }
    }

    fn column(&self, i: usize) -> DVector<f64> {
        match self {
            Columns::Cached(k) => k.column(i).into_owned(),
            Columns::OnDemand(z) => *z * z.row(i).transpose(),
        }
    }
}

fn in_up(alpha: f64, y: f64, c: f64) -> bool {
    (y > 0.0 && alpha < c) || (y < 0.0 && alpha > 0.0)
}

fn in_low(alpha: f64, y: f64, c: f64) -> bool {
    (y < 0.0 && alpha < c) || (y > 0.0 && alpha > 0.0)
}

struct DualState<'a> {
    y: &'a [f64],
    c: f64,
    alpha: Vec<f64>,
    /// Gradient of `½αᵀQα − eᵀα`.
    grad: Vec<f64>,
    /// `‖zᵢ‖²`.
    diag: Vec<f64>,
    cols: Columns<'a>,
}

impl DualState<'_> {
    /// `(m, M)`: the largest `−yG` over the up set and the smallest over the low set.
    fn extremes(&self) -> (f64, usize, f64, usize) {
        let (mut up, mut up_i) = (f64::NEG_INFINITY, usize::MAX);
        let (mut low, mut low_i) = (f64::INFINITY, usize::MAX);
        for t in 0..self.alpha.len() {
            let s = -self.y[t] * self.grad[t];
            if in_up(self.alpha[t], self.y[t], self.c) && s > up {
                up = s;
                up_i = t;
            }
            if in_low(self.alpha[t], self.y[t], self.c) && s < low {
                low = s;
                low_i = t;
            }
        }
        (up, up_i, low, low_i)
    }

    /// Partner for `i` by second-order selection: among indices forming a
    /// violating pair with `i` (violation above `tol`), the one whose
    /// unclipped pair step decreases the dual the most, `(sᵢ − sⱼ)² / aᵢⱼ`.
    /// Returned as an ordered `(up, low)` pair plus its violation.
    fn partner(&self, i: usize, tol: f64) -> Option<(usize, usize, f64)> {
        let si = -self.y[i] * self.grad[i];
        let i_up = in_up(self.alpha[i], self.y[i], self.c);
        let i_low = in_low(self.alpha[i], self.y[i], self.c);
        if !(i_up || i_low) {
            return None;
        }
        let ki = self.cols.column(i);
        let mut best: Option<(usize, usize, f64)> = None;
        let mut best_gain = 0.0;
        for t in 0..self.alpha.len() {
            if t == i {
                continue;
            }
            let st = -self.y[t] * self.grad[t];
            let pair = if i_up && si - st > tol && in_low(self.alpha[t], self.y[t], self.c) {
                (i, t, si - st)
            } else if i_low && st - si > tol && in_up(self.alpha[t], self.y[t], self.c) {
                (t, i, st - si)
            } else {
                continue;
            };
            let a = (self.diag[i] + self.diag[t] - 2.0 * ki[t]).max(TAU);
            let gain = pair.2 * pair.2 / a;
            if gain > best_gain {
                best_gain = gain;
                best = Some(pair);
            }
        }
        best
    }

    /// Moves along `α_i += y_i δ`, `α_j −= y_j δ` with `i` in the up set and `j`
    /// in the low set.
    fn update_pair(&mut self, i: usize, j: usize) {
        let (yi, yj) = (self.y[i], self.y[j]);
        let ki = self.cols.column(i);
        let kj = self.cols.column(j);
        let quad = (ki[i] + kj[j] - 2.0 * ki[j]).max(TAU);
        let mut delta = (-yi * self.grad[i] + yj * self.grad[j]) / quad;
        let cap_i = if yi > 0.0 {
            self.c - self.alpha[i]
        } else {
            self.alpha[i]
        };
        let cap_j = if yj > 0.0 {
            self.alpha[j]
        } else {
            self.c - self.alpha[j]
        };
        delta = delta.min(cap_i).min(cap_j).max(0.0);
        if delta == 0.0 {
            return;
        }
        let di = yi * delta;
        let dj = -yj * delta;
        self.alpha[i] = snap(self.alpha[i] + di, self.c);
        self.alpha[j] = snap(self.alpha[j] + dj, self.c);
        for k in 0..self.alpha.len() {
            self.grad[k] += self.y[k] * (yi * ki[k] * di + yj * kj[k] * dj);
        }
    }

    /// Bias from the free support vectors, or the midpoint of the feasible
    /// interval when there are none.
    fn bias(&self) -> f64 {
        let mut ub = f64::INFINITY;
        let mut lb = f64::NEG_INFINITY;
        let mut sum = 0.0;
        let mut free = 0usize;
        for t in 0..self.alpha.len() {
            let yg = self.y[t] * self.grad[t];
            let a = self.alpha[t];
            if a >= self.c {
                if self.y[t] < 0.0 {
                    ub = ub.min(yg);
                } else {
                    lb = lb.max(yg);
                }
            } else if a <= 0.0 {
                if self.y[t] > 0.0 {
                    ub = ub.min(yg);
                } else {
                    lb = lb.max(yg);
                }
            } else {
                free += 1;
                sum += yg;
            }
        }
        let r = if free > 0 { sum / free as f64 } else { 0.5 * (ub + lb) };
        -r
    }
}

fn snap(a: f64, c: f64) -> f64 {
    if a < 1e-15 * c {
        0.0
    } else if a > c * (1.0 - 1e-15) {
        c
    } else {
        a
    }
}

fn warm_alpha(p: &LinearSvmProblem, warm: Option<&SvmSolution>) -> Option<Vec<f64>> {
    let prev = warm?;
    if prev.alpha.len() != p.len() {
        return None;
    }
    let c = p.cost;
    let alpha: Vec<f64> = prev.alpha.iter().map(|a| snap(a.clamp(0.0, c), c)).collect();
    let balance: f64 = alpha.iter().zip(&p.labels).map(|(a, y)| a * y).sum();
    if balance.abs() > 1e-9 * c * p.len() as f64 {
        log::debug!("warm start discarded: Σαy = {balance:e}");
        return None;
    }
    Some(alpha)
}

/// Solves `min ½‖v‖² + C Σ ξᵢ  s.t. yᵢ(vᵀzᵢ + b) ≥ 1 − ξᵢ, ξ ≥ 0`.
///
/// `warm_start` supplies the dual variables of a previous solution; it is
/// ignored when its length differs from the problem size or it violates the
/// equality constraint.
pub fn solve_linear_svm(
    p: &LinearSvmProblem,
    warm_start: Option<&SvmSolution>,
    opts: &SolverOptions,
) -> Result<SvmSolution> {
    let n = p.len();
    let has_pos = p.labels.iter().any(|&y| y > 0.0);
    let has_neg = p.labels.iter().any(|&y| y < 0.0);
    if !(has_pos && has_neg) {
        return Err(FsvmError::degenerate("SVM training data contains a single class"));
    }
    let z = &p.samples;
    let y = &p.labels;

    let alpha = warm_alpha(p, warm_start).unwrap_or_else(|| vec![0.0; n]);
    let v0 = weight_vector(z, y, &alpha);
    let grad: Vec<f64> = (0..n).map(|k| y[k] * z.row(k).transpose().dot(&v0) - 1.0).collect();

    let mut state = DualState {
        y,
        c: p.cost,
        alpha,
        grad,
        diag: z.row_iter().map(|r| r.norm_squared()).collect(),
        cols: Columns::new(z),
    };

    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    let mut order: Vec<usize> = (0..n).collect();
    let mut sweeps = 0;
    let mut updates = 0;
    let mut converged = {
        let (up, _, low, _) = state.extremes();
        up - low <= opts.tol
    };
    while !converged && sweeps < opts.max_sweeps {
        order.shuffle(&mut rng);
        // Extremes from the start of the sweep; an index that could not form
        // a violating pair with them is skipped without scanning.
        let (up0, _, low0, _) = state.extremes();
        for &i in &order {
            let si = -y[i] * state.grad[i];
            let could_up = in_up(state.alpha[i], y[i], state.c) && si - low0 > opts.tol;
            let could_low = in_low(state.alpha[i], y[i], state.c) && up0 - si > opts.tol;
            if !(could_up || could_low) {
                continue;
            }
            if let Some((a, b, _)) = state.partner(i, opts.tol) {
                state.update_pair(a, b);
                updates += 1;
            }
        }
        sweeps += 1;
        // Greedy phase: up to n steps on the most violating index, each paired
        // by second-order selection, until the gap closes.
        for _ in 0..n {
            let (up, up_i, low, low_i) = state.extremes();
            converged = up - low <= opts.tol;
            if converged || up_i == usize::MAX || low_i == usize::MAX {
                break;
            }
            let (a, b) = state.partner(up_i, opts.tol).map_or((up_i, low_i), |(a, b, _)| (a, b));
            state.update_pair(a, b);
            updates += 1;
        }
    }
    if !converged {
        log::warn!(
            "SVM solver stopped after {sweeps} sweeps without reaching tol {}",
            opts.tol
        );
    }
    let b = state.bias();
    let alpha = DVector::from_vec(state.alpha);
    let v = weight_vector(z, y, alpha.as_slice());
    let xi = hinge_losses(z, y, &v, b);
    let primal = 0.5 * v.norm_squared() + p.cost * xi.sum();
    let dual = alpha.sum() - 0.5 * v.norm_squared();
    Ok(SvmSolution {
        v,
        b,
        xi,
        alpha,
        dual_objective: dual,
        primal_objective: primal,
        sweeps,
        updates,
        converged,
    })
}

fn weight_vector(z: &DMatrix<f64>, y: &[f64], alpha: &[f64]) -> DVector<f64> {
    let mut v = DVector::zeros(z.ncols());
    for (k, (&a, &yk)) in alpha.iter().zip(y).enumerate() {
        if a != 0.0 {
            v += z.row(k).transpose() * (a * yk);
        }
    }
    v
}

fn hinge_losses(z: &DMatrix<f64>, y: &[f64], v: &DVector<f64>, b: f64) -> DVector<f64> {
    DVector::from_iterator(
        y.len(),
        (0..y.len()).map(|k| (1.0 - y[k] * (z.row(k).transpose().dot(v) + b)).max(0.0)),
    )
}

/// Primal and dual objective values of `s` on problem `p`.
///
/// Slacks are recomputed as hinge losses of `(s.v, s.b)`; the dual uses `s.alpha`.
pub fn svm_objectives(p: &LinearSvmProblem, s: &SvmSolution) -> Result<(f64, f64)> {
    check_dim(p.dim(), s.v.len())?;
    check_dim(p.len(), s.alpha.len())?;
    let xi = hinge_losses(&p.samples, &p.labels, &s.v, s.b);
    let primal = 0.5 * s.v.norm_squared() + p.cost * xi.sum();
    let u = weight_vector(&p.samples, &p.labels, s.alpha.as_slice());
    let dual = s.alpha.sum() - 0.5 * u.norm_squared();
    Ok((primal, dual))
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use rand::{Rng, SeedableRng};

    fn problem(rows: &[&[f64]], labels: &[f64], c: f64) -> LinearSvmProblem {
        let d = rows[0].len();
        let flat: Vec<f64> = rows.iter().flat_map(|r| r.iter().copied()).collect();
        LinearSvmProblem::new(DMatrix::from_row_slice(rows.len(), d, &flat), labels.to_vec(), c).unwrap()
    }

    fn random_problem(rng: &mut ChaCha8Rng, n: usize, d: usize, c: f64) -> LinearSvmProblem {
        let mut labels: Vec<f64> = (0..n).map(|_| if rng.random_bool(0.5) { 1.0 } else { -1.0 }).collect();
        labels[0] = 1.0;
        labels[1] = -1.0;
        let z = DMatrix::from_fn(n, d, |i, _| rng.random_range(-1.0..1.0) + 0.7 * labels[i]);
        LinearSvmProblem::new(z, labels, c).unwrap()
    }

    #[test]
    fn one_dimensional_separable() {
        let p = problem(&[&[-1.0], &[1.0]], &[-1.0, 1.0], 100.0);
        let s = solve_linear_svm(&p, None, &SolverOptions::default()).unwrap();
        assert!(s.converged);
        assert_abs_diff_eq!(s.v[0], 1.0, epsilon = 1e-9);
        assert_abs_diff_eq!(s.b, 0.0, epsilon = 1e-9);
        assert!(s.xi.iter().all(|&x| x.abs() < 1e-9));
        assert_abs_diff_eq!(s.primal_objective, 0.5, epsilon = 1e-6);
        assert_abs_diff_eq!(s.dual_objective, 0.5, epsilon = 1e-6);
    }

    #[test]
    fn two_dimensional_separable() {
        let p = problem(&[&[-1.0, 0.0], &[1.0, 0.0]], &[-1.0, 1.0], 100.0);
        let s = solve_linear_svm(&p, None, &SolverOptions::default()).unwrap();
        assert_abs_diff_eq!(s.v[0], 1.0, epsilon = 1e-9);
        assert_abs_diff_eq!(s.v[1], 0.0, epsilon = 1e-12);
        assert_abs_diff_eq!(s.b, 0.0, epsilon = 1e-9);
    }

    #[test]
    fn identical_point_with_both_labels() {
        let p = problem(&[&[0.3, -0.2], &[0.3, -0.2]], &[1.0, -1.0], 1.0);
        let s = solve_linear_svm(&p, None, &SolverOptions::default()).unwrap();
        assert!(s.xi.sum() >= 2.0 - 1e-12);
        assert!(s.primal_objective.is_finite());
    }

    #[test]
    fn single_class_is_degenerate() {
        let p = problem(&[&[0.0], &[1.0]], &[1.0, 1.0], 1.0);
        let err = solve_linear_svm(&p, None, &SolverOptions::default()).unwrap_err();
        assert!(matches!(err, FsvmError::Degenerate(_)));
    }

    #[test]
    fn rejects_bad_input() {
        let z = DMatrix::from_row_slice(2, 1, &[f64::NAN, 1.0]);
        assert!(LinearSvmProblem::new(z, vec![1.0, -1.0], 1.0).is_err());
        let z = DMatrix::from_row_slice(2, 1, &[0.0, 1.0]);
        assert!(LinearSvmProblem::new(z.clone(), vec![1.0, 0.0], 1.0).is_err());
        assert!(LinearSvmProblem::new(z, vec![1.0, -1.0], 0.0).is_err());
    }

    #[test]
    fn objectives_at_zero() {
        let p = problem(&[&[1.0], &[2.0], &[3.0]], &[1.0, -1.0, 1.0], 2.5);
        let s = SvmSolution {
            v: DVector::zeros(1),
            b: 0.0,
            xi: DVector::from_element(3, 1.0),
            alpha: DVector::zeros(3),
            dual_objective: 0.0,
            primal_objective: 0.0,
            sweeps: 0,
            updates: 0,
            converged: false,
        };
        let (primal, dual) = svm_objectives(&p, &s).unwrap();
        assert_eq!(primal, 7.5);
        assert_eq!(dual, 0.0);
    }

    #[test]
    fn dual_matches_direct_summation() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for _ in 0..20 {
            let p = random_problem(&mut rng, 4, 3, 2.0);
            // Feasible α: pair up a positive and a negative sample.
            let mut alpha = DVector::zeros(4);
            let pos = p.labels().iter().position(|&y| y > 0.0).unwrap();
            let neg = p.labels().iter().position(|&y| y < 0.0).unwrap();
            let a = rng.random_range(0.0..2.0);
            alpha[pos] = a;
            alpha[neg] = a;
            let mut direct = alpha.sum();
            for i in 0..4 {
                for j in 0..4 {
                    let kij = p.samples().row(i).dot(&p.samples().row(j));
                    direct -= 0.5 * alpha[i] * alpha[j] * p.labels()[i] * p.labels()[j] * kij;
                }
            }
            let s = SvmSolution {
                v: DVector::zeros(3),
                b: 0.0,
                xi: DVector::zeros(4),
                alpha,
                dual_objective: 0.0,
                primal_objective: 0.0,
                sweeps: 0,
                updates: 0,
                converged: false,
            };
            let (primal, dual) = svm_objectives(&p, &s).unwrap();
            assert_abs_diff_eq!(dual, direct, epsilon = 1e-12);
            assert!(dual <= primal + 1e-9);
        }
    }

    #[test]
    fn solution_invariants_hold() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        for trial in 0..30 {
            let n = rng.random_range(4..60);
            let d = rng.random_range(1..6);
            let c = [0.1, 1.0, 10.0][trial % 3];
            let p = random_problem(&mut rng, n, d, c);
            let s = solve_linear_svm(&p, None, &SolverOptions::default()).unwrap();
            assert!(s.converged);
            assert!(s.alpha.iter().all(|&a| (0.0..=c).contains(&a)));
            let balance: f64 = s.alpha.iter().zip(p.labels()).map(|(a, y)| a * y).sum();
            assert!(balance.abs() <= 1e-10 * c * n as f64);
            for k in 0..n {
                let margin = p.labels()[k] * s.decision(p.samples().row(k).transpose().as_slice());
                assert_abs_diff_eq!(s.xi[k], (1.0 - margin).max(0.0), epsilon = 1e-8);
            }
            assert!(s.dual_objective <= s.primal_objective + 1e-9);
            assert!(s.relative_gap() <= 1e-4, "gap {}", s.relative_gap());
        }
    }

    #[test]
    fn rotation_invariance() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        for _ in 0..10 {
            let p = random_problem(&mut rng, 30, 3, 1.0);
            let q = nalgebra::QR::new(DMatrix::from_fn(3, 3, |_, _| rng.random_range(-1.0..1.0))).q();
            let rotated = LinearSvmProblem::new(p.samples() * &q, p.labels().to_vec(), 1.0).unwrap();
            let opts = SolverOptions {
                tol: 1e-10,
                ..Default::default()
            };
            let a = solve_linear_svm(&p, None, &opts).unwrap();
            let b = solve_linear_svm(&rotated, None, &opts).unwrap();
            assert_abs_diff_eq!(a.primal_objective, b.primal_objective, epsilon = 1e-8);
            for k in 0..30 {
                let sa = a.decision(p.samples().row(k).transpose().as_slice());
                let sb = b.decision(rotated.samples().row(k).transpose().as_slice());
                assert_eq!(sa >= 0.0, sb >= 0.0);
            }
        }
    }

    #[test]
    fn warm_start_from_solution_is_immediate() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let p = random_problem(&mut rng, 50, 4, 1.0);
        let opts = SolverOptions::default();
        let cold = solve_linear_svm(&p, None, &opts).unwrap();
        let warm = solve_linear_svm(&p, Some(&cold), &opts).unwrap();
        assert!(warm.sweeps <= cold.sweeps);
        assert_eq!(warm.sweeps, 0);
    }

    #[test]
    fn deterministic_under_seed() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let p = random_problem(&mut rng, 40, 3, 1.0);
        let a = solve_linear_svm(&p, None, &SolverOptions::default()).unwrap();
        let b = solve_linear_svm(&p, None, &SolverOptions::default()).unwrap();
        assert_eq!(a, b);
    }
}
