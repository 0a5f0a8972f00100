//! Radius oracles for a finite point set: the exact minimum enclosing ball,
//! the centroid radius `R̄ = maxᵢ ‖pᵢ − p̄‖` and the diameter
//! `R_p = max_{i,j} ‖pᵢ − pⱼ‖`.
//!
//! They satisfy `R̄/2 ≤ R ≤ R̄ ≤ R_p ≤ 2R`. All radii are unsquared.

use nalgebra::{DMatrix, DVector};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{FsvmError, Result};

/// Above this dimension the exact ball is computed by Frank-Wolfe on the dual
/// instead of Welzl's recursion, unless the points span a low-dimensional
/// affine subspace.
pub const WELZL_MAX_DIM: usize = 15;

/// Relative duality gap at which Frank-Wolfe stops.
const FW_GAP: f64 = 1e-9;
const FW_MAX_ITER: usize = 1_000_000;

/// Tolerance used when checking the sandwich bounds.
pub const BOUND_TOL: f64 = 1e-9;

/// A non-empty set of points with finite coordinates, one per row.
#[derive(Debug, Clone, PartialEq)]
pub struct PointCloud {
    points: DMatrix<f64>,
}

impl PointCloud {
    pub fn new(points: DMatrix<f64>) -> Result<Self> {
        if points.nrows() == 0 || points.ncols() == 0 {
            return Err(FsvmError::invalid("point cloud must contain at least one point"));
        }
        if points.iter().any(|v| !v.is_finite()) {
            return Err(FsvmError::invalid("point cloud has non-finite coordinates"));
        }
        Ok(PointCloud { points })
    }

    pub fn len(&self) -> usize {
        self.points.nrows()
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn dim(&self) -> usize {
        self.points.ncols()
    }

    pub fn points(&self) -> &DMatrix<f64> {
        &self.points
    }

    fn point(&self, i: usize) -> DVector<f64> {
        self.points.row(i).transpose()
    }

    fn scale(&self) -> f64 {
        self.points.amax().max(1.0)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Ball {
    pub center: DVector<f64>,
    pub radius: f64,
}

fn max_distance(cloud: &PointCloud, center: &DVector<f64>) -> f64 {
    (0..cloud.len())
        .map(|i| (cloud.point(i) - center).norm())
        .fold(0.0, f64::max)
}

/// Exact minimum enclosing ball.
///
/// The returned radius is the largest distance from the computed center to any
/// point, so containment holds by construction.
pub fn meb_exact(cloud: &PointCloud) -> Ball {
    let center = if cloud.dim() <= WELZL_MAX_DIM {
        welzl(cloud)
    } else {
        match AffineHull::fit(cloud) {
            Some(hull) if hull.basis.ncols() <= WELZL_MAX_DIM => {
                let reduced = hull.reduce(cloud);
                hull.lift(&welzl(&reduced))
            }
            _ => frank_wolfe(cloud),
        }
    };
    let radius = max_distance(cloud, &center);
    Ball { center, radius }
}

// --- Welzl with move-to-front -------------------------------------------------

struct Welzl<'a> {
    cloud: &'a PointCloud,
    tol: f64,
    max_support: usize,
}

impl Welzl<'_> {
    fn ball_of(&self, support: &[usize]) -> Option<Ball> {
        let (&first, rest) = support.split_first()?;
        let p0 = self.cloud.point(first);
        if rest.is_empty() {
            return Some(Ball {
                center: p0,
                radius: 0.0,
            });
        }
        let m = rest.len();
        let d = self.cloud.dim();
        let mut a = DMatrix::zeros(m, d);
        let mut rhs = DVector::zeros(m);
        for (k, &idx) in rest.iter().enumerate() {
            let diff = self.cloud.point(idx) - &p0;
            rhs[k] = 0.5 * diff.norm_squared();
            a.set_row(k, &diff.transpose());
        }
        let gram = &a * a.transpose();
        // The support set can be affinely dependent in degenerate inputs; the
        // pseudo-inverse then picks the minimal-norm solution.
        let lambda = gram.clone().cholesky().map(|c| c.solve(&rhs)).unwrap_or_else(|| {
            gram.svd(true, true)
                .solve(&rhs, 1e-14)
                .unwrap_or_else(|_| DVector::zeros(m))
        });
        let center = &p0 + a.transpose() * lambda;
        let radius = support
            .iter()
            .map(|&i| (self.cloud.point(i) - &center).norm())
            .fold(0.0, f64::max);
        Some(Ball { center, radius })
    }

    fn contains(&self, ball: &Option<Ball>, i: usize) -> bool {
        match ball {
            Some(b) => (self.cloud.point(i) - &b.center).norm() <= b.radius + self.tol,
            None => false,
        }
    }

    fn run(&self, order: &mut Vec<usize>, end: usize, support: &mut Vec<usize>) -> Option<Ball> {
        let mut ball = self.ball_of(support);
        if support.len() == self.max_support {
            return ball;
        }
        let mut i = 0;
        while i < end {
            let p = order[i];
            if !self.contains(&ball, p) {
                support.push(p);
                ball = self.run(order, i, support);
                support.pop();
                order.remove(i);
                order.insert(0, p);
            }
            i += 1;
        }
        ball
    }
}

fn welzl(cloud: &PointCloud) -> DVector<f64> {
    let solver = Welzl {
        cloud,
        tol: 1e-12 * cloud.scale(),
        max_support: cloud.dim() + 1,
    };
    let mut order: Vec<usize> = (0..cloud.len()).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(0x5eed));
    let n = order.len();
    let ball = solver
        .run(&mut order, n, &mut Vec::new())
        .expect("a non-empty cloud has an enclosing ball");
    ball.center
}

// --- Affine hull reduction ----------------------------------------------------

struct AffineHull {
    origin: DVector<f64>,
    /// Orthonormal columns spanning the centered points.
    basis: DMatrix<f64>,
}

impl AffineHull {
    fn fit(cloud: &PointCloud) -> Option<Self> {
        let origin = cloud.points.row_mean().transpose();
        let mut centered = cloud.points.clone();
        for mut row in centered.row_iter_mut() {
            row -= origin.transpose();
        }
        // Eigenvectors of the d×d scatter with non-negligible eigenvalues span
        // the affine hull.
        let scatter = centered.transpose() * &centered;
        let eig = nalgebra::SymmetricEigen::new(scatter);
        let top = eig.eigenvalues.amax();
        let keep: Vec<usize> = (0..eig.eigenvalues.len())
            .filter(|&k| eig.eigenvalues[k] > 1e-20 * top.max(f64::MIN_POSITIVE))
            .collect();
        if keep.is_empty() {
            return None;
        }
        let basis = DMatrix::from_fn(cloud.dim(), keep.len(), |r, c| eig.eigenvectors[(r, keep[c])]);
        Some(AffineHull { origin, basis })
    }

    fn reduce(&self, cloud: &PointCloud) -> PointCloud {
        let mut centered = cloud.points.clone();
        for mut row in centered.row_iter_mut() {
            row -= self.origin.transpose();
        }
        PointCloud {
            points: centered * &self.basis,
        }
    }

    fn lift(&self, reduced: &DVector<f64>) -> DVector<f64> {
        &self.origin + &self.basis * reduced
    }
}

// --- Frank-Wolfe with away steps on the dual ---------------------------------

fn frank_wolfe(cloud: &PointCloud) -> DVector<f64> {
    let n = cloud.len();
    let pts: Vec<DVector<f64>> = (0..n).map(|i| cloud.point(i)).collect();
    let far = |from: &DVector<f64>| {
        (0..n)
            .max_by(|&a, &b| {
                (&pts[a] - from)
                    .norm_squared()
                    .total_cmp(&(&pts[b] - from).norm_squared())
            })
            .unwrap()
    };
    let a = far(&pts[0]);
    let b = far(&pts[a]);
    let mut alpha = vec![0.0; n];
    alpha[a] += 0.5;
    alpha[b] += 0.5;

    for _ in 0..FW_MAX_ITER {
        let mut center = DVector::zeros(cloud.dim());
        for (w, p) in alpha.iter().zip(&pts) {
            if *w > 0.0 {
                center += p * *w;
            }
        }
        let dists: Vec<f64> = pts.iter().map(|p| (p - &center).norm_squared()).collect();
        let gamma: f64 = alpha.iter().zip(&dists).map(|(w, d)| w * d).sum();
        if gamma <= 0.0 {
            return center;
        }
        let j = (0..n).max_by(|&x, &y| dists[x].total_cmp(&dists[y])).unwrap();
        if dists[j] <= (1.0 + FW_GAP) * gamma {
            return center;
        }
        let k = (0..n)
            .filter(|&i| alpha[i] > 0.0)
            .min_by(|&x, &y| dists[x].total_cmp(&dists[y]))
            .unwrap();
        let up = dists[j] / gamma - 1.0;
        let down = 1.0 - dists[k] / gamma;
        if up >= down {
            let lambda = up / (2.0 * (1.0 + up));
            for w in alpha.iter_mut() {
                *w *= 1.0 - lambda;
            }
            alpha[j] += lambda;
        } else {
            let lambda = (down / (2.0 * (1.0 - down))).min(alpha[k] / (1.0 - alpha[k]));
            for w in alpha.iter_mut() {
                *w *= 1.0 + lambda;
            }
            alpha[k] -= lambda;
            if alpha[k] < 1e-16 {
                alpha[k] = 0.0;
            }
        }
    }
    log::warn!("minimum enclosing ball: Frank-Wolfe hit its iteration cap");
    let mut center = DVector::zeros(cloud.dim());
    for (w, p) in alpha.iter().zip(&pts) {
        center += p * *w;
    }
    center
}

/// `R̄ = maxᵢ ‖pᵢ − mean‖`.
pub fn radius_centroid(cloud: &PointCloud) -> f64 {
    let mean = cloud.points.row_mean().transpose();
    max_distance(cloud, &mean)
}

/// Largest pairwise distance; zero for a single point.
pub fn radius_pairwise(cloud: &PointCloud) -> f64 {
    let n = cloud.len();
    let mut best = 0.0f64;
    for i in 0..n {
        for j in (i + 1)..n {
            best = best.max((cloud.points.row(i) - cloud.points.row(j)).norm());
        }
    }
    best
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoundReport {
    /// Exact enclosing-ball radius `R`.
    pub radius: f64,
    pub centroid_radius: f64,
    pub pairwise_diameter: f64,
    /// `R̄/2 ≤ R ≤ R̄`
    pub centroid_sandwich: bool,
    /// `R ≥ R_p/2`
    pub diameter_lower_bound: bool,
    /// `R̄ ≤ R_p`
    pub centroid_below_diameter: bool,
    pub all_hold: bool,
}

/// Computes all three radii and checks the sandwich bounds with tolerance
/// [`BOUND_TOL`].
pub fn verify_bounds(cloud: &PointCloud) -> BoundReport {
    let r = meb_exact(cloud).radius;
    let rbar = radius_centroid(cloud);
    let rp = radius_pairwise(cloud);
    let centroid_sandwich = rbar / 2.0 <= r + BOUND_TOL && r <= rbar + BOUND_TOL;
    let diameter_lower_bound = rp / 2.0 <= r + BOUND_TOL;
    let centroid_below_diameter = rbar <= rp + BOUND_TOL;
    BoundReport {
        radius: r,
        centroid_radius: rbar,
        pairwise_diameter: rp,
        centroid_sandwich,
        diameter_lower_bound,
        centroid_below_diameter,
        all_hold: centroid_sandwich && diameter_lower_bound && centroid_below_diameter,
    }
}
