//! Seeded synthetic datasets used by the benchmark harness and tests.

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::data::Dataset;

fn gaussian(rng: &mut ChaCha8Rng) -> f64 {
    rng.sample(StandardNormal)
}

/// Haar-random rotation from the QR factorization of a Gaussian matrix.
pub fn random_rotation(rng: &mut ChaCha8Rng, d: usize) -> DMatrix<f64> {
    let g = DMatrix::from_fn(d, d, |_, _| gaussian(rng));
    let qr = g.qr();
    let mut q = qr.q();
    let r = qr.r();
    for j in 0..d {
        if r[(j, j)] < 0.0 {
            q.column_mut(j).neg_mut();
        }
    }
    q
}

fn alternating_labels(n: usize) -> Vec<i64> {
    (0..n).map(|i| if i % 2 == 0 { 1 } else { -1 }).collect()
}

/// Two Gaussian classes sharing a rotated, strongly anisotropic covariance.
/// The class means differ along the lowest-variance principal axis, so the
/// informative direction is swamped by high-variance directions that carry
/// no label information.
pub fn anisotropic_gaussians(n: usize, seed: u64) -> Dataset {
    const D: usize = 10;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let q = random_rotation(&mut rng, D);
    // Standard deviations from 6 down to 0.5.
    let stds: Vec<f64> = (0..D)
        .map(|k| 6.0 * (0.5f64 / 6.0).powf(k as f64 / (D - 1) as f64))
        .collect();
    let shift = q.column(D - 1) * 0.45;
    let y = alternating_labels(n);
    let mut x = DMatrix::zeros(n, D);
    for (i, &label) in y.iter().enumerate() {
        let latent = DVector::from_fn(D, |k, _| stds[k] * gaussian(&mut rng));
        let p = &q * latent + &shift * label as f64;
        x.set_row(i, &p.transpose());
    }
    Dataset::new("anisotropic", x, y).expect("fixture is well formed")
}

/// Classes separated along the first two coordinates, with a shared
/// high-variance latent factor mixed into every feature along a random
/// direction. Per-feature standardization cannot remove the factor because
/// it is spread over correlated features.
pub fn rotated_nuisance(n: usize, seed: u64) -> Dataset {
    const D: usize = 8;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let dir = {
        let v = DVector::from_fn(D, |_, _| gaussian(&mut rng));
        v.normalize()
    };
    let y = alternating_labels(n);
    let mut x = DMatrix::zeros(n, D);
    for (i, &label) in y.iter().enumerate() {
        let h = 5.0 * gaussian(&mut rng);
        let mut p = DVector::from_fn(D, |_, _| gaussian(&mut rng));
        p[0] += 0.7 * label as f64;
        p[1] += 0.7 * label as f64;
        p += &dir * h;
        x.set_row(i, &p.transpose());
    }
    Dataset::new("rotated-nuisance", x, y).expect("fixture is well formed")
}

/// 2-D XOR: uniform points in `[-1, 1]²` outside a band of half-width
/// `margin` around both axes, labeled by the sign of `x₁x₂`.
pub fn xor_with_margin(n: usize, margin: f64, seed: u64) -> Dataset {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut x = DMatrix::zeros(n, 2);
    let mut y = Vec::with_capacity(n);
    for i in 0..n {
        // Sample the quadrant first so the classes stay balanced.
        let sx = if i % 2 == 0 { 1.0 } else { -1.0 };
        let sy = if (i / 2) % 2 == 0 { 1.0 } else { -1.0 };
        let a = rng.random_range(margin..1.0) * sx;
        let b = rng.random_range(margin..1.0) * sy;
        x[(i, 0)] = a;
        x[(i, 1)] = b;
        y.push(if sx * sy > 0.0 { 1 } else { -1 });
    }
    Dataset::new("xor", x, y).expect("fixture is well formed")
}

/// The three benchmark fixtures at their default sizes.
///
/// The linear fixtures are deliberately small: with a few dozen samples the
/// choice of regularizer matters, which is where a learned metric pays off.
pub fn standard_fixtures(seed: u64) -> Vec<Dataset> {
    vec![
        anisotropic_gaussians(60, seed),
        rotated_nuisance(60, seed.wrapping_add(1)),
        xor_with_margin(200, 0.1, seed.wrapping_add(2)),
    ]
}
