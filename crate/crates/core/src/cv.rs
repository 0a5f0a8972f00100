//! Stratified fold assignment and multi-class reductions.

use nalgebra::DMatrix;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{check_dim, FsvmError, Result};
use crate::fsvm::FsvmModel;
use crate::kernel::KernelFsvmModel;

/// Assigns every sample to one of `k` folds.
///
/// Classes are visited in ascending id order, each shuffled with a single
/// seeded stream, and the concatenated order is dealt round-robin. Per-class
/// counts across folds therefore differ by at most one, as do fold sizes.
pub fn stratified_kfold(y: &[i64], k: usize, seed: u64) -> Result<Vec<usize>> {
    let n = y.len();
    if k < 2 {
        return Err(FsvmError::invalid(format!("need at least 2 folds, got {k}")));
    }
    if k > n {
        return Err(FsvmError::invalid(format!("{k} folds requested for {n} samples")));
    }
    let mut classes = y.to_vec();
    classes.sort_unstable();
    classes.dedup();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut folds = vec![0usize; n];
    let mut pos = 0usize;
    for c in classes {
        let mut members: Vec<usize> = (0..n).filter(|&i| y[i] == c).collect();
        members.shuffle(&mut rng);
        for i in members {
            folds[i] = pos % k;
            pos += 1;
        }
    }
    Ok(folds)
}

/// `(train, test)` index lists for fold `f`.
pub fn fold_split(assignment: &[usize], f: usize) -> (Vec<usize>, Vec<usize>) {
    (0..assignment.len()).partition(|&i| assignment[i] != f)
}

/// Real-valued decision function of a binary model.
pub trait Scorer {
    fn score(&self, x: &[f64]) -> Result<f64>;
}

impl Scorer for FsvmModel {
    fn score(&self, x: &[f64]) -> Result<f64> {
        self.predict(x).map(|(_, s)| s)
    }
}

impl Scorer for KernelFsvmModel {
    fn score(&self, x: &[f64]) -> Result<f64> {
        self.predict(x).map(|(_, s)| s)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Scheme {
    /// Two classes, one model; the larger class id is the positive class.
    Binary,
    OneVsRest,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MulticlassModel<M> {
    /// Ascending class ids.
    pub classes: Vec<i64>,
    pub models: Vec<M>,
    pub scheme: Scheme,
}

fn sorted_classes(y: &[i64]) -> Vec<i64> {
    let mut c = y.to_vec();
    c.sort_unstable();
    c.dedup();
    c
}

fn signed(y: &[i64], positive: i64) -> Vec<f64> {
    y.iter().map(|&c| if c == positive { 1.0 } else { -1.0 }).collect()
}

/// Single binary model with the larger of the two class ids as `+1`.
pub fn binary_train<M, F>(x: &DMatrix<f64>, y: &[i64], trainer: F) -> Result<MulticlassModel<M>>
where
    F: Fn(&DMatrix<f64>, &[f64]) -> Result<M>,
{
    check_dim(x.nrows(), y.len())?;
    let classes = sorted_classes(y);
    if classes.len() != 2 {
        return Err(FsvmError::degenerate(format!(
            "binary training needs 2 classes, found {}",
            classes.len()
        )));
    }
    let model = trainer(x, &signed(y, classes[1]))?;
    Ok(MulticlassModel {
        classes,
        models: vec![model],
        scheme: Scheme::Binary,
    })
}

/// One model per class, that class labeled `+1` against the rest.
pub fn one_vs_rest_train<M, F>(x: &DMatrix<f64>, y: &[i64], trainer: F) -> Result<MulticlassModel<M>>
where
    F: Fn(&DMatrix<f64>, &[f64]) -> Result<M>,
{
    check_dim(x.nrows(), y.len())?;
    let classes = sorted_classes(y);
    if classes.len() < 2 {
        return Err(FsvmError::degenerate("one-vs-rest needs at least 2 classes"));
    }
    let models = classes
        .iter()
        .map(|&c| trainer(x, &signed(y, c)))
        .collect::<Result<Vec<_>>>()?;
    Ok(MulticlassModel {
        classes,
        models,
        scheme: Scheme::OneVsRest,
    })
}

/// Binary for two classes, one-vs-rest otherwise.
pub fn multiclass_train<M, F>(x: &DMatrix<f64>, y: &[i64], trainer: F) -> Result<MulticlassModel<M>>
where
    F: Fn(&DMatrix<f64>, &[f64]) -> Result<M>,
{
    if sorted_classes(y).len() == 2 {
        binary_train(x, y, trainer)
    } else {
        one_vs_rest_train(x, y, trainer)
    }
}

impl<M: Scorer> MulticlassModel<M> {
    /// Per-model scores, in `models` order.
    pub fn scores(&self, x: &[f64]) -> Result<Vec<f64>> {
        self.models.iter().map(|m| m.score(x)).collect()
    }

    pub fn predict(&self, x: &[f64]) -> Result<i64> {
        let scores = self.scores(x)?;
        Ok(match self.scheme {
            Scheme::Binary => {
                if scores[0] >= 0.0 {
                    self.classes[1]
                } else {
                    self.classes[0]
                }
            }
            Scheme::OneVsRest => self.classes[argmax_first(&scores)],
        })
    }

    pub fn predict_many(&self, x: &DMatrix<f64>) -> Result<Vec<i64>> {
        x.row_iter().map(|r| self.predict(r.transpose().as_slice())).collect()
    }
}

/// Index of the largest value; the earliest index wins ties.
fn argmax_first(v: &[f64]) -> usize {
    let mut best = 0;
    for (i, &s) in v.iter().enumerate().skip(1) {
        if s > v[best] {
            best = i;
        }
    }
    best
}

pub fn accuracy(predicted: &[i64], truth: &[i64]) -> f64 {
    assert_eq!(predicted.len(), truth.len());
    if truth.is_empty() {
        return 0.0;
    }
    let hits = predicted.iter().zip(truth).filter(|(a, b)| a == b).count();
    hits as f64 / truth.len() as f64
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fsvm::{train_fsvm, FsvmHyperParams};
    use rand::Rng;

    #[test]
    fn balanced_two_class_five_folds() {
        let y = vec![0, 1, 0, 1, 0, 1, 0, 1, 0, 1];
        let a = stratified_kfold(&y, 5, 7).unwrap();
        for f in 0..5 {
            let (_, test) = fold_split(&a, f);
            assert_eq!(test.len(), 2);
            let mut labels: Vec<i64> = test.iter().map(|&i| y[i]).collect();
            labels.sort();
            assert_eq!(labels, vec![0, 1]);
        }
        assert_eq!(a, stratified_kfold(&y, 5, 7).unwrap());
    }

    #[test]
    fn pigeonhole_counts() {
        let y = vec![4; 21];
        let a = stratified_kfold(&y, 10, 3).unwrap();
        let mut counts = vec![0; 10];
        for f in a {
            counts[f] += 1;
        }
        counts.sort();
        assert_eq!(counts, vec![2, 2, 2, 2, 2, 2, 2, 2, 2, 3]);
    }

    #[test]
    fn fold_errors() {
        assert!(stratified_kfold(&[1, 2, 1], 4, 0).is_err());
        assert!(stratified_kfold(&[1, 2, 1], 1, 0).is_err());
    }

    #[test]
    fn stratification_bounds_random() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        for _ in 0..50 {
            let n = rng.random_range(10..80);
            let k = rng.random_range(2..=10.min(n));
            let y: Vec<i64> = (0..n).map(|_| rng.random_range(0..4)).collect();
            let a = stratified_kfold(&y, k, rng.random()).unwrap();
            for c in 0..4 {
                let mut counts = vec![0i64; k];
                for i in 0..n {
                    if y[i] == c {
                        counts[a[i]] += 1;
                    }
                }
                let spread = counts.iter().max().unwrap() - counts.iter().min().unwrap();
                assert!(spread <= 1);
            }
        }
    }

    struct Fixed(f64);
    impl Scorer for Fixed {
        fn score(&self, _: &[f64]) -> Result<f64> {
            Ok(self.0)
        }
    }

    #[test]
    fn ties_go_to_smallest_class() {
        let m = MulticlassModel {
            classes: vec![2, 5, 9],
            models: vec![Fixed(0.3), Fixed(0.7), Fixed(0.7)],
            scheme: Scheme::OneVsRest,
        };
        assert_eq!(m.predict(&[]).unwrap(), 5);
        let m = MulticlassModel {
            classes: vec![2, 5],
            models: vec![Fixed(0.0)],
            scheme: Scheme::Binary,
        };
        assert_eq!(m.predict(&[]).unwrap(), 5);
    }

    fn clusters(rng: &mut ChaCha8Rng, centers: &[(f64, f64)], per: usize) -> (DMatrix<f64>, Vec<i64>) {
        let n = centers.len() * per;
        let mut x = DMatrix::zeros(n, 2);
        let mut y = Vec::with_capacity(n);
        for (c, &(cx, cy)) in centers.iter().enumerate() {
            for j in 0..per {
                let i = c * per + j;
                x[(i, 0)] = cx + rng.random_range(-0.5..0.5);
                x[(i, 1)] = cy + rng.random_range(-0.5..0.5);
                y.push(c as i64 + 1);
            }
        }
        (x, y)
    }

    #[test]
    fn three_separable_clusters() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let (x, y) = clusters(&mut rng, &[(0.0, 4.0), (-4.0, -3.0), (4.0, -3.0)], 20);
        let hyper = FsvmHyperParams::new(10.0, 0.1);
        let m = one_vs_rest_train(&x, &y, |x, s| train_fsvm(x, s, &hyper).map(|r| r.0)).unwrap();
        assert_eq!(m.models.len(), 3);
        assert_eq!(accuracy(&m.predict_many(&x).unwrap(), &y), 1.0);
    }

    #[test]
    fn two_class_one_vs_rest_matches_binary() {
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        let (x, y) = clusters(&mut rng, &[(0.0, 0.0), (0.8, 0.3)], 25);
        let hyper = FsvmHyperParams::new(1.0, 0.1);
        let train = |x: &DMatrix<f64>, s: &[f64]| train_fsvm(x, s, &hyper).map(|r| r.0);
        let ovr = one_vs_rest_train(&x, &y, train).unwrap();
        let bin = binary_train(&x, &y, train).unwrap();
        assert_eq!(ovr.models.len(), 2);
        let a = accuracy(&ovr.predict_many(&x).unwrap(), &y);
        let b = accuracy(&bin.predict_many(&x).unwrap(), &y);
        assert!((a - b).abs() * 50.0 <= 1.0 + 1e-12, "{a} vs {b}");
        for r in x.row_iter() {
            let p = r.transpose();
            let s = ovr.scores(p.as_slice()).unwrap();
            let bs = bin.scores(p.as_slice()).unwrap()[0];
            // Both ovr models agree with each other and with the binary model.
            if s[1] > 0.0 && s[0] < 0.0 && bs > 0.0 {
                assert_eq!(ovr.predict(p.as_slice()).unwrap(), bin.predict(p.as_slice()).unwrap());
            }
        }
    }
}
