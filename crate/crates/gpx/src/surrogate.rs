//! Baseline local surrogates: ridge-regularized linear model and a CART tree.

use serde::{Deserialize, Serialize};

use crate::cart::DecisionTree;
use crate::linalg::solve;
use crate::scalar::Real;
use crate::{Error, Task};

/// Default depth cap for the tree surrogate; keeps it readable.
pub const TREE_SURROGATE_DEPTH: usize = 5;

/// A fitted linear model `y = intercept + w . x`.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct LinearSurrogate<F> {
    pub intercept: F,
    pub coefficients: Vec<F>,
}

impl<F: Real> LinearSurrogate<F> {
    pub fn predict(&self, row: &[F]) -> F {
        let dot: F = self
            .coefficients
            .iter()
            .zip(row)
            .map(|(w, x)| *w * *x)
            .sum();
        self.intercept + dot
    }
}

/// Ridge fit minimizing `||Xw - y||^2 + lambda ||w||^2` with an unpenalized
/// intercept. Features are standardized internally; the returned model is in
/// the original coordinates. `lambda = 0` on a rank-deficient design errors.
pub fn fit_linear_surrogate<F: Real>(
    samples: &[Vec<F>],
    targets: &[F],
    lambda: F,
) -> Result<LinearSurrogate<F>, Error> {
    if samples.is_empty() {
        return Err(Error::EmptyFitnessSet);
    }
    if samples.len() != targets.len() {
        return Err(Error::LengthMismatch {
            left: samples.len(),
            right: targets.len(),
        });
    }
    let m = samples.len();
    let n = samples[0].len();
    let mf = F::from_config(m as f64);

    let mut mean = vec![F::zero(); n];
    for row in samples {
        for (j, v) in row.iter().enumerate() {
            mean[j] = mean[j] + *v;
        }
    }
    for v in &mut mean {
        *v = *v / mf;
    }
    let mut scale = vec![F::zero(); n];
    for row in samples {
        for j in 0..n {
            let d = row[j] - mean[j];
            scale[j] = scale[j] + d * d;
        }
    }
    let floor = F::from_config(1e-12);
    for v in &mut scale {
        *v = (*v / mf).sqrt();
        if *v < floor {
            *v = F::one();
        }
    }
    let y_mean: F = targets.iter().copied().sum::<F>() / mf;

    // Normal equations on the standardized, centered system.
    let mut gram = vec![vec![F::zero(); n]; n];
    let mut rhs = vec![F::zero(); n];
    for (row, t) in samples.iter().zip(targets) {
        let z: Vec<F> = (0..n).map(|j| (row[j] - mean[j]) / scale[j]).collect();
        let yc = *t - y_mean;
        for j in 0..n {
            rhs[j] = rhs[j] + z[j] * yc;
            for k in j..n {
                gram[j][k] = gram[j][k] + z[j] * z[k];
            }
        }
    }
    for j in 0..n {
        for k in 0..j {
            gram[j][k] = gram[k][j];
        }
        gram[j][j] = gram[j][j] + lambda;
    }
    let w_std = solve(gram, rhs).map_err(|e| match e {
        Error::SingularSystem => Error::SingularNormalEquations,
        other => other,
    })?;

    let coefficients: Vec<F> = w_std
        .iter()
        .zip(&scale)
        .map(|(w, s)| *w / *s)
        .collect();
    let offset: F = coefficients
        .iter()
        .zip(&mean)
        .map(|(w, mu)| *w * *mu)
        .sum();
    Ok(LinearSurrogate {
        intercept: y_mean - offset,
        coefficients,
    })
}

/// CART surrogate over the noise set; depth defaults to
/// [`TREE_SURROGATE_DEPTH`].
pub fn fit_tree_surrogate<F: Real>(
    samples: &[Vec<F>],
    targets: &[F],
    task: Task,
    max_depth: usize,
) -> Result<DecisionTree<F>, Error> {
    if samples.is_empty() {
        return Err(Error::EmptyFitnessSet);
    }
    if samples.len() != targets.len() {
        return Err(Error::LengthMismatch {
            left: samples.len(),
            right: targets.len(),
        });
    }
    Ok(DecisionTree::fit(samples, targets, task, max_depth))
}
