//! Sample-level statistics: classifier error with Bernoulli error bars,
//! per-site MSE, Gaussian Fréchet distance, bootstrap resampling.

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use rand::Rng;

use crate::error::{Error, Result};
use crate::seed::rng_for;

/// Mismatch rate and its Bernoulli one-sigma error `sqrt(p(1-p)/n)`.
pub fn classifier_error(true_labels: &[usize], pred_labels: &[usize]) -> Result<(f64, f64)> {
    if true_labels.is_empty() || true_labels.len() != pred_labels.len() {
        return Err(Error::InvalidInput(format!(
            "label slices must be nonempty and equal length, got {} and {}",
            true_labels.len(),
            pred_labels.len()
        )));
    }
    let n = true_labels.len() as f64;
    let wrong = true_labels
        .iter()
        .zip(pred_labels)
        .filter(|(a, b)| a != b)
        .count() as f64;
    let p = wrong / n;
    Ok((p, (p * (1.0 - p) / n).sqrt()))
}

/// Mean over sites of the squared difference.
pub fn mse_per_site(x: &DVector<f64>, x_hat: &DVector<f64>) -> Result<f64> {
    if x.is_empty() || x.len() != x_hat.len() {
        return Err(Error::InvalidInput(format!(
            "vectors must be nonempty and equal length, got {} and {}",
            x.len(),
            x_hat.len()
        )));
    }
    Ok((x - x_hat).norm_squared() / x.len() as f64)
}

fn fit_gaussian(samples: &[DVector<f64>], ridge: f64) -> (DVector<f64>, DMatrix<f64>) {
    let n = samples.len();
    let d = samples[0].len();
    let mut mean = DVector::zeros(d);
    for s in samples {
        mean += s;
    }
    mean /= n as f64;
    let mut cov = DMatrix::zeros(d, d);
    for s in samples {
        let c = s - &mean;
        cov.syger(1.0 / (n as f64 - 1.0), &c, &c, 1.0);
    }
    // syger fills the lower triangle; mirror it.
    for i in 0..d {
        for j in (i + 1)..d {
            cov[(i, j)] = cov[(j, i)];
        }
    }
    let mean_diag = cov.trace() / d as f64;
    let eps = ridge * mean_diag;
    for i in 0..d {
        cov[(i, i)] += eps;
    }
    (mean, cov)
}

fn spd_sqrt(m: &DMatrix<f64>) -> DMatrix<f64> {
    let sym = (m + m.transpose()) * 0.5;
    let eig = SymmetricEigen::new(sym);
    let d = eig.eigenvalues.map(|v| v.max(0.0).sqrt());
    &eig.eigenvectors * DMatrix::from_diagonal(&d) * eig.eigenvectors.transpose()
}

/// Squared Gaussian Fréchet distance between the moment fits of two sample
/// sets: `|mu_a - mu_b|^2 + Tr(S_a + S_b - 2 (S_a S_b)^{1/2})`. Covariances
/// are ridged by `ridge * mean(diag)` before the matrix square root.
pub fn frechet_gaussian(
    samples_a: &[DVector<f64>],
    samples_b: &[DVector<f64>],
    ridge: f64,
) -> Result<f64> {
    for (name, set) in [("a", samples_a), ("b", samples_b)] {
        if set.len() < 2 {
            return Err(Error::InvalidInput(format!(
                "sample set {name} needs at least 2 samples, got {}",
                set.len()
            )));
        }
    }
    let d = samples_a[0].len();
    if samples_a.iter().chain(samples_b).any(|s| s.len() != d) {
        return Err(Error::InvalidInput("samples must share one dimension".into()));
    }
    let (mu_a, cov_a) = fit_gaussian(samples_a, ridge);
    let (mu_b, cov_b) = fit_gaussian(samples_b, ridge);
    let sqrt_a = spd_sqrt(&cov_a);
    let inner = &sqrt_a * &cov_b * &sqrt_a;
    let eig = SymmetricEigen::new((&inner + inner.transpose()) * 0.5);
    let tr_sqrt: f64 = eig.eigenvalues.iter().map(|&v| v.max(0.0).sqrt()).sum();
    Ok((mu_a - mu_b).norm_squared() + cov_a.trace() + cov_b.trace() - 2.0 * tr_sqrt)
}

/// One-sigma error of `statistic` by bootstrap resampling with replacement.
/// Deterministic given `seed`; replicate streams are derived per index so
/// the result is independent of evaluation order.
pub fn bootstrap_ci<T, F>(samples: &[T], statistic: F, n_boot: usize, seed: u64) -> Result<f64>
where
    T: Clone + Sync,
    F: Fn(&[T]) -> f64 + Sync,
{
    if samples.is_empty() {
        return Err(Error::InvalidInput("bootstrap needs nonempty samples".into()));
    }
    if n_boot < 100 {
        return Err(Error::InvalidInput(format!("n_boot must be >= 100, got {n_boot}")));
    }
    let n = samples.len();
    use rayon::prelude::*;
    let reps: Vec<f64> = (0..n_boot)
        .into_par_iter()
        .map(|b| {
            let mut rng = rng_for(seed, "bootstrap", 0, b as u64);
            let resampled: Vec<T> = (0..n)
                .map(|_| samples[rng.random_range(0..n)].clone())
                .collect();
            statistic(&resampled)
        })
        .collect();
    let mean = reps.iter().sum::<f64>() / n_boot as f64;
    let var = reps.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n_boot as f64 - 1.0);
    Ok(var.sqrt())
}
