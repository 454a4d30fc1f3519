//! Deterministic synthetic dataset generators used by tests, benchmarks,
//! and the README walkthrough. All generators draw from a seeded ChaCha
//! stream and produce exact class counts (no binomial sampling).

use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::numerics::{cholesky, Matrix, Vector};
use rand::seq::SliceRandom;
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

fn feature_names(d: usize) -> Vec<String> {
    (0..d).map(|j| format!("f{j}")).collect()
}

fn gaussian_vector(rng: &mut ChaCha8Rng, d: usize) -> Vector {
    (0..d).map(|_| rng.sample::<f64, _>(StandardNormal)).collect()
}

/// Two Gaussian classes with a shared covariance. `prior_positive` fixes the
/// exact fraction of label-1 rows (rounded); rows are shuffled so the
/// classes interleave.
pub fn two_gaussians(
    n: usize,
    prior_positive: f64,
    mean_neg: &[f64],
    mean_pos: &[f64],
    cov: &Matrix,
    seed: u64,
) -> Result<Dataset> {
    if n < 2 {
        return Err(Error::InsufficientSamples("need at least 2 samples".into()));
    }
    if mean_neg.len() != mean_pos.len() || cov.rows() != mean_neg.len() {
        return Err(Error::DimensionMismatch("class means and covariance disagree".into()));
    }
    if !(0.0..=1.0).contains(&prior_positive) {
        return Err(Error::Domain(format!("prior must lie in [0, 1], got {prior_positive}")));
    }
    let d = mean_neg.len();
    let l = cholesky(cov)?;
    let n_pos = (prior_positive * n as f64).round() as usize;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);

    let mut rows: Vec<(Vector, usize)> = Vec::with_capacity(n);
    for i in 0..n {
        let (mean, label) = if i < n_pos { (mean_pos, 1) } else { (mean_neg, 0) };
        let z = gaussian_vector(&mut rng, d);
        let mut x = l.matvec(&z);
        for (xv, m) in x.iter_mut().zip(mean) {
            *xv += m;
        }
        rows.push((x, label));
    }
    rows.shuffle(&mut rng);
    let labels = rows.iter().map(|(_, l)| *l).collect();
    let features = Matrix::from_rows(rows.into_iter().map(|(x, _)| x).collect())?;
    Dataset::new(features, labels, feature_names(d), "label".into())
}

/// Isotropic 2-D Gaussian blobs at fixed centers, `per_cluster` points each.
pub fn clustered_2d(
    clusters: &[([f64; 2], usize)],
    per_cluster: usize,
    spread: f64,
    seed: u64,
) -> Result<Dataset> {
    if clusters.is_empty() || per_cluster == 0 {
        return Err(Error::EmptyInput("need at least one cluster and one point".into()));
    }
    if !(spread > 0.0) {
        return Err(Error::Domain(format!("spread must be positive, got {spread}")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut rows: Vec<(Vector, usize)> = Vec::new();
    for &(center, label) in clusters {
        if label > 1 {
            return Err(Error::Schema(format!("cluster label {label} is not binary")));
        }
        for _ in 0..per_cluster {
            let x = vec![
                center[0] + spread * rng.sample::<f64, _>(StandardNormal),
                center[1] + spread * rng.sample::<f64, _>(StandardNormal),
            ];
            rows.push((x, label));
        }
    }
    rows.shuffle(&mut rng);
    let labels = rows.iter().map(|(_, l)| *l).collect();
    let features = Matrix::from_rows(rows.into_iter().map(|(x, _)| x).collect())?;
    Dataset::new(features, labels, feature_names(2), "label".into())
}

/// Random correlated SPD covariance with eigenvalue spread controlled by
/// `condition`: eigenvalues interpolate geometrically from 1 down to
/// `1/condition`, rotated by a random orthogonal basis.
pub fn random_covariance(d: usize, condition: f64, seed: u64) -> Result<Matrix> {
    if d == 0 {
        return Err(Error::EmptyInput("zero-dimensional covariance".into()));
    }
    if !(condition >= 1.0) {
        return Err(Error::Domain(format!("condition must be >= 1, got {condition}")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    // Orthogonal basis via Gram-Schmidt on random Gaussian vectors.
    let mut basis: Vec<Vector> = Vec::with_capacity(d);
    while basis.len() < d {
        let mut v = gaussian_vector(&mut rng, d);
        for b in &basis {
            let c = crate::numerics::dot(&v, b);
            crate::numerics::axpy(&mut v, -c, b);
        }
        let norm = crate::numerics::l2_norm(&v);
        if norm > 1e-8 {
            v.iter_mut().for_each(|x| *x /= norm);
            basis.push(v);
        }
    }
    let mut cov = Matrix::zeros(d, d);
    for (k, b) in basis.iter().enumerate() {
        let lambda = if d == 1 {
            1.0
        } else {
            (1.0 / condition).powf(k as f64 / (d - 1) as f64)
        };
        for i in 0..d {
            for j in 0..d {
                cov.set(i, j, cov.get(i, j) + lambda * b[i] * b[j]);
            }
        }
    }
    // Exact symmetry for downstream factorization.
    let t = cov.transpose();
    Ok(cov.add(&t).scale(0.5))
}
