//! Distributional plausibility scores for perturbations.
//!
//! A perturbation `delta` is scored against a Gaussian model of the data:
//! `log gamma(delta) = C - (1/2) delta' Sigma^{-1} delta` with
//! `C = -(d/2) ln(2 pi) - (1/2) ln |Sigma|`, i.e. the log density of the
//! perturbation under `N(0, Sigma)`. Inverting the score gives back the
//! Mahalanobis distance exactly: `sqrt(2C - 2 log gamma) = MD(delta)`.
//! Thresholding the score at the value a distance-`epsilon` perturbation
//! attains is therefore the same test as `MD(delta) <= epsilon`.

use crate::error::{Error, Result};
use crate::numerics::{dot, spd_inverse, spd_log_det, Matrix, Vector};

/// Log density score of one perturbation.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GammaScore {
    pub log_gamma: f64,
    pub gamma: f64,
}

/// Verdict for one perturbation against a distance bound.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ConsistencyVerdict {
    pub log_gamma: f64,
    pub gamma: f64,
    pub mahalanobis: f64,
    /// Distance recovered from the score alone; equals `mahalanobis` up to
    /// rounding.
    pub implied_distance: f64,
    pub within_bound: bool,
}

/// Zero-mean Gaussian density used for scoring.
#[derive(Debug, Clone, PartialEq)]
pub struct GaussianModel {
    dim: usize,
    precision: Matrix,
    /// `C = -(d/2) ln(2 pi) - (1/2) ln |Sigma|`.
    log_norm_constant: f64,
}

impl GaussianModel {
    pub fn from_covariance(sigma: &Matrix) -> Result<Self> {
        let d = sigma.rows();
        let log_det = spd_log_det(sigma)?;
        let precision = spd_inverse(sigma)?;
        let log_norm_constant =
            -(d as f64 / 2.0) * (2.0 * std::f64::consts::PI).ln() - 0.5 * log_det;
        Ok(GaussianModel { dim: d, precision, log_norm_constant })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn log_norm_constant(&self) -> f64 {
        self.log_norm_constant
    }

    /// `delta' Sigma^{-1} delta`, clamped at zero against rounding.
    pub fn mahalanobis_squared(&self, delta: &[f64]) -> Result<f64> {
        if delta.len() != self.dim {
            return Err(Error::DimensionMismatch(format!(
                "perturbation has {} coordinates, model expects {}",
                delta.len(),
                self.dim
            )));
        }
        let pd = self.precision.matvec(delta);
        Ok(dot(delta, &pd).max(0.0))
    }

    pub fn mahalanobis(&self, delta: &[f64]) -> Result<f64> {
        Ok(self.mahalanobis_squared(delta)?.sqrt())
    }

    /// Log density of `delta` under `N(0, Sigma)`.
    pub fn score(&self, delta: &[f64]) -> Result<GammaScore> {
        let log_gamma = self.log_norm_constant - 0.5 * self.mahalanobis_squared(delta)?;
        Ok(GammaScore { log_gamma, gamma: log_gamma.exp() })
    }

    /// Distance implied by a score: `sqrt(max(0, 2C - 2 log gamma))`.
    pub fn implied_distance(&self, log_gamma: f64) -> f64 {
        (2.0 * self.log_norm_constant - 2.0 * log_gamma).max(0.0).sqrt()
    }

    /// Score `delta` and test the implied distance against `epsilon`. The
    /// comparison carries the same 1e-12 relative slack the ball
    /// projections guarantee, so a radially projected perturbation always
    /// passes the bound it was projected onto.
    pub fn bound_check(&self, delta: &[f64], epsilon: f64) -> Result<ConsistencyVerdict> {
        if !(epsilon >= 0.0) {
            return Err(Error::Domain(format!("bound must be nonnegative, got {epsilon}")));
        }
        let md = self.mahalanobis(delta)?;
        let score = self.score(delta)?;
        let implied = self.implied_distance(score.log_gamma);
        Ok(ConsistencyVerdict {
            log_gamma: score.log_gamma,
            gamma: score.gamma,
            mahalanobis: md,
            implied_distance: implied,
            within_bound: implied <= epsilon * (1.0 + 1e-12),
        })
    }
}

/// Summary of squared distances over a batch: mean plus a fixed-width
/// histogram over `[0, max]`.
#[derive(Debug, Clone, PartialEq)]
pub struct MdSquareStats {
    pub n: usize,
    pub mean: f64,
    pub max: f64,
    pub bin_width: f64,
    pub counts: Vec<usize>,
}

pub const HISTOGRAM_BINS: usize = 50;

pub fn md_square_stats(model: &GaussianModel, deltas: &[Vector]) -> Result<MdSquareStats> {
    if deltas.is_empty() {
        return Err(Error::EmptyInput("no perturbations to summarize".into()));
    }
    let mut values = Vec::with_capacity(deltas.len());
    for d in deltas {
        values.push(model.mahalanobis_squared(d)?);
    }
    let n = values.len();
    let mean = values.iter().sum::<f64>() / n as f64;
    let max = values.iter().fold(0.0f64, |a, &b| a.max(b));
    let mut counts = vec![0usize; HISTOGRAM_BINS];
    if max > 0.0 {
        let bin_width = max / HISTOGRAM_BINS as f64;
        for &v in &values {
            // The maximum itself falls in the last bin.
            let idx = ((v / bin_width) as usize).min(HISTOGRAM_BINS - 1);
            counts[idx] += 1;
        }
        Ok(MdSquareStats { n, mean, max, bin_width, counts })
    } else {
        counts[0] = n;
        Ok(MdSquareStats { n, mean, max, bin_width: 0.0, counts })
    }
}
