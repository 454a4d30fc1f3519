//! Randomized smoothing with correlated Gaussian noise.
//!
//! The smoothed classifier returns the majority vote of the base
//! classifier under noise `n ~ N(0, Sigma)`. For a binary base classifier,
//! if the top class holds with probability at least `p_a > 1/2`, the vote
//! cannot flip for any perturbation whose Mahalanobis length
//! `sqrt(delta' Sigma^{-1} delta)` stays below
//! `chi_quantile(d, p_a) - chi_quantile(d, 1/2)`.
//!
//! Prediction follows the usual two-phase recipe: a small batch picks the
//! candidate class, a fresh batch estimates its probability, and a
//! one-sided Clopper-Pearson bound at level `alpha` turns the count into a
//! certified `p_a` lower bound. A bound at or below one half yields an
//! abstention with radius zero.

use crate::error::{Error, Result};
use crate::net::MlpModel;
use crate::numerics::special::{chi_quantile, inv_reg_inc_beta, normal_cdf};
use crate::numerics::{cholesky, dot, Matrix, Vector};
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

/// Covariance of the smoothing noise.
#[derive(Debug, Clone, PartialEq)]
pub enum NoiseCovariance {
    Isotropic { sigma: f64, dim: usize },
    Full(Matrix),
}

impl NoiseCovariance {
    pub fn dim(&self) -> usize {
        match self {
            NoiseCovariance::Isotropic { dim, .. } => *dim,
            NoiseCovariance::Full(m) => m.rows(),
        }
    }

    /// The covariance as an explicit matrix.
    pub fn matrix(&self) -> Matrix {
        match self {
            NoiseCovariance::Isotropic { sigma, dim } => {
                Matrix::diagonal(&vec![sigma * sigma; *dim])
            }
            NoiseCovariance::Full(m) => m.clone(),
        }
    }
}

/// Draws `N(0, Sigma)` vectors as `L g` with `L` the Cholesky factor.
pub struct NoiseSampler {
    scale: SamplerScale,
    dim: usize,
}

enum SamplerScale {
    Iso(f64),
    Chol(Matrix),
}

impl NoiseSampler {
    pub fn new(noise: &NoiseCovariance) -> Result<Self> {
        match noise {
            NoiseCovariance::Isotropic { sigma, dim } => {
                if !(*sigma > 0.0 && sigma.is_finite()) {
                    return Err(Error::Domain(format!(
                        "noise scale must be positive, got {sigma}"
                    )));
                }
                if *dim == 0 {
                    return Err(Error::Domain("noise dimension must be positive".into()));
                }
                Ok(NoiseSampler { scale: SamplerScale::Iso(*sigma), dim: *dim })
            }
            NoiseCovariance::Full(m) => {
                let l = cholesky(m)?;
                Ok(NoiseSampler { scale: SamplerScale::Chol(l), dim: m.rows() })
            }
        }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn sample(&self, rng: &mut ChaCha8Rng) -> Vector {
        let g: Vector = (0..self.dim).map(|_| rng.sample::<f64, _>(StandardNormal)).collect();
        match &self.scale {
            SamplerScale::Iso(s) => g.iter().map(|v| s * v).collect(),
            SamplerScale::Chol(l) => l.matvec(&g),
        }
    }
}

#[derive(Debug, Clone)]
pub struct SmoothingConfig {
    pub noise: NoiseCovariance,
    /// Candidate-selection draws.
    pub n0: usize,
    /// Estimation draws.
    pub n: usize,
    /// One-sided confidence level of the p_a bound.
    pub alpha: f64,
    pub seed: u64,
}

impl SmoothingConfig {
    pub fn new(noise: NoiseCovariance, seed: u64) -> Self {
        SmoothingConfig { noise, n0: 100, n: 10_000, alpha: 0.001, seed }
    }

    fn validate(&self) -> Result<()> {
        if self.n0 == 0 || self.n == 0 {
            return Err(Error::Domain("sample counts must be at least 1".into()));
        }
        if !(self.alpha > 0.0 && self.alpha < 1.0) {
            return Err(Error::Domain(format!(
                "confidence level must lie in (0, 1), got {}",
                self.alpha
            )));
        }
        Ok(())
    }
}

/// Outcome of one smoothed prediction.
#[derive(Debug, Clone, PartialEq)]
pub struct SmoothingResult {
    /// `None` means the vote was too close to call at the requested
    /// confidence.
    pub prediction: Option<usize>,
    pub p_a_lower: f64,
    /// Certified Mahalanobis radius; zero when abstaining.
    pub certified_md_radius: f64,
    /// Phase-one candidate and its phase-two vote count.
    pub candidate: usize,
    pub votes: usize,
}

/// One-sided Clopper-Pearson lower confidence bound for a binomial
/// proportion: the `alpha` quantile of `Beta(k, n - k + 1)`, zero when no
/// successes were observed.
pub fn clopper_pearson_lower(successes: usize, trials: usize, alpha: f64) -> Result<f64> {
    if trials == 0 {
        return Err(Error::Domain("need at least one trial".into()));
    }
    if successes > trials {
        return Err(Error::Domain(format!("{successes} successes out of {trials} trials")));
    }
    if !(alpha > 0.0 && alpha < 1.0) {
        return Err(Error::Domain(format!("confidence level must lie in (0, 1), got {alpha}")));
    }
    if successes == 0 {
        return Ok(0.0);
    }
    inv_reg_inc_beta(successes as f64, (trials - successes + 1) as f64, alpha)
}

/// Certified Mahalanobis radius for a binary smoothed classifier:
/// `chi_quantile(dof, p_a) - chi_quantile(dof, 1/2)`. A `p_a` that rounds
/// to one is capped at `1 - 1e-12`, which stands in for the unbounded
/// radius of a perfectly confident vote.
pub fn certified_radius(p_a_lower: f64, dof: usize) -> Result<f64> {
    if !(p_a_lower > 0.5) {
        return Err(Error::Domain(format!(
            "certification needs a majority bound above 1/2, got {p_a_lower}"
        )));
    }
    if p_a_lower > 1.0 {
        return Err(Error::Domain(format!("probability bound above one: {p_a_lower}")));
    }
    let p = p_a_lower.min(1.0 - 1e-12);
    Ok(chi_quantile(dof, p)? - chi_quantile(dof, 0.5)?)
}

/// Two-phase smoothed prediction with an arbitrary binary base classifier.
/// The classifier must return labels in `{0, 1}`.
pub fn smoothed_predict_with(
    mut classify: impl FnMut(&[f64]) -> Result<usize>,
    x: &[f64],
    cfg: &SmoothingConfig,
) -> Result<SmoothingResult> {
    cfg.validate()?;
    if cfg.noise.dim() != x.len() {
        return Err(Error::DimensionMismatch(format!(
            "noise covariance is {}-dimensional, input has {} coordinates",
            cfg.noise.dim(),
            x.len()
        )));
    }
    let sampler = NoiseSampler::new(&cfg.noise)?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut vote = |rng: &mut ChaCha8Rng| -> Result<usize> {
        let noise = sampler.sample(rng);
        let point: Vector = x.iter().zip(&noise).map(|(a, b)| a + b).collect();
        let label = classify(&point)?;
        if label > 1 {
            return Err(Error::Domain(format!(
                "smoothing certification is binary; base classifier returned {label}"
            )));
        }
        Ok(label)
    };

    let mut ones = 0usize;
    for _ in 0..cfg.n0 {
        ones += vote(&mut rng)?;
    }
    // Ties resolve to class 0.
    let candidate = usize::from(2 * ones > cfg.n0);

    let mut votes = 0usize;
    for _ in 0..cfg.n {
        if vote(&mut rng)? == candidate {
            votes += 1;
        }
    }
    let p_a_lower = clopper_pearson_lower(votes, cfg.n, cfg.alpha)?;
    if p_a_lower <= 0.5 {
        return Ok(SmoothingResult {
            prediction: None,
            p_a_lower,
            certified_md_radius: 0.0,
            candidate,
            votes,
        });
    }
    let radius = certified_radius(p_a_lower, x.len())?;
    Ok(SmoothingResult {
        prediction: Some(candidate),
        p_a_lower,
        certified_md_radius: radius,
        candidate,
        votes,
    })
}

/// Smoothed prediction for a binary network model.
pub fn smoothed_predict(
    model: &MlpModel,
    x: &[f64],
    cfg: &SmoothingConfig,
) -> Result<SmoothingResult> {
    if model.num_classes() != 2 {
        return Err(Error::Domain(format!(
            "smoothing certification is binary; model has {} classes",
            model.num_classes()
        )));
    }
    if model.input_dim() != x.len() {
        return Err(Error::DimensionMismatch(format!(
            "input has {} coordinates, model expects {}",
            x.len(),
            model.input_dim()
        )));
    }
    smoothed_predict_with(|z| model.predict(z), x, cfg)
}

/// Threshold classifier `1 iff w . x + b > 0`, the analytically tractable
/// base case: its smoothed class probabilities are exact Gaussian tail
/// integrals, which makes it the reference oracle for the Monte-Carlo
/// machinery.
#[derive(Debug, Clone, PartialEq)]
pub struct LinearBinaryClassifier {
    pub weights: Vector,
    pub bias: f64,
}

impl LinearBinaryClassifier {
    pub fn margin(&self, x: &[f64]) -> f64 {
        dot(&self.weights, x) + self.bias
    }

    pub fn predict(&self, x: &[f64]) -> usize {
        usize::from(self.margin(x) > 0.0)
    }

    /// Standard deviation of the margin under `N(0, Sigma)` noise.
    pub fn noise_sd(&self, sigma: &Matrix) -> Result<f64> {
        if sigma.rows() != self.weights.len() || sigma.cols() != self.weights.len() {
            return Err(Error::DimensionMismatch(format!(
                "covariance is {}x{}, classifier has {} weights",
                sigma.rows(),
                sigma.cols(),
                self.weights.len()
            )));
        }
        let sw = sigma.matvec(&self.weights);
        let var = dot(&self.weights, &sw);
        if var <= 0.0 {
            return Err(Error::Domain("noise variance along the classifier is zero".into()));
        }
        Ok(var.sqrt())
    }

    /// Exact probability that the noisy point lands in class 1.
    pub fn positive_probability(&self, x: &[f64], sigma: &Matrix) -> Result<f64> {
        Ok(normal_cdf(self.margin(x) / self.noise_sd(sigma)?))
    }

    /// Exact `(class, p_a)` of the smoothed classifier at `x`.
    pub fn analytic_p_a(&self, x: &[f64], sigma: &Matrix) -> Result<(usize, f64)> {
        let p1 = self.positive_probability(x, sigma)?;
        if p1 >= 0.5 {
            Ok((1, p1))
        } else {
            Ok((0, 1.0 - p1))
        }
    }

    /// The margin-minimizing perturbation of Mahalanobis length `r` for the
    /// positive class: `-r Sigma w / sqrt(w' Sigma w)` (negated when the
    /// smoothed class is 0, where growing the margin is the attack).
    pub fn worst_case_shift(&self, x: &[f64], sigma: &Matrix, r: f64) -> Result<Vector> {
        let s = self.noise_sd(sigma)?;
        let sw = sigma.matvec(&self.weights);
        let sign = if self.positive_probability(x, sigma)? >= 0.5 { -1.0 } else { 1.0 };
        Ok(sw.iter().map(|v| sign * r * v / s).collect())
    }
}

/// Monte-Carlo witness of the smoothing guarantee: estimate
/// `P(f(x + delta + n) = a)` for the smoothed class `a` at `x` and report
/// whether the vote still favors `a`. The theorem promises `true` whenever
/// the Mahalanobis length of `delta` is below the certified radius.
pub fn verify_theorem_mc(
    clf: &LinearBinaryClassifier,
    x: &[f64],
    sigma: &Matrix,
    delta: &[f64],
    samples: usize,
    seed: u64,
) -> Result<bool> {
    if delta.len() != x.len() || x.len() != clf.weights.len() {
        return Err(Error::DimensionMismatch(
            "classifier, input, and perturbation dimensions disagree".into(),
        ));
    }
    let (a, _) = clf.analytic_p_a(x, sigma)?;
    let sampler = NoiseSampler::new(&NoiseCovariance::Full(sigma.clone()))?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let shifted: Vector = x.iter().zip(delta).map(|(a, b)| a + b).collect();
    let mut hits = 0usize;
    for _ in 0..samples {
        let noise = sampler.sample(&mut rng);
        let point: Vector = shifted.iter().zip(&noise).map(|(a, b)| a + b).collect();
        if clf.predict(&point) == a {
            hits += 1;
        }
    }
    Ok(2 * hits > samples)
}
