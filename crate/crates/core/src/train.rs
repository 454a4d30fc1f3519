//! Adversarial training, attack-budget calibration, and defense scoring.
//!
//! Adversarial training replaces a random subset of one class's samples
//! with PGD perturbations each epoch. The subset draws come from an RNG
//! stream separate from the shuffle/dropout stream, so sending the budget
//! to zero reproduces clean training: the perturbed inputs collapse onto
//! the originals and no draw in the training stream moves.

use crate::attack::{attack_dataset, pgd, AttackConfig, AttackMode, PerturbationBudget};
use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::net::{seeded_stream, sgd_loop, MlpModel, TrainConfig, TrainOutcome, STREAM_PERTURB};
use crate::numerics::l2_norm;
use crate::omega::PNorm;
use std::collections::HashSet;

/// How many calibration samples `match_budgets` attacks per probe.
pub const CALIBRATION_CAP: usize = 200;

#[derive(Debug, Clone)]
pub struct AdvTrainConfig {
    pub train: TrainConfig,
    pub budget: PerturbationBudget,
    pub attack: AttackConfig,
    /// Fraction of the target class perturbed each epoch.
    pub perturbed_fraction: f64,
    /// Label whose samples get perturbed (the class under attack).
    pub target_class: usize,
}

impl AdvTrainConfig {
    pub fn new(train: TrainConfig, budget: PerturbationBudget, attack: AttackConfig) -> Self {
        AdvTrainConfig { train, budget, attack, perturbed_fraction: 0.9, target_class: 1 }
    }
}

/// Mini-batch SGD where, per epoch, a freshly drawn subset of the target
/// class is replaced by PGD perturbations computed against the current
/// model. Subset draws are consumed from the perturbation RNG stream before
/// training starts, never from the shuffle/dropout stream.
pub fn adversarial_train(
    model: MlpModel,
    data: &Dataset,
    cfg: &AdvTrainConfig,
) -> Result<TrainOutcome> {
    if !(0.0..=1.0).contains(&cfg.perturbed_fraction) {
        return Err(Error::Domain(format!(
            "perturbed fraction must lie in [0, 1], got {}",
            cfg.perturbed_fraction
        )));
    }
    let targets: Vec<usize> =
        (0..data.n_samples()).filter(|&i| data.label(i) == cfg.target_class).collect();
    let count = ((cfg.perturbed_fraction * targets.len() as f64).round() as usize)
        .min(targets.len());

    let mut subset_rng = seeded_stream(cfg.train.seed, STREAM_PERTURB);
    let perturbed_per_epoch: Vec<HashSet<usize>> = (0..cfg.train.epochs)
        .map(|_| {
            rand::seq::index::sample(&mut subset_rng, targets.len(), count)
                .iter()
                .map(|k| targets[k])
                .collect()
        })
        .collect();

    sgd_loop(model, data, &cfg.train, |current, epoch, idx| {
        if !perturbed_per_epoch[epoch].contains(&idx) {
            return Ok(None);
        }
        let x = data.row(idx);
        let out = pgd(current, x, data.label(idx), &cfg.budget, &cfg.attack)?;
        Ok(Some(x.iter().zip(&out.delta).map(|(a, b)| a + b).collect()))
    })
}

/// Mean Euclidean perturbation size produced by a PGD attack over the first
/// `CALIBRATION_CAP` samples of `target_class`.
pub fn mean_attack_l2(
    model: &MlpModel,
    data: &Dataset,
    budget: &PerturbationBudget,
    cfg: &AttackConfig,
    target_class: usize,
) -> Result<f64> {
    let mut total = 0.0;
    let mut n = 0usize;
    for i in 0..data.n_samples() {
        if data.label(i) != target_class {
            continue;
        }
        let out = pgd(model, data.row(i), data.label(i), budget, cfg)?;
        total += l2_norm(&out.delta);
        n += 1;
        if n == CALIBRATION_CAP {
            break;
        }
    }
    if n == 0 {
        return Err(Error::NoPositiveSamples);
    }
    Ok(total / n as f64)
}

/// Find the budget radius under which a PGD attack in `mode` produces a
/// mean Euclidean perturbation of `target_mean_l2` (within 2%) on the
/// calibration samples. This puts attacks with different geometries on a
/// common footing: each is tuned until it moves inputs by the same average
/// Euclidean distance.
///
/// Bisection over the radius; the mean realized norm grows monotonically
/// with the budget for a saturating attack.
pub fn match_budgets(
    model: &MlpModel,
    data: &Dataset,
    mode: &AttackMode,
    p: PNorm,
    steps: usize,
    target_mean_l2: f64,
    target_class: usize,
) -> Result<f64> {
    if !(target_mean_l2 > 0.0 && target_mean_l2.is_finite()) {
        return Err(Error::Calibration(format!(
            "target mean norm must be positive, got {target_mean_l2}"
        )));
    }
    let tol = 0.02 * target_mean_l2;
    let probe = |eps: f64| -> Result<f64> {
        let budget = PerturbationBudget::new(eps, p)?;
        let cfg = AttackConfig {
            steps,
            step_size: None,
            init: crate::attack::AttackInit::Zero,
            mode: mode.clone(),
        };
        mean_attack_l2(model, data, &budget, &cfg, target_class)
    };

    // Establish an upper bracket by doubling.
    let mut hi = target_mean_l2;
    let mut mean_hi = probe(hi)?;
    let mut doublings = 0;
    while mean_hi < target_mean_l2 {
        doublings += 1;
        if doublings > 60 {
            return Err(Error::Calibration(format!(
                "attack norm saturates at {mean_hi:.6}, below the target {target_mean_l2}"
            )));
        }
        hi *= 2.0;
        mean_hi = probe(hi)?;
    }
    if (mean_hi - target_mean_l2).abs() <= tol {
        return Ok(hi);
    }

    // The mean at a vanishing radius is zero, so zero is a valid lower
    // bracket without evaluating it.
    let mut lo = 0.0;
    for _ in 0..60 {
        let mid = 0.5 * (lo + hi);
        let mean_mid = probe(mid)?;
        if (mean_mid - target_mean_l2).abs() <= tol {
            return Ok(mid);
        }
        if mean_mid < target_mean_l2 {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Err(Error::Calibration(format!(
        "bisection failed to match the target mean norm {target_mean_l2} within 2%"
    )))
}

/// Clean accuracy plus the fraction of attacked samples the model still
/// classifies correctly.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DefenseReport {
    pub clean_accuracy: f64,
    /// Fraction of attacked `target_class` samples whose adversarial
    /// prediction still equals the true label.
    pub defense_success_rate: f64,
    pub n_attacked: usize,
}

pub fn evaluate_defense(
    model: &MlpModel,
    data: &Dataset,
    budget: &PerturbationBudget,
    attack: &AttackConfig,
    target_class: usize,
) -> Result<DefenseReport> {
    let clean_accuracy = model.accuracy(data)?;
    let rows = attack_dataset(model, data, budget, attack, Some(target_class))?;
    if rows.is_empty() {
        return Err(Error::NoPositiveSamples);
    }
    let held = rows.iter().filter(|r| r.adversarial_prediction == r.true_label).count();
    Ok(DefenseReport {
        clean_accuracy,
        defense_success_rate: held as f64 / rows.len() as f64,
        n_attacked: rows.len(),
    })
}
