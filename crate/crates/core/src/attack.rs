//! Gradient attacks under uniform and feature-weighted budgets.
//!
//! PGD ascends the loss with p-norm-normalized gradient steps and projects
//! back after every step. Projection is the radial map taken literally:
//! uniform balls shrink `delta` by `epsilon / max(epsilon, ||delta||_p)`,
//! weighted balls by `epsilon / ||W delta||_p` whenever the constraint is
//! violated. Radial scaling is exact for Euclidean balls and is the chosen
//! feasibility map (not the closest-point projection) for the other
//! geometries, so every iterate stays feasible.

use crate::error::{Error, Result};
use crate::net::MlpModel;
use crate::numerics::{axpy, l2_norm, Vector};
use crate::omega::{OmegaTransform, PNorm};
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

/// Perturbation budget `||.||_p <= epsilon` (with a transform in front for
/// the weighted modes).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PerturbationBudget {
    pub epsilon: f64,
    pub p: PNorm,
}

impl PerturbationBudget {
    /// A zero radius is allowed: attacks degenerate to no-ops and
    /// certification becomes exact evaluation.
    pub fn new(epsilon: f64, p: PNorm) -> Result<Self> {
        if !(epsilon >= 0.0 && epsilon.is_finite()) {
            return Err(Error::Domain(format!(
                "epsilon must be nonnegative and finite, got {epsilon}"
            )));
        }
        Ok(PerturbationBudget { epsilon, p })
    }
}

/// Initial iterate for PGD.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum AttackInit {
    Zero,
    /// Uniformly sampled inside the budget ball, then projected onto the
    /// mode's feasible set.
    RandomInBall { seed: u64 },
}

/// Which feasible set the iterates are projected onto.
#[derive(Debug, Clone, PartialEq)]
pub enum AttackMode {
    /// `||delta||_p <= epsilon`.
    Uniform,
    /// `||W delta||_p <= epsilon`.
    NonUniform(OmegaTransform),
    /// Weighted constraint followed by a uniform cap: both
    /// `||W delta||_p <= epsilon` and `||delta||_p <= epsilon_uniform` hold
    /// after projection.
    Combo { omega: OmegaTransform, epsilon_uniform: f64 },
}

#[derive(Debug, Clone, PartialEq)]
pub struct AttackConfig {
    pub steps: usize,
    /// `None` defaults to `epsilon / 4`.
    pub step_size: Option<f64>,
    pub init: AttackInit,
    pub mode: AttackMode,
}

impl AttackConfig {
    pub fn uniform(steps: usize) -> Self {
        AttackConfig { steps, step_size: None, init: AttackInit::Zero, mode: AttackMode::Uniform }
    }

    pub fn nonuniform(steps: usize, omega: OmegaTransform) -> Self {
        AttackConfig {
            steps,
            step_size: None,
            init: AttackInit::Zero,
            mode: AttackMode::NonUniform(omega),
        }
    }
}

/// Scale `v` onto the ball of radius `eps` measured by `norm`; the interior
/// is left untouched. Shared by every projection so the uniform and
/// identity-weighted paths are the same code.
fn radial_scale(mut v: Vector, norm: f64, eps: f64) -> Vector {
    if norm > eps {
        let s = eps / norm;
        for x in &mut v {
            *x *= s;
        }
    }
    v
}

/// Projection onto the uniform ball `||delta||_p <= epsilon`.
pub fn project_uniform(delta: &[f64], budget: &PerturbationBudget) -> Vector {
    let norm = budget.p.norm(delta);
    radial_scale(delta.to_vec(), norm, budget.epsilon)
}

/// Projection onto the weighted ball `||W delta||_p <= epsilon`. Mask
/// transforms first freeze the immutable coordinates, then the mutable
/// block shares the radial map.
pub fn project_nonuniform(
    delta: &[f64],
    omega: &OmegaTransform,
    budget: &PerturbationBudget,
) -> Result<Vector> {
    let mut v = delta.to_vec();
    omega.clamp_to_mutable(&mut v);
    let norm = omega.omega_norm(&v, budget.p)?;
    Ok(radial_scale(v, norm, budget.epsilon))
}

fn project_mode(delta: Vector, mode: &AttackMode, budget: &PerturbationBudget) -> Result<Vector> {
    match mode {
        AttackMode::Uniform => Ok(project_uniform(&delta, budget)),
        AttackMode::NonUniform(omega) => project_nonuniform(&delta, omega, budget),
        AttackMode::Combo { omega, epsilon_uniform } => {
            let after = project_nonuniform(&delta, omega, budget)?;
            let uniform = PerturbationBudget::new(*epsilon_uniform, budget.p)?;
            // Radial shrinking preserves the weighted constraint (both
            // functionals are positively homogeneous), so the sequential
            // composition lands in the intersection.
            Ok(project_uniform(&after, &uniform))
        }
    }
}

#[derive(Debug, Clone)]
pub struct AttackOutcome {
    pub delta: Vector,
    /// Cross-entropy at `x + delta` against the true label.
    pub adversarial_loss: f64,
}

/// Projected gradient ascent on the cross-entropy loss:
/// `delta <- Proj(delta + alpha * g / ||g||_p)` with `g` the input gradient
/// at `x + delta`. A vanishing gradient ends the loop early (the iterate is
/// already feasible).
pub fn pgd(
    model: &MlpModel,
    x: &[f64],
    y: usize,
    budget: &PerturbationBudget,
    cfg: &AttackConfig,
) -> Result<AttackOutcome> {
    if let AttackMode::NonUniform(om) | AttackMode::Combo { omega: om, .. } = &cfg.mode {
        if om.dim() != x.len() {
            return Err(Error::DimensionMismatch(format!(
                "transform dimension {} does not match input {}",
                om.dim(),
                x.len()
            )));
        }
    }
    let step = match cfg.step_size {
        Some(s) if s > 0.0 && s.is_finite() => s,
        Some(s) => return Err(Error::Domain(format!("step size must be positive, got {s}"))),
        None => budget.epsilon / 4.0,
    };

    let mut delta = match cfg.init {
        AttackInit::Zero => vec![0.0; x.len()],
        AttackInit::RandomInBall { seed } => {
            let sample = sample_in_ball(x.len(), budget, seed);
            project_mode(sample, &cfg.mode, budget)?
        }
    };

    let mut point = vec![0.0; x.len()];
    for _ in 0..cfg.steps {
        for (p, (xi, di)) in point.iter_mut().zip(x.iter().zip(&delta)) {
            *p = xi + di;
        }
        let g = model.input_gradient(&point, y)?;
        let gn = budget.p.norm(&g);
        if gn <= 0.0 || !gn.is_finite() {
            break;
        }
        axpy(&mut delta, step / gn, &g);
        delta = project_mode(delta, &cfg.mode, budget)?;
    }
    for (p, (xi, di)) in point.iter_mut().zip(x.iter().zip(&delta)) {
        *p = xi + di;
    }
    let adversarial_loss = model.loss(&point, y)?;
    Ok(AttackOutcome { delta, adversarial_loss })
}

fn sample_in_ball(dim: usize, budget: &PerturbationBudget, seed: u64) -> Vector {
    if budget.epsilon == 0.0 {
        return vec![0.0; dim];
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    match budget.p {
        PNorm::L2 => {
            // Direction from a Gaussian, radius from U^(1/d).
            let dir: Vector = (0..dim).map(|_| rng.sample::<f64, _>(StandardNormal)).collect();
            let norm = l2_norm(&dir).max(1e-300);
            let r = budget.epsilon * rng.gen::<f64>().powf(1.0 / dim as f64);
            dir.into_iter().map(|v| v / norm * r).collect()
        }
        PNorm::LInf => {
            (0..dim).map(|_| rng.gen_range(-budget.epsilon..budget.epsilon)).collect()
        }
    }
}

/// Single-step fast gradient attack at `x` under a uniform budget:
/// `epsilon * sign(g)` for the infinity norm, `epsilon * g / ||g||_2` for
/// the Euclidean norm. A zero gradient yields a zero perturbation.
pub fn fgsm(
    model: &MlpModel,
    x: &[f64],
    y: usize,
    budget: &PerturbationBudget,
) -> Result<AttackOutcome> {
    let g = model.input_gradient(x, y)?;
    let delta: Vector = match budget.p {
        PNorm::LInf => g
            .iter()
            .map(|&v| {
                if v > 0.0 {
                    budget.epsilon
                } else if v < 0.0 {
                    -budget.epsilon
                } else {
                    0.0
                }
            })
            .collect(),
        PNorm::L2 => {
            let norm = l2_norm(&g);
            if norm > 0.0 {
                g.iter().map(|&v| budget.epsilon * v / norm).collect()
            } else {
                vec![0.0; x.len()]
            }
        }
    };
    let point: Vector = x.iter().zip(&delta).map(|(a, b)| a + b).collect();
    let adversarial_loss = model.loss(&point, y)?;
    Ok(AttackOutcome { delta, adversarial_loss })
}

/// One attacked sample inside a batch report.
#[derive(Debug, Clone)]
pub struct SampleAttack {
    pub index: usize,
    pub true_label: usize,
    pub clean_prediction: usize,
    pub adversarial_prediction: usize,
    pub delta_l2: f64,
    /// `||W delta||_2` under the attack's transform (equals `delta_l2` for
    /// uniform attacks).
    pub omega_delta_l2: f64,
    pub attack_loss: f64,
    pub delta: Vector,
}

/// Attack every sample of a dataset with PGD, or only the samples carrying
/// a specific label when `class_filter` is set.
pub fn attack_dataset(
    model: &MlpModel,
    data: &crate::data::Dataset,
    budget: &PerturbationBudget,
    cfg: &AttackConfig,
    class_filter: Option<usize>,
) -> Result<Vec<SampleAttack>> {
    let mut rows = Vec::new();
    for i in 0..data.n_samples() {
        let y = data.label(i);
        if class_filter.is_some_and(|c| y != c) {
            continue;
        }
        let x = data.row(i);
        let clean = model.predict(x)?;
        let outcome = pgd(model, x, y, budget, cfg)?;
        let point: Vector = x.iter().zip(&outcome.delta).map(|(a, b)| a + b).collect();
        let adv = model.predict(&point)?;
        let omega_delta_l2 = match &cfg.mode {
            AttackMode::Uniform => l2_norm(&outcome.delta),
            AttackMode::NonUniform(om) | AttackMode::Combo { omega: om, .. } => {
                om.omega_norm(&outcome.delta, PNorm::L2)?
            }
        };
        rows.push(SampleAttack {
            index: i,
            true_label: y,
            clean_prediction: clean,
            adversarial_prediction: adv,
            delta_l2: l2_norm(&outcome.delta),
            omega_delta_l2,
            attack_loss: outcome.adversarial_loss,
            delta: outcome.delta,
        });
    }
    Ok(rows)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::synth;
    use crate::numerics::Matrix;
    use proptest::prelude::*;
    use rand::Rng;

    #[test]
    fn uniform_projection_of_known_vector() {
        let budget = PerturbationBudget::new(1.0, PNorm::L2).unwrap();
        let p = project_uniform(&[3.0, 4.0], &budget);
        assert!((p[0] - 0.6).abs() < 1e-12);
        assert!((p[1] - 0.8).abs() < 1e-12);
        // Interior points pass through bitwise.
        let inside = [0.1, -0.2];
        assert_eq!(project_uniform(&inside, &budget), inside.to_vec());
    }

    #[test]
    fn mask_projection_freezes_immutable_coordinates() {
        let om = OmegaTransform::mask(vec![false, true]).unwrap();
        let budget = PerturbationBudget::new(2.0, PNorm::L2).unwrap();
        let p = project_nonuniform(&[5.0, 3.0], &om, &budget).unwrap();
        assert_eq!(p[0], 0.0);
        assert!((p[1] - 2.0).abs() < 1e-12);
    }

    #[test]
    fn identity_transform_projection_is_bitwise_uniform() {
        let om = OmegaTransform::identity(3);
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        for p in [PNorm::L2, PNorm::LInf] {
            let budget = PerturbationBudget::new(0.7, p).unwrap();
            for _ in 0..500 {
                let v: Vector = (0..3).map(|_| rng.gen_range(-2.0..2.0)).collect();
                let a = project_uniform(&v, &budget);
                let b = project_nonuniform(&v, &om, &budget).unwrap();
                assert_eq!(a, b, "norm {p}");
            }
        }
    }

    #[test]
    fn pgd_linear_model_radial_fixed_point() {
        // For a linear two-class net the loss gradient direction is the fixed
        // vector w, and radial scaling preserves direction. The PGD fixed
        // point is therefore w scaled onto the weighted boundary:
        // epsilon * w / ||W w||_2. (For identity W this coincides with the
        // maximizer of w . delta over the ball; for anisotropic W it is the
        // feasibility map's fixed point, not the ellipsoid optimum.)
        let w = [1.0, 2.0];
        let weights = Matrix::from_rows(vec![vec![0.0, 0.0], vec![w[0], w[1]]]).unwrap();
        let model = MlpModel::from_parameters(
            vec![2, 2],
            vec![weights],
            vec![vec![0.0, 0.0]],
            0.0,
        )
        .unwrap();
        let om = OmegaTransform::diagonal(vec![2.0, 1.0]).unwrap();
        let budget = PerturbationBudget::new(1.0, PNorm::L2).unwrap();
        let cfg = AttackConfig {
            steps: 300,
            step_size: Some(0.05),
            init: AttackInit::Zero,
            mode: AttackMode::NonUniform(om.clone()),
        };
        // Attack label 0 so the loss increases along +w.
        let out = pgd(&model, &[0.0, 0.0], 0, &budget, &cfg).unwrap();
        let scaled = [2.0 * w[0], 1.0 * w[1]];
        let expect: Vec<f64> = w.iter().map(|wi| wi / l2_norm(&scaled)).collect();
        for i in 0..2 {
            assert!(
                (out.delta[i] - expect[i]).abs() < 1e-3,
                "coordinate {i}: got {}, expected {}",
                out.delta[i],
                expect[i]
            );
        }
        let norm = om.omega_norm(&out.delta, PNorm::L2).unwrap();
        assert!(norm <= 1.0 + 1e-9, "feasible at the boundary, got {norm}");
        assert!(norm > 0.999, "the fixed point saturates the budget");
    }

    #[test]
    fn pgd_zero_gradient_terminates() {
        // A network with zero first-layer weights has identically zero
        // input gradients; PGD must return the (feasible) zero iterate.
        let model = MlpModel::from_parameters(
            vec![2, 2],
            vec![Matrix::zeros(2, 2)],
            vec![vec![0.0, 0.0]],
            0.0,
        )
        .unwrap();
        let budget = PerturbationBudget::new(0.5, PNorm::L2).unwrap();
        let out = pgd(&model, &[1.0, -1.0], 0, &budget, &AttackConfig::uniform(50)).unwrap();
        assert_eq!(out.delta, vec![0.0, 0.0]);
        assert!((out.adversarial_loss - 2.0_f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn fgsm_directions() {
        let weights = Matrix::from_rows(vec![vec![0.0, 0.0], vec![1.0, -2.0]]).unwrap();
        let model = MlpModel::from_parameters(
            vec![2, 2],
            vec![weights],
            vec![vec![0.0, 0.0]],
            0.0,
        )
        .unwrap();
        // Loss for label 0 increases along +(1, -2).
        let binf = PerturbationBudget::new(0.3, PNorm::LInf).unwrap();
        let out = fgsm(&model, &[0.0, 0.0], 0, &binf).unwrap();
        assert_eq!(out.delta, vec![0.3, -0.3]);
        let b2 = PerturbationBudget::new(1.0, PNorm::L2).unwrap();
        let out2 = fgsm(&model, &[0.0, 0.0], 0, &b2).unwrap();
        let n = 5.0_f64.sqrt();
        assert!((out2.delta[0] - 1.0 / n).abs() < 1e-12);
        assert!((out2.delta[1] + 2.0 / n).abs() < 1e-12);
    }

    #[test]
    fn random_init_is_feasible_and_seeded() {
        let om = OmegaTransform::from_importance(&[0.9, 0.1, 0.5]).unwrap();
        let budget = PerturbationBudget::new(0.8, PNorm::L2).unwrap();
        let data = synth::two_gaussians(
            30,
            0.5,
            &[-1.0, 0.0, 0.0],
            &[1.0, 0.0, 0.0],
            &Matrix::identity(3),
            3,
        )
        .unwrap();
        let model = crate::net::train_clean(
            crate::net::MlpModel::new(&[3, 6, 2], 0.0, 1).unwrap(),
            &data,
            &crate::net::TrainConfig { epochs: 10, dropout_enabled: false, ..Default::default() },
        )
        .unwrap()
        .model;
        let mk = |seed| AttackConfig {
            steps: 5,
            step_size: None,
            init: AttackInit::RandomInBall { seed },
            mode: AttackMode::NonUniform(om.clone()),
        };
        let a = pgd(&model, data.row(0), data.label(0), &budget, &mk(4)).unwrap();
        let b = pgd(&model, data.row(0), data.label(0), &budget, &mk(4)).unwrap();
        let c = pgd(&model, data.row(0), data.label(0), &budget, &mk(5)).unwrap();
        assert_eq!(a.delta, b.delta);
        assert_ne!(a.delta, c.delta);
        assert!(om.omega_norm(&a.delta, PNorm::L2).unwrap() <= 0.8 + 1e-9);
    }

    proptest! {
        /// Projection output is always feasible and idempotent up to
        /// rounding: rescaling can leave the norm one ulp past the radius,
        /// so a second pass may rescale again by 1 - 1ulp.
        #[test]
        fn projection_feasibility_and_idempotence(
            v in proptest::collection::vec(-5.0..5.0f64, 4),
            eps in 0.1..3.0f64,
            w in proptest::collection::vec(0.2..3.0f64, 4),
        ) {
            let close = |a: &[f64], b: &[f64]| {
                a.iter().zip(b).all(|(x, y)| (x - y).abs() <= 1e-14 * x.abs().max(1.0))
            };
            for p in [PNorm::L2, PNorm::LInf] {
                let budget = PerturbationBudget::new(eps, p).unwrap();
                let proj = project_uniform(&v, &budget);
                prop_assert!(p.norm(&proj) <= eps * (1.0 + 1e-12));
                let again = project_uniform(&proj, &budget);
                prop_assert!(close(&proj, &again), "{proj:?} vs {again:?}");

                let om = OmegaTransform::diagonal(w.clone()).unwrap();
                let proj_w = project_nonuniform(&v, &om, &budget).unwrap();
                prop_assert!(om.omega_norm(&proj_w, p).unwrap() <= eps * (1.0 + 1e-12));
                let again_w = project_nonuniform(&proj_w, &om, &budget).unwrap();
                prop_assert!(close(&proj_w, &again_w), "{proj_w:?} vs {again_w:?}");
            }
        }

        /// Combo projection lands in the intersection of both constraints.
        #[test]
        fn combo_satisfies_both_budgets(
            v in proptest::collection::vec(-5.0..5.0f64, 3),
            eps_w in 0.2..2.0f64,
            eps_u in 0.2..2.0f64,
            w in proptest::collection::vec(0.2..3.0f64, 3),
        ) {
            let om = OmegaTransform::diagonal(w).unwrap();
            let budget = PerturbationBudget::new(eps_w, PNorm::L2).unwrap();
            let mode = AttackMode::Combo { omega: om.clone(), epsilon_uniform: eps_u };
            let out = project_mode(v, &mode, &budget).unwrap();
            prop_assert!(om.omega_norm(&out, PNorm::L2).unwrap() <= eps_w * (1.0 + 1e-12));
            prop_assert!(l2_norm(&out) <= eps_u * (1.0 + 1e-12));
        }
    }
}
