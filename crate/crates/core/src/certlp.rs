//! Robustness certification via a dual linear-programming bound.
//!
//! The adversary's problem (minimize a logit difference over the weighted
//! ball `||W delta||_p <= epsilon` pushed through the network) is relaxed
//! by replacing each ReLU with its convex envelope over known
//! pre-activation bounds `[l, u]`. Any feasible point of the dual of that
//! LP is a certified lower bound on the true minimum. With the leaky-ReLU
//! slope fixed at `u/(u-l)` the dual collapses to a single deterministic
//! backward pass, and the input constraint enters only through the support
//! function of the ball: a `epsilon * ||W^{-1} v||_q` term with `q` dual to
//! `p`.
//!
//! Pre-activation bounds come from the same dual bound applied to each
//! coordinate, layer by layer: the running matrices are extended with
//! `D_i W_i^T` per layer, spanning neurons contribute correction rows, and
//! every layer's bounds feed the next layer's ReLU envelopes.
//!
//! A sample is certified when the bound is positive against every
//! competing class: no perturbation in the ball can flip the prediction.

use crate::attack::PerturbationBudget;
use crate::error::{Error, Result};
use crate::net::MlpModel;
use crate::numerics::{dot, Matrix, Vector};
use crate::omega::OmegaTransform;

/// How a neuron's pre-activation interval sits relative to zero.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ActivationTag {
    /// `u <= 0`: the ReLU is identically zero.
    Neg,
    /// `l >= 0`: the ReLU is the identity.
    Pos,
    /// `l < 0 < u`: the interval spans zero and the envelope is slack.
    Span,
}

fn tag_interval(l: f64, u: f64) -> ActivationTag {
    // Degenerate intervals (u == l) are exact, so they are never Span;
    // l >= 0 is checked first so a point interval at zero counts as Pos.
    if l >= 0.0 {
        ActivationTag::Pos
    } else if u <= 0.0 {
        ActivationTag::Neg
    } else {
        ActivationTag::Span
    }
}

/// Bounds and tags for one pre-activation layer.
#[derive(Debug, Clone, PartialEq)]
pub struct LayerInterval {
    pub lower: Vector,
    pub upper: Vector,
    pub tags: Vec<ActivationTag>,
}

/// Pre-activation bounds for every weight layer's output, in forward
/// order. Entry `t` bounds the outputs of `weights[t]`; the last entry
/// bounds the logits.
#[derive(Debug, Clone, PartialEq)]
pub struct LayerBounds {
    pub layers: Vec<LayerInterval>,
}

/// Envelope slope `u/(u-l)` for spanning neurons, the exact 0/1 passthrough
/// otherwise.
fn slope(tag: ActivationTag, l: f64, u: f64) -> f64 {
    match tag {
        ActivationTag::Neg => 0.0,
        ActivationTag::Pos => 1.0,
        ActivationTag::Span => u / (u - l),
    }
}

fn check_certifiable(model: &MlpModel, x: &[f64], omega: &OmegaTransform) -> Result<()> {
    if model.dropout_rate() > 0.0 {
        return Err(Error::Domain(
            "certification requires a dropout-free model; call without_dropout() first".into(),
        ));
    }
    if x.len() != model.input_dim() {
        return Err(Error::DimensionMismatch(format!(
            "input has {} coordinates, model expects {}",
            x.len(),
            model.input_dim()
        )));
    }
    if omega.dim() != model.input_dim() {
        return Err(Error::DimensionMismatch(format!(
            "transform dimension {} does not match model input {}",
            omega.dim(),
            model.input_dim()
        )));
    }
    Ok(())
}

/// Correction rows carried for one earlier layer's spanning neurons.
struct SpanBlock {
    /// One row per spanning neuron, currently `n_span x width`.
    rows: Matrix,
    /// The (negative) lower bounds of those neurons.
    l_values: Vector,
}

/// Layer-by-layer pre-activation bounds under the weighted input ball.
///
/// The first layer is affine in the input, so its bounds follow from the
/// support function directly. Each subsequent layer re-applies the dual
/// bound with the running matrices extended by `D W^T`, where `D` carries
/// the envelope slopes of the layer just bounded; spanning neurons add
/// correction rows that tighten nothing but keep the bound valid.
pub fn activation_bounds(
    model: &MlpModel,
    x: &[f64],
    omega: &OmegaTransform,
    budget: &PerturbationBudget,
) -> Result<LayerBounds> {
    check_certifiable(model, x, omega)?;
    let weights = model.weights();
    let biases = model.biases();
    let n_layers = weights.len();

    // nu_hat_1 starts as W_1^T (input dim x first width).
    let mut nu_hat_1 = weights[0].transpose();
    let mut zeta_sum = biases[0].clone();
    let mut span_blocks: Vec<SpanBlock> = Vec::new();
    let mut layers: Vec<LayerInterval> = Vec::with_capacity(n_layers);

    let first = bound_layer(x, &nu_hat_1, &zeta_sum, &span_blocks, omega, budget)?;
    layers.push(first);

    for t in 1..n_layers {
        let prev = &layers[t - 1];
        let width_in = weights[t].cols();
        let width_out = weights[t].rows();
        // M = D_t W_t^T, where row r is the envelope slope of neuron r
        // times the r-th column of W_t.
        let m = Matrix::from_fn(width_in, width_out, |r, c| {
            slope(prev.tags[r], prev.lower[r], prev.upper[r]) * weights[t].get(c, r)
        });

        nu_hat_1 = nu_hat_1.matmul(&m);
        zeta_sum = m.tr_matvec(&zeta_sum);
        for block in &mut span_blocks {
            block.rows = block.rows.matmul(&m);
        }
        // Spanning neurons of the layer just consumed contribute fresh
        // correction rows; these are exactly the matching rows of M.
        let span_idx: Vec<usize> = (0..width_in)
            .filter(|&r| prev.tags[r] == ActivationTag::Span)
            .collect();
        if !span_idx.is_empty() {
            let rows = Matrix::from_fn(span_idx.len(), width_out, |s, c| m.get(span_idx[s], c));
            let l_values: Vector = span_idx.iter().map(|&r| prev.lower[r]).collect();
            span_blocks.push(SpanBlock { rows, l_values });
        }
        crate::numerics::axpy(&mut zeta_sum, 1.0, &biases[t]);

        let li = bound_layer(x, &nu_hat_1, &zeta_sum, &span_blocks, omega, budget)?;
        layers.push(li);
    }
    Ok(LayerBounds { layers })
}

fn bound_layer(
    x: &[f64],
    nu_hat_1: &Matrix,
    zeta_sum: &[f64],
    span_blocks: &[SpanBlock],
    omega: &OmegaTransform,
    budget: &PerturbationBudget,
) -> Result<LayerInterval> {
    let width = nu_hat_1.cols();
    let mut lower = Vector::with_capacity(width);
    let mut upper = Vector::with_capacity(width);
    let mut tags = Vec::with_capacity(width);
    for c in 0..width {
        let col = nu_hat_1.col(c);
        let base = dot(x, &col) + zeta_sum[c];
        let radius = budget.epsilon * omega.inverse_norm(&col, budget.p)?;
        let mut l_corr = 0.0;
        let mut u_corr = 0.0;
        for block in span_blocks {
            for (s, &lv) in block.l_values.iter().enumerate() {
                let v = block.rows.get(s, c);
                l_corr += lv * (-v).max(0.0);
                u_corr += lv * v.max(0.0);
            }
        }
        let l = base - radius + l_corr;
        let u = base + radius - u_corr;
        lower.push(l);
        upper.push(u);
        tags.push(tag_interval(l, u));
    }
    Ok(LayerInterval { lower, upper, tags })
}

/// Certified lower bound on `c . z_final(x + delta)` over the feasible
/// ball, via one deterministic backward pass of the dual network.
pub fn dual_objective(
    model: &MlpModel,
    x: &[f64],
    bounds: &LayerBounds,
    omega: &OmegaTransform,
    budget: &PerturbationBudget,
    c: &[f64],
) -> Result<f64> {
    check_certifiable(model, x, omega)?;
    if c.len() != model.num_classes() {
        return Err(Error::DimensionMismatch(format!(
            "objective vector has {} entries, model has {} classes",
            c.len(),
            model.num_classes()
        )));
    }
    let weights = model.weights();
    let biases = model.biases();
    let n_layers = weights.len();
    if bounds.layers.len() != n_layers
        || bounds.layers.iter().zip(weights).any(|(b, w)| b.lower.len() != w.rows())
    {
        return Err(Error::DimensionMismatch(
            "activation bounds do not match the model architecture".into(),
        ));
    }

    let mut nu: Vector = c.iter().map(|v| -v).collect();
    let mut objective = 0.0;
    let mut nu_hat_1: Vector = Vec::new();
    for t in (0..n_layers).rev() {
        objective -= dot(&nu, &biases[t]);
        let nu_hat = weights[t].tr_matvec(&nu);
        if t == 0 {
            nu_hat_1 = nu_hat;
        } else {
            let interval = &bounds.layers[t - 1];
            for (j, tag) in interval.tags.iter().enumerate() {
                if *tag == ActivationTag::Span {
                    objective += interval.lower[j] * nu_hat[j].max(0.0);
                }
            }
            nu = nu_hat
                .iter()
                .enumerate()
                .map(|(j, &v)| slope(interval.tags[j], interval.lower[j], interval.upper[j]) * v)
                .collect();
        }
    }
    objective -= dot(&nu_hat_1, x);
    objective -= budget.epsilon * omega.inverse_norm(&nu_hat_1, budget.p)?;
    Ok(objective)
}

/// Certification verdict for one sample.
#[derive(Debug, Clone, PartialEq)]
pub struct CertificationReport {
    pub certified: bool,
    /// `(target class, dual lower bound on the logit gap)` for every class
    /// other than the true one.
    pub objectives: Vec<(usize, f64)>,
    /// Smallest bound across targets; positive iff certified.
    pub margin: f64,
    pub epsilon: f64,
    pub omega_kind: String,
}

/// Lower-bound the logit gap against every competing class; the sample is
/// certified when all gaps stay positive, meaning no perturbation in the
/// ball changes the prediction away from `true_class`.
pub fn certify(
    model: &MlpModel,
    x: &[f64],
    true_class: usize,
    omega: &OmegaTransform,
    budget: &PerturbationBudget,
) -> Result<CertificationReport> {
    if true_class >= model.num_classes() {
        return Err(Error::DimensionMismatch(format!(
            "class {true_class} out of range for {} classes",
            model.num_classes()
        )));
    }
    let bounds = activation_bounds(model, x, omega, budget)?;
    let mut objectives = Vec::with_capacity(model.num_classes() - 1);
    let mut margin = f64::INFINITY;
    for target in 0..model.num_classes() {
        if target == true_class {
            continue;
        }
        let mut c = vec![0.0; model.num_classes()];
        c[true_class] = 1.0;
        c[target] = -1.0;
        let obj = dual_objective(model, x, &bounds, omega, budget, &c)?;
        margin = margin.min(obj);
        objectives.push((target, obj));
    }
    Ok(CertificationReport {
        certified: margin > 0.0,
        objectives,
        margin,
        epsilon: budget.epsilon,
        omega_kind: omega.kind_name().to_string(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::attack::{pgd, AttackConfig, AttackInit, AttackMode};
    use crate::omega::PNorm;
    use rand::Rng;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn random_net(rng: &mut ChaCha8Rng, dims: &[usize]) -> MlpModel {
        let weights: Vec<Matrix> = dims
            .windows(2)
            .map(|w| Matrix::from_fn(w[1], w[0], |_, _| rng.gen_range(-1.5..1.5)))
            .collect();
        let biases: Vec<Vector> =
            dims.windows(2).map(|w| (0..w[1]).map(|_| rng.gen_range(-0.5..0.5)).collect()).collect();
        MlpModel::from_parameters(dims.to_vec(), weights, biases, 0.0).unwrap()
    }

    fn forward_preactivations(model: &MlpModel, x: &[f64]) -> Vec<Vector> {
        let mut acts = x.to_vec();
        let mut out = Vec::new();
        for (w, b) in model.weights().iter().zip(model.biases()) {
            let mut z = w.matvec(&acts);
            crate::numerics::axpy(&mut z, 1.0, b);
            out.push(z.clone());
            acts = z.iter().map(|&v| v.max(0.0)).collect();
        }
        out
    }

    #[test]
    fn first_layer_bounds_identity_net() {
        // W = I, b = 0, x = 0: the pre-activations are the perturbation
        // itself, so the bounds are +-epsilon under the identity transform
        // and +-epsilon/w_j under a diagonal one.
        let model = MlpModel::from_parameters(
            vec![2, 2],
            vec![Matrix::identity(2)],
            vec![vec![0.0, 0.0]],
            0.0,
        )
        .unwrap();
        let budget = PerturbationBudget::new(1.0, PNorm::L2).unwrap();
        let id = OmegaTransform::identity(2);
        let b = activation_bounds(&model, &[0.0, 0.0], &id, &budget).unwrap();
        assert_eq!(b.layers.len(), 1);
        for j in 0..2 {
            assert!((b.layers[0].lower[j] + 1.0).abs() < 1e-12);
            assert!((b.layers[0].upper[j] - 1.0).abs() < 1e-12);
        }

        let om = OmegaTransform::diagonal(vec![2.0, 1.0]).unwrap();
        let b = activation_bounds(&model, &[0.0, 0.0], &om, &budget).unwrap();
        assert!((b.layers[0].lower[0] + 0.5).abs() < 1e-12);
        assert!((b.layers[0].upper[0] - 0.5).abs() < 1e-12);
        assert!((b.layers[0].lower[1] + 1.0).abs() < 1e-12);
        assert!((b.layers[0].upper[1] - 1.0).abs() < 1e-12);
    }

    #[test]
    fn linear_net_dual_matches_closed_form() {
        // Single weight layer: the relaxation is empty and the dual equals
        // the exact support-function minimum c'(Wx + b) - eps ||O^{-1}W'c||_q.
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        for trial in 0..30 {
            let d = 2 + trial % 3;
            let model = random_net(&mut rng, &[d, 2]);
            let x: Vector = (0..d).map(|_| rng.gen_range(-1.0..1.0)).collect();
            let omega = if trial % 2 == 0 {
                OmegaTransform::identity(d)
            } else {
                OmegaTransform::diagonal((0..d).map(|_| rng.gen_range(0.3..2.0)).collect())
                    .unwrap()
            };
            for p in [PNorm::L2, PNorm::LInf] {
                let budget = PerturbationBudget::new(0.4, p).unwrap();
                let c = vec![1.0, -1.0];
                let bounds = activation_bounds(&model, &x, &omega, &budget).unwrap();
                let dual = dual_objective(&model, &x, &bounds, &omega, &budget, &c).unwrap();
                let wc = model.weights()[0].tr_matvec(&c);
                let exact = dot(&c, &model.weights()[0].matvec(&x))
                    + dot(&c, model.biases()[0].as_slice())
                    - 0.4 * omega.inverse_norm(&wc, p).unwrap();
                assert!(
                    (dual - exact).abs() < 1e-9,
                    "trial {trial} p {p}: dual {dual} vs exact {exact}"
                );
            }
        }
    }

    #[test]
    fn zero_radius_collapses_to_exact_evaluation() {
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        for trial in 0..20 {
            let model = random_net(&mut rng, &[3, 5, 4, 2]);
            let x: Vector = (0..3).map(|_| rng.gen_range(-1.0..1.0)).collect();
            let omega = OmegaTransform::identity(3);
            let budget = PerturbationBudget::new(0.0, PNorm::L2).unwrap();
            let bounds = activation_bounds(&model, &x, &omega, &budget).unwrap();
            let pre = forward_preactivations(&model, &x);
            for (bl, z) in bounds.layers.iter().zip(&pre) {
                for j in 0..z.len() {
                    assert!((bl.lower[j] - z[j]).abs() < 1e-9, "trial {trial}");
                    assert!((bl.upper[j] - z[j]).abs() < 1e-9);
                    assert_ne!(bl.tags[j], ActivationTag::Span, "exact intervals never span");
                }
            }
            let logits = model.logits(&x).unwrap();
            let report = certify(&model, &x, 0, &omega, &budget).unwrap();
            let gap = logits[0] - logits[1];
            assert!((report.margin - gap).abs() < 1e-9);
            assert_eq!(report.certified, gap > 0.0);
        }
    }

    #[test]
    fn bounds_contain_reachable_preactivations() {
        let mut rng = ChaCha8Rng::seed_from_u64(33);
        for trial in 0..15 {
            let d = 2 + trial % 3;
            let model = random_net(&mut rng, &[d, 6, 5, 2]);
            let x: Vector = (0..d).map(|_| rng.gen_range(-1.0..1.0)).collect();
            let omega =
                OmegaTransform::diagonal((0..d).map(|_| rng.gen_range(0.4..2.5)).collect())
                    .unwrap();
            let budget = PerturbationBudget::new(0.5, PNorm::L2).unwrap();
            let bounds = activation_bounds(&model, &x, &omega, &budget).unwrap();
            for _ in 0..300 {
                // Random feasible perturbation: random direction scaled to
                // a random fraction of the boundary.
                let raw: Vector = (0..d).map(|_| rng.gen_range(-1.0..1.0)).collect();
                let norm = omega.omega_norm(&raw, PNorm::L2).unwrap();
                let scale = rng.gen_range(0.0..1.0) * budget.epsilon / norm.max(1e-12);
                let point: Vector = x.iter().zip(&raw).map(|(a, b)| a + b * scale).collect();
                let pre = forward_preactivations(&model, &point);
                for (bl, z) in bounds.layers.iter().zip(&pre) {
                    for j in 0..z.len() {
                        assert!(
                            z[j] >= bl.lower[j] - 1e-9 && z[j] <= bl.upper[j] + 1e-9,
                            "trial {trial}: {} outside [{}, {}]",
                            z[j],
                            bl.lower[j],
                            bl.upper[j]
                        );
                    }
                }
            }
        }
    }

    #[test]
    fn dual_lower_bounds_reachable_objectives() {
        let mut rng = ChaCha8Rng::seed_from_u64(55);
        for trial in 0..15 {
            let d = 2 + trial % 3;
            let model = random_net(&mut rng, &[d, 5, 4, 2]);
            let x: Vector = (0..d).map(|_| rng.gen_range(-1.0..1.0)).collect();
            let omega =
                OmegaTransform::diagonal((0..d).map(|_| rng.gen_range(0.4..2.0)).collect())
                    .unwrap();
            let budget = PerturbationBudget::new(0.6, PNorm::L2).unwrap();
            let bounds = activation_bounds(&model, &x, &omega, &budget).unwrap();
            let c = vec![1.0, -1.0];
            let dual = dual_objective(&model, &x, &bounds, &omega, &budget, &c).unwrap();
            for _ in 0..400 {
                let raw: Vector = (0..d).map(|_| rng.gen_range(-1.0..1.0)).collect();
                let norm = omega.omega_norm(&raw, PNorm::L2).unwrap();
                let scale = rng.gen_range(0.0..1.0) * budget.epsilon / norm.max(1e-12);
                let point: Vector = x.iter().zip(&raw).map(|(a, b)| a + b * scale).collect();
                let logits = model.logits(&point).unwrap();
                let objective = logits[0] - logits[1];
                assert!(
                    objective >= dual - 1e-9,
                    "trial {trial}: reachable {objective} below dual {dual}"
                );
            }
        }
    }

    #[test]
    fn always_active_hidden_layer_gives_exact_linear_bound() {
        // Huge positive biases keep every hidden neuron in the active set
        // over the whole ball, so the network is affine there and the dual
        // must equal the exact composed-linear minimum.
        let mut rng = ChaCha8Rng::seed_from_u64(77);
        let w1 = Matrix::from_fn(4, 3, |_, _| rng.gen_range(-1.0..1.0));
        let w2 = Matrix::from_fn(2, 4, |_, _| rng.gen_range(-1.0..1.0));
        let model = MlpModel::from_parameters(
            vec![3, 4, 2],
            vec![w1.clone(), w2.clone()],
            vec![vec![50.0; 4], vec![0.0, 0.0]],
            0.0,
        )
        .unwrap();
        let x = vec![0.3, -0.2, 0.5];
        let omega = OmegaTransform::diagonal(vec![1.5, 0.7, 1.0]).unwrap();
        let budget = PerturbationBudget::new(0.5, PNorm::L2).unwrap();
        let bounds = activation_bounds(&model, &x, &omega, &budget).unwrap();
        assert!(bounds.layers[0].tags.iter().all(|&t| t == ActivationTag::Pos));
        let c = vec![1.0, -1.0];
        let dual = dual_objective(&model, &x, &bounds, &omega, &budget, &c).unwrap();
        // Composed map: c'(W2(W1 x + b1) + b2) - eps ||O^{-1}(W2 W1)'c||_q.
        let composed = w2.matmul(&w1);
        let wc = composed.tr_matvec(&c);
        let clean = dot(&c, &model.logits(&x).unwrap());
        let exact = clean - 0.5 * omega.inverse_norm(&wc, PNorm::L2).unwrap();
        assert!((dual - exact).abs() < 1e-9, "dual {dual} vs exact {exact}");
    }

    #[test]
    fn dual_is_monotone_in_epsilon() {
        let mut rng = ChaCha8Rng::seed_from_u64(91);
        let model = random_net(&mut rng, &[3, 6, 2]);
        let x = vec![0.2, -0.4, 0.1];
        let omega = OmegaTransform::diagonal(vec![0.8, 1.3, 1.0]).unwrap();
        let c = vec![1.0, -1.0];
        let mut last = f64::INFINITY;
        for k in 0..12 {
            let eps = 0.05 * k as f64;
            let budget = PerturbationBudget::new(eps, PNorm::L2).unwrap();
            let bounds = activation_bounds(&model, &x, &omega, &budget).unwrap();
            let dual = dual_objective(&model, &x, &bounds, &omega, &budget, &c).unwrap();
            assert!(dual <= last + 1e-12, "bound must not improve as the ball grows");
            last = dual;
        }
    }

    #[test]
    fn boundary_sample_is_never_certified() {
        // Logits are symmetric in the two classes at x = 0, so the clean
        // margin is zero and no positive radius can certify.
        let w1 = Matrix::from_rows(vec![vec![1.0, 0.0], vec![-1.0, 0.0]]).unwrap();
        let w2 = Matrix::from_rows(vec![vec![1.0, -1.0], vec![-1.0, 1.0]]).unwrap();
        let model = MlpModel::from_parameters(
            vec![2, 2, 2],
            vec![w1, w2],
            vec![vec![0.0, 0.0], vec![0.0, 0.0]],
            0.0,
        )
        .unwrap();
        let omega = OmegaTransform::identity(2);
        for eps in [1e-6, 0.1, 1.0] {
            let budget = PerturbationBudget::new(eps, PNorm::L2).unwrap();
            let report = certify(&model, &[0.0, 0.0], 0, &omega, &budget).unwrap();
            assert!(!report.certified, "eps {eps}");
            assert!(report.margin <= 0.0);
        }
    }

    #[test]
    fn identity_transform_reproduces_uniform_certification() {
        // Independent uniform-ball implementation of the same dual bound,
        // written without any transform machinery, as a cross-check that
        // the identity transform specializes correctly.
        fn uniform_dual(model: &MlpModel, x: &[f64], eps: f64, c: &[f64]) -> f64 {
            let ws = model.weights();
            let bs = model.biases();
            let n = ws.len();
            let mut nu_hat_1 = ws[0].transpose();
            let mut zeta = bs[0].clone();
            let mut spans: Vec<(Matrix, Vector)> = Vec::new();
            let mut intervals: Vec<(Vector, Vector)> = Vec::new();
            let bound_now = |nh: &Matrix, z: &[f64], sp: &[(Matrix, Vector)]| {
                let mut l = Vector::new();
                let mut u = Vector::new();
                for cidx in 0..nh.cols() {
                    let col = nh.col(cidx);
                    let base = dot(x, &col) + z[cidx];
                    let r = eps * crate::numerics::l2_norm(&col);
                    let mut lc = 0.0;
                    let mut uc = 0.0;
                    for (rows, lv) in sp {
                        for (s, &lval) in lv.iter().enumerate() {
                            let v = rows.get(s, cidx);
                            lc += lval * (-v).max(0.0);
                            uc += lval * v.max(0.0);
                        }
                    }
                    l.push(base - r + lc);
                    u.push(base + r - uc);
                }
                (l, u)
            };
            let (l, u) = bound_now(&nu_hat_1, &zeta, &spans);
            intervals.push((l, u));
            for t in 1..n {
                let (pl, pu) = intervals[t - 1].clone();
                let m = Matrix::from_fn(ws[t].cols(), ws[t].rows(), |r, cc| {
                    let s = if pl[r] >= 0.0 {
                        1.0
                    } else if pu[r] <= 0.0 {
                        0.0
                    } else {
                        pu[r] / (pu[r] - pl[r])
                    };
                    s * ws[t].get(cc, r)
                });
                nu_hat_1 = nu_hat_1.matmul(&m);
                zeta = m.tr_matvec(&zeta);
                for (rows, _) in &mut spans {
                    *rows = rows.matmul(&m);
                }
                let idx: Vec<usize> =
                    (0..ws[t].cols()).filter(|&r| pl[r] < 0.0 && pu[r] > 0.0).collect();
                if !idx.is_empty() {
                    let rows =
                        Matrix::from_fn(idx.len(), ws[t].rows(), |s, cc| m.get(idx[s], cc));
                    let lv: Vector = idx.iter().map(|&r| pl[r]).collect();
                    spans.push((rows, lv));
                }
                crate::numerics::axpy(&mut zeta, 1.0, &bs[t]);
                let (l, u) = bound_now(&nu_hat_1, &zeta, &spans);
                intervals.push((l, u));
            }
            let mut nu: Vector = c.iter().map(|v| -v).collect();
            let mut obj = 0.0;
            let mut nh1 = Vector::new();
            for t in (0..n).rev() {
                obj -= dot(&nu, &bs[t]);
                let nu_hat = ws[t].tr_matvec(&nu);
                if t == 0 {
                    nh1 = nu_hat;
                } else {
                    let (pl, pu) = &intervals[t - 1];
                    nu = nu_hat
                        .iter()
                        .enumerate()
                        .map(|(j, &v)| {
                            if pl[j] >= 0.0 {
                                v
                            } else if pu[j] <= 0.0 {
                                0.0
                            } else {
                                if v > 0.0 {
                                    obj += pl[j] * v;
                                }
                                pu[j] / (pu[j] - pl[j]) * v
                            }
                        })
                        .collect();
                }
            }
            obj - dot(&nh1, x) - eps * crate::numerics::l2_norm(&nh1)
        }

        let mut rng = ChaCha8Rng::seed_from_u64(101);
        for trial in 0..20 {
            let d = 2 + trial % 3;
            let model = random_net(&mut rng, &[d, 5, 3, 2]);
            let x: Vector = (0..d).map(|_| rng.gen_range(-1.0..1.0)).collect();
            let omega = OmegaTransform::identity(d);
            let budget = PerturbationBudget::new(0.3, PNorm::L2).unwrap();
            let bounds = activation_bounds(&model, &x, &omega, &budget).unwrap();
            for c in [vec![1.0, -1.0], vec![-1.0, 1.0]] {
                let a = dual_objective(&model, &x, &bounds, &omega, &budget, &c).unwrap();
                let b = uniform_dual(&model, &x, 0.3, &c);
                assert!((a - b).abs() < 1e-10, "trial {trial}: {a} vs {b}");
            }
        }
    }

    #[test]
    fn certified_samples_resist_pgd() {
        let mut rng = ChaCha8Rng::seed_from_u64(123);
        let mut certified_seen = 0;
        for trial in 0..40 {
            let model = random_net(&mut rng, &[2, 4, 2]);
            let x: Vector = (0..2).map(|_| rng.gen_range(-1.0..1.0)).collect();
            let omega = OmegaTransform::identity(2);
            let budget = PerturbationBudget::new(0.15, PNorm::L2).unwrap();
            let label = model.predict(&x).unwrap();
            let report = certify(&model, &x, label, &omega, &budget).unwrap();
            if !report.certified {
                continue;
            }
            certified_seen += 1;
            let cfg = AttackConfig {
                steps: 200,
                step_size: Some(budget.epsilon / 8.0),
                init: AttackInit::RandomInBall { seed: trial },
                mode: AttackMode::Uniform,
            };
            let out = pgd(&model, &x, label, &budget, &cfg).unwrap();
            let point: Vector = x.iter().zip(&out.delta).map(|(a, b)| a + b).collect();
            assert_eq!(
                model.predict(&point).unwrap(),
                label,
                "trial {trial}: PGD flipped a certified sample"
            );
        }
        assert!(certified_seen >= 5, "test needs certified samples to be meaningful");
    }

    #[test]
    fn dropout_models_are_refused() {
        let model = MlpModel::new(&[2, 4, 2], 0.3, 1).unwrap();
        let omega = OmegaTransform::identity(2);
        let budget = PerturbationBudget::new(0.1, PNorm::L2).unwrap();
        assert!(matches!(
            certify(&model, &[0.0, 0.0], 0, &omega, &budget),
            Err(Error::Domain(_))
        ));
        let ok = certify(&model.without_dropout(), &[0.0, 0.0], 0, &omega, &budget);
        assert!(ok.is_ok());
    }

    #[test]
    fn mask_transform_certifies_on_the_mutable_subspace() {
        // Immutable first coordinate: perturbations only move coordinate 1,
        // so a net reading only coordinate 0 certifies at any radius.
        let w = Matrix::from_rows(vec![vec![1.0, 0.0], vec![-1.0, 0.0]]).unwrap();
        let model = MlpModel::from_parameters(
            vec![2, 2],
            vec![w],
            vec![vec![0.0, 0.0]],
            0.0,
        )
        .unwrap();
        let omega = OmegaTransform::mask(vec![false, true]).unwrap();
        let budget = PerturbationBudget::new(100.0, PNorm::L2).unwrap();
        let report = certify(&model, &[0.5, 0.0], 0, &omega, &budget).unwrap();
        assert!(report.certified, "unreachable features cannot break the margin");
        assert!((report.margin - 1.0).abs() < 1e-12);
    }
}
