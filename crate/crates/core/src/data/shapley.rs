//! Monte-Carlo permutation Shapley feature importance.
//!
//! The value function is the model's positive-class logit. For an input x
//! and a baseline b (the dataset feature means), a random permutation of the
//! features is walked from b toward x; the marginal change in the value
//! function when feature i switches from its baseline value to x_i is that
//! feature's contribution under the permutation. Averaging over permutations
//! estimates the Shapley value; the reported importance is the mean absolute
//! Shapley value over a deterministic sample of inputs.

use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::net::MlpModel;
use crate::numerics::Vector;
use rand::seq::SliceRandom;
use rand::SeedableRng;

/// Positive class whose logit the attributions explain.
const POSITIVE_CLASS: usize = 1;

/// Inputs sampled for the importance average (all rows when fewer).
const DEFAULT_EVAL_SAMPLES: usize = 100;

pub fn shapley_importance(
    model: &MlpModel,
    data: &Dataset,
    permutations: usize,
    seed: u64,
) -> Result<Vector> {
    shapley_importance_with(model, data, permutations, DEFAULT_EVAL_SAMPLES, seed)
}

/// As [`shapley_importance`] with an explicit cap on the number of inputs
/// averaged over.
pub fn shapley_importance_with(
    model: &MlpModel,
    data: &Dataset,
    permutations: usize,
    eval_samples: usize,
    seed: u64,
) -> Result<Vector> {
    if permutations == 0 {
        return Err(Error::Domain("need at least one permutation".into()));
    }
    if eval_samples == 0 {
        return Err(Error::Domain("need at least one evaluation sample".into()));
    }
    if data.n_features() != model.input_dim() {
        return Err(Error::DimensionMismatch(format!(
            "dataset has {} features, model expects {}",
            data.n_features(),
            model.input_dim()
        )));
    }
    if model.num_classes() <= POSITIVE_CLASS {
        return Err(Error::DimensionMismatch("model has no positive-class output".into()));
    }
    let d = data.n_features();
    let baseline = data.feature_means();
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);

    // Deterministic input sample: evenly strided rows cover the dataset
    // without consuming randomness.
    let n = data.n_samples();
    let take = eval_samples.min(n);
    let rows: Vec<usize> = (0..take).map(|k| k * n / take).collect();

    let value = |x: &[f64]| -> Result<f64> { Ok(model.logits(x)?[POSITIVE_CLASS]) };

    let mut totals = vec![0.0; d];
    let mut order: Vec<usize> = (0..d).collect();
    for &row in &rows {
        let x = data.row(row);
        let mut phi = vec![0.0; d];
        for _ in 0..permutations {
            order.shuffle(&mut rng);
            let mut z = baseline.clone();
            let mut prev = value(&z)?;
            for &feat in &order {
                z[feat] = x[feat];
                let cur = value(&z)?;
                phi[feat] += cur - prev;
                prev = cur;
            }
        }
        for (t, p) in totals.iter_mut().zip(&phi) {
            *t += (p / permutations as f64).abs();
        }
    }
    Ok(totals.into_iter().map(|t| t / rows.len() as f64).collect())
}
