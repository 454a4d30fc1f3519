//! Feature-weighting transforms. A transform W reshapes the perturbation
//! budget: the feasible set is `{ delta : ||W delta||_p <= epsilon }`, so
//! heavily weighted coordinates get proportionally less room.
//!
//! Kinds:
//! - `identity`: the uniform ball.
//! - `diagonal`: per-feature weights, built from importance scores as
//!   `w_i = (1/max(|imp_i|, floor))` normalized to unit Euclidean length, so
//!   important features are hardest to move.
//! - `full`: the symmetric inverse square root of a (ridged) covariance
//!   matrix; the ball becomes the Mahalanobis ellipsoid of the data.
//! - `mask`: immutable coordinates are frozen, mutable ones share a uniform
//!   ball.

use crate::error::{Error, Result};
use crate::numerics::{self, Matrix, Vector};
use serde::{Deserialize, Serialize};
use std::path::Path;

/// Norm order of a perturbation budget. Dual pairs: L2 with itself,
/// L-infinity with L1.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum PNorm {
    L2,
    LInf,
}

impl PNorm {
    pub fn norm(&self, v: &[f64]) -> f64 {
        match self {
            PNorm::L2 => numerics::l2_norm(v),
            PNorm::LInf => numerics::linf_norm(v),
        }
    }

    /// Norm of the dual space; shows up in certification objectives.
    pub fn dual_norm(&self, v: &[f64]) -> f64 {
        match self {
            PNorm::L2 => numerics::l2_norm(v),
            PNorm::LInf => numerics::l1_norm(v),
        }
    }
}

impl std::str::FromStr for PNorm {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "2" | "l2" => Ok(PNorm::L2),
            "inf" | "linf" => Ok(PNorm::LInf),
            other => Err(Error::Domain(format!("unknown norm order '{other}' (use 2 or inf)"))),
        }
    }
}

impl std::fmt::Display for PNorm {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            PNorm::L2 => write!(f, "2"),
            PNorm::LInf => write!(f, "inf"),
        }
    }
}

/// Floor applied to absolute importance scores before inversion, so nearly
/// irrelevant features cannot blow the weights up.
pub const IMPORTANCE_FLOOR: f64 = 1e-3;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum OmegaKind {
    Identity,
    Diagonal {
        weights: Vector,
    },
    /// `forward` is the transform, `inverse` its exact inverse factor; both
    /// come out of one eigendecomposition so they stay a consistent pair
    /// through serialization.
    Full {
        forward: Matrix,
        inverse: Matrix,
    },
    Mask {
        mutable: Vec<bool>,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OmegaTransform {
    dim: usize,
    #[serde(flatten)]
    kind: OmegaKind,
}

impl OmegaTransform {
    pub fn identity(dim: usize) -> Self {
        OmegaTransform { dim, kind: OmegaKind::Identity }
    }

    /// Diagonal transform from explicit positive weights.
    pub fn diagonal(weights: Vector) -> Result<Self> {
        if weights.is_empty() {
            return Err(Error::EmptyInput("diagonal transform with no weights".into()));
        }
        if weights.iter().any(|w| !(w.is_finite() && *w > 0.0)) {
            return Err(Error::Domain("diagonal weights must be positive and finite".into()));
        }
        Ok(OmegaTransform { dim: weights.len(), kind: OmegaKind::Diagonal { weights } })
    }

    /// Diagonal transform from importance scores: clamp |importance| below
    /// by [`IMPORTANCE_FLOOR`], invert, normalize to unit Euclidean length.
    pub fn from_importance(importance: &[f64]) -> Result<Self> {
        if importance.is_empty() {
            return Err(Error::EmptyInput("empty importance vector".into()));
        }
        if importance.iter().any(|v| !v.is_finite()) {
            return Err(Error::Domain("importance scores must be finite".into()));
        }
        let raw: Vector =
            importance.iter().map(|v| 1.0 / v.abs().max(IMPORTANCE_FLOOR)).collect();
        let norm = numerics::l2_norm(&raw);
        Self::diagonal(raw.into_iter().map(|w| w / norm).collect())
    }

    /// Mahalanobis transform `(sigma + ridge I)^(-1/2)`. `ridge = None`
    /// applies the default `1e-6 trace(sigma)/d`.
    pub fn mahalanobis(sigma: &Matrix, ridge: Option<f64>) -> Result<Self> {
        let ridge = ridge.unwrap_or_else(|| numerics::default_ridge(sigma));
        if !(ridge >= 0.0) {
            return Err(Error::Domain(format!("ridge must be non-negative, got {ridge}")));
        }
        let (forward, inverse) = numerics::sym_sqrt_pair(sigma, ridge)?;
        Ok(OmegaTransform { dim: sigma.rows(), kind: OmegaKind::Full { forward, inverse } })
    }

    /// Mutable-feature mask; needs at least one mutable coordinate.
    pub fn mask(mutable: Vec<bool>) -> Result<Self> {
        if mutable.is_empty() {
            return Err(Error::EmptyInput("empty mask".into()));
        }
        if !mutable.iter().any(|&m| m) {
            return Err(Error::EmptyMutableSet);
        }
        Ok(OmegaTransform { dim: mutable.len(), kind: OmegaKind::Mask { mutable } })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn kind(&self) -> &OmegaKind {
        &self.kind
    }

    pub fn kind_name(&self) -> &'static str {
        match self.kind {
            OmegaKind::Identity => "identity",
            OmegaKind::Diagonal { .. } => "diagonal",
            OmegaKind::Full { .. } => "full",
            OmegaKind::Mask { .. } => "mask",
        }
    }

    pub fn is_mask(&self) -> bool {
        matches!(self.kind, OmegaKind::Mask { .. })
    }

    fn check_dim(&self, v: &[f64]) -> Result<()> {
        if v.len() != self.dim {
            return Err(Error::DimensionMismatch(format!(
                "vector has {} coordinates, transform expects {}",
                v.len(),
                self.dim
            )));
        }
        Ok(())
    }

    /// `W v`.
    pub fn apply(&self, v: &[f64]) -> Result<Vector> {
        self.check_dim(v)?;
        Ok(match &self.kind {
            OmegaKind::Identity => v.to_vec(),
            OmegaKind::Diagonal { weights } => {
                v.iter().zip(weights).map(|(x, w)| x * w).collect()
            }
            OmegaKind::Full { forward, .. } => forward.matvec(v),
            OmegaKind::Mask { mutable } => v
                .iter()
                .zip(mutable)
                .map(|(x, &m)| if m { *x } else { 0.0 })
                .collect(),
        })
    }

    /// `W^{-1} v`; the mask kind is singular and reports
    /// [`Error::NonInvertibleOmega`].
    pub fn apply_inverse(&self, v: &[f64]) -> Result<Vector> {
        self.check_dim(v)?;
        match &self.kind {
            OmegaKind::Identity => Ok(v.to_vec()),
            OmegaKind::Diagonal { weights } => {
                Ok(v.iter().zip(weights).map(|(x, w)| x / w).collect())
            }
            OmegaKind::Full { inverse, .. } => {
                if !inverse.all_finite() {
                    return Err(Error::NonInvertibleOmega("corrupt inverse factor".into()));
                }
                Ok(inverse.matvec(v))
            }
            OmegaKind::Mask { .. } => {
                Err(Error::NonInvertibleOmega("mask transforms have no inverse".into()))
            }
        }
    }

    /// `||W v||_p`, the constraint functional of the weighted ball.
    pub fn omega_norm(&self, v: &[f64], p: PNorm) -> Result<f64> {
        Ok(p.norm(&self.apply(v)?))
    }

    /// `||W^{-1} v||_q` with q dual to `p`; for the mask kind this is the
    /// dual norm restricted to the mutable coordinates (the certification
    /// objective only ever probes directions inside the mutable subspace).
    pub fn inverse_norm(&self, v: &[f64], p: PNorm) -> Result<f64> {
        self.check_dim(v)?;
        match &self.kind {
            OmegaKind::Mask { mutable } => {
                let restricted: Vector = v
                    .iter()
                    .zip(mutable)
                    .map(|(x, &m)| if m { *x } else { 0.0 })
                    .collect();
                Ok(p.dual_norm(&restricted))
            }
            _ => Ok(p.dual_norm(&self.apply_inverse(v)?)),
        }
    }

    /// Zero out immutable coordinates in place (no-op for other kinds).
    pub fn clamp_to_mutable(&self, v: &mut [f64]) {
        if let OmegaKind::Mask { mutable } = &self.kind {
            for (x, &m) in v.iter_mut().zip(mutable) {
                if !m {
                    *x = 0.0;
                }
            }
        }
    }

    /// Noise covariance whose Mahalanobis geometry matches this transform:
    /// `(W^T W)^{-1}`. For the Mahalanobis kind this recovers the ridged
    /// data covariance; for diagonals it is `diag(1/w_i^2)`.
    pub fn induced_covariance(&self) -> Result<Matrix> {
        match &self.kind {
            OmegaKind::Identity => Ok(Matrix::identity(self.dim)),
            OmegaKind::Diagonal { weights } => {
                Ok(Matrix::diagonal(&weights.iter().map(|w| 1.0 / (w * w)).collect::<Vec<_>>()))
            }
            OmegaKind::Full { inverse, .. } => Ok(inverse.matmul(inverse)),
            OmegaKind::Mask { .. } => Err(Error::NonInvertibleOmega(
                "mask transforms induce no covariance".into(),
            )),
        }
    }
}

const OMEGA_FORMAT_VERSION: u32 = 1;

#[derive(Serialize, Deserialize)]
struct OmegaFile {
    format_version: u32,
    #[serde(flatten)]
    transform: OmegaTransform,
}

pub fn omega_to_json(t: &OmegaTransform) -> String {
    serde_json::to_string_pretty(&OmegaFile {
        format_version: OMEGA_FORMAT_VERSION,
        transform: t.clone(),
    })
    .expect("omega serialization cannot fail")
}

pub fn omega_from_json(json: &str) -> Result<OmegaTransform> {
    let file: OmegaFile = serde_json::from_str(json)
        .map_err(|e| Error::Serialization(format!("omega file: {e}")))?;
    if file.format_version != OMEGA_FORMAT_VERSION {
        return Err(Error::Schema(format!(
            "unsupported omega format version {} (expected {OMEGA_FORMAT_VERSION})",
            file.format_version
        )));
    }
    validate_loaded(&file.transform)?;
    Ok(file.transform)
}

fn validate_loaded(t: &OmegaTransform) -> Result<()> {
    match &t.kind {
        OmegaKind::Identity => Ok(()),
        OmegaKind::Diagonal { weights } => {
            if weights.len() != t.dim {
                return Err(Error::DimensionMismatch("diagonal weight count".into()));
            }
            if weights.iter().any(|w| !(w.is_finite() && *w > 0.0)) {
                return Err(Error::Domain("diagonal weights must be positive and finite".into()));
            }
            Ok(())
        }
        OmegaKind::Full { forward, inverse } => {
            if forward.rows() != t.dim
                || forward.cols() != t.dim
                || inverse.rows() != t.dim
                || inverse.cols() != t.dim
            {
                return Err(Error::DimensionMismatch("full transform shape".into()));
            }
            if !forward.all_finite() || !inverse.all_finite() {
                return Err(Error::NonInvertibleOmega("non-finite factor".into()));
            }
            // The pair must actually be mutual inverses.
            let prod = forward.matmul(inverse);
            if prod.sub(&Matrix::identity(t.dim)).max_abs() > 1e-6 {
                return Err(Error::NonInvertibleOmega(
                    "stored factors are not an inverse pair".into(),
                ));
            }
            Ok(())
        }
        OmegaKind::Mask { mutable } => {
            if mutable.len() != t.dim {
                return Err(Error::DimensionMismatch("mask length".into()));
            }
            if !mutable.iter().any(|&m| m) {
                return Err(Error::EmptyMutableSet);
            }
            Ok(())
        }
    }
}

pub fn save_omega(t: &OmegaTransform, path: impl AsRef<Path>) -> Result<()> {
    crate::manifest::write_atomic(path.as_ref(), omega_to_json(t).as_bytes())
}

pub fn load_omega(path: impl AsRef<Path>) -> Result<OmegaTransform> {
    let text = std::fs::read_to_string(path.as_ref())
        .map_err(|e| Error::io(path.as_ref().display().to_string(), e))?;
    omega_from_json(&text)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn importance_weights_invert_and_normalize() {
        let t = OmegaTransform::from_importance(&[0.5, 0.25]).unwrap();
        // 1/|imp| = (2, 4); unit-normalized: (2, 4)/sqrt(20).
        let OmegaKind::Diagonal { weights } = t.kind() else { panic!("expected diagonal") };
        assert!((weights[0] - 0.447_213_595_499_958).abs() < 1e-12);
        assert!((weights[1] - 0.894_427_190_999_916).abs() < 1e-12);
    }

    #[test]
    fn importance_floor_caps_tiny_scores() {
        let t = OmegaTransform::from_importance(&[1.0, 0.0]).unwrap();
        let OmegaKind::Diagonal { weights } = t.kind() else { panic!("expected diagonal") };
        // Raw weights (1, 1000): the floored zero dominates.
        assert!(weights[1] / weights[0] > 999.0);
    }

    #[test]
    fn inverse_norm_of_importance_transform() {
        let t = OmegaTransform::from_importance(&[0.5, 0.25]).unwrap();
        let v = [1.0, 0.0];
        // W^{-1} e_0 = sqrt(20)/2 on the first coordinate.
        let got = t.inverse_norm(&v, PNorm::L2).unwrap();
        assert!((got - 20.0_f64.sqrt() / 2.0).abs() < 1e-12);
    }

    #[test]
    fn mahalanobis_norm_matches_quadratic_form() {
        let sigma = Matrix::from_rows(vec![vec![2.0, 0.5], vec![0.5, 1.0]]).unwrap();
        let t = OmegaTransform::mahalanobis(&sigma, Some(0.0)).unwrap();
        let sigma_inv = crate::numerics::spd_inverse(&sigma).unwrap();
        for delta in [[1.0, 0.0], [0.3, -0.7], [2.0, 1.5]] {
            let md = crate::numerics::dot(&sigma_inv.matvec(&delta), &delta).sqrt();
            let wn = t.omega_norm(&delta, PNorm::L2).unwrap();
            assert!((md - wn).abs() < 1e-9, "delta {delta:?}: md {md}, norm {wn}");
        }
    }

    #[test]
    fn mask_behaviour() {
        let t = OmegaTransform::mask(vec![true, false]).unwrap();
        // Norm sees only mutable coordinates.
        assert!((t.omega_norm(&[3.0, 100.0], PNorm::L2).unwrap() - 3.0).abs() < 1e-12);
        // Dual norm restricted to the mutable block: v = (3, 4) -> 3.
        assert!((t.inverse_norm(&[3.0, 4.0], PNorm::L2).unwrap() - 3.0).abs() < 1e-12);
        assert!(matches!(t.apply_inverse(&[1.0, 1.0]), Err(Error::NonInvertibleOmega(_))));
        assert!(matches!(
            OmegaTransform::mask(vec![false, false]),
            Err(Error::EmptyMutableSet)
        ));
    }

    #[test]
    fn apply_then_inverse_is_identity() {
        let sigma = Matrix::from_rows(vec![vec![3.0, 1.0], vec![1.0, 2.0]]).unwrap();
        for t in [
            OmegaTransform::identity(2),
            OmegaTransform::from_importance(&[0.9, 0.1]).unwrap(),
            OmegaTransform::mahalanobis(&sigma, None).unwrap(),
        ] {
            let v = [0.7, -1.3];
            let round = t.apply_inverse(&t.apply(&v).unwrap()).unwrap();
            for (a, b) in v.iter().zip(&round) {
                assert!((a - b).abs() < 1e-9, "{}", t.kind_name());
            }
        }
    }

    #[test]
    fn induced_covariance_recovers_ridged_sigma() {
        let sigma = Matrix::from_rows(vec![vec![2.0, 0.3], vec![0.3, 1.0]]).unwrap();
        let t = OmegaTransform::mahalanobis(&sigma, Some(0.0)).unwrap();
        let back = t.induced_covariance().unwrap();
        assert!(back.sub(&sigma).max_abs() < 1e-9);
    }

    #[test]
    fn json_round_trip_preserves_transform() {
        let sigma = Matrix::from_rows(vec![vec![2.0, 0.3], vec![0.3, 1.0]]).unwrap();
        for t in [
            OmegaTransform::identity(2),
            OmegaTransform::from_importance(&[0.4, 0.6]).unwrap(),
            OmegaTransform::mahalanobis(&sigma, None).unwrap(),
            OmegaTransform::mask(vec![true, false]).unwrap(),
        ] {
            let back = omega_from_json(&omega_to_json(&t)).unwrap();
            assert_eq!(t, back);
        }
    }

    #[test]
    fn json_rejects_corrupt_inverse_pair() {
        let sigma = Matrix::from_rows(vec![vec![2.0, 0.0], vec![0.0, 1.0]]).unwrap();
        let t = OmegaTransform::mahalanobis(&sigma, Some(0.0)).unwrap();
        // Tamper with the forward factor so the pair no longer multiplies
        // to the identity.
        let json = omega_to_json(&t).replacen("0.7071", "0.9071", 1);
        assert!(matches!(omega_from_json(&json), Err(Error::NonInvertibleOmega(_))));
    }

    proptest! {
        /// Scaling the transform by c scales omega_norm by c and
        /// inverse_norm by 1/c.
        #[test]
        fn scaling_relation(
            w in proptest::collection::vec(0.1..5.0f64, 3),
            v in proptest::collection::vec(-3.0..3.0f64, 3),
            c in 0.1..10.0f64,
        ) {
            let t = OmegaTransform::diagonal(w.clone()).unwrap();
            let tc = OmegaTransform::diagonal(w.iter().map(|x| x * c).collect()).unwrap();
            for p in [PNorm::L2, PNorm::LInf] {
                let a = t.omega_norm(&v, p).unwrap() * c;
                let b = tc.omega_norm(&v, p).unwrap();
                prop_assert!((a - b).abs() <= 1e-12 * a.abs().max(1.0));
                let ai = t.inverse_norm(&v, p).unwrap() / c;
                let bi = tc.inverse_norm(&v, p).unwrap();
                prop_assert!((ai - bi).abs() <= 1e-12 * ai.abs().max(1.0));
            }
        }

        /// The weighted norm of the inverse-mapped unit vector is 1:
        /// omega_norm(W^{-1} u) = ||u||.
        #[test]
        fn norm_inverse_consistency(
            w in proptest::collection::vec(0.2..4.0f64, 4),
            u in proptest::collection::vec(-2.0..2.0f64, 4),
        ) {
            let t = OmegaTransform::diagonal(w).unwrap();
            let mapped = t.apply_inverse(&u).unwrap();
            let norm = t.omega_norm(&mapped, PNorm::L2).unwrap();
            let direct = crate::numerics::l2_norm(&u);
            prop_assert!((norm - direct).abs() < 1e-10);
        }
    }
}
