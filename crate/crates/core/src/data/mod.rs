//! Tabular datasets: CSV loading, train/test splitting, standardization,
//! covariance estimation, and feature-importance scores.
//!
//! Conventions baked in throughout the crate:
//! - labels are binary, `{0, 1}`, with 1 the positive (attacked) class;
//! - moments are population moments (divide by `n`, not `n - 1`);
//! - standardization statistics are fitted on the training split only and
//!   reused verbatim on held-out data.

pub mod shapley;
pub mod synth;

pub use shapley::shapley_importance;

use crate::error::{Error, Result};
use crate::numerics::{Matrix, Vector};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use serde::{Deserialize, Serialize};
use std::path::Path;

/// In-memory tabular dataset with binary labels.
#[derive(Debug, Clone)]
pub struct Dataset {
    features: Matrix,
    labels: Vec<usize>,
    feature_names: Vec<String>,
    label_name: String,
}

impl Dataset {
    pub fn new(
        features: Matrix,
        labels: Vec<usize>,
        feature_names: Vec<String>,
        label_name: String,
    ) -> Result<Self> {
        if features.rows() == 0 {
            return Err(Error::EmptyInput("dataset with zero rows".into()));
        }
        if features.rows() != labels.len() {
            return Err(Error::DimensionMismatch(format!(
                "{} feature rows but {} labels",
                features.rows(),
                labels.len()
            )));
        }
        if features.cols() != feature_names.len() {
            return Err(Error::DimensionMismatch(format!(
                "{} feature columns but {} names",
                features.cols(),
                feature_names.len()
            )));
        }
        if let Some(bad) = labels.iter().find(|l| **l > 1) {
            return Err(Error::Schema(format!("label {bad} is not binary")));
        }
        if !features.all_finite() {
            return Err(Error::Schema("non-finite feature value".into()));
        }
        Ok(Dataset { features, labels, feature_names, label_name })
    }

    pub fn n_samples(&self) -> usize {
        self.features.rows()
    }

    pub fn n_features(&self) -> usize {
        self.features.cols()
    }

    pub fn row(&self, i: usize) -> &[f64] {
        self.features.row(i)
    }

    pub fn label(&self, i: usize) -> usize {
        self.labels[i]
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    pub fn features(&self) -> &Matrix {
        &self.features
    }

    pub fn feature_names(&self) -> &[String] {
        &self.feature_names
    }

    pub fn label_name(&self) -> &str {
        &self.label_name
    }

    /// Indices of samples carrying `class`.
    pub fn class_indices(&self, class: usize) -> Vec<usize> {
        (0..self.n_samples()).filter(|&i| self.labels[i] == class).collect()
    }

    /// Column index for a feature name.
    pub fn feature_index(&self, name: &str) -> Result<usize> {
        self.feature_names
            .iter()
            .position(|n| n == name)
            .ok_or_else(|| Error::Schema(format!("unknown feature '{name}'")))
    }

    /// Per-feature means over all rows.
    pub fn feature_means(&self) -> Vector {
        let n = self.n_samples() as f64;
        let mut means = vec![0.0; self.n_features()];
        for i in 0..self.n_samples() {
            crate::numerics::axpy(&mut means, 1.0, self.row(i));
        }
        means.iter_mut().for_each(|m| *m /= n);
        means
    }

    fn subset(&self, idx: &[usize]) -> Result<Dataset> {
        let features = Matrix::from_rows(idx.iter().map(|&i| self.row(i).to_vec()).collect())?;
        let labels = idx.iter().map(|&i| self.labels[i]).collect();
        Dataset::new(features, labels, self.feature_names.clone(), self.label_name.clone())
    }

    /// Deterministic shuffled split; `test_fraction` of the rows (rounded)
    /// go to the second dataset. Both splits keep ascending original order.
    pub fn split(&self, test_fraction: f64, seed: u64) -> Result<(Dataset, Dataset)> {
        if !(0.0 < test_fraction && test_fraction < 1.0) {
            return Err(Error::Domain(format!(
                "test fraction must lie strictly between 0 and 1, got {test_fraction}"
            )));
        }
        let n = self.n_samples();
        let n_test = ((test_fraction * n as f64).round() as usize).clamp(1, n - 1);
        let mut idx: Vec<usize> = (0..n).collect();
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        idx.shuffle(&mut rng);
        let mut test_idx = idx[..n_test].to_vec();
        let mut train_idx = idx[n_test..].to_vec();
        test_idx.sort_unstable();
        train_idx.sort_unstable();
        Ok((self.subset(&train_idx)?, self.subset(&test_idx)?))
    }
}

/// Load a CSV with a header row. `label_column` names the binary label;
/// columns listed in `drop` are discarded (categoricals, identifiers);
/// everything else must parse as a real number.
pub fn load_csv(path: impl AsRef<Path>, label_column: &str, drop: &[String]) -> Result<Dataset> {
    let path = path.as_ref();
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .trim(csv::Trim::All)
        .from_path(path)
        .map_err(|e| Error::Schema(format!("cannot open {}: {e}", path.display())))?;

    let headers: Vec<String> =
        reader
            .headers()
            .map_err(|e| Error::Schema(format!("{}: {e}", path.display())))?
            .iter()
            .map(|h| h.to_string())
            .collect();

    let label_pos = headers
        .iter()
        .position(|h| h == label_column)
        .ok_or_else(|| Error::Schema(format!("label column '{label_column}' not in header")))?;
    for d in drop {
        if !headers.iter().any(|h| h == d) {
            return Err(Error::Schema(format!("drop column '{d}' not in header")));
        }
        if d == label_column {
            return Err(Error::Schema(format!("cannot drop the label column '{d}'")));
        }
    }

    let keep: Vec<usize> = (0..headers.len())
        .filter(|&i| i != label_pos && !drop.iter().any(|d| *d == headers[i]))
        .collect();
    if keep.is_empty() {
        return Err(Error::Schema("no feature columns left after drops".into()));
    }
    let feature_names: Vec<String> = keep.iter().map(|&i| headers[i].clone()).collect();

    let mut rows: Vec<Vec<f64>> = Vec::new();
    let mut labels: Vec<usize> = Vec::new();
    for (line, record) in reader.records().enumerate() {
        let record = record.map_err(|e| Error::Parse {
            location: format!("{}:{}", path.display(), line + 2),
            message: e.to_string(),
        })?;
        if record.len() != headers.len() {
            return Err(Error::Parse {
                location: format!("{}:{}", path.display(), line + 2),
                message: format!("expected {} fields, got {}", headers.len(), record.len()),
            });
        }
        let parse_cell = |col: usize| -> Result<f64> {
            record[col].parse::<f64>().map_err(|_| Error::Parse {
                location: format!("{}:{} column '{}'", path.display(), line + 2, headers[col]),
                message: format!("'{}' is not a number", &record[col]),
            })
        };
        let lab = parse_cell(label_pos)?;
        if lab != 0.0 && lab != 1.0 {
            return Err(Error::Schema(format!(
                "label '{}' at {}:{} is not 0 or 1",
                &record[label_pos],
                path.display(),
                line + 2
            )));
        }
        labels.push(lab as usize);
        let mut row = Vec::with_capacity(keep.len());
        for &c in &keep {
            row.push(parse_cell(c)?);
        }
        rows.push(row);
    }
    if rows.is_empty() {
        return Err(Error::EmptyInput(format!("{} has no data rows", path.display())));
    }
    Dataset::new(Matrix::from_rows(rows)?, labels, feature_names, label_column.to_string())
}

/// Serialize a dataset back to CSV (header row, features then label).
pub fn dataset_to_csv_string(d: &Dataset) -> String {
    let mut out = String::new();
    out.push_str(&d.feature_names.join(","));
    out.push(',');
    out.push_str(&d.label_name);
    out.push('\n');
    for i in 0..d.n_samples() {
        for (j, v) in d.row(i).iter().enumerate() {
            if j > 0 {
                out.push(',');
            }
            out.push_str(&format!("{v}"));
        }
        out.push_str(&format!(",{}\n", d.labels[i]));
    }
    out
}

/// Per-feature location/scale fitted on a training split.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct StandardizationStats {
    pub feature_names: Vec<String>,
    pub means: Vector,
    /// Population standard deviations (divide by n).
    pub sds: Vector,
}

/// Fit standardization on `d` and return the transformed dataset plus the
/// statistics. Errors with [`Error::ConstantFeature`] when a feature has
/// zero population standard deviation.
pub fn standardize(d: &Dataset) -> Result<(Dataset, StandardizationStats)> {
    let n = d.n_samples() as f64;
    let dim = d.n_features();
    let means = d.feature_means();
    let mut vars = vec![0.0; dim];
    for i in 0..d.n_samples() {
        for (j, &v) in d.row(i).iter().enumerate() {
            let c = v - means[j];
            vars[j] += c * c;
        }
    }
    let mut sds = Vector::with_capacity(dim);
    for (j, v) in vars.iter().enumerate() {
        let sd = (v / n).sqrt();
        if sd <= 0.0 {
            return Err(Error::ConstantFeature(d.feature_names[j].clone()));
        }
        sds.push(sd);
    }
    let stats = StandardizationStats { feature_names: d.feature_names.clone(), means, sds };
    Ok((apply_standardization(d, &stats)?, stats))
}

/// Apply previously fitted statistics (typically to a held-out split).
pub fn apply_standardization(d: &Dataset, stats: &StandardizationStats) -> Result<Dataset> {
    if stats.feature_names != d.feature_names {
        return Err(Error::Schema("standardization stats fitted on different features".into()));
    }
    let features = Matrix::from_fn(d.n_samples(), d.n_features(), |i, j| {
        (d.features.get(i, j) - stats.means[j]) / stats.sds[j]
    });
    Dataset::new(features, d.labels.clone(), d.feature_names.clone(), d.label_name.clone())
}

/// Which rows enter a moment computation.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ClassFilter {
    All,
    Class(usize),
}

/// Population covariance matrix of the selected rows.
pub fn covariance(d: &Dataset, filter: ClassFilter) -> Result<Matrix> {
    let idx: Vec<usize> = match filter {
        ClassFilter::All => (0..d.n_samples()).collect(),
        ClassFilter::Class(c) => d.class_indices(c),
    };
    if idx.len() < 2 {
        return Err(Error::InsufficientSamples(format!(
            "covariance needs at least 2 samples, have {}",
            idx.len()
        )));
    }
    let n = idx.len() as f64;
    let dim = d.n_features();
    let mut mean = vec![0.0; dim];
    for &i in &idx {
        crate::numerics::axpy(&mut mean, 1.0, d.row(i));
    }
    mean.iter_mut().for_each(|m| *m /= n);
    let mut cov = Matrix::zeros(dim, dim);
    for &i in &idx {
        let r = d.row(i);
        for a in 0..dim {
            let ca = r[a] - mean[a];
            for b in a..dim {
                let v = cov.get(a, b) + ca * (r[b] - mean[b]);
                cov.set(a, b, v);
            }
        }
    }
    for a in 0..dim {
        for b in a..dim {
            let v = cov.get(a, b) / n;
            cov.set(a, b, v);
            cov.set(b, a, v);
        }
    }
    Ok(cov)
}

/// Absolute Pearson correlation of each feature with the binary label.
pub fn pearson_importance(d: &Dataset) -> Result<Vector> {
    let n = d.n_samples() as f64;
    let label_mean = d.labels.iter().sum::<usize>() as f64 / n;
    let label_var =
        d.labels.iter().map(|&l| (l as f64 - label_mean).powi(2)).sum::<f64>() / n;
    if label_var <= 0.0 {
        return Err(Error::ConstantLabel);
    }
    let means = d.feature_means();
    let mut out = Vector::with_capacity(d.n_features());
    for j in 0..d.n_features() {
        let mut cov = 0.0;
        let mut var = 0.0;
        for i in 0..d.n_samples() {
            let c = d.features.get(i, j) - means[j];
            cov += c * (d.labels[i] as f64 - label_mean);
            var += c * c;
        }
        if var <= 0.0 {
            return Err(Error::ConstantFeature(d.feature_names[j].clone()));
        }
        out.push((cov / n / ((var / n).sqrt() * label_var.sqrt())).abs());
    }
    Ok(out)
}

/// Write an importance vector as a two-column CSV (`feature_name,importance`).
pub fn importance_to_csv_string(names: &[String], importance: &[f64]) -> String {
    let mut out = String::from("feature_name,importance\n");
    for (n, v) in names.iter().zip(importance) {
        out.push_str(&format!("{n},{v}\n"));
    }
    out
}

/// Read a two-column importance CSV and align values to `feature_names`.
pub fn load_importance_csv(path: impl AsRef<Path>, feature_names: &[String]) -> Result<Vector> {
    let path = path.as_ref();
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .trim(csv::Trim::All)
        .from_path(path)
        .map_err(|e| Error::Schema(format!("cannot open {}: {e}", path.display())))?;
    let mut by_name = std::collections::BTreeMap::new();
    for (line, record) in reader.records().enumerate() {
        let record = record.map_err(|e| Error::Parse {
            location: format!("{}:{}", path.display(), line + 2),
            message: e.to_string(),
        })?;
        if record.len() != 2 {
            return Err(Error::Schema(format!(
                "importance CSV must have exactly two columns, got {} at line {}",
                record.len(),
                line + 2
            )));
        }
        let value = record[1].parse::<f64>().map_err(|_| Error::Parse {
            location: format!("{}:{}", path.display(), line + 2),
            message: format!("'{}' is not a number", &record[1]),
        })?;
        by_name.insert(record[0].to_string(), value);
    }
    feature_names
        .iter()
        .map(|n| {
            by_name
                .get(n)
                .copied()
                .ok_or_else(|| Error::Schema(format!("importance file misses feature '{n}'")))
        })
        .collect()
}
