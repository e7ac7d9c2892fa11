//! Linear Discriminant Analysis used both as a reducer and as a
//! shared-covariance Gaussian classifier.
//!
//! Fitting standardizes every input coordinate, restricts to the configured
//! feature subset, then builds within-class (`S_W`) and between-class
//! (`S_B`) scatter. The projection solves `S_B v = w (S_W + lambda I) v` by
//! whitening with the Cholesky factor of the regularized within-class
//! scatter. Classification scores each class with
//! `x' inv(C) mu_m - mu_m' inv(C) mu_m / 2 + ln(prior_m)`, where `C` is the
//! pooled covariance `(S_W + lambda I) / (N - M)`, in the full standardized
//! space.

pub(crate) mod model_file;

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use nalgebra::{Cholesky, DMatrix, DVector, SymmetricEigen};
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use model_file::MODEL_FORMAT_VERSION;

/// Floor applied to standardizer scales.
pub const MIN_SCALE: f64 = 1e-12;

/// Relative factor for the default ridge: `lambda = 1e-6 * trace(S_W) / p`.
pub const AUTO_RIDGE_FACTOR: f64 = 1e-6;

/// Generalized eigenvalues below this fraction of the largest are zeroed.
pub const EIGEN_RELATIVE_CUTOFF: f64 = 1e-10;

#[derive(Debug, Error)]
pub enum LdaError {
    #[error("degenerate class: {0}")]
    DegenerateClass(String),
    #[error("within-class scatter is singular; use a positive regularization")]
    SingularScatter,
    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: usize, found: usize },
    #[error("invalid input: {0}")]
    InvalidInput(String),
    #[error("invalid model file: {0}")]
    InvalidModel(String),
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
}

/// Which coordinates of a radial feature vector the model uses.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum FeatureSubset {
    #[default]
    All,
    Magnitude,
    Phase,
}

impl FeatureSubset {
    pub const ALL_MODES: [FeatureSubset; 3] = [FeatureSubset::All, FeatureSubset::Magnitude, FeatureSubset::Phase];

    /// Selected coordinates of a `dim`-long vector laid out as six
    /// `n_r`-blocks `[R.M, R.phase, G.M, G.phase, B.M, B.phase]`.
    pub fn indices(self, dim: usize) -> Result<Vec<usize>, LdaError> {
        if self == FeatureSubset::All {
            return Ok((0..dim).collect());
        }
        if dim == 0 || !dim.is_multiple_of(6) {
            return Err(LdaError::InvalidInput(format!(
                "subset `{self}` needs a feature length divisible by 6, got {dim}"
            )));
        }
        let n_r = dim / 6;
        let offset = if self == FeatureSubset::Magnitude { 0 } else { n_r };
        Ok((0..3)
            .flat_map(|c| {
                let start = 2 * c * n_r + offset;
                start..start + n_r
            })
            .collect())
    }
}

impl fmt::Display for FeatureSubset {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            FeatureSubset::All => "all",
            FeatureSubset::Magnitude => "magnitude",
            FeatureSubset::Phase => "phase",
        })
    }
}

impl FromStr for FeatureSubset {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "all" => Ok(Self::All),
            "magnitude" => Ok(Self::Magnitude),
            "phase" => Ok(Self::Phase),
            other => Err(format!("unknown subset `{other}` (all, magnitude, phase)")),
        }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Normalization {
    /// Subtract the training mean, divide by the training standard deviation.
    #[default]
    ZScore,
    /// Subtract the training minimum, divide by the training range.
    MinMax,
}

impl fmt::Display for Normalization {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Normalization::ZScore => "z-score",
            Normalization::MinMax => "min-max",
        })
    }
}

impl FromStr for Normalization {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "z-score" | "zscore" => Ok(Self::ZScore),
            "min-max" | "minmax" => Ok(Self::MinMax),
            other => Err(format!("unknown normalization `{other}` (z-score, min-max)")),
        }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub enum Regularization {
    /// `AUTO_RIDGE_FACTOR * trace(S_W) / p`.
    #[default]
    Auto,
    Fixed(f64),
}

#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct LdaConfig {
    pub regularization: Regularization,
    pub subset: FeatureSubset,
    pub normalization: Normalization,
}

/// Ordered, distinct class labels. Order is lexicographic.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LabelVocabulary {
    labels: Vec<String>,
}

impl LabelVocabulary {
    pub fn from_labels<S: AsRef<str>>(labels: &[S]) -> Result<Self, LdaError> {
        let mut sorted: Vec<String> = labels.iter().map(|l| l.as_ref().to_owned()).collect();
        sorted.sort();
        sorted.dedup();
        Self::new(sorted)
    }

    pub fn new(labels: Vec<String>) -> Result<Self, LdaError> {
        if labels.len() < 2 {
            return Err(LdaError::DegenerateClass(format!(
                "need at least 2 classes, found {}",
                labels.len()
            )));
        }
        let mut seen = labels.clone();
        seen.sort();
        seen.dedup();
        if seen.len() != labels.len() || labels.iter().any(String::is_empty) {
            return Err(LdaError::InvalidInput("labels must be unique and non-empty".into()));
        }
        Ok(Self { labels })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn labels(&self) -> &[String] {
        &self.labels
    }

    pub fn index_of(&self, label: &str) -> Option<usize> {
        self.labels.iter().position(|l| l == label)
    }
}

/// Per-coordinate affine normalization fit on training data.
#[derive(Debug, Clone, PartialEq)]
pub struct Standardizer {
    pub offset: Vec<f64>,
    pub scale: Vec<f64>,
}

impl Standardizer {
    pub fn fit<R: AsRef<[f64]>>(rows: &[R], method: Normalization) -> Self {
        let dim = rows[0].as_ref().len();
        let n = rows.len() as f64;
        let (offset, spread): (Vec<f64>, Vec<f64>) = match method {
            Normalization::ZScore => {
                let mut mean = vec![0.0; dim];
                for r in rows {
                    for (m, &v) in mean.iter_mut().zip(r.as_ref()) {
                        *m += v;
                    }
                }
                mean.iter_mut().for_each(|m| *m /= n);
                let mut var = vec![0.0; dim];
                for r in rows {
                    for ((s, &v), &m) in var.iter_mut().zip(r.as_ref()).zip(&mean) {
                        *s += (v - m) * (v - m);
                    }
                }
                let std = var.into_iter().map(|s| (s / n).sqrt()).collect();
                (mean, std)
            }
            Normalization::MinMax => {
                let mut lo = vec![f64::INFINITY; dim];
                let mut hi = vec![f64::NEG_INFINITY; dim];
                for r in rows {
                    for ((l, h), &v) in lo.iter_mut().zip(hi.iter_mut()).zip(r.as_ref()) {
                        *l = l.min(v);
                        *h = h.max(v);
                    }
                }
                let range = lo.iter().zip(&hi).map(|(l, h)| h - l).collect();
                (lo, range)
            }
        };
        Self {
            offset,
            scale: spread.into_iter().map(|s: f64| s.max(MIN_SCALE)).collect(),
        }
    }

    pub fn dim(&self) -> usize {
        self.offset.len()
    }

    /// Normalizes the coordinates listed in `indices`.
    pub fn apply_selected(&self, x: &[f64], indices: &[usize]) -> DVector<f64> {
        DVector::from_iterator(
            indices.len(),
            indices.iter().map(|&i| (x[i] - self.offset[i]) / self.scale[i]),
        )
    }
}

/// Result of scoring one feature vector.
#[derive(Debug, Clone, PartialEq)]
pub struct Prediction {
    pub index: usize,
    pub label: String,
    /// Softmax of the discriminant scores, in vocabulary order.
    pub posteriors: Vec<f64>,
    pub scores: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LdaModel {
    vocabulary: LabelVocabulary,
    standardizer: Standardizer,
    subset: FeatureSubset,
    normalization: Normalization,
    selected: Vec<usize>,
    regularization: f64,
    priors: Vec<f64>,
    /// One row per class, in the selected standardized space.
    class_means: DMatrix<f64>,
    /// Lower Cholesky factor of the pooled covariance.
    covariance_factor: DMatrix<f64>,
    /// `p x n_e`, columns ordered by decreasing eigenvalue.
    projection: DMatrix<f64>,
    eigenvalues: Vec<f64>,
    class_counts: Vec<usize>,
    // Derived from the stored fields above.
    coefficients: DMatrix<f64>,
    intercepts: Vec<f64>,
}

impl LdaModel {
    pub fn vocabulary(&self) -> &LabelVocabulary {
        &self.vocabulary
    }

    pub fn standardizer(&self) -> &Standardizer {
        &self.standardizer
    }

    pub fn subset(&self) -> FeatureSubset {
        self.subset
    }

    pub fn normalization(&self) -> Normalization {
        self.normalization
    }

    /// Expected feature length before subset selection.
    pub fn input_dim(&self) -> usize {
        self.standardizer.dim()
    }

    /// Number of coordinates kept by the subset selector.
    pub fn selected_dim(&self) -> usize {
        self.selected.len()
    }

    pub fn selected_indices(&self) -> &[usize] {
        &self.selected
    }

    /// Radial bin count implied by the input length, if it is a feature vector.
    pub fn bin_count(&self) -> Option<usize> {
        let d = self.input_dim();
        (d.is_multiple_of(6)).then_some(d / 6)
    }

    /// Ridge actually added to the within-class scatter.
    pub fn regularization(&self) -> f64 {
        self.regularization
    }

    pub fn priors(&self) -> &[f64] {
        &self.priors
    }

    pub fn class_counts(&self) -> &[usize] {
        &self.class_counts
    }

    pub fn class_means(&self) -> &DMatrix<f64> {
        &self.class_means
    }

    pub fn covariance_factor(&self) -> &DMatrix<f64> {
        &self.covariance_factor
    }

    /// Pooled covariance `L L'`.
    pub fn shared_covariance(&self) -> DMatrix<f64> {
        &self.covariance_factor * self.covariance_factor.transpose()
    }

    pub fn projection(&self) -> &DMatrix<f64> {
        &self.projection
    }

    /// Embedding dimension `n_e`.
    pub fn embedding_dim(&self) -> usize {
        self.projection.ncols()
    }

    pub fn eigenvalues(&self) -> &[f64] {
        &self.eigenvalues
    }

    fn prepare(&self, x: &[f64]) -> Result<DVector<f64>, LdaError> {
        if x.len() != self.input_dim() {
            return Err(LdaError::DimensionMismatch {
                expected: self.input_dim(),
                found: x.len(),
            });
        }
        Ok(self.standardizer.apply_selected(x, &self.selected))
    }

    /// Discriminant score of each class, in vocabulary order.
    pub fn decision_scores(&self, x: &[f64]) -> Result<Vec<f64>, LdaError> {
        let z = self.prepare(x)?;
        Ok(self.scores_of(&z))
    }

    fn scores_of(&self, z: &DVector<f64>) -> Vec<f64> {
        let s = &self.coefficients * z;
        s.iter().zip(&self.intercepts).map(|(a, b)| a + b).collect()
    }

    pub fn predict(&self, x: &[f64]) -> Result<Prediction, LdaError> {
        let scores = self.decision_scores(x)?;
        // First maximum wins, so ties go to the earlier vocabulary label.
        let mut index = 0;
        for (i, &s) in scores.iter().enumerate() {
            if s > scores[index] {
                index = i;
            }
        }
        let top = scores[index];
        let exp: Vec<f64> = scores.iter().map(|&s| (s - top).exp()).collect();
        let total: f64 = exp.iter().sum();
        Ok(Prediction {
            index,
            label: self.vocabulary.labels[index].clone(),
            posteriors: exp.into_iter().map(|e| e / total).collect(),
            scores,
        })
    }

    /// Labels for many rows.
    pub fn predict_labels<R: AsRef<[f64]>>(&self, rows: &[R]) -> Result<Vec<usize>, LdaError> {
        rows.iter().map(|r| self.predict(r.as_ref()).map(|p| p.index)).collect()
    }

    /// Projects onto the discriminant axes (standardized, subset-selected,
    /// then multiplied by the projection).
    pub fn transform(&self, x: &[f64]) -> Result<Vec<f64>, LdaError> {
        let z = self.prepare(x)?;
        Ok((self.projection.transpose() * z).iter().copied().collect())
    }

    /// Assembles a model from stored parameters and computes the derived
    /// classifier coefficients. Shared by fitting and loading so both paths
    /// produce bit-identical predictions.
    #[allow(clippy::too_many_arguments)]
    fn assemble(
        vocabulary: LabelVocabulary,
        standardizer: Standardizer,
        subset: FeatureSubset,
        normalization: Normalization,
        regularization: f64,
        priors: Vec<f64>,
        class_counts: Vec<usize>,
        class_means: DMatrix<f64>,
        covariance_factor: DMatrix<f64>,
        projection: DMatrix<f64>,
        eigenvalues: Vec<f64>,
    ) -> Result<Self, LdaError> {
        let selected = subset.indices(standardizer.dim())?;
        let p = selected.len();
        let m = vocabulary.len();
        let check = |expected: usize, found: usize| {
            if expected == found {
                Ok(())
            } else {
                Err(LdaError::DimensionMismatch { expected, found })
            }
        };
        check(p, class_means.ncols())?;
        check(m, class_means.nrows())?;
        check(p, covariance_factor.nrows())?;
        check(p, covariance_factor.ncols())?;
        check(p, projection.nrows())?;
        check(m, priors.len())?;
        check(m, class_counts.len())?;
        check(projection.ncols(), eigenvalues.len())?;
        if projection.ncols() > m - 1 {
            return Err(LdaError::InvalidModel(format!(
                "embedding dimension {} exceeds classes - 1 = {}",
                projection.ncols(),
                m - 1
            )));
        }
        if covariance_factor.diagonal().iter().any(|&d| d.is_nan() || d <= 0.0) {
            return Err(LdaError::InvalidModel("covariance factor has a non-positive diagonal".into()));
        }
        if priors.iter().any(|&p| p.is_nan() || p <= 0.0) {
            return Err(LdaError::InvalidModel("priors must be positive".into()));
        }

        let half = covariance_factor
            .solve_lower_triangular(&class_means.transpose())
            .ok_or_else(|| LdaError::InvalidModel("covariance factor is singular".into()))?;
        let coefficients = covariance_factor
            .tr_solve_lower_triangular(&half)
            .ok_or_else(|| LdaError::InvalidModel("covariance factor is singular".into()))?
            .transpose();
        let intercepts = (0..m)
            .map(|c| -0.5 * class_means.row(c).dot(&coefficients.row(c)) + priors[c].ln())
            .collect();
        Ok(Self {
            vocabulary,
            standardizer,
            subset,
            normalization,
            selected,
            regularization,
            priors,
            class_means,
            covariance_factor,
            projection,
            eigenvalues,
            class_counts,
            coefficients,
            intercepts,
        })
    }
}

/// Fits the reducer and classifier.
pub fn fit<R: AsRef<[f64]>, S: AsRef<str>>(
    features: &[R],
    labels: &[S],
    config: &LdaConfig,
) -> Result<LdaModel, LdaError> {
    if features.len() != labels.len() {
        return Err(LdaError::InvalidInput(format!(
            "{} feature rows but {} labels",
            features.len(),
            labels.len()
        )));
    }
    if features.is_empty() {
        return Err(LdaError::InvalidInput("no training rows".into()));
    }
    let dim = features[0].as_ref().len();
    for row in features {
        let row = row.as_ref();
        if row.len() != dim {
            return Err(LdaError::DimensionMismatch {
                expected: dim,
                found: row.len(),
            });
        }
        if row.iter().any(|v| !v.is_finite()) {
            return Err(LdaError::InvalidInput("non-finite feature value".into()));
        }
    }
    if let Regularization::Fixed(l) = config.regularization {
        if !(l >= 0.0 && l.is_finite()) {
            return Err(LdaError::InvalidInput(format!("regularization {l} must be finite and >= 0")));
        }
    }

    let mut counts_by_label: BTreeMap<&str, usize> = BTreeMap::new();
    for l in labels {
        *counts_by_label.entry(l.as_ref()).or_default() += 1;
    }
    let vocabulary = LabelVocabulary::new(counts_by_label.keys().map(|s| s.to_string()).collect())
        .map_err(|e| match counts_by_label.keys().next() {
            Some(only) if counts_by_label.len() == 1 => {
                LdaError::DegenerateClass(format!("only one class (`{only}`) present; need at least 2"))
            }
            _ => e,
        })?;
    if let Some((label, &n)) = counts_by_label.iter().find(|(_, &n)| n < 2) {
        return Err(LdaError::DegenerateClass(format!("class `{label}` has {n} sample(s); need at least 2")));
    }
    let class_counts: Vec<usize> = counts_by_label.values().copied().collect();
    let class_of: Vec<usize> = labels
        .iter()
        .map(|l| vocabulary.index_of(l.as_ref()).expect("label in vocabulary"))
        .collect();

    let standardizer = Standardizer::fit(features, config.normalization);
    let selected = config.subset.indices(dim)?;
    let p = selected.len();
    let n = features.len();
    let m = vocabulary.len();

    let z = DMatrix::from_fn(n, p, |i, j| {
        let k = selected[j];
        (features[i].as_ref()[k] - standardizer.offset[k]) / standardizer.scale[k]
    });

    let mut class_means = DMatrix::zeros(m, p);
    for (i, &c) in class_of.iter().enumerate() {
        let mut row = class_means.row_mut(c);
        row += z.row(i);
    }
    for (c, &count) in class_counts.iter().enumerate() {
        let mut row = class_means.row_mut(c);
        row /= count as f64;
    }
    let grand_mean = z.row_mean();

    let mut centered = z;
    for (i, &c) in class_of.iter().enumerate() {
        let mean = class_means.row(c).clone_owned();
        let mut row = centered.row_mut(i);
        row -= mean;
    }
    let mut within = centered.tr_mul(&centered);
    drop(centered);
    symmetrize(&mut within);

    let mut between = DMatrix::zeros(p, p);
    for (c, &count) in class_counts.iter().enumerate() {
        let diff = (class_means.row(c) - &grand_mean).transpose();
        between.ger(count as f64, &diff, &diff, 1.0);
    }
    symmetrize(&mut between);

    let lambda = match config.regularization {
        Regularization::Fixed(l) => l,
        Regularization::Auto => {
            let ridge = AUTO_RIDGE_FACTOR * within.trace() / p as f64;
            if ridge > 0.0 {
                ridge
            } else {
                AUTO_RIDGE_FACTOR
            }
        }
    };
    let mut regularized = within;
    for i in 0..p {
        regularized[(i, i)] += lambda;
    }
    let scale = regularized.diagonal().max();
    let factor = Cholesky::new(regularized)
        .ok_or(LdaError::SingularScatter)?
        .unpack();
    if factor.diagonal().iter().any(|&d| d * d <= 1e-13 * scale) {
        return Err(LdaError::SingularScatter);
    }

    // Whiten: C = L^-1 S_B L^-T, then v = L^-T y (up to scale).
    let half = factor.solve_lower_triangular(&between).ok_or(LdaError::SingularScatter)?;
    let mut whitened = factor
        .solve_lower_triangular(&half.transpose())
        .ok_or(LdaError::SingularScatter)?;
    symmetrize(&mut whitened);
    let eigen = SymmetricEigen::new(whitened);
    let mut order: Vec<usize> = (0..p).collect();
    order.sort_by(|&a, &b| eigen.eigenvalues[b].total_cmp(&eigen.eigenvalues[a]).then(a.cmp(&b)));
    let n_e = (m - 1).min(p);
    let top = eigen.eigenvalues[order[0]].max(0.0);
    let mut eigenvalues = Vec::with_capacity(n_e);
    let mut directions = DMatrix::zeros(p, n_e);
    for (k, &idx) in order.iter().take(n_e).enumerate() {
        let w = eigen.eigenvalues[idx];
        eigenvalues.push(if w < EIGEN_RELATIVE_CUTOFF * top { 0.0 } else { w });
        directions.set_column(k, &eigen.eigenvectors.column(idx));
    }
    // Scale against the pooled covariance so embedded classes have unit
    // within-class variance.
    let dof = (n - m) as f64;
    let covariance_factor = factor / dof.sqrt();
    let mut projection = covariance_factor
        .tr_solve_lower_triangular(&directions)
        .ok_or(LdaError::SingularScatter)?;
    for k in 0..n_e {
        let mut col = projection.column_mut(k);
        let pivot = col.iter().copied().fold(0.0f64, |acc, v| if v.abs() > acc.abs() { v } else { acc });
        if pivot < 0.0 {
            col.neg_mut();
        }
    }

    let priors = class_counts.iter().map(|&c| c as f64 / n as f64).collect();

    LdaModel::assemble(
        vocabulary,
        standardizer,
        config.subset,
        config.normalization,
        lambda,
        priors,
        class_counts,
        class_means,
        covariance_factor,
        projection,
        eigenvalues,
    )
}

fn symmetrize(m: &mut DMatrix<f64>) {
    let n = m.nrows();
    for i in 0..n {
        for j in 0..i {
            let v = 0.5 * (m[(i, j)] + m[(j, i)]);
            m[(i, j)] = v;
            m[(j, i)] = v;
        }
    }
}
