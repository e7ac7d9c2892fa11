//! JSON model documents.
//!
//! Object keys keep a fixed order, matrices are written one row per line and
//! floats use shortest round-trip formatting, so save -> load -> save is
//! byte-identical. The covariance is stored as its lower Cholesky factor,
//! packed row by row (row `i` holds `i + 1` entries).

use std::path::Path;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};
use serde_json::Value;

use super::{FeatureSubset, LabelVocabulary, LdaError, LdaModel, Normalization, Standardizer};

pub const MODEL_FORMAT_VERSION: u32 = 1;
const MODEL_FORMAT: &str = "prism-lda-model";

#[derive(Serialize, Deserialize)]
struct StandardizerDoc {
    offset: Vec<f64>,
    scale: Vec<f64>,
}

#[derive(Serialize, Deserialize)]
struct ModelDoc {
    format: String,
    format_version: u32,
    bin_count: Option<usize>,
    input_dim: usize,
    subset: FeatureSubset,
    normalization: Normalization,
    regularization: f64,
    vocabulary: Vec<String>,
    class_counts: Vec<usize>,
    priors: Vec<f64>,
    eigenvalues: Vec<f64>,
    standardizer: StandardizerDoc,
    class_means: Vec<Vec<f64>>,
    covariance_cholesky: Vec<Vec<f64>>,
    projection: Vec<Vec<f64>>,
}

fn rows_of(m: &DMatrix<f64>) -> Vec<Vec<f64>> {
    m.row_iter().map(|r| r.iter().copied().collect()).collect()
}

fn matrix_from_rows(rows: &[Vec<f64>], ncols: usize, what: &str) -> Result<DMatrix<f64>, LdaError> {
    if let Some(bad) = rows.iter().find(|r| r.len() != ncols) {
        log::debug!("{what}: row length {}, expected {ncols}", bad.len());
        return Err(LdaError::DimensionMismatch {
            expected: ncols,
            found: bad.len(),
        });
    }
    Ok(DMatrix::from_fn(rows.len(), ncols, |i, j| rows[i][j]))
}

/// Writes a JSON value with two-space indentation, putting each row of a
/// nested numeric array on its own line.
fn write_value(out: &mut String, value: &Value, indent: usize) {
    let pad = "  ".repeat(indent);
    match value {
        Value::Object(map) => {
            out.push_str("{\n");
            for (i, (k, v)) in map.iter().enumerate() {
                out.push_str(&pad);
                out.push_str("  ");
                out.push_str(&serde_json::to_string(k).expect("string key"));
                out.push_str(": ");
                write_value(out, v, indent + 1);
                if i + 1 < map.len() {
                    out.push(',');
                }
                out.push('\n');
            }
            out.push_str(&pad);
            out.push('}');
        }
        Value::Array(items) if items.iter().any(|v| v.is_array() || v.is_object()) => {
            out.push_str("[\n");
            for (i, v) in items.iter().enumerate() {
                out.push_str(&pad);
                out.push_str("  ");
                write_value(out, v, indent + 1);
                if i + 1 < items.len() {
                    out.push(',');
                }
                out.push('\n');
            }
            out.push_str(&pad);
            out.push(']');
        }
        leaf => out.push_str(&serde_json::to_string(leaf).expect("serializable leaf")),
    }
}

/// Renders any serializable document in the layout used by model and
/// report files.
pub(crate) fn render_document<T: Serialize>(doc: &T) -> String {
    let value = serde_json::to_value(doc).expect("document serializes");
    let mut out = String::new();
    write_value(&mut out, &value, 0);
    out.push('\n');
    out
}

impl LdaModel {
    pub fn to_document(&self) -> String {
        let doc = ModelDoc {
            format: MODEL_FORMAT.into(),
            format_version: MODEL_FORMAT_VERSION,
            bin_count: self.bin_count(),
            input_dim: self.input_dim(),
            subset: self.subset,
            normalization: self.normalization,
            regularization: self.regularization,
            vocabulary: self.vocabulary.labels.clone(),
            class_counts: self.class_counts.clone(),
            priors: self.priors.clone(),
            eigenvalues: self.eigenvalues.clone(),
            standardizer: StandardizerDoc {
                offset: self.standardizer.offset.clone(),
                scale: self.standardizer.scale.clone(),
            },
            class_means: rows_of(&self.class_means),
            covariance_cholesky: (0..self.covariance_factor.nrows())
                .map(|i| (0..=i).map(|j| self.covariance_factor[(i, j)]).collect())
                .collect(),
            projection: rows_of(&self.projection),
        };
        render_document(&doc)
    }

    pub fn from_document(text: &str) -> Result<Self, LdaError> {
        let doc: ModelDoc =
            serde_json::from_str(text).map_err(|e| LdaError::InvalidModel(e.to_string()))?;
        if doc.format != MODEL_FORMAT {
            return Err(LdaError::InvalidModel(format!("unexpected format `{}`", doc.format)));
        }
        if doc.format_version != MODEL_FORMAT_VERSION {
            return Err(LdaError::InvalidModel(format!(
                "unsupported format_version {} (expected {MODEL_FORMAT_VERSION})",
                doc.format_version
            )));
        }
        let d = doc.input_dim;
        for (what, len) in [("standardizer.offset", doc.standardizer.offset.len()), ("standardizer.scale", doc.standardizer.scale.len())] {
            if len != d {
                log::debug!("{what} has {len} entries, input_dim is {d}");
                return Err(LdaError::DimensionMismatch { expected: d, found: len });
            }
        }
        if doc.bin_count.is_some_and(|n| 6 * n != d) {
            return Err(LdaError::DimensionMismatch {
                expected: d,
                found: 6 * doc.bin_count.unwrap_or(0),
            });
        }
        if doc.standardizer.scale.iter().any(|&s| s.is_nan() || s <= 0.0) {
            return Err(LdaError::InvalidModel("standardizer scales must be positive".into()));
        }
        let vocabulary = LabelVocabulary::new(doc.vocabulary)?;
        let p = doc.class_means.first().map_or(0, Vec::len);
        let class_means = matrix_from_rows(&doc.class_means, p, "class_means")?;
        let n_e = doc.projection.first().map_or(0, Vec::len);
        let projection = matrix_from_rows(&doc.projection, n_e, "projection")?;
        let rows = doc.covariance_cholesky.len();
        let mut factor = DMatrix::zeros(rows, rows);
        for (i, row) in doc.covariance_cholesky.iter().enumerate() {
            if row.len() != i + 1 {
                return Err(LdaError::DimensionMismatch {
                    expected: i + 1,
                    found: row.len(),
                });
            }
            for (j, &v) in row.iter().enumerate() {
                factor[(i, j)] = v;
            }
        }
        let total: f64 = doc.priors.iter().sum();
        if (total - 1.0).abs() > 1e-9 {
            return Err(LdaError::InvalidModel(format!("priors sum to {total}")));
        }
        LdaModel::assemble(
            vocabulary,
            Standardizer {
                offset: doc.standardizer.offset,
                scale: doc.standardizer.scale,
            },
            doc.subset,
            doc.normalization,
            doc.regularization,
            doc.priors,
            doc.class_counts,
            class_means,
            factor,
            projection,
            doc.eigenvalues,
        )
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<(), LdaError> {
        std::fs::write(path, self.to_document())?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, LdaError> {
        Self::from_document(&std::fs::read_to_string(path)?)
    }
}
