//! CSV feature files: `path,label,prompt_id,f_0,...,f_{6n_r-1}`.
//!
//! Values are written with 17 significant digits so every `f64` survives a
//! write/read cycle unchanged.

use std::fs::File;
use std::io::{self, BufWriter, Write};
use std::path::{Path, PathBuf};

use thiserror::Error;

use crate::image_io::{parse_prompt_id, ManifestEntry, MANIFEST_HEADER};
use crate::radial::FeatureVector;

#[derive(Debug, Error)]
pub enum FeatureFileError {
    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: io::Error,
    },
    #[error("feature file {path}, line {line}: {message}")]
    Parse {
        path: PathBuf,
        line: u64,
        message: String,
    },
    #[error("feature file {0} has no rows")]
    Empty(PathBuf),
    #[error("feature vector has {found} values but the file holds {expected}")]
    LengthMismatch { expected: usize, found: usize },
}

/// Formats one value with 17 significant digits.
pub fn format_value(v: f64) -> String {
    format!("{v:.16e}")
}

fn header(dim: usize) -> Vec<String> {
    MANIFEST_HEADER
        .iter()
        .map(|s| s.to_string())
        .chain((0..dim).map(|i| format!("f_{i}")))
        .collect()
}

/// Streams rows to a feature file.
pub struct FeatureWriter {
    path: PathBuf,
    dim: usize,
    inner: csv::Writer<BufWriter<File>>,
}

impl FeatureWriter {
    pub fn create(path: impl AsRef<Path>, bin_count: usize) -> Result<Self, FeatureFileError> {
        let path = path.as_ref().to_path_buf();
        let file = File::create(&path).map_err(|source| FeatureFileError::Io {
            path: path.clone(),
            source,
        })?;
        let dim = 6 * bin_count;
        let mut inner = csv::Writer::from_writer(BufWriter::new(file));
        inner
            .write_record(header(dim))
            .map_err(|e| csv_io(&path, e))?;
        Ok(Self { path, dim, inner })
    }

    pub fn write_row(&mut self, entry: &ManifestEntry, features: &FeatureVector) -> Result<(), FeatureFileError> {
        if features.len() != self.dim {
            return Err(FeatureFileError::LengthMismatch {
                expected: self.dim,
                found: features.len(),
            });
        }
        let mut record = Vec::with_capacity(self.dim + 3);
        record.push(entry.path.to_string_lossy().into_owned());
        record.push(entry.label.clone());
        record.push(entry.prompt_id.map(|p| p.to_string()).unwrap_or_default());
        record.extend(features.values().iter().map(|&v| format_value(v)));
        self.inner.write_record(&record).map_err(|e| csv_io(&self.path, e))
    }

    pub fn finish(mut self) -> Result<(), FeatureFileError> {
        self.inner.flush().map_err(|source| FeatureFileError::Io {
            path: self.path.clone(),
            source,
        })?;
        let buf = self.inner.into_inner().map_err(|e| FeatureFileError::Io {
            path: self.path.clone(),
            source: io::Error::other(e.to_string()),
        })?;
        buf.into_inner()
            .map_err(|e| FeatureFileError::Io {
                path: self.path.clone(),
                source: e.into_error(),
            })?
            .flush()
            .map_err(|source| FeatureFileError::Io {
                path: self.path.clone(),
                source,
            })
    }
}

fn csv_io(path: &Path, e: csv::Error) -> FeatureFileError {
    FeatureFileError::Io {
        path: path.to_path_buf(),
        source: io::Error::other(e),
    }
}

/// Rows of a feature file, in file order.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureTable {
    pub entries: Vec<ManifestEntry>,
    pub features: Vec<FeatureVector>,
}

impl FeatureTable {
    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn bin_count(&self) -> usize {
        self.features.first().map_or(0, FeatureVector::bin_count)
    }

    pub fn labels(&self) -> Vec<&str> {
        self.entries.iter().map(|e| e.label.as_str()).collect()
    }

    pub fn write(&self, path: impl AsRef<Path>) -> Result<(), FeatureFileError> {
        let mut w = FeatureWriter::create(path, self.bin_count())?;
        for (e, f) in self.entries.iter().zip(&self.features) {
            w.write_row(e, f)?;
        }
        w.finish()
    }
}

/// Reads a feature file. Paths are taken verbatim.
pub fn read_features(path: impl AsRef<Path>) -> Result<FeatureTable, FeatureFileError> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|source| FeatureFileError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    let parse_err = |line: u64, message: String| FeatureFileError::Parse {
        path: path.to_path_buf(),
        line,
        message,
    };
    let mut reader = csv::ReaderBuilder::new().has_headers(true).from_reader(file);
    let head = reader.headers().map_err(|e| parse_err(1, e.to_string()))?.clone();
    if head.is_empty() {
        return Err(FeatureFileError::Empty(path.to_path_buf()));
    }
    let dim = head.len().saturating_sub(3);
    if dim == 0 || dim % 6 != 0 {
        return Err(parse_err(1, format!("{dim} feature columns is not a positive multiple of 6")));
    }
    let expected = header(dim);
    if let Some((i, (found, want))) = head.iter().zip(&expected).enumerate().find(|(_, (a, b))| a != b) {
        return Err(parse_err(1, format!("column {i} is `{found}`, expected `{want}`")));
    }

    let mut table = FeatureTable {
        entries: Vec::new(),
        features: Vec::new(),
    };
    for record in reader.records() {
        let record = record.map_err(|e| parse_err(e.position().map_or(0, |p| p.line()), e.to_string()))?;
        let line = record.position().map_or(0, |p| p.line());
        if record[1].is_empty() {
            return Err(parse_err(line, "empty label".into()));
        }
        let prompt_id = parse_prompt_id(&record[2]).map_err(|m| parse_err(line, m))?;
        let values = record
            .iter()
            .skip(3)
            .map(|s| {
                s.trim()
                    .parse::<f64>()
                    .ok()
                    .filter(|v| v.is_finite())
                    .ok_or_else(|| parse_err(line, format!("bad feature value `{s}`")))
            })
            .collect::<Result<Vec<_>, _>>()?;
        table
            .entries
            .push(ManifestEntry::new(&record[0], &record[1], prompt_id));
        table
            .features
            .push(FeatureVector::from_values(values).expect("column count checked against header"));
    }
    if table.is_empty() {
        return Err(FeatureFileError::Empty(path.to_path_buf()));
    }
    Ok(table)
}
