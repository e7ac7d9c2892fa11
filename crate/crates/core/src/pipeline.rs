//! Batch feature extraction over manifest entries.

use std::collections::HashMap;
use std::path::Path;
use std::sync::{Arc, Mutex};

use rayon::prelude::*;
use thiserror::Error;

use crate::feature_table::FeatureTable;
use crate::image_io::{decode_image, ImageIoError, ManifestEntry};
use crate::radial::{FeatureExtractor, FeatureVector, RadialError};

#[derive(Debug, Error)]
pub enum ExtractError {
    #[error(transparent)]
    Image(#[from] ImageIoError),
    #[error(transparent)]
    Radial(#[from] RadialError),
}

/// Extractors keyed by image size, shared across worker threads.
#[derive(Debug)]
pub struct ExtractorCache {
    bin_count: usize,
    extractors: Mutex<HashMap<(usize, usize), Arc<FeatureExtractor>>>,
}

impl ExtractorCache {
    pub fn new(bin_count: usize) -> Self {
        Self {
            bin_count,
            extractors: Mutex::new(HashMap::new()),
        }
    }

    pub fn bin_count(&self) -> usize {
        self.bin_count
    }

    pub fn get(&self, rows: usize, cols: usize) -> Result<Arc<FeatureExtractor>, RadialError> {
        let mut map = self.extractors.lock().unwrap_or_else(|e| e.into_inner());
        if let Some(x) = map.get(&(rows, cols)) {
            return Ok(Arc::clone(x));
        }
        let x = Arc::new(FeatureExtractor::new(rows, cols, self.bin_count)?);
        map.insert((rows, cols), Arc::clone(&x));
        Ok(x)
    }

    /// Decodes one file and extracts its feature vector.
    pub fn extract_file(&self, path: impl AsRef<Path>) -> Result<FeatureVector, ExtractError> {
        let image = decode_image(path)?;
        Ok(self.get(image.rows(), image.cols())?.extract(&image)?)
    }
}

/// Rows that extracted, in manifest order, plus the entries that failed.
#[derive(Debug)]
pub struct ExtractionOutcome {
    pub table: FeatureTable,
    pub failures: Vec<(ManifestEntry, ExtractError)>,
}

/// Extracts every entry on the current rayon pool. Output order follows
/// `entries` whatever the scheduling.
pub fn extract_entries(entries: &[ManifestEntry], bin_count: usize) -> ExtractionOutcome {
    let cache = ExtractorCache::new(bin_count);
    let results: Vec<Result<FeatureVector, ExtractError>> =
        entries.par_iter().map(|e| cache.extract_file(&e.path)).collect();
    let mut table = FeatureTable {
        entries: Vec::new(),
        features: Vec::new(),
    };
    let mut failures = Vec::new();
    for (entry, result) in entries.iter().zip(results) {
        match result {
            Ok(f) => {
                table.entries.push(entry.clone());
                table.features.push(f);
            }
            Err(e) => failures.push((entry.clone(), e)),
        }
    }
    ExtractionOutcome { table, failures }
}
