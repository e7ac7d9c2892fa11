//! Resampled train/test evaluation.
//!
//! Splits keep short/long prompt couples together: prompt ids `i` and
//! `i + 20` form pair-group `i`, and a split sends whole pair-groups to the
//! test side. Each split draws from its own random stream derived from
//! `(seed, split index)`, so adding splits never changes earlier ones.

mod report;

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::str::FromStr;

use rand::seq::{index, SliceRandom};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::feature_table::FeatureTable;
use crate::image_io::ManifestEntry;
use crate::lda::{self, FeatureSubset, LabelVocabulary, LdaConfig, LdaError};

pub use report::{ablation_document, summary_document, REPORT_SCHEMA_VERSION};

/// Number of short/long prompt couples.
pub const PROMPT_PAIR_COUNT: usize = 20;

/// Label given to generated images by [`binarize`].
pub const FAKE_LABEL: &str = "fake";
/// Label given to everything else by [`binarize`].
pub const REAL_LABEL: &str = "real";

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("entry {index} ({path}) has no prompt_id, required for prompt-pair grouping")]
    MissingPromptId { index: usize, path: String },
    #[error("invalid split ratio {0}")]
    InvalidRatio(f64),
    #[error("split count must be at least 1")]
    InvalidSplitCount,
    #[error("split {index} has an empty {side} set")]
    EmptySplit { index: usize, side: &'static str },
    #[error("invalid published split: {0}")]
    InvalidPublished(String),
    #[error("label `{0}` is not in the vocabulary")]
    UnknownLabel(String),
    #[error("{truth} true labels but {predicted} predictions")]
    LengthMismatch { truth: usize, predicted: usize },
    #[error("no samples to score")]
    Empty,
    #[error("class `{0}` would be empty")]
    EmptyClass(String),
    #[error("split {split}: {source}")]
    Split {
        split: usize,
        #[source]
        source: LdaError,
    },
    #[error(transparent)]
    Lda(#[from] LdaError),
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Grouping {
    #[default]
    PromptPairs,
    RandomStratified,
    Published,
}

impl fmt::Display for Grouping {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Grouping::PromptPairs => "prompt-pairs",
            Grouping::RandomStratified => "random-stratified",
            Grouping::Published => "published",
        })
    }
}

impl FromStr for Grouping {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "prompt-pairs" => Ok(Self::PromptPairs),
            "random-stratified" => Ok(Self::RandomStratified),
            "published" => Ok(Self::Published),
            other => Err(format!(
                "unknown grouping `{other}` (prompt-pairs, random-stratified, published)"
            )),
        }
    }
}

/// How to draw splits. `Published` carries the externally supplied test
/// indices; everything else is training data.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum SplitStrategy {
    PromptPairs,
    RandomStratified,
    Published { test: Vec<usize> },
}

impl SplitStrategy {
    pub fn grouping(&self) -> Grouping {
        match self {
            SplitStrategy::PromptPairs => Grouping::PromptPairs,
            SplitStrategy::RandomStratified => Grouping::RandomStratified,
            SplitStrategy::Published { .. } => Grouping::Published,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct SplitSpec {
    pub index: usize,
    pub seed: u64,
    pub grouping: Grouping,
    pub train: Vec<usize>,
    pub test: Vec<usize>,
    /// Pair-groups (1..=20) placed in the test set; empty for other groupings.
    pub test_groups: Vec<u8>,
}

/// Pair-group of a prompt id in `1..=40`.
pub fn pair_group(prompt_id: u8) -> u8 {
    (prompt_id - 1) % PROMPT_PAIR_COUNT as u8 + 1
}

/// Random stream for split `index`.
pub fn split_rng(seed: u64, index: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(index as u64);
    rng
}

/// Draws `n_splits` train/test partitions. `ratio` is the training share.
/// A published split is returned once regardless of `n_splits`.
pub fn make_splits(
    entries: &[ManifestEntry],
    n_splits: usize,
    ratio: f64,
    strategy: &SplitStrategy,
    seed: u64,
) -> Result<Vec<SplitSpec>, EvalError> {
    if n_splits == 0 {
        return Err(EvalError::InvalidSplitCount);
    }
    if !(ratio > 0.0 && ratio < 1.0) {
        return Err(EvalError::InvalidRatio(ratio));
    }
    match strategy {
        SplitStrategy::PromptPairs => prompt_pair_splits(entries, n_splits, ratio, seed),
        SplitStrategy::RandomStratified => (0..n_splits)
            .map(|i| stratified_split(entries, i, ratio, seed))
            .collect(),
        SplitStrategy::Published { test } => published_split(entries.len(), test, seed).map(|s| vec![s]),
    }
}

fn prompt_pair_splits(
    entries: &[ManifestEntry],
    n_splits: usize,
    ratio: f64,
    seed: u64,
) -> Result<Vec<SplitSpec>, EvalError> {
    let train_groups = ratio * PROMPT_PAIR_COUNT as f64;
    let rounded = train_groups.round();
    if (train_groups - rounded).abs() > 1e-9 || rounded < 1.0 || rounded >= PROMPT_PAIR_COUNT as f64 {
        return Err(EvalError::InvalidRatio(ratio));
    }
    let test_count = PROMPT_PAIR_COUNT - rounded as usize;
    let groups = entries
        .iter()
        .enumerate()
        .map(|(i, e)| {
            e.prompt_id.map(pair_group).ok_or_else(|| EvalError::MissingPromptId {
                index: i,
                path: e.path.display().to_string(),
            })
        })
        .collect::<Result<Vec<u8>, _>>()?;

    (0..n_splits)
        .map(|index| {
            let mut rng = split_rng(seed, index);
            let mut test_groups: Vec<u8> = index::sample(&mut rng, PROMPT_PAIR_COUNT, test_count)
                .into_iter()
                .map(|g| g as u8 + 1)
                .collect();
            test_groups.sort_unstable();
            let (test, train): (Vec<usize>, Vec<usize>) =
                (0..entries.len()).partition(|&i| test_groups.binary_search(&groups[i]).is_ok());
            check_nonempty(index, &train, &test)?;
            Ok(SplitSpec {
                index,
                seed,
                grouping: Grouping::PromptPairs,
                train,
                test,
                test_groups,
            })
        })
        .collect()
}

fn stratified_split(entries: &[ManifestEntry], index: usize, ratio: f64, seed: u64) -> Result<SplitSpec, EvalError> {
    let mut by_label: BTreeMap<&str, Vec<usize>> = BTreeMap::new();
    for (i, e) in entries.iter().enumerate() {
        by_label.entry(e.label.as_str()).or_default().push(i);
    }
    let mut rng = split_rng(seed, index);
    let mut test = Vec::new();
    for members in by_label.values_mut() {
        members.shuffle(&mut rng);
        let n = members.len();
        let mut n_test = (n as f64 * (1.0 - ratio)).round() as usize;
        if n >= 2 {
            n_test = n_test.clamp(1, n - 1);
        }
        test.extend_from_slice(&members[..n_test]);
    }
    test.sort_unstable();
    let train = complement(entries.len(), &test);
    check_nonempty(index, &train, &test)?;
    Ok(SplitSpec {
        index,
        seed,
        grouping: Grouping::RandomStratified,
        train,
        test,
        test_groups: Vec::new(),
    })
}

fn published_split(n: usize, test: &[usize], seed: u64) -> Result<SplitSpec, EvalError> {
    let unique: BTreeSet<usize> = test.iter().copied().collect();
    if unique.len() != test.len() {
        return Err(EvalError::InvalidPublished("duplicate test indices".into()));
    }
    if let Some(&bad) = unique.iter().find(|&&i| i >= n) {
        return Err(EvalError::InvalidPublished(format!("test index {bad} out of range for {n} entries")));
    }
    let test: Vec<usize> = unique.into_iter().collect();
    let train = complement(n, &test);
    check_nonempty(0, &train, &test)?;
    Ok(SplitSpec {
        index: 0,
        seed,
        grouping: Grouping::Published,
        train,
        test,
        test_groups: Vec::new(),
    })
}

fn complement(n: usize, sorted: &[usize]) -> Vec<usize> {
    (0..n).filter(|i| sorted.binary_search(i).is_err()).collect()
}

fn check_nonempty(index: usize, train: &[usize], test: &[usize]) -> Result<(), EvalError> {
    if train.is_empty() {
        return Err(EvalError::EmptySplit { index, side: "train" });
    }
    if test.is_empty() {
        return Err(EvalError::EmptySplit { index, side: "test" });
    }
    Ok(())
}

/// Classification metrics with support-weighted averages.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MetricsReport {
    pub accuracy: f64,
    pub weighted_precision: f64,
    pub weighted_recall: f64,
    pub weighted_f1: f64,
    /// Rows are true classes, columns predicted classes.
    pub confusion: Vec<Vec<u64>>,
    pub precision: Vec<f64>,
    pub recall: Vec<f64>,
    pub f1: Vec<f64>,
    pub support: Vec<u64>,
}

/// Metrics from class indices. Both slices must be non-empty, of equal
/// length, and hold indices below `n_classes`.
pub fn metrics_from_indices(truth: &[usize], predicted: &[usize], n_classes: usize) -> Result<MetricsReport, EvalError> {
    if truth.len() != predicted.len() {
        return Err(EvalError::LengthMismatch {
            truth: truth.len(),
            predicted: predicted.len(),
        });
    }
    if truth.is_empty() {
        return Err(EvalError::Empty);
    }
    if let Some(&bad) = truth.iter().chain(predicted).find(|&&c| c >= n_classes) {
        return Err(EvalError::UnknownLabel(format!("class index {bad}")));
    }
    let mut confusion = vec![vec![0u64; n_classes]; n_classes];
    for (&t, &p) in truth.iter().zip(predicted) {
        confusion[t][p] += 1;
    }
    let total = truth.len() as f64;
    let support: Vec<u64> = confusion.iter().map(|row| row.iter().sum()).collect();
    let predicted_counts: Vec<u64> = (0..n_classes).map(|c| confusion.iter().map(|row| row[c]).sum()).collect();

    let ratio = |num: u64, den: u64| if den == 0 { 0.0 } else { num as f64 / den as f64 };
    let precision: Vec<f64> = (0..n_classes).map(|c| ratio(confusion[c][c], predicted_counts[c])).collect();
    let recall: Vec<f64> = (0..n_classes).map(|c| ratio(confusion[c][c], support[c])).collect();
    let f1: Vec<f64> = precision
        .iter()
        .zip(&recall)
        .map(|(&p, &r)| if p + r == 0.0 { 0.0 } else { 2.0 * p * r / (p + r) })
        .collect();
    let weighted = |v: &[f64]| -> f64 { v.iter().zip(&support).map(|(x, &s)| x * s as f64 / total).sum() };
    let correct: u64 = (0..n_classes).map(|c| confusion[c][c]).sum();
    Ok(MetricsReport {
        accuracy: correct as f64 / total,
        weighted_precision: weighted(&precision),
        weighted_recall: weighted(&recall),
        weighted_f1: weighted(&f1),
        confusion,
        precision,
        recall,
        f1,
        support,
    })
}

pub fn compute_metrics<S: AsRef<str>, P: AsRef<str>>(
    truth: &[S],
    predicted: &[P],
    vocabulary: &LabelVocabulary,
) -> Result<MetricsReport, EvalError> {
    let lookup = |l: &str| vocabulary.index_of(l).ok_or_else(|| EvalError::UnknownLabel(l.to_owned()));
    let t = truth.iter().map(|l| lookup(l.as_ref())).collect::<Result<Vec<_>, _>>()?;
    let p = predicted.iter().map(|l| lookup(l.as_ref())).collect::<Result<Vec<_>, _>>()?;
    metrics_from_indices(&t, &p, vocabulary.len())
}

/// Mean, sample standard deviation, and spread of one metric across splits.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct MetricSummary {
    pub mean: f64,
    pub std: f64,
    pub p5: f64,
    pub p95: f64,
    pub min: f64,
    pub max: f64,
}

/// Percentile `q` in `[0, 1]` of sorted data, interpolating linearly
/// between order statistics at rank `(n - 1) q`.
pub fn percentile(sorted: &[f64], q: f64) -> f64 {
    let h = (sorted.len() - 1) as f64 * q;
    let lo = h.floor() as usize;
    let hi = (lo + 1).min(sorted.len() - 1);
    sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo])
}

impl MetricSummary {
    pub fn of(values: &[f64]) -> Self {
        let n = values.len() as f64;
        let mean = values.iter().sum::<f64>() / n;
        let std = if values.len() > 1 {
            (values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt()
        } else {
            0.0
        };
        let mut sorted = values.to_vec();
        sorted.sort_by(f64::total_cmp);
        Self {
            mean,
            std,
            p5: percentile(&sorted, 0.05),
            p95: percentile(&sorted, 0.95),
            min: sorted[0],
            max: sorted[sorted.len() - 1],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SplitOutcome {
    pub index: usize,
    pub test_groups: Vec<u8>,
    pub train_size: usize,
    pub test_size: usize,
    pub train_accuracy: f64,
    pub metrics: MetricsReport,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ResamplingSummary {
    pub n_splits: usize,
    pub grouping: Grouping,
    pub subset: FeatureSubset,
    pub vocabulary: Vec<String>,
    pub accuracy: MetricSummary,
    pub weighted_precision: MetricSummary,
    pub weighted_recall: MetricSummary,
    pub weighted_f1: MetricSummary,
    pub train_accuracy: MetricSummary,
    /// Split whose (accuracy, f1) is closest to the across-split means.
    pub average_split: usize,
    /// Splits whose test pair-groups repeat an earlier split's.
    pub duplicate_splits: usize,
    pub splits: Vec<SplitOutcome>,
}

impl ResamplingSummary {
    pub fn average(&self) -> &SplitOutcome {
        &self.splits[self.average_split]
    }

    pub fn accuracies(&self) -> Vec<f64> {
        self.splits.iter().map(|s| s.metrics.accuracy).collect()
    }
}

/// Index minimizing the squared distance of `(accuracy, f1)` to the means;
/// the lowest index wins ties.
pub fn select_average_split(points: &[(f64, f64)]) -> usize {
    let n = points.len() as f64;
    let ma = points.iter().map(|p| p.0).sum::<f64>() / n;
    let mf = points.iter().map(|p| p.1).sum::<f64>() / n;
    let mut best = 0;
    let mut best_dev = f64::INFINITY;
    for (i, &(a, f)) in points.iter().enumerate() {
        let dev = (a - ma).powi(2) + (f - mf).powi(2);
        if dev < best_dev {
            best = i;
            best_dev = dev;
        }
    }
    best
}

fn evaluate_split(
    table: &FeatureTable,
    vocabulary: &LabelVocabulary,
    split: &SplitSpec,
    config: &LdaConfig,
) -> Result<SplitOutcome, EvalError> {
    let wrap = |source| EvalError::Split {
        split: split.index,
        source,
    };
    let train_x: Vec<&[f64]> = split.train.iter().map(|&i| table.features[i].values()).collect();
    let train_y: Vec<&str> = split.train.iter().map(|&i| table.entries[i].label.as_str()).collect();
    let model = lda::fit(&train_x, &train_y, config).map_err(wrap)?;

    let to_global = |local: usize| {
        vocabulary
            .index_of(&model.vocabulary().labels()[local])
            .expect("model labels come from the table")
    };
    let truth_of = |idx: &[usize]| -> Vec<usize> {
        idx.iter()
            .map(|&i| vocabulary.index_of(&table.entries[i].label).expect("table label"))
            .collect()
    };
    let predict = |idx: &[usize]| -> Result<Vec<usize>, EvalError> {
        idx.iter()
            .map(|&i| model.predict(table.features[i].values()).map(|p| to_global(p.index)).map_err(wrap))
            .collect()
    };

    let train_pred = predict(&split.train)?;
    let train_truth = truth_of(&split.train);
    let train_hits = train_pred.iter().zip(&train_truth).filter(|(a, b)| a == b).count();
    let test_pred = predict(&split.test)?;
    let metrics = metrics_from_indices(&truth_of(&split.test), &test_pred, vocabulary.len())?;
    Ok(SplitOutcome {
        index: split.index,
        test_groups: split.test_groups.clone(),
        train_size: split.train.len(),
        test_size: split.test.len(),
        train_accuracy: train_hits as f64 / split.train.len() as f64,
        metrics,
    })
}

/// Fits and scores every split (in parallel) and aggregates the results.
pub fn run_protocol(table: &FeatureTable, splits: &[SplitSpec], config: &LdaConfig) -> Result<ResamplingSummary, EvalError> {
    if splits.is_empty() {
        return Err(EvalError::InvalidSplitCount);
    }
    let vocabulary = LabelVocabulary::from_labels(&table.labels())?;
    let outcomes = splits
        .par_iter()
        .map(|s| evaluate_split(table, &vocabulary, s, config))
        .collect::<Result<Vec<_>, _>>()?;

    let column = |f: &dyn Fn(&SplitOutcome) -> f64| MetricSummary::of(&outcomes.iter().map(f).collect::<Vec<_>>());
    let points: Vec<(f64, f64)> = outcomes.iter().map(|o| (o.metrics.accuracy, o.metrics.weighted_f1)).collect();
    let mut seen = BTreeSet::new();
    let duplicate_splits = splits
        .iter()
        .filter(|s| !s.test_groups.is_empty() && !seen.insert(s.test_groups.clone()))
        .count();
    Ok(ResamplingSummary {
        n_splits: splits.len(),
        grouping: splits[0].grouping,
        subset: config.subset,
        vocabulary: vocabulary.labels().to_vec(),
        accuracy: column(&|o| o.metrics.accuracy),
        weighted_precision: column(&|o| o.metrics.weighted_precision),
        weighted_recall: column(&|o| o.metrics.weighted_recall),
        weighted_f1: column(&|o| o.metrics.weighted_f1),
        train_accuracy: column(&|o| o.train_accuracy),
        average_split: select_average_split(&points),
        duplicate_splits,
        splits: outcomes,
    })
}

/// One protocol run per feature subset on the same splits.
#[derive(Debug, Clone, PartialEq)]
pub struct AblationSummary {
    pub runs: Vec<ResamplingSummary>,
}

impl AblationSummary {
    pub fn run(&self, subset: FeatureSubset) -> Option<&ResamplingSummary> {
        self.runs.iter().find(|r| r.subset == subset)
    }

    /// Per-split test accuracies, one column per subset, for paired tests.
    pub fn paired_accuracies(&self) -> Vec<Vec<f64>> {
        let n = self.runs.first().map_or(0, |r| r.splits.len());
        (0..n)
            .map(|i| self.runs.iter().map(|r| r.splits[i].metrics.accuracy).collect())
            .collect()
    }
}

pub fn run_ablation(table: &FeatureTable, splits: &[SplitSpec], config: &LdaConfig) -> Result<AblationSummary, EvalError> {
    let runs = FeatureSubset::ALL_MODES
        .iter()
        .map(|&subset| run_protocol(table, splits, &LdaConfig { subset, ..*config }))
        .collect::<Result<Vec<_>, _>>()?;
    Ok(AblationSummary { runs })
}

/// Relabels entries whose label is in `fake_labels` as [`FAKE_LABEL`] and
/// all others as [`REAL_LABEL`]. Prompt ids and paths are kept.
pub fn binarize<S: AsRef<str>>(entries: &[ManifestEntry], fake_labels: &[S]) -> Result<Vec<ManifestEntry>, EvalError> {
    let fake: BTreeSet<&str> = fake_labels.iter().map(AsRef::as_ref).collect();
    let observed: BTreeSet<&str> = entries.iter().map(|e| e.label.as_str()).collect();
    if let Some(missing) = fake.iter().find(|l| !observed.contains(*l)) {
        return Err(EvalError::UnknownLabel((*missing).to_owned()));
    }
    let out: Vec<ManifestEntry> = entries
        .iter()
        .map(|e| {
            let label = if fake.contains(e.label.as_str()) { FAKE_LABEL } else { REAL_LABEL };
            ManifestEntry::new(e.path.clone(), label, e.prompt_id)
        })
        .collect();
    for class in [FAKE_LABEL, REAL_LABEL] {
        if !out.iter().any(|e| e.label == class) {
            return Err(EvalError::EmptyClass(class.to_owned()));
        }
    }
    Ok(out)
}
