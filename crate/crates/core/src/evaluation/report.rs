//! JSON evaluation reports. No timestamps or host details are recorded, so
//! identical inputs give byte-identical files.

use serde::Serialize;

use super::{AblationSummary, ResamplingSummary};
use crate::lda::model_file::render_document;
use crate::lda::{LdaConfig, Regularization};

pub const REPORT_SCHEMA_VERSION: u32 = 1;
const REPORT_FORMAT: &str = "prism-evaluation-report";

#[derive(Serialize)]
struct ConfigDoc {
    regularization: String,
    normalization: String,
    seed: u64,
    ratio: f64,
}

#[derive(Serialize)]
struct SummaryDoc<'a> {
    format: &'static str,
    schema_version: u32,
    config: ConfigDoc,
    #[serde(flatten)]
    summary: &'a ResamplingSummary,
}

#[derive(Serialize)]
struct AblationDoc<'a> {
    format: &'static str,
    schema_version: u32,
    config: ConfigDoc,
    runs: &'a [ResamplingSummary],
    /// Rows are splits; columns follow `runs`.
    paired_accuracy: Vec<Vec<f64>>,
}

fn config_doc(config: &LdaConfig, seed: u64, ratio: f64) -> ConfigDoc {
    ConfigDoc {
        regularization: match config.regularization {
            Regularization::Auto => "auto".into(),
            Regularization::Fixed(l) => l.to_string(),
        },
        normalization: config.normalization.to_string(),
        seed,
        ratio,
    }
}

pub fn summary_document(summary: &ResamplingSummary, config: &LdaConfig, seed: u64, ratio: f64) -> String {
    render_document(&SummaryDoc {
        format: REPORT_FORMAT,
        schema_version: REPORT_SCHEMA_VERSION,
        config: config_doc(config, seed, ratio),
        summary,
    })
}

pub fn ablation_document(ablation: &AblationSummary, config: &LdaConfig, seed: u64, ratio: f64) -> String {
    render_document(&AblationDoc {
        format: REPORT_FORMAT,
        schema_version: REPORT_SCHEMA_VERSION,
        config: config_doc(config, seed, ratio),
        runs: &ablation.runs,
        paired_accuracy: ablation.paired_accuracies(),
    })
}
