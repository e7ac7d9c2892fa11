//! Radial Fourier magnitude/phase fingerprints for attributing generated
//! images to their source model, with a regularized LDA classifier and a
//! resampled evaluation protocol.
//!
//! The pipeline is: decode an image into three channel matrices
//! ([`image_io`]), take the centred 2D DFT of each channel ([`spectrum`]),
//! reduce log-magnitude and phase over concentric rings ([`radial`]), then
//! fit or apply an [`lda::LdaModel`] and score it over many splits
//! ([`evaluation`]).

pub mod evaluation;
pub mod feature_table;
pub mod image_io;
pub mod lda;
pub mod pipeline;
pub mod radial;
pub mod spectrum;

pub use evaluation::{
    binarize, compute_metrics, make_splits, run_ablation, run_protocol, EvalError, Grouping, MetricSummary,
    MetricsReport, ResamplingSummary, SplitSpec, SplitStrategy,
};
pub use feature_table::{read_features, FeatureFileError, FeatureTable, FeatureWriter};
pub use image_io::{decode_image, read_manifest, ChannelMatrix, ImageIoError, Manifest, ManifestEntry, RgbImage};
pub use lda::{fit, FeatureSubset, LabelVocabulary, LdaConfig, LdaError, LdaModel, Normalization, Prediction, Regularization};
pub use pipeline::{extract_entries, ExtractError, ExtractionOutcome, ExtractorCache};
pub use radial::{extract_features, FeatureExtractor, FeatureVector, RadialError, DEFAULT_BIN_COUNT};
pub use spectrum::{centralize, dft2, CentralizedSpectrum, ComplexMatrix};
