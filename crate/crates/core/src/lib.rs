//! Effective rank and matrix entropy of model hidden representations.
//!
//! The crate turns per-sentence token representations into trace-one
//! covariance spectra ([`spectral`]), aggregates them into dataset metrics
//! such as Diff-eRank and reduced loss ([`metrics`]), and reads and writes the
//! on-disk contracts shared with extraction tooling ([`npy`], [`manifest`],
//! [`report`]). [`pipeline`] runs whole manifests.

pub mod error;
mod fsutil;
pub mod manifest;
pub mod metrics;
pub mod npy;
pub mod pipeline;
pub mod report;
pub mod spectral;
pub mod sum;

pub use nalgebra::DMatrix;

pub use error::{Error, ModelRole, Result};
pub use fsutil::write_atomic;
pub use manifest::{load_manifest, write_manifest, DumpManifest, LoadedManifest, ManifestEntry, Sampling};
pub use metrics::{
    cross_entropy_loss, dataset_diff_erank_a, dataset_diff_erank_b, diff_erank_sentence, image_reduction_ratio,
    image_text_alignment, reduced_loss, Aggregation, ModelDatasetSummary, MultimodalERanks, SentenceEntropyRecord,
    SequenceLogProbs,
};
pub use npy::{read_tensor, write_tensor, Dtype, TensorData, TensorFile};
pub use pipeline::{AlgorithmChoice, EvalOptions};
pub use report::{read_report, write_report, MetricsReport, ReportFormat};
pub use spectral::{
    build_covariance, covariance_spectrum, erank_general, erank_of_covariance, matrix_entropy, CovarianceMatrix,
    RepresentationSet, Spectrum, SpectrumKind, SpectrumRoute,
};
