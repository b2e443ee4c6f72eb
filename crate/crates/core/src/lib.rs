//! # erasure-core
//!
//! Removal of linearly-decodable protected-attribute information from
//! multilingual embedding matrices, with the probes and fairness metrics to
//! measure what changed.
//!
//! The pipeline: plan a sequence of language subsets ([`planner`]), fit one
//! spectral erasure step per subset into a composed projection P*
//! ([`spectral`]), apply it to embeddings, then train logistic-regression
//! probes ([`probe`]) and report accuracy and TPR gaps ([`metrics`]).
//! [`synth`] generates seeded mixture datasets with planted attribute
//! directions for end-to-end verification, and [`dataio`] handles the
//! manifest/blob/CSV dataset format.
//!
//! Everything is deterministic: fits accumulate in a canonical row order,
//! probes train full-batch from zero init, and generators are seeded, so a
//! rerun reproduces every artifact byte for byte.

pub mod dataio;
mod linalg;
pub mod metrics;
pub mod planner;
pub mod probe;
pub mod spectral;
pub mod synth;

pub use dataio::{
    center_dataset, derive_reputation_labels, load_dataset, one_hot, save_dataset, BlobDtype,
    DataError, DatasetManifest, EmbeddingDataset, SplitSpec,
};
pub use metrics::{
    accuracy, tpr_gap, AggregateKind, EvalReport, EvalRow, GapReport, MetricsError,
};
pub use planner::{
    build_plan, plan_fingerprint, ErasurePlan, PlanError, PlanMode, SubsetOrder,
    MAX_SOURCE_LANGUAGES,
};
pub use probe::{
    load_probe, loss_and_grad, predict, save_probe, train_probe, ProbeConfig, ProbeError,
    ProbeGrad, ProbeModel,
};
pub use spectral::{
    apply_erasure, apply_erasure_restoring_mean, cross_covariance, erasure_step, fit_erasure,
    fit_erasure_with, CrossCovariance, ErasureArtifact, FitOptions, SingularTriple,
    SpectralError, StepRecord, DEFAULT_SIGMA_TOL,
};
pub use synth::{generate, make_orthogonal_bias_pair, MixtureConfig, SynthError};
