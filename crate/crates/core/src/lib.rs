//! Gender-bias audit metrics for image encoders.
//!
//! * accuracy difference between models trained on balanced and skewed data
//! * image-image association score (IIAS) over repeated attribute/target draws
//! * top-k occurrence and skewness of zero-shot occupation predictions
//!
//! Numeric code is generic over [`Scalar`] (`f32` or `f64`); the aliases at
//! the crate root fix the scalar for common use.

pub mod cli;
pub mod domain;
pub mod ingest;
pub mod metrics;
pub mod report;
pub mod scalar;
pub mod synth;
pub mod zeroshot;

pub use domain::{
    AccuracyRun, Condition, DatasetManifest, EmbeddingRecord, Family, GenderTag, LabelVocabulary, PredictionRecord,
    SpaceKey, ValidationReport, Variant, Violation,
};
pub use ingest::{IngestError, IngestErrorKind, PredictionLog};
pub use metrics::{AssociationResult, DeltaResult, FamilyComparison, MetricError, ModelDelta};
pub use scalar::Scalar;
pub use zeroshot::{ConcentrationResult, EncoderSummary, SkewnessConfig, SkewnessEstimator};

pub type EmbeddingRecordF32 = EmbeddingRecord<f32>;
pub type EmbeddingRecordF64 = EmbeddingRecord<f64>;
pub type AccuracyRunF32 = AccuracyRun<f32>;
pub type AccuracyRunF64 = AccuracyRun<f64>;
pub type DeltaResultF32 = DeltaResult<f32>;
pub type DeltaResultF64 = DeltaResult<f64>;
pub type ModelDeltaF64 = ModelDelta<f64>;
pub type AssociationResultF32 = AssociationResult<f32>;
pub type AssociationResultF64 = AssociationResult<f64>;
pub type ConcentrationResultF64 = ConcentrationResult<f64>;
pub type EncoderSummaryF64 = EncoderSummary<f64>;
