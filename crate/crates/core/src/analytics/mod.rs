//! Data-driven analytics: a small ML suite (majority, naive Bayes, kNN),
//! feature pipelines for the location, activity and physio analyzers, and
//! the manager that configures, trains and serves their models.

mod features;
mod manager;
mod ml;
pub mod planted;

pub use features::{
    activity_features, hour_and_dow, location_features, physio_features, ACTIVITY_SCHEMA, LOCATION_SCHEMA, NONE,
    PHYSIO_SCHEMA,
};
pub use manager::{load_configs, AnalyticsManager, PhysioAnalysis, RecommendationRow, RecommendationTable};
pub use ml::{
    train, Algorithm, Analyzer, Feature, FeatureKind, FeatureValue, FeatureVector, LabeledInstance, ModelConfig,
    NbFeature, Parameters, Prediction, Range, TrainedModel, DEFAULT_ALPHA, DEFAULT_BINS, DEFAULT_K, SNAPSHOT_VERSION,
};

use std::path::PathBuf;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum AnalyticsError {
    #[error("empty dataset")]
    EmptyDataset,
    #[error("schema mismatch: {0}")]
    SchemaMismatch(String),
    #[error("invalid hyperparameter for {analyzer}: {reason}")]
    InvalidHyperparam { analyzer: Analyzer, reason: String },
    #[error("snapshot: {0}")]
    Snapshot(String),
    #[error("no configuration for the {0} analyzer")]
    MissingConfig(Analyzer),
    #[error("no trained {0} model")]
    ModelUnavailable(Analyzer),
    #[error("invalid config {path}: {reason}")]
    InvalidConfig { path: PathBuf, reason: String },
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
}

/// Fixed feature schema of an analyzer.
pub fn schema_of(analyzer: Analyzer) -> &'static [&'static str] {
    match analyzer {
        Analyzer::Location => &LOCATION_SCHEMA,
        Analyzer::Activity => &ACTIVITY_SCHEMA,
        Analyzer::Physio => &PHYSIO_SCHEMA,
    }
}
