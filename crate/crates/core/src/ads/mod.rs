//! Anomaly detection: feature extraction, synthetic labelled traffic, a
//! random-forest classifier and its evaluation.

mod dataset;
mod eval;
mod features;
mod forest;

pub use dataset::{
    fraud_count, generate_dataset, generate_with_fraud_count, params, Label, LabeledDataset,
    LabeledRow,
};
pub use eval::{evaluate, EvalReport};
pub use features::{
    extract_features, haversine_km, TxnFeatures, EARTH_RADIUS_KM, FEATURE_DIM, FEATURE_NAMES,
};
pub use forest::{
    best_split, gini, train_forest, train_forest_matrix, train_tree, ForestModel, ForestParams,
    FraudScorer, Node, SplitChoice, TrainingView,
};

/// Default flag threshold on the fraud score.
pub const DEFAULT_THETA: f64 = 0.5;

/// Score `features` with `model`.
pub fn score(model: &ForestModel, features: &TxnFeatures) -> f64 {
    model.score(features)
}

#[derive(Debug, thiserror::Error)]
pub enum AdsError {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("dataset is empty")]
    EmptyDataset,
    #[error("training data contains a single class")]
    SingleClass,
    #[error("test set is empty")]
    EmptyTestSet,
    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
}
