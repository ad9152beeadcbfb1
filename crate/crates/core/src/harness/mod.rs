//! Training, evaluation, extraction and persistence.

pub mod checkpoint;
pub mod config;
pub mod eval;
pub mod extract;
pub mod metrics;
pub mod model;
pub mod optim;
pub mod train;

pub use checkpoint::CheckpointError;
pub use config::{ModelConfig, TrainConfig};
pub use eval::{evaluate, evaluate_config, evaluate_episode, load_model, Evaluation};
pub use extract::{
    dump_fusion, extract, gradcheck_episode, parse_queries, Extraction, GradCheckSetup,
};
pub use metrics::{Counts, GoldTriple, Metrics, MetricsSummary, PredictedTriple, Score};
pub use model::{episode_loss, predict, ModelParams, Pipeline, Prediction, QueryInput};
pub use optim::Adam;
pub use train::{
    build_vocabulary, episode_gradients, loss_csv, train, train_model, TrainOutcome, TrainRun,
};
