//! Desk-scale networks: a layout-aware surrogate token classifier (source of
//! the task loss and its gradients) and a per-token box predictor, plus
//! their training loops and checkpoint I/O.

mod checkpoint;
mod config;
mod encoder;
mod optim;
mod predictor;
mod surrogate;
mod train;
mod vocab;

pub use checkpoint::{load_predictor, load_surrogate, save_predictor, save_surrogate};
pub use config::{PredictorConfig, PredictorTrainConfig, SurrogateConfig, SurrogateTrainConfig};
pub use optim::AdamW;
pub use predictor::BBoxPredictor;
pub use surrogate::SurrogateModel;
pub use train::{train_bbox_predictor, train_surrogate, PredictorReport, TrainReport};
pub use vocab::{LabelSet, Vocab};
