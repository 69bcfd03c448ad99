//! Demonstration dataset, trajectory classifier, and its training loop.

mod dataset;
mod network;
mod optim;
mod train;

pub use dataset::{Dataset, DatasetMeta, DemoRecord, DATASET_FORMAT};
pub use network::{
    argmax, softmax, Activation, Architecture, Classifier, Prediction, MODEL_FORMAT, MODEL_MAGIC,
    PROB_FLOOR,
};
pub use optim::{backward_and_step, Optimizer, OptimizerKind};
pub use train::{
    evaluate, split_indices, train, EpochStats, Init, SplitStats, TrainConfig, TrainReport,
};
