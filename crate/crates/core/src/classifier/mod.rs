//! Two-stream bidirectional GRU classifier.

pub mod adam;
pub mod gru;
pub mod model;
pub mod network;
pub mod params;
pub mod train;

pub use adam::{adam_step, AdamConfig, AdamState};
pub use gru::{bigru_forward, gru_cell, sigmoid};
pub use model::{aggregate_predictions, predict_video, stream_forward, TwoStreamModel};
pub use network::{fuse, fuse_weighted, DropoutRates, Normalizer, Prediction, StreamSelection};
pub use params::{
    BiGruParams, GruParams, Parameters, StreamHead, StreamParams, TensorView, TwoStreamParams, HEAD_UNITS,
    NUM_CLASSES,
};
pub use train::{clip_auc, split_sources, train, train_split, EpochRecord, TrainConfig, TrainLog};
