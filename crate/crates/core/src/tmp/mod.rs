//! Tri-modal contrastive pre-training: losses and the toy projection head.

pub mod loss;
pub mod train;

pub use loss::{loss_ip, loss_tmp, loss_tp, LossReport, LossValue, TmpBatch};
pub use train::{
    nearest_text_class, predict_points, superpoint_accuracy, train_toy_head, ProjectionHead, TraceRow,
    TrainConfig, TrainOutput,
};
