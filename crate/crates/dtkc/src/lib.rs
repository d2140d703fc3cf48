//! Deep clustering with divergence losses and per-layer companion
//! objectives on tensor kernels.
//!
//! The crate trains a small convolutional or bidirectional recurrent
//! backbone end-to-end against a three-term Cauchy-Schwarz divergence
//! clustering loss, optionally attaching unsupervised companion objectives
//! to every intermediate layer through kernels built on that layer's
//! representation: tensor kernels over rank-3 feature maps, Gaussian kernels
//! over hidden-state vectors.
//!
//! Start with the runnable examples (`cargo run --example train_blobs`) or
//! the `dtkc` binary (`dtkc train --config cfg.json --out out/`).

pub mod checkpoint;
pub mod cli;
pub mod data;
pub mod diagnostics;
pub mod evaluate;
pub mod graph;
pub mod kernel;
pub mod loss;
pub mod metrics;
pub mod net;
pub mod objective;
pub mod tensor;
pub mod train;

pub use checkpoint::{load_checkpoint, save_checkpoint, CheckpointModelMeta};
pub use data::{load_dataset, make_synthetic_blob_images, make_synthetic_sequences, store_dataset, Dataset};
pub use kernel::{bandwidth_from_batch, gaussian_kernel_matrix, tensor_kernel_matrix, KernelConfig, KernelMatrix};
pub use loss::{ddc_loss, AssignmentMatrix, LossBreakdown};
pub use metrics::{hungarian_accuracy, nmi};
pub use net::{cnn_forward, rnn_forward, Architecture, InputMeta, ModelParams, SequenceBatch};
pub use objective::{companion_kernel, companion_loss, total_objective, CompanionWeights};
pub use train::{select_best, train_multi, train_one_run, RunRecord, TrainConfig};
