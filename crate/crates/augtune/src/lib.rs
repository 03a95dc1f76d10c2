//! Self-tuning augmentation-based time series anomaly detection.
//!
//! A detector is trained to separate normal series from pseudo anomalies
//! produced by a learned, differentiable augmentation model. The
//! augmentation hyperparameters (anomaly type, severity, duration) are tuned
//! against *unlabeled* test data by minimizing an entropic optimal-transport
//! distance between embedding distributions, differentiating through the
//! detector's own inner training steps.
//!
//! Crate layout:
//! - [`tensor`]: dense tensors + reverse-mode differentiation with
//!   higher-order support, the convolution/pooling kernels, `gradcheck`.
//! - [`nn`], [`optim`]: layers, parameter sets, Adam (plain and
//!   graph-recorded).
//! - [`ot`]: Sinkhorn distance, an exact small-instance transport oracle,
//!   embedding normalization, point-wise baseline loss.
//! - [`inject`]: the six parametric anomaly injectors and their domains.
//! - [`synth`]: synthetic normal-series generators and task construction.
//! - [`faug`], [`detector`]: the augmentation and detector models.
//! - [`tune`]: the alternating detection/alignment loop and type selection.
//! - [`metrics`]: AUROC and best-F1.
//! - [`experiment`]: configuration, orchestration and run artifacts.

pub mod dataio;
pub mod detector;
pub mod experiment;
pub mod faug;
pub mod gradcheck;
pub mod inject;
pub mod metrics;
pub mod nn;
pub mod optim;
pub mod ot;
pub mod rngs;
pub mod synth;
pub mod tensor;
pub mod tune;

pub use tensor::{Graph, Tensor, TensorError, Var};
