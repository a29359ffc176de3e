//! Unsupervised cross-camera tracklet association learning.
//!
//! An embedding head is trained without identity labels. Each tracklet keeps
//! an intra-camera anchor (an EMA of its frame embeddings) and a cross-camera
//! anchor that merges with the mutual nearest tracklet of another camera.
//! Two top-push hinge losses pull every frame towards its own tracklet and
//! towards the merged cross-camera representation.
//!
//! The crate is organized bottom-up:
//!
//! - [`linalg`]: normalization, distances, rankings
//! - [`anchors`]: anchor banks, EMA updates, cyclic ranking
//! - [`objective`]: association losses and their gradients
//! - [`model`]: embedding heads, SGD, gradient checking
//! - [`data`]: datasets, file formats, synthetic data, sampling
//! - [`checkpoint`]: persisted training state
//! - [`train`]: the training loop
//! - [`eval`]: CMC, mAP and association metrics

pub mod anchors;
pub mod checkpoint;
pub mod data;
pub mod error;
pub mod eval;
pub mod linalg;
pub mod model;
pub mod objective;
pub mod scalar;
pub mod train;

pub use anchors::{AnchorBank, AnchorRef, CyclicMatch, MergeState};
pub use checkpoint::Checkpoint;
pub use data::{Dataset, FrameRecord, FrameSet, IdentityLabels, SyntheticConfig};
pub use error::{DalError, Result};
pub use eval::EvalReport;
pub use linalg::{DistanceRanking, Rows};
pub use model::{EmbeddingHead, HeadKind, HeadSpec, LrSchedule, OptimizerState};
pub use objective::{Ablation, LossBreakdown, ObjectiveConfig};
pub use scalar::Scalar;
pub use train::{TrainConfig, Trainer};
