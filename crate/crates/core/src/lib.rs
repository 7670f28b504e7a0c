//! Energy-based transfer learning for video event recognition.
//!
//! Restricted Boltzmann machines and deep belief networks are pre-trained
//! with contrastive divergence on action-domain frames, optionally fused at
//! the first layer (frame summation or consecutive differencing), then a
//! fully-connected softmax head is fine-tuned on event labels with the
//! first hidden layer frozen.
//!
//! Batch convention everywhere is `rows × features`, row-major, `f64`.

pub mod dbn;
pub mod error;
pub mod fusion;
pub mod head;
pub mod metrics;
pub mod numerics;
pub mod oracle;
pub mod pipeline;
pub mod rbm;

pub use dbn::{Architecture, DbnStack, EpochLog};
pub use error::{Error, Result};
pub use fusion::{FrameTensor, FusionMode};
pub use head::{DenseLayer, FinetuneConfig, Network};
pub use metrics::RunReport;
pub use numerics::{Matrix, Purpose, RngStream};
pub use pipeline::{ClipRecord, DatasetManifest, FeatureStats};
pub use rbm::{CdConfig, MomentumState, RbmParams, VisibleKind};
