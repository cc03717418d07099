//! MambaTab: a selective state-space (Mamba) network for binary
//! classification on tabular data.
//!
//! The crate is organised bottom-up:
//!
//! * [`tensor`]: dense `f64` arrays and a tape-based reverse-mode autodiff.
//! * [`tabular`]: CSV ingestion, ordinal encoding, mode imputation, min-max
//!   scaling, splits and incremental feature plans.
//! * [`ssm`]: discretization, selective scan and the Mamba block.
//! * [`model`]: embedding learner, layer norm, residual blocks, heads,
//!   checkpoints and weight transfer.
//! * [`training`]: Adam, cosine schedule and the supervised,
//!   feature-incremental and self-supervised regimes.
//! * [`metrics`]: AUROC, accuracy and seed aggregation.

pub mod metrics;
pub mod model;
pub mod params;
pub mod ssm;
pub mod synthetic;
pub mod tabular;
pub mod tensor;
pub mod training;

pub use metrics::{aggregate, auroc, EvalResult};
pub use model::{HeadKind, MambaTabModel, ModelConfig};
pub use tabular::{EncodedMatrix, Preprocessor, Table};
pub use tensor::{Tape, Tensor, Var};
pub use training::{TrainConfig, TrainReport};
