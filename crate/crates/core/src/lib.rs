//! Learning linear second-order RNNs and vector-valued weighted automata
//! from sequence data via Hankel tensor recovery and spectral reconstruction.

#![allow(
    clippy::neg_cmp_op_on_partial_ord,
    clippy::needless_range_loop,
    clippy::type_complexity
)]

pub mod data;
pub mod error;
pub mod experiment;
pub mod linalg;
pub mod metrics;
pub mod model;
pub mod recovery;
pub mod refine;
pub mod spectral;
pub mod tensor;
pub mod tt;

pub use data::{Example, SequenceDataset};
pub use error::{Error, Result};
pub use experiment::{CellResult, CellSpec, ExpMethod, ExperimentSettings};
pub use metrics::{metrics, Metrics};
pub use model::{Gradients, Linear2RNN, VvWFA};
pub use recovery::{Method, RecoveryConfig};
pub use refine::{sgd_refine, RefineConfig};
pub use spectral::{spectral_learn, spectral_learn_general, Learned, SpectralConfig};
pub use tensor::{kron, DenseTensor};
pub use tt::{TtCore, TtVector};
