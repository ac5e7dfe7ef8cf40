//! Decodable neural networks.
//!
//! A classifier is trained jointly with a decoder that maps every hidden
//! activation back to input space. Decoded activations can be fed back into
//! the classifier recursively along randomly sampled layer paths; the implicit
//! ensemble of paths gives an entropy-based uncertainty score used for
//! misclassification detection, out-of-distribution detection and calibration.
//! Decoded activations can also be passed to frozen pretrained models, either
//! to pull the classifier toward them or to push a protected attribute toward
//! chance.

pub mod data_io;
pub mod dataset;
pub mod error;
pub mod metrics;
pub mod models;
pub mod objectives;
pub mod robustness;
pub mod tape;
pub mod tensor;
pub mod training;
pub mod uncertainty;

pub use error::{Error, Result};
pub use models::{ActivationTrace, ArchSpec, ModelBundle, PretrainedModel};
pub use tape::{Gradients, Tape, Var};
pub use tensor::Tensor;
