//! Numeric substrate for the forecasting engine: dense f64 tensors, a
//! define-by-run tape with reverse-mode gradients, named parameter storage,
//! and central-finite-difference gradient verification.
//!
//! Everything is double precision and single-threaded on purpose: forward
//! evaluation must be bit-reproducible for a given parameter store, and the
//! gradient checker leans on that determinism.

pub mod error;
pub mod gradcheck;
pub mod store;
pub mod tape;
pub mod tensor;

pub use error::{CoreError, CoreResult};
pub use gradcheck::{grad_check, grad_check_sampled, GradCheckConfig, GradCheckReport};
pub use store::{ParamEntry, ParamStore};
pub use tape::{Gradients, Graph, NodeId};
pub use tensor::TensorF;
