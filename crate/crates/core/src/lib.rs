//! Continual learning with structurally isolated task experts.
//!
//! A plastic teacher, a compact student expert and a reconstruction router
//! are trained side by side on a transient task buffer. When the session
//! stabilizes, the student and router are frozen into an [`ExpertLibrary`]
//! entry and the raw data is dropped. At inference time the routers' errors
//! select (softly) which frozen experts answer.
//!
//! Module map:
//! - [`nn`]: dense networks, losses, Adam, gradient checking, `MBNN` files
//! - [`datasets`]: MNIST IDX loading, Split-MNIST streams, crowded-manifold generator
//! - [`routers`]: tight-bottleneck and variational autoencoder routers, calibration
//! - [`experts`]: teacher and student experts with their objectives
//! - [`pipeline`]: session state machine, commitment gate, library persistence
//! - [`inference`]: soft routing and out-of-distribution rejection

pub mod datasets;
pub mod error;
pub mod experts;
pub mod inference;
pub mod nn;
pub mod pipeline;
pub mod routers;

pub use error::{Error, Result};
