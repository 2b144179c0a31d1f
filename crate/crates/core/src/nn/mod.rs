//! Minimal dense-network engine.
//!
//! Sequential stacks of fully connected layers with forward/backward passes,
//! the loss primitives used by the teacher, student and router objectives,
//! an Adam optimizer, and a central-difference gradient checker.
//!
//! Batches are row-major matrices: one sample per row. Training runs in
//! `f32`; every routine is generic over [`Scalar`] so the gradient checker
//! can run the same code in `f64`.

mod adam;
mod dense;
mod gradcheck;
mod io;
mod loss;
mod prng;

use std::fmt::{Debug, Display};
use std::iter::Sum;
use std::ops::{AddAssign, DivAssign, MulAssign, SubAssign};

use ndarray::{Array2, LinalgScalar, ScalarOperand};
use num_traits::{Float, FromPrimitive, ToPrimitive};

pub use adam::{Adam, AdamConfig};
pub use dense::{Activation, Backward, DenseLayer, DenseNet, ForwardCache, Gradients, LayerGrad};
pub use gradcheck::{grad_check, GradCheckLoss};
pub use io::{digest_hex, read_net, write_net, MBNN_MAGIC, MBNN_VERSION};
pub use loss::{
    accuracy, argmax_rows, cross_entropy, cross_entropy_with_logits, distill_kl,
    gaussian_kl_rows, mse, mse_rows, mse_with_grad, softmax_t,
};
pub use prng::{derive_seed, sample_gaussian, Prng};

/// Floating point element type of a network.
pub trait Scalar:
    Float
    + LinalgScalar
    + ScalarOperand
    + FromPrimitive
    + ToPrimitive
    + Debug
    + Display
    + Default
    + Send
    + Sync
    + AddAssign
    + SubAssign
    + MulAssign
    + DivAssign
    + Sum
    + 'static
{
    fn lit(v: f64) -> Self {
        Self::from_f64(v).expect("representable literal")
    }

    fn as_f64(self) -> f64 {
        self.to_f64().expect("finite conversion")
    }
}

impl Scalar for f32 {}
impl Scalar for f64 {}

/// Row-major batch of samples (rows) by features (columns).
pub type Matrix<T = f32> = Array2<T>;

/// Smallest argument passed to `ln` anywhere in the loss code.
pub const LOG_FLOOR: f64 = 1e-12;
