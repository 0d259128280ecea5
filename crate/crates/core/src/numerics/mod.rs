//! Dense-tensor math for the deep agents: feed-forward networks, a GRU cell,
//! the Adam optimizer and finite-difference gradient checking.
//!
//! Everything is `f64` and row-major. Networks evaluate whole batches at a
//! time through a GEMM kernel; the single-sample entry points are batches of
//! one.

mod adam;
mod dense;
mod gradcheck;
mod gru;
mod tensor;

pub use adam::{Adam, AdamState};
pub use dense::{Activation, DenseCache, DenseLayer, DenseNet};
pub use gradcheck::{grad_check, relative_error, GradCheckReport};
pub use gru::{GruCache, GruCell};
pub use tensor::Tensor;

pub(crate) use tensor::gemm;

use rand::distributions::{Distribution, Uniform};
use rand::Rng;
use thiserror::Error;

/// Global-norm threshold applied by every gradient-trained agent before an
/// optimizer step.
pub const GRAD_CLIP_NORM: f64 = 10.0;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum NumericsError {
    #[error("shape mismatch in {context}: expected {expected}, found {found}")]
    Shape {
        context: &'static str,
        expected: usize,
        found: usize,
    },
    #[error("non-finite value in {context}")]
    NonFinite { context: &'static str },
    #[error("invalid architecture: {0}")]
    Architecture(String),
}

/// Anything that owns trainable tensors in a fixed order.
pub trait Parameters {
    fn params(&self) -> Vec<&Tensor>;
    fn params_mut(&mut self) -> Vec<&mut Tensor>;

    fn zero_grads(&self) -> Grads {
        Grads {
            tensors: self.params().into_iter().map(Tensor::zeros_like).collect(),
        }
    }

    fn param_count(&self) -> usize {
        self.params().iter().map(|t| t.len()).sum()
    }

    /// Copies every parameter from `other`, which must share the layout.
    fn copy_params_from(&mut self, other: &Self) {
        for (dst, src) in self.params_mut().into_iter().zip(other.params()) {
            dst.data_mut().copy_from_slice(src.data());
        }
    }
}

/// Gradients laid out parallel to a [`Parameters`] implementor.
#[derive(Debug, Clone, PartialEq)]
pub struct Grads {
    pub tensors: Vec<Tensor>,
}

impl Grads {
    pub fn global_norm(&self) -> f64 {
        self.tensors
            .iter()
            .map(Tensor::sum_squares)
            .sum::<f64>()
            .sqrt()
    }

    /// Rescales so the global norm does not exceed `max_norm`; returns the
    /// norm before clipping.
    pub fn clip_global_norm(&mut self, max_norm: f64) -> f64 {
        let norm = self.global_norm();
        if norm > max_norm && norm > 0.0 {
            self.scale(max_norm / norm);
        }
        norm
    }

    pub fn scale(&mut self, factor: f64) {
        for t in &mut self.tensors {
            t.data_mut().iter_mut().for_each(|v| *v *= factor);
        }
    }

    pub fn is_finite(&self) -> bool {
        self.tensors.iter().all(Tensor::is_finite)
    }

    pub fn flatten(&self) -> Vec<f64> {
        self.tensors
            .iter()
            .flat_map(|t| t.data().iter().copied())
            .collect()
    }
}

/// Glorot-uniform initialization in `±sqrt(6 / (fan_in + fan_out))`.
pub(crate) fn glorot_uniform<R: Rng + ?Sized>(
    shape: Vec<usize>,
    fan_in: usize,
    fan_out: usize,
    rng: &mut R,
) -> Tensor {
    let mut t = Tensor::zeros(shape);
    if fan_in + fan_out == 0 {
        return t;
    }
    let limit = (6.0 / (fan_in + fan_out) as f64).sqrt();
    let dist = Uniform::new_inclusive(-limit, limit);
    for v in t.data_mut() {
        *v = dist.sample(rng);
    }
    t
}

pub(crate) fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

pub(crate) fn check_len(
    context: &'static str,
    expected: usize,
    found: usize,
) -> Result<(), NumericsError> {
    if expected == found {
        Ok(())
    } else {
        Err(NumericsError::Shape {
            context,
            expected,
            found,
        })
    }
}
