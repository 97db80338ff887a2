//! Dense f32 tensors with reverse-mode automatic differentiation, the
//! AdamW optimizer, the warmup + cosine schedule, and the checkpoint
//! container.
//!
//! All reductions are sequential and deterministic: two runs with the same
//! seeds produce bitwise-identical results.

mod checkpoint;
mod optim;
mod tape;

pub use checkpoint::{parse_checkpoint, Checkpoint};
pub use optim::{AdamW, AdamWConfig, Schedule};
pub use tape::{Tape, Var};

use rand::Rng;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum TensorError {
    #[error("shape mismatch in {op}: {lhs:?} vs {rhs:?}")]
    ShapeMismatch {
        op: &'static str,
        lhs: Vec<usize>,
        rhs: Vec<usize>,
    },
    #[error("invalid shape {shape:?} for {op}: {message}")]
    InvalidShape {
        op: &'static str,
        shape: Vec<usize>,
        message: String,
    },
    #[error("data length {len} does not match shape {shape:?}")]
    DataLength { shape: Vec<usize>, len: usize },
    #[error("backward requires a scalar output, found shape {0:?}")]
    NotScalar(Vec<usize>),
    #[error("variables belong to different tapes")]
    DifferentTapes,
    #[error("gradient read before backward")]
    BackwardNotRun,
    #[error("non-finite value in {what} for {name}")]
    NonFinite { what: &'static str, name: String },
    #[error("schedule step {step} outside 0..={total}")]
    ScheduleStep { step: u32, total: u32 },
    #[error("warmup_steps {warmup} must be less than total_steps {total}")]
    ScheduleConfig { warmup: u32, total: u32 },
    #[error("malformed checkpoint: {0}")]
    CheckpointFormat(String),
    #[error("cannot access {path}: {source}")]
    Io {
        path: String,
        source: std::io::Error,
    },
    #[error("{op} expects normalized rows; row {row} has norm {norm}")]
    NotNormalized {
        op: &'static str,
        row: usize,
        norm: f32,
    },
}

/// A dense n-dimensional f32 array.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    shape: Vec<usize>,
    data: Vec<f32>,
}

impl Tensor {
    pub fn new(shape: Vec<usize>, data: Vec<f32>) -> Result<Tensor, TensorError> {
        let numel: usize = shape.iter().product();
        if shape.iter().any(|&e| e == 0) || data.len() != numel {
            return Err(TensorError::DataLength {
                shape,
                len: data.len(),
            });
        }
        Ok(Tensor { shape, data })
    }

    pub fn zeros(shape: &[usize]) -> Tensor {
        let numel = shape.iter().product();
        Tensor {
            shape: shape.to_vec(),
            data: vec![0.0; numel],
        }
    }

    pub fn full(shape: &[usize], value: f32) -> Tensor {
        let numel = shape.iter().product();
        Tensor {
            shape: shape.to_vec(),
            data: vec![value; numel],
        }
    }

    pub fn scalar(value: f32) -> Tensor {
        Tensor {
            shape: vec![1],
            data: vec![value],
        }
    }

    /// Gaussian init via Box-Muller on the given stream; deterministic.
    pub fn randn<R: Rng>(shape: &[usize], std: f32, rng: &mut R) -> Tensor {
        let numel: usize = shape.iter().product();
        let data = (0..numel)
            .map(|_| {
                let u1: f32 = rng.gen_range(f32::EPSILON..1.0);
                let u2: f32 = rng.gen();
                (-2.0 * u1.ln()).sqrt() * (std::f32::consts::TAU * u2).cos() * std
            })
            .collect();
        Tensor {
            shape: shape.to_vec(),
            data,
        }
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f32] {
        &mut self.data
    }

    pub fn numel(&self) -> usize {
        self.data.len()
    }

    /// The single element of a `[1]` tensor.
    pub fn item(&self) -> Result<f32, TensorError> {
        if self.data.len() == 1 {
            Ok(self.data[0])
        } else {
            Err(TensorError::NotScalar(self.shape.clone()))
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn new_validates_shape_against_data() {
        assert!(Tensor::new(vec![2, 3], vec![0.0; 6]).is_ok());
        assert!(Tensor::new(vec![2, 3], vec![0.0; 5]).is_err());
        assert!(Tensor::new(vec![2, 0], vec![]).is_err());
    }

    #[test]
    fn randn_is_deterministic_per_seed() {
        let a = Tensor::randn(&[4, 4], 1.0, &mut ChaCha8Rng::seed_from_u64(9));
        let b = Tensor::randn(&[4, 4], 1.0, &mut ChaCha8Rng::seed_from_u64(9));
        assert_eq!(a, b);
        let c = Tensor::randn(&[4, 4], 1.0, &mut ChaCha8Rng::seed_from_u64(10));
        assert_ne!(a, c);
    }

    #[test]
    fn randn_moments_are_plausible() {
        let t = Tensor::randn(&[50_000], 1.0, &mut ChaCha8Rng::seed_from_u64(1));
        let mean: f32 = t.data().iter().sum::<f32>() / t.numel() as f32;
        let var: f32 = t.data().iter().map(|x| (x - mean) * (x - mean)).sum::<f32>()
            / t.numel() as f32;
        assert!(mean.abs() < 0.02, "mean {mean}");
        assert!((var - 1.0).abs() < 0.05, "var {var}");
    }
}
