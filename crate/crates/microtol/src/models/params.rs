//! Named parameter storage shared by all model kinds.

use std::collections::BTreeMap;

use crate::tensor::{Checkpoint, Tape, Tensor, Var};

use super::ModelError;

/// Index of one parameter within a [`ParamSet`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ParamId(pub(crate) usize);

/// Owns the master copies of all trainable tensors, in registration order.
#[derive(Debug, Clone, Default)]
pub struct ParamSet {
    names: Vec<String>,
    tensors: Vec<Tensor>,
    by_name: BTreeMap<String, usize>,
}

impl ParamSet {
    pub fn new() -> ParamSet {
        ParamSet::default()
    }

    pub fn add(&mut self, name: &str, tensor: Tensor) -> ParamId {
        assert!(
            !self.by_name.contains_key(name),
            "duplicate parameter name {name}"
        );
        let id = self.tensors.len();
        self.names.push(name.to_string());
        self.by_name.insert(name.to_string(), id);
        self.tensors.push(tensor);
        ParamId(id)
    }

    pub fn len(&self) -> usize {
        self.tensors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tensors.is_empty()
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn tensors(&self) -> &[Tensor] {
        &self.tensors
    }

    pub fn tensors_mut(&mut self) -> &mut [Tensor] {
        &mut self.tensors
    }

    /// Simultaneous mutable tensor access and name access, for the
    /// optimizer step.
    pub fn tensors_and_names_mut(&mut self) -> (&mut [Tensor], &[String]) {
        (&mut self.tensors, &self.names)
    }

    pub fn tensor(&self, id: ParamId) -> &Tensor {
        &self.tensors[id.0]
    }

    pub fn sizes(&self) -> Vec<usize> {
        self.tensors.iter().map(Tensor::numel).collect()
    }

    /// Registers every parameter as a grad-tracking leaf on `tape`. The
    /// returned vector is indexed by [`ParamId`].
    pub fn leaves(&self, tape: &Tape) -> Vec<Var> {
        self.tensors
            .iter()
            .map(|t| tape.leaf(t.clone(), true))
            .collect()
    }

    /// Gradients for every parameter after a backward pass, in order.
    pub fn grads(&self, leaves: &[Var]) -> Result<Vec<Tensor>, ModelError> {
        leaves
            .iter()
            .map(|v| v.grad().map_err(ModelError::from))
            .collect()
    }

    pub fn to_checkpoint(&self, step: u64, config_hash: &str) -> Checkpoint {
        Checkpoint {
            tensors: self
                .names
                .iter()
                .cloned()
                .zip(self.tensors.iter().cloned())
                .collect(),
            step,
            config_hash: config_hash.to_string(),
        }
    }

    /// Overwrites parameter values from a checkpoint, matching by name and
    /// validating shapes.
    pub fn load_values(&mut self, ckpt: &Checkpoint) -> Result<(), ModelError> {
        for (name, idx) in &self.by_name {
            let saved = ckpt
                .tensor(name)
                .ok_or_else(|| ModelError::MissingTensor(name.clone()))?;
            if saved.shape() != self.tensors[*idx].shape() {
                return Err(ModelError::CheckpointShape {
                    name: name.clone(),
                    expected: self.tensors[*idx].shape().to_vec(),
                    found: saved.shape().to_vec(),
                });
            }
            self.tensors[*idx] = saved.clone();
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn checkpoint_round_trip_restores_values() {
        let mut params = ParamSet::new();
        let a = params.add("a", Tensor::full(&[2, 2], 1.5));
        params.add("b", Tensor::scalar(-3.0));
        let ckpt = params.to_checkpoint(7, "hash");

        let mut other = ParamSet::new();
        other.add("a", Tensor::zeros(&[2, 2]));
        other.add("b", Tensor::zeros(&[1]));
        other.load_values(&ckpt).unwrap();
        assert_eq!(other.tensor(a).data(), &[1.5; 4]);
    }

    #[test]
    fn load_rejects_missing_and_misshapen_tensors() {
        let mut params = ParamSet::new();
        params.add("a", Tensor::zeros(&[2]));
        let empty = Checkpoint {
            tensors: vec![],
            step: 0,
            config_hash: String::new(),
        };
        assert!(matches!(
            params.load_values(&empty),
            Err(ModelError::MissingTensor(_))
        ));
        let wrong = Checkpoint {
            tensors: vec![("a".to_string(), Tensor::zeros(&[3]))],
            step: 0,
            config_hash: String::new(),
        };
        assert!(matches!(
            params.load_values(&wrong),
            Err(ModelError::CheckpointShape { .. })
        ));
    }
}
