//! Minimal dense-tensor arithmetic with reverse-mode differentiation.
//!
//! The engine is deliberately small: row-major `f64` tensors, a tape of
//! coarse-grained primitives (matrix-vector products, gathers, segment
//! reductions, pointwise activations, `logsumexp`), named parameters with
//! Adam state, and a binary checkpoint format.

mod adam;
mod checkpoint;
mod tape;
mod tensor;

use std::collections::HashMap;

use rand::Rng;
use thiserror::Error;

pub use adam::{adam_step, AdamConfig};
pub use checkpoint::{read_checkpoint, write_checkpoint, CHECKPOINT_MAGIC, CHECKPOINT_VERSION};
pub use tape::{ReduceMode, Tape, Var};
pub use tensor::Tensor;

#[derive(Debug, Error)]
pub enum NumericsError {
    #[error("shape mismatch in {op}: {left:?} vs {right:?}")]
    ShapeMismatch {
        op: &'static str,
        left: Vec<usize>,
        right: Vec<usize>,
    },
    #[error("shape {shape:?} does not hold {len} elements")]
    DataLength { shape: Vec<usize>, len: usize },
    #[error("{op} on empty input")]
    EmptyInput { op: &'static str },
    #[error("index {index} out of range for length {len} in {op}")]
    IndexOutOfRange {
        op: &'static str,
        index: usize,
        len: usize,
    },
    #[error("loss must be a scalar, got shape {0:?}")]
    NonScalarLoss(Vec<usize>),
    #[error("tape already consumed by a backward pass")]
    TapeConsumed,
    #[error("non-finite value in {0}")]
    NonFinite(String),
    #[error("duplicate parameter name `{0}`")]
    DuplicateParameter(String),
    #[error("checkpoint: {0}")]
    Checkpoint(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ParamId(usize);

impl ParamId {
    pub fn index(self) -> usize {
        self.0
    }
}

/// A named trainable tensor together with its Adam moment accumulators.
#[derive(Clone, Debug)]
pub struct Parameter {
    pub name: String,
    pub tensor: Tensor,
    pub adam_m: Tensor,
    pub adam_v: Tensor,
    pub step_count: u64,
}

impl Parameter {
    fn new(name: String, tensor: Tensor) -> Self {
        let adam_m = Tensor::zeros(tensor.shape());
        let adam_v = Tensor::zeros(tensor.shape());
        Self {
            name,
            tensor,
            adam_m,
            adam_v,
            step_count: 0,
        }
    }
}

#[derive(Clone, Debug, Default)]
pub struct ParamStore {
    params: Vec<Parameter>,
    by_name: HashMap<String, usize>,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add(
        &mut self,
        name: impl Into<String>,
        tensor: Tensor,
    ) -> Result<ParamId, NumericsError> {
        let name = name.into();
        if self.by_name.contains_key(&name) {
            return Err(NumericsError::DuplicateParameter(name));
        }
        let id = self.params.len();
        self.by_name.insert(name.clone(), id);
        self.params.push(Parameter::new(name, tensor));
        Ok(ParamId(id))
    }

    /// Adds a parameter drawn from `uniform(-1/√fan_in, 1/√fan_in)`, where
    /// the fan-in is the last dimension of `shape`.
    pub fn add_uniform<R: Rng>(
        &mut self,
        name: impl Into<String>,
        shape: &[usize],
        rng: &mut R,
    ) -> Result<ParamId, NumericsError> {
        let fan_in = shape.last().copied().unwrap_or(1).max(1);
        let bound = 1.0 / (fan_in as f64).sqrt();
        let len: usize = shape.iter().product();
        let data = (0..len).map(|_| rng.random_range(-bound..bound)).collect();
        self.add(name, Tensor::new(shape.to_vec(), data)?)
    }

    pub fn add_zeros(
        &mut self,
        name: impl Into<String>,
        shape: &[usize],
    ) -> Result<ParamId, NumericsError> {
        self.add(name, Tensor::zeros(shape))
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    pub fn ids(&self) -> impl Iterator<Item = ParamId> {
        (0..self.params.len()).map(ParamId)
    }

    pub fn get(&self, id: ParamId) -> &Parameter {
        &self.params[id.0]
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Parameter {
        &mut self.params[id.0]
    }

    pub fn tensor(&self, id: ParamId) -> &Tensor {
        &self.params[id.0].tensor
    }

    pub fn tensor_mut(&mut self, id: ParamId) -> &mut Tensor {
        &mut self.params[id.0].tensor
    }

    pub fn find(&self, name: &str) -> Option<ParamId> {
        self.by_name.get(name).copied().map(ParamId)
    }

    pub fn iter(&self) -> impl Iterator<Item = &Parameter> {
        self.params.iter()
    }

    /// Total number of scalar weights.
    pub fn num_weights(&self) -> usize {
        self.params.iter().map(|p| p.tensor.len()).sum()
    }
}

/// Per-parameter gradients produced by [`Tape::backward`]. Parameters that
/// were never touched by the forward pass have no entry and count as zero.
#[derive(Clone, Debug)]
pub struct Gradients {
    grads: Vec<Option<Tensor>>,
}

impl Gradients {
    pub fn zeros_for(store: &ParamStore) -> Self {
        Self {
            grads: vec![None; store.len()],
        }
    }

    pub fn get(&self, id: ParamId) -> Option<&Tensor> {
        self.grads.get(id.0).and_then(Option::as_ref)
    }

    /// Gradient as a dense vector, zeros when absent.
    pub fn dense(&self, store: &ParamStore, id: ParamId) -> Vec<f64> {
        match self.get(id) {
            Some(g) => g.data().to_vec(),
            None => vec![0.0; store.tensor(id).len()],
        }
    }

    pub(crate) fn accumulate_raw(&mut self, id: ParamId, shape: &[usize], grad: Vec<f64>) {
        let slot = &mut self.grads[id.0];
        match slot {
            Some(t) => {
                for (a, b) in t.data_mut().iter_mut().zip(&grad) {
                    *a += b;
                }
            }
            None => {
                *slot = Some(Tensor::new(shape.to_vec(), grad).expect("gradient shape"));
            }
        }
    }

    /// Adds `other` into `self` parameter by parameter, in parameter order.
    pub fn accumulate(&mut self, other: Gradients) {
        for (slot, g) in self.grads.iter_mut().zip(other.grads) {
            if let Some(g) = g {
                match slot {
                    Some(t) => t.add_assign(&g),
                    None => *slot = Some(g),
                }
            }
        }
    }

    pub fn is_finite(&self) -> bool {
        self.grads.iter().flatten().all(Tensor::is_finite)
    }

    pub fn max_abs(&self) -> f64 {
        self.grads
            .iter()
            .flatten()
            .flat_map(|t| t.data().iter())
            .fold(0.0, |m, v| m.max(v.abs()))
    }
}
