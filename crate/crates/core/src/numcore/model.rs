//! Heterogeneous feed-forward models: a rectified feature extractor followed
//! by a single affine classifier.

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::tape::{Gradients, Tape, Var};
use super::tensor::Tensor;
use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModelSpec {
    pub input_dim: usize,
    /// Extractor widths; the last entry is the embedding dimension.
    pub hidden_dims: Vec<usize>,
    pub num_classes: usize,
}

impl ModelSpec {
    pub fn new(input_dim: usize, hidden_dims: Vec<usize>, num_classes: usize) -> Result<Self> {
        let spec = Self {
            input_dim,
            hidden_dims,
            num_classes,
        };
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<()> {
        if self.input_dim == 0 || self.num_classes == 0 {
            return Err(Error::invalid("model input_dim and num_classes must be positive"));
        }
        if self.hidden_dims.is_empty() || self.hidden_dims.contains(&0) {
            return Err(Error::invalid("hidden_dims must be a nonempty list of positive widths"));
        }
        Ok(())
    }

    pub fn embedding_dim(&self) -> usize {
        *self.hidden_dims.last().expect("validated nonempty")
    }

    /// `(fan_in, fan_out)` of every affine layer, classifier last.
    pub fn layer_dims(&self) -> Vec<(usize, usize)> {
        let mut dims = Vec::with_capacity(self.hidden_dims.len() + 1);
        let mut fan_in = self.input_dim;
        for &h in &self.hidden_dims {
            dims.push((fan_in, h));
            fan_in = h;
        }
        dims.push((fan_in, self.num_classes));
        dims
    }

    pub fn param_count(&self) -> usize {
        self.layer_dims().iter().map(|(i, o)| i * o + o).sum()
    }

    /// Short human-readable architecture tag, e.g. `mlp-64-32`.
    pub fn arch_name(&self) -> String {
        let widths: Vec<String> = self.hidden_dims.iter().map(|h| h.to_string()).collect();
        format!("mlp-{}", widths.join("-"))
    }
}

/// Parameters are stored as `[w0, b0, w1, b1, ..., w_cls, b_cls]` with each
/// weight laid out `[fan_in, fan_out]`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Model {
    spec: ModelSpec,
    params: Vec<Tensor>,
}

/// Tape handles for one model's parameters, in the model's canonical order.
#[derive(Clone, Debug)]
pub struct BoundModel {
    vars: Vec<Var>,
}

/// Outputs of a recorded forward pass.
#[derive(Clone, Copy, Debug)]
pub struct ForwardVars {
    pub features: Var,
    pub logits: Var,
}

impl Model {
    /// Glorot-uniform weights, zero biases.
    pub fn init<R: Rng + ?Sized>(spec: ModelSpec, rng: &mut R) -> Result<Self> {
        spec.validate()?;
        let mut params = Vec::new();
        for (fan_in, fan_out) in spec.layer_dims() {
            let bound = (6.0 / (fan_in + fan_out) as f64).sqrt();
            let w: Vec<f64> = (0..fan_in * fan_out)
                .map(|_| rng.random_range(-bound..=bound))
                .collect();
            params.push(Tensor::matrix(fan_in, fan_out, w)?);
            params.push(Tensor::zeros(&[fan_out]));
        }
        Ok(Self { spec, params })
    }

    /// All-zero parameters.
    pub fn zeros(spec: ModelSpec) -> Result<Self> {
        spec.validate()?;
        let mut params = Vec::new();
        for (fan_in, fan_out) in spec.layer_dims() {
            params.push(Tensor::zeros(&[fan_in, fan_out]));
            params.push(Tensor::zeros(&[fan_out]));
        }
        Ok(Self { spec, params })
    }

    pub fn from_params(spec: ModelSpec, params: Vec<Tensor>) -> Result<Self> {
        spec.validate()?;
        let dims = spec.layer_dims();
        if params.len() != dims.len() * 2 {
            return Err(Error::DimensionMismatch {
                context: "model parameters",
                expected: vec![dims.len() * 2],
                actual: vec![params.len()],
            });
        }
        for ((fan_in, fan_out), pair) in dims.iter().zip(params.chunks(2)) {
            if pair[0].shape() != [*fan_in, *fan_out] || pair[1].len() != *fan_out {
                return Err(Error::DimensionMismatch {
                    context: "model parameters",
                    expected: vec![*fan_in, *fan_out],
                    actual: pair[0].shape().to_vec(),
                });
            }
        }
        Ok(Self { spec, params })
    }

    pub fn spec(&self) -> &ModelSpec {
        &self.spec
    }

    pub fn params(&self) -> &[Tensor] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [Tensor] {
        &mut self.params
    }

    fn check_input(&self, batch: &Tensor) -> Result<()> {
        if batch.shape().len() != 2 || batch.cols() != self.spec.input_dim {
            return Err(Error::DimensionMismatch {
                context: "model input",
                expected: vec![batch.rows(), self.spec.input_dim],
                actual: batch.shape().to_vec(),
            });
        }
        Ok(())
    }

    /// Untracked forward pass, returning `(features, logits)`.
    pub fn forward(&self, batch: &Tensor) -> Result<(Tensor, Tensor)> {
        self.check_input(batch)?;
        let n_hidden = self.spec.hidden_dims.len();
        let mut h = batch.clone();
        for layer in 0..n_hidden {
            h = h
                .matmul(&self.params[2 * layer])?
                .add_row_vector(&self.params[2 * layer + 1])?
                .relu();
        }
        let logits = h
            .matmul(&self.params[2 * n_hidden])?
            .add_row_vector(&self.params[2 * n_hidden + 1])?;
        Ok((h, logits))
    }

    /// Registers the parameters as differentiable leaves on `tape`.
    pub fn bind(&self, tape: &mut Tape) -> BoundModel {
        BoundModel {
            vars: self.params.iter().map(|p| tape.param(p.clone())).collect(),
        }
    }

    /// Recorded forward pass; values are bitwise identical to [`Model::forward`].
    pub fn forward_on(&self, tape: &mut Tape, bound: &BoundModel, input: Var) -> Result<ForwardVars> {
        self.check_input(tape.value(input))?;
        let n_hidden = self.spec.hidden_dims.len();
        let mut h = input;
        for layer in 0..n_hidden {
            let z = tape.matmul(h, bound.vars[2 * layer])?;
            let z = tape.add_bias(z, bound.vars[2 * layer + 1])?;
            h = tape.relu(z);
        }
        let z = tape.matmul(h, bound.vars[2 * n_hidden])?;
        let logits = tape.add_bias(z, bound.vars[2 * n_hidden + 1])?;
        Ok(ForwardVars {
            features: h,
            logits,
        })
    }

    /// Parameter gradients after `tape.backward`, zero-filled where unused.
    pub fn collect_grads(&self, bound: &BoundModel, tape: &Tape, grads: &Gradients) -> Vec<Tensor> {
        bound
            .vars
            .iter()
            .map(|&v| grads.get_or_zeros(v, tape))
            .collect()
    }

    /// Flattened copy of all parameters (finite-difference helpers).
    pub fn flat_params(&self) -> Vec<f64> {
        self.params.iter().flat_map(|p| p.data().iter().copied()).collect()
    }

    pub fn set_flat_params(&mut self, flat: &[f64]) {
        let mut offset = 0;
        for p in &mut self.params {
            let n = p.len();
            p.data_mut().copy_from_slice(&flat[offset..offset + n]);
            offset += n;
        }
    }
}
