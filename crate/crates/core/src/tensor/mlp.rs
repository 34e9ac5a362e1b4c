use nalgebra::{DMatrix, DVector};
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::params::{ParamId, ParamStore};
use super::tape::{Matrix, Tape, Var};
use crate::error::{Error, Result};

/// Fully connected network: tanh on hidden layers, identity on the output.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MlpSpec {
    pub input_dim: usize,
    pub output_dim: usize,
    pub hidden_sizes: Vec<usize>,
}

impl MlpSpec {
    pub fn validate(&self) -> Result<()> {
        if self.input_dim == 0 || self.output_dim == 0 || self.hidden_sizes.contains(&0) {
            return Err(Error::Config("network dimensions must be >= 1".into()));
        }
        if self.hidden_sizes.len() > 3 {
            return Err(Error::Config(format!(
                "at most 3 hidden layers supported, got {}",
                self.hidden_sizes.len()
            )));
        }
        Ok(())
    }

    /// (fan_in, fan_out) of each linear layer.
    pub fn layer_shapes(&self) -> Vec<(usize, usize)> {
        let mut dims = vec![self.input_dim];
        dims.extend(&self.hidden_sizes);
        dims.push(self.output_dim);
        dims.windows(2).map(|w| (w[0], w[1])).collect()
    }
}

#[derive(Debug, Clone)]
pub struct Mlp {
    pub spec: MlpSpec,
    layers: Vec<(ParamId, ParamId)>,
}

impl Mlp {
    /// Registers weights (uniform in +-1/sqrt(fan_in)) and zero biases under `prefix`.
    pub fn new<R: Rng>(spec: MlpSpec, prefix: &str, store: &mut ParamStore, rng: &mut R) -> Result<Self> {
        spec.validate()?;
        let layers = spec
            .layer_shapes()
            .into_iter()
            .enumerate()
            .map(|(i, (fan_in, fan_out))| {
                let bound = 1.0 / (fan_in as f64).sqrt();
                let w = DMatrix::from_fn(fan_in, fan_out, |_, _| rng.random_range(-bound..bound));
                let w = store.add(format!("{prefix}.{i}.weight"), w);
                let b = store.add(format!("{prefix}.{i}.bias"), DMatrix::zeros(1, fan_out));
                (w, b)
            })
            .collect();
        Ok(Mlp { spec, layers })
    }

    pub fn layer_params(&self) -> &[(ParamId, ParamId)] {
        &self.layers
    }

    /// Records the forward pass of a batch (rows are samples) on the tape.
    pub fn forward_tape(&self, tape: &mut Tape, store: &ParamStore, input: Var) -> Var {
        let last = self.layers.len() - 1;
        let mut h = input;
        for (i, &(w, b)) in self.layers.iter().enumerate() {
            let wv = tape.param(store, w);
            let bv = tape.param(store, b);
            let lin = tape.matmul(h, wv);
            let lin = tape.add_bias(lin, bv);
            h = if i == last { lin } else { tape.tanh(lin) };
        }
        h
    }

    /// Forward pass over a batch without recording gradients.
    pub fn forward_batch(&self, store: &ParamStore, input: &Matrix) -> Result<Matrix> {
        if input.ncols() != self.spec.input_dim {
            return Err(Error::dim("network input", self.spec.input_dim, input.ncols()));
        }
        let last = self.layers.len() - 1;
        let mut h = input.clone();
        for (i, &(w, b)) in self.layers.iter().enumerate() {
            let mut lin = &h * store.value(w);
            let bias = store.value(b);
            for (j, mut col) in lin.column_iter_mut().enumerate() {
                let bj = bias[(0, j)];
                col.iter_mut().for_each(|v| *v += bj);
            }
            if i != last {
                lin.apply(|v| *v = v.tanh());
            }
            h = lin;
        }
        Ok(h)
    }

    pub fn forward(&self, store: &ParamStore, input: &DVector<f64>) -> Result<DVector<f64>> {
        let row = Matrix::from_row_slice(1, input.len(), input.as_slice());
        let out = self.forward_batch(store, &row)?;
        Ok(DVector::from_iterator(out.ncols(), out.row(0).iter().copied()))
    }
}
