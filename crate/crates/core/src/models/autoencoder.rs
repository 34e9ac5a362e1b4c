//! Encoder/decoder networks for the AE family and their training loss.

use rand::Rng;

use super::config::{ModelConfig, ModelKind};
use crate::error::Result;
use crate::tensor::{Matrix, Mlp, MlpSpec, ParamStore, Tape, Var};

/// Closed-form `KL(N(mu, diag(sigma^2)) || N(0, I))`.
pub fn kl_divergence(mu: &[f64], sigma: &[f64]) -> f64 {
    mu.iter()
        .zip(sigma)
        .map(|(m, s)| 0.5 * (m * m + s * s - 1.0) - s.ln())
        .sum()
}

#[derive(Debug, Clone)]
pub struct AutoencoderNet {
    pub kind: ModelKind,
    pub latent_dim: usize,
    pub state_dim: usize,
    pub action_dim: usize,
    pub encoder_sees_state: bool,
    pub kl_weight: f64,
    pub encoder: Mlp,
    pub decoder: Mlp,
}

/// A recorded minibatch loss. `reconstruction` is the mean squared error
/// norm `|a - a_hat|^2` alone.
pub struct LossGraph {
    pub tape: Tape,
    pub loss: Var,
    pub reconstruction: Var,
}

impl AutoencoderNet {
    pub fn new<R: Rng>(
        config: &ModelConfig,
        state_dim: usize,
        action_dim: usize,
        store: &mut ParamStore,
        rng: &mut R,
    ) -> Result<Self> {
        let d = config.latent_dim;
        let enc_in = action_dim + if config.encoder_sees_state { state_dim } else { 0 };
        let enc_out = if config.kind.is_variational() { 2 * d } else { d };
        let dec_in = d + if config.kind.is_conditioned() { state_dim } else { 0 };
        let encoder = Mlp::new(
            MlpSpec {
                input_dim: enc_in,
                output_dim: enc_out,
                hidden_sizes: config.hidden_sizes.clone(),
            },
            "encoder",
            store,
            rng,
        )?;
        let decoder = Mlp::new(
            MlpSpec {
                input_dim: dec_in,
                output_dim: action_dim,
                hidden_sizes: config.hidden_sizes.clone(),
            },
            "decoder",
            store,
            rng,
        )?;
        Ok(AutoencoderNet {
            kind: config.kind,
            latent_dim: d,
            state_dim,
            action_dim,
            encoder_sees_state: config.encoder_sees_state,
            kl_weight: config.kl_weight,
            encoder,
            decoder,
        })
    }

    fn encoder_input(&self, states: &Matrix, actions: &Matrix) -> Matrix {
        if self.encoder_sees_state {
            let mut x = Matrix::zeros(actions.nrows(), self.state_dim + self.action_dim);
            x.columns_mut(0, self.state_dim).copy_from(states);
            x.columns_mut(self.state_dim, self.action_dim).copy_from(actions);
            x
        } else {
            actions.clone()
        }
    }

    /// Raw encoder head on normalized inputs: `(mu, log_sigma)`, the latter
    /// only for variational kinds.
    pub fn encode_rows(&self, store: &ParamStore, states: &Matrix, actions: &Matrix) -> Result<(Matrix, Option<Matrix>)> {
        let out = self.encoder.forward_batch(store, &self.encoder_input(states, actions))?;
        let d = self.latent_dim;
        if self.kind.is_variational() {
            Ok((out.columns(0, d).into_owned(), Some(out.columns(d, d).into_owned())))
        } else {
            Ok((out, None))
        }
    }

    /// Decoder on latent rows; `states` (normalized) is required for
    /// conditioned kinds and ignored otherwise. Output is normalized.
    pub fn decode_rows(&self, store: &ParamStore, zs: &Matrix, states: Option<&Matrix>) -> Result<Matrix> {
        match (self.kind.is_conditioned(), states) {
            (true, Some(s)) => {
                let mut x = Matrix::zeros(zs.nrows(), self.latent_dim + self.state_dim);
                x.columns_mut(0, self.latent_dim).copy_from(zs);
                x.columns_mut(self.latent_dim, self.state_dim).copy_from(s);
                self.decoder.forward_batch(store, &x)
            }
            (true, None) => Err(crate::Error::Config("conditioned decoder needs a state".into())),
            (false, _) => self.decoder.forward_batch(store, zs),
        }
    }

    /// Records the training loss of one minibatch (normalized inputs).
    /// `noise` (B x d) drives the reparameterized sample of variational
    /// kinds; `None` decodes the mean.
    pub fn loss_graph(&self, store: &ParamStore, states: &Matrix, actions: &Matrix, noise: Option<&Matrix>) -> LossGraph {
        let d = self.latent_dim;
        let batch = actions.nrows();
        let mut tape = Tape::new();
        let x = tape.constant(self.encoder_input(states, actions));
        let head = self.encoder.forward_tape(&mut tape, store, x);

        let mut kl = None;
        let z = if self.kind.is_variational() {
            let mu = tape.slice_cols(head, 0, d);
            let log_sigma = tape.slice_cols(head, d, d);
            let sample = match noise {
                Some(eta) => {
                    let sigma = tape.exp(log_sigma);
                    let eta = tape.constant(eta.clone());
                    let spread = tape.mul(sigma, eta);
                    tape.add(mu, spread)
                }
                None => mu,
            };
            // 0.5 (mu^2 + sigma^2 - 1) - log sigma, summed over d, averaged over the batch
            let mu_sq = tape.square(mu);
            let two_ls = tape.scale(log_sigma, 2.0);
            let var = tape.exp(two_ls);
            let quad = tape.add(mu_sq, var);
            let quad = tape.sub(quad, two_ls);
            let total = tape.sum(quad);
            let total = tape.scale(total, 0.5 / batch as f64);
            let offset = tape.constant(Matrix::from_element(1, 1, -0.5 * d as f64));
            kl = Some(tape.add(total, offset));
            sample
        } else {
            head
        };

        let dec_in = if self.kind.is_conditioned() {
            let s = tape.constant(states.clone());
            tape.concat_cols(z, s)
        } else {
            z
        };
        let recon = self.decoder.forward_tape(&mut tape, store, dec_in);
        let target = tape.constant(actions.clone());
        let err = tape.sub(recon, target);
        let err = tape.square(err);
        // squared error norm per sample, averaged over the batch
        let mse = tape.sum(err);
        let mse = tape.scale(mse, 1.0 / batch as f64);
        let loss = match kl {
            Some(kl) => {
                let weighted = tape.scale(kl, self.kl_weight);
                tape.add(mse, weighted)
            }
            None => mse,
        };
        LossGraph {
            tape,
            loss,
            reconstruction: mse,
        }
    }
}
