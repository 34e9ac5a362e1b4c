//! Latent action models: a PCA baseline and four autoencoder variants
//! sharing one train/encode/decode interface.

mod autoencoder;
mod config;
mod file;
mod normalize;
mod pca;

use nalgebra::{DMatrix, DVector};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

pub use autoencoder::{kl_divergence, AutoencoderNet, LossGraph};
pub use config::{ModelConfig, ModelKind};
pub use file::{MODEL_MAGIC, MODEL_VERSION};
pub use normalize::Normalizer;
pub use pca::PcaBasis;

use crate::arm::{ArmGeometry, JointState, JointVelocityAction};
use crate::demo::DemoDataset;
use crate::error::{Error, Result};
use crate::tensor::{adam_step, AdamConfig, Matrix, ParamStore};

/// Training states kept in the model file for out-of-distribution checks.
const REFERENCE_STATE_LIMIT: usize = 512;

/// Encoder output. Deterministic kinds report `std` as all zeros.
#[derive(Debug, Clone, PartialEq)]
pub struct LatentDistribution {
    pub mean: DVector<f64>,
    pub std: DVector<f64>,
}

impl LatentDistribution {
    pub fn is_deterministic(&self) -> bool {
        self.std.iter().all(|&s| s == 0.0)
    }
}

#[derive(Debug, Clone)]
enum Body {
    Pca(PcaBasis),
    Net { net: AutoencoderNet, store: ParamStore },
}

#[derive(Debug, Clone)]
pub struct TrainedModel {
    pub config: ModelConfig,
    pub geometry: ArmGeometry,
    /// Name of the task the training data came from.
    pub task_name: String,
    pub state_norm: Normalizer,
    pub action_norm: Normalizer,
    /// Mean loss per epoch (PCA records its single closed-form fit).
    pub loss_history: Vec<f64>,
    /// Reconstruction MSE on the training set in action units.
    pub final_train_mse: f64,
    /// Subsample of training states (rows).
    pub reference_states: DMatrix<f64>,
    alignment: DMatrix<f64>,
    body: Body,
}

impl TrainedModel {
    pub fn kind(&self) -> ModelKind {
        self.config.kind
    }

    pub fn latent_dim(&self) -> usize {
        self.config.latent_dim
    }

    pub fn state_dim(&self) -> usize {
        self.geometry.dof()
    }

    pub fn action_dim(&self) -> usize {
        self.geometry.dof()
    }

    pub fn alignment(&self) -> &DMatrix<f64> {
        &self.alignment
    }

    /// Stores an orthogonal alignment `Q`; decoding then uses `Q z`.
    /// Orthogonality is the caller's responsibility (see the align module).
    pub(crate) fn replace_alignment(&mut self, q: DMatrix<f64>) {
        self.alignment = q;
    }

    pub fn pca_basis(&self) -> Option<&PcaBasis> {
        match &self.body {
            Body::Pca(p) => Some(p),
            Body::Net { .. } => None,
        }
    }

    pub fn network(&self) -> Option<(&AutoencoderNet, &ParamStore)> {
        match &self.body {
            Body::Net { net, store } => Some((net, store)),
            Body::Pca(_) => None,
        }
    }

    fn check_state(&self, s: &JointState) -> Result<()> {
        if s.len() != self.state_dim() {
            return Err(Error::dim("model state", self.state_dim(), s.len()));
        }
        Ok(())
    }

    /// Encoder output for one pair, expressed in the aligned latent frame.
    pub fn encode(&self, s: &JointState, a: &JointVelocityAction) -> Result<LatentDistribution> {
        self.check_state(s)?;
        if a.len() != self.action_dim() {
            return Err(Error::dim("model action", self.action_dim(), a.len()));
        }
        let states = DMatrix::from_row_slice(1, s.len(), s.as_slice());
        let actions = DMatrix::from_row_slice(1, a.len(), a.as_slice());
        let (mu, sigma) = self.encode_rows(&states, &actions)?;
        Ok(LatentDistribution {
            mean: DVector::from_iterator(mu.ncols(), mu.row(0).iter().copied()),
            std: DVector::from_iterator(sigma.ncols(), sigma.row(0).iter().copied()),
        })
    }

    /// Batched [`encode`](Self::encode): rows of `(mu, sigma)`.
    pub fn encode_rows(&self, states: &Matrix, actions: &Matrix) -> Result<(Matrix, Matrix)> {
        let (mu, sigma) = self.encode_rows_unaligned(states, actions)?;
        // row form of Q^T mu; marginal std of the rotated Gaussian
        let q = &self.alignment;
        let mu = mu * q;
        let var = sigma.map(|s| s * s) * q.map(|v| v * v);
        Ok((mu, var.map(f64::sqrt)))
    }

    fn encode_rows_unaligned(&self, states: &Matrix, actions: &Matrix) -> Result<(Matrix, Matrix)> {
        let n = self.state_dim();
        if states.ncols() != n || actions.ncols() != n || states.nrows() != actions.nrows() {
            return Err(Error::dim("encoder batch columns", n, actions.ncols()));
        }
        match &self.body {
            Body::Pca(p) => {
                let mut centered = actions.clone();
                for (j, mut col) in centered.column_iter_mut().enumerate() {
                    col.add_scalar_mut(-p.mean[j]);
                }
                let mu = centered * &p.components;
                let zeros = Matrix::zeros(mu.nrows(), mu.ncols());
                Ok((mu, zeros))
            }
            Body::Net { net, store } => {
                let s = self.state_norm.apply_rows(states);
                let a = self.action_norm.apply_rows(actions);
                let (mu, log_sigma) = net.encode_rows(store, &s, &a)?;
                let sigma = match log_sigma {
                    Some(ls) => ls.map(f64::exp),
                    None => Matrix::zeros(mu.nrows(), mu.ncols()),
                };
                Ok((mu, sigma))
            }
        }
    }

    /// Action for latent `z` at state `s`, after applying the alignment.
    pub fn decode(&self, z: &DVector<f64>, s: &JointState) -> Result<JointVelocityAction> {
        let zs = DMatrix::from_row_slice(1, z.len(), z.as_slice());
        let out = self.decode_at(&zs, s)?;
        Ok(JointVelocityAction::from_vector(DVector::from_iterator(
            out.ncols(),
            out.row(0).iter().copied(),
        )))
    }

    /// Decodes without the stored alignment.
    pub fn decode_unaligned(&self, z: &DVector<f64>, s: &JointState) -> Result<JointVelocityAction> {
        let zs = DMatrix::from_row_slice(1, z.len(), z.as_slice());
        self.check_state(s)?;
        let states = DMatrix::from_row_slice(1, s.len(), s.as_slice());
        let out = self.decode_rows_raw(&zs, &states)?;
        Ok(JointVelocityAction::from_vector(DVector::from_iterator(
            out.ncols(),
            out.row(0).iter().copied(),
        )))
    }

    /// Decodes many latent rows (k x d) at one state; returns k x m actions.
    pub fn decode_at(&self, zs: &Matrix, s: &JointState) -> Result<Matrix> {
        self.check_state(s)?;
        let states = DMatrix::from_fn(zs.nrows(), s.len(), |_, j| s.angles[j]);
        self.decode_rows(zs, &states)
    }

    /// Decodes latent row `i` at state row `i`, after applying the alignment.
    pub fn decode_rows(&self, zs: &Matrix, states: &Matrix) -> Result<Matrix> {
        let d = self.latent_dim();
        if zs.ncols() != d {
            return Err(Error::dim("latent action", d, zs.ncols()));
        }
        let aligned = zs * self.alignment.transpose();
        self.decode_rows_raw(&aligned, states)
    }

    fn decode_rows_raw(&self, zs: &Matrix, states: &Matrix) -> Result<Matrix> {
        let d = self.latent_dim();
        if zs.ncols() != d {
            return Err(Error::dim("latent action", d, zs.ncols()));
        }
        if !zs.iter().all(|v| v.is_finite()) {
            return Err(Error::NonFinite("latent action"));
        }
        if states.ncols() != self.state_dim() || states.nrows() != zs.nrows() {
            return Err(Error::dim("decoder states", self.state_dim(), states.ncols()));
        }
        match &self.body {
            Body::Pca(p) => Ok(p.decode_rows(zs)),
            Body::Net { net, store } => {
                let out = if net.kind.is_conditioned() {
                    let s = self.state_norm.apply_rows(states);
                    net.decode_rows(store, zs, Some(&s))?
                } else {
                    net.decode_rows(store, zs, None)?
                };
                Ok(self.action_norm.invert_rows(&out))
            }
        }
    }

    /// `decode(encode(s, a).mean, s)` for each row, in action units.
    pub fn reconstruct_rows(&self, states: &Matrix, actions: &Matrix) -> Result<Matrix> {
        let (mu, _) = self.encode_rows_unaligned(states, actions)?;
        self.decode_rows_raw(&mu, states)
    }

    /// Mean squared reconstruction error over all pairs and joints.
    pub fn reconstruction_mse(&self, dataset: &DemoDataset) -> Result<f64> {
        if dataset.is_empty() {
            return Err(Error::Config("empty dataset".into()));
        }
        let actions = dataset.action_matrix();
        let recon = self.reconstruct_rows(&dataset.state_matrix(), &actions)?;
        Ok((recon - actions).map(|v| v * v).mean())
    }

    /// Distance (in normalized state units) from `s` to the nearest stored
    /// training state.
    pub fn novelty(&self, s: &JointState) -> Result<f64> {
        self.check_state(s)?;
        let x = self.state_norm.apply(&s.angles);
        let mut best = f64::INFINITY;
        for row in self.reference_states.row_iter() {
            let r = self.state_norm.apply(&row.transpose());
            best = best.min((r - &x).norm());
        }
        Ok(best)
    }
}

/// A state-conditioned map from latent inputs to joint-velocity actions.
/// The evaluation measures and the teleoperation loop only need this much;
/// [`TrainedModel`] is the usual implementation.
pub trait LatentDecoder: Sync {
    fn geometry(&self) -> &ArmGeometry;
    fn latent_dim(&self) -> usize;
    /// Decodes each row of `zs` (k x d) at state `s` into a row of actions (k x n).
    fn decode_at(&self, zs: &Matrix, s: &JointState) -> Result<Matrix>;
}

impl LatentDecoder for TrainedModel {
    fn geometry(&self) -> &ArmGeometry {
        &self.geometry
    }

    fn latent_dim(&self) -> usize {
        TrainedModel::latent_dim(self)
    }

    fn decode_at(&self, zs: &Matrix, s: &JointState) -> Result<Matrix> {
        TrainedModel::decode_at(self, zs, s)
    }
}

/// Fits `config` on `dataset`. Deterministic for a given config seed.
pub fn train(config: &ModelConfig, dataset: &DemoDataset) -> Result<TrainedModel> {
    let n = dataset.dof();
    config.validate(n)?;
    if dataset.is_empty() {
        return Err(Error::Config("cannot train on an empty dataset".into()));
    }
    let states = dataset.state_matrix();
    let actions = dataset.action_matrix();
    let state_norm = Normalizer::fit(&states);
    let action_norm = Normalizer::fit(&actions);
    let stride = dataset.len().div_ceil(REFERENCE_STATE_LIMIT).max(1);
    let picked: Vec<usize> = (0..dataset.len()).step_by(stride).collect();
    let reference_states = DMatrix::from_fn(picked.len(), n, |i, j| states[(picked[i], j)]);

    let (body, loss_history) = match config.kind {
        ModelKind::Pca => {
            let basis = PcaBasis::fit(&actions, config.latent_dim)?;
            (Body::Pca(basis), Vec::new())
        }
        _ => train_network(config, &state_norm, &action_norm, &states, &actions)?,
    };
    let mut model = TrainedModel {
        config: config.clone(),
        geometry: dataset.geometry().clone(),
        task_name: dataset.spec.name.clone(),
        state_norm,
        action_norm,
        loss_history,
        final_train_mse: 0.0,
        reference_states,
        alignment: DMatrix::identity(config.latent_dim, config.latent_dim),
        body,
    };
    model.final_train_mse = model.reconstruction_mse(dataset)?;
    if model.loss_history.is_empty() {
        model.loss_history.push(model.final_train_mse);
    }
    Ok(model)
}

/// Cosine interpolation from `learning_rate` down to
/// `learning_rate * final_lr_fraction` at the last epoch.
pub fn scheduled_lr(config: &ModelConfig, epoch: usize) -> f64 {
    if config.epochs <= 1 {
        return config.learning_rate;
    }
    let progress = epoch as f64 / (config.epochs - 1) as f64;
    let floor = config.final_lr_fraction;
    let factor = floor + (1.0 - floor) * 0.5 * (1.0 + (std::f64::consts::PI * progress).cos());
    config.learning_rate * factor
}

fn train_network(
    config: &ModelConfig,
    state_norm: &Normalizer,
    action_norm: &Normalizer,
    states: &Matrix,
    actions: &Matrix,
) -> Result<(Body, Vec<f64>)> {
    let n = states.ncols();
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut store = ParamStore::new();
    let net = AutoencoderNet::new(config, n, n, &mut store, &mut rng)?;
    let s_all = state_norm.apply_rows(states);
    let a_all = action_norm.apply_rows(actions);
    let mut adam = AdamConfig {
        lr: config.learning_rate,
        ..AdamConfig::default()
    };
    let d = config.latent_dim;
    let rows = s_all.nrows();
    let mut order: Vec<usize> = (0..rows).collect();
    let mut history = Vec::with_capacity(config.epochs);
    for epoch in 0..config.epochs {
        adam.lr = scheduled_lr(config, epoch);
        order.shuffle(&mut rng);
        let mut total = 0.0;
        let mut counted = 0usize;
        for chunk in order.chunks(config.batch_size) {
            let s = DMatrix::from_fn(chunk.len(), n, |i, j| s_all[(chunk[i], j)]);
            let a = DMatrix::from_fn(chunk.len(), n, |i, j| a_all[(chunk[i], j)]);
            let noise = config
                .kind
                .is_variational()
                .then(|| DMatrix::from_fn(chunk.len(), d, |_, _| StandardNormal.sample(&mut rng)));
            let graph = net.loss_graph(&store, &s, &a, noise.as_ref());
            let loss = graph.tape.scalar(graph.loss);
            if !loss.is_finite() {
                log::warn!("epoch {epoch}: non-finite minibatch loss skipped");
                continue;
            }
            let grads = graph.tape.backward(graph.loss, &store);
            let report = adam_step(&mut store, &grads, &adam);
            if !report.skipped.is_empty() {
                log::warn!("epoch {epoch}: skipped updates for {:?}", report.skipped);
            }
            total += loss * chunk.len() as f64;
            counted += chunk.len();
        }
        if counted == 0 {
            return Err(Error::NonFinite("training loss"));
        }
        history.push(total / counted as f64);
        log::debug!("{} epoch {epoch}: loss {:.6}", config.kind, history[epoch]);
    }
    if !store.all_finite() {
        return Err(Error::NonFinite("trained parameters"));
    }
    Ok((Body::Net { net, store }, history))
}
