use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ModelKind {
    Pca,
    Ae,
    Vae,
    Cae,
    Cvae,
}

impl ModelKind {
    pub const ALL: [ModelKind; 5] = [
        ModelKind::Pca,
        ModelKind::Ae,
        ModelKind::Vae,
        ModelKind::Cae,
        ModelKind::Cvae,
    ];

    pub fn name(self) -> &'static str {
        match self {
            ModelKind::Pca => "PCA",
            ModelKind::Ae => "AE",
            ModelKind::Vae => "VAE",
            ModelKind::Cae => "cAE",
            ModelKind::Cvae => "cVAE",
        }
    }

    /// Decoder takes the current state alongside the latent action.
    pub fn is_conditioned(self) -> bool {
        matches!(self, ModelKind::Cae | ModelKind::Cvae)
    }

    pub fn is_variational(self) -> bool {
        matches!(self, ModelKind::Vae | ModelKind::Cvae)
    }

    pub fn is_neural(self) -> bool {
        self != ModelKind::Pca
    }
}

impl std::fmt::Display for ModelKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

impl std::str::FromStr for ModelKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        ModelKind::ALL
            .into_iter()
            .find(|k| k.name().eq_ignore_ascii_case(s))
            .ok_or_else(|| Error::Config(format!("unknown model kind `{s}`")))
    }
}

fn default_hidden() -> Vec<usize> {
    vec![64, 64]
}
fn default_lr() -> f64 {
    1e-2
}
fn default_kl_weight() -> f64 {
    0.1
}
fn default_epochs() -> usize {
    200
}
fn default_batch() -> usize {
    64
}
fn default_final_lr() -> f64 {
    1.0
}
fn default_true() -> bool {
    true
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub kind: ModelKind,
    pub latent_dim: usize,
    #[serde(default = "default_hidden")]
    pub hidden_sizes: Vec<usize>,
    #[serde(default = "default_lr")]
    pub learning_rate: f64,
    /// Learning rate reached at the last epoch, as a fraction of
    /// `learning_rate`, following a cosine schedule. 1.0 keeps it constant.
    #[serde(default = "default_final_lr")]
    pub final_lr_fraction: f64,
    #[serde(default = "default_kl_weight")]
    pub kl_weight: f64,
    #[serde(default = "default_epochs")]
    pub epochs: usize,
    #[serde(default = "default_batch")]
    pub batch_size: usize,
    #[serde(default)]
    pub seed: u64,
    /// Feed the state to the encoder as well as the action.
    #[serde(default = "default_true")]
    pub encoder_sees_state: bool,
    /// Lets PCA keep every action dimension (latent_dim == action dim), for
    /// sanity checks of the evaluation pipeline.
    #[serde(default)]
    pub allow_full_rank: bool,
}

impl ModelConfig {
    pub fn new(kind: ModelKind, latent_dim: usize) -> Self {
        ModelConfig {
            kind,
            latent_dim,
            hidden_sizes: default_hidden(),
            learning_rate: default_lr(),
            final_lr_fraction: default_final_lr(),
            kl_weight: default_kl_weight(),
            epochs: default_epochs(),
            batch_size: default_batch(),
            seed: 0,
            encoder_sees_state: true,
            allow_full_rank: false,
        }
    }

    pub fn validate(&self, action_dim: usize) -> Result<()> {
        let full_rank_ok = self.allow_full_rank && self.kind == ModelKind::Pca;
        if self.latent_dim == 0 {
            return Err(Error::Config("latent_dim must be >= 1".into()));
        }
        if self.latent_dim > action_dim || (self.latent_dim == action_dim && !full_rank_ok) {
            return Err(Error::Config(format!(
                "latent_dim {} must be smaller than the action dimension {action_dim}",
                self.latent_dim
            )));
        }
        if self.kind.is_neural() {
            if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
                return Err(Error::Config("learning_rate must be positive".into()));
            }
            if !(self.final_lr_fraction > 0.0 && self.final_lr_fraction <= 1.0) {
                return Err(Error::Config("final_lr_fraction must lie in (0, 1]".into()));
            }
            if self.batch_size == 0 {
                return Err(Error::Config("batch_size must be >= 1".into()));
            }
            if self.hidden_sizes.contains(&0) || self.hidden_sizes.len() > 3 {
                return Err(Error::Config("hidden_sizes: 0 to 3 layers of width >= 1".into()));
            }
        }
        if self.kind.is_variational() && !(self.kl_weight > 0.0 && self.kl_weight < 1.0) {
            return Err(Error::Config(format!(
                "kl_weight must lie in (0, 1), got {}",
                self.kl_weight
            )));
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_kind_names() {
        assert_eq!("cvae".parse::<ModelKind>().unwrap(), ModelKind::Cvae);
        assert_eq!("PCA".parse::<ModelKind>().unwrap(), ModelKind::Pca);
        assert!("gan".parse::<ModelKind>().is_err());
    }

    #[test]
    fn validation_rules() {
        let mut c = ModelConfig::new(ModelKind::Vae, 5);
        assert!(c.validate(5).is_err());
        c.latent_dim = 2;
        assert!(c.validate(5).is_ok());
        c.kl_weight = 1.0;
        assert!(c.validate(5).is_err());
        let mut p = ModelConfig::new(ModelKind::Pca, 5);
        assert!(p.validate(5).is_err());
        p.allow_full_rank = true;
        assert!(p.validate(5).is_ok());
    }

    #[test]
    fn toml_defaults() {
        let c: ModelConfig = toml::from_str("kind = \"cae\"\nlatent_dim = 1\n").unwrap();
        assert_eq!(c.hidden_sizes, vec![64, 64]);
        assert_eq!(c.batch_size, 64);
        assert!(c.encoder_sees_state);
    }
}
