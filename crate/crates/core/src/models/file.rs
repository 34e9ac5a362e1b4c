//! Binary model container.
//!
//! Layout: magic, u16 version, u32-length JSON header (config, geometry,
//! normalization statistics, alignment, loss history), then a u32 count of
//! named blocks, each `name, u32 rows, u32 cols, rows*cols f64` row-major.

use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufWriter, Read};
use std::path::Path;

use nalgebra::DMatrix;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{AutoencoderNet, Body, ModelConfig, ModelKind, Normalizer, PcaBasis, TrainedModel};
use crate::arm::ArmGeometry;
use crate::error::{Error, Result};
use crate::io::{ByteReader, ByteWriter};
use crate::tensor::ParamStore;

pub const MODEL_MAGIC: &[u8; 10] = b"LATACT-MD\0";
pub const MODEL_VERSION: u16 = 1;

#[derive(Serialize, Deserialize)]
struct Header {
    config: ModelConfig,
    geometry: ArmGeometry,
    task_name: String,
    state_norm: Normalizer,
    action_norm: Normalizer,
    /// Row-major d x d.
    alignment: Vec<f64>,
    loss_history: Vec<f64>,
    final_train_mse: f64,
}

fn write_block<W: std::io::Write>(w: &mut ByteWriter<W>, name: &str, m: &DMatrix<f64>) -> Result<()> {
    w.string(name)?;
    w.u32(m.nrows() as u32)?;
    w.u32(m.ncols() as u32)?;
    for i in 0..m.nrows() {
        for j in 0..m.ncols() {
            w.f64(m[(i, j)])?;
        }
    }
    Ok(())
}

fn take_block(blocks: &mut BTreeMap<String, DMatrix<f64>>, name: &str, shape: (usize, usize)) -> Result<DMatrix<f64>> {
    let m = blocks
        .remove(name)
        .ok_or_else(|| Error::Architecture(format!("missing parameter block `{name}`")))?;
    if m.shape() != shape {
        return Err(Error::Architecture(format!(
            "block `{name}` has shape {:?}, expected {shape:?}",
            m.shape()
        )));
    }
    Ok(m)
}

impl TrainedModel {
    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let d = self.latent_dim();
        let header = Header {
            config: self.config.clone(),
            geometry: self.geometry.clone(),
            task_name: self.task_name.clone(),
            state_norm: self.state_norm.clone(),
            action_norm: self.action_norm.clone(),
            alignment: (0..d * d).map(|k| self.alignment[(k / d, k % d)]).collect(),
            loss_history: self.loss_history.clone(),
            final_train_mse: self.final_train_mse,
        };
        let mut blocks: Vec<(String, DMatrix<f64>)> = vec![("reference_states".into(), self.reference_states.clone())];
        match &self.body {
            Body::Pca(p) => {
                blocks.push(("pca.mean".into(), DMatrix::from_row_slice(1, p.mean.len(), p.mean.as_slice())));
                blocks.push(("pca.components".into(), p.components.clone()));
                blocks.push(("pca.eigenvalues".into(), DMatrix::from_row_slice(1, p.eigenvalues.len(), &p.eigenvalues)));
            }
            Body::Net { store, .. } => {
                blocks.extend(store.named_values().map(|(n, v)| (n.to_string(), v.clone())));
            }
        }

        let mut w = ByteWriter::new(BufWriter::new(File::create(path)?));
        w.bytes(MODEL_MAGIC)?;
        w.u16(MODEL_VERSION)?;
        w.string(&serde_json::to_string(&header)?)?;
        w.u32(blocks.len() as u32)?;
        for (name, m) in &blocks {
            write_block(&mut w, name, m)?;
        }
        w.finish()
    }

    pub fn load(path: impl AsRef<Path>) -> Result<TrainedModel> {
        let path = path.as_ref();
        let mut bytes = Vec::new();
        File::open(path)?.read_to_end(&mut bytes)?;
        let mut r = ByteReader::new(&bytes);
        let magic = r.take(MODEL_MAGIC.len()).map_err(|_| Error::BadMagic(path.to_path_buf()))?;
        if magic != MODEL_MAGIC {
            return Err(Error::BadMagic(path.to_path_buf()));
        }
        let version = r.u16()?;
        if version != MODEL_VERSION {
            return Err(Error::Version {
                found: version,
                expected: MODEL_VERSION,
            });
        }
        let header: Header = serde_json::from_str(&r.string()?)?;
        let count = r.u32()? as usize;
        let mut blocks = BTreeMap::new();
        for _ in 0..count {
            let name = r.string()?;
            let rows = r.u32()? as usize;
            let cols = r.u32()? as usize;
            let len = rows
                .checked_mul(cols)
                .filter(|&l| l.saturating_mul(8) <= r.remaining())
                .ok_or_else(|| Error::Truncated(format!("block `{name}`")))?;
            let mut data = Vec::with_capacity(len);
            for _ in 0..len {
                data.push(r.f64()?);
            }
            blocks.insert(name, DMatrix::from_row_slice(rows, cols, &data));
        }
        if !r.is_empty() {
            return Err(Error::Format(format!("{} trailing bytes", r.remaining())));
        }

        let config = header.config;
        header.geometry.validate()?;
        let n = header.geometry.dof();
        let d = config.latent_dim;
        config.validate(n)?;
        if header.state_norm.dim() != n || header.action_norm.dim() != n {
            return Err(Error::dim("normalization statistics", n, header.state_norm.dim()));
        }
        if !header.state_norm.is_valid() || !header.action_norm.is_valid() {
            return Err(Error::Format("normalization statistics invalid".into()));
        }
        if header.alignment.len() != d * d {
            return Err(Error::dim("alignment entries", d * d, header.alignment.len()));
        }
        let alignment = DMatrix::from_row_slice(d, d, &header.alignment);

        let reference = blocks
            .remove("reference_states")
            .ok_or_else(|| Error::Architecture("missing block `reference_states`".into()))?;
        if reference.ncols() != n {
            return Err(Error::dim("reference states", n, reference.ncols()));
        }

        let body = if config.kind == ModelKind::Pca {
            let mean = take_block(&mut blocks, "pca.mean", (1, n))?;
            let components = take_block(&mut blocks, "pca.components", (n, d))?;
            let eig = take_block(&mut blocks, "pca.eigenvalues", (1, n))?;
            Body::Pca(PcaBasis {
                mean: mean.row(0).transpose(),
                components,
                eigenvalues: eig.iter().copied().collect(),
            })
        } else {
            let mut store = ParamStore::new();
            let mut rng = ChaCha8Rng::seed_from_u64(0);
            let net = AutoencoderNet::new(&config, n, n, &mut store, &mut rng)?;
            let names: Vec<String> = store.named_values().map(|(n, _)| n.to_string()).collect();
            for name in names {
                let id = store.find(&name).expect("name from store");
                let shape = store.value(id).shape();
                let value = take_block(&mut blocks, &name, shape)?;
                store.load_value(&name, value).map_err(Error::Architecture)?;
            }
            Body::Net { net, store }
        };
        if let Some(extra) = blocks.keys().next() {
            return Err(Error::Architecture(format!("unexpected parameter block `{extra}`")));
        }
        Ok(TrainedModel {
            config,
            geometry: header.geometry,
            task_name: header.task_name,
            state_norm: header.state_norm,
            action_norm: header.action_norm,
            loss_history: header.loss_history,
            final_train_mse: header.final_train_mse,
            reference_states: reference,
            alignment,
            body,
        })
    }

    /// Loads a model and checks it against the geometry a caller expects.
    pub fn load_for(path: impl AsRef<Path>, geometry: &ArmGeometry) -> Result<TrainedModel> {
        let model = Self::load(path)?;
        if model.state_dim() != geometry.dof() {
            return Err(Error::dim("model joint dimension", geometry.dof(), model.state_dim()));
        }
        Ok(model)
    }
}
