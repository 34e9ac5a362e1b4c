//! Latent action embeddings for redundant planar robot arms.
//!
//! The crate covers the full offline pipeline: a kinematic simulator
//! ([`arm`]), synthetic demonstrations ([`demo`]), a small autodiff and
//! optimizer substrate ([`tensor`]), the embedding models ([`models`]),
//! latent-axis alignment ([`align`]) and the evaluation measures
//! ([`metrics`]).

pub mod align;
pub mod arm;
pub mod demo;
pub mod error;
mod io;
pub mod models;
pub mod metrics;
pub mod tensor;

pub use error::{Error, Result};
