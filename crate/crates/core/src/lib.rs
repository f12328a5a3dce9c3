//! Continuous hyperspectral reconstruction from coded-aperture snapshots.
//!
//! The pipeline simulates a CASSI detector frame ([`cassi`]), lifts it to a
//! band-aligned volume, encodes that into a four-level latent pyramid
//! ([`encoder`]), aggregates per-query windows across levels with grouped
//! attention ([`aggregator`]) and decodes one intensity per continuous
//! `(λ, y, x)` coordinate ([`decoder`]). Because the decoder is queried by
//! coordinate, a trained model reconstructs at any band count or spatial
//! resolution.

pub mod aggregator;
pub mod cassi;
pub mod checkpoint;
pub mod config;
pub mod decoder;
pub mod encoder;
pub mod error;
pub mod hsc;
pub mod metrics;
pub mod model;
pub mod nn;
pub mod synth;
pub mod train;

pub use error::{MgirError, Result};
