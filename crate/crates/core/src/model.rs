//! The full reconstruction network: lifted measurement → latent pyramid →
//! per-query aggregation → implicit decoding.

use ndtensor::{Bindings, ParameterStore, Scalar, Tape, Tensor, Var};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::aggregator::{self, AggregatorConfig, ProjectedLevel};
use crate::decoder::{self, DecoderConfig};
use crate::encoder::{self, EncoderConfig, STAGES};
use crate::error::{MgirError, Result};
use crate::nn::Initializer;

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelConfig {
    pub encoder: EncoderConfig,
    pub aggregator: AggregatorConfig,
    pub decoder: DecoderConfig,
}

impl ModelConfig {
    pub fn validate(&self) -> Vec<String> {
        let mut errs = self.encoder.validate();
        errs.extend(self.aggregator.validate(STAGES));
        errs.extend(self.decoder.validate());
        errs
    }
}

/// Fresh parameters drawn from one ChaCha8 stream seeded with `seed`.
pub fn init_params(cfg: &ModelConfig, seed: u64) -> Result<ParameterStore<f32>> {
    let errs = cfg.validate();
    if !errs.is_empty() {
        return Err(MgirError::Config(errs));
    }
    let mut store = ParameterStore::new();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut init = Initializer {
        store: &mut store,
        rng: &mut rng,
    };
    encoder::init(&cfg.encoder, &mut init)?;
    let channels: Vec<usize> = (0..STAGES).map(|s| cfg.encoder.channels(s)).collect();
    aggregator::init(&cfg.aggregator, &channels, &mut init)?;
    decoder::init(&cfg.decoder, cfg.aggregator.model_dim, &mut init)?;
    Ok(store)
}

/// Encodes a lifted measurement `[1, D, H, W]` into projected levels ready
/// for querying.
pub fn encode<T: Scalar>(tape: &mut Tape<T>, b: &Bindings, m0: Var, cfg: &ModelConfig) -> Result<Vec<ProjectedLevel>> {
    let pyramid = encoder::encode(tape, b, m0, &cfg.encoder)?;
    aggregator::project_levels(tape, b, &pyramid, &cfg.aggregator)
}

/// Predicted intensities `[P, 1]` at `coords` `[P, 3]`.
pub fn query<T: Scalar>(
    tape: &mut Tape<T>,
    b: &Bindings,
    levels: &[ProjectedLevel],
    coords: &Tensor<T>,
    cfg: &ModelConfig,
) -> Result<Var> {
    let batch = aggregator::gather_windows(tape, levels, coords, &cfg.aggregator)?;
    let codes = aggregator::aggregate(tape, b, &batch, &cfg.aggregator)?;
    decoder::decode(tape, b, codes, batch.coords, &cfg.decoder)
}

pub fn forward<T: Scalar>(tape: &mut Tape<T>, b: &Bindings, m0: Var, coords: &Tensor<T>, cfg: &ModelConfig) -> Result<Var> {
    let levels = encode(tape, b, m0, cfg)?;
    query(tape, b, &levels, coords, cfg)
}
