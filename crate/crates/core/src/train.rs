//! Coordinate-sampled supervised training.
//!
//! Every step draws from its own ChaCha8 stream (`seed`, stream = step
//! index), so a run resumed from a checkpoint replays exactly the steps an
//! uninterrupted run would have taken.

use std::fmt;

use ndtensor::{Adam, AdamConfig, ParameterStore, Tape, Tensor};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::cassi::{lift_measurement, simulate, CodedMask, HyperCube};
use crate::decoder::{reconstruct, ReconstructOptions, ReconstructionRequest};
use crate::error::{MgirError, Result};
use crate::metrics::{self, rmse_loss};
use crate::model::{self, ModelConfig};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub lr: f64,
    pub steps: u64,
    /// Augmented copies of the scene per step; the loss is their mean.
    pub batch_scenes: usize,
    pub queries_per_step: usize,
    pub seed: u64,
    pub augment_flips: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            lr: 4e-4,
            steps: 2000,
            batch_scenes: 4,
            queries_per_step: 4096,
            seed: 0,
            augment_flips: true,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Vec<String> {
        let mut errs = Vec::new();
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            errs.push(format!("train.lr must be positive and finite, got {}", self.lr));
        }
        if self.queries_per_step == 0 {
            errs.push("train.queries_per_step must be at least 1".into());
        }
        if self.batch_scenes == 0 {
            errs.push("train.batch_scenes must be at least 1".into());
        }
        errs
    }

    pub fn adam(&self) -> AdamConfig {
        AdamConfig {
            lr: self.lr,
            ..Default::default()
        }
    }
}

/// Ground truth plus the fixed optics that image it.
#[derive(Clone, Debug)]
pub struct TrainingScene {
    pub cube: HyperCube,
    pub mask: CodedMask,
    pub shift_d: usize,
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrainState {
    pub params: ParameterStore<f32>,
    pub adam: Adam<f32>,
}

impl TrainState {
    pub fn new(params: ParameterStore<f32>, cfg: &TrainConfig) -> Self {
        Self {
            params,
            adam: Adam::new(cfg.adam()),
        }
    }

    pub fn steps_done(&self) -> u64 {
        self.adam.step_count()
    }
}

/// Random stream for step `step` of a run seeded with `seed`.
pub fn step_rng(seed: u64, step: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(step);
    rng
}

/// Mirrors the spatial axes; bands are untouched.
pub fn flip(cube: &HyperCube, horizontal: bool, vertical: bool) -> HyperCube {
    let (d, h, w) = (cube.bands(), cube.height(), cube.width());
    let src = cube.data();
    let data = Tensor::from_fn([d, h, w], |i| {
        let y = if vertical { h - 1 - i[1] } else { i[1] };
        let x = if horizontal { w - 1 - i[2] } else { i[2] };
        src.get(&[i[0], y, x])
    });
    HyperCube::new(data, cube.wavelengths().to_vec()).expect("flip keeps a valid cube")
}

/// Independent fair-coin horizontal and vertical flips.
pub fn augment_flip<R: Rng + ?Sized>(cube: &HyperCube, rng: &mut R) -> HyperCube {
    let horizontal = rng.gen_bool(0.5);
    let vertical = rng.gen_bool(0.5);
    flip(cube, horizontal, vertical)
}

/// One logged optimizer step.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct StepRecord {
    /// 1-based index of the completed step.
    pub step: u64,
    pub loss: f32,
    pub lr: f64,
}

impl fmt::Display for StepRecord {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "step {} loss {:.8} lr {:e}", self.step, self.loss, self.lr)
    }
}

/// Samples queries, runs the model, and applies one Adam update. Returns the
/// loss before the update.
pub fn train_step(scene: &TrainingScene, state: &mut TrainState, model: &ModelConfig, cfg: &TrainConfig) -> Result<StepRecord> {
    let step = state.steps_done();
    let mut rng = step_rng(cfg.seed, step);
    let mut tape = Tape::<f32>::new();
    let b = state.params.bind(&mut tape);
    let mut losses = Vec::with_capacity(cfg.batch_scenes);
    for _ in 0..cfg.batch_scenes {
        let cube = if cfg.augment_flips {
            augment_flip(&scene.cube, &mut rng)
        } else {
            scene.cube.clone()
        };
        let meas = simulate(&cube, &scene.mask, scene.shift_d)?;
        let m0 = tape.leaf(lift_measurement(&meas));
        let (coords, truth) = sample_queries(&cube, cfg.queries_per_step, &mut rng);
        let truth = tape.leaf(truth);
        let pred = model::forward(&mut tape, &b, m0, &coords, model)?;
        losses.push(rmse_loss(&mut tape, pred, truth)?);
    }
    let mut loss = losses[0];
    for &l in &losses[1..] {
        loss = tape.add(loss, l)?;
    }
    if losses.len() > 1 {
        loss = tape.scale(loss, 1.0 / losses.len() as f32)?;
    }
    let value = tape.value(loss).item();
    if !value.is_finite() {
        return Err(MgirError::NonFiniteLoss {
            step: step + 1,
            value: value as f64,
        });
    }
    tape.backward(loss)?;
    let grads = state.params.gradients(&tape, &b)?;
    state.adam.config.lr = cfg.lr;
    state.adam.step(&mut state.params, &grads)?;
    Ok(StepRecord {
        step: step + 1,
        loss: value,
        lr: cfg.lr,
    })
}

/// Uniformly drawn voxels as cell-center coordinates `[P, 3]` and their
/// intensities `[P, 1]`.
fn sample_queries<R: Rng + ?Sized>(cube: &HyperCube, n: usize, rng: &mut R) -> (Tensor<f32>, Tensor<f32>) {
    use ndtensor::ops::sample::cell_center;
    let (d, h, w) = (cube.bands(), cube.height(), cube.width());
    let mut coords = Vec::with_capacity(n * 3);
    let mut values = Vec::with_capacity(n);
    for _ in 0..n {
        let flat = rng.gen_range(0..d * h * w);
        let (i, y, x) = (flat / (h * w), flat / w % h, flat % w);
        coords.extend([cell_center::<f32>(i, d), cell_center(y, h), cell_center(x, w)]);
        values.push(cube.data().data()[flat]);
    }
    (
        Tensor::new([n, 3], coords).expect("coordinate rows"),
        Tensor::new([n, 1], values).expect("value rows"),
    )
}

/// Runs `steps` more steps, reporting each through `on_step`.
pub fn train(
    scene: &TrainingScene,
    state: &mut TrainState,
    model: &ModelConfig,
    cfg: &TrainConfig,
    steps: u64,
    mut on_step: impl FnMut(&StepRecord),
) -> Result<()> {
    for _ in 0..steps {
        let rec = train_step(scene, state, model, cfg)?;
        on_step(&rec);
    }
    Ok(())
}

/// RMSE of the reconstruction over every voxel of the training grid.
pub fn training_grid_rmse(scene: &TrainingScene, params: &ParameterStore<f32>, model: &ModelConfig) -> Result<f64> {
    let meas = simulate(&scene.cube, &scene.mask, scene.shift_d)?;
    let req = ReconstructionRequest::new(scene.cube.bands(), scene.cube.height(), scene.cube.width());
    let recon = reconstruct(&meas, params, model, &req, &ReconstructOptions::default())?;
    metrics::rmse(&recon, &scene.cube)
}
