//! Overfits the toy model to one synthetic 32×32×8 scene and reports the
//! training-grid RMSE.
//!
//! `cargo run --release -p mgir --example overfit -- [steps] [lr] [queries]`

use std::time::Instant;

use mgir::cassi::make_mask;
use mgir::config::RunConfig;
use mgir::model::init_params;
use mgir::synth::synthetic_scene;
use mgir::train::{train, training_grid_rmse, TrainState, TrainingScene};

fn main() -> mgir::Result<()> {
    let args: Vec<String> = std::env::args().skip(1).collect();
    let mut cfg = RunConfig::toy();
    if let Some(s) = args.first() {
        cfg.train.steps = s.parse().expect("steps");
    }
    if let Some(s) = args.get(1) {
        cfg.train.lr = s.parse().expect("lr");
    }
    if let Some(s) = args.get(2) {
        cfg.train.queries_per_step = s.parse().expect("queries");
    }
    let cube = synthetic_scene(8, 32, 32, 1)?;
    let scene = TrainingScene {
        mask: make_mask(32, 32, cfg.mask_density, cfg.mask_seed)?,
        cube,
        shift_d: cfg.shift_d,
    };
    let model = cfg.model();
    let params = init_params(&model, cfg.train.seed)?;
    println!("parameters: {}", params.count_params());
    let mut state = TrainState::new(params, &cfg.train);
    let start = Instant::now();
    train(&scene, &mut state, &model, &cfg.train, cfg.train.steps, |r| {
        if r.step % 100 == 0 || r.step == 1 {
            println!("{r}  ({:.1}s)", start.elapsed().as_secs_f64());
        }
    })?;
    println!("training-grid rmse {:.5}", training_grid_rmse(&scene, &state.params, &model)?);
    println!("elapsed {:.1}s", start.elapsed().as_secs_f64());
    Ok(())
}
