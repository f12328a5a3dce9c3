//! `mgir`: simulate snapshots, train, reconstruct at any resolution, score
//! reconstructions and report model cost.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use mgir::cassi::{make_mask, simulate, HyperCube, Measurement};
use mgir::checkpoint::Checkpoint;
use mgir::config::RunConfig;
use mgir::decoder::{reconstruct, ReconstructOptions, ReconstructionRequest};
use mgir::encoder::{flops, FlopsKind};
use mgir::hsc;
use mgir::metrics::{evaluate, MetricReport};
use mgir::model::init_params;
use mgir::synth::synthetic_scene;
use mgir::train::{train, TrainState, TrainingScene};
use serde_json::{json, Value};

#[derive(Parser)]
#[command(name = "mgir", version, about = "Continuous hyperspectral reconstruction from CASSI snapshots")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Write a synthetic scene of Gaussian blobs with spectral ramps.
    Synth(SynthArgs),
    /// Image a scene through a random coded mask and dispersive prism.
    Simulate(SimulateArgs),
    /// Fit a model to one scene and write a checkpoint.
    Train(TrainArgs),
    /// Decode a measurement on an arbitrary band count and spatial grid.
    Reconstruct(ReconstructArgs),
    /// Score a reconstruction against ground truth.
    Eval(EvalArgs),
    /// Closed-form costs of the three block types, plus parameter count.
    Flops(FlopsArgs),
}

#[derive(Args)]
struct SynthArgs {
    #[arg(long, default_value_t = 8)]
    bands: usize,
    #[arg(long, default_value_t = 32)]
    height: usize,
    #[arg(long, default_value_t = 32)]
    width: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct SimulateArgs {
    /// Scene `[D, H, W]`.
    #[arg(long)]
    scene: PathBuf,
    #[arg(long, default_value_t = 7)]
    mask_seed: u64,
    #[arg(long, default_value_t = 0.5)]
    mask_density: f64,
    /// Dispersion in pixels per band.
    #[arg(long, default_value_t = 2)]
    shift: usize,
    /// Measurement `[H, W + shift·(D-1)]`; the mask goes next to it as
    /// `<stem>.mask.hsc`.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct TrainArgs {
    #[arg(long)]
    scene: PathBuf,
    /// JSON run configuration; the toy preset when omitted. Ignored with
    /// `--resume`, which reuses the checkpoint's configuration.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    out: PathBuf,
    /// Steps to run now; by default whatever remains of `train.steps`.
    #[arg(long)]
    steps: Option<u64>,
    /// Continue from this checkpoint.
    #[arg(long)]
    resume: Option<PathBuf>,
    /// Overrides `train.seed` (not allowed with `--resume`).
    #[arg(long)]
    seed: Option<u64>,
    /// Plain-text log, one line per step.
    #[arg(long)]
    log: Option<PathBuf>,
}

#[derive(Args)]
struct ReconstructArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    #[arg(long)]
    measurement: PathBuf,
    #[arg(long)]
    bands: usize,
    #[arg(long)]
    height: usize,
    #[arg(long)]
    width: usize,
    #[arg(long)]
    out: PathBuf,
    /// Largest output grid, in voxels, that will be attempted.
    #[arg(long, default_value_t = ReconstructOptions::default().voxel_budget)]
    voxel_budget: usize,
}

#[derive(Args)]
struct EvalArgs {
    #[arg(long)]
    pred: PathBuf,
    #[arg(long)]
    truth: PathBuf,
    /// Also write the JSON report here.
    #[arg(long)]
    json: Option<PathBuf>,
}

#[derive(Args)]
struct FlopsArgs {
    /// JSON run configuration; the toy preset when omitted.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long, num_args = 3, value_names = ["D", "H", "W"])]
    dims: Vec<u64>,
}

fn read_text(path: &Path) -> Result<String> {
    fs::read_to_string(path).with_context(|| format!("cannot read {}", path.display()))
}

fn load_config(path: Option<&Path>) -> Result<RunConfig> {
    match path {
        Some(p) => Ok(RunConfig::from_json(&read_text(p)?).with_context(|| format!("invalid config {}", p.display()))?),
        None => Ok(RunConfig::toy()),
    }
}

fn read_cube(path: &Path) -> Result<HyperCube> {
    let t = hsc::read(path)?;
    if t.rank() != 3 {
        bail!("{}: expected a rank-3 scene [D, H, W], found shape {:?}", path.display(), t.shape());
    }
    Ok(HyperCube::from_tensor(t)?)
}

/// Sibling path `<dir>/<stem>.mask.hsc` of a measurement file.
fn mask_path(out: &Path) -> PathBuf {
    let stem = out.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
    out.with_file_name(format!("{stem}.mask.hsc"))
}

fn cmd_synth(a: SynthArgs) -> Result<()> {
    let cube = synthetic_scene(a.bands, a.height, a.width, a.seed)?;
    hsc::write(&a.out, cube.data())?;
    Ok(())
}

fn cmd_simulate(a: SimulateArgs) -> Result<()> {
    let cube = read_cube(&a.scene)?;
    let mask = make_mask(cube.height(), cube.width(), a.mask_density, a.mask_seed)?;
    let meas = simulate(&cube, &mask, a.shift)?;
    hsc::write(mask_path(&a.out), mask.data())?;
    hsc::write(&a.out, meas.data())?;
    Ok(())
}

fn cmd_train(a: TrainArgs) -> Result<()> {
    let cube = read_cube(&a.scene)?;
    let shape = [cube.bands(), cube.height(), cube.width()];
    let (config, mut state) = match &a.resume {
        Some(path) => {
            if a.seed.is_some() {
                bail!("--seed cannot change the seed of a resumed run");
            }
            let ck = Checkpoint::load(path)?;
            if ck.scene_shape != shape {
                bail!(
                    "{} was trained on a {:?} scene, {} is {:?}",
                    path.display(),
                    ck.scene_shape,
                    a.scene.display(),
                    shape
                );
            }
            (ck.config, ck.state)
        }
        None => {
            let mut config = load_config(a.config.as_deref())?;
            if let Some(seed) = a.seed {
                config.train.seed = seed;
            }
            let params = init_params(&config.model(), config.train.seed)?;
            let state = TrainState::new(params, &config.train);
            (config, state)
        }
    };
    let steps = a.steps.unwrap_or_else(|| config.train.steps.saturating_sub(state.steps_done()));
    let scene = TrainingScene {
        mask: make_mask(cube.height(), cube.width(), config.mask_density, config.mask_seed)?,
        cube,
        shift_d: config.shift_d,
    };
    let mut log = String::new();
    train(&scene, &mut state, &config.model(), &config.train, steps, |r| {
        log.push_str(&format!("{r}\n"));
    })?;
    if let Some(path) = &a.log {
        hsc::write_atomic(path, log.as_bytes())?;
    }
    let ck = Checkpoint {
        seed: config.train.seed,
        scene_shape: shape,
        state,
        config,
    };
    ck.save(&a.out)?;
    Ok(())
}

fn cmd_reconstruct(a: ReconstructArgs) -> Result<()> {
    let ck = Checkpoint::load(&a.checkpoint)?;
    let data = hsc::read(&a.measurement)?;
    let bands = ck.scene_shape[0];
    let meas = Measurement::new(data, ck.config.shift_d, bands)
        .with_context(|| format!("{} does not match the checkpoint's optics", a.measurement.display()))?;
    let req = ReconstructionRequest::new(a.bands, a.height, a.width);
    let opts = ReconstructOptions {
        voxel_budget: a.voxel_budget,
        ..Default::default()
    };
    let cube = reconstruct(&meas, &ck.state.params, &ck.config.model(), &req, &opts)?;
    hsc::write(&a.out, cube.data())?;
    Ok(())
}

/// JSON value of a metric; infinities become the string `"inf"`.
fn metric_json(v: f64) -> Value {
    if v.is_infinite() {
        json!(if v > 0.0 { "inf" } else { "-inf" })
    } else {
        json!(v)
    }
}

fn metric_text(v: f64) -> String {
    match metric_json(v) {
        Value::String(s) => s,
        other => other.to_string(),
    }
}

fn report_json(r: &MetricReport) -> Value {
    json!({
        "rmse": metric_json(r.rmse),
        "psnr_db": metric_json(r.psnr_db),
        "ssim": metric_json(r.ssim),
        "sam_rad": metric_json(r.sam_rad),
    })
}

fn cmd_eval(a: EvalArgs) -> Result<()> {
    let (pred, truth) = (read_cube(&a.pred)?, read_cube(&a.truth)?);
    let r = evaluate(&pred, &truth)?;
    let json = report_json(&r);
    let mut out = std::io::stdout().lock();
    writeln!(out, "{:<8} {:>24}", "metric", "value")?;
    for (name, v) in [("rmse", r.rmse), ("psnr_db", r.psnr_db), ("ssim", r.ssim), ("sam_rad", r.sam_rad)] {
        writeln!(out, "{name:<8} {:>24}", metric_text(v))?;
    }
    writeln!(out, "{json}")?;
    if let Some(path) = &a.json {
        hsc::write_atomic(path, format!("{json}\n").as_bytes())?;
    }
    Ok(())
}

fn cmd_flops(a: FlopsArgs) -> Result<()> {
    let config = load_config(a.config.as_deref())?;
    let &[d, h, w] = a.dims.as_slice() else {
        bail!("--dims takes exactly three values D H W");
    };
    let (c, m) = (config.encoder.base_channels as u64, config.encoder.spatial_kernel as u64);
    let mut out = std::io::stdout().lock();
    writeln!(out, "dims D={d} H={h} W={w}, C={c}, M={m}")?;
    for kind in FlopsKind::ALL {
        writeln!(out, "{:<6} {}", kind.label(), flops(kind, h, w, d, c, m))?;
    }
    let params = init_params(&config.model(), config.train.seed)?;
    writeln!(out, "params {}", params.count_params())?;
    Ok(())
}

fn main() -> std::process::ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Synth(a) => cmd_synth(a),
        Command::Simulate(a) => cmd_simulate(a),
        Command::Train(a) => cmd_train(a),
        Command::Reconstruct(a) => cmd_reconstruct(a),
        Command::Eval(a) => cmd_eval(a),
        Command::Flops(a) => cmd_flops(a),
    };
    match result {
        Ok(()) => std::process::ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            std::process::ExitCode::FAILURE
        }
    }
}
