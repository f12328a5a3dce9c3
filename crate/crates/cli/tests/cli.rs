use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use mgir::checkpoint::Checkpoint;
use mgir::config::RunConfig;
use mgir::hsc;
use mgir::model::init_params;
use serde_json::Value;
use tempfile::TempDir;

fn mgir(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_mgir")).args(args).output().expect("binary runs")
}

fn ok(args: &[&str]) -> String {
    let out = mgir(args);
    assert!(out.status.success(), "{args:?} failed: {}", String::from_utf8_lossy(&out.stderr));
    String::from_utf8(out.stdout).unwrap()
}

struct Work {
    dir: TempDir,
}

impl Work {
    fn new() -> Self {
        Self {
            dir: tempfile::tempdir().unwrap(),
        }
    }

    fn path(&self, name: &str) -> PathBuf {
        self.dir.path().join(name)
    }

    fn p(&self, name: &str) -> String {
        self.path(name).to_string_lossy().into_owned()
    }

    /// A tiny model so that training runs in well under a second.
    fn small_config(&self) -> String {
        let mut cfg = RunConfig::toy();
        cfg.encoder.base_channels = 4;
        cfg.encoder.stage_depths = [1, 1, 1, 1];
        cfg.encoder.spatial_kernel = 3;
        cfg.encoder.spectral_kernel = 3;
        cfg.aggregator.model_dim = 8;
        cfg.aggregator.rpe_frequencies = 3;
        cfg.decoder.hidden_dims = vec![8];
        cfg.train.steps = 4;
        cfg.train.queries_per_step = 64;
        cfg.train.augment_flips = true;
        fs::write(self.path("cfg.json"), cfg.to_json()).unwrap();
        self.p("cfg.json")
    }

    fn scene(&self, bands: usize, size: usize) -> String {
        let (b, s) = (bands.to_string(), size.to_string());
        ok(&["synth", "--bands", &b, "--height", &s, "--width", &s, "--seed", "3", "--out", &self.p("scene.hsc")]);
        self.p("scene.hsc")
    }
}

fn read(path: impl AsRef<Path>) -> Vec<u8> {
    fs::read(path).unwrap()
}

#[test]
fn seeded_training_is_byte_identical() {
    let w = Work::new();
    let (scene, cfg) = (w.scene(4, 8), w.small_config());
    for name in ["a", "b"] {
        ok(&["train", "--scene", &scene, "--config", &cfg, "--out", &w.p(&format!("{name}.ckpt")), "--log", &w.p(&format!("{name}.log"))]);
    }
    assert_eq!(read(w.path("a.ckpt")), read(w.path("b.ckpt")));
    let log = fs::read_to_string(w.path("a.log")).unwrap();
    assert_eq!(log, fs::read_to_string(w.path("b.log")).unwrap());
    assert_eq!(log.lines().count(), 4);
    assert!(log.starts_with("step 1 loss "));

    ok(&["train", "--scene", &scene, "--config", &cfg, "--seed", "9", "--out", &w.p("c.ckpt")]);
    assert_ne!(read(w.path("a.ckpt")), read(w.path("c.ckpt")));
}

#[test]
fn resumed_training_matches_one_run() {
    let w = Work::new();
    let (scene, cfg) = (w.scene(4, 8), w.small_config());
    ok(&["train", "--scene", &scene, "--config", &cfg, "--out", &w.p("full.ckpt")]);
    ok(&["train", "--scene", &scene, "--config", &cfg, "--steps", "1", "--out", &w.p("part.ckpt")]);
    ok(&["train", "--scene", &scene, "--resume", &w.p("part.ckpt"), "--out", &w.p("rest.ckpt")]);
    assert_eq!(read(w.path("full.ckpt")), read(w.path("rest.ckpt")));

    let out = mgir(&["train", "--scene", &scene, "--resume", &w.p("part.ckpt"), "--seed", "2", "--out", &w.p("x.ckpt")]);
    assert!(!out.status.success());
}

#[test]
fn zero_steps_saves_the_initial_parameters() {
    let w = Work::new();
    let (scene, cfg) = (w.scene(4, 8), w.small_config());
    ok(&["train", "--scene", &scene, "--config", &cfg, "--steps", "0", "--out", &w.p("init.ckpt")]);
    let ck = Checkpoint::load(w.path("init.ckpt")).unwrap();
    assert_eq!(ck.state.steps_done(), 0);
    assert_eq!(ck.scene_shape, [4, 8, 8]);
    assert_eq!(ck.state.params, init_params(&ck.config.model(), ck.seed).unwrap());
}

#[test]
fn missing_scene_is_reported_by_path() {
    let w = Work::new();
    let (missing, ckpt, meas) = (w.p("nowhere.hsc"), w.p("unused.ckpt"), w.p("unused.hsc"));
    for args in [
        vec!["train", "--scene", &missing, "--out", &ckpt],
        vec!["simulate", "--scene", &missing, "--out", &meas],
    ] {
        let out = mgir(&args);
        assert!(!out.status.success());
        let err = String::from_utf8_lossy(&out.stderr);
        assert!(err.contains("nowhere.hsc"), "{err}");
    }
    assert!(!w.path("unused.ckpt").exists());
}

#[test]
fn simulate_writes_dispersed_measurement_and_mask() {
    let w = Work::new();
    let scene = w.scene(28, 256);
    ok(&["simulate", "--scene", &scene, "--shift", "2", "--out", &w.p("meas.hsc")]);
    assert_eq!(hsc::read(w.path("meas.hsc")).unwrap().shape(), [256, 310]);
    let mask = hsc::read(w.path("meas.mask.hsc")).unwrap();
    assert_eq!(mask.shape(), [256, 256]);
    assert!(mask.data().iter().all(|&v| v == 0.0 || v == 1.0));
}

#[test]
fn reconstruct_any_grid_and_refuse_oversized_ones() {
    let w = Work::new();
    let (scene, cfg) = (w.scene(4, 8), w.small_config());
    ok(&["train", "--scene", &scene, "--config", &cfg, "--out", &w.p("m.ckpt")]);
    ok(&["simulate", "--scene", &scene, "--out", &w.p("meas.hsc")]);
    let ck = w.p("m.ckpt");
    let meas = w.p("meas.hsc");
    ok(&["reconstruct", "--checkpoint", &ck, "--measurement", &meas, "--bands", "10", "--height", "16", "--width", "12", "--out", &w.p("r.hsc")]);
    let r = hsc::read(w.path("r.hsc")).unwrap();
    assert_eq!(r.shape(), [10, 16, 12]);
    assert!(r.is_finite());

    let out = mgir(&[
        "reconstruct", "--checkpoint", &ck, "--measurement", &meas, "--bands", "64", "--height", "64", "--width", "64",
        "--voxel-budget", "1000", "--out", &w.p("big.hsc"),
    ]);
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("1000"));
    assert!(!w.path("big.hsc").exists());
}

#[test]
fn eval_table_and_json_agree() {
    let w = Work::new();
    let scene = w.scene(4, 8);
    let text = ok(&["eval", "--pred", &scene, "--truth", &scene, "--json", &w.p("m.json")]);
    let json: Value = serde_json::from_str(&fs::read_to_string(w.path("m.json")).unwrap()).unwrap();
    assert_eq!(json["psnr_db"], "inf");
    assert_eq!(json["rmse"], 0.0);
    for line in text.lines().skip(1).take(4) {
        let mut parts = line.split_whitespace();
        let (name, value) = (parts.next().unwrap(), parts.next().unwrap());
        let want = match &json[name] {
            Value::String(s) => s.clone(),
            v => v.to_string(),
        };
        assert_eq!(value, want, "{name}");
    }

    ok(&["synth", "--bands", "4", "--height", "8", "--width", "8", "--seed", "4", "--out", &w.p("other.hsc")]);
    let text = ok(&["eval", "--pred", &w.p("other.hsc"), "--truth", &scene]);
    let psnr: f64 = text.lines().find(|l| l.starts_with("psnr_db")).unwrap().split_whitespace().nth(1).unwrap().parse().unwrap();
    assert!(psnr.is_finite());
}

#[test]
fn flops_reports_closed_forms_and_parameter_count() {
    let text = ok(&["flops", "--dims", "4", "4", "4"]);
    assert!(text.lines().any(|l| l.split_whitespace().collect::<Vec<_>>() == ["SSDW", "23552"]), "{text}");
    // N=64, C=8, M=5
    assert!(text.contains(&format!("W-MSA  {}", 4 * 64 * 64 + 2 * 125 * 64 * 8)));
    assert!(text.contains(&format!("G-MSA  {}", 4 * 64 * 64 + 2 * 64 * 64 * 8)));
    assert!(text.lines().any(|l| l == "params 203533"), "{text}");
}
