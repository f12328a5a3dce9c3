mod common;

use common::*;
use mgir::cassi::HyperCube;
use mgir::metrics::{self, evaluate, psnr, psnr_from_mse, rmse_loss, sam, ssim, SsimParams};
use ndtensor::{Tape, Tensor};
use proptest::prelude::*;
use rand::Rng;
use serde_json::Value;

fn golden() -> Value {
    serde_json::from_str(include_str!("golden/metrics_8x8x4.json")).unwrap()
}

#[test]
fn fixture_matches_frozen_goldens() {
    let (pred, truth) = metric_fixture();
    let r = evaluate(&pred, &truth).unwrap();
    let g = golden();
    for (name, got) in [("rmse", r.rmse), ("psnr_db", r.psnr_db), ("ssim", r.ssim), ("sam_rad", r.sam_rad)] {
        let want = g[name].as_f64().unwrap();
        assert!((got - want).abs() < 1e-10, "{name}: {got} vs golden {want}");
    }
}

#[test]
fn fixture_matches_direct_definitions() {
    let (pred, truth) = metric_fixture();
    let params = SsimParams {
        window: 7,
        ..Default::default()
    };
    let fast = ssim(&pred, &truth, &params).unwrap();
    assert!((fast - ssim_oracle(&pred, &truth, 7, 1.5)).abs() < 1e-12);
    assert!((sam(&pred, &truth).unwrap() - sam_oracle(&pred, &truth)).abs() < 1e-12);
}

#[test]
fn identical_cubes() {
    let (_, truth) = metric_fixture();
    let r = evaluate(&truth, &truth).unwrap();
    assert_eq!(r.rmse, 0.0);
    assert_eq!(r.psnr_db, f64::INFINITY);
    assert!((r.ssim - 1.0).abs() < 1e-12);
    assert_eq!(r.sam_rad, 0.0);
}

#[test]
fn hand_values() {
    assert!((psnr_from_mse(0.01, 1.0) - 20.0).abs() < 1e-12);
    let t = cube(Tensor::from_fn([2, 1, 2], |i| if i[0] == i[2] { 1.0 } else { 0.0 }));
    let p = cube(Tensor::from_fn([2, 1, 2], |i| if i[0] != i[2] { 1.0 } else { 0.0 }));
    assert!((sam(&p, &t).unwrap() - std::f64::consts::FRAC_PI_2).abs() < 1e-12);
    let zeros = cube(Tensor::zeros([2, 2, 2]));
    assert!(sam(&zeros, &zeros).is_err());
    assert!(psnr(&t, &t, 0.0).is_err());
}

#[test]
fn inverted_binary_image_has_lower_ssim() {
    let t = cube(Tensor::from_fn([1, 12, 12], |i| ((i[1] / 3 + i[2] / 4) % 2) as f32));
    let inv = cube(t.data().map(|v| 1.0 - v));
    let params = SsimParams::default();
    assert!(ssim(&inv, &t, &params).unwrap() < 1.0);
    assert!((ssim(&t, &t, &params).unwrap() - 1.0).abs() < 1e-12);
    let small = cube(Tensor::zeros([1, 8, 8]));
    assert!(ssim(&small, &small, &params).is_err());
}

#[test]
fn shape_mismatch_names_both_shapes() {
    let a = cube(Tensor::zeros([2, 4, 4]));
    let b = cube(Tensor::zeros([2, 4, 5]));
    let msg = evaluate(&a, &b).unwrap_err().to_string();
    assert!(msg.contains("[2, 4, 4]") && msg.contains("[2, 4, 5]"), "{msg}");
}

#[test]
fn loss_matches_loop_and_is_symmetric() {
    let mut r = rng(4);
    for n in [1, 7, 300] {
        let a: Vec<f64> = (0..n).map(|_| r.gen_range(-1.0..1.0)).collect();
        let b: Vec<f64> = (0..n).map(|_| r.gen_range(-1.0..1.0)).collect();
        let want = (a.iter().zip(&b).map(|(x, y)| (x - y).powi(2)).sum::<f64>() / n as f64).sqrt();
        let mut tape = Tape::new();
        let (va, vb) = (tape.leaf(Tensor::new([n], a).unwrap()), tape.leaf(Tensor::new([n], b).unwrap()));
        let ab = rmse_loss(&mut tape, va, vb).unwrap();
        let ba = rmse_loss(&mut tape, vb, va).unwrap();
        let same = rmse_loss(&mut tape, va, va).unwrap();
        assert!((tape.value(ab).item() - want).abs() < 1e-6);
        assert_eq!(tape.value(ab).item(), tape.value(ba).item());
        assert_eq!(tape.value(same).item(), 0.0);
    }
    let mut tape = Tape::<f64>::new();
    let e = tape.leaf(Tensor::zeros([0]));
    assert!(rmse_loss(&mut tape, e, e).is_err());
}

fn cube_from(shape: [usize; 3], data: Vec<f32>) -> HyperCube {
    cube(Tensor::new(shape, data).unwrap())
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn sam_ignores_per_pixel_scale(
        vals in prop::collection::vec(0.05f32..0.5, 4 * 3 * 3),
        other in prop::collection::vec(0.05f32..0.5, 4 * 3 * 3),
        scales in prop::collection::vec(0.1f32..2.0, 9),
    ) {
        let shape = [4, 3, 3];
        let scaled: Vec<f32> = vals.iter().enumerate().map(|(i, v)| v * scales[i % 9]).collect();
        let (a, b) = (cube_from(shape, vals), cube_from(shape, other.clone()));
        let base = sam(&a, &b).unwrap();
        let moved = sam(&cube_from(shape, scaled), &b).unwrap();
        prop_assert!((base - moved).abs() < 1e-6);
    }

    #[test]
    fn psnr_falls_as_error_grows(
        truth in prop::collection::vec(0.2f32..0.5, 2 * 4 * 4),
        small in 0.001f32..0.2,
        extra in 0.001f32..0.2,
    ) {
        let shape = [2, 4, 4];
        let t = cube_from(shape, truth.clone());
        let near = cube_from(shape, truth.iter().map(|v| v + small).collect());
        let far = cube_from(shape, truth.iter().map(|v| v + small + extra).collect());
        prop_assert!(psnr(&far, &t, 1.0).unwrap() < psnr(&near, &t, 1.0).unwrap());
        prop_assert!(psnr_from_mse(small as f64 + extra as f64, 1.0) < psnr_from_mse(small as f64, 1.0));
    }
}

#[test]
fn rmse_and_mse_agree() {
    let (pred, truth) = metric_fixture();
    let m = metrics::mse(&pred, &truth).unwrap();
    assert_eq!(metrics::rmse(&pred, &truth).unwrap(), m.sqrt());
}
