//! Oracles and fixtures shared by the integration suites.

#![allow(dead_code)]

use mgir::aggregator::{self, AggregatorConfig, QueryBatch};
use mgir::cassi::HyperCube;
use mgir::decoder::{self, Activation, DecoderConfig};
use mgir::encoder::{self, EncoderConfig};
use mgir::nn::Initializer;
use ndtensor::gradcheck::{check_gradients, probe_loss, GradCheck};
use ndtensor::{Bindings, ParameterStore, Tape, Tensor, Var};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub const GRAD_TOL: f64 = 1e-3;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn uniform(shape: &[usize], lo: f64, hi: f64, seed: u64) -> Tensor<f64> {
    Tensor::rand_uniform(shape.to_vec(), lo, hi, &mut rng(seed))
}

pub fn cube(t: Tensor<f32>) -> HyperCube {
    HyperCube::from_tensor(t).unwrap()
}

/// Nested-loop mask modulation.
pub fn encode_oracle(x: &Tensor<f64>, mask: &Tensor<f64>) -> Tensor<f64> {
    let s = x.shape();
    let mut out = Tensor::zeros(s.to_vec());
    for b in 0..s[0] {
        for u in 0..s[1] {
            for v in 0..s[2] {
                out.data_mut()[(b * s[1] + u) * s[2] + v] = x.get(&[b, u, v]) * mask.get(&[u, v]);
            }
        }
    }
    out
}

/// Nested-loop dispersion and integration: `y[u, v] = Σ_b x[b, u, v - d·b]`.
pub fn disperse_oracle(x: &Tensor<f64>, d: usize) -> Tensor<f64> {
    let s = x.shape();
    let (bands, h, w) = (s[0], s[1], s[2]);
    let ow = w + d * (bands - 1);
    Tensor::from_fn([h, ow], |i| {
        let (u, v) = (i[0], i[1]);
        let mut acc = 0.0;
        for b in 0..bands {
            if v >= d * b && v - d * b < w {
                acc += x.get(&[b, u, v - d * b]);
            }
        }
        acc
    })
}

/// Scalar multi-head attention of one query over its keys, heads split
/// evenly over the channel axis.
pub fn attention_oracle(q: &[f64], keys: &[Vec<f64>], values: &[Vec<f64>], heads: usize) -> Vec<f64> {
    let c = q.len();
    let dh = c / heads;
    let mut out = vec![0.0; c];
    for h in 0..heads {
        let r = h * dh..(h + 1) * dh;
        let logits: Vec<f64> = keys
            .iter()
            .map(|k| r.clone().map(|i| q[i] * k[i]).sum::<f64>() / (dh as f64).sqrt())
            .collect();
        let m = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let e: Vec<f64> = logits.iter().map(|l| (l - m).exp()).collect();
        let z: f64 = e.iter().sum();
        for (wk, v) in e.iter().zip(values) {
            for i in r.clone() {
                out[i] += wk / z * v[i];
            }
        }
    }
    out
}

/// `x · w + b` over rows of `x`.
pub fn affine(x: &[f64], w: &Tensor<f64>, b: Option<&Tensor<f64>>) -> Vec<f64> {
    let (n_in, n_out) = (w.shape()[0], w.shape()[1]);
    (0..n_out)
        .map(|j| (0..n_in).map(|i| x[i] * w.get(&[i, j])).sum::<f64>() + b.map_or(0.0, |b| b.data()[j]))
        .collect()
}

pub fn small_encoder() -> EncoderConfig {
    EncoderConfig {
        base_channels: 4,
        stage_depths: [1, 1, 1, 1],
        spatial_kernel: 3,
        spectral_kernel: 3,
        ..Default::default()
    }
}

pub fn small_aggregator() -> AggregatorConfig {
    AggregatorConfig {
        groups: 2,
        heads: 4,
        window: 2,
        model_dim: 8,
        rpe_frequencies: 3,
        ..Default::default()
    }
}

pub fn small_decoder() -> DecoderConfig {
    DecoderConfig {
        hidden_dims: vec![6, 5],
        activation: Activation::Gelu,
        output_clamp: None,
    }
}

pub fn encoder_params(cfg: &EncoderConfig, seed: u64) -> ParameterStore<f64> {
    let mut store = ParameterStore::new();
    let mut r = rng(seed);
    encoder::init(cfg, &mut Initializer { store: &mut store, rng: &mut r }).unwrap();
    store.cast()
}

pub fn aggregator_params(cfg: &AggregatorConfig, level_channels: &[usize], seed: u64) -> ParameterStore<f64> {
    let mut store = ParameterStore::new();
    let mut r = rng(seed);
    aggregator::init(cfg, level_channels, &mut Initializer { store: &mut store, rng: &mut r }).unwrap();
    store.cast()
}

pub fn decoder_params(cfg: &DecoderConfig, code_dim: usize, seed: u64) -> ParameterStore<f64> {
    let mut store = ParameterStore::new();
    let mut r = rng(seed);
    decoder::init(cfg, code_dim, &mut Initializer { store: &mut store, rng: &mut r }).unwrap();
    store.cast()
}

/// Parameters of `store` whose names start with one of `prefixes`, in name
/// order, with small random perturbations so that zero-initialized biases
/// and unit norms do not hide gradient errors.
pub fn perturbed(store: &ParameterStore<f64>, prefixes: &[&str], seed: u64) -> Vec<(String, Tensor<f64>)> {
    let mut r = rng(seed);
    store
        .iter()
        .filter(|(n, _)| prefixes.iter().any(|p| n.starts_with(p)))
        .map(|(n, t)| {
            let data = t.data().iter().map(|&v| v + r.gen_range(-0.1..0.1)).collect();
            (n.to_string(), Tensor::new(t.shape().to_vec(), data).unwrap())
        })
        .collect()
}

/// Relative central-difference error of a composite whose parameters are
/// `params` and whose extra differentiable inputs are `inputs`.
pub fn composite_error(
    params: &[(String, Tensor<f64>)],
    inputs: &[Tensor<f64>],
    probes: usize,
    f: impl Fn(&mut Tape<f64>, &Bindings, &[Var]) -> Var,
) -> f64 {
    let mut all: Vec<Tensor<f64>> = inputs.to_vec();
    all.extend(params.iter().map(|(_, t)| t.clone()));
    let cfg = GradCheck {
        max_probes: Some(probes),
        ..Default::default()
    };
    let report = check_gradients(&all, cfg, |tape, vars| {
        let (xs, ps) = vars.split_at(inputs.len());
        let b: Bindings = params.iter().map(|(n, _)| n.clone()).zip(ps.iter().copied()).collect();
        let out = f(tape, &b, xs);
        probe_loss(tape, out, 29)
    })
    .unwrap();
    report.max_error()
}

/// A query batch assembled directly from random codes and window offsets.
pub fn random_batch(tape: &mut Tape<f64>, cfg: &AggregatorConfig, p: usize, seed: u64) -> QueryBatch {
    let k = cfg.keys_per_level();
    let a = cfg.model_dim;
    let coords = tape.leaf(uniform(&[p, 3], -1.0, 1.0, seed));
    let mut batch = QueryBatch {
        coords,
        query_codes: Vec::new(),
        windows: Vec::new(),
        offsets: Vec::new(),
    };
    for j in 0..cfg.groups {
        let s = seed * 31 + j as u64;
        batch.query_codes.push(tape.leaf(uniform(&[p, a], -1.0, 1.0, s)));
        batch.windows.push(tape.leaf(uniform(&[p, k, a], -1.0, 1.0, s + 7)));
        batch.offsets.push(tape.leaf(uniform(&[p, k, 3], -0.3, 0.3, s + 13)));
    }
    batch
}

/// The 8×8×4 metric fixture: exact multiples of 1/256.
pub fn metric_fixture() -> (HyperCube, HyperCube) {
    let truth = Tensor::from_fn([4, 8, 8], |i| ((29 * i[0] + 13 * i[1] + 7 * i[2]) % 64 + 16) as f32 / 128.0);
    let pred = Tensor::from_fn([4, 8, 8], |i| {
        truth.get(i) + (((3 * i[0] + 5 * i[1] + 11 * i[2]) % 9) as f32 - 4.0) / 256.0
    });
    (cube(pred), cube(truth))
}

/// SSIM straight from its definition: Gaussian-weighted moments over every
/// full window position, averaged per band and then over bands.
pub fn ssim_oracle(pred: &HyperCube, truth: &HyperCube, window: usize, sigma: f64) -> f64 {
    let (d, h, w) = (truth.bands(), truth.height(), truth.width());
    let c = (window / 2) as f64;
    let g: Vec<f64> = (0..window).map(|i| (-((i as f64 - c).powi(2)) / (2.0 * sigma * sigma)).exp()).collect();
    let gs: f64 = g.iter().sum();
    let (c1, c2) = (0.01f64.powi(2), 0.03f64.powi(2));
    let at = |cube: &HyperCube, b: usize, y: usize, x: usize| cube.data().get(&[b, y, x]) as f64;
    let mut total = 0.0;
    for b in 0..d {
        let (mut acc, mut n) = (0.0, 0);
        for y0 in 0..=h - window {
            for x0 in 0..=w - window {
                let taps = || (0..window).flat_map(|i| (0..window).map(move |j| (i, j)));
                let wt = |i: usize, j: usize| g[i] * g[j] / (gs * gs);
                let ux: f64 = taps().map(|(i, j)| wt(i, j) * at(pred, b, y0 + i, x0 + j)).sum();
                let uy: f64 = taps().map(|(i, j)| wt(i, j) * at(truth, b, y0 + i, x0 + j)).sum();
                let (mut vx, mut vy, mut cxy) = (0.0, 0.0, 0.0);
                for (i, j) in taps() {
                    let (dx, dy) = (at(pred, b, y0 + i, x0 + j) - ux, at(truth, b, y0 + i, x0 + j) - uy);
                    vx += wt(i, j) * dx * dx;
                    vy += wt(i, j) * dy * dy;
                    cxy += wt(i, j) * dx * dy;
                }
                acc += ((2.0 * ux * uy + c1) * (2.0 * cxy + c2)) / ((ux * ux + uy * uy + c1) * (vx + vy + c2));
                n += 1;
            }
        }
        total += acc / n as f64;
    }
    total / d as f64
}

/// Mean spectral angle by direct per-pixel loops.
pub fn sam_oracle(pred: &HyperCube, truth: &HyperCube) -> f64 {
    let (d, h, w) = (truth.bands(), truth.height(), truth.width());
    let mut angles = Vec::new();
    for y in 0..h {
        for x in 0..w {
            let p: Vec<f64> = (0..d).map(|b| pred.data().get(&[b, y, x]) as f64).collect();
            let t: Vec<f64> = (0..d).map(|b| truth.data().get(&[b, y, x]) as f64).collect();
            let dot: f64 = p.iter().zip(&t).map(|(a, b)| a * b).sum();
            let np = p.iter().map(|a| a * a).sum::<f64>().sqrt();
            let nt = t.iter().map(|a| a * a).sum::<f64>().sqrt();
            angles.push((dot / (np * nt)).clamp(-1.0, 1.0).acos());
        }
    }
    angles.iter().sum::<f64>() / angles.len() as f64
}
