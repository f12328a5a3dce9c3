//! Finite-difference checks of the composite blocks in f64.

mod common;

use common::*;
use mgir::aggregator::{self, AggregatorConfig, QueryBatch};
use mgir::decoder;
use mgir::encoder::{self, Fusion};
use mgir::model::{self, ModelConfig};
use ndtensor::Tape;

#[test]
fn ssdw_block() {
    let cfg = small_encoder();
    let store = encoder_params(&cfg, 1);
    let params = perturbed(&store, &["enc.s0.b0."], 2);
    let x = uniform(&[1, 4, 3, 4, 5], -1.0, 1.0, 3);
    let err = composite_error(&params, &[x], 24, |t, b, xs| encoder::ssdw(t, b, "enc.s0.b0", xs[0]).unwrap());
    assert!(err < GRAD_TOL, "ssdw relative error {err}");
}

#[test]
fn encoder_with_both_fusions() {
    for fusion in [Fusion::Addition, Fusion::Concatenation] {
        let cfg = encoder::EncoderConfig {
            fusion,
            ..small_encoder()
        };
        let store = encoder_params(&cfg, 4);
        let params = perturbed(&store, &["enc."], 5);
        let m0 = uniform(&[1, 4, 8, 8], 0.0, 1.0, 6);
        let err = composite_error(&params, &[m0], 6, |t, b, xs| {
            let pyr = encoder::encode(t, b, xs[0], &cfg).unwrap();
            let flat: Vec<_> = pyr.levels.iter().map(|&l| t.reshape(l, &[t.shape(l).iter().product()]).unwrap()).collect();
            t.concat(&flat, 0).unwrap()
        });
        assert!(err < GRAD_TOL, "{fusion:?} encoder relative error {err}");
    }
}

fn mglfa_error(cfg: &AggregatorConfig, seed: u64) -> f64 {
    let store = aggregator_params(cfg, &[4, 8, 16, 32], seed);
    let params = perturbed(&store, &["agg.q", "agg.k", "agg.v", "agg.rpe"], seed + 1);
    let (p, k, a) = (3, cfg.keys_per_level(), cfg.model_dim);
    let mut inputs = Vec::new();
    for j in 0..cfg.groups {
        inputs.push(uniform(&[p, a], -1.0, 1.0, seed + 10 + j as u64));
        inputs.push(uniform(&[p, k, a], -1.0, 1.0, seed + 20 + j as u64));
    }
    let offsets: Vec<_> = (0..cfg.groups).map(|j| uniform(&[p, k, 3], -0.3, 0.3, seed + 30 + j as u64)).collect();
    composite_error(&params, &inputs, 12, |t, b, xs| {
        let batch = QueryBatch {
            coords: t.leaf(uniform(&[p, 3], -1.0, 1.0, 0)),
            query_codes: xs.iter().step_by(2).copied().collect(),
            windows: xs.iter().skip(1).step_by(2).copied().collect(),
            offsets: offsets.iter().map(|o| t.leaf(o.clone())).collect(),
        };
        aggregator::aggregate(t, b, &batch, cfg).unwrap()
    })
}

#[test]
fn mglfa_block() {
    let err = mglfa_error(&small_aggregator(), 7);
    assert!(err < GRAD_TOL, "mglfa relative error {err}");
}

#[test]
fn mglfa_concatenated_queries_without_rpe() {
    let cfg = AggregatorConfig {
        query_fusion: Fusion::Concatenation,
        rpe: false,
        ..small_aggregator()
    };
    let err = mglfa_error(&cfg, 9);
    assert!(err < GRAD_TOL, "mglfa variant relative error {err}");
}

#[test]
fn decoder_mlp() {
    let cfg = small_decoder();
    let params = perturbed(&decoder_params(&cfg, 5, 11), &["dec."], 12);
    let codes = uniform(&[4, 5], -1.0, 1.0, 13);
    let coords = uniform(&[4, 3], -1.0, 1.0, 14);
    let err = composite_error(&params, &[codes, coords], 40, |t, b, xs| decoder::decode(t, b, xs[0], xs[1], &cfg).unwrap());
    assert!(err < GRAD_TOL, "decoder relative error {err}");
}

#[test]
fn full_model_reaches_every_parameter() {
    let cfg = ModelConfig {
        encoder: small_encoder(),
        aggregator: AggregatorConfig {
            groups: 4,
            ..small_aggregator()
        },
        decoder: small_decoder(),
    };
    let store = model::init_params(&cfg, 3).unwrap().cast::<f64>();
    let mut tape = Tape::<f64>::new();
    let b = store.bind(&mut tape);
    let m0 = tape.leaf(uniform(&[1, 4, 8, 8], 0.0, 1.0, 15));
    let coords = uniform(&[6, 3], -1.0, 1.0, 16);
    let y = model::forward(&mut tape, &b, m0, &coords, &cfg).unwrap();
    let loss = ndtensor::gradcheck::probe_loss(&mut tape, y, 3).unwrap();
    tape.backward(loss).unwrap();
    for (name, g) in store.gradients(&tape, &b).unwrap() {
        assert!(g.data().iter().any(|&v| v != 0.0), "{name} received no gradient");
    }
}
