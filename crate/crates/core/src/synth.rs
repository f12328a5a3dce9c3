//! Synthetic scenes: smooth Gaussian blobs, each with its own linear spectral
//! ramp, over a faint background.

use ndtensor::Tensor;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::cassi::HyperCube;
use crate::error::{MgirError, Result};

const BLOBS: usize = 6;
const BACKGROUND: f32 = 0.05;
const PEAK: f32 = 0.9;

struct Blob {
    cy: f32,
    cx: f32,
    inv_two_sigma2: f32,
    amplitude: f32,
    ramp: (f32, f32),
}

pub fn synthetic_scene(bands: usize, height: usize, width: usize, seed: u64) -> Result<HyperCube> {
    if bands == 0 || height == 0 || width == 0 {
        return Err(MgirError::Parameter {
            name: "scene extents",
            detail: format!("{bands}x{height}x{width} has an empty axis"),
        });
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let blobs: Vec<Blob> = (0..BLOBS)
        .map(|_| {
            let sigma: f32 = rng.gen_range(0.1..0.3);
            Blob {
                cy: rng.gen_range(0.0..1.0),
                cx: rng.gen_range(0.0..1.0),
                inv_two_sigma2: 1.0 / (2.0 * sigma * sigma),
                amplitude: rng.gen_range(0.3..0.7),
                ramp: (rng.gen_range(0.1..1.0), rng.gen_range(0.1..1.0)),
            }
        })
        .collect();
    let mut data = Tensor::from_fn([bands, height, width], |i| {
        let t = if bands > 1 { i[0] as f32 / (bands - 1) as f32 } else { 0.5 };
        let y = (i[1] as f32 + 0.5) / height as f32;
        let x = (i[2] as f32 + 0.5) / width as f32;
        BACKGROUND
            + blobs
                .iter()
                .map(|b| {
                    let r2 = (y - b.cy).powi(2) + (x - b.cx).powi(2);
                    b.amplitude * (-r2 * b.inv_two_sigma2).exp() * (b.ramp.0 + (b.ramp.1 - b.ramp.0) * t)
                })
                .sum::<f32>()
    });
    let max = data.data().iter().copied().fold(0.0f32, f32::max);
    if max > PEAK {
        let s = PEAK / max;
        data.data_mut().iter_mut().for_each(|v| *v *= s);
    }
    HyperCube::from_tensor(data)
}
