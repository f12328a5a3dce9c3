//! Coordinate-conditioned implicit decoder and arbitrary-resolution
//! reconstruction.

use ndtensor::ops::sample::cell_center;
use ndtensor::{Bindings, ParameterStore, Scalar, Tape, Tensor, Var};
use serde::{Deserialize, Serialize};

use crate::cassi::{band_centers, lift_measurement, HyperCube, Measurement, DEFAULT_WAVELENGTHS_NM};
use crate::error::{MgirError, Result};
use crate::model::{self, ModelConfig};
use crate::nn::{self, Initializer};

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    #[default]
    Gelu,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DecoderConfig {
    pub hidden_dims: Vec<usize>,
    pub activation: Activation,
    /// `[lo, hi]` applied to reconstructed intensities, or `null`.
    pub output_clamp: Option<[f32; 2]>,
}

impl Default for DecoderConfig {
    fn default() -> Self {
        Self {
            hidden_dims: vec![64, 64, 64],
            activation: Activation::Gelu,
            output_clamp: Some([0.0, 1.0]),
        }
    }
}

impl DecoderConfig {
    pub fn validate(&self) -> Vec<String> {
        let mut errs = Vec::new();
        if self.hidden_dims.is_empty() {
            errs.push("decoder.hidden_dims needs at least one layer".into());
        }
        if self.hidden_dims.contains(&0) {
            errs.push("decoder.hidden_dims entries must be at least 1".into());
        }
        if let Some([lo, hi]) = self.output_clamp {
            if !(lo < hi) {
                errs.push(format!("decoder.output_clamp [{lo}, {hi}] is empty"));
            }
        }
        errs
    }
}

/// Registers `dec.l{i}` layers for codes of width `code_dim`.
pub fn init(cfg: &DecoderConfig, code_dim: usize, init: &mut Initializer) -> Result<()> {
    let mut fan_in = code_dim + 3;
    for (i, &h) in cfg.hidden_dims.iter().enumerate() {
        init.linear(&format!("dec.l{i}"), fan_in, h, true)?;
        fan_in = h;
    }
    init.linear(&format!("dec.l{}", cfg.hidden_dims.len()), fan_in, 1, true)
}

/// Intensity `[P, 1]` at each coordinate given its latent code.
pub fn decode<T: Scalar>(tape: &mut Tape<T>, b: &Bindings, codes: Var, coords: Var, cfg: &DecoderConfig) -> Result<Var> {
    let (pc, px) = (tape.shape(codes)[0], tape.shape(coords)[0]);
    if pc != px {
        return Err(MgirError::Shape {
            what: "decoder rows",
            expected: vec![pc],
            got: vec![px],
        });
    }
    let mut x = tape.concat(&[codes, coords], 1)?;
    for i in 0..cfg.hidden_dims.len() {
        x = nn::linear(tape, b, &format!("dec.l{i}"), x, true)?;
        x = match cfg.activation {
            Activation::Gelu => tape.gelu(x)?,
        };
    }
    nn::linear(tape, b, &format!("dec.l{}", cfg.hidden_dims.len()), x, true)
}

#[derive(Clone, Debug, PartialEq)]
pub struct ReconstructionRequest {
    pub out_bands: usize,
    pub out_height: usize,
    pub out_width: usize,
    /// Nanometers spanned by the output bands.
    pub wavelength_range: (f32, f32),
}

impl ReconstructionRequest {
    pub fn new(out_bands: usize, out_height: usize, out_width: usize) -> Self {
        Self {
            out_bands,
            out_height,
            out_width,
            wavelength_range: DEFAULT_WAVELENGTHS_NM,
        }
    }

    pub fn voxels(&self) -> usize {
        self.out_bands * self.out_height * self.out_width
    }
}

/// Cell-center coordinates of the requested grid, `[P, 3]` in
/// (band, row, column) order with the column varying fastest.
pub fn normalize_grid<T: Scalar>(req: &ReconstructionRequest) -> Tensor<T> {
    let (d, h, w) = (req.out_bands, req.out_height, req.out_width);
    let mut out = Vec::with_capacity(d * h * w * 3);
    for i in 0..d {
        for y in 0..h {
            for x in 0..w {
                out.extend([cell_center::<T>(i, d), cell_center::<T>(y, h), cell_center::<T>(x, w)]);
            }
        }
    }
    Tensor::new([d * h * w, 3], out).expect("grid extents")
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ReconstructOptions {
    /// Largest grid, in voxels, that will be attempted.
    pub voxel_budget: usize,
    /// Queries evaluated per pass over the shared encoding.
    pub chunk: usize,
}

impl Default for ReconstructOptions {
    fn default() -> Self {
        Self {
            voxel_budget: 1 << 24,
            chunk: 4096,
        }
    }
}

/// Decodes the requested grid from a measurement. The encoder runs once and
/// queries stream through in chunks; each query's value does not depend on
/// the chunk it lands in.
pub fn reconstruct(
    meas: &Measurement,
    params: &ParameterStore<f32>,
    cfg: &ModelConfig,
    req: &ReconstructionRequest,
    opts: &ReconstructOptions,
) -> Result<HyperCube> {
    if req.out_bands == 0 || req.out_height == 0 || req.out_width == 0 {
        return Err(MgirError::Parameter {
            name: "reconstruction request",
            detail: format!("{}x{}x{} has an empty axis", req.out_bands, req.out_height, req.out_width),
        });
    }
    if req.voxels() > opts.voxel_budget {
        return Err(MgirError::Budget {
            requested: req.voxels(),
            limit: opts.voxel_budget,
        });
    }
    let (lo, hi) = req.wavelength_range;
    if !(lo < hi) {
        return Err(MgirError::Parameter {
            name: "wavelength_range",
            detail: format!("({lo}, {hi}) is empty"),
        });
    }
    let coords = normalize_grid::<f32>(req);
    let values = predict(meas, params, cfg, &coords, opts.chunk)?;
    let clamp = cfg.decoder.output_clamp;
    let data = values
        .into_iter()
        .map(|v| match clamp {
            Some([lo, hi]) => v.clamp(lo, hi),
            None => v,
        })
        .collect();
    let cube = Tensor::new([req.out_bands, req.out_height, req.out_width], data)?;
    HyperCube::new(cube, band_centers(req.out_bands, req.wavelength_range))
}

/// Raw model outputs at arbitrary coordinates `[P, 3]`, before clamping.
pub fn predict(
    meas: &Measurement,
    params: &ParameterStore<f32>,
    cfg: &ModelConfig,
    coords: &Tensor<f32>,
    chunk: usize,
) -> Result<Vec<f32>> {
    let p = coords.shape()[0];
    let mut tape = Tape::new();
    let b = params.bind(&mut tape);
    let m0 = tape.leaf(lift_measurement(meas));
    let levels = model::encode(&mut tape, &b, m0, cfg)?;
    let mark = tape.len();
    let mut out = Vec::with_capacity(p);
    let chunk = chunk.max(1);
    for start in (0..p).step_by(chunk) {
        let n = chunk.min(p - start);
        let rows = Tensor::new([n, 3], coords.data()[start * 3..(start + n) * 3].to_vec())?;
        let y = model::query(&mut tape, &b, &levels, &rows, cfg)?;
        out.extend_from_slice(tape.value(y).data());
        tape.truncate(mark);
    }
    Ok(out)
}

/// Convex blend of neighbor predictions, `Σ wᵢ vᵢ`.
pub fn liif_baseline_blend(values: &Tensor<f32>, weights: &Tensor<f32>) -> Result<Tensor<f32>> {
    let n = weights.numel();
    if values.shape() != [n, 1] || weights.rank() != 1 {
        return Err(MgirError::Shape {
            what: "blend values",
            expected: vec![n, 1],
            got: values.shape().to_vec(),
        });
    }
    if weights.data().iter().any(|&w| w < 0.0) {
        return Err(MgirError::Parameter {
            name: "weights",
            detail: "must be nonnegative".into(),
        });
    }
    let sum: f64 = weights.data().iter().map(|&w| w as f64).sum();
    if (sum - 1.0).abs() > 1e-4 {
        return Err(MgirError::Normalization { sum });
    }
    let v: f64 = values.data().iter().zip(weights.data()).map(|(&v, &w)| v as f64 * w as f64).sum();
    Ok(Tensor::new([1], vec![v as f32])?)
}
