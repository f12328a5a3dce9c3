//! Training loss and reconstruction quality metrics. Metrics accumulate in
//! `f64` regardless of the storage precision.

use ndtensor::{Scalar, Tape, Var};
use serde::{Deserialize, Serialize};

use crate::cassi::HyperCube;
use crate::error::{MgirError, Result};

/// `sqrt(mean((pred − truth)²))` on the tape, with a zero subgradient when the
/// error vanishes.
pub fn rmse_loss<T: Scalar>(tape: &mut Tape<T>, pred: Var, truth: Var) -> Result<Var> {
    let (ps, ts) = (tape.shape(pred).to_vec(), tape.shape(truth).to_vec());
    if ps != ts {
        return Err(MgirError::Shape {
            what: "loss operands",
            expected: ts,
            got: ps,
        });
    }
    if tape.value(pred).numel() == 0 {
        return Err(MgirError::Parameter {
            name: "loss batch",
            detail: "is empty".into(),
        });
    }
    let diff = tape.sub(pred, truth)?;
    let sq = tape.mul(diff, diff)?;
    let mse = tape.mean(sq)?;
    Ok(tape.sqrt(mse)?)
}

fn same_shape(pred: &HyperCube, truth: &HyperCube) -> Result<()> {
    if pred.data().shape() != truth.data().shape() {
        return Err(MgirError::Shape {
            what: "metric operands",
            expected: truth.data().shape().to_vec(),
            got: pred.data().shape().to_vec(),
        });
    }
    Ok(())
}

pub fn mse(pred: &HyperCube, truth: &HyperCube) -> Result<f64> {
    same_shape(pred, truth)?;
    let (p, t) = (pred.data().data(), truth.data().data());
    let sum: f64 = p.iter().zip(t).map(|(&a, &b)| (a as f64 - b as f64).powi(2)).sum();
    Ok(sum / p.len().max(1) as f64)
}

pub fn rmse(pred: &HyperCube, truth: &HyperCube) -> Result<f64> {
    Ok(mse(pred, truth)?.sqrt())
}

/// Peak signal-to-noise ratio in dB; `+∞` when the cubes are identical.
pub fn psnr(pred: &HyperCube, truth: &HyperCube, peak: f64) -> Result<f64> {
    if !(peak > 0.0) {
        return Err(MgirError::Parameter {
            name: "peak",
            detail: format!("{peak} must be positive"),
        });
    }
    Ok(psnr_from_mse(mse(pred, truth)?, peak))
}

pub fn psnr_from_mse(mse: f64, peak: f64) -> f64 {
    if mse == 0.0 {
        f64::INFINITY
    } else {
        10.0 * (peak * peak / mse).log10()
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SsimParams {
    pub window: usize,
    pub sigma: f64,
    pub k1: f64,
    pub k2: f64,
    pub peak: f64,
}

impl Default for SsimParams {
    fn default() -> Self {
        Self {
            window: 11,
            sigma: 1.5,
            k1: 0.01,
            k2: 0.03,
            peak: 1.0,
        }
    }
}

fn gaussian(window: usize, sigma: f64) -> Vec<f64> {
    let c = (window / 2) as f64;
    let g: Vec<f64> = (0..window).map(|i| (-((i as f64 - c).powi(2)) / (2.0 * sigma * sigma)).exp()).collect();
    let s: f64 = g.iter().sum();
    g.into_iter().map(|v| v / s).collect()
}

/// Valid-mode separable filtering of an `h×w` image.
fn filter(img: &[f64], h: usize, w: usize, g: &[f64]) -> Vec<f64> {
    let k = g.len();
    let (oh, ow) = (h - k + 1, w - k + 1);
    let mut rows = vec![0.0; h * ow];
    for y in 0..h {
        for x in 0..ow {
            rows[y * ow + x] = g.iter().enumerate().map(|(i, gv)| gv * img[y * w + x + i]).sum();
        }
    }
    let mut out = vec![0.0; oh * ow];
    for y in 0..oh {
        for x in 0..ow {
            out[y * ow + x] = g.iter().enumerate().map(|(i, gv)| gv * rows[(y + i) * ow + x]).sum();
        }
    }
    out
}

/// Gaussian-windowed SSIM, averaged over valid window positions and then
/// over bands.
pub fn ssim(pred: &HyperCube, truth: &HyperCube, params: &SsimParams) -> Result<f64> {
    same_shape(pred, truth)?;
    let (d, h, w) = (truth.bands(), truth.height(), truth.width());
    let k = params.window;
    if k % 2 == 0 || k == 0 {
        return Err(MgirError::Parameter {
            name: "ssim window",
            detail: format!("{k} must be odd"),
        });
    }
    if k > h || k > w {
        return Err(MgirError::Parameter {
            name: "ssim window",
            detail: format!("{k} exceeds the {h}x{w} image"),
        });
    }
    let g = gaussian(k, params.sigma);
    let c1 = (params.k1 * params.peak).powi(2);
    let c2 = (params.k2 * params.peak).powi(2);
    let mut total = 0.0;
    for b in 0..d {
        let band = |c: &HyperCube| -> Vec<f64> { c.data().data()[b * h * w..(b + 1) * h * w].iter().map(|&v| v as f64).collect() };
        let (x, y) = (band(pred), band(truth));
        let prod = |a: &[f64], b: &[f64]| -> Vec<f64> { a.iter().zip(b).map(|(p, q)| p * q).collect() };
        let mx = filter(&x, h, w, &g);
        let my = filter(&y, h, w, &g);
        let sxx = filter(&prod(&x, &x), h, w, &g);
        let syy = filter(&prod(&y, &y), h, w, &g);
        let sxy = filter(&prod(&x, &y), h, w, &g);
        let mut acc = 0.0;
        for i in 0..mx.len() {
            let (ux, uy) = (mx[i], my[i]);
            let vx = sxx[i] - ux * ux;
            let vy = syy[i] - uy * uy;
            let cxy = sxy[i] - ux * uy;
            acc += ((2.0 * ux * uy + c1) * (2.0 * cxy + c2)) / ((ux * ux + uy * uy + c1) * (vx + vy + c2));
        }
        total += acc / mx.len() as f64;
    }
    Ok(total / d as f64)
}

/// Mean spectral angle in radians over pixels where both spectra are nonzero.
/// Each angle is `2·atan2(|p̂ − t̂|, |p̂ + t̂|)` on the unit spectra, which
/// equals the arccosine of their cosine and is exactly zero for identical
/// spectra.
pub fn sam(pred: &HyperCube, truth: &HyperCube) -> Result<f64> {
    same_shape(pred, truth)?;
    let (d, hw) = (truth.bands(), truth.height() * truth.width());
    let (p, t) = (pred.data().data(), truth.data().data());
    let (mut sum, mut n) = (0.0, 0usize);
    for px in 0..hw {
        let spectrum = |c: &[f32]| -> Vec<f64> { (0..d).map(|b| c[b * hw + px] as f64).collect() };
        let (a, c) = (spectrum(p), spectrum(t));
        let (na, nc) = (a.iter().map(|v| v * v).sum::<f64>().sqrt(), c.iter().map(|v| v * v).sum::<f64>().sqrt());
        if na == 0.0 || nc == 0.0 {
            continue;
        }
        let (mut diff, mut plus) = (0.0, 0.0);
        for (x, y) in a.iter().zip(&c) {
            let (u, v) = (x / na, y / nc);
            diff += (u - v) * (u - v);
            plus += (u + v) * (u + v);
        }
        sum += 2.0 * diff.sqrt().atan2(plus.sqrt());
        n += 1;
    }
    if n == 0 {
        return Err(MgirError::UndefinedMetric("spectral angle"));
    }
    Ok(sum / n as f64)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub rmse: f64,
    pub psnr_db: f64,
    pub ssim: f64,
    pub sam_rad: f64,
}

/// SSIM window used for an `h×w` image: the default 11, or the largest odd
/// size that fits.
pub fn ssim_window_for(h: usize, w: usize) -> usize {
    let m = h.min(w).min(SsimParams::default().window);
    if m % 2 == 0 {
        m - 1
    } else {
        m
    }
}

/// All four metrics with default parameters and a peak of 1.
pub fn evaluate(pred: &HyperCube, truth: &HyperCube) -> Result<MetricReport> {
    let mse = mse(pred, truth)?;
    let params = SsimParams {
        window: ssim_window_for(truth.height(), truth.width()),
        ..Default::default()
    };
    Ok(MetricReport {
        rmse: mse.sqrt(),
        psnr_db: psnr_from_mse(mse, 1.0),
        ssim: ssim(pred, truth, &params)?,
        sam_rad: sam(pred, truth)?,
    })
}
