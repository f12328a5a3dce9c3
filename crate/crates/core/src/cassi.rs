//! Coded-aperture snapshot spectral imaging: the optical forward model and
//! the shift-back lifting of a detector frame into a band-aligned volume.

use ndtensor::Tensor;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{MgirError, Result};

/// Wavelength span assigned to cubes loaded without wavelength metadata.
pub const DEFAULT_WAVELENGTHS_NM: (f32, f32) = (400.0, 700.0);

/// A `[D, H, W]` reflectance cube with one wavelength per band.
#[derive(Clone, Debug, PartialEq)]
pub struct HyperCube {
    data: Tensor<f32>,
    wavelengths: Vec<f32>,
}

impl HyperCube {
    /// Values are clamped to `[0, 1]`; wavelengths must be strictly increasing.
    pub fn new(data: Tensor<f32>, wavelengths: Vec<f32>) -> Result<Self> {
        if data.rank() != 3 {
            return Err(MgirError::Shape {
                what: "hyperspectral cube rank",
                expected: vec![3],
                got: vec![data.rank()],
            });
        }
        if wavelengths.len() != data.shape()[0] {
            return Err(MgirError::Parameter {
                name: "wavelengths",
                detail: format!("{} wavelengths for {} bands", wavelengths.len(), data.shape()[0]),
            });
        }
        if wavelengths.windows(2).any(|w| !(w[0] < w[1])) {
            return Err(MgirError::Parameter {
                name: "wavelengths",
                detail: "must be strictly increasing".into(),
            });
        }
        Ok(Self {
            data: data.map(|v| v.clamp(0.0, 1.0)),
            wavelengths,
        })
    }

    /// Band centers spread evenly over [`DEFAULT_WAVELENGTHS_NM`].
    pub fn from_tensor(data: Tensor<f32>) -> Result<Self> {
        let bands = data.shape().first().copied().unwrap_or(0);
        Self::new(data, band_centers(bands, DEFAULT_WAVELENGTHS_NM))
    }

    pub fn data(&self) -> &Tensor<f32> {
        &self.data
    }

    pub fn into_data(self) -> Tensor<f32> {
        self.data
    }

    pub fn wavelengths(&self) -> &[f32] {
        &self.wavelengths
    }

    pub fn bands(&self) -> usize {
        self.data.shape()[0]
    }

    pub fn height(&self) -> usize {
        self.data.shape()[1]
    }

    pub fn width(&self) -> usize {
        self.data.shape()[2]
    }
}

/// Centers of `n` equal-width bins over `range`.
pub fn band_centers(n: usize, range: (f32, f32)) -> Vec<f32> {
    let (lo, hi) = range;
    (0..n).map(|b| lo + (hi - lo) * (2 * b + 1) as f32 / (2 * n) as f32).collect()
}

#[derive(Clone, Debug, PartialEq)]
pub struct CodedMask {
    data: Tensor<f32>,
    seed: u64,
}

impl CodedMask {
    /// Wraps an explicit `[H, W]` pattern with entries in `[0, 1]`.
    pub fn from_tensor(data: Tensor<f32>, seed: u64) -> Result<Self> {
        if data.rank() != 2 {
            return Err(MgirError::Shape {
                what: "mask rank",
                expected: vec![2],
                got: vec![data.rank()],
            });
        }
        if data.data().iter().any(|v| !(0.0..=1.0).contains(v)) {
            return Err(MgirError::Parameter {
                name: "mask",
                detail: "entries must lie in [0, 1]".into(),
            });
        }
        Ok(Self { data, seed })
    }

    pub fn data(&self) -> &Tensor<f32> {
        &self.data
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }
}

/// Binary mask with independent Bernoulli(`density`) entries drawn from a
/// seeded ChaCha8 stream in row-major order.
pub fn make_mask(height: usize, width: usize, density: f64, seed: u64) -> Result<CodedMask> {
    if height == 0 || width == 0 {
        return Err(MgirError::Parameter {
            name: "mask extents",
            detail: format!("{height}x{width} has an empty axis"),
        });
    }
    if !(density > 0.0 && density < 1.0) {
        return Err(MgirError::Parameter {
            name: "density",
            detail: format!("{density} is outside (0, 1)"),
        });
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let data = (0..height * width).map(|_| if rng.gen::<f64>() < density { 1.0 } else { 0.0 }).collect();
    Ok(CodedMask {
        data: Tensor::new([height, width], data)?,
        seed,
    })
}

/// A detector frame `[H, W + d·(D−1)]` together with how it was formed.
#[derive(Clone, Debug, PartialEq)]
pub struct Measurement {
    data: Tensor<f32>,
    shift_d: usize,
    band_count: usize,
}

impl Measurement {
    pub fn new(data: Tensor<f32>, shift_d: usize, band_count: usize) -> Result<Self> {
        if data.rank() != 2 {
            return Err(MgirError::Shape {
                what: "measurement rank",
                expected: vec![2],
                got: vec![data.rank()],
            });
        }
        if band_count == 0 {
            return Err(MgirError::Parameter {
                name: "band_count",
                detail: "must be at least 1".into(),
            });
        }
        let spread = shift_d * (band_count - 1);
        if data.shape()[1] <= spread {
            return Err(MgirError::Parameter {
                name: "measurement width",
                detail: format!(
                    "{} columns cannot hold {band_count} bands dispersed by {shift_d}",
                    data.shape()[1]
                ),
            });
        }
        Ok(Self {
            data,
            shift_d,
            band_count,
        })
    }

    pub fn data(&self) -> &Tensor<f32> {
        &self.data
    }

    pub fn shift_d(&self) -> usize {
        self.shift_d
    }

    pub fn band_count(&self) -> usize {
        self.band_count
    }

    pub fn height(&self) -> usize {
        self.data.shape()[0]
    }

    /// Width of the scene that produced this frame.
    pub fn scene_width(&self) -> usize {
        self.data.shape()[1] - self.shift_d * (self.band_count - 1)
    }
}

/// Applies the mask to every band.
pub fn encode(cube: &HyperCube, mask: &CodedMask) -> Result<Tensor<f32>> {
    let [d, h, w] = [cube.bands(), cube.height(), cube.width()];
    if mask.data.shape() != [h, w] {
        return Err(MgirError::Shape {
            what: "mask extents",
            expected: vec![h, w],
            got: mask.data.shape().to_vec(),
        });
    }
    let m = mask.data.data();
    let data = cube
        .data
        .data()
        .chunks_exact(h * w)
        .flat_map(|band| band.iter().zip(m).map(|(x, k)| x * k))
        .collect();
    Ok(Tensor::new([d, h, w], data)?)
}

/// Shears band `b` right by `shift_d·b` columns and sums the bands onto the
/// detector.
pub fn disperse_integrate(encoded: &Tensor<f32>, shift_d: usize) -> Result<Measurement> {
    let &[d, h, w] = encoded.shape() else {
        return Err(MgirError::Shape {
            what: "encoded cube rank",
            expected: vec![3],
            got: vec![encoded.rank()],
        });
    };
    if d == 0 {
        return Err(MgirError::Parameter {
            name: "encoded cube",
            detail: "has no bands".into(),
        });
    }
    let out_w = w + shift_d * (d - 1);
    let mut out = vec![0.0f32; h * out_w];
    let src = encoded.data();
    for b in 0..d {
        let off = shift_d * b;
        for u in 0..h {
            let row = &src[(b * h + u) * w..(b * h + u + 1) * w];
            let dst = &mut out[u * out_w + off..u * out_w + off + w];
            for (o, &x) in dst.iter_mut().zip(row) {
                *o += x;
            }
        }
    }
    Measurement::new(Tensor::new([h, out_w], out)?, shift_d, d)
}

/// Shift-back crop: band `b` takes columns `[d·b, d·b + W)`. Output is
/// `[1, D, H, W]`.
pub fn lift_measurement(meas: &Measurement) -> Tensor<f32> {
    let (d, h, w) = (meas.band_count, meas.height(), meas.scene_width());
    let full_w = meas.data.shape()[1];
    let src = meas.data.data();
    let mut out = Vec::with_capacity(d * h * w);
    for b in 0..d {
        let off = meas.shift_d * b;
        for u in 0..h {
            out.extend_from_slice(&src[u * full_w + off..u * full_w + off + w]);
        }
    }
    Tensor::new([1, d, h, w], out).expect("lifted extents")
}

/// Mask, disperse and integrate in one call.
pub fn simulate(cube: &HyperCube, mask: &CodedMask, shift_d: usize) -> Result<Measurement> {
    disperse_integrate(&encode(cube, mask)?, shift_d)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cube(d: usize, h: usize, w: usize, f: impl Fn(usize, usize, usize) -> f32) -> HyperCube {
        HyperCube::from_tensor(Tensor::from_fn([d, h, w], |i| f(i[0], i[1], i[2]))).unwrap()
    }

    #[test]
    fn mask_density_bounds() {
        assert!(make_mask(4, 4, 1.0, 7).is_err());
        assert!(make_mask(4, 4, 0.0, 7).is_err());
        assert!(make_mask(0, 4, 0.5, 7).is_err());
        assert_eq!(make_mask(4, 4, 0.5, 7).unwrap(), make_mask(4, 4, 0.5, 7).unwrap());
        assert_ne!(make_mask(16, 16, 0.5, 7).unwrap(), make_mask(16, 16, 0.5, 8).unwrap());
    }

    #[test]
    fn mask_fraction_concentrates() {
        let m = make_mask(256, 256, 0.5, 3).unwrap();
        let frac = m.data().sum() / (256.0 * 256.0);
        assert!((0.48..=0.52).contains(&frac), "{frac}");
    }

    #[test]
    fn identity_and_zero_masks() {
        let c = cube(3, 2, 4, |b, u, v| 0.1 * (b + u + v) as f32);
        let ones = CodedMask::from_tensor(Tensor::ones([2, 4]), 0).unwrap();
        assert_eq!(&encode(&c, &ones).unwrap(), c.data());
        let zeros = CodedMask::from_tensor(Tensor::zeros([2, 4]), 0).unwrap();
        assert!(encode(&c, &zeros).unwrap().data().iter().all(|&v| v == 0.0));
        let wrong = CodedMask::from_tensor(Tensor::ones([2, 3]), 0).unwrap();
        assert!(matches!(encode(&c, &wrong), Err(MgirError::Shape { .. })));
    }

    #[test]
    fn two_band_dispersion() {
        let meas = disperse_integrate(&Tensor::ones([2, 2, 2]), 1).unwrap();
        assert_eq!(meas.data().shape(), [2, 3]);
        assert_eq!(meas.data().data(), [1.0, 2.0, 1.0, 1.0, 2.0, 1.0]);
    }

    #[test]
    fn single_band_is_passthrough() {
        let enc = Tensor::from_fn([1, 3, 5], |i| (i[1] * 5 + i[2]) as f32);
        let meas = disperse_integrate(&enc, 2).unwrap();
        assert_eq!(meas.data().data(), enc.data());
    }

    #[test]
    fn full_scale_measurement_extent() {
        let meas = disperse_integrate(&Tensor::zeros([28, 256, 256]), 2).unwrap();
        assert_eq!(meas.data().shape(), [256, 310]);
        assert_eq!(meas.scene_width(), 256);
    }

    #[test]
    fn zero_shift_lifts_identical_slices() {
        let enc = Tensor::from_fn([3, 2, 3], |i| (i[0] + 2 * i[1] + 3 * i[2]) as f32);
        let meas = disperse_integrate(&enc, 0).unwrap();
        let lifted = lift_measurement(&meas);
        assert_eq!(lifted.shape(), [1, 3, 2, 3]);
        for b in 0..3 {
            assert_eq!(&lifted.data()[b * 6..(b + 1) * 6], meas.data().data());
        }
    }

    #[test]
    fn one_hot_band_is_recovered() {
        let c = cube(4, 3, 5, |b, u, v| if b == 0 { 0.1 * (u * 5 + v) as f32 / 2.0 } else { 0.0 });
        let mask = make_mask(3, 5, 0.5, 11).unwrap();
        let enc = encode(&c, &mask).unwrap();
        let lifted = lift_measurement(&simulate(&c, &mask, 2).unwrap());
        assert_eq!(&lifted.data()[..15], &enc.data()[..15]);
    }

    #[test]
    fn cube_validation() {
        assert!(HyperCube::new(Tensor::zeros([2, 1, 1]), vec![500.0, 500.0]).is_err());
        assert!(HyperCube::new(Tensor::zeros([2, 1, 1]), vec![500.0]).is_err());
        let c = HyperCube::new(Tensor::new([1, 1, 2], vec![-0.5, 1.5]).unwrap(), vec![550.0]).unwrap();
        assert_eq!(c.data().data(), [0.0, 1.0]);
        assert!(Measurement::new(Tensor::zeros([2, 4]), 2, 3).is_err());
    }
}
