//! Continuous sampling of voxel grids.
//!
//! Coordinates follow the cell-center convention: voxel `i` of an axis with
//! extent `N` sits at `-1 + (2i + 1) / N`. Points outside `[-1, 1]` (or past
//! the outermost centers) clamp to the boundary and receive zero coordinate
//! gradient there.

use crate::error::{Result, TensorError};
use crate::tape::{Op, UpsampleMode};
use crate::{Scalar, Tape, Tensor, Var};

/// Normalized cell-center coordinate of voxel `i` on an axis of extent `n`.
pub fn cell_center<T: Scalar>(i: usize, n: usize) -> T {
    -T::one() + T::of((2 * i + 1) as f64) / T::of(n as f64)
}

/// Interpolation stencil along one axis.
#[derive(Clone, Copy, Debug)]
struct AxisStencil<T> {
    i0: usize,
    i1: usize,
    t: T,
    /// d(continuous index)/d(normalized coordinate); zero when clamped.
    slope: T,
}

fn stencil<T: Scalar>(p: T, n: usize) -> AxisStencil<T> {
    let nf = T::of(n as f64);
    let two = T::of(2.0);
    let u = ((p + T::one()) * nf - T::one()) / two;
    let max = T::of((n - 1) as f64);
    let (u, slope) = if u < T::zero() {
        (T::zero(), T::zero())
    } else if u > max {
        (max, T::zero())
    } else {
        (u, nf / two)
    };
    if n == 1 {
        return AxisStencil {
            i0: 0,
            i1: 0,
            t: T::zero(),
            slope: T::zero(),
        };
    }
    let i0 = (u.floor().as_f64() as usize).min(n - 2);
    AxisStencil {
        i0,
        i1: i0 + 1,
        t: u - T::of(i0 as f64),
        slope,
    }
}

fn grid_dims(shape: &[usize]) -> Result<[usize; 4]> {
    let dims: [usize; 4] = shape.try_into().map_err(|_| TensorError::Rank {
        op: "trilinear_sample",
        expected: "4 ([C, D, H, W])".into(),
        got: shape.to_vec(),
    })?;
    if dims.contains(&0) {
        return Err(TensorError::EmptyGrid { shape: shape.to_vec() });
    }
    Ok(dims)
}

/// The eight corners touched by one point: (flat spatial offset, weight,
/// per-axis selector bits).
fn corners<T: Scalar>(s: &[AxisStencil<T>; 3], dims: [usize; 3]) -> [(usize, T, [bool; 3]); 8] {
    let mut out = [(0usize, T::zero(), [false; 3]); 8];
    for (k, slot) in out.iter_mut().enumerate() {
        let bits = [k & 4 != 0, k & 2 != 0, k & 1 != 0];
        let mut off = 0usize;
        let mut w = T::one();
        for ax in 0..3 {
            let st = &s[ax];
            let (idx, wa) = if bits[ax] { (st.i1, st.t) } else { (st.i0, T::one() - st.t) };
            off = off * dims[ax] + idx;
            w *= wa;
        }
        *slot = (off, w, bits);
    }
    out
}

fn point_stencils<T: Scalar>(p: &[T], dims: [usize; 3]) -> [AxisStencil<T>; 3] {
    [stencil(p[0], dims[0]), stencil(p[1], dims[1]), stencil(p[2], dims[2])]
}

impl<T: Scalar> Tape<T> {
    /// Trilinear interpolation of `grid[C, D, H, W]` at `points[P, 3]`
    /// (columns ordered depth, height, width), producing `[P, C]`.
    pub fn trilinear_sample(&mut self, grid: Var, points: Var) -> Result<Var> {
        self.check(grid)?;
        self.check(points)?;
        let [c, d, h, w] = grid_dims(self.shape(grid))?;
        let ps = self.shape(points);
        if ps.len() != 2 || ps[1] != 3 {
            return Err(TensorError::Rank {
                op: "trilinear_sample",
                expected: "2 ([P, 3])".into(),
                got: ps.to_vec(),
            });
        }
        let p = ps[0];
        let plane = d * h * w;
        let (gv, pv) = (self.value(grid).data(), self.value(points).data());
        let mut out = vec![T::zero(); p * c];
        for (row, pt) in out.chunks_mut(c.max(1)).zip(pv.chunks(3)) {
            let st = point_stencils(pt, [d, h, w]);
            for (off, wt, _) in corners(&st, [d, h, w]) {
                if wt == T::zero() {
                    continue;
                }
                for (ch, o) in row.iter_mut().enumerate() {
                    *o += wt * gv[ch * plane + off];
                }
            }
        }
        let out = Tensor::new([p, c], out)?;
        self.push("trilinear_sample", out, Op::TrilinearSample { grid, points })
    }

    /// Resamples `input[N, C, D, H, W]` to the given spatial extents using
    /// cell-center alignment.
    pub fn upsample(&mut self, input: Var, size: [usize; 3], mode: UpsampleMode) -> Result<Var> {
        self.check(input)?;
        let shape = self.shape(input).to_vec();
        if shape.len() != 5 {
            return Err(TensorError::Rank {
                op: "upsample",
                expected: "5".into(),
                got: shape,
            });
        }
        if size.contains(&0) || shape[2..].contains(&0) {
            return Err(TensorError::InvalidArgument {
                op: "upsample",
                detail: format!("cannot resample {shape:?} to {size:?}"),
            });
        }
        let maps = resample_maps::<T>(&shape[2..], size, mode);
        let x = self.value(input).data();
        let planes = shape[0] * shape[1];
        let (in_plane, out_plane) = (shape[2] * shape[3] * shape[4], size.iter().product::<usize>());
        let mut out = vec![T::zero(); planes * out_plane];
        for pl in 0..planes {
            let src = &x[pl * in_plane..(pl + 1) * in_plane];
            let dst = &mut out[pl * out_plane..(pl + 1) * out_plane];
            visit_resample(&maps, &shape[2..], size, |o, i, wt| dst[o] += wt * src[i]);
        }
        let out = Tensor::new([shape[0], shape[1], size[0], size[1], size[2]], out)?;
        self.push("upsample", out, Op::Upsample { input, mode })
    }
}

pub(crate) fn trilinear_backward_grid<T: Scalar>(gg: &mut [T], g: &[T], grid_shape: &[usize], points: &[T]) {
    let [c, d, h, w] = grid_dims(grid_shape).expect("validated in forward");
    let plane = d * h * w;
    for (grow, pt) in g.chunks(c).zip(points.chunks(3)) {
        let st = point_stencils(pt, [d, h, w]);
        for (off, wt, _) in corners(&st, [d, h, w]) {
            for (ch, &gv) in grow.iter().enumerate() {
                gg[ch * plane + off] += wt * gv;
            }
        }
    }
}

pub(crate) fn trilinear_backward_points<T: Scalar>(gp: &mut [T], g: &[T], grid: &Tensor<T>, points: &[T]) {
    let [c, d, h, w] = grid_dims(grid.shape()).expect("validated in forward");
    let plane = d * h * w;
    let gv = grid.data();
    for (pi, (grow, pt)) in g.chunks(c).zip(points.chunks(3)).enumerate() {
        let st = point_stencils(pt, [d, h, w]);
        for (off, _, bits) in corners(&st, [d, h, w]) {
            // dot of upstream gradient with the corner's feature vector
            let val: T = (0..c).map(|ch| grow[ch] * gv[ch * plane + off]).sum();
            for ax in 0..3 {
                if st[ax].slope == T::zero() {
                    continue;
                }
                let mut dw = if bits[ax] { T::one() } else { -T::one() };
                for other in (0..3).filter(|&o| o != ax) {
                    dw *= if bits[other] { st[other].t } else { T::one() - st[other].t };
                }
                gp[pi * 3 + ax] += val * dw * st[ax].slope;
            }
        }
    }
}

/// Per axis, for each output index, the source taps `(index, weight)`.
fn resample_maps<T: Scalar>(input: &[usize], size: [usize; 3], mode: UpsampleMode) -> Vec<Vec<[(usize, T); 2]>> {
    (0..3)
        .map(|ax| {
            let (n_in, n_out) = (input[ax], size[ax]);
            let ratio = n_in as f64 / n_out as f64;
            (0..n_out)
                .map(|o| match mode {
                    UpsampleMode::Nearest => {
                        let i = (((o as f64 + 0.5) * ratio).floor() as usize).min(n_in - 1);
                        [(i, T::one()), (i, T::zero())]
                    }
                    UpsampleMode::Trilinear => {
                        let src = ((o as f64 + 0.5) * ratio - 0.5).clamp(0.0, (n_in - 1) as f64);
                        let i0 = src.floor() as usize;
                        let i1 = (i0 + 1).min(n_in - 1);
                        let t = src - i0 as f64;
                        [(i0, T::of(1.0 - t)), (i1, T::of(t))]
                    }
                })
                .collect()
        })
        .collect()
}

fn visit_resample<T: Scalar>(maps: &[Vec<[(usize, T); 2]>], input: &[usize], size: [usize; 3], mut f: impl FnMut(usize, usize, T)) {
    let (ih, iw) = (input[1], input[2]);
    for od in 0..size[0] {
        for &(id, wd) in &maps[0][od] {
            if wd == T::zero() {
                continue;
            }
            for oh in 0..size[1] {
                for &(ihh, wh) in &maps[1][oh] {
                    if wh == T::zero() {
                        continue;
                    }
                    let wdh = wd * wh;
                    let o_row = (od * size[1] + oh) * size[2];
                    let i_row = (id * ih + ihh) * iw;
                    for ow in 0..size[2] {
                        for &(iww, ww) in &maps[2][ow] {
                            if ww != T::zero() {
                                f(o_row + ow, i_row + iww, wdh * ww);
                            }
                        }
                    }
                }
            }
        }
    }
}

pub(crate) fn upsample_backward<T: Scalar>(gi: &mut [T], g: &[T], in_shape: &[usize], out_shape: &[usize], mode: UpsampleMode) {
    let size = [out_shape[2], out_shape[3], out_shape[4]];
    let maps = resample_maps::<T>(&in_shape[2..], size, mode);
    let planes = in_shape[0] * in_shape[1];
    let in_plane: usize = in_shape[2..].iter().product();
    let out_plane: usize = size.iter().product();
    for pl in 0..planes {
        let src = &g[pl * out_plane..(pl + 1) * out_plane];
        let dst = &mut gi[pl * in_plane..(pl + 1) * in_plane];
        visit_resample(&maps, &in_shape[2..], size, |o, i, wt| dst[i] += wt * src[o]);
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample(grid: Tensor<f64>, pts: Vec<f64>) -> Tensor<f64> {
        let mut tape = Tape::<f64>::new();
        let p = pts.len() / 3;
        let g = tape.leaf(grid);
        let q = tape.leaf(Tensor::new([p, 3], pts).unwrap());
        let y = tape.trilinear_sample(g, q).unwrap();
        tape.value(y).clone()
    }

    #[test]
    fn voxel_center_returns_voxel() {
        let grid = Tensor::from_fn([2, 3, 4, 5], |i| (i[0] * 1000 + i[1] * 100 + i[2] * 10 + i[3]) as f64);
        let pt = vec![cell_center(0, 3), cell_center(0, 4), cell_center(0, 5)];
        let y = sample(grid.clone(), pt);
        assert!((y.data()[0] - 0.0).abs() < 1e-12);
        assert!((y.data()[1] - 1000.0).abs() < 1e-9);
        let pt = vec![cell_center(2, 3), cell_center(1, 4), cell_center(3, 5)];
        let y = sample(grid, pt);
        assert!((y.data()[0] - 213.0).abs() < 1e-9);
    }

    #[test]
    fn center_of_2x2x2_is_mean() {
        let grid = Tensor::new([1, 2, 2, 2], (1..=8).map(f64::from).collect()).unwrap();
        let y = sample(grid, vec![0.0, 0.0, 0.0]);
        assert!((y.data()[0] - 4.5).abs() < 1e-12);
    }

    #[test]
    fn out_of_range_points_clamp() {
        let grid = Tensor::new([1, 1, 1, 2], vec![1.0, 3.0]).unwrap();
        let y = sample(grid, vec![0.0, 0.0, -5.0, 0.0, 0.0, 5.0]);
        assert_eq!(y.data(), &[1.0, 3.0]);
    }

    #[test]
    fn zero_extent_grid_rejected() {
        let mut tape = Tape::<f32>::new();
        let g = tape.leaf(Tensor::zeros([1, 0, 2, 2]));
        let q = tape.leaf(Tensor::zeros([1, 3]));
        assert!(matches!(tape.trilinear_sample(g, q), Err(TensorError::EmptyGrid { .. })));
    }

    #[test]
    fn upsample_constant_stays_constant() {
        let mut tape = Tape::<f64>::new();
        let x = tape.leaf(Tensor::full([1, 2, 2, 3, 3], 0.7));
        for mode in [UpsampleMode::Nearest, UpsampleMode::Trilinear] {
            let y = tape.upsample(x, [4, 6, 5], mode).unwrap();
            assert_eq!(tape.shape(y), &[1, 2, 4, 6, 5]);
            assert!(tape.value(y).data().iter().all(|&v| (v - 0.7).abs() < 1e-12));
        }
    }

    #[test]
    fn nearest_doubling_repeats() {
        let mut tape = Tape::<f32>::new();
        let x = tape.leaf(Tensor::new([1, 1, 1, 1, 2], vec![1.0, 2.0]).unwrap());
        let y = tape.upsample(x, [1, 1, 4], UpsampleMode::Nearest).unwrap();
        assert_eq!(tape.value(y).data(), &[1.0, 1.0, 2.0, 2.0]);
    }
}
