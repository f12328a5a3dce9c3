//! Direct 3D convolutions over `[N, C, D, H, W]` volumes.
//!
//! Both the dense and the depthwise variants are built from the same
//! single-plane kernels: one input channel volume, one kernel, one output
//! channel volume.

use crate::error::{dim_err, Result, TensorError};
use crate::tape::Op;
use crate::{Scalar, Tape, Tensor, Var};

const AXES: [&str; 3] = ["depth", "height", "width"];

/// Spatial layout shared by a single input plane, kernel and output plane.
#[derive(Clone, Copy, Debug)]
struct PlaneGeo {
    input: [usize; 3],
    kernel: [usize; 3],
    output: [usize; 3],
    stride: [usize; 3],
    padding: [usize; 3],
}

impl PlaneGeo {
    fn new(input: [usize; 3], kernel: [usize; 3], stride: [usize; 3], padding: [usize; 3], op: &'static str) -> Result<Self> {
        let mut output = [0; 3];
        for ax in 0..3 {
            if stride[ax] == 0 {
                return Err(TensorError::InvalidArgument {
                    op,
                    detail: format!("stride along {} must be >= 1", AXES[ax]),
                });
            }
            let padded = input[ax] + 2 * padding[ax];
            if kernel[ax] == 0 || kernel[ax] > padded {
                return Err(dim_err(
                    op,
                    AXES[ax],
                    format!("kernel extent {} vs padded input extent {padded}", kernel[ax]),
                ));
            }
            output[ax] = (padded - kernel[ax]) / stride[ax] + 1;
        }
        Ok(Self {
            input,
            kernel,
            output,
            stride,
            padding,
        })
    }

    fn in_size(&self) -> usize {
        self.input.iter().product()
    }

    fn out_size(&self) -> usize {
        self.output.iter().product()
    }

    fn kernel_size(&self) -> usize {
        self.kernel.iter().product()
    }

    /// Output indices `o` along `ax` for which `o*stride + k - pad` is in bounds.
    fn valid(&self, ax: usize, k: usize) -> (usize, usize) {
        let (s, p, n, out) = (self.stride[ax], self.padding[ax], self.input[ax], self.output[ax]);
        let lo = if p > k { (p - k).div_ceil(s) } else { 0 };
        if n + p < k + 1 {
            return (0, 0);
        }
        let hi = ((n - 1 + p - k) / s + 1).min(out);
        (lo.min(hi), hi)
    }

    /// Visits every (output offset, input offset, kernel offset) triple.
    /// A single tap with unit stride and no padding maps each input voxel to
    /// the output voxel at the same offset.
    fn is_pointwise(&self) -> bool {
        self.kernel == [1, 1, 1] && self.stride == [1, 1, 1] && self.padding == [0, 0, 0]
    }

    #[inline]
    fn for_each_tap(&self, mut f: impl FnMut(usize, std::ops::Range<usize>, usize, usize)) {
        let [_, ih, iw] = self.input;
        let [_, oh, ow] = self.output;
        let [kd, kh, kw] = self.kernel;
        let [sd, sh, sw] = self.stride;
        let [pd, ph, pw] = self.padding;
        for a in 0..kd {
            let (d_lo, d_hi) = self.valid(0, a);
            for b in 0..kh {
                let (h_lo, h_hi) = self.valid(1, b);
                for c in 0..kw {
                    let (w_lo, w_hi) = self.valid(2, c);
                    if w_lo >= w_hi {
                        continue;
                    }
                    let k_off = (a * kh + b) * kw + c;
                    for od in d_lo..d_hi {
                        let id = od * sd + a - pd;
                        for oh_ in h_lo..h_hi {
                            let ih_ = oh_ * sh + b - ph;
                            let out_row = (od * oh + oh_) * ow;
                            let in_row = (id * ih + ih_) * iw;
                            // input column of output column w_lo
                            let in_first = in_row + (w_lo * sw + c - pw);
                            f(k_off, w_lo..w_hi, out_row, in_first);
                        }
                    }
                }
            }
        }
    }
}

fn plane_forward<T: Scalar>(geo: &PlaneGeo, out: &mut [T], inp: &[T], kernel: &[T]) {
    if geo.is_pointwise() {
        let wv = kernel[0];
        out.iter_mut().zip(inp).for_each(|(o, &i)| *o += wv * i);
        return;
    }
    let sw = geo.stride[2];
    geo.for_each_tap(|k, cols, out_row, in_first| {
        let wv = kernel[k];
        let o = &mut out[out_row + cols.start..out_row + cols.end];
        if sw == 1 {
            let i = &inp[in_first..in_first + o.len()];
            for (ov, &iv) in o.iter_mut().zip(i) {
                *ov += wv * iv;
            }
        } else {
            for (j, ov) in o.iter_mut().enumerate() {
                *ov += wv * inp[in_first + j * sw];
            }
        }
    });
}

fn plane_backward_input<T: Scalar>(geo: &PlaneGeo, gin: &mut [T], gout: &[T], kernel: &[T]) {
    if geo.is_pointwise() {
        let wv = kernel[0];
        gin.iter_mut().zip(gout).for_each(|(gi, &g)| *gi += wv * g);
        return;
    }
    let sw = geo.stride[2];
    geo.for_each_tap(|k, cols, out_row, in_first| {
        let wv = kernel[k];
        for (j, &gv) in gout[out_row + cols.start..out_row + cols.end].iter().enumerate() {
            gin[in_first + j * sw] += wv * gv;
        }
    });
}

fn plane_backward_kernel<T: Scalar>(geo: &PlaneGeo, gk: &mut [T], gout: &[T], inp: &[T]) {
    if geo.is_pointwise() {
        gk[0] += dot(gout, inp);
        return;
    }
    let sw = geo.stride[2];
    geo.for_each_tap(|k, cols, out_row, in_first| {
        let mut acc = T::zero();
        for (j, &gv) in gout[out_row + cols.start..out_row + cols.end].iter().enumerate() {
            acc += gv * inp[in_first + j * sw];
        }
        gk[k] += acc;
    });
}

/// Batch/channel view used for per-channel bias gradients.
/// Dot product with eight interleaved partial sums.
fn dot<T: Scalar>(x: &[T], y: &[T]) -> T {
    let mut acc = [T::zero(); 8];
    let (xc, yc) = (x.chunks_exact(8), y.chunks_exact(8));
    let mut tail = T::zero();
    for (&a, &b) in xc.remainder().iter().zip(yc.remainder()) {
        tail += a * b;
    }
    for (a, b) in xc.zip(yc) {
        for l in 0..8 {
            acc[l] += a[l] * b[l];
        }
    }
    acc.iter().fold(tail, |s, &v| s + v)
}

pub(crate) struct ChannelView {
    batch: usize,
    channels: usize,
    plane: usize,
}

pub(crate) fn bias_backward<T: Scalar>(view: &ChannelView, gb: &mut [T], g: &[T]) {
    for n in 0..view.batch {
        for c in 0..view.channels {
            let off = (n * view.channels + c) * view.plane;
            gb[c] += g[off..off + view.plane].iter().copied().sum::<T>();
        }
    }
}

fn dims5(op: &'static str, what: &str, shape: &[usize]) -> Result<[usize; 5]> {
    shape.try_into().map_err(|_| TensorError::Rank {
        op,
        expected: format!("5 ({what})"),
        got: shape.to_vec(),
    })
}

pub(crate) struct ConvGeometry {
    batch: usize,
    c_in: usize,
    c_out: usize,
    plane: PlaneGeo,
}

impl ConvGeometry {
    pub(crate) fn new(input: &[usize], weight: &[usize], stride: [usize; 3], padding: [usize; 3]) -> Result<Self> {
        let [n, ci, d, h, w] = dims5("conv3d", "input", input)?;
        let [co, wci, kd, kh, kw] = dims5("conv3d", "weight", weight)?;
        if wci != ci {
            return Err(dim_err("conv3d", "channel", format!("input has {ci} channels, weight expects {wci}")));
        }
        let plane = PlaneGeo::new([d, h, w], [kd, kh, kw], stride, padding, "conv3d")?;
        Ok(Self {
            batch: n,
            c_in: ci,
            c_out: co,
            plane,
        })
    }

    pub(crate) fn channel_view(&self) -> ChannelView {
        ChannelView {
            batch: self.batch,
            channels: self.c_out,
            plane: self.plane.out_size(),
        }
    }
}

pub(crate) fn conv3d_backward_input<T: Scalar>(geo: &ConvGeometry, gx: &mut [T], g: &[T], w: &[T]) {
    let (isz, osz, ksz) = (geo.plane.in_size(), geo.plane.out_size(), geo.plane.kernel_size());
    for n in 0..geo.batch {
        for co in 0..geo.c_out {
            let gout = &g[(n * geo.c_out + co) * osz..][..osz];
            for ci in 0..geo.c_in {
                let k = &w[(co * geo.c_in + ci) * ksz..][..ksz];
                let gin = &mut gx[(n * geo.c_in + ci) * isz..][..isz];
                plane_backward_input(&geo.plane, gin, gout, k);
            }
        }
    }
}

pub(crate) fn conv3d_backward_weight<T: Scalar>(geo: &ConvGeometry, gw: &mut [T], g: &[T], x: &[T]) {
    let (isz, osz, ksz) = (geo.plane.in_size(), geo.plane.out_size(), geo.plane.kernel_size());
    for n in 0..geo.batch {
        for co in 0..geo.c_out {
            let gout = &g[(n * geo.c_out + co) * osz..][..osz];
            for ci in 0..geo.c_in {
                let inp = &x[(n * geo.c_in + ci) * isz..][..isz];
                let gk = &mut gw[(co * geo.c_in + ci) * ksz..][..ksz];
                plane_backward_kernel(&geo.plane, gk, gout, inp);
            }
        }
    }
}

pub(crate) struct DepthwiseGeometry {
    batch: usize,
    channels: usize,
    plane: PlaneGeo,
}

impl DepthwiseGeometry {
    pub(crate) fn new(input: &[usize], weight: &[usize]) -> Result<Self> {
        let [n, c, d, h, w] = dims5("depthwise_conv3d", "input", input)?;
        let [wc, one, kd, kh, kw] = dims5("depthwise_conv3d", "weight", weight)?;
        if wc != c || one != 1 {
            return Err(dim_err(
                "depthwise_conv3d",
                "channel",
                format!("input has {c} channels, weight shape {weight:?}"),
            ));
        }
        let kernel = [kd, kh, kw];
        if let Some(ax) = (0..3).find(|&ax| kernel[ax] % 2 == 0) {
            return Err(TensorError::UnsupportedKernel {
                op: "depthwise_conv3d",
                detail: format!("even extent {} along {} cannot be same-padded", kernel[ax], AXES[ax]),
            });
        }
        let padding = kernel.map(|k| (k - 1) / 2);
        let plane = PlaneGeo::new([d, h, w], kernel, [1, 1, 1], padding, "depthwise_conv3d")?;
        Ok(Self {
            batch: n,
            channels: c,
            plane,
        })
    }

    pub(crate) fn channel_view(&self) -> ChannelView {
        ChannelView {
            batch: self.batch,
            channels: self.channels,
            plane: self.plane.out_size(),
        }
    }
}

pub(crate) fn depthwise_backward_input<T: Scalar>(geo: &DepthwiseGeometry, gx: &mut [T], g: &[T], w: &[T]) {
    let (sz, ksz) = (geo.plane.in_size(), geo.plane.kernel_size());
    for n in 0..geo.batch {
        for c in 0..geo.channels {
            let off = (n * geo.channels + c) * sz;
            plane_backward_input(&geo.plane, &mut gx[off..off + sz], &g[off..off + sz], &w[c * ksz..(c + 1) * ksz]);
        }
    }
}

pub(crate) fn depthwise_backward_weight<T: Scalar>(geo: &DepthwiseGeometry, gw: &mut [T], g: &[T], x: &[T]) {
    let (sz, ksz) = (geo.plane.in_size(), geo.plane.kernel_size());
    for n in 0..geo.batch {
        for c in 0..geo.channels {
            let off = (n * geo.channels + c) * sz;
            plane_backward_kernel(&geo.plane, &mut gw[c * ksz..(c + 1) * ksz], &g[off..off + sz], &x[off..off + sz]);
        }
    }
}

fn check_bias<T: Scalar>(tape: &Tape<T>, op: &'static str, bias: Option<Var>, channels: usize) -> Result<()> {
    if let Some(b) = bias {
        tape.check(b)?;
        if tape.shape(b) != [channels] {
            return Err(dim_err(op, "channel", format!("bias {:?} for {channels} output channels", tape.shape(b))));
        }
    }
    Ok(())
}

fn fill_bias<T: Scalar>(out: &mut [T], bias: Option<&[T]>, batch: usize, channels: usize, plane: usize) {
    if let Some(b) = bias {
        for n in 0..batch {
            for c in 0..channels {
                let off = (n * channels + c) * plane;
                out[off..off + plane].iter_mut().for_each(|v| *v = b[c]);
            }
        }
    }
}

impl<T: Scalar> Tape<T> {
    /// Dense 3D convolution, `input[N,Ci,D,H,W] * weight[Co,Ci,kd,kh,kw]`,
    /// zero padding, optional per-output-channel bias.
    pub fn conv3d(&mut self, input: Var, weight: Var, bias: Option<Var>, stride: [usize; 3], padding: [usize; 3]) -> Result<Var> {
        self.check(input)?;
        self.check(weight)?;
        let geo = ConvGeometry::new(self.shape(input), self.shape(weight), stride, padding)?;
        check_bias(self, "conv3d", bias, geo.c_out)?;
        let (isz, osz, ksz) = (geo.plane.in_size(), geo.plane.out_size(), geo.plane.kernel_size());
        let mut out = vec![T::zero(); geo.batch * geo.c_out * osz];
        fill_bias(&mut out, bias.map(|b| self.value(b).data()), geo.batch, geo.c_out, osz);
        let (x, w) = (self.value(input).data(), self.value(weight).data());
        for n in 0..geo.batch {
            for co in 0..geo.c_out {
                let o = &mut out[(n * geo.c_out + co) * osz..][..osz];
                for ci in 0..geo.c_in {
                    let inp = &x[(n * geo.c_in + ci) * isz..][..isz];
                    let k = &w[(co * geo.c_in + ci) * ksz..][..ksz];
                    plane_forward(&geo.plane, o, inp, k);
                }
            }
        }
        self.add_macs((geo.batch * geo.c_out * geo.c_in * osz * ksz) as u64);
        let [od, oh, ow] = geo.plane.output;
        let out = Tensor::new([geo.batch, geo.c_out, od, oh, ow], out)?;
        self.push(
            "conv3d",
            out,
            Op::Conv3d {
                input,
                weight,
                bias,
                stride,
                padding,
            },
        )
    }

    /// Per-channel 3D convolution with "same" zero padding; `weight` is
    /// `[C, 1, kd, kh, kw]` with odd extents.
    pub fn depthwise_conv3d(&mut self, input: Var, weight: Var, bias: Option<Var>) -> Result<Var> {
        self.check(input)?;
        self.check(weight)?;
        let geo = DepthwiseGeometry::new(self.shape(input), self.shape(weight))?;
        check_bias(self, "depthwise_conv3d", bias, geo.channels)?;
        let (sz, ksz) = (geo.plane.in_size(), geo.plane.kernel_size());
        let mut out = vec![T::zero(); geo.batch * geo.channels * sz];
        fill_bias(&mut out, bias.map(|b| self.value(b).data()), geo.batch, geo.channels, sz);
        let (x, w) = (self.value(input).data(), self.value(weight).data());
        for n in 0..geo.batch {
            for c in 0..geo.channels {
                let off = (n * geo.channels + c) * sz;
                plane_forward(&geo.plane, &mut out[off..off + sz], &x[off..off + sz], &w[c * ksz..(c + 1) * ksz]);
            }
        }
        self.add_macs((geo.batch * geo.channels * sz * ksz) as u64);
        let out = Tensor::new(self.shape(input).to_vec(), out)?;
        self.push("depthwise_conv3d", out, Op::DepthwiseConv3d { input, weight, bias })
    }
}
