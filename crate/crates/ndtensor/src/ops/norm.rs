use crate::error::{dim_err, Result, TensorError};
use crate::tape::Op;
use crate::{Scalar, Tape, Tensor, Var};

impl<T: Scalar> Tape<T> {
    /// Layer normalization over the last axis (population variance).
    pub fn layer_norm(&mut self, input: Var, normalized_extent: usize, gamma: Var, beta: Var, eps: T) -> Result<Var> {
        self.check(input)?;
        self.check(gamma)?;
        self.check(beta)?;
        if normalized_extent == 0 {
            return Err(TensorError::EmptyAxis { op: "layer_norm" });
        }
        if eps <= T::zero() {
            return Err(TensorError::InvalidArgument {
                op: "layer_norm",
                detail: "eps must be positive".into(),
            });
        }
        let shape = self.shape(input).to_vec();
        if shape.last() != Some(&normalized_extent) {
            return Err(dim_err("layer_norm", "last", format!("{shape:?} vs normalized extent {normalized_extent}")));
        }
        for p in [gamma, beta] {
            if self.shape(p) != [normalized_extent] {
                return Err(dim_err("layer_norm", "last", format!("affine parameter {:?}", self.shape(p))));
            }
        }
        let n = normalized_extent;
        let nf = T::of(n as f64);
        let (x, gv, bv) = (self.value(input).data(), self.value(gamma).data(), self.value(beta).data());
        let rows = x.len() / n;
        let mut xhat = Vec::with_capacity(x.len());
        let mut rstd = Vec::with_capacity(rows);
        let mut out = Vec::with_capacity(x.len());
        for row in x.chunks(n) {
            let mean = row.iter().copied().sum::<T>() / nf;
            let var = row.iter().map(|&v| (v - mean) * (v - mean)).sum::<T>() / nf;
            let r = T::one() / (var + eps).sqrt();
            rstd.push(r);
            for ((&v, &g), &b) in row.iter().zip(gv).zip(bv) {
                let h = (v - mean) * r;
                xhat.push(h);
                out.push(g * h + b);
            }
        }
        let out = Tensor::new(shape, out)?;
        self.push(
            "layer_norm",
            out,
            Op::LayerNorm {
                input,
                gamma,
                beta,
                xhat,
                rstd,
            },
        )
    }

    /// Numerically stable softmax along `axis` (the axis max is subtracted
    /// before exponentiation).
    pub fn softmax(&mut self, input: Var, axis: usize) -> Result<Var> {
        self.check(input)?;
        let shape = self.shape(input).to_vec();
        if axis >= shape.len() {
            return Err(TensorError::InvalidArgument {
                op: "softmax",
                detail: format!("axis {axis} out of range for {shape:?}"),
            });
        }
        let (outer, len, inner) = split(&shape, axis);
        let x = self.value(input).data();
        let mut out = vec![T::zero(); x.len()];
        for o in 0..outer {
            for i in 0..inner {
                let at = |k: usize| (o * len + k) * inner + i;
                let max = (0..len).map(|k| x[at(k)]).fold(T::neg_infinity(), T::max);
                let mut total = T::zero();
                for k in 0..len {
                    let e = (x[at(k)] - max).exp();
                    out[at(k)] = e;
                    total += e;
                }
                for k in 0..len {
                    out[at(k)] /= total;
                }
            }
        }
        let out = Tensor::new(shape, out)?;
        self.push("softmax", out, Op::Softmax { input, axis })
    }
}

fn split(shape: &[usize], axis: usize) -> (usize, usize, usize) {
    (
        shape[..axis].iter().product(),
        shape[axis],
        shape[axis + 1..].iter().product(),
    )
}

pub(crate) fn layer_norm_backward_input<T: Scalar>(gx: &mut [T], g: &[T], gamma: &[T], xhat: &[T], rstd: &[T]) {
    let n = gamma.len();
    let nf = T::of(n as f64);
    for (r, &rs) in rstd.iter().enumerate() {
        let off = r * n;
        let (gr, hr) = (&g[off..off + n], &xhat[off..off + n]);
        let mut sum_gh = T::zero();
        let mut sum_ghx = T::zero();
        for k in 0..n {
            let gh = gr[k] * gamma[k];
            sum_gh += gh;
            sum_ghx += gh * hr[k];
        }
        for k in 0..n {
            let gh = gr[k] * gamma[k];
            gx[off + k] += rs / nf * (nf * gh - sum_gh - hr[k] * sum_ghx);
        }
    }
}

pub(crate) fn layer_norm_backward_gamma<T: Scalar>(gg: &mut [T], g: &[T], xhat: &[T]) {
    let n = gg.len();
    for (gr, hr) in g.chunks(n).zip(xhat.chunks(n)) {
        for k in 0..n {
            gg[k] += gr[k] * hr[k];
        }
    }
}

pub(crate) fn softmax_backward<T: Scalar>(gx: &mut [T], g: &[T], y: &Tensor<T>, axis: usize) {
    let (outer, len, inner) = split(y.shape(), axis);
    let yv = y.data();
    for o in 0..outer {
        for i in 0..inner {
            let at = |k: usize| (o * len + k) * inner + i;
            let dot: T = (0..len).map(|k| g[at(k)] * yv[at(k)]).sum();
            for k in 0..len {
                gx[at(k)] += yv[at(k)] * (g[at(k)] - dot);
            }
        }
    }
}
