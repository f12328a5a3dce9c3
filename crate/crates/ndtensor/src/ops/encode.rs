use crate::error::{Result, TensorError};
use crate::tape::Op;
use crate::{Scalar, Tape, Tensor, Var};

impl<T: Scalar> Tape<T> {
    /// Sinusoidal expansion with learnable frequencies.
    ///
    /// For `input[..., k]` and `omegas[R]` the output is `[..., 2·R·k]`: each
    /// component `x` expands to `cos(ω₁x), sin(ω₁x), …, cos(ω_R x), sin(ω_R x)`,
    /// components laid out one after another.
    pub fn fourier_features(&mut self, input: Var, omegas: Var) -> Result<Var> {
        self.check(input)?;
        self.check(omegas)?;
        let ws = self.shape(omegas);
        if ws.len() != 1 {
            return Err(TensorError::Rank {
                op: "fourier_features",
                expected: "1 (frequencies)".into(),
                got: ws.to_vec(),
            });
        }
        let xs = self.shape(input).to_vec();
        if xs.is_empty() {
            return Err(TensorError::Rank {
                op: "fourier_features",
                expected: ">= 1".into(),
                got: xs,
            });
        }
        let (x, w) = (self.value(input).data(), self.value(omegas).data());
        let mut out = Vec::with_capacity(x.len() * 2 * w.len());
        for &xv in x {
            for &wv in w {
                let (s, c) = (wv * xv).sin_cos();
                out.push(c);
                out.push(s);
            }
        }
        let mut shape = xs;
        *shape.last_mut().unwrap() *= 2 * w.len();
        let out = Tensor::new(shape, out)?;
        self.push("fourier_features", out, Op::FourierFeatures { input, omegas })
    }
}

/// Gradients from the recorded `(cos, sin)` pairs in `out`.
pub(crate) fn fourier_backward<T: Scalar>(
    mut gx: Option<&mut [T]>,
    mut gw: Option<&mut [T]>,
    g: &[T],
    x: &[T],
    w: &[T],
    out: &[T],
) {
    let r = w.len();
    for (j, &xv) in x.iter().enumerate() {
        let gr = &g[j * 2 * r..(j + 1) * 2 * r];
        let cs = &out[j * 2 * r..(j + 1) * 2 * r];
        let mut acc = T::zero();
        for (i, &wv) in w.iter().enumerate() {
            let d = gr[2 * i + 1] * cs[2 * i] - gr[2 * i] * cs[2 * i + 1];
            acc += wv * d;
            if let Some(gw) = gw.as_deref_mut() {
                gw[i] += xv * d;
            }
        }
        if let Some(gx) = gx.as_deref_mut() {
            gx[j] += acc;
        }
    }
}
