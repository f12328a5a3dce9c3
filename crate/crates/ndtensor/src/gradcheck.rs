//! Central finite-difference gradient checking in `f64`.
//!
//! The oracle only ever evaluates forward passes, so it is independent of
//! every backward rule it validates.

use crate::error::Result;
use crate::{Tape, Tensor, Var};

#[derive(Clone, Copy, Debug)]
pub struct GradCheck {
    /// Central-difference half step.
    pub step: f64,
    /// Upper bound on probed elements per input; evenly strided when exceeded.
    pub max_probes: Option<usize>,
}

impl Default for GradCheck {
    fn default() -> Self {
        Self {
            step: 1e-3,
            max_probes: None,
        }
    }
}

#[derive(Clone, Debug)]
pub struct GradCheckReport {
    /// Relative error `‖analytic − numeric‖ / max(‖analytic‖, ‖numeric‖)` per input.
    pub relative_errors: Vec<f64>,
}

impl GradCheckReport {
    pub fn max_error(&self) -> f64 {
        self.relative_errors.iter().copied().fold(0.0, f64::max)
    }
}

/// Compares backward-pass gradients of the scalar built by `f` against
/// central differences, for every tensor in `inputs`.
pub fn check_gradients<F>(inputs: &[Tensor<f64>], cfg: GradCheck, f: F) -> Result<GradCheckReport>
where
    F: Fn(&mut Tape<f64>, &[Var]) -> Result<Var>,
{
    let mut tape = Tape::<f64>::new();
    let vars: Vec<Var> = inputs.iter().map(|t| tape.param(t.clone())).collect();
    let loss = f(&mut tape, &vars)?;
    tape.backward(loss)?;
    let analytic: Vec<Tensor<f64>> = vars
        .iter()
        .zip(inputs)
        .map(|(&v, t)| tape.grad(v).unwrap_or_else(|| Tensor::zeros(t.shape().to_vec())))
        .collect();

    let eval = |perturbed: &[Tensor<f64>]| -> Result<f64> {
        let mut tape = Tape::<f64>::new();
        let vars: Vec<Var> = perturbed.iter().map(|t| tape.param(t.clone())).collect();
        let loss = f(&mut tape, &vars)?;
        Ok(tape.value(loss).item())
    };

    let mut work: Vec<Tensor<f64>> = inputs.to_vec();
    let mut relative_errors = Vec::with_capacity(inputs.len());
    for (which, input) in inputs.iter().enumerate() {
        let n = input.numel();
        let probes: Vec<usize> = match cfg.max_probes {
            Some(k) if k < n => (0..k).map(|j| j * n / k).collect(),
            _ => (0..n).collect(),
        };
        let (mut diff2, mut a2, mut n2) = (0.0, 0.0, 0.0);
        for &i in &probes {
            let orig = input.data()[i];
            work[which].data_mut()[i] = orig + cfg.step;
            let plus = eval(&work)?;
            work[which].data_mut()[i] = orig - cfg.step;
            let minus = eval(&work)?;
            work[which].data_mut()[i] = orig;
            let numeric = (plus - minus) / (2.0 * cfg.step);
            let a = analytic[which].data()[i];
            diff2 += (a - numeric).powi(2);
            a2 += a * a;
            n2 += numeric * numeric;
        }
        // gradients below the floor are compared in absolute terms
        let scale = a2.sqrt().max(n2.sqrt()).max(1e-7);
        relative_errors.push(diff2.sqrt() / scale);
    }
    Ok(GradCheckReport { relative_errors })
}

/// Fixed pseudo-random weights in `[-1, 1]`, for reducing a tensor output to
/// a scalar without symmetric cancellation.
pub fn probe_weights(shape: &[usize], seed: u64) -> Tensor<f64> {
    let mut state = seed ^ 0x9E37_79B9_7F4A_7C15;
    Tensor::from_fn(shape.to_vec(), |_| {
        // splitmix64
        state = state.wrapping_add(0x9E37_79B9_7F4A_7C15);
        let mut z = state;
        z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
        z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
        z ^= z >> 31;
        (z >> 11) as f64 / (1u64 << 53) as f64 * 2.0 - 1.0
    })
}

/// `sum(out ⊙ w)` with [`probe_weights`].
pub fn probe_loss(tape: &mut Tape<f64>, out: Var, seed: u64) -> Result<Var> {
    let w = tape.leaf(probe_weights(tape.shape(out), seed));
    let prod = tape.mul(out, w)?;
    tape.sum(prod)
}
