use crate::error::{dim_err, Result};
use crate::tape::Op;
use crate::{Scalar, Tape, Tensor, Var};

const GELU_K: f64 = 0.797_884_560_802_865_4; // sqrt(2/pi)
const GELU_C: f64 = 0.044_715;

impl<T: Scalar> Tape<T> {
    fn same_shape(&self, op: &'static str, a: Var, b: Var) -> Result<()> {
        self.check(a)?;
        self.check(b)?;
        let (sa, sb) = (self.shape(a), self.shape(b));
        if sa != sb {
            return Err(dim_err(op, "all", format!("{sa:?} vs {sb:?}")));
        }
        Ok(())
    }

    fn zip_with(&self, a: Var, b: Var, f: impl Fn(T, T) -> T) -> Tensor<T> {
        let (av, bv) = (self.value(a), self.value(b));
        let data = av.data().iter().zip(bv.data()).map(|(&x, &y)| f(x, y)).collect();
        Tensor::new(av.shape().to_vec(), data).expect("same shape")
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("add", a, b)?;
        let out = self.zip_with(a, b, |x, y| x + y);
        self.push("add", out, Op::Add(a, b))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("sub", a, b)?;
        let out = self.zip_with(a, b, |x, y| x - y);
        self.push("sub", out, Op::Sub(a, b))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("mul", a, b)?;
        let out = self.zip_with(a, b, |x, y| x * y);
        self.push("mul", out, Op::Mul(a, b))
    }

    pub fn scale(&mut self, a: Var, c: T) -> Result<Var> {
        self.check(a)?;
        let out = self.value(a).map(|x| x * c);
        self.push("scale", out, Op::Scale(a, c))
    }

    /// `x[..., n] + b[n]`, broadcasting the bias over all leading axes.
    pub fn add_bias(&mut self, x: Var, b: Var) -> Result<Var> {
        self.check(x)?;
        self.check(b)?;
        let (xs, bs) = (self.shape(x), self.shape(b));
        let n = *xs.last().unwrap_or(&1);
        if bs.len() != 1 || bs[0] != n || xs.is_empty() {
            return Err(dim_err("add_bias", "last", format!("input {xs:?} with bias {bs:?}")));
        }
        let bias = self.value(b).data().to_vec();
        let mut out = self.value(x).clone();
        for row in out.data_mut().chunks_mut(n) {
            for (o, &bv) in row.iter_mut().zip(&bias) {
                *o += bv;
            }
        }
        self.push("add_bias", out, Op::AddBias(x, b))
    }

    pub fn sum(&mut self, a: Var) -> Result<Var> {
        self.check(a)?;
        let out = Tensor::scalar(self.value(a).sum());
        self.push("sum", out, Op::Sum(a))
    }

    pub fn mean(&mut self, a: Var) -> Result<Var> {
        self.check(a)?;
        let v = self.value(a);
        let out = Tensor::scalar(v.sum() / T::of(v.numel() as f64));
        self.push("mean", out, Op::Mean(a))
    }

    /// Elementwise square root. The gradient at exactly zero is taken as 0.
    pub fn sqrt(&mut self, a: Var) -> Result<Var> {
        self.check(a)?;
        let out = self.value(a).map(|x| x.sqrt());
        self.push("sqrt", out, Op::Sqrt(a))
    }

    /// Tanh-approximated GELU.
    pub fn gelu(&mut self, a: Var) -> Result<Var> {
        self.check(a)?;
        let out = self.value(a).map(gelu);
        self.push("gelu", out, Op::Gelu(a))
    }
}

pub fn gelu<T: Scalar>(x: T) -> T {
    let half = T::of(0.5);
    let inner = T::of(GELU_K) * (x + T::of(GELU_C) * x * x * x);
    half * x * (T::one() + inner.tanh())
}

pub fn gelu_grad<T: Scalar>(x: T) -> T {
    let half = T::of(0.5);
    let k = T::of(GELU_K);
    let c = T::of(GELU_C);
    let t = (k * (x + c * x * x * x)).tanh();
    let dinner = k * (T::one() + T::of(3.0) * c * x * x);
    half * (T::one() + t) + half * x * (T::one() - t * t) * dinner
}

pub(crate) fn axpy<T: Scalar>(dst: &mut [T], src: &[T], alpha: T) {
    for (d, &s) in dst.iter_mut().zip(src) {
        *d += alpha * s;
    }
}

pub(crate) fn mul_acc<T: Scalar>(dst: &mut [T], g: &[T], other: &[T]) {
    for ((d, &gv), &o) in dst.iter_mut().zip(g).zip(other) {
        *d += gv * o;
    }
}

/// Sums `g` over every leading axis into a last-axis bias gradient.
pub(crate) fn bias_backward<T: Scalar>(gb: &mut [T], g: &[T]) {
    let n = gb.len();
    for row in g.chunks(n) {
        for (d, &v) in gb.iter_mut().zip(row) {
            *d += v;
        }
    }
}

pub(crate) fn sqrt_backward<T: Scalar>(ga: &mut [T], g: &[T], out: &[T]) {
    for ((d, &gv), &y) in ga.iter_mut().zip(g).zip(out) {
        if y > T::zero() {
            *d += gv * T::of(0.5) / y;
        }
    }
}

pub(crate) fn gelu_backward<T: Scalar>(ga: &mut [T], g: &[T], x: &[T]) {
    for ((d, &gv), &xv) in ga.iter_mut().zip(g).zip(x) {
        *d += gv * gelu_grad(xv);
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sum_of_squares_gradient() {
        let mut tape = Tape::<f64>::new();
        let x = tape.param(Tensor::new([1], vec![3.0]).unwrap());
        let sq = tape.mul(x, x).unwrap();
        let loss = tape.sum(sq).unwrap();
        tape.backward(loss).unwrap();
        assert_eq!(tape.grad(x).unwrap().data(), &[6.0]);
    }

    #[test]
    fn disconnected_leaf_gets_zero_gradient() {
        let mut tape = Tape::<f64>::new();
        let x = tape.param(Tensor::new([2], vec![1.0, 2.0]).unwrap());
        let y = tape.param(Tensor::new([2], vec![5.0, 6.0]).unwrap());
        let loss = tape.sum(x).unwrap();
        tape.backward(loss).unwrap();
        assert_eq!(tape.grad(y).unwrap().data(), &[0.0, 0.0]);
        assert_eq!(tape.grad(x).unwrap().data(), &[1.0, 1.0]);
    }

    #[test]
    fn second_backward_is_rejected() {
        let mut tape = Tape::<f32>::new();
        let x = tape.param(Tensor::ones([2]));
        let loss = tape.sum(x).unwrap();
        tape.backward(loss).unwrap();
        assert_eq!(tape.backward(loss), Err(crate::TensorError::BackwardTwice));
    }

    #[test]
    fn non_scalar_loss_is_rejected() {
        let mut tape = Tape::<f32>::new();
        let x = tape.param(Tensor::ones([2]));
        assert!(matches!(tape.backward(x), Err(crate::TensorError::NonScalarLoss { .. })));
    }

    #[test]
    fn sqrt_gradient_at_zero_is_zero() {
        let mut tape = Tape::<f64>::new();
        let x = tape.param(Tensor::zeros([1]));
        let s = tape.sqrt(x).unwrap();
        let loss = tape.sum(s).unwrap();
        tape.backward(loss).unwrap();
        assert_eq!(tape.grad(x).unwrap().data(), &[0.0]);
    }

    #[test]
    fn finite_check_flags_nan() {
        let mut tape = Tape::<f32>::new().with_finite_check(true);
        let x = tape.leaf(Tensor::new([1], vec![-1.0]).unwrap());
        assert!(matches!(tape.sqrt(x), Err(crate::TensorError::NonFinite { op: "sqrt" })));
    }

    #[test]
    fn add_bias_broadcasts_over_rows() {
        let mut tape = Tape::<f32>::new();
        let x = tape.leaf(Tensor::zeros([2, 3]));
        let b = tape.leaf(Tensor::new([3], vec![1.0, 2.0, 3.0]).unwrap());
        let y = tape.add_bias(x, b).unwrap();
        assert_eq!(tape.value(y).data(), &[1.0, 2.0, 3.0, 1.0, 2.0, 3.0]);
    }

    #[test]
    fn gelu_known_values() {
        assert_eq!(gelu(0.0f64), 0.0);
        assert!((gelu(1.0f64) - 0.841_192).abs() < 1e-5);
        assert!(gelu(-10.0f64).abs() < 1e-6);
    }
}
