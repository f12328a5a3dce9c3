use crate::error::{dim_err, Result, TensorError};
use crate::tape::Op;
use crate::{Scalar, Tape, Tensor, Var};

/// Broadcast layout of a batched matmul `a[..., m, k] · b[..., k, n]`.
struct MatmulPlan {
    /// Rows per product; a batched `a` against a plain matrix `b` is folded
    /// into one tall product.
    m: usize,
    /// Rows of each output matrix.
    rows: usize,
    k: usize,
    n: usize,
    out_batch: Vec<usize>,
    /// Per output batch element, the matrix offsets into `a` and `b`.
    pairs: Vec<(usize, usize)>,
}

impl MatmulPlan {
    fn new(a: &[usize], b: &[usize]) -> Result<Self> {
        if a.len() < 2 || b.len() < 2 {
            return Err(TensorError::Rank {
                op: "matmul",
                expected: ">= 2".into(),
                got: if a.len() < 2 { a.to_vec() } else { b.to_vec() },
            });
        }
        let (m, k) = (a[a.len() - 2], a[a.len() - 1]);
        let (k2, n) = (b[b.len() - 2], b[b.len() - 1]);
        if k != k2 {
            return Err(dim_err("matmul", "inner", format!("{a:?} · {b:?}")));
        }
        let (ab, bb) = (&a[..a.len() - 2], &b[..b.len() - 2]);
        let rank = ab.len().max(bb.len());
        let pad = |s: &[usize]| {
            let mut v = vec![1usize; rank - s.len()];
            v.extend_from_slice(s);
            v
        };
        let (pa, pb) = (pad(ab), pad(bb));
        let mut out_batch = Vec::with_capacity(rank);
        for ax in 0..rank {
            let (x, y) = (pa[ax], pb[ax]);
            if x != y && x != 1 && y != 1 {
                return Err(dim_err("matmul", format!("batch {ax}"), format!("{a:?} · {b:?}")));
            }
            out_batch.push(if x == 1 { y } else { x });
        }
        let total: usize = out_batch.iter().product();
        let mut pairs = Vec::with_capacity(total);
        let mut idx = vec![0usize; rank];
        for _ in 0..total {
            let (mut oa, mut ob) = (0usize, 0usize);
            for ax in 0..rank {
                oa = oa * pa[ax] + if pa[ax] == 1 { 0 } else { idx[ax] };
                ob = ob * pb[ax] + if pb[ax] == 1 { 0 } else { idx[ax] };
            }
            pairs.push((oa * m * k, ob * k * n));
            for ax in (0..rank).rev() {
                idx[ax] += 1;
                if idx[ax] < out_batch[ax] {
                    break;
                }
                idx[ax] = 0;
            }
        }
        let rows = m;
        let (m, pairs) = if bb.is_empty() { (m * total, vec![(0, 0)]) } else { (m, pairs) };
        Ok(Self {
            m,
            rows,
            k,
            n,
            out_batch,
            pairs,
        })
    }
}

impl<T: Scalar> Tape<T> {
    /// Batched matrix product with numpy-style broadcasting of batch prefixes.
    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.check(a)?;
        self.check(b)?;
        let plan = MatmulPlan::new(self.shape(a), self.shape(b))?;
        let (m, k, n) = (plan.m, plan.k, plan.n);
        let (av, bv) = (self.value(a).data(), self.value(b).data());
        let mut out = vec![T::zero(); plan.pairs.len() * m * n];
        for (bi, &(oa, ob)) in plan.pairs.iter().enumerate() {
            gemm_acc(
                &av[oa..oa + m * k],
                &bv[ob..ob + k * n],
                &mut out[bi * m * n..(bi + 1) * m * n],
                m,
                k,
                n,
            );
        }
        self.add_macs((plan.pairs.len() * m * k * n) as u64);
        let mut shape = plan.out_batch.clone();
        shape.extend([plan.rows, n]);
        let out = Tensor::new(shape, out)?;
        self.push("matmul", out, Op::MatMul(a, b))
    }
}

/// `c += a · b` for row-major `a[m,k]`, `b[k,n]`, `c[m,n]`.
fn gemm_acc<T: Scalar>(a: &[T], b: &[T], c: &mut [T], m: usize, k: usize, n: usize) {
    if n == 0 {
        return;
    }
    for (arow, crow) in a.chunks_exact(k.max(1)).zip(c.chunks_exact_mut(n)).take(m) {
        axpy_rows(crow, |p| arow[p], b, k, n);
    }
}

/// `dst += Σ_p coef(p) · rows[p]` over the `count` leading rows of width `n`,
/// four rows per pass over `dst`.
#[inline(always)]
fn axpy_rows<T: Scalar>(dst: &mut [T], coef: impl Fn(usize) -> T, rows: &[T], count: usize, n: usize) {
    let dst = &mut dst[..n];
    let mut p = 0;
    while p + 4 <= count {
        let (c0, c1, c2, c3) = (coef(p), coef(p + 1), coef(p + 2), coef(p + 3));
        let r = &rows[p * n..(p + 4) * n];
        let (r0, r) = r.split_at(n);
        let (r1, r) = r.split_at(n);
        let (r2, r3) = r.split_at(n);
        for ((((d, &x0), &x1), &x2), &x3) in dst.iter_mut().zip(r0).zip(r1).zip(r2).zip(r3) {
            *d = *d + c0 * x0 + c1 * x1 + c2 * x2 + c3 * x3;
        }
        p += 4;
    }
    while p < count {
        let c0 = coef(p);
        for (d, &x) in dst.iter_mut().zip(&rows[p * n..(p + 1) * n]) {
            *d += c0 * x;
        }
        p += 1;
    }
}

fn transpose<T: Scalar>(x: &[T], rows: usize, cols: usize) -> Vec<T> {
    let mut out = vec![T::zero(); x.len()];
    for r in 0..rows {
        for c in 0..cols {
            out[c * rows + r] = x[r * cols + c];
        }
    }
    out
}

pub(crate) fn matmul_backward<T: Scalar>(
    a: &Tensor<T>,
    b: &Tensor<T>,
    g: &[T],
    need_a: bool,
    need_b: bool,
) -> (Option<Vec<T>>, Option<Vec<T>>) {
    let plan = MatmulPlan::new(a.shape(), b.shape()).expect("validated in forward");
    let (m, k, n) = (plan.m, plan.k, plan.n);
    let (av, bv) = (a.data(), b.data());
    let mut ga = need_a.then(|| vec![T::zero(); av.len()]);
    let mut gb = need_b.then(|| vec![T::zero(); bv.len()]);
    for (bi, &(oa, ob)) in plan.pairs.iter().enumerate() {
        let gm = &g[bi * m * n..(bi + 1) * m * n];
        if let Some(ga) = ga.as_mut() {
            // dA = g · Bᵀ
            let bt = transpose(&bv[ob..ob + k * n], k, n);
            gemm_acc(gm, &bt, &mut ga[oa..oa + m * k], m, n, k);
        }
        if let Some(gb) = gb.as_mut() {
            // dB[p,:] += Σ_i a[i,p] g[i,:], four rows of `a` at a time
            let am = &av[oa..oa + m * k];
            let dst = &mut gb[ob..ob + k * n];
            for i in (0..m).step_by(4) {
                let rows = 4.min(m - i);
                let g4 = &gm[i * n..(i + rows) * n];
                for p in 0..k {
                    axpy_rows(&mut dst[p * n..(p + 1) * n], |r| am[(i + r) * k + p], g4, rows, n);
                }
            }
        }
    }
    (ga, gb)
}
