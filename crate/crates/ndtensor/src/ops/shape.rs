use crate::error::{dim_err, Result, TensorError};
use crate::tape::Op;
use crate::tensor::strides_of;
use crate::{Scalar, Tape, Tensor, Var};

impl<T: Scalar> Tape<T> {
    pub fn reshape(&mut self, a: Var, shape: &[usize]) -> Result<Var> {
        self.check(a)?;
        let out = self.value(a).clone().reshape(shape.to_vec())?;
        self.push("reshape", out, Op::Reshape(a))
    }

    /// Reorders axes: output axis `i` is input axis `perm[i]`.
    pub fn permute(&mut self, a: Var, perm: &[usize]) -> Result<Var> {
        self.check(a)?;
        let in_shape = self.shape(a).to_vec();
        validate_perm(&in_shape, perm)?;
        let src = self.value(a).data();
        let offsets = permuted_offsets(&in_shape, perm);
        let data = offsets.iter().map(|&o| src[o]).collect();
        let out_shape: Vec<usize> = perm.iter().map(|&p| in_shape[p]).collect();
        let out = Tensor::new(out_shape, data)?;
        self.push("permute", out, Op::Permute(a, perm.to_vec()))
    }

    /// Joins tensors along `axis`; every other extent must agree.
    pub fn concat(&mut self, xs: &[Var], axis: usize) -> Result<Var> {
        let Some(&first) = xs.first() else {
            return Err(TensorError::InvalidArgument {
                op: "concat",
                detail: "no inputs".into(),
            });
        };
        for &x in xs {
            self.check(x)?;
        }
        let base = self.shape(first).to_vec();
        if axis >= base.len() {
            return Err(TensorError::InvalidArgument {
                op: "concat",
                detail: format!("axis {axis} out of range for rank {}", base.len()),
            });
        }
        let mut total = 0;
        for &x in xs {
            let s = self.shape(x);
            if s.len() != base.len() || s.iter().zip(&base).enumerate().any(|(ax, (a, b))| ax != axis && a != b) {
                return Err(dim_err("concat", format!("{axis}"), format!("{base:?} vs {s:?}")));
            }
            total += s[axis];
        }
        let outer: usize = base[..axis].iter().product();
        let inner: usize = base[axis + 1..].iter().product();
        let mut data = Vec::with_capacity(outer * total * inner);
        for o in 0..outer {
            for &x in xs {
                let len = self.shape(x)[axis] * inner;
                data.extend_from_slice(&self.value(x).data()[o * len..(o + 1) * len]);
            }
        }
        let mut out_shape = base;
        out_shape[axis] = total;
        let out = Tensor::new(out_shape, data)?;
        self.push("concat", out, Op::Concat(xs.to_vec(), axis))
    }

    /// Contiguous slice `[start, start + len)` along `axis`.
    pub fn narrow(&mut self, a: Var, axis: usize, start: usize, len: usize) -> Result<Var> {
        self.check(a)?;
        let shape = self.shape(a).to_vec();
        if axis >= shape.len() || start + len > shape[axis] {
            return Err(dim_err("narrow", format!("{axis}"), format!("[{start}, {}) of {shape:?}", start + len)));
        }
        let outer: usize = shape[..axis].iter().product();
        let inner: usize = shape[axis + 1..].iter().product();
        let src = self.value(a).data();
        let mut data = Vec::with_capacity(outer * len * inner);
        for o in 0..outer {
            let base = (o * shape[axis] + start) * inner;
            data.extend_from_slice(&src[base..base + len * inner]);
        }
        let mut out_shape = shape;
        out_shape[axis] = len;
        let out = Tensor::new(out_shape, data)?;
        self.push("narrow", out, Op::Narrow { input: a, axis, start })
    }

    /// Gathers rows (slices along axis 0) in the given order; indices may repeat.
    pub fn index_select(&mut self, a: Var, indices: &[usize]) -> Result<Var> {
        self.check(a)?;
        let shape = self.shape(a).to_vec();
        if shape.is_empty() {
            return Err(TensorError::Rank {
                op: "index_select",
                expected: ">= 1".into(),
                got: shape,
            });
        }
        let row: usize = shape[1..].iter().product();
        if let Some(&bad) = indices.iter().find(|&&i| i >= shape[0]) {
            return Err(dim_err("index_select", "0", format!("index {bad} out of range {}", shape[0])));
        }
        let src = self.value(a).data();
        let mut data = Vec::with_capacity(indices.len() * row);
        for &i in indices {
            data.extend_from_slice(&src[i * row..(i + 1) * row]);
        }
        let mut out_shape = shape;
        out_shape[0] = indices.len();
        let out = Tensor::new(out_shape, data)?;
        self.push(
            "index_select",
            out,
            Op::IndexSelect {
                input: a,
                indices: indices.to_vec(),
            },
        )
    }
}

fn validate_perm(shape: &[usize], perm: &[usize]) -> Result<()> {
    let mut seen = vec![false; shape.len()];
    let ok = perm.len() == shape.len()
        && perm.iter().all(|&p| {
            let fresh = p < seen.len() && !seen[p];
            if fresh {
                seen[p] = true;
            }
            fresh
        });
    if ok {
        Ok(())
    } else {
        Err(TensorError::InvalidArgument {
            op: "permute",
            detail: format!("{perm:?} is not a permutation of rank {}", shape.len()),
        })
    }
}

/// For each output element (row-major), the input offset it reads.
fn permuted_offsets(in_shape: &[usize], perm: &[usize]) -> Vec<usize> {
    let in_strides = strides_of(in_shape);
    let out_shape: Vec<usize> = perm.iter().map(|&p| in_shape[p]).collect();
    let step: Vec<usize> = perm.iter().map(|&p| in_strides[p]).collect();
    let n: usize = out_shape.iter().product();
    let mut offsets = Vec::with_capacity(n);
    let mut idx = vec![0usize; out_shape.len()];
    let mut off = 0usize;
    for _ in 0..n {
        offsets.push(off);
        for ax in (0..out_shape.len()).rev() {
            idx[ax] += 1;
            off += step[ax];
            if idx[ax] < out_shape[ax] {
                break;
            }
            off -= step[ax] * out_shape[ax];
            idx[ax] = 0;
        }
    }
    offsets
}

pub(crate) fn permute_backward<T: Scalar>(ga: &mut [T], g: &[T], in_shape: &[usize], perm: &[usize]) {
    for (gv, off) in g.iter().zip(permuted_offsets(in_shape, perm)) {
        ga[off] += *gv;
    }
}

/// Gradient of one concat input: the `[offset, offset + len)` slab of `g`.
pub(crate) fn narrow_backward<T: Scalar>(gx: &mut [T], g: &[T], out_shape: &[usize], axis: usize, offset: usize, len: usize) {
    let outer: usize = out_shape[..axis].iter().product();
    let inner: usize = out_shape[axis + 1..].iter().product();
    let total = out_shape[axis];
    for o in 0..outer {
        let src = &g[(o * total + offset) * inner..(o * total + offset + len) * inner];
        let dst = &mut gx[o * len * inner..(o + 1) * len * inner];
        for (d, &s) in dst.iter_mut().zip(src) {
            *d += s;
        }
    }
}

pub(crate) fn narrow_scatter<T: Scalar>(gi: &mut [T], g: &[T], in_shape: &[usize], axis: usize, start: usize, len: usize) {
    let outer: usize = in_shape[..axis].iter().product();
    let inner: usize = in_shape[axis + 1..].iter().product();
    let total = in_shape[axis];
    for o in 0..outer {
        let dst = &mut gi[(o * total + start) * inner..(o * total + start + len) * inner];
        let src = &g[o * len * inner..(o + 1) * len * inner];
        for (d, &s) in dst.iter_mut().zip(src) {
            *d += s;
        }
    }
}

pub(crate) fn index_select_backward<T: Scalar>(gi: &mut [T], g: &[T], indices: &[usize], row: usize) {
    for (k, &i) in indices.iter().enumerate() {
        let src = &g[k * row..(k + 1) * row];
        for (d, &s) in gi[i * row..(i + 1) * row].iter_mut().zip(src) {
            *d += s;
        }
    }
}
