//! Executor abstraction over tensor arithmetic.
//!
//! Layer and model code is written once against [`Ops`]. [`Eval`] runs it
//! eagerly on owned or borrowed tensors (inference, streaming, finite
//! differences); [`crate::tape::Tape`] records the same computation for
//! reverse-mode differentiation.

use alloc::borrow::Cow;
use alloc::vec;
use alloc::vec::Vec;

use crate::loss;
use crate::math;
use crate::{ParamId, ParamStore, Result, Tensor};

pub trait Ops {
    type V: Clone;

    fn param(&mut self, id: ParamId) -> Self::V;
    fn constant(&mut self, t: Tensor) -> Self::V;
    fn value<'s>(&'s self, v: &'s Self::V) -> &'s Tensor;

    /// `w · x` for `w: [m, n]`, `x: [n]`.
    fn matvec(&mut self, w: &Self::V, x: &Self::V) -> Self::V;
    /// `mᵀ · a` for `m: [n, k]`, `a: [n]`.
    fn matvec_t(&mut self, m: &Self::V, a: &Self::V) -> Self::V;
    fn add(&mut self, a: &Self::V, b: &Self::V) -> Self::V;
    fn mul(&mut self, a: &Self::V, b: &Self::V) -> Self::V;
    fn scale(&mut self, a: &Self::V, s: f64) -> Self::V;
    fn sigmoid(&mut self, a: &Self::V) -> Self::V;
    fn tanh(&mut self, a: &Self::V) -> Self::V;
    fn concat(&mut self, parts: &[Self::V]) -> Self::V;
    fn slice(&mut self, a: &Self::V, start: usize, len: usize) -> Self::V;
    /// Stacks equal-length vectors into a `[rows, k]` matrix.
    fn stack(&mut self, rows: &[Self::V]) -> Self::V;
    fn row(&mut self, m: &Self::V, i: usize) -> Self::V;
    fn softmax(&mut self, a: &Self::V) -> Self::V;
    fn log_softmax(&mut self, a: &Self::V) -> Self::V;
    fn layer_norm(&mut self, x: &Self::V, gain: &Self::V, bias: &Self::V, eps: f64) -> Self::V;
    /// Sum of every entry of every part, as a scalar.
    fn sum(&mut self, parts: &[Self::V]) -> Self::V;
    /// Transducer negative log-likelihood of `targets` given joint logits
    /// laid out as `[chunks * (U + 1), classes]`.
    fn transducer_nll(&mut self, logits: &Self::V, chunks: usize, targets: &[usize]) -> Result<Self::V>;

    fn affine(&mut self, w: &Self::V, b: &Self::V, x: &Self::V) -> Self::V {
        let y = self.matvec(w, x);
        self.add(&y, b)
    }
}

// Kernels shared by both executors.

pub(crate) fn matvec(w: &Tensor, x: &[f64]) -> Vec<f64> {
    let (m, n) = (w.rows(), w.cols());
    assert_eq!(n, x.len(), "matvec: [{m}, {n}] x [{}]", x.len());
    let wd = w.data();
    (0..m)
        .map(|i| {
            let row = &wd[i * n..(i + 1) * n];
            row.iter().zip(x).map(|(a, b)| a * b).sum()
        })
        .collect()
}

pub(crate) fn matvec_t(m: &Tensor, a: &[f64]) -> Vec<f64> {
    let (n, k) = (m.rows(), m.cols());
    assert_eq!(n, a.len(), "matvec_t: [{n}, {k}]^T x [{}]", a.len());
    let mut out = vec![0.0; k];
    for (i, &ai) in a.iter().enumerate() {
        for (o, &mij) in out.iter_mut().zip(m.row(i)) {
            *o += mij * ai;
        }
    }
    out
}

pub(crate) fn zip_map(a: &[f64], b: &[f64], f: impl Fn(f64, f64) -> f64) -> Vec<f64> {
    assert_eq!(a.len(), b.len(), "elementwise op on lengths {} and {}", a.len(), b.len());
    a.iter().zip(b).map(|(&x, &y)| f(x, y)).collect()
}

pub(crate) fn concat(parts: &[&[f64]]) -> Vec<f64> {
    let mut out = Vec::with_capacity(parts.iter().map(|p| p.len()).sum());
    for p in parts {
        out.extend_from_slice(p);
    }
    out
}

pub(crate) fn stack(rows: &[&[f64]]) -> Tensor {
    let k = rows.first().map_or(0, |r| r.len());
    assert!(rows.iter().all(|r| r.len() == k), "stack: ragged rows");
    Tensor::new(vec![rows.len(), k], concat(rows)).expect("stack shape")
}

/// Returns `(y, xhat, 1/σ)`.
pub(crate) fn layer_norm(x: &[f64], gain: &[f64], bias: &[f64], eps: f64) -> (Vec<f64>, Vec<f64>, f64) {
    let n = x.len() as f64;
    let mean = x.iter().sum::<f64>() / n;
    let var = x.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
    let inv_std = 1.0 / math::sqrt(var + eps);
    let xhat: Vec<f64> = x.iter().map(|v| (v - mean) * inv_std).collect();
    let y = xhat.iter().zip(gain).zip(bias).map(|((h, g), b)| g * h + b).collect();
    (y, xhat, inv_std)
}

pub(crate) fn log_softmax(x: &[f64]) -> Vec<f64> {
    let lse = math::logsumexp_unchecked(x);
    x.iter().map(|v| v - lse).collect()
}

pub(crate) fn softmax(x: &[f64]) -> Vec<f64> {
    let mut y = x.to_vec();
    math::softmax_in_place(&mut y);
    y
}

/// Eager executor. Parameters are borrowed, intermediates owned.
pub struct Eval<'a> {
    params: &'a ParamStore,
}

impl<'a> Eval<'a> {
    pub fn new(params: &'a ParamStore) -> Self {
        Self { params }
    }
}

fn vec_of<'a>(data: Vec<f64>) -> Cow<'a, Tensor> {
    Cow::Owned(Tensor::vector(data))
}

impl<'a> Ops for Eval<'a> {
    type V = Cow<'a, Tensor>;

    fn param(&mut self, id: ParamId) -> Self::V {
        Cow::Borrowed(self.params.get(id))
    }

    fn constant(&mut self, t: Tensor) -> Self::V {
        Cow::Owned(t)
    }

    fn value<'s>(&'s self, v: &'s Self::V) -> &'s Tensor {
        v
    }

    fn matvec(&mut self, w: &Self::V, x: &Self::V) -> Self::V {
        vec_of(matvec(w, x.data()))
    }

    fn matvec_t(&mut self, m: &Self::V, a: &Self::V) -> Self::V {
        vec_of(matvec_t(m, a.data()))
    }

    fn add(&mut self, a: &Self::V, b: &Self::V) -> Self::V {
        vec_of(zip_map(a.data(), b.data(), |x, y| x + y))
    }

    fn mul(&mut self, a: &Self::V, b: &Self::V) -> Self::V {
        vec_of(zip_map(a.data(), b.data(), |x, y| x * y))
    }

    fn scale(&mut self, a: &Self::V, s: f64) -> Self::V {
        vec_of(a.data().iter().map(|x| x * s).collect())
    }

    fn sigmoid(&mut self, a: &Self::V) -> Self::V {
        vec_of(a.data().iter().map(|&x| math::sigmoid(x)).collect())
    }

    fn tanh(&mut self, a: &Self::V) -> Self::V {
        vec_of(a.data().iter().map(|&x| math::tanh(x)).collect())
    }

    fn concat(&mut self, parts: &[Self::V]) -> Self::V {
        let slices: Vec<&[f64]> = parts.iter().map(|p| p.data()).collect();
        vec_of(concat(&slices))
    }

    fn slice(&mut self, a: &Self::V, start: usize, len: usize) -> Self::V {
        vec_of(a.data()[start..start + len].to_vec())
    }

    fn stack(&mut self, rows: &[Self::V]) -> Self::V {
        let slices: Vec<&[f64]> = rows.iter().map(|p| p.data()).collect();
        Cow::Owned(stack(&slices))
    }

    fn row(&mut self, m: &Self::V, i: usize) -> Self::V {
        vec_of(m.row(i).to_vec())
    }

    fn softmax(&mut self, a: &Self::V) -> Self::V {
        vec_of(softmax(a.data()))
    }

    fn log_softmax(&mut self, a: &Self::V) -> Self::V {
        vec_of(log_softmax(a.data()))
    }

    fn layer_norm(&mut self, x: &Self::V, gain: &Self::V, bias: &Self::V, eps: f64) -> Self::V {
        vec_of(layer_norm(x.data(), gain.data(), bias.data(), eps).0)
    }

    fn sum(&mut self, parts: &[Self::V]) -> Self::V {
        Cow::Owned(Tensor::scalar(parts.iter().flat_map(|p| p.data()).sum()))
    }

    fn transducer_nll(&mut self, logits: &Self::V, chunks: usize, targets: &[usize]) -> Result<Self::V> {
        let grid = loss::AlignmentGrid::from_logits(logits, chunks, targets)?;
        Ok(Cow::Owned(Tensor::scalar(loss::nll(&grid)?)))
    }
}
