//! Small dense linear algebra used by the hand-differentiated networks.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::scalar::Scalar;

/// Row-major dense matrix.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Matrix<S> {
    pub rows: usize,
    pub cols: usize,
    pub data: Vec<S>,
}

impl<S: Scalar> Matrix<S> {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            data: vec![S::zero(); rows * cols],
        }
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Self::zeros(n, n);
        for i in 0..n {
            m.data[i * n + i] = S::one();
        }
        m
    }

    pub fn from_rows(rows: &[&[S]]) -> Self {
        let cols = rows.first().map_or(0, |r| r.len());
        let mut data = Vec::with_capacity(rows.len() * cols);
        for r in rows {
            assert_eq!(r.len(), cols, "ragged rows");
            data.extend_from_slice(r);
        }
        Self {
            rows: rows.len(),
            cols,
            data,
        }
    }

    /// Glorot-uniform initialization: U(-a, a) with a = sqrt(6 / (fan_in + fan_out)).
    pub fn glorot<R: Rng>(rows: usize, cols: usize, rng: &mut R) -> Self {
        let a = (6.0 / (rows + cols) as f64).sqrt();
        let data = (0..rows * cols)
            .map(|_| S::of(rng.gen_range(-a..a)))
            .collect();
        Self { rows, cols, data }
    }

    #[inline]
    pub fn get(&self, r: usize, c: usize) -> S {
        self.data[r * self.cols + c]
    }

    #[inline]
    pub fn set(&mut self, r: usize, c: usize, v: S) {
        self.data[r * self.cols + c] = v;
    }

    #[inline]
    pub fn row(&self, r: usize) -> &[S] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }

    /// `out = W x + b`
    pub fn affine(&self, x: &[S], b: &[S]) -> Vec<S> {
        debug_assert_eq!(x.len(), self.cols);
        debug_assert_eq!(b.len(), self.rows);
        (0..self.rows)
            .map(|r| dot(self.row(r), x) + b[r])
            .collect()
    }

    /// `out = W x`
    pub fn matvec(&self, x: &[S]) -> Vec<S> {
        debug_assert_eq!(x.len(), self.cols);
        (0..self.rows).map(|r| dot(self.row(r), x)).collect()
    }

    /// `out += Wᵀ g`
    pub fn t_matvec_acc(&self, g: &[S], out: &mut [S]) {
        debug_assert_eq!(g.len(), self.rows);
        debug_assert_eq!(out.len(), self.cols);
        for (r, &gr) in g.iter().enumerate() {
            if gr == S::zero() {
                continue;
            }
            for (o, &w) in out.iter_mut().zip(self.row(r)) {
                *o = *o + w * gr;
            }
        }
    }

    /// `W += g xᵀ`
    pub fn add_outer(&mut self, g: &[S], x: &[S]) {
        debug_assert_eq!(g.len(), self.rows);
        debug_assert_eq!(x.len(), self.cols);
        let cols = self.cols;
        for (r, &gr) in g.iter().enumerate() {
            if gr == S::zero() {
                continue;
            }
            for (w, &xv) in self.data[r * cols..(r + 1) * cols].iter_mut().zip(x) {
                *w = *w + gr * xv;
            }
        }
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Dense<S> {
    pub w: Matrix<S>,
    pub b: Vec<S>,
}

impl<S: Scalar> Dense<S> {
    pub fn zeros(out: usize, inp: usize) -> Self {
        Self {
            w: Matrix::zeros(out, inp),
            b: vec![S::zero(); out],
        }
    }

    pub fn glorot<R: Rng>(out: usize, inp: usize, rng: &mut R) -> Self {
        Self {
            w: Matrix::glorot(out, inp, rng),
            b: vec![S::zero(); out],
        }
    }

    #[inline]
    pub fn forward(&self, x: &[S]) -> Vec<S> {
        self.w.affine(x, &self.b)
    }

    /// Accumulates parameter gradients for output gradient `g` at input `x`
    /// into `grad`, and `Wᵀ g` into `g_in` when requested.
    #[inline]
    pub fn backward(&self, x: &[S], g: &[S], grad: &mut Dense<S>, g_in: Option<&mut [S]>) {
        grad.w.add_outer(g, x);
        add_assign(&mut grad.b, g);
        if let Some(g_in) = g_in {
            self.w.t_matvec_acc(g, g_in);
        }
    }
}

#[inline]
pub fn dot<S: Scalar>(a: &[S], b: &[S]) -> S {
    debug_assert_eq!(a.len(), b.len());
    a.iter()
        .zip(b)
        .fold(S::zero(), |acc, (&x, &y)| acc + x * y)
}

/// Squared Euclidean distance, accumulated left to right.
#[inline]
pub fn sq_l2<S: Scalar>(a: &[S], b: &[S]) -> S {
    debug_assert_eq!(a.len(), b.len());
    a.iter().zip(b).fold(S::zero(), |acc, (&x, &y)| {
        let d = x - y;
        acc + d * d
    })
}

pub fn add_assign<S: Scalar>(acc: &mut [S], x: &[S]) {
    for (a, &v) in acc.iter_mut().zip(x) {
        *a = *a + v;
    }
}

pub fn relu_vec<S: Scalar>(x: &[S]) -> Vec<S> {
    x.iter().map(|v| v.relu()).collect()
}

/// Zero the entries of `grad` whose pre-activation was not positive.
pub fn relu_backward<S: Scalar>(pre: &[S], grad: &mut [S]) {
    for (g, &p) in grad.iter_mut().zip(pre) {
        if p <= S::zero() {
            *g = S::zero();
        }
    }
}

/// Numerically stable softmax.
pub fn softmax<S: Scalar>(logits: &[S]) -> Vec<S> {
    let max = logits
        .iter()
        .copied()
        .fold(S::neg_infinity(), |m, v| if v > m { v } else { m });
    let mut out: Vec<S> = logits.iter().map(|&v| (v - max).exp()).collect();
    let total: S = out.iter().copied().sum();
    for o in out.iter_mut() {
        *o = *o / total;
    }
    out
}

pub fn one_hot<S: Scalar>(index: usize, len: usize) -> Vec<S> {
    let mut v = vec![S::zero(); len];
    v[index] = S::one();
    v
}
