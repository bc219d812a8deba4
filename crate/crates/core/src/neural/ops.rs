//! Forward primitives and their local derivatives, on plain slices.

use super::{Scalar, Tensor};

pub fn sigmoid<T: Scalar>(x: T) -> T {
    if x >= T::zero() {
        T::one() / (T::one() + (-x).exp())
    } else {
        let e = x.exp();
        e / (T::one() + e)
    }
}

pub fn relu<T: Scalar>(x: T) -> T {
    x.max(T::zero())
}

/// Max-subtracted softmax.
pub fn softmax<T: Scalar>(z: &[T]) -> Vec<T> {
    let m = z.iter().copied().fold(T::neg_infinity(), T::max);
    let e: Vec<T> = z.iter().map(|&v| (v - m).exp()).collect();
    let s: T = e.iter().copied().sum();
    e.into_iter().map(|v| v / s).collect()
}

pub fn log_softmax<T: Scalar>(z: &[T]) -> Vec<T> {
    let m = z.iter().copied().fold(T::neg_infinity(), T::max);
    let lse = z.iter().map(|&v| (v - m).exp()).sum::<T>().ln() + m;
    z.iter().map(|&v| v - lse).collect()
}

/// Negative log-likelihood of `target` and the gradient w.r.t. the logits.
pub fn cross_entropy<T: Scalar>(logits: &[T], target: usize) -> (T, Vec<T>) {
    let mut p = softmax(logits);
    let loss = -log_softmax(logits)[target];
    p[target] -= T::one();
    (loss, p)
}

/// out += W·x, with W stored row-major as `out.len() × x.len()`.
pub fn matvec_add<T: Scalar>(out: &mut [T], w: &[T], x: &[T]) {
    let cols = x.len();
    debug_assert_eq!(w.len(), out.len() * cols);
    for (o, row) in out.iter_mut().zip(w.chunks_exact(cols)) {
        *o += dot(row, x);
    }
}

/// out += Wᵀ·g
pub fn matvec_t_add<T: Scalar>(out: &mut [T], w: &[T], g: &[T]) {
    let cols = out.len();
    debug_assert_eq!(w.len(), g.len() * cols);
    for (&gi, row) in g.iter().zip(w.chunks_exact(cols)) {
        if gi == T::zero() {
            continue;
        }
        for (o, &r) in out.iter_mut().zip(row) {
            *o += gi * r;
        }
    }
}

/// gw += g·xᵀ
pub fn outer_add<T: Scalar>(gw: &mut [T], g: &[T], x: &[T]) {
    let cols = x.len();
    debug_assert_eq!(gw.len(), g.len() * cols);
    for (&gi, row) in g.iter().zip(gw.chunks_exact_mut(cols)) {
        if gi == T::zero() {
            continue;
        }
        for (r, &xj) in row.iter_mut().zip(x) {
            *r += gi * xj;
        }
    }
}

pub fn dot<T: Scalar>(a: &[T], b: &[T]) -> T {
    a.iter().zip(b).map(|(&x, &y)| x * y).sum()
}

pub fn axpy<T: Scalar>(out: &mut [T], a: T, x: &[T]) {
    for (o, &v) in out.iter_mut().zip(x) {
        *o += a * v;
    }
}

/// Valid 1-D convolution of a `d × n` sentence matrix with a `d × m` filter:
/// `c_i = Σ S[:, i..i+m] ⊙ F`. Panics if `n < m`.
pub fn conv1d_valid<T: Scalar>(s: &Tensor<T>, f: &Tensor<T>) -> Vec<T> {
    let (d, n) = (s.shape()[0], s.shape()[1]);
    let m = f.shape()[1];
    assert_eq!(f.shape()[0], d, "filter height must equal embedding dim");
    assert!(n >= m, "sentence shorter than filter: {n} < {m}");
    (0..=n - m)
        .map(|i| {
            let mut acc = T::zero();
            for r in 0..d {
                let srow = &s.data()[r * n + i..r * n + i + m];
                let frow = &f.data()[r * m..(r + 1) * m];
                acc += dot(srow, frow);
            }
            acc
        })
        .collect()
}

/// Maximum entry and its first index. Panics on an empty slice.
pub fn max_pool<T: Scalar>(c: &[T]) -> (T, usize) {
    assert!(!c.is_empty(), "max_pool of an empty vector");
    let mut best = 0;
    for (i, &v) in c.iter().enumerate().skip(1) {
        if v > c[best] {
            best = i;
        }
    }
    (c[best], best)
}
