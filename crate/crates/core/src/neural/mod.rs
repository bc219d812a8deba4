//! Dense tensors with hand-written backward passes: LSTM cells, valid
//! convolution, pooling, softmax/cross-entropy, SGD and finite-difference
//! gradient checking.

pub mod checkpoint;
mod lstm;
pub mod ops;

use std::fmt::Debug;
use std::iter::Sum;
use std::ops::{AddAssign, DivAssign, MulAssign, SubAssign};

use num_traits::{Float, FromPrimitive, ToPrimitive};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

pub use lstm::{Lstm, LstmStep};

use crate::error::{Error, Result};

/// Floating point type the models are generic over: `f32` for training,
/// `f64` for gradient checks.
pub trait Scalar:
    Float + FromPrimitive + ToPrimitive + Sum + AddAssign + SubAssign + MulAssign + DivAssign + Debug + Default + Send + Sync + 'static
{
    fn lit(x: f64) -> Self {
        Self::from_f64(x).expect("representable constant")
    }
}

impl Scalar for f32 {}
impl Scalar for f64 {}

pub const INIT_SCALE: f64 = 0.2;

/// Row-major dense tensor.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor<T> {
    shape: Vec<usize>,
    data: Vec<T>,
}

impl<T: Scalar> Tensor<T> {
    pub fn zeros(shape: &[usize]) -> Self {
        Tensor {
            shape: shape.to_vec(),
            data: vec![T::zero(); shape.iter().product()],
        }
    }

    pub fn from_vec(shape: &[usize], data: Vec<T>) -> Result<Self> {
        let n: usize = shape.iter().product();
        if n != data.len() {
            return Err(Error::Shape {
                context: "tensor data".into(),
                expected: shape.to_vec(),
                actual: vec![data.len()],
            });
        }
        Ok(Tensor {
            shape: shape.to_vec(),
            data,
        })
    }

    pub fn uniform(shape: &[usize], scale: f64, rng: &mut impl Rng) -> Self {
        let n = shape.iter().product();
        let data = (0..n).map(|_| T::lit(rng.random_range(-scale..scale))).collect();
        Tensor {
            shape: shape.to_vec(),
            data,
        }
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn data(&self) -> &[T] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [T] {
        &mut self.data
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    /// Size of one slice along the first axis.
    pub fn row_len(&self) -> usize {
        self.shape.iter().skip(1).product()
    }

    pub fn row(&self, i: usize) -> &[T] {
        let n = self.row_len();
        &self.data[i * n..(i + 1) * n]
    }

    pub fn row_mut(&mut self, i: usize) -> &mut [T] {
        let n = self.row_len();
        &mut self.data[i * n..(i + 1) * n]
    }

    pub fn fill(&mut self, v: T) {
        self.data.fill(v);
    }

    pub fn cast<U: Scalar>(&self) -> Tensor<U> {
        Tensor {
            shape: self.shape.clone(),
            data: self.data.iter().map(|&x| U::lit(x.to_f64().unwrap_or(f64::NAN))).collect(),
        }
    }

    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|x| x.is_finite())
    }
}

/// p ← p − lr·g
pub fn sgd_step<T: Scalar>(p: &mut Tensor<T>, g: &Tensor<T>, lr: T) -> Result<()> {
    if p.shape != g.shape {
        return Err(Error::Argument(format!(
            "gradient shape {:?} does not match parameter shape {:?}",
            g.shape, p.shape
        )));
    }
    for (w, &d) in p.data.iter_mut().zip(&g.data) {
        *w -= lr * d;
    }
    Ok(())
}

/// A model's trainable tensors, visited in a fixed order.
pub trait Params<T: Scalar>: Clone + Send + Sync {
    fn tensors(&self) -> Vec<(String, &Tensor<T>)>;
    fn tensors_mut(&mut self) -> Vec<(String, &mut Tensor<T>)>;

    fn zeros_like(&self) -> Self {
        let mut z = self.clone();
        for (_, t) in z.tensors_mut() {
            t.fill(T::zero());
        }
        z
    }

    fn add_assign(&mut self, other: &Self) {
        for ((_, a), (_, b)) in self.tensors_mut().into_iter().zip(other.tensors()) {
            for (x, &y) in a.data.iter_mut().zip(&b.data) {
                *x += y;
            }
        }
    }

    fn scale(&mut self, s: T) {
        for (_, t) in self.tensors_mut() {
            t.data.iter_mut().for_each(|x| *x *= s);
        }
    }

    fn global_norm(&self) -> T {
        self.tensors()
            .iter()
            .map(|(_, t)| t.data.iter().map(|&x| x * x).sum::<T>())
            .sum::<T>()
            .sqrt()
    }

    fn all_finite(&self) -> bool {
        self.tensors().iter().all(|(_, t)| t.all_finite())
    }
}

/// Apply one SGD step to every tensor.
pub fn sgd_update<T: Scalar, P: Params<T>>(params: &mut P, grads: &P, lr: T) -> Result<()> {
    let grads = grads.tensors();
    let mut params = params.tensors_mut();
    if grads.len() != params.len() {
        return Err(Error::Argument("gradient set does not match parameters".into()));
    }
    for ((_, p), (_, g)) in params.iter_mut().zip(&grads) {
        sgd_step(p, g, lr)?;
    }
    Ok(())
}

/// Rescale gradients so their global norm is at most `max_norm`.
pub fn clip_global_norm<T: Scalar, P: Params<T>>(grads: &mut P, max_norm: T) {
    if max_norm <= T::zero() {
        return;
    }
    let n = grads.global_norm();
    if n > max_norm {
        grads.scale(max_norm / n);
    }
}

/// Number of gradient accumulation chunks per batch. Fixed so that the sum
/// order, and hence the result, does not depend on the thread count.
pub const GRAD_CHUNKS: usize = 8;

/// Sum per-example gradients over a batch in parallel. `f` accumulates one
/// example's gradient into the buffer and returns its loss contribution.
pub fn batch_gradients<T, P, I, F>(params: &P, batch: &[I], f: F) -> Result<(T, P)>
where
    T: Scalar,
    P: Params<T>,
    I: Sync,
    F: Fn(&P, &I, &mut P) -> Result<T> + Sync,
{
    let chunk = batch.len().div_ceil(GRAD_CHUNKS).max(1);
    let partials: Vec<Result<(T, P)>> = batch
        .par_chunks(chunk)
        .map(|items| {
            let mut g = params.zeros_like();
            let mut loss = T::zero();
            for item in items {
                loss += f(params, item, &mut g)?;
            }
            Ok((loss, g))
        })
        .collect();
    let mut total = T::zero();
    let mut grads: Option<P> = None;
    for part in partials {
        let (l, g) = part?;
        total += l;
        match grads.as_mut() {
            Some(acc) => acc.add_assign(&g),
            None => grads = Some(g),
        }
    }
    Ok((total, grads.unwrap_or_else(|| params.zeros_like())))
}

#[derive(Debug, Clone, PartialEq)]
pub struct GradCheckReport {
    pub max_rel_error: f64,
    /// Worst relative error per tensor.
    pub per_tensor: Vec<(String, f64)>,
    pub n_checked: usize,
}

pub fn relative_error(a: f64, n: f64) -> f64 {
    (a - n).abs() / a.abs().max(n.abs()).max(1e-8)
}

/// Compare analytic gradients against central differences on up to
/// `samples` entries of every tensor (all entries if the tensor is smaller).
pub fn grad_check<P, F>(params: &P, analytic: &P, eps: f64, samples: usize, seed: u64, loss: F) -> Result<GradCheckReport>
where
    P: Params<f64>,
    F: Fn(&P) -> Result<f64> + Sync,
{
    if !(1e-6..=1e-3).contains(&eps) {
        return Err(Error::Argument(format!("grad_check eps {eps} outside [1e-6, 1e-3]")));
    }
    let base = loss(params)?;
    if !base.is_finite() {
        return Err(Error::NonFinite("grad_check loss".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut jobs: Vec<(usize, usize)> = Vec::new();
    let shapes: Vec<(String, usize)> = params.tensors().iter().map(|(n, t)| (n.clone(), t.len())).collect();
    for (ti, (_, len)) in shapes.iter().enumerate() {
        if *len <= samples {
            jobs.extend((0..*len).map(|e| (ti, e)));
        } else {
            jobs.extend((0..samples).map(|_| (ti, rng.random_range(0..*len))));
        }
    }
    let analytic_values: Vec<f64> = {
        let ts = analytic.tensors();
        jobs.iter().map(|&(ti, e)| ts[ti].1.data[e]).collect()
    };
    let errors: Vec<Result<f64>> = jobs
        .par_iter()
        .zip(analytic_values.par_iter())
        .map(|(&(ti, e), &a)| {
            let mut p = params.clone();
            let eval = |p: &mut P, delta: f64| -> Result<f64> {
                p.tensors_mut()[ti].1.data[e] += delta;
                let l = loss(p)?;
                p.tensors_mut()[ti].1.data[e] -= delta;
                if l.is_finite() {
                    Ok(l)
                } else {
                    Err(Error::NonFinite("grad_check loss".into()))
                }
            };
            let plus = eval(&mut p, eps)?;
            let minus = eval(&mut p, -eps)?;
            Ok(relative_error(a, (plus - minus) / (2.0 * eps)))
        })
        .collect();
    let mut per_tensor: Vec<(String, f64)> = shapes.iter().map(|(n, _)| (n.clone(), 0.0)).collect();
    for (&(ti, _), err) in jobs.iter().zip(errors) {
        let err = err?;
        per_tensor[ti].1 = per_tensor[ti].1.max(err);
    }
    let max_rel_error = per_tensor.iter().map(|(_, e)| *e).fold(0.0, f64::max);
    Ok(GradCheckReport {
        max_rel_error,
        per_tensor,
        n_checked: jobs.len(),
    })
}
