use rand::Rng;

use super::ops::{matvec_add, matvec_t_add, outer_add, sigmoid};
use super::{Scalar, Tensor, INIT_SCALE};
use crate::error::{Error, Result};

/// LSTM cell weights, gates stacked in the order i, f, g, o.
#[derive(Debug, Clone, PartialEq)]
pub struct Lstm<T> {
    /// `[4h, input]`
    pub w_x: Tensor<T>,
    /// `[4h, h]`
    pub w_h: Tensor<T>,
    /// `[4h]`
    pub b: Tensor<T>,
}

/// Everything the backward pass needs from one forward step.
#[derive(Debug, Clone)]
pub struct LstmStep<T> {
    pub x: Vec<T>,
    pub h_prev: Vec<T>,
    pub c_prev: Vec<T>,
    /// Activated gates `[i; f; g; o]`.
    pub gates: Vec<T>,
    pub tanh_c: Vec<T>,
    pub c: Vec<T>,
    pub h: Vec<T>,
}

impl<T: Scalar> Lstm<T> {
    pub fn new(input: usize, hidden: usize, rng: &mut impl Rng) -> Self {
        let mut b = Tensor::uniform(&[4 * hidden], INIT_SCALE, rng);
        // forget gate starts open
        b.data_mut()[hidden..2 * hidden].fill(T::one());
        Lstm {
            w_x: Tensor::uniform(&[4 * hidden, input], INIT_SCALE, rng),
            w_h: Tensor::uniform(&[4 * hidden, hidden], INIT_SCALE, rng),
            b,
        }
    }

    pub fn zeros(input: usize, hidden: usize) -> Self {
        Lstm {
            w_x: Tensor::zeros(&[4 * hidden, input]),
            w_h: Tensor::zeros(&[4 * hidden, hidden]),
            b: Tensor::zeros(&[4 * hidden]),
        }
    }

    pub fn hidden(&self) -> usize {
        self.w_h.shape()[1]
    }

    pub fn input(&self) -> usize {
        self.w_x.shape()[1]
    }

    pub fn named<'a>(&'a self, prefix: &str) -> Vec<(String, &'a Tensor<T>)> {
        vec![
            (format!("{prefix}.w_x"), &self.w_x),
            (format!("{prefix}.w_h"), &self.w_h),
            (format!("{prefix}.b"), &self.b),
        ]
    }

    pub fn named_mut<'a>(&'a mut self, prefix: &str) -> Vec<(String, &'a mut Tensor<T>)> {
        vec![
            (format!("{prefix}.w_x"), &mut self.w_x),
            (format!("{prefix}.w_h"), &mut self.w_h),
            (format!("{prefix}.b"), &mut self.b),
        ]
    }

    /// One cell update with dimension checks.
    pub fn cell(&self, x: &[T], h_prev: &[T], c_prev: &[T]) -> Result<(Vec<T>, Vec<T>)> {
        let h = self.hidden();
        if x.len() != self.input() || h_prev.len() != h || c_prev.len() != h {
            return Err(Error::Argument(format!(
                "lstm_cell expects input {} and state {h}, got {}, {}, {}",
                self.input(),
                x.len(),
                h_prev.len(),
                c_prev.len()
            )));
        }
        let s = self.step(x, h_prev, c_prev);
        Ok((s.h, s.c))
    }

    pub fn step(&self, x: &[T], h_prev: &[T], c_prev: &[T]) -> LstmStep<T> {
        let h = self.hidden();
        let mut a = self.b.data().to_vec();
        matvec_add(&mut a, self.w_x.data(), x);
        matvec_add(&mut a, self.w_h.data(), h_prev);
        for (k, v) in a.iter_mut().enumerate() {
            *v = if (2 * h..3 * h).contains(&k) { v.tanh() } else { sigmoid(*v) };
        }
        let mut c = vec![T::zero(); h];
        let mut tanh_c = vec![T::zero(); h];
        let mut out = vec![T::zero(); h];
        for j in 0..h {
            c[j] = a[h + j] * c_prev[j] + a[j] * a[2 * h + j];
            tanh_c[j] = c[j].tanh();
            out[j] = a[3 * h + j] * tanh_c[j];
        }
        LstmStep {
            x: x.to_vec(),
            h_prev: h_prev.to_vec(),
            c_prev: c_prev.to_vec(),
            gates: a,
            tanh_c,
            c,
            h: out,
        }
    }

    /// Backward through one step. Returns `(dx, dh_prev, dc_prev)`.
    pub fn backward_step(&self, s: &LstmStep<T>, dh: &[T], dc: &[T], grads: &mut Lstm<T>) -> (Vec<T>, Vec<T>, Vec<T>) {
        let h = self.hidden();
        let one = T::one();
        let g = &s.gates;
        let mut da = vec![T::zero(); 4 * h];
        let mut dc_prev = vec![T::zero(); h];
        for j in 0..h {
            let (i, f, gg, o) = (g[j], g[h + j], g[2 * h + j], g[3 * h + j]);
            let tc = s.tanh_c[j];
            let dct = dc[j] + dh[j] * o * (one - tc * tc);
            da[j] = dct * gg * i * (one - i);
            da[h + j] = dct * s.c_prev[j] * f * (one - f);
            da[2 * h + j] = dct * i * (one - gg * gg);
            da[3 * h + j] = dh[j] * tc * o * (one - o);
            dc_prev[j] = dct * f;
        }
        for (gb, &d) in grads.b.data_mut().iter_mut().zip(&da) {
            *gb += d;
        }
        outer_add(grads.w_x.data_mut(), &da, &s.x);
        outer_add(grads.w_h.data_mut(), &da, &s.h_prev);
        let mut dx = vec![T::zero(); s.x.len()];
        matvec_t_add(&mut dx, self.w_x.data(), &da);
        let mut dh_prev = vec![T::zero(); h];
        matvec_t_add(&mut dh_prev, self.w_h.data(), &da);
        (dx, dh_prev, dc_prev)
    }

    /// Run over a sequence (right to left if `reverse`). Steps are returned
    /// indexed by input position.
    pub fn run(&self, inputs: &[Vec<T>], h0: &[T], c0: &[T], reverse: bool) -> Vec<LstmStep<T>> {
        let n = inputs.len();
        let mut steps: Vec<Option<LstmStep<T>>> = (0..n).map(|_| None).collect();
        let mut h = h0.to_vec();
        let mut c = c0.to_vec();
        for k in 0..n {
            let pos = if reverse { n - 1 - k } else { k };
            let s = self.step(&inputs[pos], &h, &c);
            h.clone_from(&s.h);
            c.clone_from(&s.c);
            steps[pos] = Some(s);
        }
        steps.into_iter().map(|s| s.expect("every position visited")).collect()
    }

    /// Backward through [`Lstm::run`] given output gradients per position.
    /// Returns input gradients per position and the initial-state gradients.
    pub fn backward_run(
        &self,
        steps: &[LstmStep<T>],
        dh_out: &[Vec<T>],
        reverse: bool,
        grads: &mut Lstm<T>,
    ) -> (Vec<Vec<T>>, Vec<T>, Vec<T>) {
        let n = steps.len();
        let h = self.hidden();
        let mut dx = vec![Vec::new(); n];
        let mut dh_next = vec![T::zero(); h];
        let mut dc_next = vec![T::zero(); h];
        for k in (0..n).rev() {
            let pos = if reverse { n - 1 - k } else { k };
            let dh: Vec<T> = dh_out[pos].iter().zip(&dh_next).map(|(&a, &b)| a + b).collect();
            let (dxi, dhp, dcp) = self.backward_step(&steps[pos], &dh, &dc_next, grads);
            dx[pos] = dxi;
            dh_next = dhp;
            dc_next = dcp;
        }
        (dx, dh_next, dc_next)
    }
}
