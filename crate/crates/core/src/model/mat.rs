//! Dense row-major f64 matrices and the handful of kernels the network
//! needs. Double precision keeps the trainer finite-difference checkable.

use serde::{Deserialize, Serialize};

use crate::rng::Rng;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Mat {
    pub rows: usize,
    pub cols: usize,
    pub data: Vec<f64>,
}

impl Mat {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Mat {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn gauss(rows: usize, cols: usize, std: f64, rng: &mut Rng) -> Self {
        Mat {
            rows,
            cols,
            data: (0..rows * cols).map(|_| std * rng.gauss()).collect(),
        }
    }

    #[inline]
    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    #[inline]
    pub fn row_mut(&mut self, i: usize) -> &mut [f64] {
        &mut self.data[i * self.cols..(i + 1) * self.cols]
    }

    #[inline]
    pub fn at(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.cols + j]
    }

    #[inline]
    pub fn at_mut(&mut self, i: usize, j: usize) -> &mut f64 {
        &mut self.data[i * self.cols + j]
    }

    pub fn zero_out(&mut self) {
        self.data.iter_mut().for_each(|v| *v = 0.0);
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    /// self -= lr * grad, elementwise.
    pub fn sgd_step(&mut self, grad: &Mat, lr: f64) {
        debug_assert_eq!(self.data.len(), grad.data.len());
        for (w, g) in self.data.iter_mut().zip(&grad.data) {
            *w -= lr * g;
        }
    }
}

#[inline]
pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    debug_assert_eq!(a.len(), b.len());
    let mut acc = 0.0;
    for (x, y) in a.iter().zip(b) {
        acc += x * y;
    }
    acc
}

/// y += a * x
#[inline]
pub fn axpy(y: &mut [f64], a: f64, x: &[f64]) {
    debug_assert_eq!(y.len(), x.len());
    for (yi, xi) in y.iter_mut().zip(x) {
        *yi += a * xi;
    }
}

/// C = A * W^T where W is stored (out, in): the linear layer.
pub fn linear(input: &Mat, weights: &Mat) -> Mat {
    debug_assert_eq!(input.cols, weights.cols);
    let mut out = Mat::zeros(input.rows, weights.rows);
    for i in 0..input.rows {
        let x = input.row(i);
        let row_out = out.row_mut(i);
        for (o, slot) in row_out.iter_mut().enumerate() {
            *slot = dot(x, weights.row(o));
        }
    }
    out
}

/// d_weights += d_out^T * input; returns d_input = d_out * W.
pub fn linear_backward(
    d_out: &Mat,
    input: &Mat,
    weights: &Mat,
    d_weights: &mut Mat,
) -> Mat {
    debug_assert_eq!(d_out.rows, input.rows);
    let mut d_input = Mat::zeros(input.rows, input.cols);
    for n in 0..d_out.rows {
        let dy = d_out.row(n);
        let x = input.row(n);
        let dx = d_input.row_mut(n);
        for (o, &g) in dy.iter().enumerate() {
            if g != 0.0 {
                axpy(d_weights.row_mut(o), g, x);
                axpy(dx, g, weights.row(o));
            }
        }
    }
    d_input
}

/// In-place softmax over a slice (max-subtracted for stability).
pub fn softmax_inplace(row: &mut [f64]) {
    let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let mut sum = 0.0;
    for v in row.iter_mut() {
        *v = (*v - max).exp();
        sum += *v;
    }
    for v in row.iter_mut() {
        *v /= sum;
    }
}

/// log(sum(exp(row))), max-subtracted.
pub fn log_sum_exp(row: &[f64]) -> f64 {
    let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    max + row.iter().map(|v| (v - max).exp()).sum::<f64>().ln()
}
