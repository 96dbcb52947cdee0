//! Dense f64 kernel: a row-major [`Matrix`], the handful of forward ops the
//! model needs together with their backward passes, a parameter store with
//! Adam, initializers, and a finite-difference gradient checker.
//!
//! Vectors are plain `&[f64]` slices. Public entry points check shapes and
//! return [`Error::Usage`]; the `*_into` / `*_acc` variants used on hot paths
//! only `debug_assert!`.

mod gradcheck;
mod init;
mod param;

pub use gradcheck::{grad_check, grad_check_piecewise, GradCheck, GradCheckReport};
pub use init::{init_normal, init_xavier, RngStream};
pub use param::{AdamConfig, ParamId, ParamStore};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const DEFAULT_LEAKY_SLOPE: f64 = 0.01;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Matrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl Matrix {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Matrix {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Self::zeros(n, n);
        for i in 0..n {
            m.data[i * n + i] = 1.0;
        }
        m
    }

    pub fn from_vec(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(Error::usage(format!(
                "{} values cannot fill a {rows}x{cols} matrix",
                data.len()
            )));
        }
        Ok(Matrix { rows, cols, data })
    }

    pub fn from_rows(rows: &[&[f64]]) -> Result<Self> {
        let cols = rows.first().map_or(0, |r| r.len());
        if rows.iter().any(|r| r.len() != cols) {
            return Err(Error::usage("ragged rows"));
        }
        Ok(Matrix {
            rows: rows.len(),
            cols,
            data: rows.concat(),
        })
    }

    pub fn rows(&self) -> usize {
        self.rows
    }
    pub fn cols(&self) -> usize {
        self.cols
    }
    pub fn shape(&self) -> (usize, usize) {
        (self.rows, self.cols)
    }
    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }
    pub fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.data
    }

    #[inline]
    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    #[inline]
    pub fn row_mut(&mut self, i: usize) -> &mut [f64] {
        &mut self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn get(&self, r: usize, c: usize) -> f64 {
        self.data[r * self.cols + c]
    }

    pub fn fill(&mut self, v: f64) {
        self.data.iter_mut().for_each(|x| *x = v);
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Matrix {
        Matrix {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().map(|&x| f(x)).collect(),
        }
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|x| x.is_finite())
    }
}

/// `y = W x`.
pub fn linear(w: &Matrix, x: &[f64]) -> Result<Vec<f64>> {
    if w.cols != x.len() {
        return Err(Error::usage(format!(
            "linear: {}x{} matrix applied to length-{} vector",
            w.rows,
            w.cols,
            x.len()
        )));
    }
    let mut y = vec![0.0; w.rows];
    linear_into(w, x, &mut y);
    Ok(y)
}

#[inline]
pub fn linear_into(w: &Matrix, x: &[f64], y: &mut [f64]) {
    debug_assert_eq!(w.cols, x.len());
    debug_assert_eq!(w.rows, y.len());
    for (r, out) in y.iter_mut().enumerate() {
        *out = dot_unchecked(w.row(r), x);
    }
}

/// Backward of `y = W x`: `dW += dy xᵀ`, `dx += Wᵀ dy`.
pub fn linear_backward(
    w: &Matrix,
    x: &[f64],
    dy: &[f64],
    dw: &mut Matrix,
    dx: &mut [f64],
) -> Result<()> {
    if w.cols != x.len() || w.rows != dy.len() || dw.shape() != w.shape() || dx.len() != x.len() {
        return Err(Error::usage("linear_backward: shape mismatch"));
    }
    linear_backward_acc(w, x, dy, dw, dx);
    Ok(())
}

#[inline]
pub fn linear_backward_acc(w: &Matrix, x: &[f64], dy: &[f64], dw: &mut Matrix, dx: &mut [f64]) {
    for (r, &g) in dy.iter().enumerate() {
        if g == 0.0 {
            continue;
        }
        axpy(g, x, dw.row_mut(r));
        axpy(g, w.row(r), dx);
    }
}

#[inline]
pub(crate) fn dot_unchecked(x: &[f64], y: &[f64]) -> f64 {
    x.iter().zip(y).map(|(a, b)| a * b).sum()
}

/// `y += a x`
#[inline]
pub fn axpy(a: f64, x: &[f64], y: &mut [f64]) {
    debug_assert_eq!(x.len(), y.len());
    for (yi, xi) in y.iter_mut().zip(x) {
        *yi += a * xi;
    }
}

pub fn dot(x: &[f64], y: &[f64]) -> Result<f64> {
    if x.len() != y.len() {
        return Err(Error::usage(format!("dot: lengths {} and {}", x.len(), y.len())));
    }
    Ok(dot_unchecked(x, y))
}

/// Backward of `z = x·y`: `dx += dz y`, `dy += dz x`.
pub fn dot_backward(x: &[f64], y: &[f64], dz: f64, dx: &mut [f64], dy: &mut [f64]) {
    axpy(dz, y, dx);
    axpy(dz, x, dy);
}

#[inline]
pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Derivative of the sigmoid expressed through its output.
#[inline]
pub fn sigmoid_grad(y: f64) -> f64 {
    y * (1.0 - y)
}

#[inline]
pub fn relu(x: f64) -> f64 {
    x.max(0.0)
}

#[inline]
pub fn relu_grad(x: f64) -> f64 {
    if x > 0.0 {
        1.0
    } else {
        0.0
    }
}

#[inline]
pub fn leaky_relu(x: f64, slope: f64) -> f64 {
    if x > 0.0 {
        x
    } else {
        slope * x
    }
}

#[inline]
pub fn leaky_relu_grad(x: f64, slope: f64) -> f64 {
    if x > 0.0 {
        1.0
    } else {
        slope
    }
}

/// Elementwise max over rows plus, per coordinate, the position of the
/// winning row. Ties go to the earliest row.
#[derive(Debug, Clone, PartialEq)]
pub struct MaxPool {
    pub value: Vec<f64>,
    /// Empty when there were no rows.
    pub argmax: Vec<usize>,
}

impl MaxPool {
    /// Routes `dy` to the winning rows; `row_grad(pos, coord, g)` receives
    /// each contribution. Nothing flows when the pool was empty.
    pub fn backward(&self, dy: &[f64], mut row_grad: impl FnMut(usize, usize, f64)) {
        for (k, (&pos, &g)) in self.argmax.iter().zip(dy).enumerate() {
            row_grad(pos, k, g);
        }
    }
}

pub fn maxpool(rows: &[&[f64]], dim: usize) -> Result<MaxPool> {
    if let Some(bad) = rows.iter().find(|r| r.len() != dim) {
        return Err(Error::usage(format!(
            "maxpool: row of length {} where {dim} expected",
            bad.len()
        )));
    }
    Ok(maxpool_iter(rows.iter().copied(), dim))
}

pub(crate) fn maxpool_iter<'a>(rows: impl Iterator<Item = &'a [f64]>, dim: usize) -> MaxPool {
    let mut value = vec![0.0; dim];
    let mut argmax = Vec::new();
    for (pos, row) in rows.enumerate() {
        if pos == 0 {
            value.copy_from_slice(row);
            argmax = vec![0; dim];
            continue;
        }
        for k in 0..dim {
            if row[k] > value[k] {
                value[k] = row[k];
                argmax[k] = pos;
            }
        }
    }
    MaxPool { value, argmax }
}

/// Softmax with max-subtraction.
pub fn masked_softmax(logits: &[f64]) -> Result<Vec<f64>> {
    if logits.is_empty() {
        return Err(Error::usage("softmax over an empty set"));
    }
    let m = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut out: Vec<f64> = logits.iter().map(|&l| (l - m).exp()).collect();
    let z: f64 = out.iter().sum();
    out.iter_mut().for_each(|p| *p /= z);
    Ok(out)
}

/// Backward of softmax given its output `p` and upstream `dp`.
pub fn softmax_backward(p: &[f64], dp: &[f64]) -> Vec<f64> {
    let inner = dot_unchecked(p, dp);
    p.iter().zip(dp).map(|(pi, gi)| pi * (gi - inner)).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn central_diff(f: impl Fn(f64) -> f64, x: f64) -> f64 {
        let h = 1e-6;
        (f(x + h) - f(x - h)) / (2.0 * h)
    }

    #[test]
    fn linear_examples() {
        let id = Matrix::identity(3);
        assert_eq!(linear(&id, &[1.0, -2.0, 3.5]).unwrap(), vec![1.0, -2.0, 3.5]);
        let w = Matrix::from_rows(&[&[1.0, 2.0], &[3.0, 4.0]]).unwrap();
        assert_eq!(linear(&w, &[1.0, 1.0]).unwrap(), vec![3.0, 7.0]);
        assert!(linear(&w, &[1.0]).is_err());
    }

    #[test]
    fn linear_weight_gradient_of_sum_is_outer_product() {
        let w = Matrix::from_rows(&[&[0.3, -1.2, 0.5], &[2.0, 0.1, -0.7]]).unwrap();
        let x = [0.4, -0.9, 1.3];
        let mut dw = Matrix::zeros(2, 3);
        let mut dx = vec![0.0; 3];
        linear_backward(&w, &x, &[1.0, 1.0], &mut dw, &mut dx).unwrap();
        // finite-difference oracle on sum(Wx)
        for r in 0..2 {
            for c in 0..3 {
                let f = |v: f64| {
                    let mut w2 = w.clone();
                    w2.row_mut(r)[c] = v;
                    linear(&w2, &x).unwrap().iter().sum::<f64>()
                };
                let num = central_diff(f, w.get(r, c));
                assert!((num - x[c]).abs() < 1e-8);
                assert_eq!(dw.get(r, c), x[c]);
            }
        }
        for c in 0..3 {
            assert!((dx[c] - (w.get(0, c) + w.get(1, c))).abs() < 1e-15);
        }
    }

    #[test]
    fn activation_examples() {
        assert_eq!(sigmoid(0.0), 0.5);
        assert_eq!(relu(-3.0), 0.0);
        assert_eq!(relu(3.0), 3.0);
        assert!((leaky_relu(-1.0, 0.2) + 0.2).abs() < 1e-15);
        assert_eq!(leaky_relu(-1.0, DEFAULT_LEAKY_SLOPE), -0.01);
        assert!(sigmoid(-800.0).is_finite() && sigmoid(800.0) == 1.0);
    }

    #[test]
    fn activation_derivatives_match_finite_differences() {
        for &x in &[-2.3, -0.4, 0.7, 3.1] {
            assert!((sigmoid_grad(sigmoid(x)) - central_diff(sigmoid, x)).abs() < 1e-8);
            assert!((relu_grad(x) - central_diff(relu, x)).abs() < 1e-8);
            let lr = |v| leaky_relu(v, 0.2);
            assert!((leaky_relu_grad(x, 0.2) - central_diff(lr, x)).abs() < 1e-8);
        }
    }

    #[test]
    fn maxpool_examples() {
        let p = maxpool(&[&[1.0, 5.0], &[3.0, 2.0]], 2).unwrap();
        assert_eq!(p.value, vec![3.0, 5.0]);
        assert_eq!(p.argmax, vec![1, 0]);
        let empty = maxpool(&[], 4).unwrap();
        assert_eq!(empty.value, vec![0.0; 4]);
        assert!(empty.argmax.is_empty());
        assert!(maxpool(&[&[1.0], &[1.0, 2.0]], 1).is_err());
    }

    #[test]
    fn maxpool_ties_route_to_first_row() {
        let p = maxpool(&[&[2.0], &[2.0], &[1.0]], 1).unwrap();
        let mut got = vec![0.0; 3];
        p.backward(&[1.5], |pos, _, g| got[pos] += g);
        assert_eq!(got, vec![1.5, 0.0, 0.0]);
    }

    #[test]
    fn softmax_examples() {
        assert_eq!(masked_softmax(&[4.2]).unwrap(), vec![1.0]);
        assert_eq!(masked_softmax(&[-7.0, -7.0]).unwrap(), vec![0.5, 0.5]);
        let p = masked_softmax(&[2f64.ln(), 0.0]).unwrap();
        assert!((p[0] - 2.0 / 3.0).abs() < 1e-15 && (p[1] - 1.0 / 3.0).abs() < 1e-15);
        assert!(masked_softmax(&[]).is_err());
        let big = masked_softmax(&[1000.0, 999.0]).unwrap();
        assert!(big.iter().all(|v| v.is_finite()));
    }

    #[test]
    fn dot_examples() {
        assert_eq!(dot(&[1.0, 2.0], &[3.0, 4.0]).unwrap(), 11.0);
        assert_eq!(dot(&[1.0, 2.0], &[0.0, 0.0]).unwrap(), 0.0);
        assert!(dot(&[1.0], &[1.0, 2.0]).is_err());
    }

    proptest! {
        #[test]
        fn softmax_normalizes_and_ignores_shifts(
            logits in prop::collection::vec(-30.0..30.0f64, 1..12),
            shift in -100.0..100.0f64,
        ) {
            let p = masked_softmax(&logits).unwrap();
            prop_assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-12);
            prop_assert!(p.iter().all(|&v| v > 0.0 && v <= 1.0));
            let shifted: Vec<f64> = logits.iter().map(|l| l + shift).collect();
            let q = masked_softmax(&shifted).unwrap();
            for (a, b) in p.iter().zip(&q) {
                prop_assert!((a - b).abs() < 1e-10);
            }
        }

        #[test]
        fn softmax_backward_matches_finite_differences(
            logits in prop::collection::vec(-3.0..3.0f64, 1..6),
            weights in prop::collection::vec(-2.0..2.0f64, 6),
        ) {
            let n = logits.len();
            let loss = |l: &[f64]| -> f64 {
                masked_softmax(l).unwrap().iter().zip(&weights).map(|(p, w)| p * w).sum()
            };
            let p = masked_softmax(&logits).unwrap();
            let grad = softmax_backward(&p, &weights[..n]);
            for i in 0..n {
                let mut hi = logits.clone();
                let mut lo = logits.clone();
                hi[i] += 1e-6;
                lo[i] -= 1e-6;
                let num = (loss(&hi) - loss(&lo)) / 2e-6;
                prop_assert!((num - grad[i]).abs() < 1e-7);
            }
        }

        #[test]
        fn maxpool_is_permutation_invariant(
            rows in prop::collection::vec(prop::collection::vec(-5.0..5.0f64, 3), 0..8),
            seed in any::<u64>(),
        ) {
            use rand::seq::SliceRandom;
            use rand::SeedableRng;
            let refs: Vec<&[f64]> = rows.iter().map(Vec::as_slice).collect();
            let mut shuffled = refs.clone();
            shuffled.shuffle(&mut rand_chacha::ChaCha8Rng::seed_from_u64(seed));
            prop_assert_eq!(maxpool(&refs, 3).unwrap().value, maxpool(&shuffled, 3).unwrap().value);
        }

        #[test]
        fn dot_commutes(xy in prop::collection::vec((-10.0..10.0f64, -10.0..10.0f64), 0..16)) {
            let (x, y): (Vec<f64>, Vec<f64>) = xy.into_iter().unzip();
            prop_assert_eq!(dot(&x, &y).unwrap(), dot(&y, &x).unwrap());
        }
    }
}
