use serde::{Deserialize, Serialize};

/// Dense row-major matrix. Rows index inputs (last row is the bias), columns
/// index outputs.
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

    pub fn from_fn(rows: usize, cols: usize, mut f: impl FnMut(usize, usize) -> f64) -> Self {
        let mut data = Vec::with_capacity(rows * cols);
        for r in 0..rows {
            for c in 0..cols {
                data.push(f(r, c));
            }
        }
        Matrix { rows, cols, data }
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn get(&self, r: usize, c: usize) -> f64 {
        self.data[r * self.cols + c]
    }

    pub fn set(&mut self, r: usize, c: usize, v: f64) {
        self.data[r * self.cols + c] = v;
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.data
    }

    /// `out = W^T [input; 1]`, with `input.len() == rows - 1`.
    pub fn affine(&self, input: &[f64], out: &mut [f64]) {
        debug_assert_eq!(input.len() + 1, self.rows);
        debug_assert_eq!(out.len(), self.cols);
        let bias = &self.data[(self.rows - 1) * self.cols..];
        out.copy_from_slice(bias);
        for (i, &x) in input.iter().enumerate() {
            if x == 0.0 {
                continue;
            }
            let row = &self.data[i * self.cols..(i + 1) * self.cols];
            for (o, w) in out.iter_mut().zip(row) {
                *o += x * w;
            }
        }
    }

    /// Accumulates the gradient of `W^T [input; 1]` for upstream `delta`.
    pub fn add_outer(&mut self, input: &[f64], delta: &[f64]) {
        let cols = self.cols;
        for (i, &x) in input.iter().chain(std::iter::once(&1.0)).enumerate() {
            if x == 0.0 {
                continue;
            }
            let row = &mut self.data[i * cols..(i + 1) * cols];
            for (g, d) in row.iter_mut().zip(delta) {
                *g += x * d;
            }
        }
    }

    /// `W[..rows-1] · delta`, the gradient with respect to the input.
    pub fn back(&self, delta: &[f64], out: &mut [f64]) {
        for (i, o) in out.iter_mut().enumerate() {
            let row = &self.data[i * self.cols..(i + 1) * self.cols];
            *o = row.iter().zip(delta).map(|(w, d)| w * d).sum();
        }
    }

    pub fn scale(&mut self, s: f64) {
        for v in &mut self.data {
            *v *= s;
        }
    }

    /// `self -= lr * other`.
    pub fn sub_scaled(&mut self, other: &Matrix, lr: f64) {
        debug_assert_eq!(self.data.len(), other.data.len());
        for (a, b) in self.data.iter_mut().zip(&other.data) {
            *a -= lr * b;
        }
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }
}
