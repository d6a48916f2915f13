//! Dense row-major tensors, at most two dimensions, 64-bit floats.

use crate::error::{Error, Result};
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

/// A row-major matrix. Vectors are `(n, 1)` columns, scalars `(1, 1)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "TensorRepr", into = "TensorRepr")]
pub struct Tensor {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

#[derive(Serialize, Deserialize)]
struct TensorRepr {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl TryFrom<TensorRepr> for Tensor {
    type Error = String;
    fn try_from(r: TensorRepr) -> std::result::Result<Self, String> {
        Tensor::from_vec(r.rows, r.cols, r.data).map_err(|e| e.to_string())
    }
}

impl From<Tensor> for TensorRepr {
    fn from(t: Tensor) -> Self {
        TensorRepr {
            rows: t.rows,
            cols: t.cols,
            data: t.data,
        }
    }
}

impl Tensor {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Tensor {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn from_vec(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        if rows * cols != data.len() {
            return Err(Error::Validation(format!(
                "tensor shape {}x{} does not match {} values",
                rows,
                cols,
                data.len()
            )));
        }
        Ok(Tensor { rows, cols, data })
    }

    /// Column vector from a slice.
    pub fn vector(values: &[f64]) -> Self {
        Tensor {
            rows: values.len(),
            cols: 1,
            data: values.to_vec(),
        }
    }

    pub fn scalar(value: f64) -> Self {
        Tensor {
            rows: 1,
            cols: 1,
            data: vec![value],
        }
    }

    /// Gaussian-initialized tensor with the given standard deviation.
    pub fn randn<R: Rng>(rng: &mut R, rows: usize, cols: usize, sd: f64) -> Self {
        let data = (0..rows * cols)
            .map(|_| {
                let z: f64 = rng.sample(StandardNormal);
                z * sd
            })
            .collect();
        Tensor { rows, cols, data }
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

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn is_scalar(&self) -> bool {
        self.rows == 1 && self.cols == 1
    }

    pub fn get(&self, r: usize, c: usize) -> f64 {
        self.data[r * self.cols + c]
    }

    pub fn set(&mut self, r: usize, c: usize, v: f64) {
        self.data[r * self.cols + c] = v;
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn scalar_value(&self) -> f64 {
        debug_assert!(self.is_scalar());
        self.data[0]
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    /// `self @ other`, with shape checking.
    pub fn matmul(&self, other: &Tensor) -> Result<Tensor> {
        if self.cols != other.rows {
            return Err(Error::Validation(format!(
                "matmul shape mismatch: {}x{} @ {}x{}",
                self.rows, self.cols, other.rows, other.cols
            )));
        }
        let mut out = Tensor::zeros(self.rows, other.cols);
        if other.cols == 1 {
            // Matrix × vector: one dot product per output row.
            for (i, d) in out.data.iter_mut().enumerate() {
                let row = &self.data[i * self.cols..(i + 1) * self.cols];
                *d = row.iter().zip(&other.data).map(|(a, b)| a * b).sum();
            }
            return Ok(out);
        }
        for i in 0..self.rows {
            for k in 0..self.cols {
                let a = self.data[i * self.cols + k];
                if a == 0.0 {
                    continue;
                }
                let row = &other.data[k * other.cols..(k + 1) * other.cols];
                let dst = &mut out.data[i * other.cols..(i + 1) * other.cols];
                for (d, &b) in dst.iter_mut().zip(row) {
                    *d += a * b;
                }
            }
        }
        Ok(out)
    }

    /// `self · otherᵀ` without materializing the transpose.
    pub fn matmul_nt(&self, other: &Tensor) -> Result<Tensor> {
        if self.cols != other.cols {
            return Err(Error::Validation(format!(
                "matmul_nt shape mismatch: {}x{} @ ({}x{})ᵀ",
                self.rows, self.cols, other.rows, other.cols
            )));
        }
        let mut out = Tensor::zeros(self.rows, other.rows);
        for i in 0..self.rows {
            let a = &self.data[i * self.cols..(i + 1) * self.cols];
            let dst = &mut out.data[i * other.rows..(i + 1) * other.rows];
            for (j, d) in dst.iter_mut().enumerate() {
                let b = &other.data[j * other.cols..(j + 1) * other.cols];
                *d = a.iter().zip(b).map(|(x, y)| x * y).sum();
            }
        }
        Ok(out)
    }

    /// `self += a · bᵀ`, fused to avoid a gradient-sized temporary.
    pub fn add_matmul_nt(&mut self, a: &Tensor, b: &Tensor) -> Result<()> {
        if a.cols != b.cols || self.rows != a.rows || self.cols != b.rows {
            return Err(Error::Validation(format!(
                "add_matmul_nt shape mismatch: {}x{} += {}x{} @ ({}x{})ᵀ",
                self.rows, self.cols, a.rows, a.cols, b.rows, b.cols
            )));
        }
        if a.cols == 1 {
            // Outer product of two column vectors.
            for (i, &av) in a.data.iter().enumerate() {
                if av == 0.0 {
                    continue;
                }
                let dst = &mut self.data[i * self.cols..(i + 1) * self.cols];
                for (d, &bv) in dst.iter_mut().zip(&b.data) {
                    *d += av * bv;
                }
            }
            return Ok(());
        }
        for i in 0..a.rows {
            let ar = &a.data[i * a.cols..(i + 1) * a.cols];
            let dst = &mut self.data[i * self.cols..(i + 1) * self.cols];
            for (j, d) in dst.iter_mut().enumerate() {
                let br = &b.data[j * b.cols..(j + 1) * b.cols];
                *d += ar.iter().zip(br).map(|(x, y)| x * y).sum::<f64>();
            }
        }
        Ok(())
    }

    /// `self += aᵀ · b`, fused to avoid a gradient-sized temporary.
    pub fn add_matmul_tn(&mut self, a: &Tensor, b: &Tensor) -> Result<()> {
        if a.rows != b.rows || self.rows != a.cols || self.cols != b.cols {
            return Err(Error::Validation(format!(
                "add_matmul_tn shape mismatch: {}x{} += ({}x{})ᵀ @ {}x{}",
                self.rows, self.cols, a.rows, a.cols, b.rows, b.cols
            )));
        }
        if b.cols == 1 {
            // Accumulate bᵢ-scaled rows of `a` into the output vector.
            for (i, &bv) in b.data.iter().enumerate() {
                if bv == 0.0 {
                    continue;
                }
                let ar = &a.data[i * a.cols..(i + 1) * a.cols];
                for (d, &av) in self.data.iter_mut().zip(ar) {
                    *d += av * bv;
                }
            }
            return Ok(());
        }
        for i in 0..a.rows {
            let ar = &a.data[i * a.cols..(i + 1) * a.cols];
            let br = &b.data[i * b.cols..(i + 1) * b.cols];
            for (k, &av) in ar.iter().enumerate() {
                if av == 0.0 {
                    continue;
                }
                let dst = &mut self.data[k * self.cols..(k + 1) * self.cols];
                for (d, &bv) in dst.iter_mut().zip(br) {
                    *d += av * bv;
                }
            }
        }
        Ok(())
    }

    /// `self += s · a`.
    pub fn add_scaled(&mut self, a: &Tensor, s: f64) -> Result<()> {
        if self.shape() != a.shape() {
            return Err(Error::Validation(format!(
                "add_scaled shape mismatch: {:?} vs {:?}",
                self.shape(),
                a.shape()
            )));
        }
        for (d, &v) in self.data.iter_mut().zip(&a.data) {
            *d += s * v;
        }
        Ok(())
    }

    /// `selfᵀ · other` without materializing the transpose.
    pub fn matmul_tn(&self, other: &Tensor) -> Result<Tensor> {
        if self.rows != other.rows {
            return Err(Error::Validation(format!(
                "matmul_tn shape mismatch: ({}x{})ᵀ @ {}x{}",
                self.rows, self.cols, other.rows, other.cols
            )));
        }
        let mut out = Tensor::zeros(self.cols, other.cols);
        for i in 0..self.rows {
            let a = &self.data[i * self.cols..(i + 1) * self.cols];
            let b = &other.data[i * other.cols..(i + 1) * other.cols];
            for (k, &av) in a.iter().enumerate() {
                if av == 0.0 {
                    continue;
                }
                let dst = &mut out.data[k * other.cols..(k + 1) * other.cols];
                for (d, &bv) in dst.iter_mut().zip(b) {
                    *d += av * bv;
                }
            }
        }
        Ok(out)
    }

    pub fn transpose(&self) -> Tensor {
        let mut out = Tensor::zeros(self.cols, self.rows);
        for r in 0..self.rows {
            for c in 0..self.cols {
                out.data[c * self.rows + r] = self.data[r * self.cols + c];
            }
        }
        out
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Tensor {
        Tensor {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    pub fn add(&self, other: &Tensor) -> Result<Tensor> {
        if self.shape() != other.shape() {
            return Err(Error::Validation(format!(
                "add shape mismatch: {:?} vs {:?}",
                self.shape(),
                other.shape()
            )));
        }
        let data = self
            .data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| a + b)
            .collect();
        Ok(Tensor {
            rows: self.rows,
            cols: self.cols,
            data,
        })
    }

    pub fn scale(&self, k: f64) -> Tensor {
        self.map(|v| v * k)
    }

    pub fn dot(&self, other: &Tensor) -> Result<f64> {
        if self.shape() != other.shape() {
            return Err(Error::Validation(format!(
                "dot shape mismatch: {:?} vs {:?}",
                self.shape(),
                other.shape()
            )));
        }
        Ok(self
            .data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| a * b)
            .sum())
    }

    pub fn frobenius_norm_sq(&self) -> f64 {
        self.data.iter().map(|v| v * v).sum()
    }
}
