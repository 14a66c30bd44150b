//! Dense row-major matrices and the named-parameter visitor used by the
//! optimizer, the checkpoint container and the finite-difference harness.

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct Matrix {
    pub rows: usize,
    pub cols: usize,
    pub data: Vec<f64>,
}

impl Matrix {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self {
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

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let r = rows.len();
        let c = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|row| row.len() != c) {
            return Err(Error::Shape("ragged rows".into()));
        }
        Ok(Self {
            rows: r,
            cols: c,
            data: rows.iter().flatten().copied().collect(),
        })
    }

    pub fn from_vec(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(Error::Shape(format!(
                "{} values for a {rows}x{cols} matrix",
                data.len()
            )));
        }
        Ok(Self { rows, cols, data })
    }

    #[inline]
    pub fn get(&self, r: usize, c: usize) -> f64 {
        self.data[r * self.cols + c]
    }

    #[inline]
    pub fn set(&mut self, r: usize, c: usize, v: f64) {
        self.data[r * self.cols + c] = v;
    }

    pub fn row(&self, r: usize) -> &[f64] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }

    pub fn row_mut(&mut self, r: usize) -> &mut [f64] {
        let c = self.cols;
        &mut self.data[r * c..(r + 1) * c]
    }

    pub fn is_square(&self) -> bool {
        self.rows == self.cols
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Self {
        Self {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }
}

/// `out[j] = bias[j] + sum_i x[i] * w[i, j]` for `w` of shape `[in x out]`.
///
/// Zero inputs are skipped, so sparse spike vectors cost only their active rows.
pub fn affine_in_out(w: &Matrix, bias: &[f64], x: &[f64], out: &mut [f64]) {
    debug_assert_eq!(w.rows, x.len());
    debug_assert_eq!(w.cols, out.len());
    out.copy_from_slice(bias);
    for (i, &xi) in x.iter().enumerate() {
        if xi == 0.0 {
            continue;
        }
        for (o, &wij) in out.iter_mut().zip(w.row(i)) {
            *o += xi * wij;
        }
    }
}

/// Accumulates the gradients of [`affine_in_out`]: `dw += x g^T`, `dx += w g`.
pub fn affine_in_out_backward(
    w: &Matrix,
    x: &[f64],
    grad_out: &[f64],
    dw: &mut Matrix,
    dbias: &mut [f64],
    dx: Option<&mut [f64]>,
) {
    for (db, &g) in dbias.iter_mut().zip(grad_out) {
        *db += g;
    }
    for (i, &xi) in x.iter().enumerate() {
        if xi == 0.0 {
            continue;
        }
        for (d, &g) in dw.row_mut(i).iter_mut().zip(grad_out) {
            *d += xi * g;
        }
    }
    if let Some(dx) = dx {
        for (i, d) in dx.iter_mut().enumerate() {
            *d += w.row(i).iter().zip(grad_out).map(|(a, b)| a * b).sum::<f64>();
        }
    }
}

#[inline]
pub fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

#[inline]
pub fn logit(p: f64) -> f64 {
    (p / (1.0 - p)).ln()
}

/// A named, shaped view of one parameter tensor.
#[derive(Debug, Clone, PartialEq)]
pub struct NamedTensor {
    pub name: String,
    pub shape: Vec<usize>,
    pub data: Vec<f64>,
}

/// Anything that exposes its trainable tensors by name in a fixed order.
///
/// Gradient containers are the same type as the parameters they differentiate,
/// so both can be walked in lockstep.
pub trait Parameters {
    fn visit(&self, f: &mut dyn FnMut(&str, &[usize], &[f64]));
    fn visit_mut(&mut self, f: &mut dyn FnMut(&str, &mut [f64]));

    fn named_tensors(&self) -> Vec<NamedTensor> {
        let mut out = Vec::new();
        self.visit(&mut |name, shape, data| {
            out.push(NamedTensor {
                name: name.to_string(),
                shape: shape.to_vec(),
                data: data.to_vec(),
            })
        });
        out
    }

    fn param_count(&self) -> usize {
        let mut n = 0;
        self.visit(&mut |_, _, d| n += d.len());
        n
    }

    /// Overwrites tensors by name; every tensor must be present with a matching length.
    fn assign_named(&mut self, tensors: &[NamedTensor]) -> Result<()> {
        let mut err = None;
        self.visit_mut(&mut |name, data| {
            if err.is_some() {
                return;
            }
            match tensors.iter().find(|t| t.name == name) {
                Some(t) if t.data.len() == data.len() => data.copy_from_slice(&t.data),
                Some(t) => {
                    err = Some(Error::Shape(format!(
                        "tensor `{name}` has {} values, expected {}",
                        t.data.len(),
                        data.len()
                    )))
                }
                None => err = Some(Error::Shape(format!("tensor `{name}` missing"))),
            }
        });
        err.map_or(Ok(()), Err)
    }

    fn flat_values(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.param_count());
        self.visit(&mut |_, _, d| out.extend_from_slice(d));
        out
    }

    fn set_flat_values(&mut self, values: &[f64]) {
        let mut off = 0;
        self.visit_mut(&mut |_, d| {
            d.copy_from_slice(&values[off..off + d.len()]);
            off += d.len();
        });
        assert_eq!(off, values.len(), "flat parameter length mismatch");
    }
}
