//! Log-domain arithmetic and the small dense arrays used by the lattices.
//!
//! Log-weights use [`LOG_ZERO`] rather than `-inf` for impossible events, so
//! sums of log-weights stay finite and never produce NaN.

use crate::error::{Error, Result};

/// Log-weight of an impossible event.
pub const LOG_ZERO: f64 = -1e30;

/// Values at or below this are treated as [`LOG_ZERO`].
const LOG_ZERO_THRESHOLD: f64 = LOG_ZERO / 2.0;

#[inline]
pub fn is_log_zero(v: f64) -> bool {
    v <= LOG_ZERO_THRESHOLD
}

/// `ln(exp(a) + exp(b))`.
#[inline]
pub fn log_add(a: f64, b: f64) -> f64 {
    let (hi, lo) = if a >= b { (a, b) } else { (b, a) };
    if is_log_zero(hi) {
        return LOG_ZERO;
    }
    if is_log_zero(lo) {
        return hi;
    }
    hi + (lo - hi).exp().ln_1p()
}

/// Stable `ln Σ exp(v_i)`.
pub fn log_sum_exp(values: &[f64]) -> Result<f64> {
    if values.is_empty() {
        return Err(Error::usage("log_sum_exp of an empty sequence"));
    }
    Ok(log_sum_exp_unchecked(values))
}

pub(crate) fn log_sum_exp_unchecked(values: &[f64]) -> f64 {
    let max = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if is_log_zero(max) {
        return LOG_ZERO;
    }
    let sum: f64 = values
        .iter()
        .filter(|v| !is_log_zero(**v))
        .map(|v| (v - max).exp())
        .sum();
    max + sum.ln()
}

/// Log-probabilities of a vector of raw activations.
pub fn log_softmax(values: &[f64]) -> Result<Vec<f64>> {
    if values.is_empty() {
        return Err(Error::usage("log_softmax of an empty vector"));
    }
    if let Some(i) = values.iter().position(|v| !v.is_finite()) {
        return Err(Error::usage(format!(
            "log_softmax input {i} is not finite ({})",
            values[i]
        )));
    }
    let mut out = values.to_vec();
    log_softmax_in_place(&mut out);
    Ok(out)
}

/// In-place log-softmax over finite inputs.
pub(crate) fn log_softmax_in_place(values: &mut [f64]) {
    let lse = log_sum_exp_unchecked(values);
    for v in values.iter_mut() {
        *v -= lse;
    }
}

/// Probabilities of a vector of raw activations.
pub fn softmax(values: &[f64]) -> Vec<f64> {
    let max = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut out: Vec<f64> = values.iter().map(|v| (v - max).exp()).collect();
    let sum: f64 = out.iter().sum();
    for v in out.iter_mut() {
        *v /= sum;
    }
    out
}

/// Index of the first maximal element.
pub fn argmax(values: &[f64]) -> Option<usize> {
    let mut best: Option<(usize, f64)> = None;
    for (i, &v) in values.iter().enumerate() {
        match best {
            Some((_, b)) if v <= b => {}
            _ => best = Some((i, v)),
        }
    }
    best.map(|(i, _)| i)
}

/// Dense row-major 3-D array indexed `(i, j, k)`.
///
/// Lattice quantities are laid out `(t, u, k)`: frame, label position, output
/// index.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor3 {
    dims: (usize, usize, usize),
    data: Vec<f64>,
}

impl Tensor3 {
    pub fn zeros(d0: usize, d1: usize, d2: usize) -> Self {
        Self::filled(d0, d1, d2, 0.0)
    }

    pub fn filled(d0: usize, d1: usize, d2: usize, value: f64) -> Self {
        Self {
            dims: (d0, d1, d2),
            data: vec![value; d0 * d1 * d2],
        }
    }

    pub fn from_vec(dims: (usize, usize, usize), data: Vec<f64>) -> Result<Self> {
        let expected = dims.0 * dims.1 * dims.2;
        if data.len() != expected {
            return Err(Error::usage(format!(
                "tensor of dims {dims:?} needs {expected} values, got {}",
                data.len()
            )));
        }
        Ok(Self { dims, data })
    }

    pub fn from_fn(
        dims: (usize, usize, usize),
        mut f: impl FnMut(usize, usize, usize) -> f64,
    ) -> Self {
        let mut data = Vec::with_capacity(dims.0 * dims.1 * dims.2);
        for i in 0..dims.0 {
            for j in 0..dims.1 {
                for k in 0..dims.2 {
                    data.push(f(i, j, k));
                }
            }
        }
        Self { dims, data }
    }

    #[inline]
    pub fn dims(&self) -> (usize, usize, usize) {
        self.dims
    }

    #[inline]
    fn offset(&self, i: usize, j: usize, k: usize) -> usize {
        debug_assert!(i < self.dims.0 && j < self.dims.1 && k < self.dims.2);
        (i * self.dims.1 + j) * self.dims.2 + k
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize, k: usize) -> f64 {
        self.data[self.offset(i, j, k)]
    }

    #[inline]
    pub fn set(&mut self, i: usize, j: usize, k: usize, value: f64) {
        let o = self.offset(i, j, k);
        self.data[o] = value;
    }

    /// The contiguous innermost vector at `(i, j)`.
    #[inline]
    pub fn row(&self, i: usize, j: usize) -> &[f64] {
        let start = (i * self.dims.1 + j) * self.dims.2;
        &self.data[start..start + self.dims.2]
    }

    #[inline]
    pub fn row_mut(&mut self, i: usize, j: usize) -> &mut [f64] {
        let start = (i * self.dims.1 + j) * self.dims.2;
        &mut self.data[start..start + self.dims.2]
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.data
    }
}

/// Dense row-major 2-D grid of log-weights, used for forward/backward tables.
#[derive(Debug, Clone, PartialEq)]
pub struct LogGrid {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl LogGrid {
    pub fn new(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            data: vec![LOG_ZERO; rows * cols],
        }
    }

    #[inline]
    pub fn rows(&self) -> usize {
        self.rows
    }

    #[inline]
    pub fn cols(&self) -> usize {
        self.cols
    }

    #[inline]
    pub fn get(&self, r: usize, c: usize) -> f64 {
        debug_assert!(r < self.rows && c < self.cols);
        self.data[r * self.cols + c]
    }

    #[inline]
    pub fn set(&mut self, r: usize, c: usize, value: f64) {
        debug_assert!(r < self.rows && c < self.cols);
        self.data[r * self.cols + c] = value;
    }
}
