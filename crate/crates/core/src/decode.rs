//! Differentiable decoding of heatmaps into normalized coordinates.
//!
//! All decoders compute a softmax expectation over bin centers
//! `c_i = i / (K - 1)`, so both ends of `[0, 1]` are reachable. Softmax is
//! evaluated with max-subtraction, which also makes the result exactly
//! invariant to adding a constant to every logit.

use std::f64::consts::TAU;

use crate::error::{ensure_finite, ensure_len, Error, Result};
use crate::real::Real;

/// Softmax sharpness multiplier applied to raw logits.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Temperature(f64);

impl Temperature {
    pub fn new(beta: f64) -> Result<Self> {
        if beta.is_finite() && beta > 0.0 {
            Ok(Self(beta))
        } else {
            Err(Error::OutOfRange {
                what: "temperature beta",
                value: beta,
            })
        }
    }

    pub fn beta(&self) -> f64 {
        self.0
    }
}

impl Default for Temperature {
    fn default() -> Self {
        Self(1.0)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Logits1D {
    values: Vec<f64>,
}

impl Logits1D {
    pub fn new(values: Vec<f64>) -> Result<Self> {
        if values.len() < 2 {
            return Err(Error::invalid(format!(
                "1D heatmap needs at least 2 bins, got {}",
                values.len()
            )));
        }
        ensure_finite(&values, "1D logits")?;
        Ok(Self { values })
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }
}

/// Row-major `rows x cols` logit grid.
#[derive(Debug, Clone, PartialEq)]
pub struct Logits2D {
    rows: usize,
    cols: usize,
    values: Vec<f64>,
}

impl Logits2D {
    pub fn new(rows: usize, cols: usize, values: Vec<f64>) -> Result<Self> {
        if rows < 2 || cols < 2 {
            return Err(Error::invalid(format!(
                "2D heatmap needs at least 2x2 cells, got {rows}x{cols}"
            )));
        }
        ensure_len("2D logits", rows * cols, values.len())?;
        ensure_finite(&values, "2D logits")?;
        Ok(Self { rows, cols, values })
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }
}

#[inline]
pub fn bin_center(i: usize, bins: usize) -> f64 {
    i as f64 / (bins - 1) as f64
}

/// Softmax of `beta * logits` written into `out`.
fn softmax_into<T: Real>(logits: &[T], beta: f64, out: &mut [T]) {
    let b = T::from_f64(beta);
    let max = logits.iter().copied().fold(logits[0], T::max);
    let mut total = T::zero();
    for (o, &l) in out.iter_mut().zip(logits) {
        *o = (b * (l - max)).exp();
        total += *o;
    }
    for o in out.iter_mut() {
        *o = *o / total;
    }
}

/// Forward pass of the 1D softargmax over any scalar type.
pub fn softargmax_1d_value<T: Real>(logits: &[T], beta: f64) -> T {
    let mut p = vec![T::zero(); logits.len()];
    softmax_into(logits, beta, &mut p);
    let k = logits.len();
    p.iter().enumerate().fold(T::zero(), |acc, (i, &pi)| {
        acc + pi * T::from_f64(bin_center(i, k))
    })
}

/// Forward pass of the 2D softargmax over any scalar type; returns `(x, y)`.
pub fn softargmax_2d_value<T: Real>(logits: &[T], rows: usize, cols: usize, beta: f64) -> (T, T) {
    let mut p = vec![T::zero(); logits.len()];
    softmax_into(logits, beta, &mut p);
    let (mut x, mut y) = (T::zero(), T::zero());
    for r in 0..rows {
        for c in 0..cols {
            let pi = p[r * cols + c];
            x += pi * T::from_f64(bin_center(c, cols));
            y += pi * T::from_f64(bin_center(r, rows));
        }
    }
    (x, y)
}

#[derive(Debug, Clone, PartialEq)]
pub struct SoftArgmax1D {
    pub value: f64,
    /// d value / d logit
    pub grad: Vec<f64>,
}

pub fn softargmax_1d(l: &Logits1D, t: Temperature) -> SoftArgmax1D {
    let mut probs = vec![0.0; l.len()];
    let value = softargmax_1d_probs(l.values(), t.beta(), &mut probs);
    let mut grad = vec![0.0; l.len()];
    softargmax_1d_backward(&probs, value, t.beta(), 1.0, &mut grad);
    SoftArgmax1D { value, grad }
}

/// Forward pass that keeps the softmax probabilities for a later backward call.
pub fn softargmax_1d_probs(logits: &[f64], beta: f64, probs: &mut [f64]) -> f64 {
    softmax_into(logits, beta, probs);
    let k = logits.len();
    probs.iter().enumerate().map(|(i, p)| p * bin_center(i, k)).sum()
}

/// Accumulates `upstream * d value / d logit` into `grad`.
///
/// `d value / d l_j = beta * p_j * (c_j - value)`.
pub fn softargmax_1d_backward(probs: &[f64], value: f64, beta: f64, upstream: f64, grad: &mut [f64]) {
    let k = probs.len();
    for (j, (g, p)) in grad.iter_mut().zip(probs).enumerate() {
        *g += upstream * beta * p * (bin_center(j, k) - value);
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SoftArgmax2D {
    pub x: f64,
    pub y: f64,
    pub grad_x: Vec<f64>,
    pub grad_y: Vec<f64>,
}

pub fn softargmax_2d(h: &Logits2D, t: Temperature) -> SoftArgmax2D {
    let (rows, cols, beta) = (h.rows, h.cols, t.beta());
    let mut p = vec![0.0; h.values.len()];
    softmax_into(&h.values, beta, &mut p);
    let (mut x, mut y) = (0.0, 0.0);
    for r in 0..rows {
        for c in 0..cols {
            let pi = p[r * cols + c];
            x += pi * bin_center(c, cols);
            y += pi * bin_center(r, rows);
        }
    }
    let mut grad_x = vec![0.0; p.len()];
    let mut grad_y = vec![0.0; p.len()];
    for r in 0..rows {
        for c in 0..cols {
            let i = r * cols + c;
            grad_x[i] = beta * p[i] * (bin_center(c, cols) - x);
            grad_y[i] = beta * p[i] * (bin_center(r, rows) - y);
        }
    }
    SoftArgmax2D { x, y, grad_x, grad_y }
}

/// How a periodic (azimuth) heatmap is turned into an angle.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum AzimuthDecoder {
    /// Same linear expectation as every other head.
    #[default]
    Linear,
    /// Circular mean: bins at `i / K` around the circle, decoded with atan2.
    Circular,
}

/// Circular-mean decode of a periodic heatmap, result in `[0, 1)`.
pub fn circular_softargmax_1d(l: &Logits1D, t: Temperature) -> SoftArgmax1D {
    let mut probs = vec![0.0; l.len()];
    let value = circular_softargmax_probs(l.values(), t.beta(), &mut probs);
    let mut grad = vec![0.0; l.len()];
    circular_softargmax_backward(&probs, t.beta(), 1.0, &mut grad);
    SoftArgmax1D { value, grad }
}

pub fn circular_softargmax_probs(logits: &[f64], beta: f64, probs: &mut [f64]) -> f64 {
    softmax_into(logits, beta, probs);
    let (s, c) = circular_moments(probs);
    let v = s.atan2(c).rem_euclid(TAU) / TAU;
    if v >= 1.0 {
        0.0
    } else {
        v
    }
}

fn circular_moments(probs: &[f64]) -> (f64, f64) {
    let k = probs.len() as f64;
    probs.iter().enumerate().fold((0.0, 0.0), |(s, c), (i, p)| {
        let a = TAU * i as f64 / k;
        (s + p * a.sin(), c + p * a.cos())
    })
}

pub fn circular_softargmax_backward(probs: &[f64], beta: f64, upstream: f64, grad: &mut [f64]) {
    let (s, c) = circular_moments(probs);
    let r2 = s * s + c * c;
    if r2 == 0.0 {
        // Direction undefined for a perfectly balanced heatmap.
        return;
    }
    let k = probs.len() as f64;
    for (j, (g, p)) in grad.iter_mut().zip(probs).enumerate() {
        let a = TAU * j as f64 / k;
        let ds = beta * p * (a.sin() - s);
        let dc = beta * p * (a.cos() - c);
        *g += upstream * (c * ds - s * dc) / (TAU * r2);
    }
}

/// Bilinear interpolation weights at unit coordinates `(x, y)`:
/// four `(cell index, weight)` pairs plus the lattice steps used for derivatives.
fn bilinear_cells(rows: usize, cols: usize, x: f64, y: f64) -> BilinearCells {
    let gx = x * (cols - 1) as f64;
    let gy = y * (rows - 1) as f64;
    let c0 = (gx.floor() as usize).min(cols - 2);
    let r0 = (gy.floor() as usize).min(rows - 2);
    BilinearCells {
        c0,
        r0,
        fx: gx - c0 as f64,
        fy: gy - r0 as f64,
        cols,
    }
}

struct BilinearCells {
    c0: usize,
    r0: usize,
    fx: f64,
    fy: f64,
    cols: usize,
}

impl BilinearCells {
    /// `[(index, weight)]` for cells 00, 01, 10, 11 (row, col offsets).
    fn weights(&self) -> [(usize, f64); 4] {
        let i00 = self.r0 * self.cols + self.c0;
        let (fx, fy) = (self.fx, self.fy);
        [
            (i00, (1.0 - fy) * (1.0 - fx)),
            (i00 + 1, (1.0 - fy) * fx),
            (i00 + self.cols, fy * (1.0 - fx)),
            (i00 + self.cols + 1, fy * fx),
        ]
    }
}

/// Forward pass of the sigmoid depth lookup over any scalar type.
///
/// Cell indices come from the `f64` view of the coordinates; weights are
/// computed in `T`.
pub fn decode_depth_value<T: Real>(map: &[T], rows: usize, cols: usize, x: T, y: T) -> T {
    let cells = bilinear_cells(rows, cols, x.to_f64(), y.to_f64());
    let fx = x * T::from_f64((cols - 1) as f64) - T::from_f64(cells.c0 as f64);
    let fy = y * T::from_f64((rows - 1) as f64) - T::from_f64(cells.r0 as f64);
    let one = T::one();
    let i00 = cells.r0 * cols + cells.c0;
    (one - fy) * (one - fx) * map[i00].sigmoid()
        + (one - fy) * fx * map[i00 + 1].sigmoid()
        + fy * (one - fx) * map[i00 + cols].sigmoid()
        + fy * fx * map[i00 + cols + 1].sigmoid()
}

#[derive(Debug, Clone, PartialEq)]
pub struct DepthSample {
    pub value: f64,
    /// `(cell index, d value / d logit)` for the four cells touched.
    pub grad_cells: [(usize, f64); 4],
    pub grad_x: f64,
    pub grad_y: f64,
}

impl DepthSample {
    pub fn dense_grad(&self, len: usize) -> Vec<f64> {
        let mut g = vec![0.0; len];
        for &(i, d) in &self.grad_cells {
            g[i] += d;
        }
        g
    }
}

/// Bilinear sample of `sigmoid(map)` at unit coordinates `(x, y)`.
pub fn decode_depth(sig_map: &Logits2D, at: (f64, f64)) -> Result<DepthSample> {
    let (x, y) = at;
    for (what, v) in [("depth sample x", x), ("depth sample y", y)] {
        if !v.is_finite() {
            return Err(Error::NonFinite(what));
        }
        if !(0.0..=1.0).contains(&v) {
            return Err(Error::OutOfRange { what, value: v });
        }
    }
    Ok(decode_depth_unchecked(
        &sig_map.values,
        sig_map.rows,
        sig_map.cols,
        x,
        y,
    ))
}

pub(crate) fn decode_depth_unchecked(map: &[f64], rows: usize, cols: usize, x: f64, y: f64) -> DepthSample {
    let cells = bilinear_cells(rows, cols, x, y);
    let w = cells.weights();
    let s: [f64; 4] = w.map(|(i, _)| Real::sigmoid(map[i]));
    let value = w.iter().zip(&s).map(|((_, wi), si)| wi * si).sum();
    let grad_cells = [0, 1, 2, 3].map(|k| (w[k].0, w[k].1 * s[k] * (1.0 - s[k])));
    let (fx, fy) = (cells.fx, cells.fy);
    let grad_x = (cols - 1) as f64 * ((1.0 - fy) * (s[1] - s[0]) + fy * (s[3] - s[2]));
    let grad_y = (rows - 1) as f64 * ((1.0 - fx) * (s[2] - s[0]) + fx * (s[3] - s[1]));
    DepthSample {
        value,
        grad_cells,
        grad_x,
        grad_y,
    }
}
