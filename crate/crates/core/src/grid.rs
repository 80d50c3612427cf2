//! Uniform periodic discretization of the circle `R / 2πZ`.
//!
//! Fields are stored as nodal values on `x_i = 2πi/N`. Spectral operations go
//! through a single complex FFT whose coefficients are normalized so that the
//! trigonometric interpolant is `u(x) = Σ_k û_k e^{ikx}`.

use std::f64::consts::PI;
use std::fmt;
use std::sync::Arc;

use num_complex::Complex64;
use rustfft::{Fft, FftPlanner};

use crate::error::{Error, Result};

/// Default fractional exponent for reported norms.
pub const DEFAULT_ALPHA: f64 = 0.875;

struct GridInner {
    n: usize,
    spacing: f64,
    forward: Arc<dyn Fft<f64>>,
    inverse: Arc<dyn Fft<f64>>,
}

/// Equispaced grid on the circle with cached FFT plans.
#[derive(Clone)]
pub struct CircleGrid {
    inner: Arc<GridInner>,
}

impl fmt::Debug for CircleGrid {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("CircleGrid")
            .field("n_points", &self.inner.n)
            .finish()
    }
}

impl PartialEq for CircleGrid {
    fn eq(&self, other: &Self) -> bool {
        self.inner.n == other.inner.n
    }
}

impl CircleGrid {
    /// `n_points` must be a power of two and at least 8.
    pub fn new(n_points: usize) -> Result<Self> {
        if n_points < 8 || !n_points.is_power_of_two() {
            return Err(Error::InvalidArgument(format!(
                "grid size must be a power of two >= 8, got {n_points}"
            )));
        }
        let mut planner = FftPlanner::new();
        let forward = planner.plan_fft_forward(n_points);
        let inverse = planner.plan_fft_inverse(n_points);
        Ok(Self {
            inner: Arc::new(GridInner {
                n: n_points,
                spacing: 2.0 * PI / n_points as f64,
                forward,
                inverse,
            }),
        })
    }

    pub fn n_points(&self) -> usize {
        self.inner.n
    }

    pub fn spacing(&self) -> f64 {
        self.inner.spacing
    }

    pub fn node(&self, i: usize) -> f64 {
        i as f64 * self.inner.spacing
    }

    pub fn nodes(&self) -> Vec<f64> {
        (0..self.inner.n).map(|i| self.node(i)).collect()
    }

    /// Signed wavenumber of FFT slot `i`; the Nyquist slot maps to `+N/2`.
    pub fn wavenumber(&self, i: usize) -> i64 {
        let n = self.inner.n;
        if i <= n / 2 {
            i as i64
        } else {
            i as i64 - n as i64
        }
    }

    pub fn wavenumbers(&self) -> Vec<i64> {
        (0..self.inner.n).map(|i| self.wavenumber(i)).collect()
    }

    /// Fourier coefficients `û_k = (1/N) Σ_j u_j e^{-ikx_j}` in FFT slot order.
    pub fn forward(&self, values: &[f64]) -> Vec<Complex64> {
        let n = self.inner.n;
        debug_assert_eq!(values.len(), n);
        let mut buf: Vec<Complex64> = values.iter().map(|&v| Complex64::new(v, 0.0)).collect();
        self.inner.forward.process(&mut buf);
        let scale = 1.0 / n as f64;
        for c in &mut buf {
            *c *= scale;
        }
        buf
    }

    /// In-place variant of [`forward`](Self::forward) on a complex buffer.
    pub fn forward_in_place(&self, buf: &mut [Complex64]) {
        self.inner.forward.process(buf);
        let scale = 1.0 / self.inner.n as f64;
        for c in buf.iter_mut() {
            *c *= scale;
        }
    }

    /// Nodal values from coefficients; the imaginary part is discarded.
    pub fn inverse(&self, coeffs: &[Complex64]) -> Vec<f64> {
        let mut buf = coeffs.to_vec();
        self.inner.inverse.process(&mut buf);
        buf.into_iter().map(|c| c.re).collect()
    }

    pub fn inverse_in_place(&self, buf: &mut [Complex64]) {
        self.inner.inverse.process(buf);
    }

    /// Weight `|k|^{4α}` of the fractional operator `A^α`; `A^0` is the identity.
    pub fn fractional_weight(&self, i: usize, alpha: f64) -> f64 {
        let k = self.wavenumber(i).unsigned_abs() as f64;
        if alpha == 0.0 {
            1.0
        } else if k == 0.0 {
            0.0
        } else {
            k.powf(4.0 * alpha)
        }
    }
}

/// Nodal values of a real function on a [`CircleGrid`].
#[derive(Clone, Debug)]
pub struct StateVector {
    grid: CircleGrid,
    values: Vec<f64>,
}

impl PartialEq for StateVector {
    fn eq(&self, other: &Self) -> bool {
        self.grid == other.grid && self.values == other.values
    }
}

impl StateVector {
    pub fn new(grid: &CircleGrid, values: Vec<f64>) -> Result<Self> {
        if values.len() != grid.n_points() {
            return Err(Error::InvalidState(format!(
                "expected {} values, got {}",
                grid.n_points(),
                values.len()
            )));
        }
        if let Some(i) = values.iter().position(|v| !v.is_finite()) {
            return Err(Error::InvalidState(format!("non-finite value at node {i}")));
        }
        Ok(Self {
            grid: grid.clone(),
            values,
        })
    }

    pub fn from_fn(grid: &CircleGrid, f: impl Fn(f64) -> f64) -> Self {
        let values = grid.nodes().into_iter().map(f).collect();
        Self {
            grid: grid.clone(),
            values,
        }
    }

    pub fn zeros(grid: &CircleGrid) -> Self {
        Self::constant(grid, 0.0)
    }

    pub fn constant(grid: &CircleGrid, c: f64) -> Self {
        Self {
            grid: grid.clone(),
            values: vec![c; grid.n_points()],
        }
    }

    pub(crate) fn from_values_unchecked(grid: &CircleGrid, values: Vec<f64>) -> Self {
        Self {
            grid: grid.clone(),
            values,
        }
    }

    /// Builds a field from Fourier coefficients in slot order.
    pub fn from_coeffs(grid: &CircleGrid, coeffs: &[Complex64]) -> Self {
        Self::from_values_unchecked(grid, grid.inverse(coeffs))
    }

    pub fn grid(&self) -> &CircleGrid {
        &self.grid
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn coeffs(&self) -> Vec<Complex64> {
        self.grid.forward(&self.values)
    }

    pub fn check_finite(&self) -> Result<()> {
        match self.values.iter().position(|v| !v.is_finite()) {
            Some(i) => Err(Error::InvalidState(format!("non-finite value at node {i}"))),
            None => Ok(()),
        }
    }

    pub fn ensure_same_grid(&self, other: &StateVector) -> Result<()> {
        if self.grid != other.grid {
            return Err(Error::GridMismatch {
                left: self.grid.n_points(),
                right: other.grid.n_points(),
            });
        }
        Ok(())
    }

    pub fn sup_norm(&self) -> f64 {
        self.values.iter().fold(0.0_f64, |m, v| m.max(v.abs()))
    }

    pub fn l2_norm(&self) -> f64 {
        let sum: f64 = self.values.iter().map(|v| v * v).sum();
        (sum * self.grid.spacing()).sqrt()
    }

    pub fn mean(&self) -> f64 {
        self.values.iter().sum::<f64>() / self.values.len() as f64
    }

    pub fn scaled(&self, a: f64) -> StateVector {
        self.map(|v| a * v)
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> StateVector {
        Self::from_values_unchecked(&self.grid, self.values.iter().map(|&v| f(v)).collect())
    }

    /// `a·self + b·other`.
    pub fn lin_comb(&self, a: f64, other: &StateVector, b: f64) -> Result<StateVector> {
        self.ensure_same_grid(other)?;
        Ok(Self::from_values_unchecked(
            &self.grid,
            self.values
                .iter()
                .zip(&other.values)
                .map(|(x, y)| a * x + b * y)
                .collect(),
        ))
    }

    pub fn add(&self, other: &StateVector) -> Result<StateVector> {
        self.lin_comb(1.0, other, 1.0)
    }

    pub fn sub(&self, other: &StateVector) -> Result<StateVector> {
        self.lin_comb(1.0, other, -1.0)
    }

    pub fn axpy(&mut self, a: f64, other: &StateVector) -> Result<()> {
        self.ensure_same_grid(other)?;
        for (x, y) in self.values.iter_mut().zip(&other.values) {
            *x += a * y;
        }
        Ok(())
    }

    /// Discrete `X^α` norm `‖A^α u‖ + ‖u‖` (both in `L²(S¹)`).
    pub fn fractional_norm(&self, alpha: f64) -> f64 {
        let coeffs = self.coeffs();
        let mut weighted = 0.0;
        let mut plain = 0.0;
        for (i, c) in coeffs.iter().enumerate() {
            let m = c.norm_sqr();
            weighted += self.grid.fractional_weight(i, alpha) * m;
            plain += m;
        }
        (2.0 * PI * weighted).sqrt() + (2.0 * PI * plain).sqrt()
    }

    /// Hilbert inner product `2π Σ (1 + |k|^{4α}) Re(û_k v̂_k*)`, equivalent to the
    /// `X^α` norm within a factor √2. Used for orthonormalization and angles.
    pub fn alpha_inner(&self, other: &StateVector, alpha: f64) -> Result<f64> {
        self.ensure_same_grid(other)?;
        let a = self.coeffs();
        let b = other.coeffs();
        Ok(alpha_inner_coeffs(&self.grid, &a, &b, alpha))
    }

    pub fn alpha_norm(&self, alpha: f64) -> f64 {
        let c = self.coeffs();
        alpha_inner_coeffs(&self.grid, &c, &c, alpha).max(0.0).sqrt()
    }

    /// Nodal values of the `order`-th derivative of the trigonometric interpolant.
    /// The Nyquist mode is dropped for odd orders.
    pub fn spectral_derivative(&self, order: u32) -> Result<StateVector> {
        if !(1..=2).contains(&order) {
            return Err(Error::InvalidArgument(format!(
                "derivative order must be 1 or 2, got {order}"
            )));
        }
        self.check_finite()?;
        let mut coeffs = self.coeffs();
        differentiate_coeffs(&self.grid, &mut coeffs, order);
        Ok(Self::from_coeffs(&self.grid, &coeffs))
    }

    /// Value of the trigonometric interpolant at `x`.
    pub fn interpolate(&self, x: f64) -> Result<f64> {
        self.check_finite()?;
        Ok(Interpolant::new(self).value(x))
    }

    /// Zero-padded spectral upsampling to `new_n` points.
    pub fn refine(&self, new_n: usize) -> Result<StateVector> {
        let n = self.grid.n_points();
        if new_n < n {
            return Err(Error::UnsupportedCoarsen { from: n, to: new_n });
        }
        if new_n == n {
            return Ok(self.clone());
        }
        let fine = CircleGrid::new(new_n)?;
        let coeffs = self.coeffs();
        let mut padded = vec![Complex64::new(0.0, 0.0); new_n];
        for (i, c) in coeffs.iter().enumerate() {
            let k = self.grid.wavenumber(i);
            if k.unsigned_abs() as usize == n / 2 {
                // split the Nyquist coefficient evenly between ±N/2
                padded[n / 2] += *c * 0.5;
                padded[new_n - n / 2] += *c * 0.5;
            } else {
                let slot = if k >= 0 { k as usize } else { (new_n as i64 + k) as usize };
                padded[slot] = *c;
            }
        }
        Ok(Self::from_coeffs(&fine, &padded))
    }

    /// Circular shift by `a`: returns `u(· + a)`.
    pub fn translate(&self, a: f64) -> StateVector {
        let mut coeffs = self.coeffs();
        for (i, c) in coeffs.iter_mut().enumerate() {
            let k = self.grid.wavenumber(i) as f64;
            if self.grid.wavenumber(i).unsigned_abs() as usize == self.grid.n_points() / 2 {
                *c *= (k * a).cos();
            } else {
                *c *= Complex64::from_polar(1.0, k * a);
            }
        }
        Self::from_coeffs(&self.grid, &coeffs)
    }
}

pub(crate) fn alpha_inner_coeffs(
    grid: &CircleGrid,
    a: &[Complex64],
    b: &[Complex64],
    alpha: f64,
) -> f64 {
    let mut s = 0.0;
    for i in 0..a.len() {
        let w = 1.0 + grid.fractional_weight(i, alpha);
        s += w * (a[i] * b[i].conj()).re;
    }
    2.0 * PI * s
}

/// Multiplies coefficients by `(ik)^order`, zeroing Nyquist for odd orders.
pub(crate) fn differentiate_coeffs(grid: &CircleGrid, coeffs: &mut [Complex64], order: u32) {
    let n = grid.n_points();
    for (i, c) in coeffs.iter_mut().enumerate() {
        let k = grid.wavenumber(i) as f64;
        match order {
            1 => {
                if i == n / 2 {
                    *c = Complex64::new(0.0, 0.0);
                } else {
                    *c *= Complex64::new(0.0, k);
                }
            }
            2 => *c *= -k * k,
            _ => unreachable!(),
        }
    }
}

/// Precomputed real-form coefficients for repeated evaluation of the interpolant.
pub struct Interpolant {
    mean: f64,
    // (k, 2·Re û_k, -2·Im û_k) for 1 <= k < N/2
    modes: Vec<(f64, f64, f64)>,
    nyquist: f64,
    half_n: f64,
}

impl Interpolant {
    pub fn new(s: &StateVector) -> Self {
        Self::from_coeffs(s.grid(), &s.coeffs())
    }

    pub fn from_coeffs(grid: &CircleGrid, coeffs: &[Complex64]) -> Self {
        let n = grid.n_points();
        let modes = (1..n / 2)
            .map(|k| (k as f64, 2.0 * coeffs[k].re, -2.0 * coeffs[k].im))
            .collect();
        Self {
            mean: coeffs[0].re,
            modes,
            nyquist: coeffs[n / 2].re,
            half_n: (n / 2) as f64,
        }
    }

    pub fn value(&self, x: f64) -> f64 {
        let mut s = self.mean + self.nyquist * (self.half_n * x).cos();
        for &(k, a, b) in &self.modes {
            let (sn, cs) = (k * x).sin_cos();
            s += a * cs + b * sn;
        }
        s
    }

    pub fn derivative(&self, x: f64) -> f64 {
        let mut s = -self.nyquist * self.half_n * (self.half_n * x).sin();
        for &(k, a, b) in &self.modes {
            let (sn, cs) = (k * x).sin_cos();
            s += k * (b * cs - a * sn);
        }
        s
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn grid(n: usize) -> CircleGrid {
        CircleGrid::new(n).unwrap()
    }

    #[test]
    fn rejects_bad_sizes() {
        assert!(CircleGrid::new(6).is_err());
        assert!(CircleGrid::new(24).is_err());
        assert!(CircleGrid::new(16).is_ok());
    }

    #[test]
    fn spacing_times_n_is_two_pi() {
        for n in [8, 64, 1024] {
            let g = grid(n);
            assert!((g.spacing() * n as f64 - 2.0 * PI).abs() <= 4.0 * f64::EPSILON);
        }
    }

    #[test]
    fn derivative_of_sin_is_cos() {
        let g = grid(32);
        let s = StateVector::from_fn(&g, f64::sin);
        let d = s.spectral_derivative(1).unwrap();
        for (x, v) in g.nodes().iter().zip(d.values()) {
            assert!((v - x.cos()).abs() <= 1e-12);
        }
    }

    #[test]
    fn second_derivative_of_cos2x() {
        let g = grid(32);
        let s = StateVector::from_fn(&g, |x| (2.0 * x).cos());
        let d = s.spectral_derivative(2).unwrap();
        for (x, v) in g.nodes().iter().zip(d.values()) {
            assert!((v + 4.0 * (2.0 * x).cos()).abs() <= 1e-12);
        }
    }

    #[test]
    fn derivative_of_constant_vanishes() {
        let g = grid(16);
        let d = StateVector::constant(&g, 3.0).spectral_derivative(1).unwrap();
        assert!(d.sup_norm() <= 1e-14);
    }

    #[test]
    fn derivative_order_guard() {
        let g = grid(16);
        assert!(StateVector::zeros(&g).spectral_derivative(3).is_err());
    }

    #[test]
    fn non_finite_values_rejected() {
        let g = grid(8);
        let mut v = vec![0.0; 8];
        v[3] = f64::NAN;
        assert!(matches!(StateVector::new(&g, v), Err(Error::InvalidState(_))));
    }

    #[test]
    fn interpolate_resolved_mode() {
        let g = grid(64);
        let s = StateVector::from_fn(&g, |x| (3.0 * x).sin());
        assert!((s.interpolate(PI / 6.0).unwrap() - 1.0).abs() <= 1e-12);
    }

    #[test]
    fn interpolate_reproduces_nodes() {
        let g = grid(16);
        let s = StateVector::from_fn(&g, |x| (x.sin() * 2.0).exp());
        for (i, x) in g.nodes().into_iter().enumerate() {
            assert!((s.interpolate(x).unwrap() - s.values()[i]).abs() <= 1e-12);
        }
    }

    #[test]
    fn interpolate_mixed_closed_form() {
        let g = grid(32);
        let f = |x: f64| x.sin() + 0.5 * (4.0 * x).cos();
        let s = StateVector::from_fn(&g, f);
        assert!((s.interpolate(0.3).unwrap() - f(0.3)).abs() <= 1e-12);
    }

    #[test]
    fn refine_cosine() {
        let s = StateVector::from_fn(&grid(16), f64::cos);
        let r = s.refine(64).unwrap();
        for (x, v) in r.grid().nodes().iter().zip(r.values()) {
            assert!((v - x.cos()).abs() <= 1e-12);
        }
        assert_eq!(s.refine(16).unwrap(), s);
        assert!(matches!(s.refine(8), Err(Error::UnsupportedCoarsen { .. })));
    }

    #[test]
    fn fractional_norm_examples() {
        let g = grid(64);
        let c = StateVector::constant(&g, -1.5);
        for alpha in [0.25, 0.5, 0.875, 1.0] {
            assert!((c.fractional_norm(alpha) - 1.5 * (2.0 * PI).sqrt()).abs() <= 1e-12);
        }
        for k in 1..5 {
            let s = StateVector::from_fn(&g, |x| (k as f64 * x).sin());
            let alpha = 0.875;
            let expect = ((k as f64).powf(2.0 * alpha) + 1.0) * PI.sqrt();
            assert!((s.fractional_norm(alpha) - expect).abs() <= 1e-10 * expect);
        }
    }

    #[test]
    fn fractional_norm_zero_is_twice_l2() {
        let g = grid(32);
        let s = StateVector::from_fn(&g, |x| 0.3 + x.cos() - 2.0 * (3.0 * x).sin());
        assert!((s.fractional_norm(0.0) - 2.0 * s.l2_norm()).abs() <= 1e-12);
    }

    #[test]
    fn translate_shifts_argument() {
        let g = grid(32);
        let s = StateVector::from_fn(&g, |x| (2.0 * x).cos() + x.sin());
        let t = s.translate(0.7);
        for (x, v) in g.nodes().iter().zip(t.values()) {
            let expect = (2.0 * (x + 0.7)).cos() + (x + 0.7).sin();
            assert!((v - expect).abs() <= 1e-12);
        }
    }
}
