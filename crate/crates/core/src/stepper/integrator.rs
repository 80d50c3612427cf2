//! Fourier-space time integration of `w_t = w_xx + N(t, w)` for a stack of
//! fields sharing one grid. Diffusion is treated exactly (ETDRK4) or
//! implicitly (IMEX-BDF2); the reaction term is explicit.

use num_complex::Complex64;

use super::{Scheme, StepperConfig};
use crate::error::{Error, Result};
use crate::grid::CircleGrid;

pub(crate) type Fields = Vec<Vec<Complex64>>;

/// Spectral right-hand side: fills `out` with `N̂(t, fields)`.
pub(crate) trait SpectralRhs {
    fn eval(&mut self, t: f64, fields: &[Vec<Complex64>], out: &mut [Vec<Complex64>]);
}

/// `φ_1, φ_2, φ_3` at a real argument, series near zero.
fn phi123(z: f64) -> (f64, f64, f64) {
    if z.abs() < 1.0 {
        let (mut p1, mut p2, mut p3) = (0.0, 0.0, 0.0);
        // φ_j(z) = Σ_m z^m / (m + j)!
        let mut term = 1.0; // z^m / m!
        for m in 0..30 {
            let mf = m as f64;
            p1 += term / (mf + 1.0);
            p2 += term / ((mf + 1.0) * (mf + 2.0));
            p3 += term / ((mf + 1.0) * (mf + 2.0) * (mf + 3.0));
            term *= z / (mf + 1.0);
        }
        (p1, p2, p3)
    } else {
        let e = z.exp();
        let p1 = (e - 1.0) / z;
        let p2 = (e - 1.0 - z) / (z * z);
        let p3 = (e - 1.0 - z - 0.5 * z * z) / (z * z * z);
        (p1, p2, p3)
    }
}

struct EtdCoeffs {
    e: Vec<f64>,
    e2: Vec<f64>,
    q: Vec<f64>,
    f1: Vec<f64>,
    f2: Vec<f64>,
    f3: Vec<f64>,
}

impl EtdCoeffs {
    fn new(grid: &CircleGrid, h: f64) -> Self {
        let n = grid.n_points();
        let mut c = EtdCoeffs {
            e: vec![0.0; n],
            e2: vec![0.0; n],
            q: vec![0.0; n],
            f1: vec![0.0; n],
            f2: vec![0.0; n],
            f3: vec![0.0; n],
        };
        for i in 0..n {
            let k = grid.wavenumber(i) as f64;
            let z = -k * k * h;
            let (p1h, _, _) = phi123(0.5 * z);
            let (p1, p2, p3) = phi123(z);
            c.e[i] = z.exp();
            c.e2[i] = (0.5 * z).exp();
            c.q[i] = 0.5 * h * p1h;
            c.f1[i] = h * (p1 - 3.0 * p2 + 4.0 * p3);
            c.f2[i] = h * (p2 - 2.0 * p3);
            c.f3[i] = h * (4.0 * p3 - p2);
        }
        c
    }
}

fn zeros_like(fields: &[Vec<Complex64>]) -> Fields {
    fields
        .iter()
        .map(|f| vec![Complex64::new(0.0, 0.0); f.len()])
        .collect()
}

struct Dealias {
    mask: Option<Vec<bool>>,
}

impl Dealias {
    fn new(grid: &CircleGrid, on: bool) -> Self {
        let mask = on.then(|| {
            let cutoff = grid.n_points() as f64 / 3.0;
            (0..grid.n_points())
                .map(|i| (grid.wavenumber(i).unsigned_abs() as f64) <= cutoff)
                .collect()
        });
        Self { mask }
    }

    fn apply(&self, out: &mut [Vec<Complex64>]) {
        if let Some(mask) = &self.mask {
            for field in out.iter_mut() {
                for (c, keep) in field.iter_mut().zip(mask) {
                    if !keep {
                        *c = Complex64::new(0.0, 0.0);
                    }
                }
            }
        }
    }
}

/// Number of macro steps and their length covering `[t0, t1]`.
pub(crate) fn step_plan(dt: f64, t0: f64, t1: f64) -> (usize, f64) {
    let span = t1 - t0;
    let ratio = span / dt;
    let n = if (ratio - ratio.round()).abs() <= 1e-9 * ratio.max(1.0) {
        ratio.round().max(1.0) as usize
    } else {
        ratio.ceil().max(1.0) as usize
    };
    (n, span / n as f64)
}

fn check_blowup(grid: &CircleGrid, field: &[Complex64], bound: f64, t: f64) -> Result<()> {
    let coeff_sum: f64 = field.iter().map(|c| c.norm()).sum();
    if !coeff_sum.is_finite() {
        return Err(Error::BlowUp {
            t_last_valid: t,
            bound,
        });
    }
    if coeff_sum > bound {
        let sup = grid
            .inverse(field)
            .into_iter()
            .fold(0.0_f64, |m, v| m.max(v.abs()));
        if sup > bound {
            return Err(Error::BlowUp {
                t_last_valid: t,
                bound,
            });
        }
    }
    Ok(())
}

/// Advances `fields` from `t0` to `t1`; `observe(step, t, fields)` is called
/// after every macro step. Blow-up is monitored on field 0 only.
pub(crate) fn integrate<R, O>(
    grid: &CircleGrid,
    cfg: &StepperConfig,
    t0: f64,
    t1: f64,
    mut fields: Fields,
    rhs: &mut R,
    mut observe: O,
) -> Result<Fields>
where
    R: SpectralRhs,
    O: FnMut(usize, f64, &[Vec<Complex64>]) -> Result<()>,
{
    let (n_steps, h) = step_plan(cfg.dt, t0, t1);
    let dealias = Dealias::new(grid, cfg.dealias);
    let n = grid.n_points();
    let mut t = t0;
    match cfg.scheme {
        Scheme::Etdrk4 => {
            let c = EtdCoeffs::new(grid, h);
            let mut nu = zeros_like(&fields);
            let mut na = zeros_like(&fields);
            let mut nb = zeros_like(&fields);
            let mut nc = zeros_like(&fields);
            let mut a = zeros_like(&fields);
            let mut b = zeros_like(&fields);
            let mut cc = zeros_like(&fields);
            for step in 0..n_steps {
                rhs.eval(t, &fields, &mut nu);
                dealias.apply(&mut nu);
                for (fi, field) in fields.iter().enumerate() {
                    for i in 0..n {
                        a[fi][i] = c.e2[i] * field[i] + c.q[i] * nu[fi][i];
                    }
                }
                rhs.eval(t + 0.5 * h, &a, &mut na);
                dealias.apply(&mut na);
                for (fi, field) in fields.iter().enumerate() {
                    for i in 0..n {
                        b[fi][i] = c.e2[i] * field[i] + c.q[i] * na[fi][i];
                    }
                }
                rhs.eval(t + 0.5 * h, &b, &mut nb);
                dealias.apply(&mut nb);
                for fi in 0..fields.len() {
                    for i in 0..n {
                        cc[fi][i] =
                            c.e2[i] * a[fi][i] + c.q[i] * (2.0 * nb[fi][i] - nu[fi][i]);
                    }
                }
                rhs.eval(t + h, &cc, &mut nc);
                dealias.apply(&mut nc);
                for (fi, field) in fields.iter_mut().enumerate() {
                    for i in 0..n {
                        field[i] = c.e[i] * field[i]
                            + c.f1[i] * nu[fi][i]
                            + 2.0 * c.f2[i] * (na[fi][i] + nb[fi][i])
                            + c.f3[i] * nc[fi][i];
                    }
                }
                t = t0 + (step + 1) as f64 * h;
                check_blowup(grid, &fields[0], cfg.blowup_bound, t - h)?;
                observe(step + 1, t, &fields)?;
            }
        }
        Scheme::ImexBdf2 => {
            let lap: Vec<f64> = (0..n)
                .map(|i| {
                    let k = grid.wavenumber(i) as f64;
                    -k * k
                })
                .collect();
            let mut n_now = zeros_like(&fields);
            let mut n_prev = zeros_like(&fields);
            let mut prev = fields.clone();
            for step in 0..n_steps {
                rhs.eval(t, &fields, &mut n_now);
                dealias.apply(&mut n_now);
                if step == 0 {
                    // IMEX Euler start
                    for (fi, field) in fields.iter_mut().enumerate() {
                        prev[fi].copy_from_slice(field);
                        for i in 0..n {
                            field[i] = (field[i] + h * n_now[fi][i]) / (1.0 - h * lap[i]);
                        }
                    }
                } else {
                    for (fi, field) in fields.iter_mut().enumerate() {
                        for i in 0..n {
                            let next = (4.0 * field[i] - prev[fi][i]
                                + 2.0 * h * (2.0 * n_now[fi][i] - n_prev[fi][i]))
                                / (3.0 - 2.0 * h * lap[i]);
                            prev[fi][i] = field[i];
                            field[i] = next;
                        }
                    }
                }
                std::mem::swap(&mut n_prev, &mut n_now);
                t = t0 + (step + 1) as f64 * h;
                check_blowup(grid, &fields[0], cfg.blowup_bound, t - h)?;
                observe(step + 1, t, &fields)?;
            }
        }
    }
    Ok(fields)
}

/// Scratch space for evaluating pointwise reaction terms.
pub(crate) struct Physical {
    grid: CircleGrid,
    buf: Vec<Complex64>,
    pub nodes: Vec<f64>,
}

impl Physical {
    pub fn new(grid: &CircleGrid) -> Self {
        Self {
            grid: grid.clone(),
            buf: vec![Complex64::new(0.0, 0.0); grid.n_points()],
            nodes: grid.nodes(),
        }
    }

    /// Nodal values and x-derivative of a spectral field.
    pub fn values_and_slope(&mut self, coeffs: &[Complex64], u: &mut [f64], ux: &mut [f64]) {
        self.buf.copy_from_slice(coeffs);
        self.grid.inverse_in_place(&mut self.buf);
        for (dst, c) in u.iter_mut().zip(&self.buf) {
            *dst = c.re;
        }
        let n = self.grid.n_points();
        for (i, c) in coeffs.iter().enumerate() {
            self.buf[i] = if i == n / 2 {
                Complex64::new(0.0, 0.0)
            } else {
                *c * Complex64::new(0.0, self.grid.wavenumber(i) as f64)
            };
        }
        self.grid.inverse_in_place(&mut self.buf);
        for (dst, c) in ux.iter_mut().zip(&self.buf) {
            *dst = c.re;
        }
    }

    pub fn to_spectral(&mut self, values: &[f64], out: &mut [Complex64]) {
        for (dst, v) in out.iter_mut().zip(values) {
            *dst = Complex64::new(*v, 0.0);
        }
        self.grid.forward_in_place(out);
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn phi_functions_continuous_at_switch() {
        for z in [-0.999999, -1.000001, 0.0, -1e-8] {
            let (p1, p2, p3) = phi123(z);
            if z != 0.0 {
                assert!((p1 - f64::exp_m1(z) / z).abs() < 1e-12);
            }
            assert!(p1 > 0.0 && p2 > 0.0 && p3 > 0.0);
        }
        let (p1, p2, p3) = phi123(0.0);
        assert_eq!((p1, p2), (1.0, 0.5));
        assert!((p3 - 1.0 / 6.0).abs() < 1e-15);
    }

    #[test]
    fn step_plan_exact_divisor() {
        assert_eq!(step_plan(0.01, 0.0, 1.0).0, 100);
        let (n, h) = step_plan(0.3, 0.0, 1.0);
        assert_eq!(n, 4);
        assert!((h - 0.25).abs() < 1e-15);
    }
}
