//! Perturbed linear recursions `v(n+1) = S v(n) + R_n v(n)` in finite
//! dimension: spectral-gap projections, the dichotomy alternative, growth
//! rates, normalized limit sets, the `δ(λ, R)` functional and the dimension
//! of the space of `λ`-bounded solutions.

use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::linalg::svd;

pub type Schedule = Arc<dyn Fn(i64) -> DMatrix<f64> + Send + Sync>;

pub const MAX_DIM: usize = 64;

pub fn spectral_norm(m: &DMatrix<f64>) -> f64 {
    if m.is_empty() {
        return 0.0;
    }
    let g = if m.nrows() >= m.ncols() { m.transpose() * m } else { m * m.transpose() };
    g.symmetric_eigenvalues().max().max(0.0).sqrt()
}

pub fn zero_schedule(d: usize) -> Schedule {
    Arc::new(move |_| DMatrix::zeros(d, d))
}

/// `R_n = scale · ratio^{|n|} · m`.
pub fn geometric_schedule(m: DMatrix<f64>, scale: f64, ratio: f64) -> Schedule {
    Arc::new(move |n| &m * (scale * ratio.powi(n.unsigned_abs() as i32)))
}

#[derive(Clone)]
pub struct PerturbedRecursion {
    pub s: DMatrix<f64>,
    pub perturbation: Schedule,
    pub v0: DVector<f64>,
}

impl std::fmt::Debug for PerturbedRecursion {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("PerturbedRecursion").field("s", &self.s).field("v0", &self.v0).finish_non_exhaustive()
    }
}

impl PerturbedRecursion {
    pub fn new(s: DMatrix<f64>, perturbation: Schedule, v0: DVector<f64>) -> Result<Self> {
        let d = s.nrows();
        if d == 0 || d > MAX_DIM || s.ncols() != d {
            return Err(Error::InvalidArgument(format!("matrix must be square of size 1..={MAX_DIM}")));
        }
        if v0.len() != d {
            return Err(Error::InvalidArgument("initial vector has the wrong length".into()));
        }
        let r0 = perturbation(0);
        if r0.shape() != (d, d) {
            return Err(Error::InvalidArgument("perturbation has the wrong shape".into()));
        }
        Ok(Self { s, perturbation, v0 })
    }

    pub fn dim(&self) -> usize {
        self.s.nrows()
    }

    pub fn moduli(&self) -> Vec<f64> {
        eigen_moduli(&self.s)
    }
}

pub fn eigenvalues(s: &DMatrix<f64>) -> Vec<Complex64> {
    s.clone().complex_eigenvalues().iter().copied().collect()
}

pub fn eigen_moduli(s: &DMatrix<f64>) -> Vec<f64> {
    let mut m: Vec<f64> = eigenvalues(s).iter().map(|z| z.norm()).collect();
    m.sort_by(f64::total_cmp);
    m
}

/// Riesz splitting of `S` at the circle `|z| = split`, valid on the gap `(a, b)`.
#[derive(Debug, Clone)]
pub struct SpectralGap {
    pub a: f64,
    pub b: f64,
    pub split: f64,
    /// Projection onto the part of the spectrum with `|z| > split`.
    pub p: DMatrix<f64>,
    /// Projection onto the part with `|z| < split`.
    pub q: DMatrix<f64>,
    fast_basis: DMatrix<f64>,
    slow_basis: DMatrix<f64>,
    /// `S` restricted to the two ranges, in their orthonormal bases.
    pub u: DMatrix<f64>,
    pub v: DMatrix<f64>,
    fast_coords: DMatrix<f64>,
    slow_coords: DMatrix<f64>,
}

/// Orthonormal basis of `range(∏ (S - μ))` over the listed eigenvalues,
/// with conjugate pairs merged into real quadratic factors.
fn complementary_range(s: &DMatrix<f64>, remove: &[Complex64], rank: usize) -> Result<DMatrix<f64>> {
    let d = s.nrows();
    let scale = spectral_norm(s).max(1.0);
    let id = DMatrix::<f64>::identity(d, d);
    let mut prod = id.clone();
    for mu in remove {
        if mu.im < 0.0 {
            continue;
        }
        let factor = if mu.im.abs() <= 1e-12 * scale {
            s - &id * mu.re
        } else {
            s * s - s * (2.0 * mu.re) + &id * mu.norm_sqr()
        };
        prod = factor * prod;
        let n = spectral_norm(&prod);
        if n > 0.0 {
            prod /= n;
        }
    }
    let dec = svd(&prod);
    if rank > 0 && dec.singular_values[rank - 1] < 1e-12 * dec.singular_values[0] {
        return Err(Error::Degenerate("invariant subspace is numerically rank deficient".into()));
    }
    Ok(dec.u.columns(0, rank).into_owned())
}

impl SpectralGap {
    /// Splitting at the circle `|z| = split`; `(a, b)` is the widest gap in
    /// the moduli containing `split`.
    pub fn at(s: &DMatrix<f64>, split: f64) -> Result<Self> {
        let moduli = eigen_moduli(s);
        let a = moduli.iter().copied().filter(|m| *m < split).fold(0.0, f64::max);
        let b = moduli.iter().copied().find(|m| *m > split).unwrap_or(f64::INFINITY);
        Self::build(s, a, b, split, false)
    }

    /// Splitting valid on the closed band `[a, b]`, which must contain no
    /// eigenvalue modulus.
    pub fn between(s: &DMatrix<f64>, a: f64, b: f64) -> Result<Self> {
        Self::build(s, a, b, 0.5 * (a + b), true)
    }

    fn build(s: &DMatrix<f64>, a: f64, b: f64, split: f64, closed: bool) -> Result<Self> {
        if !(split >= 0.0 && a < b) {
            return Err(Error::InvalidArgument(format!("need 0 <= a < b, got ({a}, {b})")));
        }
        let tol = 1e-8;
        let eig = eigenvalues(s);
        for z in &eig {
            let m = z.norm();
            let inside = if closed { m >= a - tol && m <= b + tol } else { (m - split).abs() <= tol };
            if inside {
                return Err(Error::GapViolation { modulus: m, threshold: split, tol });
            }
        }
        let d = s.nrows();
        let fast: Vec<Complex64> = eig.iter().copied().filter(|z| z.norm() > split).collect();
        let slow: Vec<Complex64> = eig.iter().copied().filter(|z| z.norm() < split).collect();
        let fast_basis = complementary_range(s, &slow, fast.len())?;
        let slow_basis = complementary_range(s, &fast, slow.len())?;
        let mut both = DMatrix::zeros(d, d);
        both.columns_mut(0, fast.len()).copy_from(&fast_basis);
        both.columns_mut(fast.len(), slow.len()).copy_from(&slow_basis);
        let inv = both
            .try_inverse()
            .ok_or_else(|| Error::Degenerate("invariant subspaces are not complementary".into()))?;
        let fast_coords = inv.rows(0, fast.len()).into_owned();
        let slow_coords = inv.rows(fast.len(), slow.len()).into_owned();
        let p = &fast_basis * &fast_coords;
        let q = &slow_basis * &slow_coords;
        let u = fast_basis.transpose() * s * &fast_basis;
        let v = slow_basis.transpose() * s * &slow_basis;
        let gap = Self { a, b, split, p, q, fast_basis, slow_basis, u, v, fast_coords, slow_coords };
        let scale = spectral_norm(s).max(1.0) * spectral_norm(&gap.p).max(1.0);
        let comm = spectral_norm(&(&gap.p * s - s * &gap.p));
        let idem = spectral_norm(&(&gap.p * &gap.p - &gap.p));
        if comm > 1e-10 * scale || idem > 1e-10 * spectral_norm(&gap.p).max(1.0) {
            return Err(Error::Degenerate(format!(
                "projection check failed (commutator {comm:e}, idempotency {idem:e})"
            )));
        }
        Ok(gap)
    }

    pub fn fast_rank(&self) -> usize {
        self.fast_basis.ncols()
    }

    pub fn slow_rank(&self) -> usize {
        self.slow_basis.ncols()
    }

    /// `U^m P` for any integer `m`; negative powers need `U` invertible.
    pub fn u_power_p(&self, m: i64) -> Result<DMatrix<f64>> {
        let base = if m >= 0 {
            self.u.clone()
        } else {
            self.u
                .clone()
                .try_inverse()
                .ok_or_else(|| Error::Degenerate("restriction to the fast range is not invertible".into()))?
        };
        Ok(&self.fast_basis * base.pow(m.unsigned_abs() as u32) * &self.fast_coords)
    }

    /// `V^m Q` for `m ≥ 0`.
    pub fn v_power_q(&self, m: u32) -> DMatrix<f64> {
        &self.slow_basis * self.v.pow(m) * &self.slow_coords
    }
}

pub fn spectral_projections(s: &DMatrix<f64>, a: f64) -> Result<SpectralGap> {
    SpectralGap::at(s, a)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum IterDirection {
    Forward,
    /// Two-sided construction: start at `n = -n_max` and run up to `n = 0`.
    Backward,
}

#[derive(Debug, Clone)]
pub struct Trajectory {
    pub indices: Vec<i64>,
    pub normalized: Vec<DVector<f64>>,
    /// `log ‖v(n)‖`, accumulated exactly across renormalizations.
    pub log_norms: Vec<f64>,
    /// `‖ξ_n‖ / ‖v(n)‖` for each step taken.
    pub smallness: Vec<f64>,
}

impl Trajectory {
    /// Whether `‖ξ_n‖/‖v(n)‖` is small on the tail and not increasing.
    pub fn smallness_ok(&self, tol: f64) -> bool {
        let n = self.smallness.len();
        let tail = &self.smallness[n - n / 4..];
        tail.iter().all(|x| *x <= tol.max(self.smallness[n / 2]))
    }
}

pub fn iterate(rec: &PerturbedRecursion, n_max: usize, direction: IterDirection) -> Result<Trajectory> {
    if n_max == 0 {
        return Err(Error::InvalidArgument("n_max must be positive".into()));
    }
    let start: i64 = match direction {
        IterDirection::Forward => 0,
        IterDirection::Backward => -(n_max as i64),
    };
    let n0 = rec.v0.norm();
    if !(n0 > 0.0) {
        return Err(Error::Degenerate("v(0) = 0".into()));
    }
    let mut v = &rec.v0 / n0;
    let mut log_acc = n0.ln();
    let mut out = Trajectory {
        indices: vec![start],
        normalized: vec![v.clone()],
        log_norms: vec![log_acc],
        smallness: Vec::with_capacity(n_max),
    };
    for i in 0..n_max {
        let n = start + i as i64;
        let xi = (rec.perturbation)(n) * &v;
        out.smallness.push(xi.norm());
        let next = &rec.s * &v + xi;
        let nrm = next.norm();
        if !(nrm > 0.0) || !nrm.is_finite() {
            return Err(Error::Degenerate(format!("v({}) = 0", n + 1)));
        }
        log_acc += nrm.ln();
        v = next / nrm;
        out.indices.push(n + 1);
        out.normalized.push(v.clone());
        out.log_norms.push(log_acc);
    }
    Ok(out)
}

fn tail_slope(xs: &[f64]) -> f64 {
    let n = xs.len() as f64;
    let mx = (n - 1.0) / 2.0;
    let my = xs.iter().sum::<f64>() / n;
    let sxy: f64 = xs.iter().enumerate().map(|(i, y)| (i as f64 - mx) * (y - my)).sum();
    let sxx: f64 = (0..xs.len()).map(|i| (i as f64 - mx).powi(2)).sum();
    sxy / sxx
}

#[derive(Debug, Clone, Serialize)]
pub struct RateReport {
    pub rate: f64,
    pub nearest_modulus: f64,
    pub error: f64,
    pub smallness_ok: bool,
}

/// `lim ‖v(n)‖^{1/n}` from a log-linear fit over the second half of the run.
pub fn asymptotic_rate(rec: &PerturbedRecursion, n_max: usize) -> Result<RateReport> {
    let tr = iterate(rec, n_max, IterDirection::Forward)?;
    let rate = tail_slope(&tr.log_norms[n_max / 2..]).exp();
    let nearest = rec
        .moduli()
        .into_iter()
        .min_by(|a, b| (a - rate).abs().total_cmp(&(b - rate).abs()))
        .unwrap_or(f64::NAN);
    Ok(RateReport {
        rate,
        nearest_modulus: nearest,
        error: (rate - nearest).abs(),
        smallness_ok: tr.smallness_ok(1e-6),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Branch {
    /// `‖Pv‖/‖Qv‖ → ∞` and growth at least `b`.
    Fast,
    /// `‖Pv‖/‖Qv‖ → 0` and growth at most `a`.
    Slow,
    Inconclusive,
}

#[derive(Debug, Clone, Serialize)]
pub struct DichotomyReport {
    pub branch: Branch,
    pub final_log_ratio: f64,
    pub log_ratio_slope: f64,
    pub rate: f64,
}

const RATIO_DECISIVE: f64 = 18.0;

pub fn dichotomy_classify(rec: &PerturbedRecursion, gap: &SpectralGap, n_max: usize, tol: f64) -> Result<DichotomyReport> {
    let tr = iterate(rec, n_max, IterDirection::Forward)?;
    let log_ratio: Vec<f64> = tr
        .normalized
        .iter()
        .map(|v| {
            let p = (&gap.p * v).norm();
            let q = (&gap.q * v).norm();
            match (p > 0.0, q > 0.0) {
                (_, false) => f64::INFINITY,
                (false, true) => f64::NEG_INFINITY,
                _ => (p / q).ln(),
            }
        })
        .collect();
    let rate = tail_slope(&tr.log_norms[n_max / 2..]).exp();
    let tail = &log_ratio[n_max - n_max / 4..];
    let last = *log_ratio.last().expect("nonempty");
    let slope = if tail.iter().all(|x| x.is_finite()) { tail_slope(tail) } else { 0.0 };
    // ratios saturate at round-off level, so the tail is judged by its range
    let fast = tail.iter().all(|x| *x > RATIO_DECISIVE);
    let slow = tail.iter().all(|x| *x < -RATIO_DECISIVE);
    let branch = if fast && rate >= gap.b - tol {
        Branch::Fast
    } else if slow && rate <= gap.a + tol {
        Branch::Slow
    } else {
        Branch::Inconclusive
    };
    Ok(DichotomyReport {
        branch,
        final_log_ratio: last,
        log_ratio_slope: slope,
        rate,
    })
}

#[derive(Debug, Clone, Serialize)]
pub struct LimitSetReport {
    pub band: (f64, f64),
    pub lower_branch: Branch,
    pub upper_branch: Branch,
    pub band_rank: usize,
    /// Largest distance of a tail iterate to the unit sphere of the band range.
    pub distance: f64,
    pub hypotheses_hold: bool,
}

/// Tail of the normalized sequence against the unit sphere of
/// `range(P(α) - P(β))`.
pub fn normalized_limit_set(rec: &PerturbedRecursion, band: (f64, f64), n_max: usize) -> Result<LimitSetReport> {
    let lo = SpectralGap::at(&rec.s, band.0)?;
    let hi = SpectralGap::at(&rec.s, band.1)?;
    let lower = dichotomy_classify(rec, &lo, n_max, 1e-3)?.branch;
    let upper = dichotomy_classify(rec, &hi, n_max, 1e-3)?.branch;
    let pstar = &lo.p - &hi.p;
    let rank = lo.fast_rank() - hi.fast_rank();
    let basis = svd(&pstar).u.columns(0, rank).into_owned();
    let tr = iterate(rec, n_max, IterDirection::Forward)?;
    let distance = tr.normalized[n_max - n_max / 4..]
        .iter()
        .map(|v| {
            let proj = &basis * (basis.transpose() * v);
            let n = proj.norm();
            if n == 0.0 { f64::INFINITY } else { (v - proj / n).norm() }
        })
        .fold(0.0, f64::max);
    Ok(LimitSetReport {
        band,
        lower_branch: lower,
        upper_branch: upper,
        band_rank: rank,
        distance,
        hypotheses_hold: lower == Branch::Fast && upper == Branch::Slow && rank > 0,
    })
}

#[derive(Debug, Clone, Serialize)]
pub struct DeltaReport {
    pub value: f64,
    pub argmax: i64,
    pub sup_perturbation: f64,
    /// `δ / sup ‖R_n‖`, an empirical lower bound on the constant `M(λ)`.
    pub ratio: f64,
}

const TAIL_RUN: usize = 50;
const DELTA_HORIZON: usize = 100;
const TAIL_MAX: usize = 20_000;

/// `sup_n` of the two-sided weighted sums defining `δ(λ, R)`, over
/// `0 ≤ n ≤ n_max` (forward) or `-n_max ≤ n ≤ 0` (backward).
pub fn delta_lambda(
    gap: &SpectralGap,
    schedule: &Schedule,
    lambda: f64,
    direction: IterDirection,
    n_max: usize,
) -> Result<DeltaReport> {
    if !(lambda > gap.a && lambda < gap.b) {
        return Err(Error::InvalidArgument(format!("λ = {lambda} outside the gap ({}, {})", gap.a, gap.b)));
    }
    let mut upinv: Vec<DMatrix<f64>> = Vec::new();
    let u_inv_pow = |j: usize, cache: &mut Vec<DMatrix<f64>>| -> Result<DMatrix<f64>> {
        while cache.len() <= j {
            let m = gap.u_power_p(-(cache.len() as i64))?;
            cache.push(m);
        }
        Ok(cache[j].clone())
    };
    let mut vq: Vec<DMatrix<f64>> = Vec::new();
    let mut v_pow = |j: usize| -> DMatrix<f64> {
        while vq.len() <= j {
            vq.push(gap.v_power_q(vq.len() as u32));
        }
        vq[j].clone()
    };
    let mut best = (0.0f64, 0i64);
    let mut sup_r = 0.0f64;
    let ns: Vec<i64> = match direction {
        IterDirection::Forward => (0..=n_max as i64).collect(),
        IterDirection::Backward => (-(n_max as i64)..=0).collect(),
    };
    let r_norm = |k: i64| spectral_norm(&schedule(k));
    for &n in &ns {
        let mut total = 0.0;
        match direction {
            IterDirection::Forward => {
                for k in 1..=n {
                    let r = schedule(k - 1);
                    total += lambda.powi((k - n - 1) as i32) * spectral_norm(&(v_pow((n - k) as usize) * r));
                }
                let mut quiet = 0;
                let mut k = n + 1;
                while quiet < TAIL_RUN && ((k - n) as usize) < TAIL_MAX {
                    let r = schedule(k - 1);
                    let term = lambda.powi((k - n - 1) as i32) * spectral_norm(&(u_inv_pow((k - n) as usize, &mut upinv)? * r));
                    total += term;
                    quiet = if term < 1e-14 { quiet + 1 } else { 0 };
                    k += 1;
                }
            }
            IterDirection::Backward => {
                for k in (n + 1)..=0 {
                    let r = schedule(k - 1);
                    total += lambda.powi((k - n - 1) as i32) * spectral_norm(&(u_inv_pow((k - n) as usize, &mut upinv)? * r));
                }
                let mut quiet = 0;
                let mut k = n;
                while quiet < TAIL_RUN && ((n - k) as usize) < TAIL_MAX {
                    let r = schedule(k - 1);
                    let term = lambda.powi((k - n - 1) as i32) * spectral_norm(&(v_pow((n - k) as usize) * r));
                    total += term;
                    quiet = if term < 1e-14 { quiet + 1 } else { 0 };
                    k -= 1;
                }
            }
        }
        if total > best.0 {
            best = (total, n);
        }
    }
    for &n in &ns {
        sup_r = sup_r.max(r_norm(n));
    }
    Ok(DeltaReport {
        value: best.0,
        argmax: best.1,
        sup_perturbation: sup_r,
        ratio: if sup_r > 0.0 { best.0 / sup_r } else { 0.0 },
    })
}

#[derive(Debug, Clone, Serialize)]
pub struct BoundedSpaceReport {
    pub direction: IterDirection,
    pub delta: f64,
    /// Count of Lyapunov exponents on the bounded side of `log λ`.
    pub lyapunov_dim: usize,
    pub expected_dim: usize,
    /// Samples from the candidate subspace classified bounded.
    pub inside_bounded: usize,
    /// Samples off the candidate subspace classified unbounded.
    pub outside_unbounded: usize,
    pub samples: usize,
    pub horizon: usize,
}

impl BoundedSpaceReport {
    pub fn pass(&self) -> bool {
        self.lyapunov_dim == self.expected_dim
            && self.inside_bounded == self.samples
            && self.outside_unbounded == self.samples
    }
}

fn step_matrix(s: &DMatrix<f64>, sched: &Schedule, n: i64) -> DMatrix<f64> {
    s + sched(n)
}

fn lyapunov_exponents(s: &DMatrix<f64>, sched: &Schedule, start: i64, steps: usize) -> Vec<f64> {
    let d = s.nrows();
    let mut q = DMatrix::<f64>::identity(d, d);
    let mut acc = vec![0.0; d];
    for i in 0..steps {
        let m = step_matrix(s, sched, start + i as i64) * &q;
        let qr = m.qr();
        let r = qr.r();
        q = qr.q();
        for (j, a) in acc.iter_mut().enumerate() {
            *a += r[(j, j)].abs().ln();
        }
    }
    let mut out: Vec<f64> = acc.iter().map(|a| a / steps as f64).collect();
    out.sort_by(f64::total_cmp);
    out
}

const BOUNDED_LIMIT: f64 = 1e2;
const GROWTH_TARGET: f64 = 1e5;

fn orth_columns(m: DMatrix<f64>) -> DMatrix<f64> {
    let k = m.ncols();
    let q = m.qr().q();
    q.columns(0, k).into_owned()
}

/// Dominant `p`-dimensional right singular subspace of the product of
/// `steps` (first applied first) by orthogonal iteration, and the span of its
/// image; re-orthonormalized after every factor.
fn dominant_subspaces(steps: &[DMatrix<f64>], p: usize, rng: &mut ChaCha8Rng) -> (DMatrix<f64>, DMatrix<f64>) {
    let d = steps[0].nrows();
    let mut z = orth_columns(DMatrix::from_fn(d, p, |_, _| rng.sample::<f64, _>(StandardNormal)));
    let mut image = z.clone();
    for _ in 0..4 {
        let mut y = z.clone();
        for m in steps {
            y = orth_columns(m * y);
        }
        image = y.clone();
        for m in steps.iter().rev() {
            y = orth_columns(m.transpose() * y);
        }
        z = y;
    }
    (z, image)
}

fn orthogonal_complement(basis: &DMatrix<f64>) -> DMatrix<f64> {
    let d = basis.nrows();
    let mut cols: Vec<DVector<f64>> = (0..basis.ncols()).map(|i| basis.column(i).into_owned()).collect();
    let mut out = Vec::new();
    for i in 0..d {
        let mut e = DVector::zeros(d);
        e[i] = 1.0;
        for _ in 0..2 {
            for c in &cols {
                let proj = c.dot(&e);
                e.axpy(-proj, c, 1.0);
            }
        }
        let n = e.norm();
        if n > 1e-8 {
            e /= n;
            cols.push(e.clone());
            out.push(e);
        }
    }
    if out.is_empty() {
        DMatrix::zeros(d, 0)
    } else {
        DMatrix::from_columns(&out)
    }
}

/// Dimension of `F`, the initial data with `sup λ^{-n} ‖v(n)‖ < ∞`, by
/// Lyapunov counting, confirmed by a growth-threshold classifier on samples
/// from the candidate subspace and off it.
pub fn bounded_solution_space(
    s: &DMatrix<f64>,
    schedule: &Schedule,
    lambda: f64,
    gap: &SpectralGap,
    direction: IterDirection,
    samples: usize,
    seed: u64,
) -> Result<BoundedSpaceReport> {
    let delta = delta_lambda(gap, schedule, lambda, direction, DELTA_HORIZON)?.value;
    if !(delta < 1.0) {
        return Err(Error::PreconditionFailed(format!("δ(λ, R) = {delta} is not below 1")));
    }
    let d = s.nrows();
    let lyap_steps = 400;
    let lyap_start = match direction {
        IterDirection::Forward => 0,
        IterDirection::Backward => -(lyap_steps as i64),
    };
    let exps = lyapunov_exponents(s, schedule, lyap_start, lyap_steps);
    let growing = exps.iter().filter(|e| **e > lambda.ln()).count();
    let (lyapunov_dim, expected) = match direction {
        IterDirection::Forward => (d - growing, gap.slow_rank()),
        IterDirection::Backward => (growing, gap.fast_rank()),
    };
    // long enough for the weakest separation across λ to reach the target
    let sep = (gap.b / lambda).ln().min((lambda / gap.a.max(1e-300)).ln());
    let horizon = ((GROWTH_TARGET.ln() / sep).ceil() as usize).clamp(8, 2000);
    let start = match direction {
        IterDirection::Forward => 0,
        IterDirection::Backward => -(horizon as i64),
    };
    let steps: Vec<DMatrix<f64>> = (0..horizon).map(|i| step_matrix(s, schedule, start + i as i64)).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (fast_right, fast_image) = if growing > 0 {
        dominant_subspaces(&steps, growing, &mut rng)
    } else {
        (DMatrix::zeros(d, 0), DMatrix::zeros(d, 0))
    };
    let (inside, outside) = match direction {
        IterDirection::Forward => (orthogonal_complement(&fast_right), fast_right),
        IterDirection::Backward => {
            let comp = orthogonal_complement(&fast_image);
            (fast_image, comp)
        }
    };
    let sample = |basis: &DMatrix<f64>, rng: &mut ChaCha8Rng| -> Option<DVector<f64>> {
        if basis.ncols() == 0 {
            return None;
        }
        let c = DVector::from_fn(basis.ncols(), |_, _| rng.sample::<f64, _>(StandardNormal));
        let x = basis * c;
        let n = x.norm();
        Some(x / n)
    };
    // sup over the run of λ^{-n}‖v(n)‖ for the sequence through ψ at n = 0
    let sup_weighted = |psi: &DVector<f64>| -> f64 {
        match direction {
            IterDirection::Forward => {
                let mut x = psi.clone();
                let mut sup = x.norm();
                for (i, m) in steps.iter().enumerate() {
                    x = m * x;
                    sup = sup.max(lambda.powi(-(i as i32 + 1)) * x.norm());
                }
                sup
            }
            IterDirection::Backward => {
                let mut y = psi.clone();
                let mut sup = y.norm();
                for (i, m) in steps.iter().enumerate().rev() {
                    let n = start + i as i64;
                    let dec = svd(m);
                    let cut = 1e-14 * dec.singular_values[0];
                    let mut x = DVector::zeros(d);
                    for k in 0..d {
                        let sk = dec.singular_values[k];
                        if sk > cut {
                            x.axpy(dec.u.column(k).dot(&y) / sk, &dec.v.column(k), 1.0);
                        }
                    }
                    if (m * &x - &y).norm() > 1e-8 * y.norm() {
                        return f64::INFINITY;
                    }
                    y = x;
                    sup = sup.max(lambda.powi(-(n as i32)) * y.norm());
                }
                sup
            }
        }
    };
    // backward members are built by running forward from n = -horizon
    let two_sided = |xi: DVector<f64>| -> (f64, f64) {
        let mut x = xi;
        let mut weighted = vec![lambda.powi(horizon as i32) * x.norm()];
        for (i, m) in steps.iter().enumerate() {
            x = m * x;
            weighted.push(lambda.powi(-(start + i as i64 + 1) as i32) * x.norm());
        }
        let psi_norm = x.norm();
        let psi = &x / psi_norm;
        let off = (&psi - &inside * (inside.transpose() * &psi)).norm();
        (weighted.iter().fold(0.0, |a: f64, b| a.max(*b)) / psi_norm, off)
    };
    let mut inside_bounded = 0;
    let mut outside_unbounded = 0;
    for _ in 0..samples {
        let bounded = match direction {
            IterDirection::Forward => sample(&inside, &mut rng).map(|psi| sup_weighted(&psi) <= BOUNDED_LIMIT),
            IterDirection::Backward if inside.ncols() > 0 => {
                let xi = DVector::from_fn(d, |_, _| rng.sample::<f64, _>(StandardNormal));
                let (sup, off) = two_sided(xi);
                Some(sup <= BOUNDED_LIMIT && off <= 1e-6)
            }
            IterDirection::Backward => None,
        };
        if bounded.unwrap_or(true) {
            inside_bounded += 1;
        }
        match sample(&outside, &mut rng) {
            Some(psi) if sup_weighted(&psi) > BOUNDED_LIMIT => outside_unbounded += 1,
            None => outside_unbounded += 1,
            _ => {}
        }
    }
    Ok(BoundedSpaceReport {
        direction,
        delta,
        lyapunov_dim,
        expected_dim: expected,
        inside_bounded,
        outside_unbounded,
        samples,
        horizon,
    })
}

/// Random `d × d` matrix `X D X⁻¹` whose eigenvalue moduli lie in
/// `[0.3, 0.8] ∪ [1.25, 2]`, with some complex pairs; both sides nonempty.
pub fn random_gap_matrix(d: usize, rng: &mut ChaCha8Rng) -> DMatrix<f64> {
    assert!(d >= 2);
    loop {
        let mut dmat = DMatrix::<f64>::zeros(d, d);
        let mut i = 0;
        let mut fast = 0;
        while i < d {
            let is_fast = rng.gen_bool(0.5);
            let r = if is_fast { rng.gen_range(1.25..2.0) } else { rng.gen_range(0.3..0.8) };
            if i + 1 < d && rng.gen_bool(0.3) {
                let th: f64 = rng.gen_range(0.3..2.8);
                dmat[(i, i)] = r * th.cos();
                dmat[(i, i + 1)] = -r * th.sin();
                dmat[(i + 1, i)] = r * th.sin();
                dmat[(i + 1, i + 1)] = r * th.cos();
                fast += 2 * is_fast as usize;
                i += 2;
            } else {
                dmat[(i, i)] = if rng.gen_bool(0.5) { r } else { -r };
                fast += is_fast as usize;
                i += 1;
            }
        }
        if fast == 0 || fast == d {
            continue;
        }
        let g = DMatrix::<f64>::from_fn(d, d, |_, _| rng.sample::<f64, _>(StandardNormal));
        let x = DMatrix::<f64>::identity(d, d) + g * (0.3 / (d as f64).sqrt());
        let sv = svd(&x).singular_values;
        if sv[0] / sv[d - 1] > 20.0 {
            continue;
        }
        let xinv = x.clone().try_inverse().expect("well conditioned");
        return x * dmat * xinv;
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct TrialOutcome {
    pub index: usize,
    pub rate_error: f64,
    pub branch: Branch,
    pub forward_dim_ok: bool,
    pub backward_dim_ok: bool,
    pub delta: f64,
    pub pass: bool,
    pub error: Option<String>,
}

#[derive(Debug, Clone, Serialize)]
pub struct SuiteReport {
    pub trials: Vec<TrialOutcome>,
    pub passed: usize,
}

/// Randomized checks of the rate law, the dichotomy and the bounded-space
/// dimensions on `trials` independent `d × d` problems.
pub fn recursion_suite(trials: usize, d: usize, seed: u64, rate_tol: f64) -> SuiteReport {
    let outcomes: Vec<TrialOutcome> = (0..trials)
        .into_par_iter()
        .map(|i| {
            let run = || -> Result<TrialOutcome> {
                let mut rng = ChaCha8Rng::seed_from_u64(seed.wrapping_add(i as u64));
                let s = random_gap_matrix(d, &mut rng);
                let g = DMatrix::<f64>::from_fn(d, d, |_, _| rng.sample::<f64, _>(StandardNormal));
                let g = &g / spectral_norm(&g);
                let sched = geometric_schedule(g, 0.02, 0.9);
                let v0 = DVector::from_fn(d, |_, _| rng.sample::<f64, _>(StandardNormal));
                let rec = PerturbedRecursion::new(s.clone(), sched.clone(), v0)?;
                let rate = asymptotic_rate(&rec, 1000)?;
                let gap = SpectralGap::between(&s, 0.8, 1.25)?;
                let dich = dichotomy_classify(&rec, &gap, 400, 1e-3)?;
                let fwd = bounded_solution_space(&s, &sched, 1.0, &gap, IterDirection::Forward, 8, seed ^ i as u64)?;
                let bwd = bounded_solution_space(&s, &sched, 1.0, &gap, IterDirection::Backward, 8, seed ^ i as u64)?;
                let pass = rate.error <= rate_tol && dich.branch == Branch::Fast && fwd.pass() && bwd.pass();
                Ok(TrialOutcome {
                    index: i,
                    rate_error: rate.error,
                    branch: dich.branch,
                    forward_dim_ok: fwd.pass(),
                    backward_dim_ok: bwd.pass(),
                    delta: fwd.delta.max(bwd.delta),
                    pass,
                    error: None,
                })
            };
            run().unwrap_or_else(|e| TrialOutcome {
                index: i,
                rate_error: f64::NAN,
                branch: Branch::Inconclusive,
                forward_dim_ok: false,
                backward_dim_ok: false,
                delta: f64::NAN,
                pass: false,
                error: Some(e.to_string()),
            })
        })
        .collect();
    let passed = outcomes.iter().filter(|o| o.pass).count();
    SuiteReport { trials: outcomes, passed }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn diag(xs: &[f64]) -> DMatrix<f64> {
        DMatrix::from_diagonal(&DVector::from_column_slice(xs))
    }

    fn rec(s: DMatrix<f64>, sched: Schedule, v0: &[f64]) -> PerturbedRecursion {
        PerturbedRecursion::new(s, sched, DVector::from_column_slice(v0)).unwrap()
    }

    #[test]
    fn diagonal_projections() {
        let g = spectral_projections(&diag(&[2.0, 0.5]), 1.0).unwrap();
        assert!((g.p.clone() - diag(&[1.0, 0.0])).norm() < 1e-12);
        assert!((g.q.clone() - diag(&[0.0, 1.0])).norm() < 1e-12);
        assert!(matches!(spectral_projections(&diag(&[2.0, 0.5]), 2.0), Err(Error::GapViolation { .. })));
    }

    #[test]
    fn rotation_block_projection() {
        let th: f64 = 0.7;
        let mut s = DMatrix::zeros(3, 3);
        s[(0, 0)] = 2.0 * th.cos();
        s[(0, 1)] = -2.0 * th.sin();
        s[(1, 0)] = 2.0 * th.sin();
        s[(1, 1)] = 2.0 * th.cos();
        s[(2, 2)] = 0.5;
        let x = DMatrix::from_row_slice(3, 3, &[1.0, 0.2, -0.3, 0.1, 1.0, 0.4, 0.3, -0.2, 1.0]);
        let xi = x.clone().try_inverse().unwrap();
        let a = &x * &s * &xi;
        let g = spectral_projections(&a, 1.0).unwrap();
        let mut sel = DMatrix::zeros(3, 3);
        sel[(0, 0)] = 1.0;
        sel[(1, 1)] = 1.0;
        let oracle = &x * sel * &xi;
        assert!((g.p.clone() - oracle).norm() < 1e-10);
        assert_eq!(g.fast_rank(), 2);
    }

    #[test]
    fn rates_and_excitation() {
        let z = zero_schedule(2);
        let r1 = asymptotic_rate(&rec(diag(&[2.0, 0.5]), z.clone(), &[1.0, 0.0]), 200).unwrap();
        assert!((r1.rate - 2.0).abs() < 1e-12);
        let r2 = asymptotic_rate(&rec(diag(&[2.0, 0.5]), z, &[0.0, 1.0]), 200).unwrap();
        assert!((r2.rate - 0.5).abs() < 1e-12);
        let anti = DMatrix::from_row_slice(2, 2, &[0.0, 1.0, 1.0, 0.0]);
        let pert = rec(diag(&[2.0, 0.5]), geometric_schedule(anti, 1.0, 0.5), &[0.0, 1.0]);
        let r3 = asymptotic_rate(&pert, 200).unwrap();
        assert!((r3.rate - 2.0).abs() < 1e-3, "{}", r3.rate);
        let gap = SpectralGap::between(&pert.s, 0.6, 1.9).unwrap();
        assert_eq!(dichotomy_classify(&pert, &gap, 200, 1e-3).unwrap().branch, Branch::Fast);
    }

    #[test]
    fn dichotomy_fibers() {
        let z = zero_schedule(2);
        let s = diag(&[2.0, 0.5]);
        let gap = SpectralGap::at(&s, 1.0).unwrap();
        let fast = dichotomy_classify(&rec(s.clone(), z.clone(), &[1.0, 0.0]), &gap, 100, 1e-3).unwrap();
        assert_eq!(fast.branch, Branch::Fast);
        let slow = dichotomy_classify(&rec(s, z, &[0.0, 1.0]), &gap, 100, 1e-3).unwrap();
        assert_eq!(slow.branch, Branch::Slow);
    }

    #[test]
    fn limit_set_band() {
        let s = diag(&[2.0, 1.2, 0.5]);
        let mut m = DMatrix::zeros(3, 3);
        m[(1, 2)] = 1.0;
        m[(2, 1)] = 1.0;
        let sched = geometric_schedule(m, 0.1, 0.8);
        let r = normalized_limit_set(&rec(s.clone(), sched.clone(), &[0.0, 0.3, 1.0]), (0.8, 1.6), 200).unwrap();
        assert!(r.hypotheses_hold);
        assert!(r.distance < 1e-6, "{}", r.distance);
        let pure = normalized_limit_set(&rec(s.clone(), zero_schedule(3), &[0.0, 1.0, 0.0]), (0.8, 1.6), 50).unwrap();
        assert!(pure.distance < 1e-14);
        let bad = normalized_limit_set(&rec(s, sched, &[0.1, 0.3, 1.0]), (0.8, 1.6), 200).unwrap();
        assert!(!bad.hypotheses_hold);
    }

    #[test]
    fn delta_oracle() {
        let s = diag(&[2.0, 0.5]);
        let gap = SpectralGap::at(&s, 1.0).unwrap();
        let z = zero_schedule(2);
        assert_eq!(delta_lambda(&gap, &z, 1.0, IterDirection::Forward, 50).unwrap().value, 0.0);
        let sched: Schedule = Arc::new(|n| if n < 10 { DMatrix::identity(2, 2) * 0.01 } else { DMatrix::zeros(2, 2) });
        let got = delta_lambda(&gap, &sched, 1.0, IterDirection::Forward, 60).unwrap().value;
        // brute force: ‖V^{n-k} Q R‖ = 0.01·0.5^{n-k}, ‖U^{n-k} P R‖ = 0.01·2^{n-k}
        let mut oracle: f64 = 0.0;
        for n in 0..=60i32 {
            let mut t = 0.0;
            for k in 1..=n {
                if k - 1 < 10 {
                    t += 0.01 * 0.5f64.powi(n - k);
                }
            }
            for k in (n + 1)..(n + 200) {
                if k - 1 < 10 {
                    t += 0.01 * 2f64.powi(n - k);
                }
            }
            oracle = oracle.max(t);
        }
        assert!((got - oracle).abs() < 1e-12, "{got} vs {oracle}");
        let g = DMatrix::from_row_slice(2, 2, &[0.3, -1.0, 0.5, 0.2]);
        let a = delta_lambda(&gap, &geometric_schedule(g.clone(), 1e-3, 0.7), 1.0, IterDirection::Forward, 40).unwrap();
        let b = delta_lambda(&gap, &geometric_schedule(g, 2e-3, 0.7), 1.0, IterDirection::Forward, 40).unwrap();
        assert!((b.value - 2.0 * a.value).abs() < 1e-10 * b.value);
    }

    #[test]
    fn bounded_space_diagonal() {
        let s = diag(&[2.0, 0.5]);
        let gap = SpectralGap::at(&s, 1.0).unwrap();
        let z = zero_schedule(2);
        let f = bounded_solution_space(&s, &z, 1.0, &gap, IterDirection::Forward, 4, 1).unwrap();
        assert!(f.pass() && f.lyapunov_dim == 1, "{f:?}");
        let b = bounded_solution_space(&s, &z, 1.0, &gap, IterDirection::Backward, 4, 1).unwrap();
        assert!(b.pass() && b.lyapunov_dim == 1, "{b:?}");
        let big: Schedule = Arc::new(|_| DMatrix::identity(2, 2) * 5.0);
        assert!(matches!(
            bounded_solution_space(&s, &big, 1.0, &gap, IterDirection::Forward, 4, 1),
            Err(Error::PreconditionFailed(_))
        ));
    }

    #[test]
    fn small_suite() {
        let rep = recursion_suite(6, 8, 11, 1e-3);
        for t in &rep.trials {
            assert!(t.pass, "{t:?}");
        }
    }
}
