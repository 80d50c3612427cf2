//! Linear equations asymptotic to a periodic one: convergence of the period
//! maps, forward/backward growth rates and their ladder classification, and
//! the zero-number content of the resulting filtrations.

use std::sync::Arc;

use nalgebra::DVector;
use rand::Rng;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::floquet::{linear_floquet_spectrum, FloquetOptions, FloquetSpectrum};
use crate::grid::{CircleGrid, StateVector, DEFAULT_ALPHA};
use crate::linalg::{orthogonalize, AlphaCoords};
use crate::stepper::{evolve_linear_fields, StepperConfig};
use crate::zeroes::{zero_count, DEFAULT_ZERO_TOL};

pub type Coefficient = Arc<dyn Fn(f64, f64) -> f64 + Send + Sync>;

/// `v_t = v_xx + c(t,x) v_x + d(t,x) v` together with its `T`-periodic limit.
#[derive(Clone)]
pub struct LinearProblem {
    pub c: Coefficient,
    pub d: Coefficient,
    pub limit_c: Coefficient,
    pub limit_d: Coefficient,
    pub period: f64,
}

impl std::fmt::Debug for LinearProblem {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("LinearProblem").field("period", &self.period).finish()
    }
}

const PROBE_TIMES: usize = 16;

impl LinearProblem {
    pub fn new(c: Coefficient, d: Coefficient, limit_c: Coefficient, limit_d: Coefficient, period: f64) -> Result<Self> {
        if !(period > 0.0) {
            return Err(Error::InvalidArgument("period must be positive".into()));
        }
        let lp = Self { c, d, limit_c, limit_d, period };
        for i in 0..PROBE_TIMES {
            let t = period * i as f64 / PROBE_TIMES as f64;
            for x in [0.0, 1.0, 2.5, 4.0] {
                for (name, g) in [("c", &lp.limit_c), ("d", &lp.limit_d)] {
                    let (a, b) = (g(t, x), g(t + period, x));
                    if (a - b).abs() > 1e-12 * (1.0 + a.abs()) {
                        return Err(Error::InvalidArgument(format!(
                            "limit coefficient {name} is not {period}-periodic"
                        )));
                    }
                }
            }
        }
        Ok(lp)
    }

    /// The limit problem itself (zero defect).
    pub fn periodic(c: Coefficient, d: Coefficient, period: f64) -> Result<Self> {
        Self::new(c.clone(), d.clone(), c, d, period)
    }

    /// `sup |c - c̃| + |d - d̃|` over `[nT, (n+1)T] × S¹` on sample points.
    pub fn defect_on_period(&self, grid: &CircleGrid, n: i64) -> f64 {
        let mut worst = 0.0_f64;
        for i in 0..=PROBE_TIMES {
            let t = (n as f64 + i as f64 / PROBE_TIMES as f64) * self.period;
            for x in grid.nodes() {
                let e = ((self.c)(t, x) - (self.limit_c)(t, x)).abs() + ((self.d)(t, x) - (self.limit_d)(t, x)).abs();
                worst = worst.max(e);
            }
        }
        worst
    }

    fn x_independent(g: &Coefficient, grid: &CircleGrid, t0: f64, period: f64) -> bool {
        (0..=PROBE_TIMES).all(|i| {
            let t = t0 + period * i as f64 / PROBE_TIMES as f64;
            let vals: Vec<f64> = grid.nodes().into_iter().map(|x| g(t, x)).collect();
            let (lo, hi) = vals.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), v| (a.min(*v), b.max(*v)));
            hi - lo <= 1e-14 * (1.0 + hi.abs().max(lo.abs()))
        })
    }

    /// Period map `S((n+1)T, nT)` applied to `vs`.
    pub fn period_map(&self, grid: &CircleGrid, cfg: &StepperConfig, n: i64, vs: &[StateVector]) -> Result<Vec<StateVector>> {
        let t0 = n as f64 * self.period;
        evolve_linear_fields(grid, cfg, &*self.c, &*self.d, t0, t0 + self.period, vs)
    }

    /// Period map of the limit problem, `S_p`.
    pub fn limit_map(&self, grid: &CircleGrid, cfg: &StepperConfig, vs: &[StateVector]) -> Result<Vec<StateVector>> {
        evolve_linear_fields(grid, cfg, &*self.limit_c, &*self.limit_d, 0.0, self.period, vs)
    }

    pub fn limit_spectrum(&self, grid: &CircleGrid, cfg: &StepperConfig, opts: &FloquetOptions) -> Result<FloquetSpectrum> {
        linear_floquet_spectrum(grid, cfg, &*self.limit_c, &*self.limit_d, self.period, opts)
    }
}

/// First `count` real Fourier modes `1, cos x, sin x, cos 2x, …`.
pub fn fourier_probes(grid: &CircleGrid, count: usize) -> Vec<StateVector> {
    (0..count)
        .map(|i| {
            let k = ((i + 1) / 2) as f64;
            if i == 0 {
                StateVector::constant(grid, 1.0)
            } else if i % 2 == 1 {
                StateVector::from_fn(grid, |x| (k * x).cos())
            } else {
                StateVector::from_fn(grid, |x| (k * x).sin())
            }
        })
        .collect()
}

#[derive(Debug, Clone, Serialize)]
pub struct ConvergenceAudit {
    /// `max_ψ ‖(S((n+1)T,nT) - S_p)ψ‖ / ‖ψ‖` for `n = 0..n_max`.
    pub defects: Vec<f64>,
    pub converged: bool,
}

/// Probe-based lower bound of `‖S((n+1)T,nT) - S_p‖` in `X^α`.
pub fn operator_convergence_audit(
    lp: &LinearProblem,
    grid: &CircleGrid,
    cfg: &StepperConfig,
    n_max: usize,
    probe_dim: usize,
    alpha: f64,
) -> Result<ConvergenceAudit> {
    cfg.steps_per_period(lp.period)?;
    let probes = fourier_probes(grid, probe_dim);
    let limit = lp.limit_map(grid, cfg, &probes)?;
    let mut defects = Vec::with_capacity(n_max + 1);
    for n in 0..=n_max {
        let images = lp.period_map(grid, cfg, n as i64, &probes)?;
        let worst = images
            .iter()
            .zip(&limit)
            .zip(&probes)
            .map(|((a, b), p)| a.sub(b).map(|d| d.fractional_norm(alpha) / p.fractional_norm(alpha)))
            .collect::<Result<Vec<f64>>>()?
            .into_iter()
            .fold(0.0, f64::max);
        defects.push(worst);
    }
    let first = defects.first().copied().unwrap_or(0.0);
    let last = defects.last().copied().unwrap_or(0.0);
    Ok(ConvergenceAudit {
        converged: last <= 1e-10 || last <= 1e-3 * first,
        defects,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Direction {
    Forward,
    Backward,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RateOptions {
    pub n_max: usize,
    pub alpha: f64,
    /// Level components below this fraction of the iterate are treated as
    /// round-off and removed while the period map is level-diagonal.
    pub deflation_eta: f64,
    pub deflate: bool,
}

impl Default for RateOptions {
    fn default() -> Self {
        Self {
            n_max: 60,
            alpha: DEFAULT_ALPHA,
            deflation_eta: 1e-9,
            deflate: true,
        }
    }
}

#[derive(Debug, Clone)]
pub struct GrowthRateEstimate {
    pub rate: f64,
    /// Inclusive period indices of the fitted window.
    pub window: (i64, i64),
    /// RMS residual of the log-linear fit.
    pub slope_confidence: f64,
    pub direction: Direction,
    /// `log ‖v(nT)‖_{X^α}` for every period index visited.
    pub log_norms: Vec<(i64, f64)>,
    /// Normalized iterate at the end of the run.
    pub final_direction: StateVector,
    /// Whether round-off deflation was active in at least one period.
    pub deflated: bool,
}

/// Orthogonal projection onto resolved limit levels in `X^α` coordinates.
struct LevelDeflator {
    coords: AlphaCoords,
    levels: Vec<Vec<DVector<f64>>>,
    eta: f64,
}

impl LevelDeflator {
    /// `None` when the resolved eigenbasis is not orthogonal, i.e. the limit
    /// monodromy is not normal on the resolved part.
    fn new(spec: &FloquetSpectrum, alpha: f64, eta: f64) -> Option<Self> {
        let grid = spec.eigenfunctions.first()?.grid().clone();
        let coords = AlphaCoords::new(&grid, alpha);
        let mut levels = Vec::new();
        let mut all: Vec<DVector<f64>> = Vec::new();
        for j in 0..=spec.k_max {
            let mut basis: Vec<DVector<f64>> = Vec::new();
            for v in spec.level_vectors(j) {
                if let Some(q) = orthogonalize(&basis, &coords.encode(v), 1e-8) {
                    basis.push(q);
                }
            }
            for b in &basis {
                if all.iter().any(|a| a.dot(b).abs() > 1e-8) {
                    return None;
                }
            }
            all.extend(basis.iter().cloned());
            levels.push(basis);
        }
        Some(Self { coords, levels, eta })
    }

    fn apply(&self, v: &StateVector) -> StateVector {
        let mut x = self.coords.encode(v);
        let total = x.norm();
        for basis in &self.levels {
            let comps: Vec<f64> = basis.iter().map(|b| b.dot(&x)).collect();
            let size = comps.iter().map(|c| c * c).sum::<f64>().sqrt();
            if size <= self.eta * total {
                for (c, b) in comps.iter().zip(basis) {
                    x.axpy(-c, b, 1.0);
                }
            }
        }
        self.coords.decode(&x)
    }

    fn angle_to_level(&self, v: &StateVector, j: usize) -> f64 {
        let x = self.coords.encode(v);
        let total = x.norm();
        let Some(basis) = self.levels.get(j) else { return f64::NAN };
        let proj = basis.iter().map(|b| b.dot(&x).powi(2)).sum::<f64>().sqrt();
        (proj / total).clamp(0.0, 1.0).acos()
    }
}

fn level_diagonal_on_period(lp: &LinearProblem, grid: &CircleGrid, n: i64) -> bool {
    let t0 = n as f64 * lp.period;
    let all_flat = [&lp.c, &lp.d, &lp.limit_c, &lp.limit_d]
        .iter()
        .all(|g| LinearProblem::x_independent(g, grid, t0, lp.period));
    all_flat || lp.defect_on_period(grid, n) * lp.period <= 1e-14
}

fn ls_fit(points: &[(i64, f64)]) -> (f64, f64) {
    let n = points.len() as f64;
    let mx = points.iter().map(|p| p.0 as f64).sum::<f64>() / n;
    let my = points.iter().map(|p| p.1).sum::<f64>() / n;
    let sxy: f64 = points.iter().map(|p| (p.0 as f64 - mx) * (p.1 - my)).sum();
    let sxx: f64 = points.iter().map(|p| (p.0 as f64 - mx).powi(2)).sum();
    let slope = sxy / sxx;
    let rms = (points
        .iter()
        .map(|p| (p.1 - my - slope * (p.0 as f64 - mx)).powi(2))
        .sum::<f64>()
        / n)
        .sqrt();
    (slope, rms)
}

/// Iterates the period maps from period index `n_start` for `n_periods`
/// periods with per-period renormalization. Returns log-norms and the
/// normalized final iterate.
fn run_normalized(
    lp: &LinearProblem,
    cfg: &StepperConfig,
    v0: &StateVector,
    n_start: i64,
    n_periods: usize,
    alpha: f64,
    deflator: Option<&LevelDeflator>,
) -> Result<(Vec<(i64, f64)>, StateVector, bool)> {
    let grid = v0.grid().clone();
    run_normalized_with(
        v0,
        n_start,
        n_periods,
        alpha,
        |n, v| Ok(lp.period_map(&grid, cfg, n, std::slice::from_ref(v))?.remove(0)),
        |n| level_diagonal_on_period(lp, &grid, n),
        deflator,
    )
}

fn run_normalized_with(
    v0: &StateVector,
    n_start: i64,
    n_periods: usize,
    alpha: f64,
    mut step: impl FnMut(i64, &StateVector) -> Result<StateVector>,
    mut diagonal: impl FnMut(i64) -> bool,
    deflator: Option<&LevelDeflator>,
) -> Result<(Vec<(i64, f64)>, StateVector, bool)> {
    let norm0 = v0.fractional_norm(alpha);
    if !(norm0 > 0.0) {
        return Err(Error::Degenerate("initial vector is zero".into()));
    }
    let mut log_acc = norm0.ln();
    let mut v = v0.scaled(1.0 / norm0);
    let mut log_norms = vec![(n_start, log_acc)];
    let mut deflated = false;
    for i in 0..n_periods {
        let n = n_start + i as i64;
        let mut next = step(n, &v)?;
        if let Some(d) = deflator {
            if diagonal(n) {
                next = d.apply(&next);
                deflated = true;
            }
        }
        let nrm = next.fractional_norm(alpha);
        if !(nrm > 0.0) || !nrm.is_finite() {
            return Err(Error::Degenerate(format!("iterate vanished at period {}", n + 1)));
        }
        log_acc += nrm.ln();
        v = next.scaled(1.0 / nrm);
        log_norms.push((n + 1, log_acc));
    }
    Ok((log_norms, v, deflated))
}

/// Forward rate of an arbitrary linear period map `map(n, v)`, fitted over
/// the last half of `n_max` iterates. With `spectrum` given and
/// `level_diagonal` set, round-off in its levels is deflated.
pub fn forward_rate_of_map(
    v0: &StateVector,
    map: impl FnMut(i64, &StateVector) -> Result<StateVector>,
    n_max: usize,
    alpha: f64,
    spectrum: Option<&FloquetSpectrum>,
    level_diagonal: bool,
) -> Result<GrowthRateEstimate> {
    if n_max < 4 {
        return Err(Error::InvalidArgument("n_max must be at least 4".into()));
    }
    let deflator = spectrum.and_then(|s| LevelDeflator::new(s, alpha, RateOptions::default().deflation_eta));
    let (log_norms, final_direction, deflated) =
        run_normalized_with(v0, 0, n_max, alpha, map, |_| level_diagonal, deflator.as_ref())?;
    let window = &log_norms[n_max / 2..];
    let (slope, rms) = ls_fit(window);
    Ok(GrowthRateEstimate {
        rate: slope.exp(),
        window: (window[0].0, window[window.len() - 1].0),
        slope_confidence: rms,
        direction: Direction::Forward,
        log_norms,
        final_direction,
        deflated,
    })
}

fn deflator_for(spec: Option<&FloquetSpectrum>, opts: &RateOptions) -> Option<LevelDeflator> {
    if !opts.deflate {
        return None;
    }
    LevelDeflator::new(spec?, opts.alpha, opts.deflation_eta)
}

/// Forward rate `lim ‖v(nT)‖^{1/n}` from the log-linear fit over the last
/// half of `n_max` periods. `limit` enables round-off deflation.
pub fn rho_forward(
    lp: &LinearProblem,
    cfg: &StepperConfig,
    v0: &StateVector,
    opts: &RateOptions,
    limit: Option<&FloquetSpectrum>,
) -> Result<GrowthRateEstimate> {
    if opts.n_max < 16 {
        return Err(Error::InvalidArgument("n_max must be at least 16".into()));
    }
    cfg.steps_per_period(lp.period)?;
    let deflator = deflator_for(limit, opts);
    let (log_norms, final_direction, deflated) =
        run_normalized(lp, cfg, v0, 0, opts.n_max, opts.alpha, deflator.as_ref())?;
    let half = opts.n_max / 2;
    let window = &log_norms[half..];
    let (slope, rms) = ls_fit(window);
    Ok(GrowthRateEstimate {
        rate: slope.exp(),
        window: (window[0].0, window[window.len() - 1].0),
        slope_confidence: rms,
        direction: Direction::Forward,
        log_norms,
        final_direction,
        deflated,
    })
}

/// A vector `ψ = v(0)` reached from `seed` at period index `-n_back`, with
/// the backward rate of its orbit measured on the early half.
#[derive(Debug, Clone)]
pub struct BackwardSample {
    pub psi: StateVector,
    pub estimate: GrowthRateEstimate,
}

pub fn rho_backward(
    lp: &LinearProblem,
    cfg: &StepperConfig,
    seed: &StateVector,
    opts: &RateOptions,
    limit: Option<&FloquetSpectrum>,
) -> Result<BackwardSample> {
    if opts.n_max < 16 {
        return Err(Error::InvalidArgument("n_max must be at least 16".into()));
    }
    cfg.steps_per_period(lp.period)?;
    let deflator = deflator_for(limit, opts);
    let n_back = opts.n_max as i64;
    let (log_norms, dir, deflated) =
        run_normalized(lp, cfg, seed, -n_back, opts.n_max, opts.alpha, deflator.as_ref())?;
    let half = opts.n_max / 2;
    let window = &log_norms[..=half];
    let (slope, rms) = ls_fit(window);
    let log_final = log_norms.last().map(|p| p.1).unwrap_or(0.0);
    let psi = dir.scaled(log_final.exp());
    Ok(BackwardSample {
        psi,
        estimate: GrowthRateEstimate {
            rate: slope.exp(),
            window: (window[0].0, window[window.len() - 1].0),
            slope_confidence: rms,
            direction: Direction::Backward,
            log_norms,
            final_direction: dir,
            deflated,
        },
    })
}

#[derive(Debug, Clone)]
pub struct Classification {
    pub direction: Direction,
    /// Filtration index: `ψ ∈ F_k^+` (forward) or `ψ ∈ F_k^-` (backward).
    pub k: usize,
    pub matched_level: usize,
    pub matched_modulus: f64,
    pub relative_error: f64,
    pub psi: StateVector,
    pub estimate: GrowthRateEstimate,
    /// `X^α` angle between the final normalized iterate and the matched
    /// limit eigenplane; `NaN` without an orthogonal eigenbasis.
    pub alignment_angle: f64,
}

/// Ladder level whose modulus matches `rate` in log scale, or an
/// ambiguity error when `rate` falls outside every level's band.
pub fn match_ladder(rate: f64, spec: &FloquetSpectrum, half_gap: f64) -> Result<(usize, f64)> {
    let levels = spec.level_moduli();
    if levels.is_empty() || !(rate > 0.0) {
        return Err(Error::Unclassifiable { rate });
    }
    let lr = rate.ln();
    let logs: Vec<f64> = levels.iter().map(|r| r.ln()).collect();
    let (j, _) = logs
        .iter()
        .enumerate()
        .map(|(j, l)| (j, (l - lr).abs()))
        .min_by(|a, b| a.1.total_cmp(&b.1))
        .expect("nonempty ladder");
    let gap_above = (j > 0).then(|| logs[j - 1] - logs[j]);
    let gap_below = (j + 1 < logs.len()).then(|| logs[j] - logs[j + 1]);
    // at either end of the resolved ladder the only neighbouring gap stands in
    let band = if lr >= logs[j] { gap_above.or(gap_below) } else { gap_below.or(gap_above) };
    match band {
        Some(b) if (lr - logs[j]).abs() <= half_gap * b => {}
        _ => return Err(Error::Unclassifiable { rate }),
    }
    Ok((j, levels[j]))
}

/// Relative half-gap of the ambiguity band between adjacent ladder levels.
pub const AMBIGUITY_HALF_GAP: f64 = 0.25;

/// Measures the rate of `v0` (forward) or of the orbit seeded by `v0` at
/// period `-n_max` (backward) and places it in the filtration.
pub fn classify_fk(
    lp: &LinearProblem,
    cfg: &StepperConfig,
    v0: &StateVector,
    spec: &FloquetSpectrum,
    direction: Direction,
    opts: &RateOptions,
) -> Result<Classification> {
    let (psi, estimate) = match direction {
        Direction::Forward => (v0.clone(), rho_forward(lp, cfg, v0, opts, Some(spec))?),
        Direction::Backward => {
            let b = rho_backward(lp, cfg, v0, opts, Some(spec))?;
            (b.psi, b.estimate)
        }
    };
    let (level, modulus) = match_ladder(estimate.rate, spec, AMBIGUITY_HALF_GAP)?;
    let alignment_angle = LevelDeflator::new(spec, opts.alpha, 0.0)
        .map_or(f64::NAN, |d| match direction {
            Direction::Forward => d.angle_to_level(&estimate.final_direction, level),
            // the early window is where the orbit sits in the eigenplane
            Direction::Backward => d.angle_to_level(v0, level),
        });
    Ok(Classification {
        direction,
        k: match direction {
            Direction::Forward => level,
            Direction::Backward => level + 1,
        },
        matched_level: level,
        matched_modulus: modulus,
        relative_error: (estimate.rate - modulus).abs() / modulus,
        psi,
        estimate,
        alignment_angle,
    })
}

#[derive(Debug, Clone, Serialize)]
pub struct FiltrationViolation {
    pub sample: usize,
    pub direction: Direction,
    pub k: usize,
    pub zero_count: Option<usize>,
    pub note: String,
}

#[derive(Debug, Clone, Serialize)]
pub struct FiltrationAudit {
    pub checked: usize,
    pub violations: Vec<FiltrationViolation>,
}

impl FiltrationAudit {
    pub fn pass(&self) -> bool {
        self.violations.is_empty()
    }
}

/// `z(ψ) ≥ 2k` on forward classes and `z(ψ) < 2k` on backward classes.
///
/// Samples are counted after rescaling to unit sup-norm: a backward `ψ`
/// carries the decay of its orbit and can sit far below the absolute
/// degeneracy floor while still spanning a well-defined line.
pub fn zero_number_filtration_audit(items: &[Classification]) -> FiltrationAudit {
    let mut violations = Vec::new();
    for (i, c) in items.iter().enumerate() {
        let sup = c.psi.sup_norm();
        let unit = if sup > 0.0 && sup.is_finite() { c.psi.scaled(sup.recip()) } else { c.psi.clone() };
        match zero_count(&unit, DEFAULT_ZERO_TOL) {
            Ok(z) => {
                let ok = match c.direction {
                    Direction::Forward => z.count >= 2 * c.k,
                    Direction::Backward => z.count < 2 * c.k,
                };
                if !ok {
                    violations.push(FiltrationViolation {
                        sample: i,
                        direction: c.direction,
                        k: c.k,
                        zero_count: Some(z.count),
                        note: format!("zero count {} against bound 2k = {}", z.count, 2 * c.k),
                    });
                }
            }
            Err(e) => violations.push(FiltrationViolation {
                sample: i,
                direction: c.direction,
                k: c.k,
                zero_count: None,
                note: e.to_string(),
            }),
        }
    }
    FiltrationAudit {
        checked: items.len(),
        violations,
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct DimensionReport {
    pub k: usize,
    /// `dim(E_0 ⊕ … ⊕ E_{k-1})` from the resolved ladder.
    pub lower_dimension: Option<usize>,
    /// `2k - 1`, the value predicted when every level above 0 is a plane.
    pub predicted: usize,
    pub levels_resolved: bool,
    pub matches: bool,
}

pub fn filtration_dimension_audit(spec: &FloquetSpectrum, k: usize) -> DimensionReport {
    let predicted = (2 * k).saturating_sub(1);
    let needed = FloquetSpectrum::level_range(k.saturating_sub(1)).end;
    let levels_resolved = k >= 1 && needed <= spec.moduli_ladder.len() && k <= spec.k_max + 1;
    let lower_dimension = levels_resolved.then(|| {
        // levels are separated by the ladder gap; count multipliers strictly
        // above the first modulus of level k, or all of them at the edge
        let cut = spec.level_modulus(k);
        spec.moduli_ladder
            .iter()
            .filter(|r| cut.map_or(true, |c| **r > c * (1.0 + 1e-9)))
            .count()
    });
    DimensionReport {
        k,
        lower_dimension,
        predicted,
        levels_resolved,
        matches: lower_dimension == Some(predicted),
    }
}

/// Random combination of limit eigenfunctions from the given levels.
pub fn random_level_combination(spec: &FloquetSpectrum, levels: std::ops::Range<usize>, rng: &mut impl Rng) -> Result<StateVector> {
    let grid = spec
        .eigenfunctions
        .first()
        .ok_or_else(|| Error::Unresolved("empty spectrum".into()))?
        .grid()
        .clone();
    let mut acc = StateVector::zeros(&grid);
    for j in levels {
        let vs = spec.level_vectors(j);
        if vs.is_empty() {
            return Err(Error::Unresolved(format!("level {j} not resolved")));
        }
        for v in vs {
            acc.axpy(rng.gen_range(-1.0..1.0), v)?;
        }
    }
    Ok(acc)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn constant(v: f64) -> Coefficient {
        Arc::new(move |_, _| v)
    }

    #[test]
    fn exact_periodic_problem_has_no_defect() {
        let g = CircleGrid::new(32).unwrap();
        let lp = LinearProblem::periodic(constant(0.0), Arc::new(|t, _| 2.0 + 0.5 * (std::f64::consts::TAU * t).cos()), 1.0).unwrap();
        let a = operator_convergence_audit(&lp, &g, &StepperConfig::default(), 5, 7, DEFAULT_ALPHA).unwrap();
        assert!(a.defects.iter().all(|d| *d <= 1e-10));
        assert!(a.converged);
    }

    #[test]
    fn constant_defect_does_not_converge() {
        let g = CircleGrid::new(32).unwrap();
        let lp = LinearProblem::new(constant(0.0), constant(3.0), constant(0.0), constant(2.0), 1.0).unwrap();
        let a = operator_convergence_audit(&lp, &g, &StepperConfig::default(), 6, 5, DEFAULT_ALPHA).unwrap();
        assert!(!a.converged);
        assert!(a.defects.iter().all(|d| *d > 1.0));
    }

    #[test]
    fn cos2x_rate_under_constant_growth() {
        let g = CircleGrid::new(32).unwrap();
        let cfg = StepperConfig::default();
        let lp = LinearProblem::periodic(constant(0.0), constant(2.0), 1.0).unwrap();
        let spec = lp.limit_spectrum(&g, &cfg, &FloquetOptions::default()).unwrap();
        let v0 = StateVector::from_fn(&g, |x| (2.0 * x).cos());
        let est = rho_forward(&lp, &cfg, &v0, &RateOptions::default(), Some(&spec)).unwrap();
        assert!((est.rate - (-2f64).exp()).abs() < 1e-3 * (-2f64).exp(), "{}", est.rate);
        let mixed = StateVector::from_fn(&g, |x| x.cos() + (2.0 * x).cos());
        let est = rho_forward(&lp, &cfg, &mixed, &RateOptions::default(), Some(&spec)).unwrap();
        assert!((est.rate - 1f64.exp()).abs() < 1e-3 * 1f64.exp());
        assert!(matches!(
            rho_forward(&lp, &cfg, &StateVector::zeros(&g), &RateOptions::default(), Some(&spec)),
            Err(Error::Degenerate(_))
        ));
    }

    #[test]
    fn ladder_matching_and_ambiguity() {
        let g = CircleGrid::new(32).unwrap();
        let cfg = StepperConfig::default();
        let lp = LinearProblem::periodic(constant(0.0), constant(2.0), 1.0).unwrap();
        let spec = lp.limit_spectrum(&g, &cfg, &FloquetOptions::default()).unwrap();
        assert_eq!(match_ladder((-2f64).exp(), &spec, 0.25).unwrap().0, 2);
        // halfway between levels 2 and 3 in log scale
        let mid = ((-2.0 - 7.0) / 2.0f64).exp();
        assert!(matches!(match_ladder(mid, &spec, 0.25), Err(Error::Unclassifiable { .. })));
    }

    #[test]
    fn dimension_bookkeeping() {
        let g = CircleGrid::new(32).unwrap();
        let lp = LinearProblem::periodic(constant(0.0), constant(0.0), 0.5).unwrap();
        let spec = lp.limit_spectrum(&g, &StepperConfig::default(), &FloquetOptions::default()).unwrap();
        assert_eq!(filtration_dimension_audit(&spec, 1).lower_dimension, Some(1));
        assert_eq!(filtration_dimension_audit(&spec, 2).lower_dimension, Some(3));
        assert!(filtration_dimension_audit(&spec, 2).matches);
    }
}
