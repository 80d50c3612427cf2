//! Fixed points of the period map, Floquet multipliers of the monodromy
//! operator, Morse indices and the ladder/zero-number structure checks.

use std::f64::consts::PI;

use nalgebra::DVector;
use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::grid::{CircleGrid, StateVector, DEFAULT_ALPHA};
use crate::linalg::{block_krylov, gmres, ritz_clusters, AlphaCoords};
use crate::stepper::{dp_apply_many, evolve_linear_fields, poincare, Nonlinearity, StepperConfig};
use crate::zeroes::{zero_count, DEFAULT_ZERO_TOL};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FloquetOptions {
    /// Number of modulus levels above level 0 to resolve.
    pub k_max: usize,
    pub alpha: f64,
    /// Accept a multiplier when its invariant-subspace residual is below
    /// `residual_tol · r_0`.
    pub residual_tol: f64,
    /// Relative distance under which Ritz values are treated as one cluster.
    pub cluster_tol: f64,
    pub seed: u64,
}

impl Default for FloquetOptions {
    fn default() -> Self {
        Self {
            k_max: 4,
            alpha: DEFAULT_ALPHA,
            residual_tol: 1e-8,
            cluster_tol: 1e-6,
            seed: 0x0f10_4e7,
        }
    }
}

impl FloquetOptions {
    pub fn subspace_dim(&self) -> usize {
        4 * self.k_max + 8
    }
}

/// Leading multipliers in non-increasing modulus, grouped in levels
/// `{λ_0}, {λ_1, λ̃_1}, {λ_2, λ̃_2}, …`.
#[derive(Debug, Clone)]
pub struct FloquetSpectrum {
    pub multipliers: Vec<Complex64>,
    /// One real vector per multiplier; complex pairs contribute a basis of
    /// their real eigenplane. Unit `X^α` norm.
    pub eigenfunctions: Vec<StateVector>,
    pub moduli_ladder: Vec<f64>,
    /// Invariant-subspace residual of the cluster each multiplier belongs to.
    pub arnoldi_residuals: Vec<f64>,
    /// Number of fully resolved levels above level 0.
    pub k_max: usize,
    pub requested_levels: usize,
    /// False when Arnoldi stagnated before resolving the requested levels.
    pub complete: bool,
    pub subspace_dim: usize,
}

impl FloquetSpectrum {
    /// Indices into `multipliers` belonging to level `j`.
    pub fn level_range(j: usize) -> std::ops::Range<usize> {
        if j == 0 {
            0..1
        } else {
            2 * j - 1..2 * j + 1
        }
    }

    pub fn level_count(&self) -> usize {
        if self.multipliers.is_empty() {
            0
        } else {
            1 + (self.multipliers.len() - 1) / 2
        }
    }

    pub fn level_vectors(&self, j: usize) -> &[StateVector] {
        let r = Self::level_range(j);
        let end = r.end.min(self.eigenfunctions.len());
        &self.eigenfunctions[r.start.min(end)..end]
    }

    /// Largest modulus within level `j`.
    pub fn level_modulus(&self, j: usize) -> Option<f64> {
        self.moduli_ladder.get(Self::level_range(j).start).copied()
    }

    /// Distinct level moduli `r_0 > r_1 > …` (upper entry of each level).
    pub fn level_moduli(&self) -> Vec<f64> {
        (0..self.level_count()).filter_map(|j| self.level_modulus(j)).collect()
    }
}

fn spectrum_of_operator<F>(coords: &AlphaCoords, opts: &FloquetOptions, mut apply: F) -> Result<FloquetSpectrum>
where
    F: FnMut(&[StateVector]) -> Result<Vec<StateVector>>,
{
    let n = coords.dim();
    let wanted = 1 + 2 * opts.k_max;
    if wanted > n {
        return Err(Error::InvalidArgument(format!(
            "{} levels need {wanted} multipliers but the grid has dimension {n}",
            opts.k_max
        )));
    }
    let mut m = opts.subspace_dim().min(n);
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed ^ n as u64);
    let mut op = |xs: &[DVector<f64>]| -> Result<Vec<DVector<f64>>> {
        let states: Vec<StateVector> = xs.iter().map(|x| coords.decode(x)).collect();
        Ok(apply(&states)?.iter().map(|s| coords.encode(s)).collect())
    };
    loop {
        let (v, av) = block_krylov(n, m, 2, &mut rng, &mut op)?;
        let clusters = ritz_clusters(&v, &av, opts.cluster_tol);
        let r0 = clusters
            .first()
            .and_then(|c| c.values.first())
            .map_or(0.0, |z| z.norm());
        let mut multipliers = Vec::with_capacity(wanted);
        let mut eigenfunctions = Vec::with_capacity(wanted);
        let mut residuals = Vec::with_capacity(wanted);
        for c in &clusters {
            if multipliers.len() >= wanted {
                break;
            }
            let x = &v * &c.coeffs;
            let complete_basis = c.coeffs.ncols() == c.values.len();
            for (i, z) in c.values.iter().enumerate() {
                if multipliers.len() >= wanted {
                    break;
                }
                multipliers.push(*z);
                residuals.push(if complete_basis { c.residual } else { f64::INFINITY });
                let col = if i < x.ncols() { x.column(i).into_owned() } else { DVector::zeros(n) };
                let s = coords.decode(&col);
                let norm = s.fractional_norm(opts.alpha);
                eigenfunctions.push(if norm > 0.0 { s.scaled(1.0 / norm) } else { s });
            }
        }
        let accept = opts.residual_tol * r0;
        let good = residuals.iter().take_while(|r| **r <= accept).count();
        let resolved_levels = if good == 0 { 0 } else { (good - 1) / 2 };
        let complete = good >= wanted;
        if complete || m >= n || m >= 4 * opts.subspace_dim() {
            let keep = match (complete, good) {
                (true, _) => wanted,
                (false, 0) => 0,
                (false, _) => 1 + 2 * resolved_levels,
            };
            multipliers.truncate(keep);
            eigenfunctions.truncate(keep);
            residuals.truncate(keep);
            let moduli_ladder = multipliers.iter().map(|z| z.norm()).collect();
            return Ok(FloquetSpectrum {
                multipliers,
                eigenfunctions,
                moduli_ladder,
                arnoldi_residuals: residuals,
                k_max: if complete { opts.k_max } else { resolved_levels },
                requested_levels: opts.k_max,
                complete,
                subspace_dim: m,
            });
        }
        m = (2 * m).min(n);
    }
}

/// Leading spectrum of `DP(φ)` by block Arnoldi on the tangent flow.
pub fn floquet_spectrum(
    profile: &StateVector,
    nl: &Nonlinearity,
    cfg: &StepperConfig,
    opts: &FloquetOptions,
) -> Result<FloquetSpectrum> {
    let coords = AlphaCoords::new(profile.grid(), opts.alpha);
    spectrum_of_operator(&coords, opts, |vs| Ok(dp_apply_many(profile, vs, nl, cfg)?.1))
}

/// Leading spectrum of the period map of `v_t = v_xx + c v_x + d v` with
/// `T`-periodic coefficients.
pub fn linear_floquet_spectrum(
    grid: &CircleGrid,
    cfg: &StepperConfig,
    c: &(dyn Fn(f64, f64) -> f64 + Sync),
    d: &(dyn Fn(f64, f64) -> f64 + Sync),
    period: f64,
    opts: &FloquetOptions,
) -> Result<FloquetSpectrum> {
    cfg.steps_per_period(period)?;
    let coords = AlphaCoords::new(grid, opts.alpha);
    spectrum_of_operator(&coords, opts, |vs| evolve_linear_fields(grid, cfg, c, d, 0.0, period, vs))
}

/// Number of multipliers outside the unit circle.
pub fn morse_index(spec: &FloquetSpectrum, margin: f64) -> Result<usize> {
    if let Some(d) = spec
        .moduli_ladder
        .iter()
        .map(|r| r - 1.0)
        .find(|d| d.abs() <= margin)
    {
        return Err(Error::NonHyperbolic { distance: d });
    }
    match spec.moduli_ladder.last() {
        Some(&r) if r < 1.0 - margin => Ok(spec.moduli_ladder.iter().filter(|r| **r > 1.0).count()),
        _ => Err(Error::Unresolved(
            "reported multipliers do not reach inside the unit circle".into(),
        )),
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FixedPointOptions {
    /// Required `X^α` norm of `P(φ) - φ`.
    pub tol: f64,
    pub max_iter: usize,
    /// Relative residual reduction asked of GMRES per Newton step.
    pub gmres_tol: f64,
    /// Hyperbolicity margin on `||λ| - 1|`.
    pub margin: f64,
    pub floquet: FloquetOptions,
}

impl Default for FixedPointOptions {
    fn default() -> Self {
        Self {
            tol: 1e-10,
            max_iter: 40,
            gmres_tol: 1e-8,
            margin: 1e-3,
            floquet: FloquetOptions::default(),
        }
    }
}

#[derive(Debug, Clone)]
pub struct FixedPointRecord {
    pub profile: StateVector,
    /// `‖P(φ) - φ‖_{X^α}`.
    pub residual: f64,
    pub spectrum: FloquetSpectrum,
    pub morse_index: usize,
    pub hyperbolic: bool,
    pub hyperbolicity_margin: f64,
    /// `sup φ - inf φ`.
    pub homogeneity_defect: f64,
    pub newton_residuals: Vec<f64>,
}

fn homogeneity_defect(s: &StateVector) -> f64 {
    let (lo, hi) = s
        .values()
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), v| (a.min(*v), b.max(*v)));
    hi - lo
}

/// Assembles a record for a converged profile: spectrum resolved past the
/// unit circle, index and hyperbolicity.
pub fn fixed_point_record(
    profile: StateVector,
    nl: &Nonlinearity,
    cfg: &StepperConfig,
    opts: &FixedPointOptions,
    newton_residuals: Vec<f64>,
) -> Result<FixedPointRecord> {
    let residual = poincare(&profile, nl, cfg)?.sub(&profile)?.fractional_norm(opts.floquet.alpha);
    let n = profile.grid().n_points();
    let mut fo = opts.floquet;
    let spectrum = loop {
        let s = floquet_spectrum(&profile, nl, cfg, &fo)?;
        let reaches_inside = s.moduli_ladder.last().is_some_and(|r| *r < 1.0 - opts.margin);
        if reaches_inside || !s.complete || 1 + 2 * (2 * fo.k_max) > n {
            break s;
        }
        fo.k_max *= 2;
    };
    let hyperbolicity_margin = spectrum
        .moduli_ladder
        .iter()
        .map(|r| (r - 1.0).abs())
        .fold(f64::INFINITY, f64::min);
    let (morse, hyperbolic) = match morse_index(&spectrum, opts.margin) {
        Ok(i) => (i, true),
        Err(_) => (spectrum.moduli_ladder.iter().filter(|r| **r > 1.0).count(), false),
    };
    Ok(FixedPointRecord {
        homogeneity_defect: homogeneity_defect(&profile),
        profile,
        residual,
        spectrum,
        morse_index: morse,
        hyperbolic,
        hyperbolicity_margin,
        newton_residuals,
    })
}

/// Newton–Krylov solve of `P(u) = u`, followed by the spectral record.
pub fn newton_fixed_point(
    guess: &StateVector,
    nl: &Nonlinearity,
    cfg: &StepperConfig,
    tol: f64,
) -> Result<FixedPointRecord> {
    newton_fixed_point_with(
        guess,
        nl,
        cfg,
        &FixedPointOptions {
            tol,
            ..FixedPointOptions::default()
        },
    )
}

pub fn newton_fixed_point_with(
    guess: &StateVector,
    nl: &Nonlinearity,
    cfg: &StepperConfig,
    opts: &FixedPointOptions,
) -> Result<FixedPointRecord> {
    let alpha = opts.floquet.alpha;
    let coords = AlphaCoords::new(guess.grid(), alpha);
    let mut u = guess.clone();
    let mut fu = poincare(&u, nl, cfg)?.sub(&u)?;
    let mut res = fu.fractional_norm(alpha);
    let mut history = vec![res];
    for _ in 0..opts.max_iter {
        if res <= opts.tol {
            return fixed_point_record(u, nl, cfg, opts, history);
        }
        let rhs = -coords.encode(&fu);
        let base = u.clone();
        let step = gmres(&rhs, opts.gmres_tol, 40, 160, |x| {
            let v = coords.decode(x);
            let (_, dv) = dp_apply_many(&base, std::slice::from_ref(&v), nl, cfg)?;
            Ok(coords.encode(&dv[0]) - x)
        })?;
        if step.relative_residual > 1e-4 {
            return Err(Error::SingularJacobian(format!(
                "GMRES stalled at relative residual {:e}",
                step.relative_residual
            )));
        }
        let dir = coords.decode(&step.solution);
        let mut lambda = 1.0;
        let mut accepted = None;
        for _ in 0..12 {
            let trial = u.lin_comb(1.0, &dir, lambda)?;
            if let Ok(p) = poincare(&trial, nl, cfg) {
                let ft = p.sub(&trial)?;
                let rt = ft.fractional_norm(alpha);
                if rt < (1.0 - 1e-4 * lambda) * res || rt <= opts.tol {
                    accepted = Some((trial, ft, rt));
                    break;
                }
            }
            lambda *= 0.5;
        }
        let Some((nu, nf, nr)) = accepted else {
            return Err(Error::NonConvergence {
                iterations: history.len() - 1,
                residual: res,
            });
        };
        u = nu;
        fu = nf;
        res = nr;
        history.push(res);
    }
    if res <= opts.tol {
        return fixed_point_record(u, nl, cfg, opts, history);
    }
    Err(Error::NonConvergence {
        iterations: opts.max_iter,
        residual: res,
    })
}

#[derive(Debug, Clone)]
pub struct CensusFailure {
    pub seed_index: usize,
    pub error: Error,
}

#[derive(Debug, Clone)]
pub struct Census {
    pub records: Vec<FixedPointRecord>,
    pub failures: Vec<CensusFailure>,
}

/// Newton from every seed, deduplicated in `X^α` and sorted by Morse index.
pub fn fixed_point_census(
    nl: &Nonlinearity,
    cfg: &StepperConfig,
    seeds: &[StateVector],
    opts: &FixedPointOptions,
    dedup_radius: f64,
) -> Census {
    let results: Vec<Result<FixedPointRecord>> = seeds
        .par_iter()
        .map(|s| newton_fixed_point_with(s, nl, cfg, opts))
        .collect();
    let mut records: Vec<FixedPointRecord> = Vec::new();
    let mut failures = Vec::new();
    for (seed_index, r) in results.into_iter().enumerate() {
        match r {
            Ok(rec) => {
                let dup = records.iter().any(|k| {
                    k.profile
                        .sub(&rec.profile)
                        .map(|d| d.fractional_norm(opts.floquet.alpha) < dedup_radius)
                        .unwrap_or(false)
                });
                if !dup {
                    records.push(rec);
                }
            }
            Err(error) => failures.push(CensusFailure { seed_index, error }),
        }
    }
    records.sort_by(|a, b| {
        b.morse_index
            .cmp(&a.morse_index)
            .then(a.profile.mean().total_cmp(&b.profile.mean()))
    });
    Census { records, failures }
}

#[derive(Debug, Clone, Default)]
pub struct EigenStructureReport {
    pub ladder_ok: bool,
    /// `(level, zero counts of the sampled combinations)`.
    pub level_zero_counts: Vec<(usize, Vec<usize>)>,
    pub zeros_ok: bool,
    pub pairing_ok: bool,
    pub failures: Vec<String>,
}

impl EigenStructureReport {
    pub fn pass(&self) -> bool {
        self.failures.is_empty()
    }
}

/// Checks strict ordering between levels, `z = 2j` with simple zeros on
/// every sampled combination within level `j`, and optionally `r_j = r̃_j`.
pub fn verify_eigen_structure(spec: &FloquetSpectrum, tol: f64, check_pairing: bool) -> EigenStructureReport {
    let mut rep = EigenStructureReport {
        ladder_ok: true,
        zeros_ok: true,
        pairing_ok: true,
        ..Default::default()
    };
    let levels = spec.k_max + 1;
    let lo = |j: usize| spec.moduli_ladder[FloquetSpectrum::level_range(j).end - 1];
    let hi = |j: usize| spec.moduli_ladder[FloquetSpectrum::level_range(j).start];
    for j in 0..levels {
        if FloquetSpectrum::level_range(j).end > spec.moduli_ladder.len() {
            rep.failures.push(format!("level {j} unresolved"));
            rep.ladder_ok = false;
            break;
        }
        if j + 1 < levels && FloquetSpectrum::level_range(j + 1).end <= spec.moduli_ladder.len() && lo(j) <= hi(j + 1) * (1.0 + tol) {
            rep.ladder_ok = false;
            rep.failures.push(format!(
                "levels {j} and {} not separated: {} vs {}",
                j + 1,
                lo(j),
                hi(j + 1)
            ));
        }
        if check_pairing && j > 0 && (hi(j) - lo(j)).abs() > tol * hi(j) {
            rep.pairing_ok = false;
            rep.failures.push(format!("level {j} moduli differ: {} vs {}", hi(j), lo(j)));
        }
        let vecs = spec.level_vectors(j);
        let combos: Vec<StateVector> = if vecs.len() == 2 {
            (0..16)
                .map(|i| {
                    let th = PI * i as f64 / 16.0;
                    vecs[0].lin_comb(th.cos(), &vecs[1], th.sin()).expect("same grid")
                })
                .collect()
        } else {
            vecs.to_vec()
        };
        let mut counts = Vec::with_capacity(combos.len());
        for c in &combos {
            match zero_count(c, DEFAULT_ZERO_TOL) {
                Ok(z) => {
                    counts.push(z.count);
                    if z.count != 2 * j || !z.all_simple {
                        rep.zeros_ok = false;
                        rep.failures.push(format!(
                            "level {j}: combination has {} zeros (simple: {})",
                            z.count, z.all_simple
                        ));
                    }
                }
                Err(e) => {
                    rep.zeros_ok = false;
                    rep.failures.push(format!("level {j}: {e}"));
                }
            }
        }
        rep.level_zero_counts.push((j, counts));
    }
    rep
}

#[derive(Debug, Clone)]
pub struct RigidityReport {
    pub homogeneity_defect: f64,
    pub homogeneous: bool,
    pub morse_index: usize,
    pub index_parity_ok: bool,
    pub violations: Vec<String>,
}

impl RigidityReport {
    pub fn pass(&self) -> bool {
        self.violations.is_empty()
    }
}

/// A hyperbolic fixed point must be spatially homogeneous with index zero
/// or odd; failures are reported, not raised.
pub fn verify_hyperbolic_rigidity(rec: &FixedPointRecord, tol: f64) -> Result<RigidityReport> {
    if !rec.hyperbolic {
        return Err(Error::NonHyperbolic {
            distance: rec.hyperbolicity_margin,
        });
    }
    let homogeneous = rec.homogeneity_defect <= tol;
    let index_parity_ok = rec.morse_index == 0 || rec.morse_index % 2 == 1;
    let mut violations = Vec::new();
    if !homogeneous {
        violations.push(format!(
            "hyperbolic fixed point is not homogeneous (defect {:e})",
            rec.homogeneity_defect
        ));
    }
    if !index_parity_ok {
        violations.push(format!("hyperbolic fixed point has even positive index {}", rec.morse_index));
    }
    Ok(RigidityReport {
        homogeneity_defect: rec.homogeneity_defect,
        homogeneous,
        morse_index: rec.morse_index,
        index_parity_ok,
        violations,
    })
}

/// Random unit combination of the given vectors (used by sweeps).
pub fn random_combination(vs: &[StateVector], rng: &mut impl Rng) -> Option<StateVector> {
    let mut acc = StateVector::zeros(vs.first()?.grid());
    for v in vs {
        let c: f64 = rng.gen_range(-1.0..1.0);
        acc.axpy(c, v).ok()?;
    }
    Some(acc)
}
