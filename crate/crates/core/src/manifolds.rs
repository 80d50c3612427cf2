//! Unstable frames and seeds at hyperbolic fixed points, heteroclinic
//! shooting, and the structural audits built on connections: index drop,
//! zero-number bounds, transversality by dimension count and zero-number
//! partition, the ω-limit census and the Morse–Smale verdict.

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::Serialize;

use crate::asymptotics::{forward_rate_of_map, match_ladder, AMBIGUITY_HALF_GAP};
use crate::error::{Error, Result};
use crate::floquet::{FixedPointRecord, FloquetSpectrum};
use crate::grid::{StateVector, DEFAULT_ALPHA};
use crate::linalg::{orthogonalize, svd, AlphaCoords};
use crate::stepper::{dp_apply_many, poincare, Nonlinearity, StepperConfig};
use crate::zeroes::{zero_count, ZeroCount, DEFAULT_ZERO_TOL};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum FrameLabel {
    UnstableAtSource,
    StableAtTarget,
    FiltrationFk,
}

#[derive(Debug, Clone)]
pub struct TangentFrame {
    pub base: StateVector,
    /// Orthonormal in the `X^α` Hilbert product.
    pub vectors: Vec<StateVector>,
    pub label: FrameLabel,
    pub alpha: f64,
}

impl TangentFrame {
    pub fn dim(&self) -> usize {
        self.vectors.len()
    }

    pub fn gram(&self) -> DMatrix<f64> {
        let k = self.vectors.len();
        DMatrix::from_fn(k, k, |i, j| {
            self.vectors[i]
                .alpha_inner(&self.vectors[j], self.alpha)
                .unwrap_or(f64::NAN)
        })
    }

    /// Distance of `v` from the frame span relative to `‖v‖`.
    pub fn relative_distance(&self, v: &StateVector) -> Result<f64> {
        let coords = AlphaCoords::new(v.grid(), self.alpha);
        let x = coords.encode(v);
        let basis: Vec<DVector<f64>> = self.vectors.iter().map(|b| coords.encode(b)).collect();
        let mut r = x.clone();
        for b in &basis {
            r.axpy(-b.dot(&x), b, 1.0);
        }
        Ok(r.norm() / x.norm())
    }
}

/// Gram–Schmidt in `X^α` coordinates; dependent vectors are dropped.
pub fn orthonormalize(vs: &[StateVector], alpha: f64) -> Vec<StateVector> {
    let Some(first) = vs.first() else { return Vec::new() };
    let coords = AlphaCoords::new(first.grid(), alpha);
    let mut basis: Vec<DVector<f64>> = Vec::new();
    for v in vs {
        if let Some(q) = orthogonalize(&basis, &coords.encode(v), 1e-10) {
            basis.push(q);
        }
    }
    basis.iter().map(|b| coords.decode(b)).collect()
}

/// Determinant of the Gram matrix of the unit-normalized vectors.
pub fn normalized_gram_determinant(vs: &[StateVector], alpha: f64) -> f64 {
    let Some(first) = vs.first() else { return 1.0 };
    let coords = AlphaCoords::new(first.grid(), alpha);
    let cols: Vec<DVector<f64>> = vs
        .iter()
        .map(|v| {
            let x = coords.encode(v);
            let n = x.norm();
            x / n
        })
        .collect();
    let m = DMatrix::from_columns(&cols);
    (m.transpose() * m).determinant()
}

/// Eigenfunctions of all multipliers outside the unit circle.
pub fn unstable_frame(rec: &FixedPointRecord, alpha: f64) -> Result<TangentFrame> {
    if !rec.hyperbolic {
        return Err(Error::NonHyperbolic {
            distance: rec.hyperbolicity_margin,
        });
    }
    if rec.morse_index == 0 {
        return Err(Error::PreconditionFailed("index-0 fixed point has no unstable directions".into()));
    }
    let raw: Vec<StateVector> = rec
        .spectrum
        .moduli_ladder
        .iter()
        .zip(&rec.spectrum.eigenfunctions)
        .filter(|(r, _)| **r > 1.0)
        .map(|(_, v)| v.clone())
        .collect();
    let vectors = orthonormalize(&raw, alpha);
    if vectors.len() != rec.morse_index {
        return Err(Error::Unresolved(format!(
            "unstable frame has dimension {} but the index is {}",
            vectors.len(),
            rec.morse_index
        )));
    }
    Ok(TangentFrame {
        base: rec.profile.clone(),
        vectors,
        label: FrameLabel::UnstableAtSource,
        alpha,
    })
}

/// First-order point of the local unstable manifold: `φ + eps · direction`.
pub fn seed_unstable(rec: &FixedPointRecord, direction: &StateVector, eps: f64, alpha: f64) -> Result<StateVector> {
    if !(1e-8..=1e-2).contains(&eps) {
        return Err(Error::InvalidArgument(format!("seed amplitude {eps} outside [1e-8, 1e-2]")));
    }
    let frame = unstable_frame(rec, alpha)?;
    let off = frame.relative_distance(direction)?;
    if !(off <= 1e-6) {
        return Err(Error::InvalidArgument(format!(
            "direction leaves the unstable span (relative distance {off:e})"
        )));
    }
    rec.profile.lin_comb(1.0, direction, eps)
}

/// Parameters of a shooting sweep.
#[derive(Debug, Clone, PartialEq)]
pub struct ShootOptions {
    pub n_directions: usize,
    pub amplitudes: Vec<f64>,
    pub n_max: usize,
    /// `X^α` distance to the target counting as arrival.
    pub tol: f64,
    pub consecutive: usize,
    pub alpha: f64,
    pub seed: u64,
}

impl Default for ShootOptions {
    fn default() -> Self {
        Self {
            n_directions: 16,
            amplitudes: vec![1e-6, 1e-5, 1e-4, 1e-3],
            n_max: 200,
            tol: 1e-7,
            consecutive: 5,
            alpha: DEFAULT_ALPHA,
            seed: 0x5ee0,
        }
    }
}

/// Unit directions in the span of `frame`: the signed frame axes first, then
/// well-spread points of the sphere.
pub fn direction_mesh(frame: &TangentFrame, count: usize, seed: u64) -> Vec<StateVector> {
    let d = frame.dim();
    let mut coeffs: Vec<Vec<f64>> = Vec::new();
    for i in 0..d {
        for s in [1.0, -1.0] {
            let mut c = vec![0.0; d];
            c[i] = s;
            coeffs.push(c);
        }
    }
    let extra = count.saturating_sub(coeffs.len());
    if d == 2 {
        for i in 0..extra {
            let th = std::f64::consts::PI * (2.0 * i as f64 + 1.0) / extra as f64;
            coeffs.push(vec![th.cos(), th.sin()]);
        }
    } else if d == 3 {
        let golden = std::f64::consts::PI * (3.0 - 5f64.sqrt());
        for i in 0..extra {
            let z = 1.0 - 2.0 * (i as f64 + 0.5) / extra as f64;
            let r = (1.0 - z * z).sqrt();
            let th = golden * i as f64;
            coeffs.push(vec![z, r * th.cos(), r * th.sin()]);
        }
    } else if d > 3 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        for _ in 0..extra {
            let mut c: Vec<f64> = (0..d).map(|_| rng.gen_range(-1.0..1.0)).collect();
            let n = c.iter().map(|x| x * x).sum::<f64>().sqrt();
            c.iter_mut().for_each(|x| *x /= n);
            coeffs.push(c);
        }
    }
    coeffs.truncate(count.max(1));
    coeffs
        .into_iter()
        .map(|c| {
            let mut acc = StateVector::zeros(frame.base.grid());
            for (ci, v) in c.iter().zip(&frame.vectors) {
                acc.axpy(*ci, v).expect("same grid");
            }
            acc
        })
        .collect()
}

#[derive(Debug, Clone)]
pub struct ConnectionRecord {
    pub source: FixedPointRecord,
    pub target: FixedPointRecord,
    /// `u_0` and its iterates up to arrival.
    pub orbit: Vec<StateVector>,
    pub seed_direction: StateVector,
    pub seed_amplitude: f64,
    pub converged_forward: bool,
    /// `‖u_n - φ_+‖_{X^α}`.
    pub distance_history: Vec<f64>,
    /// `‖u_n - φ_-‖_{X^α}`.
    pub source_distance_history: Vec<f64>,
    /// `z(u_{n+1} - u_n)`, `None` where the difference is degenerate.
    pub zero_history_of_difference: Vec<Option<ZeroCount>>,
    /// `m^±` with `2m^± + 1 = ind(φ_±)`, when that index is odd.
    pub m_plus: Option<usize>,
    pub m_minus: Option<usize>,
}

fn half_index(ind: usize) -> Option<usize> {
    (ind % 2 == 1).then(|| (ind - 1) / 2)
}

fn difference_zero_history(orbit: &[StateVector]) -> Vec<Option<ZeroCount>> {
    orbit
        .windows(2)
        .map(|w| {
            let d = w[1].sub(&w[0]).ok()?;
            if d.sup_norm() <= 1e-12 * (1.0 + w[0].sup_norm()) {
                return None;
            }
            zero_count(&d, DEFAULT_ZERO_TOL).ok()
        })
        .collect()
}

impl ConnectionRecord {
    /// Builds a record from an explicit orbit, recomputing every history.
    pub fn from_orbit(
        source: FixedPointRecord,
        target: FixedPointRecord,
        orbit: Vec<StateVector>,
        seed_direction: StateVector,
        seed_amplitude: f64,
        converged_forward: bool,
        alpha: f64,
    ) -> Result<Self> {
        let dist = |p: &StateVector| -> Result<Vec<f64>> {
            orbit.iter().map(|u| Ok(u.sub(p)?.fractional_norm(alpha))).collect()
        };
        let distance_history = dist(&target.profile)?;
        let source_distance_history = dist(&source.profile)?;
        let zero_history_of_difference = difference_zero_history(&orbit);
        Ok(Self {
            m_plus: half_index(target.morse_index),
            m_minus: half_index(source.morse_index),
            source,
            target,
            orbit,
            seed_direction,
            seed_amplitude,
            converged_forward,
            distance_history,
            source_distance_history,
            zero_history_of_difference,
        })
    }

    /// Orbit index deepest in the heteroclinic regime.
    pub fn mid_index(&self) -> usize {
        (0..self.orbit.len())
            .max_by(|&a, &b| {
                let fa = self.distance_history[a].min(self.source_distance_history[a]);
                let fb = self.distance_history[b].min(self.source_distance_history[b]);
                fa.total_cmp(&fb).then(b.cmp(&a))
            })
            .unwrap_or(0)
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct ShotLog {
    pub direction_index: usize,
    pub amplitude: f64,
    pub iterates: usize,
    pub arrived: bool,
    pub final_target_distance: f64,
    pub note: Option<String>,
}

#[derive(Debug, Clone)]
pub struct ConnectionSweep {
    pub connection: Option<ConnectionRecord>,
    pub log: Vec<ShotLog>,
}

struct Shot {
    orbit: Vec<StateVector>,
    arrived: bool,
    note: Option<String>,
    last_distance: f64,
}

fn shoot(
    seed: StateVector,
    source: &StateVector,
    target: &StateVector,
    initial_offset: f64,
    nl: &Nonlinearity,
    cfg: &StepperConfig,
    opts: &ShootOptions,
) -> Shot {
    let departure = (10.0 * initial_offset).min(0.1);
    let mut departed = false;
    let mut streak = 0;
    let mut orbit = vec![seed];
    let mut last_distance = f64::INFINITY;
    for _ in 0..opts.n_max {
        let u = orbit.last().expect("nonempty");
        let ds = u.sub(source).map(|d| d.fractional_norm(opts.alpha)).unwrap_or(f64::NAN);
        let dt = u.sub(target).map(|d| d.fractional_norm(opts.alpha)).unwrap_or(f64::NAN);
        last_distance = dt;
        departed |= ds > departure;
        if departed && dt <= opts.tol {
            streak += 1;
            if streak >= opts.consecutive {
                return Shot { orbit, arrived: true, note: None, last_distance };
            }
        } else {
            streak = 0;
        }
        match poincare(u, nl, cfg) {
            Ok(next) => orbit.push(next),
            Err(e) => {
                return Shot { orbit, arrived: false, note: Some(e.to_string()), last_distance };
            }
        }
    }
    Shot { orbit, arrived: false, note: None, last_distance }
}

/// Shoots from the local unstable manifold of `source` over a mesh of
/// directions and amplitudes; returns the first shot (in mesh order) whose
/// iterates leave the source and settle within `tol` of `target`.
pub fn find_connection(
    source: &FixedPointRecord,
    target: &FixedPointRecord,
    nl: &Nonlinearity,
    cfg: &StepperConfig,
    opts: &ShootOptions,
) -> Result<ConnectionSweep> {
    if source.morse_index < 1 {
        return Err(Error::PreconditionFailed("source must have positive Morse index".into()));
    }
    let frame = unstable_frame(source, opts.alpha)?;
    let dirs = direction_mesh(&frame, opts.n_directions, opts.seed);
    let shots: Vec<(usize, f64)> = dirs
        .iter()
        .enumerate()
        .flat_map(|(i, _)| opts.amplitudes.iter().map(move |a| (i, *a)))
        .collect();
    let results: Vec<Result<Shot>> = shots
        .par_iter()
        .map(|&(i, amp)| {
            let seed = seed_unstable(source, &dirs[i], amp, opts.alpha)?;
            let offset = dirs[i].fractional_norm(opts.alpha) * amp;
            Ok(shoot(seed, &source.profile, &target.profile, offset, nl, cfg, opts))
        })
        .collect();
    let mut log = Vec::with_capacity(shots.len());
    let mut connection = None;
    for ((i, amp), r) in shots.iter().zip(results) {
        let shot = r?;
        log.push(ShotLog {
            direction_index: *i,
            amplitude: *amp,
            iterates: shot.orbit.len() - 1,
            arrived: shot.arrived,
            final_target_distance: shot.last_distance,
            note: shot.note.clone(),
        });
        if shot.arrived && connection.is_none() {
            connection = Some(ConnectionRecord::from_orbit(
                source.clone(),
                target.clone(),
                shot.orbit,
                dirs[*i].clone(),
                *amp,
                true,
                opts.alpha,
            )?);
        }
    }
    Ok(ConnectionSweep { connection, log })
}

#[derive(Debug, Clone, Serialize)]
pub struct IndexDropReport {
    pub source_index: usize,
    pub target_index: usize,
    pub homoclinic: bool,
    pub violations: Vec<String>,
}

impl IndexDropReport {
    pub fn pass(&self) -> bool {
        self.violations.is_empty()
    }
}

pub fn verify_index_drop(conn: &ConnectionRecord, alpha: f64) -> Result<IndexDropReport> {
    if !conn.source.hyperbolic || !conn.target.hyperbolic {
        return Err(Error::PreconditionFailed("both endpoints must be hyperbolic".into()));
    }
    if !conn.converged_forward {
        return Err(Error::PreconditionFailed("connection did not converge".into()));
    }
    let homoclinic = conn.source.profile.sub(&conn.target.profile)?.fractional_norm(alpha) < 1e-6;
    let mut violations = Vec::new();
    if homoclinic {
        violations.push("homoclinic orbit: source and target coincide".into());
    }
    if conn.source.morse_index <= conn.target.morse_index {
        violations.push(format!(
            "index does not drop: {} -> {}",
            conn.source.morse_index, conn.target.morse_index
        ));
    }
    Ok(IndexDropReport {
        source_index: conn.source.morse_index,
        target_index: conn.target.morse_index,
        homoclinic,
        violations,
    })
}

#[derive(Debug, Clone, Serialize)]
pub struct ZeroBoundsReport {
    pub checked: usize,
    pub skipped_degenerate: usize,
    pub lower_bound_asserted: bool,
    pub counts: Vec<Option<usize>>,
    pub violations: Vec<String>,
}

impl ZeroBoundsReport {
    pub fn pass(&self) -> bool {
        self.violations.is_empty()
    }
}

/// `z(P(u_n) - u_n) < ind(φ_-)` along the orbit, and `> ind(φ_+)` when the
/// target index is positive.
pub fn verify_zero_number_bounds(conn: &ConnectionRecord) -> ZeroBoundsReport {
    let history = difference_zero_history(&conn.orbit);
    let upper = conn.source.morse_index;
    let lower = conn.target.morse_index;
    let lower_bound_asserted = lower > 0;
    let mut violations = Vec::new();
    let mut checked = 0;
    let mut skipped = 0;
    let mut counts = Vec::with_capacity(history.len());
    for (n, z) in history.iter().enumerate() {
        match z {
            None => {
                skipped += 1;
                counts.push(None);
            }
            Some(z) => {
                checked += 1;
                counts.push(Some(z.count));
                if z.count >= upper {
                    violations.push(format!("n = {n}: z = {} not below ind(source) = {upper}", z.count));
                }
                if lower_bound_asserted && z.count <= lower {
                    violations.push(format!("n = {n}: z = {} not above ind(target) = {lower}", z.count));
                }
            }
        }
    }
    ZeroBoundsReport {
        checked,
        skipped_degenerate: skipped,
        lower_bound_asserted,
        counts,
        violations,
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct LevelZeroBound {
    pub level: usize,
    pub modulus: f64,
    pub counts: Vec<usize>,
    pub ok: bool,
}

/// At a positive-index fixed point: every sampled combination within each
/// stable level `j` has `z > ind`.
pub fn stable_level_zero_bound(rec: &FixedPointRecord, samples_per_level: usize, seed: u64) -> Result<Vec<LevelZeroBound>> {
    let spec = &rec.spectrum;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::new();
    for j in 0..=spec.k_max {
        let Some(r) = spec.level_modulus(j) else { break };
        if r >= 1.0 {
            continue;
        }
        let vs = spec.level_vectors(j);
        let mut counts = Vec::with_capacity(samples_per_level);
        for _ in 0..samples_per_level {
            let mut acc = StateVector::zeros(rec.profile.grid());
            for v in vs {
                acc.axpy(rng.gen_range(-1.0..1.0), v)?;
            }
            counts.push(zero_count(&acc, DEFAULT_ZERO_TOL)?.count);
        }
        let ok = counts.iter().all(|c| *c > rec.morse_index);
        out.push(LevelZeroBound { level: j, modulus: r, counts, ok });
    }
    Ok(out)
}

#[derive(Debug, Clone, Serialize)]
pub struct PartitionReport {
    pub m: usize,
    pub fast_samples: usize,
    pub slow_samples: usize,
    pub fast_max_zeros: usize,
    pub slow_min_zeros: usize,
    /// Slow samples whose forward rate under `DP(φ)` placed them at level
    /// `m + 1` or beyond.
    pub slow_classified: usize,
    pub fast_ok: bool,
    pub slow_ok: bool,
    pub violations: Vec<String>,
}

impl PartitionReport {
    pub fn overlap_empty(&self) -> bool {
        self.fast_ok && self.slow_ok && self.violations.is_empty()
    }
}

fn combo(vs: &[StateVector], rng: &mut ChaCha8Rng) -> Result<StateVector> {
    let mut acc = StateVector::zeros(vs[0].grid());
    for v in vs {
        acc.axpy(rng.gen_range(-1.0..1.0), v)?;
    }
    Ok(acc)
}

/// Zero-number partition at a fixed point: vectors in levels `0..=m` have
/// `z ≤ 2m`, vectors in levels `m+1..=m+2` (checked to decay at the slow
/// rate) have `z ≥ 2(m+1)`.
pub fn zero_partition_at_fixed_point(
    rec: &FixedPointRecord,
    nl: &Nonlinearity,
    cfg: &StepperConfig,
    m: usize,
    samples: usize,
    seed: u64,
) -> Result<PartitionReport> {
    let spec = &rec.spectrum;
    if spec.k_max < m + 2 {
        return Err(Error::Unresolved(format!("ladder resolved to level {} but {} needed", spec.k_max, m + 2)));
    }
    let fast: Vec<StateVector> = (0..=m).flat_map(|j| spec.level_vectors(j).to_vec()).collect();
    let slow: Vec<StateVector> = (m + 1..=m + 2).flat_map(|j| spec.level_vectors(j).to_vec()).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let fast_samples: Vec<StateVector> = (0..samples).map(|_| combo(&fast, &mut rng)).collect::<Result<_>>()?;
    let slow_samples: Vec<StateVector> = (0..samples).map(|_| combo(&slow, &mut rng)).collect::<Result<_>>()?;
    let mut violations = Vec::new();
    let fz: Vec<usize> = fast_samples
        .iter()
        .map(|v| zero_count(v, DEFAULT_ZERO_TOL).map(|z| z.count))
        .collect::<Result<_>>()?;
    let sz: Vec<usize> = slow_samples
        .iter()
        .map(|v| zero_count(v, DEFAULT_ZERO_TOL).map(|z| z.count))
        .collect::<Result<_>>()?;
    let levels: Vec<usize> = slow_samples
        .par_iter()
        .map(|v| {
            let est = forward_rate_of_map(
                v,
                |_, w| Ok(dp_apply_many(&rec.profile, std::slice::from_ref(w), nl, cfg)?.1.remove(0)),
                24,
                DEFAULT_ALPHA,
                Some(spec),
                true,
            )?;
            Ok(match_ladder(est.rate, spec, AMBIGUITY_HALF_GAP)?.0)
        })
        .collect::<Result<_>>()?;
    let slow_classified = levels.iter().filter(|l| **l >= m + 1).count();
    if slow_classified < samples {
        violations.push(format!("{} slow samples classified above level {}", samples - slow_classified, m + 1));
    }
    let fast_max = fz.iter().copied().max().unwrap_or(0);
    let slow_min = sz.iter().copied().min().unwrap_or(usize::MAX);
    let fast_ok = fast_max <= 2 * m;
    let slow_ok = slow_min >= 2 * (m + 1);
    if !fast_ok {
        violations.push(format!("fast-frame sample with z = {fast_max} > {}", 2 * m));
    }
    if !slow_ok {
        violations.push(format!("slow sample with z = {slow_min} < {}", 2 * (m + 1)));
    }
    Ok(PartitionReport {
        m,
        fast_samples: samples,
        slow_samples: samples,
        fast_max_zeros: fast_max,
        slow_min_zeros: slow_min,
        slow_classified,
        fast_ok,
        slow_ok,
        violations,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(tag = "verdict", content = "reasons", rename_all = "snake_case")]
pub enum Transversality {
    TransversalByCount,
    Transversal,
    NotTransversal(Vec<String>),
    Inconclusive(String),
}

impl Transversality {
    pub fn is_transversal(&self) -> bool {
        matches!(self, Self::TransversalByCount | Self::Transversal)
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct TransversalityReport {
    pub mid_index: usize,
    pub codim_stable: usize,
    /// Rank of the propagated sub-frame of levels `0..=m^+`.
    pub unstable_subframe_dim: Option<usize>,
    pub propagated_frame_dim: usize,
    /// Smallest normalized Gram determinant met while propagating.
    pub min_gram_determinant: f64,
    pub fast_max_zeros: Option<usize>,
    pub slow_min_zeros: Option<usize>,
    pub verdict: Transversality,
}

fn propagate_frame(
    conn: &ConnectionRecord,
    nl: &Nonlinearity,
    cfg: &StepperConfig,
    upto: usize,
    alpha: f64,
) -> Result<(Vec<StateVector>, f64)> {
    let mut frame = unstable_frame(&conn.source, alpha)?.vectors;
    let mut min_det = normalized_gram_determinant(&frame, alpha);
    for u in &conn.orbit[..upto] {
        let (_, images) = dp_apply_many(u, &frame, nl, cfg)?;
        min_det = min_det.min(normalized_gram_determinant(&images, alpha));
        frame = orthonormalize(&images, alpha);
    }
    Ok((frame, min_det))
}

/// Members of `F^+_{k}` at orbit point `mid`: the kernel of the map sending
/// a tangent vector to the level-`0..k` part of its image near the target.
fn forward_filtration_samples(
    conn: &ConnectionRecord,
    nl: &Nonlinearity,
    cfg: &StepperConfig,
    mid: usize,
    k: usize,
    samples: usize,
    alpha: f64,
    rng: &mut ChaCha8Rng,
) -> Result<Vec<StateVector>> {
    let grid = conn.orbit[mid].grid().clone();
    let coords = AlphaCoords::new(&grid, alpha);
    let n = coords.dim();
    let mut images: Vec<StateVector> = (0..n)
        .map(|i| {
            let mut e = DVector::zeros(n);
            e[i] = 1.0;
            coords.decode(&e)
        })
        .collect();
    let extra = 10;
    for step in 0..(conn.orbit.len() - mid + extra) {
        let base = conn.orbit.get(mid + step).unwrap_or(&conn.target.profile);
        images = dp_apply_many(base, &images, nl, cfg)?.1;
        let big = images.iter().map(|v| v.sup_norm()).fold(0.0, f64::max);
        if big > 0.0 {
            images.iter_mut().for_each(|v| *v = v.scaled(1.0 / big));
        }
    }
    let top: Vec<StateVector> = (0..k).flat_map(|j| conn.target.spectrum.level_vectors(j).to_vec()).collect();
    let q: Vec<DVector<f64>> = orthonormalize(&top, alpha).iter().map(|v| coords.encode(v)).collect();
    let cols: Vec<DVector<f64>> = images.iter().map(|v| coords.encode(v)).collect();
    let l = DMatrix::from_columns(&cols);
    let m = DMatrix::from_rows(&q.iter().map(|qi| qi.transpose() * &l).collect::<Vec<_>>());
    let dec = svd(&m);
    let kernel: Vec<DVector<f64>> = (q.len()..n).map(|i| dec.v.column(i).into_owned()).collect();
    let out = (0..samples)
        .map(|_| {
            let mut acc = DVector::zeros(n);
            for kv in &kernel {
                acc.axpy(rng.gen_range(-1.0..1.0), kv, 1.0);
            }
            coords.decode(&acc)
        })
        .collect();
    Ok(out)
}

/// Dimension count and zero-number partition at the mid-orbit point.
pub fn transversality_check(
    conn: &ConnectionRecord,
    nl: &Nonlinearity,
    cfg: &StepperConfig,
    samples: usize,
    alpha: f64,
    seed: u64,
) -> Result<TransversalityReport> {
    if !conn.converged_forward {
        return Err(Error::PreconditionFailed("connection did not converge".into()));
    }
    let mid = conn.mid_index();
    let codim = conn.target.morse_index;
    let (frame, min_det) = match propagate_frame(conn, nl, cfg, mid, alpha) {
        Ok(x) => x,
        Err(e) => {
            return Ok(TransversalityReport {
                mid_index: mid,
                codim_stable: codim,
                unstable_subframe_dim: None,
                propagated_frame_dim: 0,
                min_gram_determinant: f64::NAN,
                fast_max_zeros: None,
                slow_min_zeros: None,
                verdict: Transversality::Inconclusive(e.to_string()),
            })
        }
    };
    let mut report = TransversalityReport {
        mid_index: mid,
        codim_stable: codim,
        unstable_subframe_dim: None,
        propagated_frame_dim: frame.len(),
        min_gram_determinant: min_det,
        fast_max_zeros: None,
        slow_min_zeros: None,
        verdict: Transversality::TransversalByCount,
    };
    if codim == 0 {
        return Ok(report);
    }
    let Some(m_plus) = conn.m_plus else {
        report.verdict = Transversality::NotTransversal(vec![format!("target index {codim} is even")]);
        return Ok(report);
    };
    let k = m_plus + 1;
    if conn.target.spectrum.k_max < k {
        report.verdict = Transversality::Inconclusive("target ladder unresolved".into());
        return Ok(report);
    }
    let need = 2 * m_plus + 1;
    if frame.len() < need {
        report.verdict = Transversality::NotTransversal(vec![format!(
            "propagated unstable frame has dimension {} < {need}",
            frame.len()
        )]);
        return Ok(report);
    }
    let sub = &frame[..need];
    let sub_dim = orthonormalize(sub, alpha).len();
    report.unstable_subframe_dim = Some(sub_dim);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut reasons = Vec::new();
    if sub_dim != need {
        reasons.push(format!("sub-frame dimension {sub_dim} differs from 2m+1 = {need}"));
    }
    let mut fast_max = 0;
    for _ in 0..samples {
        let v = combo(sub, &mut rng)?;
        let z = zero_count(&v, DEFAULT_ZERO_TOL)?.count;
        fast_max = fast_max.max(z);
    }
    report.fast_max_zeros = Some(fast_max);
    if fast_max >= 2 * k {
        reasons.push(format!("unstable sample with z = {fast_max} ≥ {}", 2 * k));
    }
    let slow = forward_filtration_samples(conn, nl, cfg, mid, k, samples, alpha, &mut rng)?;
    let mut slow_min = usize::MAX;
    for v in &slow {
        slow_min = slow_min.min(zero_count(v, DEFAULT_ZERO_TOL)?.count);
    }
    report.slow_min_zeros = Some(slow_min);
    if slow_min < 2 * k {
        reasons.push(format!("stable-side sample with z = {slow_min} < {}", 2 * k));
    }
    report.verdict = if reasons.is_empty() {
        Transversality::Transversal
    } else {
        Transversality::NotTransversal(reasons)
    };
    Ok(report)
}

/// Frame-level version of the partition test, for checking the checker: the
/// given vectors must all have `z < 2k`.
pub fn frame_partition_violations(frame: &[StateVector], k: usize, samples: usize, seed: u64) -> Result<Vec<usize>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut bad = Vec::new();
    for _ in 0..samples {
        let z = zero_count(&combo(frame, &mut rng)?, DEFAULT_ZERO_TOL)?.count;
        if z >= 2 * k {
            bad.push(z);
        }
    }
    Ok(bad)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum OmegaOutcome {
    FixedPoint { census_index: usize, distance: f64 },
    Translate { census_index: usize, shift: f64, distance: f64 },
    Unresolved { nearest_distance: f64 },
    BlowUp { message: String },
}

#[derive(Debug, Clone, Serialize)]
pub struct OmegaReport {
    pub outcomes: Vec<OmegaOutcome>,
    pub fixed_points: usize,
    pub translates: usize,
    pub unresolved: usize,
    pub blow_ups: usize,
    /// Seeds landing on each census entry.
    pub histogram: Vec<usize>,
}

impl OmegaReport {
    pub fn all_on_census(&self) -> bool {
        self.fixed_points == self.outcomes.len()
    }
}

/// Best circular shift `a` with `u ≈ w(· + a)`: grid cross-correlation, then
/// golden-section refinement on the continuous shift.
pub fn fit_translate(u: &StateVector, w: &StateVector, alpha: f64) -> Result<(f64, f64)> {
    u.ensure_same_grid(w)?;
    let grid = u.grid();
    let n = grid.n_points();
    let h = grid.spacing();
    let (uc, wc) = (u.coeffs(), w.coeffs());
    // corr(s) = Σ_k û_k conj(ŵ_k) e^{-iks}, evaluated on grid shifts
    let prod: Vec<num_complex::Complex64> = uc.iter().zip(&wc).map(|(a, b)| a.conj() * b).collect();
    let corr = grid.inverse(&prod);
    let best = (0..n).max_by(|&a, &b| corr[a].total_cmp(&corr[b])).unwrap_or(0);
    let dist = |a: f64| u.sub(&w.translate(a)).map(|d| d.fractional_norm(alpha)).unwrap_or(f64::INFINITY);
    let (mut lo, mut hi) = (best as f64 * h - h, best as f64 * h + h);
    let g = (5f64.sqrt() - 1.0) / 2.0;
    let (mut x1, mut x2) = (hi - g * (hi - lo), lo + g * (hi - lo));
    let (mut f1, mut f2) = (dist(x1), dist(x2));
    for _ in 0..80 {
        if f1 < f2 {
            hi = x2;
            x2 = x1;
            f2 = f1;
            x1 = hi - g * (hi - lo);
            f1 = dist(x1);
        } else {
            lo = x1;
            x1 = x2;
            f1 = f2;
            x2 = lo + g * (hi - lo);
            f2 = dist(x2);
        }
    }
    let a = 0.5 * (lo + hi);
    Ok((a.rem_euclid(std::f64::consts::TAU), dist(a)))
}

/// Classifies the ω-limit of every seed after `n_transient` iterates by the
/// worst distance over an `n_window` window.
pub fn omega_limit_census(
    nl: &Nonlinearity,
    cfg: &StepperConfig,
    seeds: &[StateVector],
    census: &[FixedPointRecord],
    n_transient: usize,
    n_window: usize,
    tol: f64,
    alpha: f64,
) -> OmegaReport {
    let outcomes: Vec<OmegaOutcome> = seeds
        .par_iter()
        .map(|seed| {
            let mut u = seed.clone();
            for _ in 0..n_transient {
                u = match poincare(&u, nl, cfg) {
                    Ok(v) => v,
                    Err(e) => return OmegaOutcome::BlowUp { message: e.to_string() },
                };
            }
            let mut window = vec![u.clone()];
            for _ in 1..n_window.max(1) {
                u = match poincare(&u, nl, cfg) {
                    Ok(v) => v,
                    Err(e) => return OmegaOutcome::BlowUp { message: e.to_string() },
                };
                window.push(u.clone());
            }
            let worst_to = |p: &StateVector| {
                window
                    .iter()
                    .map(|w| w.sub(p).map(|d| d.fractional_norm(alpha)).unwrap_or(f64::INFINITY))
                    .fold(0.0, f64::max)
            };
            let mut nearest = f64::INFINITY;
            for (i, rec) in census.iter().enumerate() {
                let d = worst_to(&rec.profile);
                nearest = nearest.min(d);
                if d <= tol {
                    return OmegaOutcome::FixedPoint { census_index: i, distance: d };
                }
            }
            for (i, rec) in census.iter().enumerate() {
                if rec.homogeneity_defect <= 1e-10 {
                    continue;
                }
                let fits: Vec<(f64, f64)> = window
                    .iter()
                    .filter_map(|w| fit_translate(w, &rec.profile, alpha).ok())
                    .collect();
                let worst = fits.iter().map(|f| f.1).fold(0.0, f64::max);
                if !fits.is_empty() && worst <= tol {
                    return OmegaOutcome::Translate {
                        census_index: i,
                        shift: fits.last().map_or(0.0, |f| f.0),
                        distance: worst,
                    };
                }
            }
            OmegaOutcome::Unresolved { nearest_distance: nearest }
        })
        .collect();
    let mut histogram = vec![0; census.len()];
    let (mut fp, mut tr, mut un, mut bu) = (0, 0, 0, 0);
    for o in &outcomes {
        match o {
            OmegaOutcome::FixedPoint { census_index, .. } => {
                fp += 1;
                histogram[*census_index] += 1;
            }
            OmegaOutcome::Translate { .. } => tr += 1,
            OmegaOutcome::Unresolved { .. } => un += 1,
            OmegaOutcome::BlowUp { .. } => bu += 1,
        }
    }
    OmegaReport {
        outcomes,
        fixed_points: fp,
        translates: tr,
        unresolved: un,
        blow_ups: bu,
        histogram,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Verdict {
    Yes,
    No,
    Inconclusive,
}

#[derive(Debug, Clone, Serialize)]
pub struct MorseSmaleReport {
    pub verdict: Verdict,
    pub fixed_points: usize,
    pub connections: usize,
    pub reasons: Vec<String>,
    pub assumed: Vec<String>,
}

/// Combines the census, the ω-limit census and the connection audits.
pub fn morse_smale_verdict(
    census: &[FixedPointRecord],
    transversality: &[TransversalityReport],
    omega: &OmegaReport,
) -> MorseSmaleReport {
    let mut no = Vec::new();
    let mut unsure = Vec::new();
    if census.is_empty() {
        unsure.push("(i) census is empty".to_string());
    }
    for (i, r) in census.iter().enumerate() {
        if !r.hyperbolic {
            no.push(format!("(i) fixed point {i} is not hyperbolic (margin {:e})", r.hyperbolicity_margin));
        }
    }
    if omega.translates > 0 {
        no.push(format!("(ii) {} seeds converge to translates of non-homogeneous profiles", omega.translates));
    }
    if omega.unresolved + omega.blow_ups > 0 {
        unsure.push(format!(
            "(ii) {} seeds unresolved, {} blew up",
            omega.unresolved, omega.blow_ups
        ));
    }
    for (i, t) in transversality.iter().enumerate() {
        match &t.verdict {
            Transversality::NotTransversal(r) => no.push(format!("(iii) connection {i}: {}", r.join("; "))),
            Transversality::Inconclusive(r) => unsure.push(format!("(iii) connection {i}: {r}")),
            _ => {}
        }
    }
    let verdict = if !no.is_empty() {
        Verdict::No
    } else if !unsure.is_empty() {
        Verdict::Inconclusive
    } else {
        Verdict::Yes
    };
    no.extend(unsure);
    MorseSmaleReport {
        verdict,
        fixed_points: census.len(),
        connections: transversality.len(),
        reasons: no,
        assumed: vec!["injectivity of P and DP(u) is assumed from theory, not tested".into()],
    }
}

/// Levels `0..=m` of a spectrum as a frame (used to build synthetic checks).
pub fn level_frame(spec: &FloquetSpectrum, base: &StateVector, levels: std::ops::RangeInclusive<usize>, alpha: f64) -> TangentFrame {
    let raw: Vec<StateVector> = levels.flat_map(|j| spec.level_vectors(j).to_vec()).collect();
    TangentFrame {
        base: base.clone(),
        vectors: orthonormalize(&raw, alpha),
        label: FrameLabel::FiltrationFk,
        alpha,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::floquet::newton_fixed_point;
    use crate::grid::CircleGrid;
    use std::sync::Arc;

    fn chafee() -> Nonlinearity {
        Nonlinearity::new(
            "chafee",
            Arc::new(|_, y, _| 2.0 * y - y * y * y),
            Arc::new(|_, y, _| 2.0 - 3.0 * y * y),
            Arc::new(|_, _, _| 0.0),
            1.0,
            true,
        )
        .unwrap()
    }

    fn records(n: usize) -> (FixedPointRecord, FixedPointRecord) {
        let g = CircleGrid::new(n).unwrap();
        let cfg = StepperConfig::default();
        let zero = newton_fixed_point(&StateVector::zeros(&g), &chafee(), &cfg, 1e-10).unwrap();
        let top = newton_fixed_point(&StateVector::constant(&g, 1.3), &chafee(), &cfg, 1e-10).unwrap();
        (zero, top)
    }

    #[test]
    fn seeds_and_guards() {
        let (zero, top) = records(32);
        let g = zero.profile.grid().clone();
        let one = StateVector::constant(&g, 1.0);
        let s = seed_unstable(&zero, &one, 1e-4, DEFAULT_ALPHA).unwrap();
        assert!(s.values().iter().all(|v| (v - 1e-4).abs() < 1e-12));
        let p = poincare(&s, &chafee(), &StepperConfig::default()).unwrap();
        let grown = p.fractional_norm(DEFAULT_ALPHA) / s.fractional_norm(DEFAULT_ALPHA);
        assert!((grown / 2f64.exp() - 1.0).abs() < 0.2, "{grown}");
        assert!(matches!(seed_unstable(&zero, &one, 0.1, DEFAULT_ALPHA), Err(Error::InvalidArgument(_))));
        let cos2 = StateVector::from_fn(&g, |x| (2.0 * x).cos());
        assert!(matches!(seed_unstable(&zero, &cos2, 1e-4, DEFAULT_ALPHA), Err(Error::InvalidArgument(_))));
        assert!(matches!(unstable_frame(&top, DEFAULT_ALPHA), Err(Error::PreconditionFailed(_))));
        let frame = unstable_frame(&zero, DEFAULT_ALPHA).unwrap();
        assert!((frame.gram() - DMatrix::identity(3, 3)).norm() < 1e-10);
        assert_eq!(direction_mesh(&frame, 16, 1).len(), 16);
    }

    #[test]
    fn connection_to_positive_state() {
        let (zero, top) = records(32);
        let cfg = StepperConfig::default();
        let opts = ShootOptions { n_directions: 2, amplitudes: vec![1e-4], ..Default::default() };
        let sweep = find_connection(&zero, &top, &chafee(), &cfg, &opts).unwrap();
        let conn = sweep.connection.expect("connection");
        assert_eq!(conn.m_minus, Some(1));
        assert_eq!(conn.m_plus, None);
        assert!(verify_index_drop(&conn, DEFAULT_ALPHA).unwrap().pass());
        let zb = verify_zero_number_bounds(&conn);
        assert!(zb.pass(), "{:?}", zb.violations);
        assert!(!zb.lower_bound_asserted);
        // near the source the distance grows by the leading multiplier
        let d = &conn.source_distance_history;
        assert!((d[1] / d[0] / 2f64.exp() - 1.0).abs() < 0.1);
        let tr = transversality_check(&conn, &chafee(), &cfg, 10, DEFAULT_ALPHA, 3).unwrap();
        assert_eq!(tr.verdict, Transversality::TransversalByCount);
        assert!(tr.min_gram_determinant >= 1e-8);
    }

    #[test]
    fn synthetic_zero_bounds() {
        let (zero, top) = records(32);
        let g = zero.profile.grid().clone();
        let make = |k: f64| {
            let orbit = (0..4).map(|n| StateVector::from_fn(&g, |x| 0.1 * n as f64 * (k * x).cos())).collect();
            ConnectionRecord::from_orbit(zero.clone(), top.clone(), orbit, StateVector::zeros(&g), 1e-4, true, DEFAULT_ALPHA)
                .unwrap()
        };
        assert!(verify_zero_number_bounds(&make(1.0)).pass());
        assert!(!verify_zero_number_bounds(&make(2.0)).pass());
    }

    #[test]
    fn partition_at_index_three() {
        let (zero, _) = records(32);
        let rep = zero_partition_at_fixed_point(&zero, &chafee(), &StepperConfig::default(), 1, 12, 5).unwrap();
        assert!(rep.overlap_empty(), "{:?}", rep.violations);
        let fast = level_frame(&zero.spectrum, &zero.profile, 0..=1, DEFAULT_ALPHA);
        assert!(frame_partition_violations(&fast.vectors, 2, 50, 1).unwrap().is_empty());
        let bad = level_frame(&zero.spectrum, &zero.profile, 0..=2, DEFAULT_ALPHA);
        assert!(!frame_partition_violations(&bad.vectors, 2, 50, 1).unwrap().is_empty());
        let bounds = stable_level_zero_bound(&zero, 10, 2).unwrap();
        assert!(!bounds.is_empty() && bounds.iter().all(|b| b.ok));
    }

    #[test]
    fn translate_fit() {
        let g = CircleGrid::new(64).unwrap();
        let w = StateVector::from_fn(&g, |x| x.cos() + 0.3 * (2.0 * x).sin());
        let u = w.translate(0.737);
        let (a, d) = fit_translate(&u, &w, DEFAULT_ALPHA).unwrap();
        assert!((a - 0.737).abs() < 1e-6, "{a}");
        assert!(d < 1e-6);
    }

    #[test]
    fn verdict_precedence() {
        let (zero, top) = records(16);
        let omega = |un: usize| OmegaReport {
            outcomes: vec![],
            fixed_points: 4,
            translates: 0,
            unresolved: un,
            blow_ups: 0,
            histogram: vec![],
        };
        let census = vec![zero, top];
        assert_eq!(morse_smale_verdict(&census, &[], &omega(0)).verdict, Verdict::Yes);
        assert_eq!(morse_smale_verdict(&census, &[], &omega(1)).verdict, Verdict::Inconclusive);
        let mut bad = census.clone();
        bad[0].hyperbolic = false;
        assert_eq!(morse_smale_verdict(&bad, &[], &omega(1)).verdict, Verdict::No);
    }
}
