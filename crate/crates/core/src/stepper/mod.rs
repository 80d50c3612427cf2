//! Time integration of `u_t = u_xx + f(t, u, u_x)`, its linearization along
//! trajectories, the period map and the action of its derivative.

pub mod dissipativity;
pub(crate) mod integrator;
mod nonlinearity;

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::{CircleGrid, StateVector};
use integrator::{integrate, Fields, Physical, SpectralRhs};

pub use dissipativity::{check_dissipativity, DissipativityReport, SeedEnvelope};
pub use nonlinearity::{BoundFn, Dissipativity, Nonlinearity, ReactionFn};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Scheme {
    /// Fourth-order exponential time differencing (Cox–Matthews).
    #[default]
    Etdrk4,
    /// Second-order semi-implicit backward differentiation.
    ImexBdf2,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StepperConfig {
    pub dt: f64,
    pub scheme: Scheme,
    pub dealias: bool,
    /// Sup-norm above which a run is declared blown up.
    pub blowup_bound: f64,
}

impl Default for StepperConfig {
    fn default() -> Self {
        Self {
            dt: 0.01,
            scheme: Scheme::Etdrk4,
            dealias: true,
            blowup_bound: 1e6,
        }
    }
}

impl StepperConfig {
    pub fn with_dt(dt: f64) -> Self {
        Self {
            dt,
            ..Self::default()
        }
    }

    /// Number of macro steps per period; errors unless `dt` divides `period`.
    pub fn steps_per_period(&self, period: f64) -> Result<usize> {
        if !(self.dt > 0.0 && self.dt.is_finite()) {
            return Err(Error::InvalidArgument(format!("dt must be positive, got {}", self.dt)));
        }
        if !(self.blowup_bound > 0.0) {
            return Err(Error::InvalidArgument("blow-up bound must be positive".into()));
        }
        let ratio = period / self.dt;
        let n = ratio.round();
        if n < 1.0 || (ratio - n).abs() > 1e-9 * ratio.max(1.0) {
            return Err(Error::InvalidArgument(format!(
                "dt = {} does not divide the period {}",
                self.dt, period
            )));
        }
        Ok(n as usize)
    }
}

/// Sampled solution `u(t_i)` on macro-step times.
#[derive(Debug, Clone)]
pub struct TrajectorySegment {
    pub times: Vec<f64>,
    pub states: Vec<StateVector>,
    nonlinearity: Nonlinearity,
    config: StepperConfig,
}

impl TrajectorySegment {
    pub fn nonlinearity(&self) -> &Nonlinearity {
        &self.nonlinearity
    }

    pub fn config(&self) -> &StepperConfig {
        &self.config
    }

    pub fn grid(&self) -> &CircleGrid {
        self.states[0].grid()
    }

    pub fn t_start(&self) -> f64 {
        self.times[0]
    }

    pub fn t_end(&self) -> f64 {
        *self.times.last().expect("nonempty trajectory")
    }

    pub fn first(&self) -> &StateVector {
        &self.states[0]
    }

    pub fn last(&self) -> &StateVector {
        self.states.last().expect("nonempty trajectory")
    }

    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }
}

/// `N̂ = f(t, u, u_x)` on field 0, and `∂₃f·v_x + ∂₂f·v` on the remaining
/// fields, which therefore evolve under the exact linearization of the
/// discrete flow.
struct ReactionRhs<'a> {
    nl: &'a Nonlinearity,
    phys: Physical,
    u: Vec<f64>,
    ux: Vec<f64>,
    c: Vec<f64>,
    d: Vec<f64>,
    v: Vec<f64>,
    vx: Vec<f64>,
    w: Vec<f64>,
}

impl<'a> ReactionRhs<'a> {
    fn new(grid: &CircleGrid, nl: &'a Nonlinearity) -> Self {
        let n = grid.n_points();
        Self {
            nl,
            phys: Physical::new(grid),
            u: vec![0.0; n],
            ux: vec![0.0; n],
            c: vec![0.0; n],
            d: vec![0.0; n],
            v: vec![0.0; n],
            vx: vec![0.0; n],
            w: vec![0.0; n],
        }
    }
}

impl SpectralRhs for ReactionRhs<'_> {
    fn eval(&mut self, t: f64, fields: &[Vec<Complex64>], out: &mut [Vec<Complex64>]) {
        self.phys
            .values_and_slope(&fields[0], &mut self.u, &mut self.ux);
        for i in 0..self.u.len() {
            self.w[i] = self.nl.f(t, self.u[i], self.ux[i]);
        }
        self.phys.to_spectral(&self.w, &mut out[0]);
        if fields.len() == 1 {
            return;
        }
        for i in 0..self.u.len() {
            self.c[i] = self.nl.df_dz(t, self.u[i], self.ux[i]);
            self.d[i] = self.nl.df_dy(t, self.u[i], self.ux[i]);
        }
        for (field, dst) in fields[1..].iter().zip(out[1..].iter_mut()) {
            self.phys.values_and_slope(field, &mut self.v, &mut self.vx);
            for i in 0..self.v.len() {
                self.w[i] = self.c[i] * self.vx[i] + self.d[i] * self.v[i];
            }
            self.phys.to_spectral(&self.w, dst);
        }
    }
}

/// Linear right-hand side `c(t,x) v_x + d(t,x) v` applied to every field.
pub(crate) struct LinearRhs<'a> {
    c: &'a (dyn Fn(f64, f64) -> f64 + Sync),
    d: &'a (dyn Fn(f64, f64) -> f64 + Sync),
    phys: Physical,
    cv: Vec<f64>,
    dv: Vec<f64>,
    v: Vec<f64>,
    vx: Vec<f64>,
    w: Vec<f64>,
}

impl<'a> LinearRhs<'a> {
    pub fn new(
        grid: &CircleGrid,
        c: &'a (dyn Fn(f64, f64) -> f64 + Sync),
        d: &'a (dyn Fn(f64, f64) -> f64 + Sync),
    ) -> Self {
        let n = grid.n_points();
        Self {
            c,
            d,
            phys: Physical::new(grid),
            cv: vec![0.0; n],
            dv: vec![0.0; n],
            v: vec![0.0; n],
            vx: vec![0.0; n],
            w: vec![0.0; n],
        }
    }
}

impl SpectralRhs for LinearRhs<'_> {
    fn eval(&mut self, t: f64, fields: &[Vec<Complex64>], out: &mut [Vec<Complex64>]) {
        for (i, &x) in self.phys.nodes.iter().enumerate() {
            self.cv[i] = (self.c)(t, x);
            self.dv[i] = (self.d)(t, x);
        }
        for (field, dst) in fields.iter().zip(out.iter_mut()) {
            self.phys.values_and_slope(field, &mut self.v, &mut self.vx);
            for i in 0..self.v.len() {
                self.w[i] = self.cv[i] * self.vx[i] + self.dv[i] * self.v[i];
            }
            self.phys.to_spectral(&self.w, dst);
        }
    }
}

/// Advances a stack of linear fields under `v_t = v_xx + c v_x + d v` from
/// `t0` to `t1`.
pub(crate) fn evolve_linear_fields(
    grid: &CircleGrid,
    cfg: &StepperConfig,
    c: &(dyn Fn(f64, f64) -> f64 + Sync),
    d: &(dyn Fn(f64, f64) -> f64 + Sync),
    t0: f64,
    t1: f64,
    fields: &[StateVector],
) -> Result<Vec<StateVector>> {
    if fields.is_empty() {
        return Ok(Vec::new());
    }
    let mut rhs = LinearRhs::new(grid, c, d);
    let linear_cfg = StepperConfig {
        blowup_bound: f64::INFINITY,
        ..*cfg
    };
    let stack: Fields = fields.iter().map(|s| s.coeffs()).collect();
    let out = integrate(grid, &linear_cfg, t0, t1, stack, &mut rhs, |_, _, _| Ok(()))?;
    Ok(out
        .iter()
        .map(|c| StateVector::from_coeffs(grid, c))
        .collect())
}

fn check_span(t0: f64, t1: f64) -> Result<()> {
    if !(t1 > t0) || !t0.is_finite() || !t1.is_finite() {
        return Err(Error::InvalidArgument(format!(
            "time span must satisfy t1 > t0, got [{t0}, {t1}]"
        )));
    }
    Ok(())
}

/// Integrates `[u, v_1, ..., v_m]` jointly over `[t0, t1]`.
fn joint_run(
    u0: &StateVector,
    vs: &[StateVector],
    nl: &Nonlinearity,
    cfg: &StepperConfig,
    t0: f64,
    t1: f64,
    record: Option<&mut Vec<(f64, Fields)>>,
) -> Result<Fields> {
    check_span(t0, t1)?;
    u0.check_finite()?;
    for v in vs {
        u0.ensure_same_grid(v)?;
        v.check_finite()?;
    }
    cfg.steps_per_period(nl.period())?;
    let grid = u0.grid();
    let mut stack: Fields = Vec::with_capacity(vs.len() + 1);
    stack.push(u0.coeffs());
    stack.extend(vs.iter().map(|v| v.coeffs()));
    let mut rhs = ReactionRhs::new(grid, nl);
    match record {
        Some(rec) => {
            rec.push((t0, stack.clone()));
            integrate(grid, cfg, t0, t1, stack, &mut rhs, |_, t, f| {
                rec.push((t, f.to_vec()));
                Ok(())
            })
        }
        None => integrate(grid, cfg, t0, t1, stack, &mut rhs, |_, _, _| Ok(())),
    }
}

/// Solution of the nonlinear equation sampled at every macro step.
pub fn evolve(
    u0: &StateVector,
    nl: &Nonlinearity,
    cfg: &StepperConfig,
    t0: f64,
    t1: f64,
) -> Result<TrajectorySegment> {
    let mut rec = Vec::new();
    joint_run(u0, &[], nl, cfg, t0, t1, Some(&mut rec))?;
    let grid = u0.grid();
    let (times, states) = rec
        .into_iter()
        .map(|(t, f)| (t, StateVector::from_coeffs(grid, &f[0])))
        .unzip();
    Ok(TrajectorySegment {
        times,
        states,
        nonlinearity: nl.clone(),
        config: *cfg,
    })
}

/// Final state of the flow over `[t0, t1]` without storing samples.
pub fn flow(
    u0: &StateVector,
    nl: &Nonlinearity,
    cfg: &StepperConfig,
    t0: f64,
    t1: f64,
) -> Result<StateVector> {
    let out = joint_run(u0, &[], nl, cfg, t0, t1, None)?;
    Ok(StateVector::from_coeffs(u0.grid(), &out[0]))
}

/// The period map `P(u0) = u(T; u0)`.
pub fn poincare(u0: &StateVector, nl: &Nonlinearity, cfg: &StepperConfig) -> Result<StateVector> {
    flow(u0, nl, cfg, 0.0, nl.period())
}

/// `[u0, P(u0), ..., P^n(u0)]`.
pub fn poincare_iterates(
    u0: &StateVector,
    nl: &Nonlinearity,
    cfg: &StepperConfig,
    n: usize,
) -> Result<Vec<StateVector>> {
    let mut out = Vec::with_capacity(n + 1);
    out.push(u0.clone());
    for m in 0..n {
        let next = poincare(&out[m], nl, cfg).map_err(|e| match e {
            Error::BlowUp { t_last_valid, .. } => Error::BlowUpAtIterate {
                iterate: m + 1,
                t_last_valid: m as f64 * nl.period() + t_last_valid,
            },
            other => other,
        })?;
        out.push(next);
    }
    Ok(out)
}

/// Solution of the linearization along `traj` with initial data `v0` at the
/// trajectory start, sampled at the trajectory's times.
pub fn tangent_evolve(traj: &TrajectorySegment, v0: &StateVector) -> Result<TrajectorySegment> {
    traj.first().ensure_same_grid(v0)?;
    let mut rec = Vec::new();
    joint_run(
        traj.first(),
        std::slice::from_ref(v0),
        &traj.nonlinearity,
        &traj.config,
        traj.t_start(),
        traj.t_end(),
        Some(&mut rec),
    )?;
    let grid = v0.grid();
    let (times, states) = rec
        .into_iter()
        .map(|(t, f)| (t, StateVector::from_coeffs(grid, &f[1])))
        .unzip();
    Ok(TrajectorySegment {
        times,
        states,
        nonlinearity: traj.nonlinearity.clone(),
        config: traj.config,
    })
}

/// `DP(u0) v0`.
pub fn dp_apply(
    u0: &StateVector,
    v0: &StateVector,
    nl: &Nonlinearity,
    cfg: &StepperConfig,
) -> Result<StateVector> {
    let (_, mut vs) = dp_apply_many(u0, std::slice::from_ref(v0), nl, cfg)?;
    Ok(vs.pop().expect("one tangent vector"))
}

/// `P(u0)` together with `DP(u0) v` for every `v` in `vs`, from one joint run.
pub fn dp_apply_many(
    u0: &StateVector,
    vs: &[StateVector],
    nl: &Nonlinearity,
    cfg: &StepperConfig,
) -> Result<(StateVector, Vec<StateVector>)> {
    let out = joint_run(u0, vs, nl, cfg, 0.0, nl.period(), None)?;
    let grid = u0.grid();
    let mut it = out.iter().map(|c| StateVector::from_coeffs(grid, c));
    let p = it.next().expect("base field");
    Ok((p, it.collect()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::PI;
    use std::sync::Arc;

    fn linear_decay(period: f64) -> Nonlinearity {
        Nonlinearity::new(
            "decay",
            Arc::new(|_, y, _| -y),
            Arc::new(|_, _, _| -1.0),
            Arc::new(|_, _, _| 0.0),
            period,
            true,
        )
        .unwrap()
    }

    fn chafee(period: f64) -> Nonlinearity {
        Nonlinearity::new(
            "chafee",
            Arc::new(|_, y, _| 2.0 * y - y * y * y),
            Arc::new(|_, y, _| 2.0 - 3.0 * y * y),
            Arc::new(|_, _, _| 0.0),
            period,
            true,
        )
        .unwrap()
    }

    fn rk4_scalar(f: impl Fn(f64, f64) -> f64, y0: f64, t1: f64, n: usize) -> f64 {
        let h = t1 / n as f64;
        let mut y = y0;
        for i in 0..n {
            let t = i as f64 * h;
            let k1 = f(t, y);
            let k2 = f(t + h / 2.0, y + h / 2.0 * k1);
            let k3 = f(t + h / 2.0, y + h / 2.0 * k2);
            let k4 = f(t + h, y + h * k3);
            y += h / 6.0 * (k1 + 2.0 * k2 + 2.0 * k3 + k4);
        }
        y
    }

    #[test]
    fn dt_must_divide_period() {
        assert_eq!(StepperConfig::with_dt(0.01).steps_per_period(1.0).unwrap(), 100);
        assert!(StepperConfig::with_dt(0.3).steps_per_period(1.0).is_err());
    }

    #[test]
    fn linear_mode_decays_exactly() {
        let g = CircleGrid::new(32).unwrap();
        let u0 = StateVector::from_fn(&g, f64::cos);
        let traj = evolve(&u0, &linear_decay(1.0), &StepperConfig::default(), 0.0, 1.0).unwrap();
        let expect = (-2.0f64).exp();
        for (i, x) in g.nodes().into_iter().enumerate() {
            assert!((traj.last().values()[i] - expect * x.cos()).abs() < 1e-6 * expect);
        }
        assert_eq!(traj.len(), 101);
    }

    #[test]
    fn zero_stays_zero() {
        let g = CircleGrid::new(16).unwrap();
        let zero = Nonlinearity::new(
            "zero",
            Arc::new(|_, _, _| 0.0),
            Arc::new(|_, _, _| 0.0),
            Arc::new(|_, _, _| 0.0),
            1.0,
            true,
        )
        .unwrap();
        let out = flow(&StateVector::zeros(&g), &zero, &StepperConfig::default(), 0.0, 1.0).unwrap();
        assert_eq!(out.sup_norm(), 0.0);
    }

    #[test]
    fn constant_state_follows_scalar_ode() {
        let g = CircleGrid::new(16).unwrap();
        let out = flow(&StateVector::constant(&g, 0.1), &chafee(1.0), &StepperConfig::default(), 0.0, 5.0)
            .unwrap();
        let oracle = rk4_scalar(|_, y| 2.0 * y - y * y * y, 0.1, 5.0, 20000);
        for v in out.values() {
            assert!((v - oracle).abs() < 1e-6);
        }
    }

    #[test]
    fn poincare_of_constant_under_decay() {
        let g = CircleGrid::new(16).unwrap();
        let p = poincare(&StateVector::constant(&g, 3.0), &linear_decay(0.5), &StepperConfig::default())
            .unwrap();
        assert!((p.mean() - 3.0 * (-0.5f64).exp()).abs() < 1e-10);
    }

    #[test]
    fn small_cosine_grows_by_linear_multiplier() {
        let g = CircleGrid::new(32).unwrap();
        let u0 = StateVector::from_fn(&g, |x| 1e-3 * x.cos());
        let p = poincare(&u0, &chafee(1.0), &StepperConfig::default()).unwrap();
        let amp = p.coeffs()[1].re * 2.0;
        assert!((amp / 1e-3 - 1f64.exp()).abs() < 1e-3 * 1f64.exp());
    }

    #[test]
    fn iterates_of_constant() {
        let g = CircleGrid::new(16).unwrap();
        let it = poincare_iterates(&StateVector::constant(&g, 1.0), &linear_decay(0.7), &StepperConfig::default(), 3)
            .unwrap();
        for (n, s) in it.iter().enumerate() {
            assert!((s.mean() - (-0.7 * n as f64).exp()).abs() < 1e-10);
        }
    }

    #[test]
    fn blowup_reports_iterate() {
        let g = CircleGrid::new(16).unwrap();
        let explode = Nonlinearity::new(
            "square",
            Arc::new(|_, y, _| y * y),
            Arc::new(|_, y, _| 2.0 * y),
            Arc::new(|_, _, _| 0.0),
            1.0,
            true,
        )
        .unwrap();
        let err = poincare_iterates(&StateVector::constant(&g, 0.4), &explode, &StepperConfig::default(), 5)
            .unwrap_err();
        assert!(matches!(err, Error::BlowUpAtIterate { iterate: 3, .. }), "{err:?}");
    }

    #[test]
    fn tangent_at_zero_is_mode_multiplier() {
        let g = CircleGrid::new(32).unwrap();
        let nl = chafee(1.0);
        let traj = evolve(&StateVector::zeros(&g), &nl, &StepperConfig::default(), 0.0, 1.0).unwrap();
        let v = tangent_evolve(&traj, &StateVector::from_fn(&g, f64::cos)).unwrap();
        let e = 1f64.exp();
        for (i, x) in g.nodes().into_iter().enumerate() {
            assert!((v.last().values()[i] - e * x.cos()).abs() < 1e-6 * e);
        }
        let zero = tangent_evolve(&traj, &StateVector::zeros(&g)).unwrap();
        assert_eq!(zero.last().sup_norm(), 0.0);
    }

    #[test]
    fn dp_apply_modes_at_zero() {
        let g = CircleGrid::new(32).unwrap();
        let nl = chafee(1.0);
        let cfg = StepperConfig::default();
        let z = StateVector::zeros(&g);
        let c = dp_apply(&z, &StateVector::constant(&g, 1.0), &nl, &cfg).unwrap();
        assert!((c.mean() - 2f64.exp()).abs() < 1e-8 * 2f64.exp());
        let v = dp_apply(&z, &StateVector::from_fn(&g, |x| (2.0 * x).cos()), &nl, &cfg).unwrap();
        let expect = (-2f64).exp();
        for (i, x) in g.nodes().into_iter().enumerate() {
            assert!((v.values()[i] - expect * (2.0 * x).cos()).abs() < 1e-8);
        }
    }

    #[test]
    fn dp_apply_matches_central_difference() {
        let g = CircleGrid::new(32).unwrap();
        let nl = Nonlinearity::new(
            "mixed",
            Arc::new(|t, y, z| y - y * y * y + 0.3 * z + 0.2 * (2.0 * PI * t).sin() * z * z),
            Arc::new(|_, y, _| 1.0 - 3.0 * y * y),
            Arc::new(|t, _, z| 0.3 + 0.4 * (2.0 * PI * t).sin() * z),
            1.0,
            false,
        )
        .unwrap();
        let cfg = StepperConfig::default();
        let u0 = StateVector::from_fn(&g, |x| 0.5 * x.sin() + 0.3 * (2.0 * x).cos() - 0.1);
        let v0 = StateVector::from_fn(&g, |x| x.cos() - 0.4 * (3.0 * x).sin() + 0.2);
        let dp = dp_apply(&u0, &v0, &nl, &cfg).unwrap();
        let eps = 1e-6;
        let plus = poincare(&u0.lin_comb(1.0, &v0, eps).unwrap(), &nl, &cfg).unwrap();
        let minus = poincare(&u0.lin_comb(1.0, &v0, -eps).unwrap(), &nl, &cfg).unwrap();
        let fd = plus.lin_comb(0.5 / eps, &minus, -0.5 / eps).unwrap();
        let err = fd.sub(&dp).unwrap().l2_norm() / dp.l2_norm();
        assert!(err < 1e-4, "relative error {err}");
    }

    #[test]
    fn temporal_order_at_least_two() {
        let g = CircleGrid::new(32).unwrap();
        let nl = chafee(1.0);
        let u0 = StateVector::from_fn(&g, |x| 0.8 * x.cos() + 0.3 * (2.0 * x).sin());
        for scheme in [Scheme::Etdrk4, Scheme::ImexBdf2] {
            let run = |dt: f64| {
                let cfg = StepperConfig { dt, scheme, ..StepperConfig::default() };
                flow(&u0, &nl, &cfg, 0.0, 1.0).unwrap()
            };
            let reference = run(0.1 / 8.0);
            let e1 = run(0.1).sub(&reference).unwrap().sup_norm();
            let e2 = run(0.05).sub(&reference).unwrap().sup_norm();
            assert!(e1 / e2 >= 3.5, "{scheme:?}: ratio {}", e1 / e2);
        }
    }
}
