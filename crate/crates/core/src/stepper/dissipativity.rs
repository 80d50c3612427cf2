//! Empirical audit of the absorbing-ball estimate
//! `‖u(t)‖_∞ ≤ δ + R e^{-ζ t}`.

use rayon::prelude::*;
use serde::Serialize;

use super::{evolve, Nonlinearity, StepperConfig};
use crate::error::{Error, Result};
use crate::grid::StateVector;

#[derive(Debug, Clone, Serialize)]
pub struct SeedEnvelope {
    pub times: Vec<f64>,
    pub sup_norms: Vec<f64>,
    /// Least-squares decay rate of `log(sup - δ)` over the window where the
    /// excess is above tolerance; `None` when the seed starts inside.
    pub fitted_rate: Option<f64>,
    /// Largest `ζ` for which `δ + R e^{-ζ t}` bounds every sample (within
    /// tolerance); infinite when the excess is gone after the first step.
    pub envelope_rate: Option<f64>,
    pub initial_excess: f64,
    pub bound_holds: bool,
    /// Sup-norm at the horizon is within `δ + tol`.
    pub settled: bool,
    pub failure: Option<String>,
}

#[derive(Debug, Clone, Serialize)]
pub struct DissipativityReport {
    pub delta: f64,
    /// Largest seed excess `max(‖u0‖_∞ - δ, 0)`.
    pub radius: f64,
    pub tolerance: f64,
    pub hypothesis_violations: Vec<String>,
    pub seeds: Vec<SeedEnvelope>,
    pub pass: bool,
}

fn audit_hypothesis(nl: &Nonlinearity, radius: f64) -> Vec<String> {
    let Some(d) = nl.dissipativity() else {
        return vec!["no dissipativity data".into()];
    };
    let mut out = Vec::new();
    let period = nl.period();
    let y_max = d.delta + radius + 1.0;
    'sign: for it in 0..16 {
        let t = period * it as f64 / 16.0;
        for iy in 0..=64 {
            let y = d.delta + (y_max - d.delta) * iy as f64 / 64.0;
            for s in [y, -y] {
                let v = s * nl.f(t, s, 0.0);
                if !(v < 0.0) {
                    out.push(format!("y f(t,y,0) = {v:e} is not negative at t = {t}, y = {s}"));
                    break 'sign;
                }
            }
        }
    }
    'growth: for ir in 1..=8 {
        let r = y_max * ir as f64 / 8.0;
        let eta = (d.eta_bound)(r);
        for it in 0..8 {
            let t = period * it as f64 / 8.0;
            for iy in 0..=16 {
                let y = -r + 2.0 * r * iy as f64 / 16.0;
                for iz in 0..=16 {
                    let z = -8.0 + iz as f64;
                    let lhs = nl.f(t, y, z).abs();
                    let rhs = eta * (1.0 + z.abs().powf(d.gamma));
                    if lhs > rhs * (1.0 + 1e-12) {
                        out.push(format!(
                            "growth bound fails at (t,y,z) = ({t}, {y}, {z}): |f| = {lhs} > {rhs}"
                        ));
                        break 'growth;
                    }
                }
            }
        }
    }
    out
}

/// Slope of the least-squares line through `(x, y)`.
fn ls_slope(x: &[f64], y: &[f64]) -> f64 {
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let sxy: f64 = x.iter().zip(y).map(|(a, b)| (a - mx) * (b - my)).sum();
    let sxx: f64 = x.iter().map(|a| (a - mx) * (a - mx)).sum();
    sxy / sxx
}

fn envelope(
    seed: &StateVector,
    nl: &Nonlinearity,
    cfg: &StepperConfig,
    delta: f64,
    horizon: f64,
    tol: f64,
) -> SeedEnvelope {
    let initial_excess = (seed.sup_norm() - delta).max(0.0);
    let traj = match evolve(seed, nl, cfg, 0.0, horizon) {
        Ok(t) => t,
        Err(e) => {
            return SeedEnvelope {
                times: Vec::new(),
                sup_norms: Vec::new(),
                fitted_rate: None,
                envelope_rate: None,
                initial_excess,
                bound_holds: false,
                settled: false,
                failure: Some(e.to_string()),
            }
        }
    };
    let sup_norms: Vec<f64> = traj.states.iter().map(|s| s.sup_norm()).collect();
    let times = traj.times;
    let (wx, wy): (Vec<f64>, Vec<f64>) = times
        .iter()
        .zip(&sup_norms)
        .take_while(|(_, s)| **s - delta > tol)
        .map(|(t, s)| (*t, (s - delta).ln()))
        .unzip();
    let fitted_rate = (wx.len() >= 3).then(|| -ls_slope(&wx, &wy));
    // largest ζ with sup(t) ≤ δ + R e^{-ζ t} + tol on every sample
    let envelope_rate = (initial_excess > tol).then(|| {
        times
            .iter()
            .zip(&sup_norms)
            .filter(|(t, s)| **t > 0.0 && **s - delta > tol)
            .map(|(t, s)| -((s - delta - tol) / initial_excess).ln() / t)
            .fold(f64::INFINITY, f64::min)
    });
    let bound_holds = match envelope_rate {
        Some(z) => z > 0.0 && fitted_rate.map_or(true, |f| f > 0.0),
        None => sup_norms.iter().all(|s| *s <= delta + tol),
    };
    let settled = sup_norms.last().is_some_and(|s| *s <= delta + tol);
    SeedEnvelope {
        times,
        sup_norms,
        fitted_rate,
        envelope_rate,
        initial_excess,
        bound_holds,
        settled,
        failure: None,
    }
}

/// Runs every seed to `horizon` and checks the decaying envelope against the
/// declared `δ`.
pub fn check_dissipativity(
    nl: &Nonlinearity,
    cfg: &StepperConfig,
    seeds: &[StateVector],
    horizon: f64,
    tol: f64,
) -> Result<DissipativityReport> {
    let d = nl.dissipativity().ok_or_else(|| {
        Error::PreconditionFailed(format!("nonlinearity '{}' has no dissipativity data", nl.name))
    })?;
    if !(horizon > 0.0) || !(tol > 0.0) {
        return Err(Error::InvalidArgument("horizon and tolerance must be positive".into()));
    }
    let delta = d.delta;
    let radius = seeds
        .iter()
        .map(|s| (s.sup_norm() - delta).max(0.0))
        .fold(0.0, f64::max);
    let hypothesis_violations = audit_hypothesis(nl, radius);
    let envelopes: Vec<SeedEnvelope> = seeds
        .par_iter()
        .map(|s| envelope(s, nl, cfg, delta, horizon, tol))
        .collect();
    let pass = hypothesis_violations.is_empty()
        && envelopes
            .iter()
            .all(|e| e.failure.is_none() && e.bound_holds && e.settled);
    Ok(DissipativityReport {
        delta,
        radius,
        tolerance: tol,
        hypothesis_violations,
        seeds: envelopes,
        pass,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::CircleGrid;
    use crate::stepper::Dissipativity;
    use std::sync::Arc;

    fn cubic(delta: f64) -> Nonlinearity {
        Nonlinearity::new(
            "cubic",
            Arc::new(|_, y, _| -y * y * y),
            Arc::new(|_, y, _| -3.0 * y * y),
            Arc::new(|_, _, _| 0.0),
            1.0,
            true,
        )
        .unwrap()
        .with_dissipativity(Dissipativity {
            gamma: 0.0,
            eta_bound: Arc::new(|r| r * r * r),
            delta,
        })
        .unwrap()
    }

    #[test]
    fn odd_seeds_settle_below_delta() {
        let g = CircleGrid::new(32).unwrap();
        let seeds: Vec<_> = [1.0, -2.0, 3.0]
            .iter()
            .map(|&a| StateVector::from_fn(&g, |x| a * x.sin() + 0.5 * a * (2.0 * x).sin()))
            .map(|s| {
                let m = s.sup_norm();
                s.scaled(3.0 / m)
            })
            .collect();
        let rep = check_dissipativity(&cubic(0.1), &StepperConfig::default(), &seeds, 20.0, 0.01).unwrap();
        assert!(rep.hypothesis_violations.is_empty());
        assert!(rep.pass, "{:?}", rep.seeds.iter().map(|s| (s.fitted_rate, s.bound_holds, s.settled)).collect::<Vec<_>>());
        assert!(rep.seeds.iter().all(|s| s.fitted_rate.unwrap() > 0.0));
        assert!(rep.seeds.iter().all(|s| s.envelope_rate.unwrap() > 0.0));
    }

    #[test]
    fn seed_inside_stays_inside() {
        let g = CircleGrid::new(16).unwrap();
        let s = StateVector::from_fn(&g, |x| 0.05 * x.cos());
        let rep = check_dissipativity(&cubic(0.1), &StepperConfig::default(), &[s], 5.0, 1e-6).unwrap();
        assert!(rep.pass);
        assert!(rep.seeds[0].fitted_rate.is_none());
    }

    #[test]
    fn growing_reaction_violates_hypothesis() {
        let g = CircleGrid::new(16).unwrap();
        let nl = Nonlinearity::new(
            "growth",
            Arc::new(|_, y, _| y),
            Arc::new(|_, _, _| 1.0),
            Arc::new(|_, _, _| 0.0),
            1.0,
            true,
        )
        .unwrap()
        .with_dissipativity(Dissipativity {
            gamma: 0.0,
            eta_bound: Arc::new(|r| r),
            delta: 0.5,
        })
        .unwrap();
        let s = StateVector::constant(&g, 0.2);
        let rep = check_dissipativity(&nl, &StepperConfig::default(), &[s], 1.0, 1e-3).unwrap();
        assert!(!rep.hypothesis_violations.is_empty());
        assert!(!rep.pass);
    }

    #[test]
    fn missing_data_is_precondition_failure() {
        let g = CircleGrid::new(16).unwrap();
        let nl = Nonlinearity::new(
            "plain",
            Arc::new(|_, y, _| -y),
            Arc::new(|_, _, _| -1.0),
            Arc::new(|_, _, _| 0.0),
            1.0,
            true,
        )
        .unwrap();
        let err = check_dissipativity(&nl, &StepperConfig::default(), &[StateVector::zeros(&g)], 1.0, 1e-3);
        assert!(matches!(err, Err(Error::PreconditionFailed(_))));
    }
}
