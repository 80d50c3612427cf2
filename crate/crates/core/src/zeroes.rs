//! Zero number on the circle: sign changes of the trigonometric interpolant,
//! histories along linear flows and their drop intervals.

use serde::Serialize;

use crate::error::{Error, Result};
use crate::grid::{Interpolant, StateVector};
use crate::stepper::TrajectorySegment;

/// Relative tolerance used when none is specified.
pub const DEFAULT_ZERO_TOL: f64 = 1e-9;
/// Sup-norm below which a function has no meaningful zero number.
pub const DEGENERATE_SUP: f64 = 1e-13;
const BISECTION_STEPS: usize = 60;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ZeroCount {
    pub count: usize,
    pub all_simple: bool,
    /// Smallest `|φ'|` over located zeros, `None` without zeros.
    pub min_slope_at_zero: Option<f64>,
    /// Absolute threshold `tol · ‖φ‖_∞` used for indeterminacy and simplicity.
    pub tolerance_used: f64,
    /// Refined sample points whose magnitude fell below the threshold.
    pub indeterminate_points: usize,
}

impl ZeroCount {
    /// Near a tolerance collision: some zero is not simple or some sample is
    /// indeterminate.
    pub fn is_flagged(&self) -> bool {
        !self.all_simple || self.indeterminate_points > 0
    }
}

fn bisect(interp: &Interpolant, mut a: f64, mut b: f64, fa: f64) -> f64 {
    let sa = fa.signum();
    for _ in 0..BISECTION_STEPS {
        let m = 0.5 * (a + b);
        let fm = interp.value(m);
        if fm == 0.0 {
            return m;
        }
        if fm.signum() == sa {
            a = m;
        } else {
            b = m;
        }
    }
    0.5 * (a + b)
}

fn critical_point(interp: &Interpolant, mut a: f64, mut b: f64, da: f64) -> f64 {
    let sa = da.signum();
    for _ in 0..BISECTION_STEPS {
        let m = 0.5 * (a + b);
        if interp.derivative(m).signum() == sa {
            a = m;
        } else {
            b = m;
        }
    }
    0.5 * (a + b)
}

/// Counts sign changes of the interpolant around the circle. `tol` is
/// relative to the sup-norm.
pub fn zero_count(s: &StateVector, tol: f64) -> Result<ZeroCount> {
    if !(tol > 0.0) {
        return Err(Error::InvalidArgument(format!("tolerance must be positive, got {tol}")));
    }
    s.check_finite()?;
    let sup = s.sup_norm();
    if sup < DEGENERATE_SUP {
        return Err(Error::DegenerateFunction { sup_norm: sup });
    }
    let threshold = tol * sup;
    let n = s.grid().n_points();
    let m = (4 * n).max(256);
    let fine = s.refine(m)?;
    let h = fine.grid().spacing();
    let interp = Interpolant::new(s);
    let determinate: Vec<(usize, f64)> = fine
        .values()
        .iter()
        .copied()
        .enumerate()
        .filter(|(_, v)| v.abs() > threshold)
        .collect();
    let slopes = s.spectral_derivative(1)?.refine(m)?;
    let slopes = slopes.values();
    let mut indeterminate_points = m - determinate.len();
    let mut count = 0;
    let mut min_slope: Option<f64> = None;
    let mut record = |x0: f64| {
        let slope = interp.derivative(x0).abs();
        min_slope = Some(min_slope.map_or(slope, |m: f64| m.min(slope)));
    };
    let len = determinate.len();
    for j in 0..len {
        let (ia, va) = determinate[j];
        let (ib, vb) = determinate[(j + 1) % len];
        let xa = ia as f64 * h;
        let mut xb = ib as f64 * h;
        if ib <= ia {
            xb += std::f64::consts::TAU;
        }
        if va.signum() != vb.signum() {
            count += 1;
            record(bisect(&interp, xa, xb, va));
            continue;
        }
        // a pair of zeros closer than the sample spacing: the interpolant
        // turns back towards zero inside the interval and crosses it
        if (ib + m - ia) % m != 1 || va * slopes[ia] >= 0.0 || va * slopes[ib] <= 0.0 {
            continue;
        }
        let xc = critical_point(&interp, xa, xb, slopes[ia]);
        let vc = interp.value(xc);
        if vc.abs() <= threshold {
            indeterminate_points += 1;
        } else if vc.signum() != va.signum() {
            count += 2;
            record(bisect(&interp, xa, xc, va));
            record(bisect(&interp, xc, xb, vc));
        }
    }
    Ok(ZeroCount {
        count,
        all_simple: min_slope.map_or(true, |m| m > threshold),
        min_slope_at_zero: min_slope,
        tolerance_used: threshold,
        indeterminate_points,
    })
}

#[derive(Debug, Clone, Serialize)]
pub struct ZeroSample {
    pub time: f64,
    pub zeros: ZeroCount,
}

#[derive(Debug, Clone, Serialize)]
pub struct ZeroHistory {
    pub samples: Vec<ZeroSample>,
    pub monotone_ok: bool,
    /// Indices `i` where the count increases from sample `i-1` to `i` and
    /// neither sample is flagged.
    pub unexplained_increases: Vec<usize>,
}

impl ZeroHistory {
    pub fn from_samples(samples: Vec<ZeroSample>) -> Self {
        let mut monotone_ok = true;
        let mut unexplained_increases = Vec::new();
        for i in 1..samples.len() {
            let (prev, cur) = (&samples[i - 1].zeros, &samples[i].zeros);
            if cur.count > prev.count {
                monotone_ok = false;
                if !prev.is_flagged() && !cur.is_flagged() {
                    unexplained_increases.push(i);
                }
            }
        }
        Self {
            samples,
            monotone_ok,
            unexplained_increases,
        }
    }
}

/// Zero counts of a linear trajectory at spacing `sample_dt` from its start.
pub fn zero_history(traj: &TrajectorySegment, sample_dt: f64, tol: f64) -> Result<ZeroHistory> {
    if !(sample_dt > 0.0) {
        return Err(Error::InvalidArgument("sample spacing must be positive".into()));
    }
    if traj.is_empty() {
        return Err(Error::InvalidArgument("empty trajectory".into()));
    }
    let t0 = traj.t_start();
    let n_samples = ((traj.t_end() - t0) / sample_dt + 1e-9).floor() as usize;
    let mut samples = Vec::with_capacity(n_samples + 1);
    let mut cursor = 0;
    for k in 0..=n_samples {
        let target = t0 + k as f64 * sample_dt;
        while cursor + 1 < traj.len()
            && (traj.times[cursor + 1] - target).abs() <= (traj.times[cursor] - target).abs()
        {
            cursor += 1;
        }
        let time = traj.times[cursor];
        let zeros = zero_count(&traj.states[cursor], tol).map_err(|e| match e {
            Error::DegenerateFunction { .. } => Error::DegenerateSample { time },
            other => other,
        })?;
        samples.push(ZeroSample { time, zeros });
    }
    Ok(ZeroHistory::from_samples(samples))
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DropSummary {
    /// Sample intervals `(t_prev, t_next]` over which the count decreased.
    pub drops: Vec<(f64, f64)>,
    pub plateau: Option<usize>,
    /// First sample time after which every sample has only simple zeros.
    pub simple_from: Option<f64>,
}

pub fn dropping_times(history: &ZeroHistory) -> DropSummary {
    let s = &history.samples;
    let drops = s
        .windows(2)
        .filter(|w| w[1].zeros.count < w[0].zeros.count)
        .map(|w| (w[0].time, w[1].time))
        .collect();
    let simple_from = s
        .iter()
        .rposition(|x| !x.zeros.all_simple)
        .map_or_else(|| s.first().map(|x| x.time), |i| s.get(i + 1).map(|x| x.time));
    DropSummary {
        drops,
        plateau: s.last().map(|x| x.zeros.count),
        simple_from,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::CircleGrid;

    fn g(n: usize) -> CircleGrid {
        CircleGrid::new(n).unwrap()
    }

    #[test]
    fn cos2x_has_four_simple_zeros() {
        let z = zero_count(&StateVector::from_fn(&g(32), |x| (2.0 * x).cos()), 1e-9).unwrap();
        assert_eq!(z.count, 4);
        assert!(z.all_simple);
        assert!((z.min_slope_at_zero.unwrap() - 2.0).abs() < 1e-9);
    }

    #[test]
    fn positive_function_has_none() {
        let z = zero_count(&StateVector::from_fn(&g(32), |x| 1.0 + 0.5 * x.cos()), 1e-9).unwrap();
        assert_eq!(z.count, 0);
        assert!(z.all_simple);
    }

    #[test]
    fn zero_pair_between_samples_is_found() {
        let h = std::f64::consts::TAU / 256.0;
        let u = StateVector::from_fn(&g(64), |x| (x - h / 2.0).cos() - 0.01f64.cos());
        let z = zero_count(&u, 1e-9).unwrap();
        assert_eq!(z.count, 2);
        assert!(z.all_simple);
        assert_eq!(zero_count(&u.refine(1024).unwrap(), 1e-9).unwrap().count, 2);
    }

    #[test]
    fn shifted_sine_has_six() {
        let z = zero_count(&StateVector::from_fn(&g(64), |x| (3.0 * x).sin() + 0.1), 1e-9).unwrap();
        assert_eq!(z.count, 6);
        assert!(z.all_simple);
    }

    #[test]
    fn zero_function_is_degenerate() {
        let e = zero_count(&StateVector::zeros(&g(16)), 1e-9).unwrap_err();
        assert!(matches!(e, Error::DegenerateFunction { .. }));
    }

    #[test]
    fn tangential_touch_counts_nothing() {
        let z = zero_count(&StateVector::from_fn(&g(32), |x| 1.0 - x.cos()), 1e-9).unwrap();
        assert_eq!(z.count, 0);
    }

    #[test]
    fn drop_summary_of_listed_history() {
        let samples = [6, 6, 2, 2, 2]
            .iter()
            .enumerate()
            .map(|(i, &c)| ZeroSample {
                time: i as f64,
                zeros: ZeroCount {
                    count: c,
                    all_simple: true,
                    min_slope_at_zero: Some(1.0),
                    tolerance_used: 1e-9,
                    indeterminate_points: 0,
                },
            })
            .collect();
        let h = ZeroHistory::from_samples(samples);
        assert!(h.monotone_ok);
        let d = dropping_times(&h);
        assert_eq!(d.drops, vec![(1.0, 2.0)]);
        assert_eq!(d.plateau, Some(2));
        assert_eq!(d.simple_from, Some(0.0));
    }

    #[test]
    fn constant_history_has_no_drops() {
        let samples = (0..4)
            .map(|i| ZeroSample {
                time: i as f64,
                zeros: ZeroCount {
                    count: 2,
                    all_simple: true,
                    min_slope_at_zero: Some(1.0),
                    tolerance_used: 1e-9,
                    indeterminate_points: 0,
                },
            })
            .collect();
        assert!(dropping_times(&ZeroHistory::from_samples(samples)).drops.is_empty());
    }
}
