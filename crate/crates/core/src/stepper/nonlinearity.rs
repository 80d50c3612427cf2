use std::fmt;
use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};

pub type ReactionFn = Arc<dyn Fn(f64, f64, f64) -> f64 + Send + Sync>;
pub type BoundFn = Arc<dyn Fn(f64) -> f64 + Send + Sync>;

/// Growth and sign data for the dissipativity hypothesis:
/// `|f(t,y,z)| <= η(r)(1+|z|^γ)` on `|y| <= r`, and `y f(t,y,0) < 0` for `|y| >= δ`.
#[derive(Clone)]
pub struct Dissipativity {
    pub gamma: f64,
    pub eta_bound: BoundFn,
    pub delta: f64,
}

impl fmt::Debug for Dissipativity {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Dissipativity")
            .field("gamma", &self.gamma)
            .field("delta", &self.delta)
            .finish()
    }
}

/// Reaction term `f(t, u, u_x)` together with its partials in `u` and `u_x`.
#[derive(Clone)]
pub struct Nonlinearity {
    pub name: String,
    f: ReactionFn,
    df_dy: ReactionFn,
    df_dz: ReactionFn,
    period: f64,
    symmetric_in_z: bool,
    dissipativity: Option<Dissipativity>,
}

impl fmt::Debug for Nonlinearity {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Nonlinearity")
            .field("name", &self.name)
            .field("period", &self.period)
            .field("symmetric_in_z", &self.symmetric_in_z)
            .field("dissipativity", &self.dissipativity)
            .finish()
    }
}

const SAMPLE_SEED: u64 = 0x5eed_f00d;
const N_SAMPLES: usize = 64;

impl Nonlinearity {
    /// Validates periodicity, the declared z-symmetry and the partials against
    /// central differences on deterministic random samples.
    pub fn new(
        name: impl Into<String>,
        f: ReactionFn,
        df_dy: ReactionFn,
        df_dz: ReactionFn,
        period: f64,
        symmetric_in_z: bool,
    ) -> Result<Self> {
        if !(period > 0.0 && period.is_finite()) {
            return Err(Error::InvalidArgument(format!("period must be positive, got {period}")));
        }
        let nl = Self {
            name: name.into(),
            f,
            df_dy,
            df_dz,
            period,
            symmetric_in_z,
            dissipativity: None,
        };
        nl.validate()?;
        Ok(nl)
    }

    pub fn with_dissipativity(mut self, d: Dissipativity) -> Result<Self> {
        if !(0.0..2.0).contains(&d.gamma) || d.delta <= 0.0 {
            return Err(Error::InvalidArgument(
                "dissipativity needs gamma in [0,2) and delta > 0".into(),
            ));
        }
        self.dissipativity = Some(d);
        Ok(self)
    }

    fn validate(&self) -> Result<()> {
        let mut rng = ChaCha8Rng::seed_from_u64(SAMPLE_SEED);
        for _ in 0..N_SAMPLES {
            let t = rng.gen_range(0.0..self.period);
            let y = rng.gen_range(-2.0..2.0);
            let z = rng.gen_range(-2.0..2.0);
            let v = self.f(t, y, z);
            if !v.is_finite() {
                return Err(Error::InvalidArgument(format!(
                    "f is not finite at ({t}, {y}, {z})"
                )));
            }
            let shifted = self.f(t + self.period, y, z);
            if (shifted - v).abs() > 1e-12 * (1.0 + v.abs()) {
                return Err(Error::InvalidArgument(format!(
                    "f is not {}-periodic in t: f({t})={v}, f(t+T)={shifted}",
                    self.period
                )));
            }
            if self.symmetric_in_z {
                let mirrored = self.f(t, y, -z);
                if (mirrored - v).abs() > 1e-12 * (1.0 + v.abs()) {
                    return Err(Error::InvalidArgument(
                        "f declared symmetric in u_x but f(t,y,-z) != f(t,y,z)".into(),
                    ));
                }
            }
            let h = 1e-5;
            let fd_y = (self.f(t, y + h, z) - self.f(t, y - h, z)) / (2.0 * h);
            let fd_z = (self.f(t, y, z + h) - self.f(t, y, z - h)) / (2.0 * h);
            let dy = self.df_dy(t, y, z);
            let dz = self.df_dz(t, y, z);
            if (fd_y - dy).abs() > 1e-6 * (1.0 + dy.abs()) {
                return Err(Error::InvalidArgument(format!(
                    "df/du mismatch at ({t},{y},{z}): analytic {dy}, finite difference {fd_y}"
                )));
            }
            if (fd_z - dz).abs() > 1e-6 * (1.0 + dz.abs()) {
                return Err(Error::InvalidArgument(format!(
                    "df/du_x mismatch at ({t},{y},{z}): analytic {dz}, finite difference {fd_z}"
                )));
            }
        }
        Ok(())
    }

    #[inline]
    pub fn f(&self, t: f64, y: f64, z: f64) -> f64 {
        (self.f)(t, y, z)
    }

    #[inline]
    pub fn df_dy(&self, t: f64, y: f64, z: f64) -> f64 {
        (self.df_dy)(t, y, z)
    }

    #[inline]
    pub fn df_dz(&self, t: f64, y: f64, z: f64) -> f64 {
        (self.df_dz)(t, y, z)
    }

    pub fn period(&self) -> f64 {
        self.period
    }

    pub fn symmetric_in_z(&self) -> bool {
        self.symmetric_in_z
    }

    pub fn dissipativity(&self) -> Option<&Dissipativity> {
        self.dissipativity.as_ref()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn chafee() -> Result<Nonlinearity> {
        Nonlinearity::new(
            "chafee",
            Arc::new(|_, y, _| 2.0 * y - y * y * y),
            Arc::new(|_, y, _| 2.0 - 3.0 * y * y),
            Arc::new(|_, _, _| 0.0),
            1.0,
            true,
        )
    }

    #[test]
    fn accepts_consistent_partials() {
        assert!(chafee().is_ok());
    }

    #[test]
    fn rejects_wrong_partial() {
        let bad = Nonlinearity::new(
            "bad",
            Arc::new(|_, y, _| y * y),
            Arc::new(|_, y, _| y),
            Arc::new(|_, _, _| 0.0),
            1.0,
            true,
        );
        assert!(bad.is_err());
    }

    #[test]
    fn rejects_non_periodic_forcing() {
        let bad = Nonlinearity::new(
            "drift",
            Arc::new(|t, y, _| t - y),
            Arc::new(|_, _, _| -1.0),
            Arc::new(|_, _, _| 0.0),
            1.0,
            true,
        );
        assert!(bad.is_err());
    }

    #[test]
    fn rejects_false_symmetry_claim() {
        let bad = Nonlinearity::new(
            "advect",
            Arc::new(|_, y, z| y + z),
            Arc::new(|_, _, _| 1.0),
            Arc::new(|_, _, _| 1.0),
            1.0,
            true,
        );
        assert!(bad.is_err());
    }
}
