//! Scenario files, the shipped catalog and their resolution into solver
//! objects.

use std::path::Path;
use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rdlab::expr::{parse, parse_nonlinearity};
use rdlab::stepper::{Dissipativity, Nonlinearity, Scheme, StepperConfig};
use rdlab::{CircleGrid, StateVector};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{CliError, CliResult};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum AuditId {
    FloquetOracle,
    LadderRigidity,
    ZeroMonotonicity,
    Census,
    Connections,
    ZeroBounds,
    Transversality,
    OmegaCensus,
    MorseSmale,
    Filtration,
    RecursionSuite,
    Dissipativity,
}

impl AuditId {
    pub const ALL: [AuditId; 12] = [
        Self::FloquetOracle,
        Self::LadderRigidity,
        Self::ZeroMonotonicity,
        Self::Census,
        Self::Connections,
        Self::ZeroBounds,
        Self::Transversality,
        Self::OmegaCensus,
        Self::MorseSmale,
        Self::Filtration,
        Self::RecursionSuite,
        Self::Dissipativity,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Self::FloquetOracle => "floquet-oracle",
            Self::LadderRigidity => "ladder-rigidity",
            Self::ZeroMonotonicity => "zero-monotonicity",
            Self::Census => "census",
            Self::Connections => "connections",
            Self::ZeroBounds => "zero-bounds",
            Self::Transversality => "transversality",
            Self::OmegaCensus => "omega-census",
            Self::MorseSmale => "morse-smale",
            Self::Filtration => "filtration",
            Self::RecursionSuite => "recursion-suite",
            Self::Dissipativity => "dissipativity",
        }
    }

    /// Audits that need a nonlinearity.
    pub fn needs_nonlinearity(self) -> bool {
        !matches!(self, Self::Filtration | Self::RecursionSuite)
    }
}

/// One entry of the audit plan. Unset knobs take per-audit defaults.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AuditSpec {
    pub id: AuditId,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub tol: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub samples: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub horizon: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub expected: Option<usize>,
}

impl AuditSpec {
    pub fn new(id: AuditId) -> Self {
        Self {
            id,
            tol: None,
            samples: None,
            horizon: None,
            expected: None,
        }
    }

    fn tol(mut self, v: f64) -> Self {
        self.tol = Some(v);
        self
    }

    fn samples(mut self, v: usize) -> Self {
        self.samples = Some(v);
        self
    }

    fn horizon(mut self, v: f64) -> Self {
        self.horizon = Some(v);
        self
    }

    fn expected(mut self, v: usize) -> Self {
        self.expected = Some(v);
        self
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridSection {
    pub points: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StepperSection {
    pub dt: f64,
    #[serde(default)]
    pub scheme: Scheme,
}

impl Default for StepperSection {
    fn default() -> Self {
        Self {
            dt: 0.01,
            scheme: Scheme::Etdrk4,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum AmplitudeLaw {
    /// Every seed has sup-norm equal to `amplitude`.
    Fixed,
    /// Sup-norm uniform in `(0, amplitude]`.
    #[default]
    Uniform,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SeedSection {
    pub rng_seed: u64,
    #[serde(default)]
    pub count: usize,
    #[serde(default = "default_amplitude")]
    pub amplitude: f64,
    #[serde(default)]
    pub law: AmplitudeLaw,
    /// Highest Fourier mode in a random seed.
    #[serde(default = "default_modes")]
    pub modes: usize,
    /// Constant initial guesses for the fixed-point census.
    #[serde(default)]
    pub census: Vec<f64>,
}

fn default_amplitude() -> f64 {
    1.0
}

fn default_modes() -> usize {
    4
}

impl Default for SeedSection {
    fn default() -> Self {
        Self {
            rng_seed: 1,
            count: 0,
            amplitude: 1.0,
            law: AmplitudeLaw::Uniform,
            modes: 4,
            census: Vec::new(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DissipativitySection {
    pub gamma: f64,
    pub delta: f64,
    /// Growth bound `η(r)` written as an expression in `u`.
    pub eta: String,
}

/// Scenario file contents.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioConfig {
    pub name: String,
    /// Expression for `f(t, u, p)` with `p = u_x`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub nonlinearity: Option<String>,
    #[serde(default = "default_period")]
    pub period: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub dissipativity: Option<DissipativitySection>,
    pub grid: GridSection,
    #[serde(default)]
    pub stepper: StepperSection,
    #[serde(default)]
    pub seeds: SeedSection,
    #[serde(default)]
    pub audits: Vec<AuditSpec>,
}

fn default_period() -> f64 {
    1.0
}

impl ScenarioConfig {
    pub fn from_toml(src: &str) -> CliResult<Self> {
        Ok(toml::from_str(src)?)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("scenario config serializes")
    }

    /// Hex SHA-256 of the canonical JSON form.
    pub fn digest(&self) -> String {
        let canon = serde_json::to_vec(self).expect("scenario config serializes");
        hex::encode(Sha256::digest(&canon))
    }
}

/// A validated scenario with its solver objects built.
#[derive(Debug, Clone)]
pub struct Scenario {
    pub config: ScenarioConfig,
    pub nonlinearity: Option<Nonlinearity>,
    pub grid: CircleGrid,
    pub stepper: StepperConfig,
}

impl Scenario {
    pub fn from_config(config: ScenarioConfig) -> CliResult<Self> {
        let mut seen = std::collections::BTreeSet::new();
        for a in &config.audits {
            if !seen.insert(a.id) {
                return Err(CliError::InvalidScenario(format!("audit '{}' listed twice", a.id.name())));
            }
        }
        let grid = CircleGrid::new(config.grid.points)?;
        let stepper = StepperConfig {
            dt: config.stepper.dt,
            scheme: config.stepper.scheme,
            ..StepperConfig::default()
        };
        let nonlinearity = match &config.nonlinearity {
            Some(src) => {
                stepper.steps_per_period(config.period)?;
                let mut nl = parse_nonlinearity(src, config.period)?;
                nl.name = config.name.clone();
                if let Some(d) = &config.dissipativity {
                    let eta = Arc::new(parse(&d.eta, config.period)?);
                    nl = nl.with_dissipativity(Dissipativity {
                        gamma: d.gamma,
                        eta_bound: Arc::new(move |r| eta.eval(0.0, r, 0.0)),
                        delta: d.delta,
                    })?;
                }
                Some(nl)
            }
            None => {
                if config.dissipativity.is_some() {
                    return Err(CliError::InvalidScenario("dissipativity data without a nonlinearity".into()));
                }
                None
            }
        };
        if nonlinearity.is_none() {
            if let Some(a) = config.audits.iter().find(|a| a.id.needs_nonlinearity()) {
                return Err(CliError::InvalidScenario(format!(
                    "audit '{}' needs a nonlinearity",
                    a.id.name()
                )));
            }
        }
        if config.audits.iter().any(|a| a.id == AuditId::Dissipativity) && config.dissipativity.is_none() {
            return Err(CliError::InvalidScenario("dissipativity audit needs a [dissipativity] table".into()));
        }
        Ok(Self {
            config,
            nonlinearity,
            grid,
            stepper,
        })
    }

    /// Catalog name or path to a TOML file.
    pub fn load(arg: &str) -> CliResult<Self> {
        if let Some(cfg) = catalog(arg) {
            return Self::from_config(cfg);
        }
        let path = Path::new(arg);
        if path.exists() {
            let src = std::fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
            return Self::from_config(ScenarioConfig::from_toml(&src)?);
        }
        Err(CliError::UnknownScenario {
            name: arg.into(),
            available: CATALOG.join(", "),
        })
    }

    /// Rebuilds with a new RNG seed and/or resolution.
    pub fn with_overrides(self, seed: Option<u64>, resolution: Option<usize>) -> CliResult<Self> {
        if seed.is_none() && resolution.is_none() {
            return Ok(self);
        }
        let mut cfg = self.config;
        if let Some(s) = seed {
            cfg.seeds.rng_seed = s;
        }
        if let Some(n) = resolution {
            cfg.grid.points = n;
        }
        Self::from_config(cfg)
    }

    pub fn nl(&self) -> CliResult<&Nonlinearity> {
        self.nonlinearity
            .as_ref()
            .ok_or_else(|| CliError::InvalidScenario(format!("scenario '{}' has no nonlinearity", self.config.name)))
    }

    pub fn period(&self) -> f64 {
        self.config.period
    }

    pub fn census_seeds(&self) -> Vec<StateVector> {
        self.config
            .seeds
            .census
            .iter()
            .map(|c| StateVector::constant(&self.grid, *c))
            .collect()
    }

    /// `count` random trigonometric polynomials drawn from a stream keyed by
    /// the scenario seed and `stream`.
    pub fn random_seeds(&self, count: usize, stream: u64) -> Vec<StateVector> {
        let s = &self.config.seeds;
        let mut rng = ChaCha8Rng::seed_from_u64(s.rng_seed);
        rng.set_stream(stream);
        (0..count)
            .map(|_| random_profile(&self.grid, s.modes, s.amplitude, s.law, &mut rng))
            .collect()
    }

    pub fn rng(&self, stream: u64) -> ChaCha8Rng {
        let mut rng = ChaCha8Rng::seed_from_u64(self.config.seeds.rng_seed);
        rng.set_stream(stream);
        rng
    }
}

/// Random trigonometric polynomial of degree `modes` with decaying
/// coefficients, rescaled to the drawn sup-norm.
pub fn random_profile(grid: &CircleGrid, modes: usize, amplitude: f64, law: AmplitudeLaw, rng: &mut ChaCha8Rng) -> StateVector {
    let coeffs: Vec<(f64, f64)> = (0..=modes)
        .map(|k| {
            let w = 1.0 / (1.0 + k as f64);
            (w * rng.gen_range(-1.0..1.0), w * rng.gen_range(-1.0..1.0))
        })
        .collect();
    let raw = StateVector::from_fn(grid, |x| {
        coeffs
            .iter()
            .enumerate()
            .map(|(k, (a, b))| {
                let kx = k as f64 * x;
                if k == 0 {
                    *a
                } else {
                    a * kx.cos() + b * kx.sin()
                }
            })
            .sum()
    });
    let target = match law {
        AmplitudeLaw::Fixed => amplitude,
        AmplitudeLaw::Uniform => amplitude * (1.0 - rng.gen::<f64>()),
    };
    let sup = raw.sup_norm();
    if sup > 0.0 {
        raw.scaled(target / sup)
    } else {
        raw
    }
}

pub const CATALOG: [&str; 6] = ["heat", "chafee2", "forced-chafee", "gradient-free", "dissipativity", "recursion-suite"];

const CENSUS_CONSTANTS: [f64; 7] = [-3.0, -1.4, -0.5, 0.0, 0.5, 1.4, 3.0];

fn base(name: &str, f: Option<&str>, period: f64, points: usize) -> ScenarioConfig {
    ScenarioConfig {
        name: name.into(),
        nonlinearity: f.map(String::from),
        period,
        dissipativity: None,
        grid: GridSection { points },
        stepper: StepperSection::default(),
        seeds: SeedSection::default(),
        audits: Vec::new(),
    }
}

/// Shipped scenario by name.
pub fn catalog(name: &str) -> Option<ScenarioConfig> {
    use AuditId::*;
    let cfg = match name {
        "heat" => {
            let mut c = base("heat", Some("0"), 0.5, 128);
            c.seeds.census = vec![0.0];
            c.audits = vec![AuditSpec::new(FloquetOracle).tol(1e-6), AuditSpec::new(LadderRigidity)];
            c
        }
        "chafee2" => {
            let mut c = base("chafee2", Some("2*u - u^3"), 1.0, 64);
            c.seeds = SeedSection {
                rng_seed: 2024,
                count: 64,
                amplitude: 3.0,
                law: AmplitudeLaw::Uniform,
                modes: 4,
                census: CENSUS_CONSTANTS.to_vec(),
            };
            c.audits = vec![
                AuditSpec::new(Census).expected(3),
                AuditSpec::new(FloquetOracle).tol(1e-4),
                AuditSpec::new(LadderRigidity),
                AuditSpec::new(ZeroMonotonicity).samples(500),
                AuditSpec::new(Connections),
                AuditSpec::new(ZeroBounds),
                AuditSpec::new(Transversality).samples(200),
                AuditSpec::new(OmegaCensus).tol(1e-6),
                AuditSpec::new(MorseSmale),
            ];
            c
        }
        "forced-chafee" => {
            let mut c = base("forced-chafee", Some("(2 + 0.5*cos(2*pi*t/T))*u - u^3"), 1.0, 64);
            c.seeds = SeedSection {
                rng_seed: 7,
                count: 32,
                amplitude: 3.0,
                law: AmplitudeLaw::Uniform,
                modes: 4,
                census: CENSUS_CONSTANTS.to_vec(),
            };
            c.audits = vec![
                AuditSpec::new(Census).expected(3),
                AuditSpec::new(FloquetOracle).tol(1e-4),
                AuditSpec::new(LadderRigidity),
                AuditSpec::new(ZeroMonotonicity).samples(500),
                AuditSpec::new(Connections),
                AuditSpec::new(ZeroBounds),
                AuditSpec::new(Filtration).tol(1e-3),
            ];
            c
        }
        "gradient-free" => {
            let mut c = base("gradient-free", Some("u - u^3 + 0.1*p"), 1.0, 64);
            c.seeds.census = CENSUS_CONSTANTS.to_vec();
            c.audits = vec![AuditSpec::new(Census)];
            c
        }
        "dissipativity" => {
            let mut c = base("dissipativity", Some("-u^3 + 0.2*cos(2*pi*t/T)"), 1.0, 64);
            c.dissipativity = Some(DissipativitySection {
                gamma: 0.0,
                delta: 0.6,
                eta: "u^3 + 0.2".into(),
            });
            c.seeds = SeedSection {
                rng_seed: 11,
                count: 50,
                amplitude: 5.0,
                law: AmplitudeLaw::Uniform,
                modes: 4,
                census: Vec::new(),
            };
            c.audits = vec![AuditSpec::new(Dissipativity).tol(0.01).horizon(20.0)];
            c
        }
        "recursion-suite" => {
            let mut c = base("recursion-suite", None, 1.0, 16);
            c.seeds.rng_seed = 5;
            c.audits = vec![AuditSpec::new(RecursionSuite).samples(100).tol(1e-3)];
            c
        }
        _ => return None,
    };
    Some(cfg)
}
