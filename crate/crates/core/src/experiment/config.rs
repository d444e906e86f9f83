use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::coeffs::{Builtin, KernelCoefficients};
use crate::error::{Error, Result};
use crate::simulate::{InitialLaw, SimConfig};

/// Config schema version understood by this build.
pub const SCHEMA_VERSION: u32 = 1;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ExperimentKind {
    Simulate,
    Moments,
    MollifyConverge,
    SqrtLift,
    Girsanov,
    UniquenessProbe,
    Contraction,
    Timechange,
    SupMoment,
}

impl ExperimentKind {
    pub fn name(self) -> &'static str {
        match self {
            ExperimentKind::Simulate => "simulate",
            ExperimentKind::Moments => "moments",
            ExperimentKind::MollifyConverge => "mollify-converge",
            ExperimentKind::SqrtLift => "sqrt-lift",
            ExperimentKind::Girsanov => "girsanov",
            ExperimentKind::UniquenessProbe => "uniqueness-probe",
            ExperimentKind::Contraction => "contraction",
            ExperimentKind::Timechange => "timechange",
            ExperimentKind::SupMoment => "sup-moment",
        }
    }

    /// Whether the experiment integrates the configured model.
    pub fn simulates(self) -> bool {
        !matches!(self, ExperimentKind::Contraction | ExperimentKind::Timechange | ExperimentKind::SupMoment)
    }
}

/// Thresholds for the hard checks. Each experiment names the fields it
/// needs; a missing one is a config error, never a silent default.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Tolerances {
    /// Accepted range of the fitted fourth-moment increment exponent.
    pub increment_exponent: Option<[f64; 2]>,
    /// Multiplier on standard errors in MC comparisons.
    pub se_multiplier: Option<f64>,
    /// Relative reconstruction defect of the lift.
    pub lift_defect: Option<f64>,
    /// Relative deviation of the diagonal covariation from `T`.
    pub levy_diag: Option<f64>,
    /// Off-diagonal covariation bound in units of `T / sqrt(steps)`.
    pub levy_offdiag: Option<f64>,
    /// Test level of two-sample tests.
    pub alpha: Option<f64>,
    /// Allowed fraction of comparison violations.
    pub violation_fraction: Option<f64>,
    /// Slack in `Z >= X^ - slack`.
    pub comparison_slack: Option<f64>,
    /// Allowed `|slope - 1|` of the time-changed quadratic variation.
    pub qv_slope: Option<f64>,
    /// Relative error of the MC sup-moment estimate.
    pub mc_relative: Option<f64>,
}

impl Tolerances {
    pub(crate) fn need<T: Copy>(&self, v: Option<T>, field: &str, kind: ExperimentKind) -> Result<T> {
        v.ok_or_else(|| Error::Config(format!("tolerances.{field} is required for experiment {}", kind.name())))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MollifySection {
    pub levels: Vec<u32>,
    pub nodes: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SqrtLiftSection {
    /// Smallest accepted eigenvalue of `a = sigma sigma^T`.
    pub floor: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GirsanovSection {
    /// Second drift sharing the diffusion; `None` compares the model with itself.
    pub alternative: Option<Builtin>,
    /// `C` and `T` of the reported contraction trace.
    pub contraction_c: f64,
    pub contraction_t: f64,
    pub rho_constant: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProbeSection {
    /// Also run the drift-plus-one control, which must be rejected.
    pub control: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ContractionSection {
    #[serde(rename = "C")]
    pub c: f64,
    #[serde(rename = "T")]
    pub t: f64,
    pub horizon: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TimechangeSection {
    pub amplitude: f64,
    pub x0: Vec<f64>,
    /// Reflected drift; `None` uses `K C0`.
    pub c1: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SupMomentSection {
    pub r: f64,
    #[serde(rename = "T")]
    pub t: f64,
    pub mc: bool,
    /// MC walks and steps per walk; required when `mc` is set.
    pub paths: Option<usize>,
    pub steps: Option<usize>,
}

/// One experiment, fully specified. Parsed from TOML.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub version: u32,
    pub experiment: ExperimentKind,
    pub seed: u64,
    pub model: Option<Builtin>,
    pub d: usize,
    pub d1: usize,
    #[serde(rename = "N")]
    pub particles: usize,
    #[serde(rename = "K")]
    pub steps: usize,
    pub dt: f64,
    #[serde(rename = "T")]
    pub horizon: f64,
    pub stopping_radius: Option<f64>,
    /// Number of recorded particles; `None` records `min(N, 1000)`.
    pub record: Option<usize>,
    pub initial_law: Option<InitialLaw>,
    pub output_dir: PathBuf,
    pub tolerances: Tolerances,
    pub mollify: Option<MollifySection>,
    pub sqrt_lift: Option<SqrtLiftSection>,
    pub girsanov: Option<GirsanovSection>,
    pub probe: Option<ProbeSection>,
    pub contraction: Option<ContractionSection>,
    pub timechange: Option<TimechangeSection>,
    pub sup_moment: Option<SupMomentSection>,
}

fn section<'a, T>(s: &'a Option<T>, name: &str, kind: ExperimentKind) -> Result<&'a T> {
    s.as_ref().ok_or_else(|| Error::Config(format!("section [{name}] is required for experiment {}", kind.name())))
}

impl ExperimentConfig {
    pub fn from_toml_str(text: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(text).map_err(|e| Error::Config(e.to_string().trim_end().to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn from_path(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))?;
        Self::from_toml_str(&text)
    }

    pub fn validate(&self) -> Result<()> {
        let kind = self.experiment;
        if self.version != SCHEMA_VERSION {
            return Err(Error::Config(format!("version: expected {SCHEMA_VERSION}, got {}", self.version)));
        }
        if self.particles == 0 {
            return Err(Error::Config("N: must be at least 1".into()));
        }
        if self.d == 0 || self.d1 == 0 {
            return Err(Error::Config("d, d1: must be positive".into()));
        }
        if !(self.dt > 0.0 && self.dt.is_finite()) {
            return Err(Error::Config(format!("dt: must be positive, got {}", self.dt)));
        }
        let gap = (self.dt * self.steps as f64 - self.horizon).abs();
        if !(gap <= 1e-12) {
            return Err(Error::Config(format!("T: dt * K = {} differs from T = {}", self.dt * self.steps as f64, self.horizon)));
        }
        if let Some(r) = self.stopping_radius {
            if !(r > 0.0) {
                return Err(Error::Config(format!("stopping_radius: must be positive, got {r}")));
            }
        }
        if kind.simulates() {
            section(&self.model, "model", kind)?;
            let law = section(&self.initial_law, "initial_law", kind)?;
            if law.dim() != self.d {
                return Err(Error::Config(format!("initial_law: dimension {} does not match d = {}", law.dim(), self.d)));
            }
        }
        match kind {
            ExperimentKind::MollifyConverge => {
                let m = section(&self.mollify, "mollify", kind)?;
                if m.levels.len() < 2 || m.levels.windows(2).any(|w| w[1] <= w[0]) || m.levels[0] == 0 {
                    return Err(Error::Config("mollify.levels: need at least two increasing positive levels".into()));
                }
            }
            ExperimentKind::SqrtLift => {
                section(&self.sqrt_lift, "sqrt_lift", kind)?;
                if self.d1 < self.d {
                    return Err(Error::Config("d1: the lift needs d1 >= d".into()));
                }
            }
            ExperimentKind::Girsanov => {
                section(&self.girsanov, "girsanov", kind)?;
                if self.d != self.d1 {
                    return Err(Error::Config("d1: stochastic exponents need a square diffusion (d = d1)".into()));
                }
            }
            ExperimentKind::UniquenessProbe => {
                section(&self.probe, "probe", kind)?;
            }
            ExperimentKind::Contraction => {
                section(&self.contraction, "contraction", kind)?;
            }
            ExperimentKind::Timechange => {
                let s = section(&self.timechange, "timechange", kind)?;
                if s.x0.len() < 2 {
                    return Err(Error::Config("timechange.x0: the radial comparison needs dimension >= 2".into()));
                }
            }
            ExperimentKind::SupMoment => {
                let s = section(&self.sup_moment, "sup_moment", kind)?;
                if s.mc && (s.paths.is_none() || s.steps.is_none()) {
                    return Err(Error::Config("sup_moment: paths and steps are required when mc = true".into()));
                }
            }
            ExperimentKind::Simulate | ExperimentKind::Moments => {}
        }
        Ok(())
    }

    pub fn coefficients(&self) -> Result<KernelCoefficients> {
        section(&self.model, "model", self.experiment)?.coefficients(self.d, self.d1)
    }

    /// Base simulation settings of the model.
    pub fn sim_config(&self) -> Result<SimConfig> {
        let law = section(&self.initial_law, "initial_law", self.experiment)?.clone();
        let mut cfg = SimConfig::new(self.coefficients()?, self.particles, self.steps, self.dt, law, self.seed);
        if let Some(n) = self.record {
            cfg = cfg.record_first(n);
        }
        if let Some(r) = self.stopping_radius {
            cfg = cfg.with_stopping(r);
        }
        Ok(cfg)
    }
}
