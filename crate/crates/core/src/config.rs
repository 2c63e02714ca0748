//! TOML run configuration and initial-data construction.
//!
//! One table per section, scalar or array values only:
//!
//! ```toml
//! [grid]
//! length = 1.0
//! n_cells = 128
//!
//! [noise]
//! law = "power_law"        # power_law | explicit | none
//! amplitude = 0.5
//! exponent = 3.0
//! k_max = 16
//! # lambdas = [0.5, 0.06]  # explicit: lambda_|k| for |k| = 0..=k_max
//!
//! [model]
//! eps = 0.01               # and/or eps_list = [1e-2, 1e-3, 1e-4]
//! p = 3.0
//! theta = 0.2
//! alpha = -0.25
//!
//! [stepper]
//! horizon = 0.05
//! dt_init = 1e-5
//! dt_min = 1e-12
//! sigma = 1e-6
//! scheme = "semi_implicit" # semi_implicit | fully_implicit
//!
//! [initial_data]
//! kind = "cos_squared_bump" # constant | bump | cos_squared_bump | file
//! amplitude = 1.0
//! center = 0.5
//! radius = 0.25
//! floor = "eps_theta"      # eps_theta | none
//!
//! [ensemble]
//! n_samples = 200
//! base_seed = 42
//! q_list = [1.0]
//! phi_modes = [1]
//!
//! [output]
//! directory = "out"
//! records = 100
//! snapshots = false
//! ```
//!
//! Optional `[dispersion]` (`modes`, `amplitude`) and `[touchdown]`
//! (`threshold`) tables configure the corresponding subcommands.

use std::f64::consts::PI;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Result, StfeError};
use crate::grid::{Field, Grid};
use crate::model::ModelParams;
use crate::montecarlo::EnsembleConfig;
use crate::noise::NoiseSpec;
use crate::stepper::{Problem, RunOptions, Scheme, StepperConfig};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridSection {
    pub length: f64,
    pub n_cells: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NoiseLaw {
    PowerLaw,
    Explicit,
    None,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NoiseSection {
    pub law: NoiseLaw,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub amplitude: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub exponent: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub k_max: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub lambdas: Option<Vec<f64>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelSection {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub eps: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub eps_list: Option<Vec<f64>>,
    pub p: f64,
    pub theta: f64,
    pub alpha: f64,
}

fn default_newton_tol() -> f64 {
    1e-10
}

fn default_newton_max_iter() -> usize {
    30
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StepperSection {
    pub horizon: f64,
    pub dt_init: f64,
    pub dt_min: f64,
    pub sigma: f64,
    #[serde(default)]
    pub scheme: Scheme,
    #[serde(default = "default_newton_tol")]
    pub newton_tol: f64,
    #[serde(default = "default_newton_max_iter")]
    pub newton_max_iter: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InitialKind {
    Constant,
    Bump,
    CosSquaredBump,
    File,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FloorPolicy {
    /// Add `eps^theta` when `eps > 0`.
    #[default]
    EpsTheta,
    None,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InitialSection {
    pub kind: InitialKind,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub amplitude: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub center: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub radius: Option<f64>,
    #[serde(default)]
    pub floor: FloorPolicy,
    /// Whitespace-separated nodal values for `kind = "file"`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub path: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EnsembleSection {
    pub n_samples: usize,
    pub base_seed: u64,
    #[serde(default = "default_q_list")]
    pub q_list: Vec<f64>,
    #[serde(default)]
    pub phi_modes: Vec<i64>,
}

fn default_q_list() -> Vec<f64> {
    vec![1.0]
}

fn default_records() -> usize {
    100
}

fn default_directory() -> PathBuf {
    PathBuf::from(".")
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OutputSection {
    #[serde(default = "default_directory")]
    pub directory: PathBuf,
    #[serde(default = "default_records")]
    pub records: usize,
    #[serde(default)]
    pub snapshots: bool,
}

impl Default for OutputSection {
    fn default() -> Self {
        Self {
            directory: default_directory(),
            records: default_records(),
            snapshots: false,
        }
    }
}

fn default_dispersion_modes() -> Vec<i64> {
    vec![1]
}

fn default_dispersion_amplitude() -> f64 {
    1e-4
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DispersionSection {
    #[serde(default = "default_dispersion_modes")]
    pub modes: Vec<i64>,
    #[serde(default = "default_dispersion_amplitude")]
    pub amplitude: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TouchdownSection {
    pub threshold: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub grid: GridSection,
    pub noise: NoiseSection,
    pub model: ModelSection,
    pub stepper: StepperSection,
    pub initial_data: InitialSection,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub ensemble: Option<EnsembleSection>,
    #[serde(default)]
    pub output: OutputSection,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub dispersion: Option<DispersionSection>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub touchdown: Option<TouchdownSection>,
}

impl RunConfig {
    /// Parse and validate. Parse errors carry the line and field.
    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(text).map_err(|e| StfeError::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    /// Load from a file; relative `initial_data.path` values are resolved
    /// against the config's directory.
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        let mut cfg: Self = toml::from_str(&text)
            .map_err(|e| StfeError::Config(format!("{}: {e}", path.display())))?;
        if let Some(p) = cfg.initial_data.path.as_mut() {
            if p.is_relative() {
                if let Some(dir) = path.parent() {
                    *p = dir.join(&*p);
                }
            }
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    /// Re-run every admissibility rule of the library types.
    pub fn validate(&self) -> Result<()> {
        let grid = self.grid()?;
        let spec = self.noise_spec()?;
        spec.validate_for(&grid)?;
        let eps = self.eps_values()?;
        for &e in &eps {
            self.params(e)?;
        }
        self.stepper_config()?;
        if !(self.stepper.horizon >= 0.0 && self.stepper.horizon.is_finite()) {
            return Err(StfeError::Config(format!(
                "stepper.horizon must be nonnegative, got {}",
                self.stepper.horizon
            )));
        }
        if self.output.records == 0 {
            return Err(StfeError::Config("output.records must be positive".into()));
        }
        if let Some(ens) = &self.ensemble {
            self.ensemble_config_from(ens, eps).validate()?;
            let max = grid.max_resolved_mode() as i64;
            if let Some(&k) = ens.phi_modes.iter().find(|k| k.abs() > max) {
                return Err(StfeError::ModeBeyondNyquist {
                    k,
                    n: grid.n_cells(),
                });
            }
        }
        if let Some(t) = &self.touchdown {
            if !(t.threshold > 0.0) {
                return Err(StfeError::Config("touchdown.threshold must be positive".into()));
            }
        }
        self.check_initial_geometry()?;
        Ok(())
    }

    fn check_initial_geometry(&self) -> Result<()> {
        let ic = &self.initial_data;
        let need = |v: Option<f64>, name: &str| {
            v.ok_or_else(|| StfeError::Config(format!("initial_data.{name} is required for this kind")))
        };
        match ic.kind {
            InitialKind::Constant => {
                need(ic.amplitude, "amplitude")?;
            }
            InitialKind::Bump | InitialKind::CosSquaredBump => {
                need(ic.amplitude, "amplitude")?;
                let c = need(ic.center, "center")?;
                let r = need(ic.radius, "radius")?;
                if !(r > 0.0) || c - r < 0.0 || c + r > self.grid.length {
                    return Err(StfeError::Config(format!(
                        "initial_data support [{}, {}] exceeds the domain [0, {}]",
                        c - r,
                        c + r,
                        self.grid.length
                    )));
                }
            }
            InitialKind::File => {
                if ic.path.is_none() {
                    return Err(StfeError::Config("initial_data.path is required for kind = \"file\"".into()));
                }
            }
        }
        Ok(())
    }

    pub fn grid(&self) -> Result<Grid> {
        Grid::new(self.grid.length, self.grid.n_cells)
    }

    pub fn noise_spec(&self) -> Result<NoiseSpec> {
        let n = &self.noise;
        let need = |v: Option<f64>, name: &str| {
            v.ok_or_else(|| StfeError::Config(format!("noise.{name} is required for this law")))
        };
        match n.law {
            NoiseLaw::PowerLaw => {
                let k_max = n
                    .k_max
                    .ok_or_else(|| StfeError::Config("noise.k_max is required".into()))?;
                NoiseSpec::power_law(need(n.amplitude, "amplitude")?, need(n.exponent, "exponent")?, k_max)
            }
            NoiseLaw::Explicit => {
                let l = n
                    .lambdas
                    .clone()
                    .ok_or_else(|| StfeError::Config("noise.lambdas is required for law = \"explicit\"".into()))?;
                NoiseSpec::explicit(l)
            }
            NoiseLaw::None => Ok(NoiseSpec::silent(n.k_max.unwrap_or(0))),
        }
    }

    /// `model.eps` followed by the entries of `model.eps_list`.
    pub fn eps_values(&self) -> Result<Vec<f64>> {
        let mut v = Vec::new();
        if let Some(e) = self.model.eps {
            v.push(e);
        }
        if let Some(list) = &self.model.eps_list {
            v.extend(list.iter().copied().filter(|e| Some(*e) != self.model.eps));
        }
        if v.is_empty() {
            return Err(StfeError::Config("model.eps or model.eps_list is required".into()));
        }
        Ok(v)
    }

    /// The eps of single-trajectory commands.
    pub fn eps(&self) -> Result<f64> {
        Ok(self.eps_values()?[0])
    }

    pub fn params(&self, eps: f64) -> Result<ModelParams> {
        let c = self.noise_spec()?.c_strat(self.grid.length);
        ModelParams::new(eps, self.model.p, self.model.theta, self.model.alpha, c)
    }

    pub fn problem(&self, eps: f64) -> Result<Problem> {
        Problem::new(self.grid()?, self.noise_spec()?, self.params(eps)?)
    }

    pub fn stepper_config(&self) -> Result<StepperConfig> {
        let s = &self.stepper;
        let c = StepperConfig {
            dt_init: s.dt_init,
            dt_min: s.dt_min,
            newton_tol: s.newton_tol,
            newton_max_iter: s.newton_max_iter,
            sigma: s.sigma,
            scheme: s.scheme,
        };
        c.validate()?;
        Ok(c)
    }

    pub fn run_options(&self) -> RunOptions {
        let mut o = RunOptions::new(self.stepper.horizon, self.output.records);
        o.keep_snapshots = self.output.snapshots;
        o
    }

    fn ensemble_config_from(&self, ens: &EnsembleSection, eps_list: Vec<f64>) -> EnsembleConfig {
        EnsembleConfig {
            n_samples: ens.n_samples,
            base_seed: ens.base_seed,
            q_list: ens.q_list.clone(),
            eps_list,
            phi_modes: ens.phi_modes.clone(),
        }
    }

    pub fn ensemble_config(&self) -> Result<EnsembleConfig> {
        let ens = self
            .ensemble
            .as_ref()
            .ok_or_else(|| StfeError::Config("missing [ensemble] section".into()))?;
        Ok(self.ensemble_config_from(ens, self.eps_values()?))
    }

    pub fn initial(&self, params: &ModelParams) -> Result<Field> {
        build_initial(&self.initial_data, params, &self.grid()?)
    }
}

/// Construct the initial film and apply the floor policy.
pub fn build_initial(ic: &InitialSection, params: &ModelParams, grid: &Grid) -> Result<Field> {
    let h0 = ic.amplitude.unwrap_or(1.0);
    let support = || -> Result<(f64, f64)> {
        let c = ic.center.unwrap_or(0.5 * grid.length());
        let r = ic
            .radius
            .ok_or_else(|| StfeError::Config("initial_data.radius is required".into()))?;
        if !(r > 0.0) || c - r < 0.0 || c + r > grid.length() {
            return Err(StfeError::Config(format!(
                "initial_data support [{}, {}] exceeds the domain [0, {}]",
                c - r,
                c + r,
                grid.length()
            )));
        }
        Ok((c, r))
    };
    let mut u = match ic.kind {
        InitialKind::Constant => grid.constant(h0),
        InitialKind::Bump => {
            let (c, r) = support()?;
            grid.sample(|x| h0 * (1.0 - ((x - c) / r).powi(2)).max(0.0))
        }
        InitialKind::CosSquaredBump => {
            let (c, r) = support()?;
            grid.sample(|x| {
                let d = x - c;
                if d.abs() <= r {
                    h0 * (PI * d / (2.0 * r)).cos().powi(2)
                } else {
                    0.0
                }
            })
        }
        InitialKind::File => {
            let path = ic
                .path
                .as_ref()
                .ok_or_else(|| StfeError::Config("initial_data.path is required".into()))?;
            read_field_text(path, grid)?
        }
    };
    if let Some(&v) = u.iter().find(|v| !(**v >= 0.0)) {
        return Err(StfeError::Hypothesis {
            hypothesis: "(H2)",
            message: format!("initial data must be nonnegative, found {v}"),
        });
    }
    if ic.floor == FloorPolicy::EpsTheta {
        let f = params.initial_floor();
        u.iter_mut().for_each(|v| *v += f);
    }
    Ok(u)
}

fn read_field_text(path: &Path, grid: &Grid) -> Result<Field> {
    let text = std::fs::read_to_string(path)?;
    let values = text
        .split_whitespace()
        .map(|w| {
            w.parse::<f64>()
                .map_err(|e| StfeError::Config(format!("{}: bad value {w:?}: {e}", path.display())))
        })
        .collect::<Result<Vec<_>>>()?;
    let f = Field(values);
    grid.check(&f)?;
    Ok(f)
}
