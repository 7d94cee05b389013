use std::path::{Path, PathBuf};

use dispml::blocksys::{S3Coupling, Variant};
use dispml::certify::{Component, HalfPlaneGrid, DEFAULT_ORIGIN_RADIUS};
use dispml::matlaw::{DispersionParams, PmlStretch};
use dispml::nlsolve::{load_kernel2_csv, load_kernel_csv, Kernel1, Kernel2, NlKind, NonlinearPolarization};
use dispml::tdsim::{SeriesKind, SimConfig};
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::scenarios::{self, CommandKind};
use crate::{CliError, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum Expectation {
    Stable,
    Unstable,
}

/// A parsed config together with where it came from.
#[derive(Debug, Clone)]
pub struct Loaded<T> {
    pub value: T,
    /// Path as given, or `scenario:<name>`.
    pub origin: String,
    /// Directory that relative paths inside the config resolve against.
    pub base_dir: PathBuf,
}

/// TOML unless the file name ends in `.json`.
pub fn parse<T: DeserializeOwned>(text: &str, json: bool, label: &Path) -> Result<T> {
    let res = if json {
        serde_json::from_str(text).map_err(|e| e.to_string())
    } else {
        toml::from_str(text).map_err(|e| e.to_string())
    };
    res.map_err(|msg| CliError::Parse {
        path: label.to_path_buf(),
        msg,
    })
}

pub fn load<T: DeserializeOwned>(kind: CommandKind, config: Option<&Path>, scenario: Option<&str>) -> Result<Loaded<T>> {
    match (config, scenario) {
        (Some(_), Some(_)) => Err(CliError::Config("give either --config or --scenario, not both".into())),
        (None, None) => Err(CliError::Config("one of --config or --scenario is required".into())),
        (None, Some("custom")) => Err(CliError::Config("scenario `custom` reads its parameters from --config".into())),
        (None, Some(name)) => {
            let text = scenarios::lookup(kind, name).ok_or_else(|| {
                CliError::Config(format!(
                    "unknown {} scenario `{name}` (known: {})",
                    kind.as_str(),
                    scenarios::names(kind).join(", ")
                ))
            })?;
            let label = PathBuf::from(format!("scenarios/{}/{name}.toml", kind.as_str()));
            Ok(Loaded {
                value: parse(text, false, &label)?,
                origin: format!("scenario:{name}"),
                base_dir: PathBuf::from("."),
            })
        }
        (Some(path), None) => {
            let text = std::fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
            let json = path.extension().is_some_and(|e| e.eq_ignore_ascii_case("json"));
            Ok(Loaded {
                value: parse(&text, json, path)?,
                origin: path.display().to_string(),
                base_dir: path.parent().map(Path::to_path_buf).unwrap_or_default(),
            })
        }
    }
}

fn default_origin_radius() -> f64 {
    DEFAULT_ORIGIN_RADIUS
}

fn default_nu_search() -> [f64; 2] {
    [0.0, 4.0]
}

/// Replaces parts of the default half-plane grid.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridOverride {
    pub nu_offsets: Option<Vec<f64>>,
    pub t_max: Option<f64>,
    pub t_count: Option<usize>,
    pub log_spaced: Option<bool>,
}

impl GridOverride {
    pub fn apply(&self, mut g: HalfPlaneGrid) -> HalfPlaneGrid {
        if let Some(v) = &self.nu_offsets {
            g.nu_offsets = v.clone();
        }
        if let Some(v) = self.t_max {
            g.t_max = v;
        }
        if let Some(v) = self.t_count {
            g.t_count = v;
        }
        if let Some(v) = self.log_spaced {
            g.log_spaced = v;
        }
        g
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CertifyConfig {
    pub name: Option<String>,
    pub description: Option<String>,
    #[serde(default)]
    pub material: DispersionParams,
    #[serde(default)]
    pub stretch: PmlStretch,
    #[serde(default)]
    pub component: Component,
    /// Ball around the origin left out of the scan.
    #[serde(default = "default_origin_radius")]
    pub origin_radius: f64,
    /// Bracket for the stability-rate bisection.
    #[serde(default = "default_nu_search")]
    pub nu_search: [f64; 2],
    pub expect: Option<Expectation>,
    #[serde(default)]
    pub grid: GridOverride,
}

fn default_samples() -> usize {
    100
}

fn default_seed() -> u64 {
    2024
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AssembleConfig {
    pub name: Option<String>,
    pub description: Option<String>,
    pub variant: Variant,
    #[serde(default)]
    pub material: DispersionParams,
    #[serde(default)]
    pub stretch: PmlStretch,
    #[serde(default = "default_samples")]
    pub samples: usize,
    #[serde(default = "default_seed")]
    pub seed: u64,
    #[serde(default)]
    pub s3: S3Coupling,
}

fn default_series() -> String {
    "energy".into()
}

fn default_series_kind() -> SeriesKind {
    SeriesKind::Energy
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DecayFitSpec {
    #[serde(default = "default_series")]
    pub series: String,
    pub window: [f64; 2],
    #[serde(default = "default_series_kind")]
    pub kind: SeriesKind,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ReflectionSpec {
    /// Extra cells per side of the reference domain.
    pub pad: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DriftSpec {
    #[serde(default = "default_series")]
    pub series: String,
    /// Samples before this time are ignored.
    pub after: f64,
}

fn yes() -> bool {
    true
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimulateConfig {
    pub name: Option<String>,
    pub description: Option<String>,
    pub sim: SimConfig,
    pub decay_fit: Option<DecayFitSpec>,
    pub reflection: Option<ReflectionSpec>,
    pub drift: Option<DriftSpec>,
    #[serde(default = "yes")]
    pub snapshot: bool,
}

/// Kernel of a convolved law, sampled at the simulation step.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "shape", rename_all = "kebab-case", deny_unknown_fields)]
pub enum KernelSpec {
    Zero { length: f64 },
    /// `A e^{−r t}`.
    Exponential { amplitude: f64, rate: f64, length: f64 },
    /// `A t e^{−r t}`.
    Gamma { amplitude: f64, rate: f64, length: f64 },
    /// Two columns `t,value` on a uniform grid from 0.
    Csv { path: PathBuf },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "shape", rename_all = "kebab-case", deny_unknown_fields)]
pub enum Kernel2Spec {
    /// `A s t e^{−r1 s − r2 t}`.
    Separable { amplitude: f64, rate1: f64, rate2: f64, length: f64 },
    Csv { path: PathBuf },
}

fn samples_for(length: f64, dt: f64) -> Result<usize> {
    if !(length > 0.0) {
        return Err(CliError::Config("kernel length must be positive".into()));
    }
    Ok((length / dt).round() as usize + 1)
}

fn open(base: &Path, p: &Path) -> Result<std::fs::File> {
    let full = if p.is_absolute() { p.to_path_buf() } else { base.join(p) };
    std::fs::File::open(&full).map_err(|e| CliError::io(full, e))
}

impl KernelSpec {
    pub fn sample(&self, dt: f64, base: &Path) -> Result<Kernel1> {
        Ok(match *self {
            KernelSpec::Zero { length } => Kernel1::from_fn(dt, samples_for(length, dt)?, |_| 0.0),
            KernelSpec::Exponential { amplitude, rate, length } => {
                Kernel1::from_fn(dt, samples_for(length, dt)?, |t| amplitude * (-rate * t).exp())
            }
            KernelSpec::Gamma { amplitude, rate, length } => {
                Kernel1::from_fn(dt, samples_for(length, dt)?, |t| amplitude * t * (-rate * t).exp())
            }
            KernelSpec::Csv { ref path } => load_kernel_csv(open(base, path)?)?,
        })
    }
}

impl Kernel2Spec {
    pub fn sample(&self, dt: f64, base: &Path) -> Result<Kernel2> {
        Ok(match *self {
            Kernel2Spec::Separable {
                amplitude,
                rate1,
                rate2,
                length,
            } => Kernel2::from_fn(dt, samples_for(length, dt)?, |s, t| amplitude * s * t * (-rate1 * s - rate2 * t).exp()),
            Kernel2Spec::Csv { ref path } => load_kernel2_csv(open(base, path)?)?,
        })
    }
}

fn default_k() -> u32 {
    3
}

fn one() -> f64 {
    1.0
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NonlinearitySpec {
    pub kind: NlKind,
    #[serde(default = "default_k")]
    pub k: u32,
    #[serde(default = "one")]
    pub tau: f64,
    #[serde(default = "one")]
    pub c_q: f64,
    pub cutoff_t: Option<f64>,
    pub kernel: Option<KernelSpec>,
    pub kernel2: Option<Kernel2Spec>,
}

impl NonlinearitySpec {
    pub fn build(&self, dt: f64, base: &Path) -> Result<NonlinearPolarization> {
        let nl = match self.kind {
            NlKind::SaturableConvolved => {
                let k = self
                    .kernel
                    .as_ref()
                    .ok_or_else(|| CliError::Config("saturable law needs a `kernel`".into()))?;
                NonlinearPolarization::saturable(self.k, self.tau, k.sample(dt, base)?)
            }
            NlKind::QuadraticNonlocal => {
                let k = self
                    .kernel2
                    .as_ref()
                    .ok_or_else(|| CliError::Config("quadratic law needs a `kernel2`".into()))?;
                NonlinearPolarization::quadratic(k.sample(dt, base)?, self.c_q, self.cutoff_t)
            }
        };
        nl.validate()?;
        Ok(nl)
    }
}

fn default_max_iter() -> usize {
    50
}

fn default_tol() -> f64 {
    1e-9
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PicardSpec {
    pub nu: f64,
    #[serde(default = "default_max_iter")]
    pub max_iter: usize,
    #[serde(default = "default_tol")]
    pub tol: f64,
    /// Taken from the certificate of the linear medium when absent.
    pub slope_d: Option<f64>,
    /// Second weight to solve at, for the weight-independence check.
    pub compare_nu: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FixedpointConfig {
    pub name: Option<String>,
    pub description: Option<String>,
    /// Linear problem; its sources are the right-hand side g.
    pub sim: SimConfig,
    pub nonlinearity: NonlinearitySpec,
    pub picard: PicardSpec,
}
