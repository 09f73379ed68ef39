//! Sweep configuration: a JSON object whose keys may be overridden by flags.

use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};

use crate::error::{Error, Result};

pub const SEED_ENV: &str = "SSRECON_SEED";
pub const DEFAULT_TRIALS: usize = 5;
pub const DEFAULT_GRAD_VAR_SAMPLES: usize = 10_000;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ExperimentKind {
    DenoiseSgm,
    DenoiseGd,
    CsLinear,
    GradVar,
}

impl ExperimentKind {
    pub fn as_str(&self) -> &'static str {
        match self {
            ExperimentKind::DenoiseSgm => "denoise-sgm",
            ExperimentKind::DenoiseGd => "denoise-gd",
            ExperimentKind::CsLinear => "cs-linear",
            ExperimentKind::GradVar => "grad-var",
        }
    }
}

impl FromStr for ExperimentKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "denoise-sgm" => Ok(Self::DenoiseSgm),
            "denoise-gd" => Ok(Self::DenoiseGd),
            "cs-linear" => Ok(Self::CsLinear),
            "grad-var" => Ok(Self::GradVar),
            other => Err(Error::Config(format!(
                "unknown experiment {other:?}; expected denoise-sgm, denoise-gd, cs-linear or grad-var"
            ))),
        }
    }
}

/// Which model a gradient-variance run uses.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum GradVarDomain {
    Denoise,
    Cs,
}

/// Every key is optional here; [`SweepConfig::resolve`] applies defaults
/// and validation. Flags build one of these and overlay it on the file.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct RawConfig {
    pub experiment: Option<ExperimentKind>,
    pub n: Option<usize>,
    pub d: Option<usize>,
    pub sigma_z: Option<f64>,
    pub sigma_e: Option<Vec<f64>>,
    pub nu: Option<f64>,
    pub p: Option<f64>,
    pub mu: Option<Vec<f64>>,
    pub train_sizes: Option<Vec<usize>>,
    pub trials: Option<usize>,
    pub seed: Option<u64>,
    pub output: Option<PathBuf>,
    pub histogram_output: Option<PathBuf>,
    pub workers: Option<usize>,
    pub patience: Option<usize>,
    pub max_epochs: Option<usize>,
    pub samples: Option<usize>,
    pub bins: Option<usize>,
    pub domain: Option<GradVarDomain>,
    pub record_wall_time: Option<bool>,
}

const KNOWN_KEYS: &[&str] = &[
    "experiment",
    "n",
    "d",
    "sigma_z",
    "sigma_e",
    "nu",
    "p",
    "mu",
    "train_sizes",
    "trials",
    "seed",
    "output",
    "histogram_output",
    "workers",
    "patience",
    "max_epochs",
    "samples",
    "bins",
    "domain",
    "record_wall_time",
];

impl RawConfig {
    pub fn from_json_str(text: &str) -> Result<Self> {
        let value: Value = serde_json::from_str(text)?;
        let Value::Object(map) = value else {
            return Err(Error::Config("config must be a JSON object".into()));
        };
        let unknown: Vec<&str> = map.keys().map(String::as_str).filter(|k| !KNOWN_KEYS.contains(k)).collect();
        if !unknown.is_empty() {
            return Err(Error::Config(format!("unknown keys: {}", unknown.join(", "))));
        }
        Ok(serde_json::from_value(Value::Object(map))?)
    }

    pub fn from_file(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json_str(&text)
    }

    /// Values set in `other` replace those in `self`.
    pub fn overlay(self, other: RawConfig) -> RawConfig {
        let mut base = serde_json::to_value(self).expect("config serializes");
        let top = serde_json::to_value(other).expect("config serializes");
        if let (Value::Object(b), Value::Object(t)) = (&mut base, top) {
            for (k, v) in t {
                if !v.is_null() {
                    b.insert(k, v);
                }
            }
        }
        serde_json::from_value(base).expect("merged config deserializes")
    }

    pub fn to_json_map(&self) -> Map<String, Value> {
        match serde_json::to_value(self).expect("config serializes") {
            Value::Object(m) => m.into_iter().filter(|(_, v)| !v.is_null()).collect(),
            _ => Map::new(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepConfig {
    pub experiment: ExperimentKind,
    pub n: usize,
    pub d: usize,
    pub sigma_z: f64,
    pub sigma_e: Vec<f64>,
    pub nu: f64,
    pub p: f64,
    pub mu: Vec<f64>,
    pub train_sizes: Vec<usize>,
    pub trials: usize,
    pub seed: u64,
    pub output: Option<PathBuf>,
    pub histogram_output: Option<PathBuf>,
    pub workers: Option<usize>,
    pub patience: usize,
    pub max_epochs: usize,
    pub samples: usize,
    pub bins: usize,
    pub domain: GradVarDomain,
    pub record_wall_time: bool,
}

impl SweepConfig {
    /// Loads `path` (if any), overlays `flags`, and validates.
    pub fn load(path: Option<&Path>, flags: RawConfig) -> Result<Self> {
        let file = match path {
            Some(p) => RawConfig::from_file(p)?,
            None => RawConfig::default(),
        };
        Self::resolve(file.overlay(flags))
    }

    pub fn resolve(raw: RawConfig) -> Result<Self> {
        let experiment = raw.experiment.ok_or_else(|| Error::Config("experiment is required".into()))?;
        let n = raw.n.ok_or_else(|| Error::Config("n is required".into()))?;
        let d = raw.d.ok_or_else(|| Error::Config("d is required".into()))?;
        if d == 0 || d > n {
            return Err(Error::InvalidDimension(format!("need 1 <= d <= n, got n={n}, d={d}")));
        }
        let domain = raw.domain.unwrap_or(GradVarDomain::Denoise);
        let uses_cs = experiment == ExperimentKind::CsLinear
            || (experiment == ExperimentKind::GradVar && domain == GradVarDomain::Cs);

        let sigma_z = match raw.sigma_z {
            Some(s) => s,
            None if uses_cs => 0.0,
            None => return Err(Error::Config("sigma_z is required".into())),
        };
        if !(sigma_z >= 0.0) || !sigma_z.is_finite() {
            return Err(Error::Config(format!("sigma_z must be finite and >= 0, got {sigma_z}")));
        }
        let sigma_e = raw.sigma_e.unwrap_or_else(|| vec![0.0]);
        if sigma_e.is_empty() || sigma_e.iter().any(|s| !(*s >= 0.0) || !s.is_finite()) {
            return Err(Error::Config("sigma_e must be a nonempty list of finite values >= 0".into()));
        }

        let (nu, p, mu) = if uses_cs {
            let nu = raw.nu.ok_or_else(|| Error::Config("nu is required".into()))?;
            let p = raw.p.ok_or_else(|| Error::Config("p is required".into()))?;
            let mu = raw.mu.ok_or_else(|| Error::Config("mu is required".into()))?;
            if mu.is_empty() {
                return Err(Error::Config("mu must be a nonempty list".into()));
            }
            for &m in &mu {
                crate::cs_masks::CsScheme::new(n, nu, p, m)?;
            }
            (nu, p, mu)
        } else {
            (raw.nu.unwrap_or(0.0), raw.p.unwrap_or(0.0), raw.mu.unwrap_or_default())
        };

        let train_sizes = match raw.train_sizes {
            Some(t) => t,
            None if experiment == ExperimentKind::GradVar => Vec::new(),
            None => return Err(Error::Config("train_sizes is required".into())),
        };
        if train_sizes.first() == Some(&0) {
            return Err(Error::Config("train_sizes must be positive".into()));
        }
        if train_sizes.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::Config("train_sizes must be strictly increasing".into()));
        }
        if experiment != ExperimentKind::GradVar && train_sizes.is_empty() {
            return Err(Error::Config("train_sizes must be nonempty".into()));
        }

        let trials = raw.trials.unwrap_or(DEFAULT_TRIALS);
        if trials == 0 {
            return Err(Error::Config("trials must be >= 1".into()));
        }
        let seed = match raw.seed {
            Some(s) => s,
            None => seed_from_env()?,
        };
        if raw.workers == Some(0) {
            return Err(Error::Config("workers must be >= 1".into()));
        }
        let patience = raw.patience.unwrap_or(10);
        if patience == 0 {
            return Err(Error::Config("patience must be >= 1".into()));
        }
        let samples = raw.samples.unwrap_or(DEFAULT_GRAD_VAR_SAMPLES);
        if experiment == ExperimentKind::GradVar && samples < crate::grad_variance::MIN_SAMPLES {
            return Err(Error::Config(format!(
                "samples must be >= {}, got {samples}",
                crate::grad_variance::MIN_SAMPLES
            )));
        }
        Ok(Self {
            experiment,
            n,
            d,
            sigma_z,
            sigma_e,
            nu,
            p,
            mu,
            train_sizes,
            trials,
            seed,
            output: raw.output,
            histogram_output: raw.histogram_output,
            workers: raw.workers,
            patience,
            max_epochs: raw.max_epochs.unwrap_or(5000),
            samples,
            bins: raw.bins.unwrap_or(crate::grad_variance::DEFAULT_BINS).max(1),
            domain,
            record_wall_time: raw.record_wall_time.unwrap_or(false),
        })
    }
}

fn seed_from_env() -> Result<u64> {
    match std::env::var(SEED_ENV) {
        Ok(v) => {
            v.trim().parse().map_err(|_| Error::Config(format!("{SEED_ENV} must be an unsigned integer, got {v:?}")))
        }
        Err(_) => Ok(0),
    }
}

/// Parses a comma-separated list such as `0,0.1,0.2`.
pub fn parse_list<T: FromStr>(text: &str) -> Result<Vec<T>> {
    text.split(',')
        .map(|s| s.trim())
        .filter(|s| !s.is_empty())
        .map(|s| s.parse().map_err(|_| Error::Config(format!("cannot parse list element {s:?}"))))
        .collect()
}
