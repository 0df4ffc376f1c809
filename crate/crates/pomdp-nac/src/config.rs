//! Strict TOML experiment configuration.
//!
//! ```toml
//! model = { generator = "two_state_noisy" }   # or { path = "model.json" }
//! n = 1                                        # or controller = "kernel.json"
//! T = 50
//! K = 50000
//! seeds = [1, 2, 3]
//! ```

use std::fs;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use pomdp_nac_core::benchmarks::{generate_benchmark, BenchmarkGenerator};
use pomdp_nac_core::controller::InternalStateSpec;
use pomdp_nac_core::model::PomdpModel;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{HarnessError, InModule, Result};
use crate::io::{load_controller, load_model, ControllerFile, ModelFile};

pub const DEFAULT_T: usize = 50;
pub const DEFAULT_N: usize = 10_000;
pub const DEFAULT_K: usize = 50_000;
pub const DEFAULT_M: usize = 4;
pub const DEFAULT_VALUE_ROLLOUTS: usize = 10_000;

/// Model section as written in the file.
#[derive(Debug, Clone, Default, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RawModel {
    pub path: Option<PathBuf>,
    /// `two_state_noisy`, `random_pomdp` or `fully_observed` (of `path`).
    pub generator: Option<String>,
    pub states: Option<i64>,
    pub actions: Option<i64>,
    pub observations: Option<i64>,
    pub gamma: Option<f64>,
    pub seed: Option<u64>,
}

/// The file as parsed, before validation. Integers are signed so that a
/// negative value is reported by name instead of as a type error.
#[derive(Debug, Clone, Default, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RawConfig {
    pub model: Option<RawModel>,
    /// Sliding-block length.
    pub n: Option<i64>,
    /// Generic controller file, instead of `n`.
    pub controller: Option<PathBuf>,
    #[serde(rename = "T")]
    pub t: Option<i64>,
    #[serde(rename = "N")]
    pub sgd_steps: Option<i64>,
    #[serde(rename = "K")]
    pub k: Option<i64>,
    pub m: Option<i64>,
    #[serde(rename = "R")]
    pub radius: Option<f64>,
    pub eta: Option<f64>,
    pub zeta: Option<f64>,
    pub alpha: Option<f64>,
    pub seeds: Option<Vec<u64>>,
    pub out: Option<PathBuf>,
    pub oracle: Option<bool>,
    pub timing: Option<bool>,
    pub value_rollouts: Option<i64>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum ModelSource {
    File(PathBuf),
    TwoStateNoisy,
    RandomPomdp {
        states: usize,
        actions: usize,
        observations: usize,
        gamma: f64,
        seed: u64,
    },
    FullyObserved(PathBuf),
}

impl ModelSource {
    pub fn load(&self) -> Result<PomdpModel> {
        match self {
            Self::File(p) => load_model(p),
            Self::TwoStateNoisy => generate_benchmark(&BenchmarkGenerator::TwoStateNoisy).in_module("harness"),
            Self::RandomPomdp {
                states,
                actions,
                observations,
                gamma,
                seed,
            } => generate_benchmark(&BenchmarkGenerator::RandomPomdp {
                states: *states,
                actions: *actions,
                observations: *observations,
                gamma: *gamma,
                seed: *seed,
            })
            .in_module("harness"),
            Self::FullyObserved(p) => generate_benchmark(&BenchmarkGenerator::FullyObserved(load_model(p)?)).in_module("harness"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum ControllerChoice {
    SlidingBlock(usize),
    File(PathBuf),
}

/// Validated configuration with every default filled in.
#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentConfig {
    pub model_source: ModelSource,
    pub controller: ControllerChoice,
    pub iterations: usize,
    pub sgd_steps: usize,
    pub critic_iterations: usize,
    pub m: usize,
    pub radius: f64,
    pub eta: f64,
    pub zeta: f64,
    pub alpha: f64,
    pub seeds: Vec<u64>,
    pub out: PathBuf,
    pub oracle: bool,
    pub timing: bool,
    pub value_rollouts: usize,
    /// The model, loaded once during validation.
    pub model: PomdpModel,
    pub internal: Arc<InternalStateSpec>,
}

/// What the config hash covers: everything that can change a per-seed CSV
/// except the seed itself.
#[derive(Serialize)]
struct HashView<'a> {
    model: ModelFile,
    controller: ControllerFile,
    iterations: usize,
    sgd_steps: usize,
    critic_iterations: usize,
    m: usize,
    radius: f64,
    eta: f64,
    zeta: f64,
    alpha: f64,
    oracle: bool,
    timing: bool,
    value_rollouts: usize,
    version: &'a str,
}

impl ExperimentConfig {
    /// Hex SHA-256 prefix identifying the settings of a run.
    pub fn hash(&self) -> String {
        let view = HashView {
            model: ModelFile::from_model(&self.model),
            controller: ControllerFile::from_spec(&self.internal),
            iterations: self.iterations,
            sgd_steps: self.sgd_steps,
            critic_iterations: self.critic_iterations,
            m: self.m,
            radius: self.radius,
            eta: self.eta,
            zeta: self.zeta,
            alpha: self.alpha,
            oracle: self.oracle,
            timing: self.timing,
            value_rollouts: self.value_rollouts,
            version: crate::VERSION,
        };
        let json = serde_json::to_vec(&view).expect("plain data serializes");
        Sha256::digest(&json)[..8].iter().map(|b| format!("{b:02x}")).collect()
    }
}

fn positive(errors: &mut Vec<String>, name: &str, v: Option<i64>, default: usize) -> usize {
    match v {
        None => default,
        Some(v) if v >= 1 => v as usize,
        Some(v) => {
            errors.push(format!("`{name}` must be ≥ 1, got {v}"));
            default
        }
    }
}

fn positive_real(errors: &mut Vec<String>, name: &str, v: Option<f64>) -> Option<f64> {
    match v {
        Some(x) if !(x > 0.0 && x.is_finite()) => {
            errors.push(format!("`{name}` must be positive and finite, got {x}"));
            None
        }
        other => other,
    }
}

fn relative(base: &Path, p: &Path) -> PathBuf {
    if p.is_absolute() {
        p.to_owned()
    } else {
        base.join(p)
    }
}

fn existing(errors: &mut Vec<String>, name: &str, base: &Path, p: &Path) -> PathBuf {
    let p = relative(base, p);
    if !p.is_file() {
        errors.push(format!("`{name}` refers to missing file {}", p.display()));
    }
    p
}

fn model_source(errors: &mut Vec<String>, raw: Option<&RawModel>, base: &Path) -> Option<ModelSource> {
    let Some(raw) = raw else {
        errors.push("`model` is required".into());
        return None;
    };
    let dim = |errors: &mut Vec<String>, name: &str, v: Option<i64>| match v {
        Some(v) if v >= 1 => Some(v as usize),
        Some(v) => {
            errors.push(format!("`model.{name}` must be ≥ 1, got {v}"));
            None
        }
        None => {
            errors.push(format!("`model.{name}` is required for random_pomdp"));
            None
        }
    };
    match (raw.generator.as_deref(), &raw.path) {
        (None, Some(p)) => Some(ModelSource::File(existing(errors, "model.path", base, p))),
        (None, None) => {
            errors.push("`model` needs `path` or `generator`".into());
            None
        }
        (Some("two_state_noisy"), _) => Some(ModelSource::TwoStateNoisy),
        (Some("fully_observed"), Some(p)) => Some(ModelSource::FullyObserved(existing(errors, "model.path", base, p))),
        (Some("fully_observed"), None) => {
            errors.push("`model.path` is required for fully_observed".into());
            None
        }
        (Some("random_pomdp"), _) => {
            let states = dim(errors, "states", raw.states);
            let actions = dim(errors, "actions", raw.actions);
            let observations = dim(errors, "observations", raw.observations);
            let gamma = raw.gamma.unwrap_or(0.9);
            if !(gamma > 0.0 && gamma < 1.0) {
                errors.push(format!("`model.gamma` must lie in (0,1), got {gamma}"));
            }
            Some(ModelSource::RandomPomdp {
                states: states?,
                actions: actions?,
                observations: observations?,
                gamma,
                seed: raw.seed.unwrap_or(0),
            })
        }
        (Some(other), _) => {
            errors.push(format!("`model.generator` must be two_state_noisy, random_pomdp or fully_observed, got {other:?}"));
            None
        }
    }
}

impl RawConfig {
    /// Values of `other` replace those of `self` where present.
    pub fn overlay(mut self, other: RawConfig) -> Self {
        macro_rules! take {
            ($($f:ident),*) => {$(if other.$f.is_some() { self.$f = other.$f; })*};
        }
        take!(model, n, controller, t, sgd_steps, k, m, radius, eta, zeta, alpha, seeds, out, oracle, timing, value_rollouts);
        self
    }

    /// Validates and fills defaults. Relative paths are taken from `base`.
    pub fn resolve(self, base: &Path) -> Result<ExperimentConfig> {
        let mut errors = Vec::new();
        let iterations = positive(&mut errors, "T", self.t, DEFAULT_T);
        let sgd_steps = positive(&mut errors, "N", self.sgd_steps, DEFAULT_N);
        let critic_iterations = positive(&mut errors, "K", self.k, DEFAULT_K);
        let m = positive(&mut errors, "m", self.m, DEFAULT_M);
        let value_rollouts = positive(&mut errors, "value_rollouts", self.value_rollouts, DEFAULT_VALUE_ROLLOUTS);
        let radius = positive_real(&mut errors, "R", self.radius);
        let eta = positive_real(&mut errors, "eta", self.eta);
        let zeta = positive_real(&mut errors, "zeta", self.zeta);
        let alpha = positive_real(&mut errors, "alpha", self.alpha);
        let controller = match (self.n, &self.controller) {
            (Some(n), None) if n >= 0 => Some(ControllerChoice::SlidingBlock(n as usize)),
            (Some(n), None) => {
                errors.push(format!("`n` must be ≥ 0, got {n}"));
                None
            }
            (None, Some(p)) => Some(ControllerChoice::File(existing(&mut errors, "controller", base, p))),
            (Some(_), Some(_)) => {
                errors.push("give either `n` or `controller`, not both".into());
                None
            }
            (None, None) => {
                errors.push("`n` (sliding-block length) or `controller` is required".into());
                None
            }
        };
        let seeds = self.seeds.unwrap_or_else(|| vec![0]);
        if seeds.is_empty() {
            errors.push("`seeds` must not be empty".into());
        }
        let mut sorted = seeds.clone();
        sorted.sort_unstable();
        if sorted.windows(2).any(|w| w[0] == w[1]) {
            errors.push("`seeds` must be distinct".into());
        }
        let source = model_source(&mut errors, self.model.as_ref(), base);
        let (Some(source), Some(controller)) = (source, controller) else {
            return Err(HarnessError::Validation(errors));
        };
        if !errors.is_empty() {
            return Err(HarnessError::Validation(errors));
        }

        let model = source.load()?;
        let internal = match &controller {
            ControllerChoice::SlidingBlock(n) => {
                InternalStateSpec::sliding_block(*n, model.n_obs(), model.n_actions()).in_module("controllers")?
            }
            ControllerChoice::File(p) => load_controller(p, &model)?,
        };
        let (gamma, r_max) = (model.gamma(), model.r_max());
        let dim = (model.n_obs() * internal.n_z() * model.n_actions()) as f64;
        // large enough to hold the tabular Q^π
        let radius = radius.unwrap_or(r_max / (1.0 - gamma) * dim.sqrt());
        Ok(ExperimentConfig {
            model_source: source,
            controller,
            iterations,
            sgd_steps,
            critic_iterations,
            m,
            radius,
            eta: eta.unwrap_or(1.0 / (iterations as f64).sqrt()),
            zeta: zeta.unwrap_or(radius * (1.0 - gamma).sqrt() / (2.0 * sgd_steps as f64 * r_max).sqrt()),
            alpha: alpha.unwrap_or(1.0 / (critic_iterations as f64).sqrt()),
            seeds,
            out: relative(base, self.out.as_deref().unwrap_or(Path::new("runs"))),
            oracle: self.oracle.unwrap_or(true),
            timing: self.timing.unwrap_or(false),
            value_rollouts,
            model,
            internal: Arc::new(internal),
        })
    }
}

/// Parses a TOML config, rejecting unknown keys.
pub fn parse_config(path: &Path) -> Result<RawConfig> {
    let text = fs::read_to_string(path).map_err(HarnessError::input(path))?;
    toml::from_str(&text).map_err(|e| {
        let message = e.message().to_owned();
        HarnessError::Parse {
            path: path.to_owned(),
            line: e.span().map(|s| text[..s.start].matches('\n').count() + 1),
            field: message.split('`').nth(1).map(str::to_owned),
            message,
        }
    })
}

/// Reads, validates and completes a config file.
pub fn load_config(path: &Path) -> Result<ExperimentConfig> {
    let base = path.parent().unwrap_or(Path::new("."));
    parse_config(path)?.resolve(base)
}
