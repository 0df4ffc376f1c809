//! JSON formats for models, controllers and policies.

use std::fs;
use std::path::Path;
use std::sync::Arc;

use pomdp_nac_core::controller::{tabular_features, FscPolicy, InternalKind, InternalStateSpec, PolicyTable};
use pomdp_nac_core::model::PomdpModel;
use serde::{Deserialize, Serialize};

use crate::error::{HarnessError, InModule, Result};

/// On-disk model. Arrays are row-major: `transition[x][u][x']`,
/// `channel[x][y]`, `reward[x][u]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelFile {
    pub states: usize,
    pub actions: usize,
    pub observations: usize,
    pub gamma: f64,
    pub transition: Vec<Vec<Vec<f64>>>,
    pub channel: Vec<Vec<f64>>,
    pub reward: Vec<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub name: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub r_max: Option<f64>,
}

fn check_shape<T>(errors: &mut Vec<String>, what: &str, v: &[T], want: usize) {
    if v.len() != want {
        errors.push(format!("{what} has {} entries, expected {want}", v.len()));
    }
}

impl ModelFile {
    pub fn from_model(m: &PomdpModel) -> Self {
        let (nx, nu, ny) = (m.n_states(), m.n_actions(), m.n_obs());
        Self {
            states: nx,
            actions: nu,
            observations: ny,
            gamma: m.gamma(),
            transition: (0..nx)
                .map(|x| (0..nu).map(|u| m.transition_row(x, u).to_vec()).collect())
                .collect(),
            channel: (0..nx).map(|x| m.channel_row(x).to_vec()).collect(),
            reward: m.reward_data().chunks(nu).map(<[f64]>::to_vec).collect(),
            name: m.name().map(str::to_owned),
            r_max: Some(m.r_max()),
        }
    }

    pub fn into_model(self) -> Result<PomdpModel> {
        let (nx, nu, ny) = (self.states, self.actions, self.observations);
        let mut errors = Vec::new();
        check_shape(&mut errors, "transition", &self.transition, nx);
        for (x, per_x) in self.transition.iter().enumerate() {
            check_shape(&mut errors, &format!("transition[{x}]"), per_x, nu);
            for (u, row) in per_x.iter().enumerate() {
                check_shape(&mut errors, &format!("transition[{x}][{u}]"), row, nx);
            }
        }
        check_shape(&mut errors, "channel", &self.channel, nx);
        for (x, row) in self.channel.iter().enumerate() {
            check_shape(&mut errors, &format!("channel[{x}]"), row, ny);
        }
        check_shape(&mut errors, "reward", &self.reward, nx);
        for (x, row) in self.reward.iter().enumerate() {
            check_shape(&mut errors, &format!("reward[{x}]"), row, nu);
        }
        if !errors.is_empty() {
            return Err(HarnessError::Validation(errors));
        }
        let transition = self.transition.into_iter().flatten().flatten().collect();
        let channel = self.channel.into_iter().flatten().collect();
        let reward = self.reward.into_iter().flatten().collect();
        let mut model = PomdpModel::new(nx, nu, ny, self.gamma, transition, channel, reward).in_module("pomdp-core")?;
        if let Some(r) = self.r_max {
            model = model.with_r_max(r).in_module("pomdp-core")?;
        }
        if let Some(name) = self.name {
            model = model.with_name(name);
        }
        Ok(model)
    }
}

/// Internal-state dynamics as stored in policy and controller files.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum ControllerFile {
    SlidingBlock { n: usize },
    /// `internal_kernel[z][y][u][z']`
    Generic { internal_kernel: Vec<Vec<Vec<Vec<f64>>>> },
}

impl ControllerFile {
    pub fn from_spec(spec: &InternalStateSpec) -> Self {
        match spec.kind() {
            InternalKind::SlidingBlock { n } => Self::SlidingBlock { n: *n },
            InternalKind::Generic { kernel } => {
                let (nz, ny, nu) = (spec.n_z(), spec.n_obs(), spec.n_actions());
                let internal_kernel = (0..nz)
                    .map(|z| {
                        (0..ny)
                            .map(|y| {
                                (0..nu)
                                    .map(|u| {
                                        let at = ((z * ny + y) * nu + u) * nz;
                                        kernel[at..at + nz].to_vec()
                                    })
                                    .collect()
                            })
                            .collect()
                    })
                    .collect();
                Self::Generic { internal_kernel }
            }
        }
    }

    pub fn to_spec(&self, model: &PomdpModel) -> Result<InternalStateSpec> {
        let (ny, nu) = (model.n_obs(), model.n_actions());
        match self {
            Self::SlidingBlock { n } => InternalStateSpec::sliding_block(*n, ny, nu).in_module("controllers"),
            Self::Generic { internal_kernel } => {
                let nz = internal_kernel.len();
                let mut errors = Vec::new();
                for (z, per_z) in internal_kernel.iter().enumerate() {
                    check_shape(&mut errors, &format!("internal_kernel[{z}]"), per_z, ny);
                    for (y, per_y) in per_z.iter().enumerate() {
                        check_shape(&mut errors, &format!("internal_kernel[{z}][{y}]"), per_y, nu);
                        for (u, row) in per_y.iter().enumerate() {
                            check_shape(&mut errors, &format!("internal_kernel[{z}][{y}][{u}]"), row, nz);
                        }
                    }
                }
                if !errors.is_empty() {
                    return Err(HarnessError::Validation(errors));
                }
                let flat = internal_kernel.iter().flatten().flatten().flatten().copied().collect();
                InternalStateSpec::generic(nz, ny, nu, flat).in_module("controllers")
            }
        }
    }
}

/// A stationary controller. With `probs` (`[y][z][u]`) the table is used as
/// given; otherwise `theta` parametrizes the tabular softmax policy, and
/// with neither the policy is uniform.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PolicyFile {
    pub controller: ControllerFile,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub theta: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub probs: Option<Vec<Vec<Vec<f64>>>>,
}

/// A policy resolved against a model.
#[derive(Debug, Clone)]
pub struct LoadedPolicy {
    pub internal: Arc<InternalStateSpec>,
    pub table: PolicyTable,
}

impl LoadedPolicy {
    /// Uniform policy on a sliding-block controller.
    pub fn uniform_sliding_block(model: &PomdpModel, n: usize) -> Result<Self> {
        let internal = InternalStateSpec::sliding_block(n, model.n_obs(), model.n_actions()).in_module("controllers")?;
        let table = PolicyTable::uniform(model.n_obs(), internal.n_z(), model.n_actions());
        Ok(Self {
            internal: Arc::new(internal),
            table,
        })
    }
}

impl PolicyFile {
    pub fn from_policy(policy: &FscPolicy) -> Self {
        let table = policy.to_table();
        let (ny, nz) = (table.n_obs(), table.n_z());
        Self {
            controller: ControllerFile::from_spec(policy.internal()),
            theta: Some(policy.theta().to_vec()),
            probs: Some(
                (0..ny)
                    .map(|y| (0..nz).map(|z| table.probs(y, z).to_vec()).collect())
                    .collect(),
            ),
        }
    }

    pub fn resolve(&self, model: &PomdpModel) -> Result<LoadedPolicy> {
        let internal = Arc::new(self.controller.to_spec(model)?);
        let (ny, nz, nu) = (model.n_obs(), internal.n_z(), model.n_actions());
        let table = match (&self.probs, &self.theta) {
            (Some(probs), _) => {
                let mut errors = Vec::new();
                check_shape(&mut errors, "probs", probs, ny);
                for (y, per_y) in probs.iter().enumerate() {
                    check_shape(&mut errors, &format!("probs[{y}]"), per_y, nz);
                    for (z, row) in per_y.iter().enumerate() {
                        check_shape(&mut errors, &format!("probs[{y}][{z}]"), row, nu);
                    }
                }
                if !errors.is_empty() {
                    return Err(HarnessError::Validation(errors));
                }
                let flat = probs.iter().flatten().flatten().copied().collect();
                PolicyTable::new(ny, nz, nu, flat).in_module("controllers")?
            }
            (None, Some(theta)) => {
                let features = Arc::new(tabular_features(ny, nz, nu).in_module("controllers")?);
                FscPolicy::new(theta.clone(), features, internal.clone())
                    .in_module("controllers")?
                    .to_table()
            }
            (None, None) => PolicyTable::uniform(ny, nz, nu),
        };
        Ok(LoadedPolicy { internal, table })
    }
}

fn read(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(HarnessError::input(path))
}

fn parse_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T> {
    let text = read(path)?;
    serde_json::from_str(&text).map_err(|e| HarnessError::Parse {
        path: path.to_owned(),
        line: Some(e.line()),
        field: None,
        message: e.to_string(),
    })
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value).expect("plain data serializes");
    text.push('\n');
    fs::write(path, text).map_err(HarnessError::io(path))
}

pub fn load_model(path: &Path) -> Result<PomdpModel> {
    parse_json::<ModelFile>(path)?.into_model()
}

pub fn save_model(path: &Path, model: &PomdpModel) -> Result<()> {
    write_json(path, &ModelFile::from_model(model))
}

pub fn load_controller(path: &Path, model: &PomdpModel) -> Result<InternalStateSpec> {
    parse_json::<ControllerFile>(path)?.to_spec(model)
}

pub fn load_policy(path: &Path, model: &PomdpModel) -> Result<LoadedPolicy> {
    parse_json::<PolicyFile>(path)?.resolve(model)
}

pub fn save_policy(path: &Path, policy: &FscPolicy) -> Result<()> {
    write_json(path, &PolicyFile::from_policy(policy))
}
