//! Multi-step TD learning with linear function approximation and projection
//! onto an ℓ₂ ball.

use crate::controller::{FeatureMap, FscPolicy, PolicyTable};
use crate::math::{dot, norm2, powi, project_ball_in_place, sqrt};
use crate::model::PomdpModel;
use crate::rng::sample_index;
use crate::sampling::{InitialLaw, Sampler, TrajectoryRecord, WarmStart};
use crate::{Error, Result};
use alloc::format;
use alloc::sync::Arc;
use alloc::vec;
use alloc::vec::Vec;
use rand::Rng;

#[derive(Debug, Clone, PartialEq)]
pub struct CriticConfig {
    /// Lookahead `m ≥ 1`.
    pub m: usize,
    /// Number of iterations `K`.
    pub iterations: usize,
    pub alpha: f64,
    pub radius: f64,
    /// Critic features; `None` uses the policy's own features.
    pub features: Option<Arc<FeatureMap>>,
}

impl CriticConfig {
    /// Step size defaults to `1/√K`.
    pub fn new(m: usize, iterations: usize, radius: f64) -> Result<Self> {
        let cfg = Self {
            m,
            iterations,
            alpha: 1.0 / sqrt(iterations as f64),
            radius,
            features: None,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn with_alpha(mut self, alpha: f64) -> Result<Self> {
        self.alpha = alpha;
        self.validate()?;
        Ok(self)
    }

    pub fn with_features(mut self, features: Arc<FeatureMap>) -> Self {
        self.features = Some(features);
        self
    }

    pub fn validate(&self) -> Result<()> {
        if self.m == 0 || self.iterations == 0 {
            return Err(Error::InvalidConfig("critic needs m ≥ 1 and K ≥ 1".into()));
        }
        if !(self.radius > 0.0 && self.radius.is_finite()) {
            return Err(Error::InvalidConfig(format!("critic radius must be positive, got {}", self.radius)));
        }
        if !(self.alpha > 0.0 && self.alpha.is_finite()) {
            return Err(Error::InvalidConfig(format!("critic step size must be positive, got {}", self.alpha)));
        }
        Ok(())
    }
}

/// `M(γ,R) = r_max(1−γ^m)/(1−γ) + (1+γ^m)R`, the bound on every semigradient.
pub fn m_constant(r_max: f64, gamma: f64, m: usize, radius: f64) -> f64 {
    let gm = powi(gamma, m as i32);
    r_max * (1.0 - gm) / (1.0 - gamma) + (1.0 + gm) * radius
}

#[derive(Debug, Clone, PartialEq)]
pub struct CriticEstimate {
    /// `β̄ = (1/K) Σ_{t<K} β_t`
    pub beta_avg: Vec<f64>,
    pub beta_final: Vec<f64>,
    pub m_const: f64,
    pub features: Arc<FeatureMap>,
}

impl CriticEstimate {
    /// `Q̄(y,z,u) = ⟨β̄, ψ(y,z,u)⟩`
    pub fn q(&self, y: usize, z: usize, u: usize) -> f64 {
        self.features.dot(&self.beta_avg, y, z, u)
    }

    /// `Q̄` tabulated over `(y,z,u)`.
    pub fn q_table(&self) -> Vec<f64> {
        let (ny, nz, nu) = self.features.shape();
        let mut out = Vec::with_capacity(ny * nz * nu);
        for y in 0..ny {
            for z in 0..nz {
                for u in 0..nu {
                    out.push(self.q(y, z, u));
                }
            }
        }
        out
    }
}

/// m-step TD error `Σ_{k<m} γ^k r_k + γ^m⟨β,ψ_m⟩ − ⟨β,ψ_0⟩`.
pub fn td_error(beta: &[f64], traj: &TrajectoryRecord, features: &FeatureMap, gamma: f64) -> f64 {
    let m = traj.len();
    let (y0, z0, u0) = (traj.observations[0], traj.internal_states[0], traj.actions[0]);
    let (ym, zm) = (traj.observations[m], traj.internal_states[m]);
    traj.discounted_return(gamma) + powi(gamma, m as i32) * features.dot(beta, ym, zm, traj.bootstrap_action)
        - features.dot(beta, y0, z0, u0)
}

/// Semigradient `g = δ·ψ(y₀,z₀,u₀)` with `δ` the m-step TD error.
pub fn td_semigradient(beta: &[f64], traj: &TrajectoryRecord, features: &FeatureMap, gamma: f64) -> Vec<f64> {
    let delta = td_error(beta, traj, features, gamma);
    let mut g = vec![0.0; beta.len()];
    features.add_scaled(&mut g, delta, traj.observations[0], traj.internal_states[0], traj.actions[0]);
    g
}

/// Per-iteration view handed to observers of [`run_mstep_td_with`].
#[derive(Debug, Clone, Copy)]
pub struct CriticStep<'a> {
    pub iter: usize,
    /// `β_{t+1}` after the projected step.
    pub beta: &'a [f64],
    pub td_error: f64,
    pub grad_norm: f64,
}

/// Projected m-step TD on a prebuilt sampler and prior table so that
/// repeated evaluations can share them. `x₀` is drawn from `b₀(·|y,z)`, or
/// taken from the visitation draw where that prior is undefined.
pub fn run_mstep_td_in<R: Rng + ?Sized>(
    sampler: &Sampler<'_>,
    law: &InitialLaw,
    features: &FeatureMap,
    config: &CriticConfig,
    rng: &mut R,
    mut observer: impl FnMut(&CriticStep<'_>),
) -> Result<CriticEstimate> {
    config.validate()?;
    let model = sampler.model();
    let gamma = model.gamma();
    let d = features.dim();
    let mut beta = vec![0.0; d];
    let mut sum = vec![0.0; d];
    for t in 0..config.iterations {
        let visit = sampler.sample_visitation(rng)?;
        let x0 = match law.prior(visit.y, visit.z) {
            Some(b0) => sample_index(b0, rng),
            None => visit.x,
        };
        let traj = sampler.rollout((x0, visit.y, visit.z), None, config.m, rng)?;
        let delta = td_error(&beta, &traj, features, gamma);
        for (s, b) in sum.iter_mut().zip(&beta) {
            *s += b;
        }
        let (y0, z0, u0) = (traj.observations[0], traj.internal_states[0], traj.actions[0]);
        let psi_norm = norm2(&features.feature(y0, z0, u0));
        features.add_scaled(&mut beta, config.alpha * delta, y0, z0, u0);
        project_ball_in_place(&mut beta, config.radius);
        observer(&CriticStep {
            iter: t,
            beta: &beta,
            td_error: delta,
            grad_norm: delta.abs() * psi_norm,
        });
    }
    let k = config.iterations as f64;
    sum.iter_mut().for_each(|s| *s /= k);
    Ok(CriticEstimate {
        beta_avg: sum,
        beta_final: beta,
        m_const: m_constant(model.r_max(), gamma, config.m, config.radius),
        features: Arc::new(features.clone()),
    })
}

/// [`run_mstep_td`] with a per-iteration observer.
pub fn run_mstep_td_with<R: Rng + ?Sized>(
    policy: &FscPolicy,
    model: &PomdpModel,
    config: &CriticConfig,
    warm: &WarmStart,
    rng: &mut R,
    observer: impl FnMut(&CriticStep<'_>),
) -> Result<CriticEstimate> {
    let features = config.features.clone().unwrap_or_else(|| policy.features().clone());
    let law = InitialLaw::compute(model, policy.internal(), warm)?;
    let sampler = Sampler::new(model, policy, warm)?.without_beliefs();
    run_mstep_td_in(&sampler, &law, &features, config, rng, observer)
}

/// Runs `K` iterations of projected m-step TD for a fixed policy, starting
/// from `β₀ = 0`.
pub fn run_mstep_td<R: Rng + ?Sized>(
    policy: &FscPolicy,
    model: &PomdpModel,
    config: &CriticConfig,
    warm: &WarmStart,
    rng: &mut R,
) -> Result<CriticEstimate> {
    run_mstep_td_with(policy, model, config, warm, rng, |_| {})
}

/// Tables `Q̄(y,z,u)`, `V̄(y,z) = Σ_u π Q̄` and `Ā = Q̄ − V̄`.
#[derive(Debug, Clone, PartialEq)]
pub struct DerivedValues {
    n_z: usize,
    n_actions: usize,
    q: Vec<f64>,
    v: Vec<f64>,
    a: Vec<f64>,
}

impl DerivedValues {
    /// `q` is laid out as `(y·|Z| + z)·|U| + u`, matching `policy`.
    pub fn from_q(q: Vec<f64>, policy: &PolicyTable) -> Result<Self> {
        let (ny, nz, nu) = (policy.n_obs(), policy.n_z(), policy.n_actions());
        if q.len() != ny * nz * nu {
            return Err(Error::DimensionMismatch {
                expected: ny * nz * nu,
                found: q.len(),
            });
        }
        let mut v = vec![0.0; ny * nz];
        let mut a = vec![0.0; q.len()];
        for y in 0..ny {
            for z in 0..nz {
                let s = y * nz + z;
                let p = policy.probs(y, z);
                let qs = &q[s * nu..(s + 1) * nu];
                v[s] = dot(p, qs);
                for u in 0..nu {
                    a[s * nu + u] = qs[u] - v[s];
                }
            }
        }
        Ok(Self {
            n_z: nz,
            n_actions: nu,
            q,
            v,
            a,
        })
    }

    pub fn q(&self, y: usize, z: usize, u: usize) -> f64 {
        self.q[(y * self.n_z + z) * self.n_actions + u]
    }
    pub fn v(&self, y: usize, z: usize) -> f64 {
        self.v[y * self.n_z + z]
    }
    pub fn advantage(&self, y: usize, z: usize, u: usize) -> f64 {
        self.a[(y * self.n_z + z) * self.n_actions + u]
    }
    pub fn q_table(&self) -> &[f64] {
        &self.q
    }
    pub fn v_table(&self) -> &[f64] {
        &self.v
    }
    pub fn advantage_table(&self) -> &[f64] {
        &self.a
    }
}

/// Value tables derived from a critic estimate for `policy`.
pub fn derived_values(estimate: &CriticEstimate, policy: &FscPolicy) -> Result<DerivedValues> {
    DerivedValues::from_q(estimate.q_table(), &policy.to_table())
}
