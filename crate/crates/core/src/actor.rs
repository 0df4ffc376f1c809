//! The outer natural actor-critic loop: SGD on the compatible function
//! approximation loss followed by `θ ← θ + η w̄`.

use crate::controller::{score, FeatureMap, FscPolicy, InternalStateSpec, PolicyTable};
use crate::critic::{run_mstep_td_in, CriticConfig, DerivedValues};
use crate::math::{dot, ln, norm2, powi, project_ball_in_place, sqrt};
use crate::model::PomdpModel;
use crate::oracle::{default_horizon, JointChain};
use crate::rng::{stream_rng, streams};
use crate::sampling::{InitialLaw, Sampler, WarmStart};
use crate::{Error, Result};
use alloc::format;
use alloc::sync::Arc;
use alloc::vec;
use alloc::vec::Vec;
use rand::Rng;

#[derive(Debug, Clone, PartialEq)]
pub struct ActorConfig {
    /// Outer iterations `T`.
    pub iterations: usize,
    /// SGD steps `N` per outer iteration.
    pub sgd_steps: usize,
    pub eta: f64,
    pub zeta: f64,
    pub radius: f64,
}

impl ActorConfig {
    /// Defaults `η = 1/√T` and `ζ = R√(1−γ)/√(2N r_max)`.
    pub fn new(iterations: usize, sgd_steps: usize, radius: f64, gamma: f64, r_max: f64) -> Result<Self> {
        let cfg = Self {
            iterations,
            sgd_steps,
            eta: 1.0 / sqrt(iterations as f64),
            zeta: radius * sqrt(1.0 - gamma) / sqrt(2.0 * sgd_steps as f64 * r_max),
            radius,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if self.iterations == 0 || self.sgd_steps == 0 {
            return Err(Error::InvalidConfig("actor needs T ≥ 1 and N ≥ 1".into()));
        }
        for (name, v) in [("eta", self.eta), ("zeta", self.zeta), ("radius", self.radius)] {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::InvalidConfig(format!("actor {name} must be positive, got {v}")));
            }
        }
        Ok(())
    }
}

/// `L(w) = (⟨g,w⟩ − Ā)²`
pub fn cfa_loss(w: &[f64], g: &[f64], advantage: f64) -> f64 {
    let r = dot(g, w) - advantage;
    r * r
}

/// `∇_w L = 2(⟨g,w⟩ − Ā) g` with `g = ∇_θ log π_θ(u|y,z)`.
pub fn cfa_loss_gradient(
    w: &[f64],
    sample: (usize, usize, usize),
    policy: &FscPolicy,
    advantage: &DerivedValues,
) -> Vec<f64> {
    let (y, z, u) = sample;
    let mut g = policy.log_policy_gradient(y, z, u);
    let r = dot(&g, w) - advantage.advantage(y, z, u);
    g.iter_mut().for_each(|v| *v *= 2.0 * r);
    g
}

#[derive(Debug, Clone, PartialEq)]
pub struct SgdOutcome {
    /// `w̄ = (1/N) Σ_{k<N} w(k)`
    pub w_avg: Vec<f64>,
    /// Mean loss of the iterates on their own samples.
    pub mean_loss: f64,
    /// Mean of `Ā²` over the same samples, i.e. the loss of `w = 0`.
    pub zero_loss: f64,
}

/// Projected SGD on the compatible function approximation loss from
/// `w(0) = 0`, one fresh `(y,z) ∼ d_ξ^π`, `u ∼ π` sample per step.
pub fn sgd_inner_loop<R: Rng + ?Sized>(
    features: &FeatureMap,
    advantage: &DerivedValues,
    steps: usize,
    zeta: f64,
    radius: f64,
    sampler: &Sampler<'_>,
    rng: &mut R,
) -> Result<SgdOutcome> {
    let d = features.dim();
    let mut w = vec![0.0; d];
    let mut sum = vec![0.0; d];
    let (mut loss, mut zero) = (0.0, 0.0);
    let table = sampler.policy();
    for _ in 0..steps {
        let visit = sampler.sample_visitation(rng)?;
        let (y, z) = (visit.y, visit.z);
        let u = table.sample(y, z, rng);
        let g = score(features, table.probs(y, z), y, z, u);
        let a = advantage.advantage(y, z, u);
        let r = dot(&g, &w) - a;
        loss += r * r;
        zero += a * a;
        for (s, v) in sum.iter_mut().zip(&w) {
            *s += v;
        }
        for (v, gi) in w.iter_mut().zip(&g) {
            *v -= zeta * 2.0 * r * gi;
        }
        project_ball_in_place(&mut w, radius);
    }
    let n = steps as f64;
    sum.iter_mut().for_each(|s| *s /= n);
    Ok(SgdOutcome {
        w_avg: sum,
        mean_loss: loss / n,
        zero_loss: zero / n,
    })
}

/// `θ' = θ + η w̄`
pub fn nac_update(theta: &[f64], w_avg: &[f64], eta: f64) -> Result<Vec<f64>> {
    if theta.len() != w_avg.len() {
        return Err(Error::DimensionMismatch {
            expected: theta.len(),
            found: w_avg.len(),
        });
    }
    Ok(theta.iter().zip(w_avg).map(|(t, w)| t + eta * w).collect())
}

/// `Λ(π) = Σ_{y,z} d_ref(y,z) D_KL(π_ref(·|y,z) ‖ π(·|y,z))`
pub fn kl_potential(pi_ref: &PolicyTable, pi: &PolicyTable, d_ref: &[f64]) -> f64 {
    let (ny, nz) = (pi_ref.n_obs(), pi_ref.n_z());
    let mut acc = 0.0;
    for y in 0..ny {
        for z in 0..nz {
            let w = d_ref[y * nz + z];
            if w == 0.0 {
                continue;
            }
            for (p, q) in pi_ref.probs(y, z).iter().zip(pi.probs(y, z)) {
                if *p > 0.0 {
                    acc += w * p * ln(p / q);
                }
            }
        }
    }
    acc
}

/// Wall-clock source for run logs.
pub trait Clock {
    fn now_seconds(&self) -> f64;
}

/// How `V^{π_t}(ξ)` was obtained.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ValueSource {
    Oracle,
    MonteCarlo,
}

#[derive(Debug, Clone, PartialEq)]
pub struct NacRecord {
    pub t: usize,
    pub v_hat: f64,
    pub v_oracle: Option<f64>,
    pub critic_beta_norm: f64,
    pub critic_td_error: f64,
    pub sgd_loss_mean: f64,
    pub w_norm: f64,
    pub kl_potential: Option<f64>,
    pub seconds: Option<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct NacRunLog {
    /// One record per `π_t`, `t < T`.
    pub records: Vec<NacRecord>,
    pub value_source: ValueSource,
    /// `V(ξ)` of the returned policy `π_T`.
    pub final_value: f64,
    /// Best logged iterate `(t, V)`, the final policy counting as `t = T`.
    pub best: (usize, f64),
    pub best_theta: Vec<f64>,
}

/// Switches for [`run_nac`].
#[derive(Default)]
pub struct NacOptions<'a> {
    /// Replace the critic by the exact `Q^π`.
    pub oracle_mode: bool,
    /// Reference policy for the KL potential.
    pub reference: Option<PolicyTable>,
    /// Rollouts for the Monte Carlo value estimate when the oracle is out of reach.
    pub value_rollouts: Option<usize>,
    /// Never build the joint chain; values come from Monte Carlo.
    pub skip_oracle: bool,
    pub clock: Option<&'a dyn Clock>,
}

const DEFAULT_VALUE_ROLLOUTS: usize = 10_000;

fn estimate_value<R: Rng + ?Sized>(sampler: &Sampler<'_>, rollouts: usize, rng: &mut R) -> Result<f64> {
    let gamma = sampler.model().gamma();
    let horizon = default_horizon(gamma);
    let mut total = 0.0;
    for _ in 0..rollouts {
        let h0 = sampler.sample_h0(rng)?;
        let rec = sampler.rollout((h0.x0, h0.y0, h0.z0), None, horizon, rng)?;
        total += rec.discounted_return(gamma);
    }
    Ok(total / rollouts as f64)
}

/// Runs the natural actor-critic from `θ₀ = 0`. Each outer iteration gets
/// its own random streams derived from `seed`.
#[allow(clippy::too_many_arguments)]
pub fn run_nac(
    model: &PomdpModel,
    internal: Arc<InternalStateSpec>,
    features: Arc<FeatureMap>,
    actor: &ActorConfig,
    critic: &CriticConfig,
    warm: &WarmStart,
    seed: u64,
    options: &NacOptions<'_>,
) -> Result<(FscPolicy, NacRunLog)> {
    actor.validate()?;
    critic.validate()?;
    let start = options.clock.map(|c| c.now_seconds());
    let critic_features = critic.features.clone().unwrap_or_else(|| features.clone());
    let law = InitialLaw::compute(model, &internal, warm)?;
    let mut policy = FscPolicy::max_entropy(features.clone(), internal.clone())?;
    let reference_d = match &options.reference {
        Some(r) => Some(JointChain::new(model, &internal, r, warm)?.visitation().d),
        None => None,
    };
    let rollouts = options.value_rollouts.unwrap_or(DEFAULT_VALUE_ROLLOUTS);
    let mut value_source = ValueSource::Oracle;

    let mut evaluate = |policy: &FscPolicy, table: &PolicyTable, t: usize| -> Result<(f64, Option<f64>, Option<JointChain>)> {
        let chain = if options.skip_oracle {
            None
        } else {
            match JointChain::new(model, &internal, table, warm) {
                Ok(c) => Some(c),
                Err(Error::SizeOverflow { .. }) => None,
                Err(e) => return Err(e),
            }
        };
        match chain {
            Some(chain) => {
                let v = chain.value();
                Ok((v, Some(v), Some(chain)))
            }
            None => {
                value_source = ValueSource::MonteCarlo;
                let sampler = Sampler::new(model, policy, warm)?.without_beliefs();
                let mut rng = stream_rng(seed, streams::VALUE_ESTIMATE, t as u64);
                Ok((estimate_value(&sampler, rollouts, &mut rng)?, None, None))
            }
        }
    };

    let mut records = Vec::with_capacity(actor.iterations);
    let mut best = (0, f64::NEG_INFINITY);
    let mut best_theta = policy.theta().to_vec();
    for t in 0..actor.iterations {
        let table = policy.to_table();
        let (v_hat, v_oracle, chain) = evaluate(&policy, &table, t)?;
        if v_hat > best.1 {
            best = (t, v_hat);
            best_theta = policy.theta().to_vec();
        }
        let sampler = Sampler::new(model, &policy, warm)?.without_beliefs();
        let (advantage, beta_norm, td) = if options.oracle_mode {
            let chain = match chain {
                Some(c) => c,
                None => JointChain::new(model, &internal, &table, warm)?,
            };
            (DerivedValues::from_q(chain.exact().q, &table)?, 0.0, 0.0)
        } else {
            let mut rng = stream_rng(seed, streams::CRITIC, t as u64);
            let mut td_sum = 0.0;
            let est = run_mstep_td_in(&sampler, &law, &critic_features, critic, &mut rng, |s| {
                td_sum += s.td_error.abs()
            })?;
            let q = est.q_table();
            (
                DerivedValues::from_q(q, &table)?,
                norm2(&est.beta_avg),
                td_sum / critic.iterations as f64,
            )
        };
        let mut rng = stream_rng(seed, streams::ACTOR, t as u64);
        let sgd = sgd_inner_loop(&features, &advantage, actor.sgd_steps, actor.zeta, actor.radius, &sampler, &mut rng)?;
        let kl = match (&options.reference, &reference_d) {
            (Some(r), Some(d)) => Some(kl_potential(r, &table, d)),
            _ => None,
        };
        records.push(NacRecord {
            t,
            v_hat,
            v_oracle,
            critic_beta_norm: beta_norm,
            critic_td_error: td,
            sgd_loss_mean: sgd.mean_loss,
            w_norm: norm2(&sgd.w_avg),
            kl_potential: kl,
            seconds: options.clock.zip(start).map(|(c, s)| c.now_seconds() - s),
        });
        policy = policy.with_theta(nac_update(policy.theta(), &sgd.w_avg, actor.eta)?)?;
    }
    let (final_value, _, _) = evaluate(&policy, &policy.to_table(), actor.iterations)?;
    if final_value > best.1 {
        best = (actor.iterations, final_value);
        best_theta = policy.theta().to_vec();
    }
    Ok((
        policy,
        NacRunLog {
            records,
            value_source,
            final_value,
            best,
            best_theta,
        },
    ))
}

/// `O(η²R²)` slack allowed per step in the KL-potential drift.
pub fn kl_drift_slack(eta: f64, radius: f64) -> f64 {
    powi(eta * radius, 2)
}
