//! Trajectory rollout, the warm-start sampler for initial histories and the
//! geometric-horizon sampler for the discounted visitation distribution.

use crate::controller::{FscPolicy, InternalStateSpec, PolicyTable};
use crate::math::{ceil, ln};
use crate::model::{filter_step_slice, Belief, History, PomdpModel};
use crate::rng::sample_index;
use crate::{Error, Result};
use alloc::vec;
use alloc::vec::Vec;
use rand::Rng;

/// Truncation level of the geometric horizon sampler.
pub const HORIZON_TAIL: f64 = 1e-12;

/// Exploration setup used to generate `h₀`: start from `x₋ₙ ∼ ϑ`, observe,
/// then follow the reactive policy `π̃(u|y)` for `n` steps.
#[derive(Debug, Clone, PartialEq)]
pub struct WarmStart {
    explore: Vec<f64>,
    initial: Vec<f64>,
    n_obs: usize,
    n_actions: usize,
    block_length: usize,
}

impl WarmStart {
    /// Uniform `π̃` and uniform `ϑ`.
    pub fn uniform(model: &PomdpModel, block_length: usize) -> Self {
        let (nx, ny, nu) = (model.n_states(), model.n_obs(), model.n_actions());
        Self {
            explore: vec![1.0 / nu as f64; ny * nu],
            initial: vec![1.0 / nx as f64; nx],
            n_obs: ny,
            n_actions: nu,
            block_length,
        }
    }

    /// Uniform warm start whose length matches the controller: the block
    /// length for sliding-block controllers, 0 otherwise.
    pub fn for_controller(model: &PomdpModel, internal: &InternalStateSpec) -> Self {
        Self::uniform(model, internal.block_length().unwrap_or(0))
    }

    /// Replaces `π̃` by a reactive table `explore[y·|U| + u]`.
    pub fn with_explore(mut self, explore: Vec<f64>) -> Result<Self> {
        PolicyTable::new(self.n_obs, 1, self.n_actions, explore.clone())?;
        self.explore = explore;
        Ok(self)
    }

    /// Replaces `ϑ`.
    pub fn with_initial(mut self, initial: Vec<f64>) -> Result<Self> {
        if initial.len() != self.initial.len() {
            return Err(Error::DimensionMismatch {
                expected: self.initial.len(),
                found: initial.len(),
            });
        }
        Belief::new(initial.clone())?;
        self.initial = initial;
        Ok(self)
    }

    pub fn block_length(&self) -> usize {
        self.block_length
    }
    pub fn initial(&self) -> &[f64] {
        &self.initial
    }
    pub fn explore(&self, y: usize) -> &[f64] {
        &self.explore[y * self.n_actions..(y + 1) * self.n_actions]
    }

    fn check(&self, model: &PomdpModel, internal: &InternalStateSpec) -> Result<()> {
        if self.initial.len() != model.n_states()
            || self.n_obs != model.n_obs()
            || self.n_actions != model.n_actions()
            || internal.n_obs() != model.n_obs()
            || internal.n_actions() != model.n_actions()
        {
            return Err(Error::InvalidModel("warm start, controller and model sizes disagree".into()));
        }
        if let Some(n) = internal.block_length() {
            if self.block_length < n {
                return Err(Error::InvalidConfig(
                    "warm start is shorter than the controller block length".into(),
                ));
            }
        }
        Ok(())
    }
}

/// `b₋ₙ(·|y) ∝ ϑ(·)Φ(y|·)`.
pub fn observation_posterior(model: &PomdpModel, initial: &[f64], y: usize) -> Result<Vec<f64>> {
    let mut b: Vec<f64> = initial
        .iter()
        .enumerate()
        .map(|(x, p)| p * model.channel(x, y))
        .collect();
    let s: f64 = b.iter().sum();
    if !(s > 0.0) {
        return Err(Error::DegenerateObservation {
            observation: y,
            step: Some(0),
        });
    }
    b.iter_mut().for_each(|v| *v /= s);
    Ok(b)
}

/// Prior attached to a window `(y_{−n}..y_{−1}, u_{−n}..u_{−1})` and current
/// observation `y`: filter the window starting from the `ϑ`-posterior of the
/// oldest observation.
pub fn window_prior(
    model: &PomdpModel,
    initial: &[f64],
    ys: &[usize],
    us: &[usize],
    y: usize,
) -> Result<Vec<f64>> {
    let first = ys.first().copied().unwrap_or(y);
    let mut b = observation_posterior(model, initial, first)?;
    let mut next = vec![0.0; b.len()];
    for (k, &u) in us.iter().enumerate() {
        let obs = if k + 1 < ys.len() { ys[k + 1] } else { y };
        filter_step_slice(model, &b, obs, u, &mut next).map_err(|_| Error::DegenerateObservation {
            observation: obs,
            step: Some(k + 1),
        })?;
        core::mem::swap(&mut b, &mut next);
    }
    Ok(b)
}

/// Exact law of `(x₀, y₀, z₀)` produced by the warm start, the marginal
/// `ξ(y,z)` and the prior table `b₀(·|y,z)`.
///
/// For sliding-block controllers `b₀(·|y,z)` is the window filter and is
/// defined whenever the window is consistent with the model. Otherwise it is
/// the conditional `p₀(·|y,z)` and defined where `ξ(y,z) > 0`.
#[derive(Debug, Clone, PartialEq)]
pub struct InitialLaw {
    n_states: usize,
    n_z: usize,
    joint: Vec<f64>,
    xi: Vec<f64>,
    prior: Vec<f64>,
    defined: Vec<bool>,
}

impl InitialLaw {
    pub fn compute(model: &PomdpModel, internal: &InternalStateSpec, warm: &WarmStart) -> Result<Self> {
        warm.check(model, internal)?;
        let (nx, ny, nz, nu) = (model.n_states(), model.n_obs(), internal.n_z(), model.n_actions());
        let idx = |x: usize, y: usize, z: usize| (y * nz + z) * nx + x;
        let mut p = vec![0.0; nx * ny * nz];
        for x in 0..nx {
            for y in 0..ny {
                p[idx(x, y, 0)] = warm.initial[x] * model.channel(x, y);
            }
        }
        for _ in 0..warm.block_length {
            let mut q = vec![0.0; p.len()];
            for y in 0..ny {
                for z in 0..nz {
                    for x in 0..nx {
                        let w = p[idx(x, y, z)];
                        if w == 0.0 {
                            continue;
                        }
                        for u in 0..nu {
                            let wu = w * warm.explore(y)[u];
                            if wu == 0.0 {
                                continue;
                            }
                            internal.for_each_next(z, y, u, |zn, pz| {
                                for (xn, &px) in model.transition_row(x, u).iter().enumerate() {
                                    if px == 0.0 {
                                        continue;
                                    }
                                    for yn in 0..ny {
                                        q[idx(xn, yn, zn)] += wu * pz * px * model.channel(xn, yn);
                                    }
                                }
                            });
                        }
                    }
                }
            }
            p = q;
        }
        let xi: Vec<f64> = p.chunks(nx).map(|c| c.iter().sum()).collect();
        let mut prior = vec![0.0; p.len()];
        let mut defined = vec![false; ny * nz];
        for s in 0..ny * nz {
            let (y, z) = (s / nz, s % nz);
            let row = &mut prior[s * nx..(s + 1) * nx];
            if internal.block_length().is_some() {
                let (ys, us) = internal.decode_window(z);
                if let Ok(b) = window_prior(model, &warm.initial, &ys, &us, y) {
                    row.copy_from_slice(&b);
                    defined[s] = true;
                }
            } else if xi[s] > 0.0 {
                for x in 0..nx {
                    row[x] = p[s * nx + x] / xi[s];
                }
                defined[s] = true;
            }
        }
        Ok(Self {
            n_states: nx,
            n_z: nz,
            joint: p,
            xi,
            prior,
            defined,
        })
    }

    /// `p₀(x,y,z)` stored at `(y·|Z| + z)·|X| + x`.
    pub fn joint(&self) -> &[f64] {
        &self.joint
    }

    /// `ξ(y,z)` stored at `y·|Z| + z`.
    pub fn xi(&self) -> &[f64] {
        &self.xi
    }

    pub fn xi_at(&self, y: usize, z: usize) -> f64 {
        self.xi[y * self.n_z + z]
    }

    /// `b₀(·|y,z)`, or `None` where it is undefined.
    pub fn prior(&self, y: usize, z: usize) -> Option<&[f64]> {
        let s = y * self.n_z + z;
        self.defined[s].then(|| &self.prior[s * self.n_states..(s + 1) * self.n_states])
    }
}

/// A sampled initial history with its prior and the realized hidden state.
#[derive(Debug, Clone, PartialEq)]
pub struct InitialSample {
    pub y0: usize,
    pub z0: usize,
    pub x0: usize,
    pub prior: Belief,
}

/// A draw from the visitation distribution together with the hidden state
/// and the exact belief at the sampled time.
#[derive(Debug, Clone, PartialEq)]
pub struct VisitSample {
    pub x: usize,
    pub y: usize,
    pub z: usize,
    pub horizon: usize,
    pub belief: Option<Vec<f64>>,
}

/// Record of an `m`-step rollout. `bootstrap_action` is `u_m ∼ π(·|y_m,z_m)`,
/// drawn after the last transition.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct TrajectoryRecord {
    pub states: Vec<usize>,
    pub observations: Vec<usize>,
    pub internal_states: Vec<usize>,
    pub actions: Vec<usize>,
    pub rewards: Vec<f64>,
    pub beliefs: Vec<Vec<f64>>,
    pub bootstrap_action: usize,
}

impl TrajectoryRecord {
    pub fn len(&self) -> usize {
        self.actions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.actions.is_empty()
    }

    /// `Σ_k γ^k r_k`
    pub fn discounted_return(&self, gamma: f64) -> f64 {
        let mut acc = 0.0;
        let mut g = 1.0;
        for r in &self.rewards {
            acc += g * r;
            g *= gamma;
        }
        acc
    }

    /// Observation and action history of the rollout.
    pub fn history(&self) -> History {
        let mut h = History::new(self.observations[0], self.internal_states[0]);
        for k in 0..self.len() {
            h.push(self.actions[k], self.internal_states[k + 1], self.observations[k + 1]);
        }
        h
    }
}

/// Smallest `K` with `γ^K ≤ 10⁻¹²`.
pub fn horizon_cap(gamma: f64) -> usize {
    let k = ceil(ln(HORIZON_TAIL) / ln(gamma));
    if k.is_finite() && k > 0.0 {
        k as usize
    } else {
        0
    }
}

/// `k ∼ Geometric(1−γ)` on `{0..=cap}`, renormalized.
pub fn sample_horizon<R: Rng + ?Sized>(gamma: f64, cap: usize, rng: &mut R) -> usize {
    let lg = ln(gamma);
    loop {
        let u = 1.0 - rng.random::<f64>();
        let k = ln(u) / lg;
        if k < (cap + 1) as f64 {
            return k as usize;
        }
    }
}

/// Generative sampler for one fixed stationary FSC policy.
#[derive(Debug, Clone)]
pub struct Sampler<'a> {
    model: &'a PomdpModel,
    internal: &'a InternalStateSpec,
    warm: &'a WarmStart,
    policy: PolicyTable,
    cap: usize,
    track_beliefs: bool,
}

impl<'a> Sampler<'a> {
    pub fn new(model: &'a PomdpModel, policy: &'a FscPolicy, warm: &'a WarmStart) -> Result<Self> {
        Self::from_table(model, policy.internal(), policy.to_table(), warm)
    }

    pub fn from_table(
        model: &'a PomdpModel,
        internal: &'a InternalStateSpec,
        policy: PolicyTable,
        warm: &'a WarmStart,
    ) -> Result<Self> {
        warm.check(model, internal)?;
        if (policy.n_obs(), policy.n_z(), policy.n_actions()) != (model.n_obs(), internal.n_z(), model.n_actions()) {
            return Err(Error::InvalidModel("policy table does not match the controller".into()));
        }
        Ok(Self {
            model,
            internal,
            warm,
            policy,
            cap: horizon_cap(model.gamma()),
            track_beliefs: true,
        })
    }

    /// Skips exact belief tracking; rollouts then carry no beliefs.
    pub fn without_beliefs(mut self) -> Self {
        self.track_beliefs = false;
        self
    }

    pub fn policy(&self) -> &PolicyTable {
        &self.policy
    }
    pub fn model(&self) -> &PomdpModel {
        self.model
    }
    pub fn internal(&self) -> &InternalStateSpec {
        self.internal
    }
    pub fn horizon_cap(&self) -> usize {
        self.cap
    }

    /// One transition of `(x,y,z)` under action `u`.
    pub fn step<R: Rng + ?Sized>(&self, x: usize, y: usize, z: usize, u: usize, rng: &mut R) -> (usize, usize, usize) {
        let zn = self.internal.step(z, y, u, rng);
        let xn = sample_index(self.model.transition_row(x, u), rng);
        let yn = sample_index(self.model.channel_row(xn), rng);
        (xn, yn, zn)
    }

    fn track(&self, b: &mut Vec<f64>, scratch: &mut Vec<f64>, y: usize, u: usize) -> Result<()> {
        if self.track_beliefs {
            filter_step_slice(self.model, b, y, u, scratch)?;
            core::mem::swap(b, scratch);
        }
        Ok(())
    }

    /// Draws `h₀` via the warm start. The prior is the exact filter along the
    /// warm-start history.
    pub fn sample_h0<R: Rng + ?Sized>(&self, rng: &mut R) -> Result<InitialSample> {
        let m = self.model;
        let mut x = sample_index(self.warm.initial(), rng);
        let mut y = sample_index(m.channel_row(x), rng);
        let mut z = 0;
        let mut b = if self.track_beliefs {
            observation_posterior(m, self.warm.initial(), y)?
        } else {
            Vec::new()
        };
        let mut scratch = vec![0.0; b.len()];
        for _ in 0..self.warm.block_length() {
            let u = sample_index(self.warm.explore(y), rng);
            let zn = self.internal.step(z, y, u, rng);
            x = sample_index(m.transition_row(x, u), rng);
            let yn = sample_index(m.channel_row(x), rng);
            self.track(&mut b, &mut scratch, yn, u)?;
            y = yn;
            z = zn;
        }
        Ok(InitialSample {
            y0: y,
            z0: z,
            x0: x,
            prior: Belief::from_normalized(b),
        })
    }

    /// Draws `(y,z) ∼ d_ξ^π`: a fresh `h₀`, then `k ∼ Geometric(1−γ)` steps.
    pub fn sample_visitation<R: Rng + ?Sized>(&self, rng: &mut R) -> Result<VisitSample> {
        let h0 = self.sample_h0(rng)?;
        let k = sample_horizon(self.model.gamma(), self.cap, rng);
        let (mut x, mut y, mut z) = (h0.x0, h0.y0, h0.z0);
        let mut b = h0.prior.into_probs();
        let mut scratch = vec![0.0; b.len()];
        for _ in 0..k {
            let u = self.policy.sample(y, z, rng);
            (x, y, z) = self.step(x, y, z, u, rng);
            self.track(&mut b, &mut scratch, y, u)?;
        }
        Ok(VisitSample {
            x,
            y,
            z,
            horizon: k,
            belief: self.track_beliefs.then_some(b),
        })
    }

    /// Rolls `steps` transitions from `(x₀,y₀,z₀)` with prior `b₀` (ignored
    /// when beliefs are not tracked).
    pub fn rollout<R: Rng + ?Sized>(
        &self,
        start: (usize, usize, usize),
        prior: Option<&[f64]>,
        steps: usize,
        rng: &mut R,
    ) -> Result<TrajectoryRecord> {
        let m = self.model;
        let (mut x, mut y, mut z) = start;
        let mut rec = TrajectoryRecord {
            states: Vec::with_capacity(steps + 1),
            observations: Vec::with_capacity(steps + 1),
            internal_states: Vec::with_capacity(steps + 1),
            actions: Vec::with_capacity(steps),
            rewards: Vec::with_capacity(steps),
            beliefs: Vec::new(),
            bootstrap_action: 0,
        };
        let mut b = match (self.track_beliefs, prior) {
            (true, Some(p)) => p.to_vec(),
            (true, None) => Belief::point(m.n_states(), x).into_probs(),
            (false, _) => Vec::new(),
        };
        let mut scratch = vec![0.0; b.len()];
        rec.states.push(x);
        rec.observations.push(y);
        rec.internal_states.push(z);
        if self.track_beliefs {
            rec.beliefs.push(b.clone());
        }
        for _ in 0..steps {
            let u = self.policy.sample(y, z, rng);
            rec.actions.push(u);
            rec.rewards.push(m.reward(x, u));
            (x, y, z) = self.step(x, y, z, u, rng);
            rec.states.push(x);
            rec.observations.push(y);
            rec.internal_states.push(z);
            if self.track_beliefs {
                self.track(&mut b, &mut scratch, y, u)?;
                rec.beliefs.push(b.clone());
            }
        }
        rec.bootstrap_action = self.policy.sample(y, z, rng);
        Ok(rec)
    }
}

/// Convenience wrapper around [`Sampler::sample_h0`].
pub fn sample_h0<R: Rng + ?Sized>(
    warm: &WarmStart,
    model: &PomdpModel,
    internal: &InternalStateSpec,
    rng: &mut R,
) -> Result<InitialSample> {
    let policy = PolicyTable::uniform(model.n_obs(), internal.n_z(), model.n_actions());
    Sampler::from_table(model, internal, policy, warm)?.sample_h0(rng)
}

/// Convenience wrapper around [`Sampler::sample_visitation`].
pub fn sample_visitation<R: Rng + ?Sized>(
    policy: &FscPolicy,
    model: &PomdpModel,
    warm: &WarmStart,
    rng: &mut R,
) -> Result<VisitSample> {
    Sampler::new(model, policy, warm)?.sample_visitation(rng)
}

/// Convenience wrapper around [`Sampler::rollout`].
pub fn rollout<R: Rng + ?Sized>(
    policy: &FscPolicy,
    model: &PomdpModel,
    warm: &WarmStart,
    start: (usize, usize, usize),
    prior: Option<&[f64]>,
    steps: usize,
    rng: &mut R,
) -> Result<TrajectoryRecord> {
    Sampler::new(model, policy, warm)?.rollout(start, prior, steps, rng)
}
