//! Finite tabular POMDP models and exact Bayes filtering.

use crate::{Error, Result};
use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

/// Cap on `|X|·|U|·|X|` for the dense transition tensor.
pub const MAX_TRANSITION_ENTRIES: usize = 1_000_000;

/// Row sums within this distance of 1 are renormalized; larger deviations are rejected.
pub const ROW_SUM_TOLERANCE: f64 = 1e-9;

/// A finite POMDP `(X, U, Y, P, Φ, r, γ)` with dense row-major storage.
///
/// `transition[(x·|U| + u)·|X| + x'] = P(x'|x,u)`,
/// `channel[x·|Y| + y] = Φ(y|x)` and `reward[x·|U| + u] = r(x,u)`.
#[derive(Debug, Clone, PartialEq)]
pub struct PomdpModel {
    n_states: usize,
    n_actions: usize,
    n_obs: usize,
    gamma: f64,
    transition: Vec<f64>,
    channel: Vec<f64>,
    reward: Vec<f64>,
    r_max: f64,
    name: Option<String>,
}

fn check_rows(label: &str, data: &mut [f64], width: usize) -> Result<()> {
    for (i, row) in data.chunks_mut(width).enumerate() {
        if let Some(v) = row.iter().find(|v| !v.is_finite() || **v < 0.0) {
            return Err(Error::InvalidModel(format!(
                "{label} row {i} has an invalid entry {v}"
            )));
        }
        let s: f64 = row.iter().sum();
        if (s - 1.0).abs() > ROW_SUM_TOLERANCE {
            return Err(Error::InvalidModel(format!(
                "{label} row {i} sums to {s}"
            )));
        }
        row.iter_mut().for_each(|v| *v /= s);
    }
    Ok(())
}

impl PomdpModel {
    /// Validates and builds a model. Rows whose sums are off by at most
    /// [`ROW_SUM_TOLERANCE`] are renormalized. `r_max` defaults to the
    /// largest reward (or 1 when every reward is 0).
    pub fn new(
        n_states: usize,
        n_actions: usize,
        n_obs: usize,
        gamma: f64,
        mut transition: Vec<f64>,
        mut channel: Vec<f64>,
        reward: Vec<f64>,
    ) -> Result<Self> {
        if n_states == 0 || n_actions == 0 || n_obs == 0 {
            return Err(Error::InvalidModel("state, action and observation sets must be non-empty".into()));
        }
        let entries = n_states
            .checked_mul(n_actions)
            .and_then(|v| v.checked_mul(n_states))
            .unwrap_or(usize::MAX);
        if entries > MAX_TRANSITION_ENTRIES {
            return Err(Error::SizeOverflow {
                size: entries,
                cap: MAX_TRANSITION_ENTRIES,
            });
        }
        if !(gamma > 0.0 && gamma < 1.0) {
            return Err(Error::InvalidModel(format!("gamma must lie in (0,1), got {gamma}")));
        }
        let expect = |label: &str, len: usize, want: usize| -> Result<()> {
            if len != want {
                return Err(Error::InvalidModel(format!(
                    "{label} has {len} entries, expected {want}"
                )));
            }
            Ok(())
        };
        expect("transition", transition.len(), entries)?;
        expect("channel", channel.len(), n_states * n_obs)?;
        expect("reward", reward.len(), n_states * n_actions)?;
        check_rows("transition", &mut transition, n_states)?;
        check_rows("channel", &mut channel, n_obs)?;
        if let Some(r) = reward.iter().find(|r| !r.is_finite() || **r < 0.0) {
            return Err(Error::InvalidModel(format!("reward {r} is outside [0, r_max)")));
        }
        let top = reward.iter().copied().fold(0.0, f64::max);
        Ok(Self {
            n_states,
            n_actions,
            n_obs,
            gamma,
            transition,
            channel,
            reward,
            r_max: if top > 0.0 { top } else { 1.0 },
            name: None,
        })
    }

    /// Overrides the reward bound; it must dominate every reward.
    pub fn with_r_max(mut self, r_max: f64) -> Result<Self> {
        let top = self.reward.iter().copied().fold(0.0, f64::max);
        if !(r_max.is_finite() && r_max > 0.0 && r_max >= top) {
            return Err(Error::InvalidModel(format!(
                "r_max {r_max} must be positive and at least the largest reward {top}"
            )));
        }
        self.r_max = r_max;
        Ok(self)
    }

    pub fn with_name(mut self, name: impl Into<String>) -> Self {
        self.name = Some(name.into());
        self
    }

    /// Same dynamics with a different discount factor.
    pub fn with_gamma(&self, gamma: f64) -> Result<Self> {
        if !(gamma > 0.0 && gamma < 1.0) {
            return Err(Error::InvalidModel(format!("gamma must lie in (0,1), got {gamma}")));
        }
        let mut m = self.clone();
        m.gamma = gamma;
        Ok(m)
    }

    pub fn n_states(&self) -> usize {
        self.n_states
    }
    pub fn n_actions(&self) -> usize {
        self.n_actions
    }
    pub fn n_obs(&self) -> usize {
        self.n_obs
    }
    pub fn gamma(&self) -> f64 {
        self.gamma
    }
    pub fn r_max(&self) -> f64 {
        self.r_max
    }
    pub fn name(&self) -> Option<&str> {
        self.name.as_deref()
    }

    /// `P(·|x,u)`
    #[inline]
    pub fn transition_row(&self, x: usize, u: usize) -> &[f64] {
        let s = (x * self.n_actions + u) * self.n_states;
        &self.transition[s..s + self.n_states]
    }

    #[inline]
    pub fn transition(&self, x: usize, u: usize, next: usize) -> f64 {
        self.transition[(x * self.n_actions + u) * self.n_states + next]
    }

    /// `Φ(·|x)`
    #[inline]
    pub fn channel_row(&self, x: usize) -> &[f64] {
        &self.channel[x * self.n_obs..(x + 1) * self.n_obs]
    }

    #[inline]
    pub fn channel(&self, x: usize, y: usize) -> f64 {
        self.channel[x * self.n_obs + y]
    }

    #[inline]
    pub fn reward(&self, x: usize, u: usize) -> f64 {
        self.reward[x * self.n_actions + u]
    }

    pub fn transition_data(&self) -> &[f64] {
        &self.transition
    }
    pub fn channel_data(&self) -> &[f64] {
        &self.channel
    }
    pub fn reward_data(&self) -> &[f64] {
        &self.reward
    }
}

/// Observation/action record `h_k = (y₀, z₀, y₁..y_k, u₀..u_{k−1})` together
/// with the controller's internal states `z₁..z_k`.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct History {
    pub initial: (usize, usize),
    pub observations: Vec<usize>,
    pub actions: Vec<usize>,
    pub internal_states: Vec<usize>,
}

impl History {
    pub fn new(y0: usize, z0: usize) -> Self {
        Self {
            initial: (y0, z0),
            ..Self::default()
        }
    }

    pub fn len(&self) -> usize {
        self.actions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.actions.is_empty()
    }

    pub fn push(&mut self, u: usize, z_next: usize, y_next: usize) {
        self.actions.push(u);
        self.internal_states.push(z_next);
        self.observations.push(y_next);
    }

    /// `y_k` for `k = 0..=len`.
    pub fn observation(&self, k: usize) -> usize {
        if k == 0 {
            self.initial.0
        } else {
            self.observations[k - 1]
        }
    }

    /// `z_k` for `k = 0..=len`.
    pub fn internal_state(&self, k: usize) -> usize {
        if k == 0 {
            self.initial.1
        } else {
            self.internal_states[k - 1]
        }
    }

    pub fn is_consistent(&self) -> bool {
        self.observations.len() == self.actions.len()
            && self.internal_states.len() == self.actions.len()
    }
}

/// Probability vector over hidden states, optionally tagged with the history
/// it conditions on.
#[derive(Debug, Clone, PartialEq)]
pub struct Belief {
    probs: Vec<f64>,
    provenance: Option<History>,
}

impl Belief {
    pub fn new(probs: Vec<f64>) -> Result<Self> {
        if probs.is_empty() || probs.iter().any(|p| !p.is_finite() || *p < 0.0) {
            return Err(Error::InvalidModel("belief entries must be finite and non-negative".into()));
        }
        let s: f64 = probs.iter().sum();
        if (s - 1.0).abs() > 1e-9 {
            return Err(Error::InvalidModel(format!("belief sums to {s}")));
        }
        Ok(Self {
            probs,
            provenance: None,
        })
    }

    pub(crate) fn from_normalized(probs: Vec<f64>) -> Self {
        Self {
            probs,
            provenance: None,
        }
    }

    pub fn uniform(n: usize) -> Self {
        Self::from_normalized(vec![1.0 / n as f64; n])
    }

    pub fn point(n: usize, x: usize) -> Self {
        let mut p = vec![0.0; n];
        p[x] = 1.0;
        Self::from_normalized(p)
    }

    pub fn with_provenance(mut self, history: History) -> Self {
        self.provenance = Some(history);
        self
    }

    pub fn probs(&self) -> &[f64] {
        &self.probs
    }

    pub fn provenance(&self) -> Option<&History> {
        self.provenance.as_ref()
    }

    pub fn into_probs(self) -> Vec<f64> {
        self.probs
    }
}

/// Writes the unnormalized update `Σ_{x'} b(x')P(x|x',u)Φ(y|x)` into `out`
/// and returns its total mass.
pub(crate) fn filter_unnormalized(
    model: &PomdpModel,
    b: &[f64],
    y: usize,
    u: usize,
    out: &mut [f64],
) -> f64 {
    out.iter_mut().for_each(|v| *v = 0.0);
    for (xp, &w) in b.iter().enumerate() {
        if w == 0.0 {
            continue;
        }
        for (o, p) in out.iter_mut().zip(model.transition_row(xp, u)) {
            *o += w * p;
        }
    }
    let mut total = 0.0;
    for (x, o) in out.iter_mut().enumerate() {
        *o *= model.channel(x, y);
        total += *o;
    }
    total
}

/// In-place Bayes filter step on a raw probability slice.
pub(crate) fn filter_step_slice(
    model: &PomdpModel,
    b: &[f64],
    y: usize,
    u: usize,
    out: &mut [f64],
) -> Result<()> {
    let total = filter_unnormalized(model, b, y, u, out);
    if !(total > 0.0) || !total.is_finite() {
        return Err(Error::DegenerateObservation {
            observation: y,
            step: None,
        });
    }
    out.iter_mut().for_each(|v| *v /= total);
    Ok(())
}

fn check_indices(model: &PomdpModel, b: &Belief, y: usize, u: usize) -> Result<()> {
    if b.probs.len() != model.n_states {
        return Err(Error::DimensionMismatch {
            expected: model.n_states,
            found: b.probs.len(),
        });
    }
    if y >= model.n_obs {
        return Err(Error::DimensionMismatch {
            expected: model.n_obs,
            found: y,
        });
    }
    if u >= model.n_actions {
        return Err(Error::DimensionMismatch {
            expected: model.n_actions,
            found: u,
        });
    }
    Ok(())
}

/// One Bayes filter step `F(b, y, u)`: predict through `P(·|·,u)` and
/// condition on the new observation `y`.
pub fn filter_step(b: &Belief, y: usize, u: usize, model: &PomdpModel) -> Result<Belief> {
    check_indices(model, b, y, u)?;
    let mut out = vec![0.0; model.n_states];
    filter_step_slice(model, &b.probs, y, u, &mut out)?;
    let provenance = b.provenance.clone().map(|mut h| {
        // internal state is not known here; repeat the last one
        let z = h.internal_state(h.len());
        h.push(u, z, y);
        h
    });
    Ok(Belief { probs: out, provenance })
}

/// `F^(n)(b₀, y₁..y_n, u₀..u_{n−1})`; `n = 0` returns `b₀`.
pub fn filter_n(b0: &Belief, ys: &[usize], us: &[usize], model: &PomdpModel) -> Result<Belief> {
    if ys.len() != us.len() {
        return Err(Error::DimensionMismatch {
            expected: ys.len(),
            found: us.len(),
        });
    }
    let mut b = b0.clone();
    for (k, (&y, &u)) in ys.iter().zip(us).enumerate() {
        b = filter_step(&b, y, u, model).map_err(|e| match e {
            Error::DegenerateObservation { observation, .. } => Error::DegenerateObservation {
                observation,
                step: Some(k),
            },
            other => other,
        })?;
    }
    Ok(b)
}

/// Belief-MDP reward `r̃(b,u) = Σ_x b(x) r(x,u)`.
pub fn belief_reward(b: &Belief, u: usize, model: &PomdpModel) -> f64 {
    b.probs
        .iter()
        .enumerate()
        .map(|(x, p)| p * model.reward(x, u))
        .sum()
}
