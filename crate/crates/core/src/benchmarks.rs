//! Built-in benchmark models.

use crate::math::ln;
use crate::model::PomdpModel;
use crate::rng::{stream_rng, streams};
use crate::Result;
use alloc::vec;
use alloc::vec::Vec;
use rand::Rng;

/// Generator specification for the built-in benchmarks.
#[derive(Debug, Clone, PartialEq)]
pub enum BenchmarkGenerator {
    TwoStateNoisy,
    RandomPomdp {
        states: usize,
        actions: usize,
        observations: usize,
        gamma: f64,
        seed: u64,
    },
    /// Replaces the channel of the given model by the identity (`Y = X`).
    FullyObserved(PomdpModel),
}

pub fn generate_benchmark(spec: &BenchmarkGenerator) -> Result<PomdpModel> {
    match spec {
        BenchmarkGenerator::TwoStateNoisy => Ok(two_state_noisy()),
        BenchmarkGenerator::RandomPomdp {
            states,
            actions,
            observations,
            gamma,
            seed,
        } => random_pomdp(*states, *actions, *observations, *gamma, *seed),
        BenchmarkGenerator::FullyObserved(m) => fully_observed(m),
    }
}

/// Two hidden states, two actions, two observations.
///
/// Action 0 keeps the state with probability 0.9, action 1 flips it with
/// probability 0.9. Each state is reported correctly with probability 0.8.
/// Reward is 1 in state 1 and 0 in state 0; γ = 0.9.
pub fn two_state_noisy() -> PomdpModel {
    let transition = vec![
        // x=0: u=0 stay, u=1 flip
        0.9, 0.1, 0.1, 0.9, //
        // x=1
        0.1, 0.9, 0.9, 0.1,
    ];
    let channel = vec![0.8, 0.2, 0.2, 0.8];
    let reward = vec![0.0, 0.0, 1.0, 1.0];
    PomdpModel::new(2, 2, 2, 0.9, transition, channel, reward)
        .expect("canonical benchmark is valid")
        .with_name("two_state_noisy")
}

fn dirichlet_row<R: Rng>(n: usize, rng: &mut R) -> Vec<f64> {
    let mut row: Vec<f64> = (0..n)
        .map(|_| {
            let u: f64 = rng.random();
            -ln(1.0 - u)
        })
        .collect();
    let s: f64 = row.iter().sum();
    row.iter_mut().for_each(|v| *v /= s);
    row
}

/// Random model with Dirichlet(1) transition and channel rows and rewards
/// drawn uniformly from `[0, 1)`.
pub fn random_pomdp(
    states: usize,
    actions: usize,
    observations: usize,
    gamma: f64,
    seed: u64,
) -> Result<PomdpModel> {
    let mut rng = stream_rng(seed, streams::GENERATOR, 0);
    let transition: Vec<f64> = (0..states * actions)
        .flat_map(|_| dirichlet_row(states, &mut rng))
        .collect();
    let channel: Vec<f64> = (0..states)
        .flat_map(|_| dirichlet_row(observations, &mut rng))
        .collect();
    let reward: Vec<f64> = (0..states * actions).map(|_| rng.random::<f64>()).collect();
    Ok(
        PomdpModel::new(states, actions, observations, gamma, transition, channel, reward)?
            .with_name("random_pomdp"),
    )
}

/// Same dynamics and rewards, identity channel.
pub fn fully_observed(m: &PomdpModel) -> Result<PomdpModel> {
    let n = m.n_states();
    let mut channel = vec![0.0; n * n];
    for x in 0..n {
        channel[x * n + x] = 1.0;
    }
    let out = PomdpModel::new(
        n,
        m.n_actions(),
        n,
        m.gamma(),
        m.transition_data().to_vec(),
        channel,
        m.reward_data().to_vec(),
    )?
    .with_r_max(m.r_max())?;
    Ok(match m.name() {
        Some(name) => out.with_name(alloc::format!("{name}_fully_observed")),
        None => out,
    })
}
