use std::sync::Arc;

use pomdp_nac_core::actor::{
    cfa_loss_gradient, kl_drift_slack, kl_potential, nac_update, run_nac, sgd_inner_loop, ActorConfig, NacOptions,
};
use pomdp_nac_core::benchmarks::two_state_noisy;
use pomdp_nac_core::controller::{tabular_features, FscPolicy, InternalStateSpec, PolicyTable};
use pomdp_nac_core::critic::{CriticConfig, DerivedValues};
use pomdp_nac_core::model::PomdpModel;
use pomdp_nac_core::oracle::{best_fsc_bruteforce, JointChain};
use pomdp_nac_core::rng::{stream_rng, streams};
use pomdp_nac_core::sampling::{Sampler, WarmStart};
use rand::Rng;

fn norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

/// One hidden state, one observation, two actions with the given rewards.
fn bandit(rewards: [f64; 2]) -> PomdpModel {
    PomdpModel::new(1, 2, 1, 0.9, vec![1.0, 1.0], vec![1.0], rewards.to_vec()).unwrap()
}

#[test]
fn cfa_gradient_examples() {
    let internal = Arc::new(InternalStateSpec::sliding_block(0, 1, 2).unwrap());
    let features = Arc::new(tabular_features(1, 1, 2).unwrap());
    let policy = FscPolicy::new(vec![0.4, -0.2], features, internal).unwrap();
    let table = policy.to_table();
    let derived = DerivedValues::from_q(vec![2.0, -1.0], &table).unwrap();
    let g = policy.log_policy_gradient(0, 0, 1);
    let a = derived.advantage(0, 0, 1);

    let zero = cfa_loss_gradient(&[0.0, 0.0], (0, 0, 1), &policy, &derived);
    for (z, gi) in zero.iter().zip(&g) {
        assert!((z + 2.0 * a * gi).abs() < 1e-12);
    }
    // w along g with ⟨g,w⟩ = Ā
    let s = a / g.iter().map(|v| v * v).sum::<f64>();
    let w: Vec<f64> = g.iter().map(|v| s * v).collect();
    assert!(norm(&cfa_loss_gradient(&w, (0, 0, 1), &policy, &derived)) < 1e-12);
}

#[test]
fn sgd_with_zero_advantage_stays_at_zero() {
    let model = bandit([1.0, 1.0]);
    let internal = InternalStateSpec::sliding_block(0, 1, 2).unwrap();
    let features = tabular_features(1, 1, 2).unwrap();
    let warm = WarmStart::for_controller(&model, &internal);
    let table = PolicyTable::uniform(1, 1, 2);
    let sampler = Sampler::from_table(&model, &internal, table.clone(), &warm).unwrap();
    let derived = DerivedValues::from_q(vec![5.0, 5.0], &table).unwrap();
    let mut rng = stream_rng(0, streams::ACTOR, 0);
    let out = sgd_inner_loop(&features, &derived, 1000, 0.1, 2.0, &sampler, &mut rng).unwrap();
    assert!(out.w_avg.iter().all(|w| *w == 0.0));
    assert_eq!(out.mean_loss, 0.0);
}

#[test]
fn sgd_recovers_population_least_squares() {
    let model = bandit([1.0, 0.0]);
    let internal = Arc::new(InternalStateSpec::sliding_block(0, 1, 2).unwrap());
    let features = Arc::new(tabular_features(1, 1, 2).unwrap());
    let policy = FscPolicy::new(vec![0.5, -0.5], features.clone(), internal.clone()).unwrap();
    let table = policy.to_table();
    let q = vec![3.0, 1.0];
    let derived = DerivedValues::from_q(q, &table).unwrap();
    // scores lie on the line t(1,−1); solve the scalar weighted least squares there
    let p = table.probs(0, 0);
    let s: Vec<f64> = (0..2).map(|u| { let g = policy.log_policy_gradient(0, 0, u); g[0] - g[1] }).collect();
    let num: f64 = (0..2).map(|u| p[u] * s[u] * derived.advantage(0, 0, u)).sum();
    let den: f64 = (0..2).map(|u| p[u] * s[u] * s[u]).sum();
    let t = num / den;
    let w_star = [t, -t];

    let warm = WarmStart::for_controller(&model, &internal);
    let sampler = Sampler::new(&model, &policy, &warm).unwrap();
    let radius = 5.0;
    let actor = ActorConfig::new(1, 100_000, radius, 0.9, 1.0).unwrap();
    let mut rng = stream_rng(1, streams::ACTOR, 0);
    let out = sgd_inner_loop(&features, &derived, actor.sgd_steps, actor.zeta, radius, &sampler, &mut rng).unwrap();
    let err = norm(&[out.w_avg[0] - w_star[0], out.w_avg[1] - w_star[1]]);
    assert!(err <= 0.05, "w̄ = {:?}, w* = {w_star:?}", out.w_avg);
}

#[test]
fn sgd_iterates_respect_radius() {
    let model = bandit([10.0, 0.0]);
    let internal = InternalStateSpec::sliding_block(0, 1, 2).unwrap();
    let features = tabular_features(1, 1, 2).unwrap();
    let warm = WarmStart::for_controller(&model, &internal);
    let table = PolicyTable::uniform(1, 1, 2);
    let sampler = Sampler::from_table(&model, &internal, table.clone(), &warm).unwrap();
    let derived = DerivedValues::from_q(vec![100.0, -100.0], &table).unwrap();
    let mut rng = stream_rng(2, streams::ACTOR, 0);
    let out = sgd_inner_loop(&features, &derived, 500, 1.0, 0.5, &sampler, &mut rng).unwrap();
    assert!(norm(&out.w_avg) <= 0.5 + 1e-12);
}

#[test]
fn update_examples() {
    assert_eq!(nac_update(&[1.0, 2.0], &[0.0, 0.0], 0.3).unwrap(), vec![1.0, 2.0]);
    assert_eq!(nac_update(&[1.0, 2.0], &[5.0, -1.0], 0.0).unwrap(), vec![1.0, 2.0]);
    assert_eq!(nac_update(&[0.0, 0.0], &[5.0, -1.0], 1.0).unwrap(), vec![5.0, -1.0]);
    assert!(nac_update(&[0.0], &[1.0, 2.0], 1.0).is_err());
}

#[test]
fn kl_potential_examples() {
    let uniform = PolicyTable::uniform(1, 1, 2);
    let skewed = PolicyTable::new(1, 1, 2, vec![0.75, 0.25]).unwrap();
    assert_eq!(kl_potential(&uniform, &uniform, &[1.0]), 0.0);
    let expected = 0.5 * (0.5f64 / 0.75).ln() + 0.5 * (0.5f64 / 0.25).ln();
    assert!((kl_potential(&uniform, &skewed, &[1.0]) - expected).abs() < 1e-15);
    assert!((expected - 0.1438).abs() < 1e-4);

    let mut rng = stream_rng(3, streams::ACTOR, 0);
    for _ in 0..100 {
        let mut row = || {
            let p: f64 = rng.random_range(0.01..0.99);
            vec![p, 1.0 - p]
        };
        let a = PolicyTable::new(2, 1, 2, [row(), row()].concat()).unwrap();
        let b = PolicyTable::new(2, 1, 2, [row(), row()].concat()).unwrap();
        assert!(kl_potential(&a, &b, &[0.3, 0.7]) >= 0.0);
    }
}

#[test]
fn zero_advantage_leaves_policy_uniform() {
    let model = bandit([1.0, 1.0]);
    let internal = Arc::new(InternalStateSpec::sliding_block(0, 1, 2).unwrap());
    let features = Arc::new(tabular_features(1, 1, 2).unwrap());
    let warm = WarmStart::for_controller(&model, &internal);
    let actor = ActorConfig::new(1, 1, 1.0, 0.9, 1.0).unwrap();
    let critic = CriticConfig::new(1, 10, 1.0).unwrap();
    let options = NacOptions {
        oracle_mode: true,
        ..Default::default()
    };
    let (policy, _) = run_nac(&model, internal, features, &actor, &critic, &warm, 0, &options).unwrap();
    let p = policy.action_probs(0, 0);
    assert!((p[0] - 0.5).abs() < 1e-12 && (p[1] - 0.5).abs() < 1e-12);
}

/// Optimal action per state of a fully observed MDP by value iteration.
fn value_iteration(model: &PomdpModel) -> Vec<usize> {
    let (nx, nu, g) = (model.n_states(), model.n_actions(), model.gamma());
    let mut v = vec![0.0; nx];
    let q = |v: &[f64], x: usize, u: usize| {
        model.reward(x, u) + g * (0..nx).map(|xn| model.transition(x, u, xn) * v[xn]).sum::<f64>()
    };
    for _ in 0..2000 {
        v = (0..nx).map(|x| (0..nu).map(|u| q(&v, x, u)).fold(f64::MIN, f64::max)).collect();
    }
    (0..nx)
        .map(|x| (0..nu).max_by(|&a, &b| q(&v, x, a).total_cmp(&q(&v, x, b))).unwrap())
        .collect()
}

#[test]
fn nac_finds_dominant_action_in_fully_observed_mdp() {
    // action 1 pays more in both states and prefers state 1
    let model = PomdpModel::new(
        2,
        2,
        2,
        0.9,
        vec![0.7, 0.3, 0.4, 0.6, 0.6, 0.4, 0.2, 0.8],
        vec![1.0, 0.0, 0.0, 1.0],
        vec![0.0, 0.6, 0.4, 1.0],
    )
    .unwrap();
    let best = value_iteration(&model);
    assert_eq!(best, vec![1, 1]);
    let internal = Arc::new(InternalStateSpec::sliding_block(0, 2, 2).unwrap());
    let features = Arc::new(tabular_features(2, 1, 2).unwrap());
    let warm = WarmStart::for_controller(&model, &internal);
    let radius = 10.0 * 2.0;
    let actor = ActorConfig::new(50, 10_000, radius, 0.9, 1.0).unwrap();
    let critic = CriticConfig::new(1, 50_000, radius).unwrap();
    let (policy, _) = run_nac(&model, internal, features, &actor, &critic, &warm, 4, &NacOptions::default()).unwrap();
    for (y, &u) in best.iter().enumerate() {
        assert!(policy.action_probs(y, 0)[u] > 0.9, "{:?}", policy.action_probs(y, 0));
    }
}

#[test]
fn nac_final_value_is_close_to_best_deterministic_controller() {
    let model = two_state_noisy();
    let internal = Arc::new(InternalStateSpec::sliding_block(1, 2, 2).unwrap());
    let features = Arc::new(tabular_features(2, 4, 2).unwrap());
    let warm = WarmStart::for_controller(&model, &internal);
    let radius = 10.0 * 4.0;
    let actor = ActorConfig::new(50, 10_000, radius, 0.9, 1.0).unwrap();
    let critic = CriticConfig::new(4, 50_000, radius).unwrap();
    let best = best_fsc_bruteforce(&model, &internal, &warm).unwrap().value;
    let mean = (0..5u64)
        .map(|seed| {
            run_nac(&model, internal.clone(), features.clone(), &actor, &critic, &warm, seed, &NacOptions::default())
                .unwrap()
                .1
                .final_value
        })
        .sum::<f64>()
        / 5.0;
    assert!(mean >= 0.9 * best, "{mean} vs {best}");
}

#[test]
fn oracle_mode_kl_potential_drifts_down() {
    let model = two_state_noisy();
    let internal = Arc::new(InternalStateSpec::sliding_block(1, 2, 2).unwrap());
    let features = Arc::new(tabular_features(2, 4, 2).unwrap());
    let warm = WarmStart::for_controller(&model, &internal);
    let radius = 40.0;
    let actor = ActorConfig::new(50, 10_000, radius, 0.9, 1.0).unwrap();
    let critic = CriticConfig::new(4, 10, radius).unwrap();
    let reference = best_fsc_bruteforce(&model, &internal, &warm).unwrap().policy;
    let options = NacOptions {
        oracle_mode: true,
        reference: Some(reference),
        ..Default::default()
    };
    let (_, log) = run_nac(&model, internal, features, &actor, &critic, &warm, 0, &options).unwrap();
    let slack = kl_drift_slack(actor.eta, radius);
    let kl: Vec<f64> = log.records.iter().map(|r| r.kl_potential.unwrap()).collect();
    for w in kl.windows(2) {
        assert!(w[1] <= w[0] + slack, "{kl:?}");
    }
    assert!(kl.last().unwrap() < &kl[0]);
}

#[test]
fn oracle_value_is_logged_for_small_models() {
    let model = two_state_noisy();
    let internal = Arc::new(InternalStateSpec::sliding_block(1, 2, 2).unwrap());
    let features = Arc::new(tabular_features(2, 4, 2).unwrap());
    let warm = WarmStart::for_controller(&model, &internal);
    let actor = ActorConfig::new(2, 100, 10.0, 0.9, 1.0).unwrap();
    let critic = CriticConfig::new(2, 100, 10.0).unwrap();
    let (_, log) = run_nac(&model, internal.clone(), features, &actor, &critic, &warm, 0, &NacOptions::default()).unwrap();
    let uniform = JointChain::new(&model, &internal, &PolicyTable::uniform(2, 4, 2), &warm).unwrap().value();
    assert_eq!(log.records.len(), 2);
    assert_eq!(log.records[0].v_oracle, Some(uniform));
    assert!(log.records.iter().all(|r| r.seconds.is_none()));
}
