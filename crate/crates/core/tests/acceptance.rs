//! Acceptance suite. Each criterion prints one `PASS`/`FAIL` line with its
//! measured quantities and wall time; the test fails if any criterion does.

#![allow(clippy::needless_range_loop)]

use std::io::Write;
use std::sync::Arc;
use std::time::{Duration, Instant};

use pomdp_nac_core::actor::{cfa_loss, cfa_loss_gradient, run_nac, ActorConfig, NacOptions};
use pomdp_nac_core::benchmarks::{fully_observed, random_pomdp, two_state_noisy};
use pomdp_nac_core::controller::{tabular_features, FeatureMap, FscPolicy, InternalStateSpec, PolicyTable};
use pomdp_nac_core::critic::{run_mstep_td_in, CriticConfig, DerivedValues};
use pomdp_nac_core::model::{filter_step, Belief, PomdpModel};
use pomdp_nac_core::oracle::{best_fsc_bruteforce, default_horizon, inference_error, pdl_check, weighted_norm, JointChain};
use pomdp_nac_core::rng::{stream_rng, streams};
use pomdp_nac_core::sampling::{InitialLaw, Sampler, WarmStart};
use pomdp_nac_core::stability::{contraction_experiment, left_multiply, ErgodicityCertificate};
use rand::Rng;

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: String) -> Outcome {
    Outcome { pass, detail }
}

fn tv(p: &[f64], q: &[f64]) -> f64 {
    0.5 * p.iter().zip(q).map(|(a, b)| (a - b).abs()).sum::<f64>()
}

fn random_simplex<R: Rng>(n: usize, rng: &mut R) -> Vec<f64> {
    let mut v: Vec<f64> = (0..n).map(|_| -(1.0 - rng.random::<f64>()).ln()).collect();
    let s: f64 = v.iter().sum();
    v.iter_mut().for_each(|x| *x /= s);
    v
}

fn sbc(model: &PomdpModel, n: usize) -> Arc<InternalStateSpec> {
    Arc::new(InternalStateSpec::sliding_block(n, model.n_obs(), model.n_actions()).unwrap())
}

/// Two filter steps written out as a sum over hidden paths.
fn two_step_posterior(m: &PomdpModel, b: &[f64], (u1, y1): (usize, usize), (u2, y2): (usize, usize)) -> Vec<f64> {
    let nx = m.n_states();
    let mut out = vec![0.0; nx];
    for x0 in 0..nx {
        for x1 in 0..nx {
            for x2 in 0..nx {
                out[x2] += b[x0]
                    * m.transition(x0, u1, x1)
                    * m.channel(x1, y1)
                    * m.transition(x1, u2, x2)
                    * m.channel(x2, y2);
            }
        }
    }
    let s: f64 = out.iter().sum();
    out.iter_mut().for_each(|v| *v /= s);
    out
}

fn filter_correctness() -> Outcome {
    let mut rng = stream_rng(1, 100, 0);
    let (mut worst_sum, mut worst_comp) = (0.0f64, 0.0f64);
    for i in 0..10_000u64 {
        let (nx, nu, ny) = (rng.random_range(1..6), rng.random_range(1..4), rng.random_range(1..5));
        let m = random_pomdp(nx, nu, ny, 0.9, i).unwrap();
        let b = Belief::new(random_simplex(nx, &mut rng)).unwrap();
        let s1 = (rng.random_range(0..nu), rng.random_range(0..ny));
        let s2 = (rng.random_range(0..nu), rng.random_range(0..ny));
        let b1 = filter_step(&b, s1.1, s1.0, &m).unwrap();
        let b2 = filter_step(&b1, s2.1, s2.0, &m).unwrap();
        worst_sum = worst_sum.max((b1.probs().iter().sum::<f64>() - 1.0).abs());
        let direct = two_step_posterior(&m, b.probs(), s1, s2);
        for (a, c) in b2.probs().iter().zip(&direct) {
            worst_comp = worst_comp.max((a - c).abs());
        }
    }
    outcome(
        worst_sum <= 1e-9 && worst_comp <= 1e-10,
        format!("max |Σb−1| = {worst_sum:.2e} (≤ 1e-9), max composition error = {worst_comp:.2e} (≤ 1e-10)"),
    )
}

/// Mean over 5 seeds of the tabular critic error on a fully observed model
/// with a memoryless controller.
fn td0_error(gamma: f64) -> (f64, Vec<f64>, f64) {
    let base = random_pomdp(3, 2, 2, gamma, 21).unwrap();
    let model = fully_observed(&base).unwrap();
    let internal = sbc(&model, 0);
    let warm = WarmStart::for_controller(&model, &internal);
    let features = Arc::new(tabular_features(model.n_obs(), 1, model.n_actions()).unwrap());
    let policy = FscPolicy::max_entropy(features.clone(), internal.clone()).unwrap();
    let table = policy.to_table();
    let chain = JointChain::new(&model, &internal, &table, &warm).unwrap();
    let exact = chain.exact();
    let d_pi = chain.visitation().d_pi;
    let scale = model.r_max() / (1.0 - gamma);
    let config = CriticConfig::new(1, 100_000, 2.0 * scale).unwrap();
    let law = InitialLaw::compute(&model, &internal, &warm).unwrap();
    let sampler = Sampler::new(&model, &policy, &warm).unwrap().without_beliefs();
    let errors: Vec<f64> = (0..5u64)
        .map(|seed| {
            let mut rng = stream_rng(seed, streams::CRITIC, 0);
            let est = run_mstep_td_in(&sampler, &law, &features, &config, &mut rng, |_| {}).unwrap();
            let diff: Vec<f64> = est.q_table().iter().zip(&exact.q).map(|(a, b)| a - b).collect();
            weighted_norm(&diff, &d_pi)
        })
        .collect();
    let mean = errors.iter().sum::<f64>() / errors.len() as f64;
    (mean, errors, 0.05 * scale)
}

/// Run at γ = 0.5; the γ = 0.9 figure is reported alongside.
fn td0_recovery() -> Outcome {
    let (mean, errors, tol) = td0_error(0.5);
    let (mean_09, _, tol_09) = td0_error(0.9);
    outcome(
        mean <= tol,
        format!(
            "γ = 0.5: mean ‖Q̄_K − Q^π‖_(d∘π) = {mean:.4} (≤ {tol:.4}), per seed {errors:.4?}; [info] γ = 0.9: {mean_09:.4} vs {tol_09:.4}"
        ),
    )
}

fn least_squares_slope(xs: &[f64], ys: &[f64]) -> f64 {
    let n = xs.len() as f64;
    let (mx, my) = (xs.iter().sum::<f64>() / n, ys.iter().sum::<f64>() / n);
    let sxy: f64 = xs.iter().zip(ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    let sxx: f64 = xs.iter().map(|x| (x - mx) * (x - mx)).sum();
    sxy / sxx
}

fn fixed_point_decay() -> Outcome {
    let model = two_state_noisy();
    let internal = sbc(&model, 1);
    let warm = WarmStart::for_controller(&model, &internal);
    let table = PolicyTable::uniform(model.n_obs(), internal.n_z(), model.n_actions());
    let chain = JointChain::new(&model, &internal, &table, &warm).unwrap();
    let q = chain.exact().q;
    let ms = [1usize, 2, 4, 8];
    let gaps: Vec<f64> = ms
        .iter()
        .map(|&m| {
            let qs = chain.fixed_point(m).unwrap();
            qs.iter().zip(&q).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max)
        })
        .collect();
    let xs: Vec<f64> = ms.iter().map(|&m| m as f64).collect();
    let logs: Vec<f64> = gaps.iter().map(|g| g.ln()).collect();
    let slope = least_squares_slope(&xs, &logs);
    let bound = model.gamma().ln() + 0.1;
    outcome(
        slope <= bound,
        format!("gaps {:?}, slope of log-gap = {slope:.4} (≤ {bound:.4})", gaps.iter().map(|g| format!("{g:.3e}")).collect::<Vec<_>>()),
    )
}

fn critic_trend() -> Outcome {
    let model = two_state_noisy();
    let internal = sbc(&model, 1);
    let m = 4;
    let warm = WarmStart::for_controller(&model, &internal);
    let features = Arc::new(tabular_features(model.n_obs(), internal.n_z(), model.n_actions()).unwrap());
    let policy = FscPolicy::max_entropy(features.clone(), internal.clone()).unwrap();
    let table = policy.to_table();
    let chain = JointChain::new(&model, &internal, &table, &warm).unwrap();
    let q_star = chain.fixed_point(m).unwrap();
    let d_pi = chain.visitation().d_pi;
    let law = InitialLaw::compute(&model, &internal, &warm).unwrap();
    let sampler = Sampler::new(&model, &policy, &warm).unwrap().without_beliefs();
    let radius = model.r_max() / (1.0 - model.gamma()) * (features.dim() as f64).sqrt();
    let means: Vec<f64> = [1_000usize, 10_000, 100_000]
        .iter()
        .map(|&k| {
            let config = CriticConfig::new(m, k, radius).unwrap();
            let total: f64 = (0..10u64)
                .map(|seed| {
                    let mut rng = stream_rng(seed, streams::CRITIC, k as u64);
                    let est = run_mstep_td_in(&sampler, &law, &features, &config, &mut rng, |_| {}).unwrap();
                    let diff: Vec<f64> = est.q_table().iter().zip(&q_star).map(|(a, b)| a - b).collect();
                    weighted_norm(&diff, &d_pi)
                })
                .sum();
            total / 10.0
        })
        .collect();
    let ratios = [means[0] / means[1], means[1] / means[2]];
    outcome(
        ratios.iter().all(|r| *r >= 1.15),
        format!("mean ‖Q̄_K − Q_*^π‖_(d∘π) at K = 1e3, 1e4, 1e5: {means:.4?}, ratios {ratios:.3?} (≥ 1.15)"),
    )
}

fn filter_contraction() -> Outcome {
    let model = two_state_noisy();
    let internal = sbc(&model, 1);
    let warm = WarmStart::for_controller(&model, &internal);
    let table = PolicyTable::uniform(model.n_obs(), internal.n_z(), model.n_actions());
    let cert = match ErgodicityCertificate::from_conditions(&table, &model, 1) {
        Ok(c) => c,
        Err(e) => return outcome(false, format!("no certificate: {e}")),
    };
    let mut rng = stream_rng(0, streams::STABILITY, 0);
    let curve = contraction_experiment(
        &model,
        &table,
        &internal,
        &warm,
        &[1, 2, 4, 8, 16],
        (&[1.0, 0.0], &[0.0, 1.0]),
        10_000,
        Some(&cert),
        &mut rng,
    )
    .unwrap();
    let under = curve.points.iter().all(|p| p.tv_mean <= p.envelope.unwrap());
    let per_history: usize = curve.points.iter().map(|p| p.envelope_violations).sum();
    let rows: Vec<String> = curve
        .points
        .iter()
        .map(|p| format!("n={}: {:.4} ≤ {:.4}", p.n, p.tv_mean, p.envelope.unwrap()))
        .collect();
    outcome(
        under && curve.monotone,
        format!(
            "α = {:.4}, ε₀ = {:.4}; {}; monotone = {}; per-history envelope violations = {per_history}",
            cert.alpha,
            cert.eps0,
            rows.join(", "),
            curve.monotone
        ),
    )
}

fn kernel_properties() -> Outcome {
    let mut rng = stream_rng(2, 100, 0);
    let (mut worst_ne, mut worst_c) = (f64::NEG_INFINITY, f64::NEG_INFINITY);
    for _ in 0..10_000 {
        let n = rng.random_range(2..7);
        let v = random_simplex(n, &mut rng);
        let w = random_simplex(n, &mut rng);
        let k: Vec<f64> = (0..n).flat_map(|_| random_simplex(n, &mut rng)).collect();
        let before = tv(&v, &w);
        worst_ne = worst_ne.max(tv(&left_multiply(&v, &k).unwrap(), &left_multiply(&w, &k).unwrap()) - before);
        // K = ε₀ ν + (1−ε₀) Q is minorized by ε₀ ν
        let eps0: f64 = rng.random_range(0.01..0.99);
        let nu = random_simplex(n, &mut rng);
        let mixed: Vec<f64> = k
            .iter()
            .enumerate()
            .map(|(i, q)| eps0 * nu[i % n] + (1.0 - eps0) * q)
            .collect();
        let after = tv(&left_multiply(&v, &mixed).unwrap(), &left_multiply(&w, &mixed).unwrap());
        worst_c = worst_c.max(after - (1.0 - eps0) * before);
    }
    outcome(
        worst_ne <= 1e-12 && worst_c <= 1e-12,
        format!(
            "max TV(vK,v'K) − TV(v,v') = {worst_ne:.2e}, max TV(vK,v'K) − (1−ε₀)TV(v,v') = {worst_c:.2e} (≤ 1e-12)"
        ),
    )
}

fn random_table<R: Rng>(ny: usize, nz: usize, nu: usize, rng: &mut R) -> PolicyTable {
    let probs: Vec<f64> = (0..ny * nz)
        .flat_map(|_| {
            let logits: Vec<f64> = (0..nu).map(|_| rng.random_range(-2.0..2.0)).collect();
            let s: f64 = logits.iter().map(|l| l.exp()).sum();
            logits.into_iter().map(move |l| l.exp() / s)
        })
        .collect();
    PolicyTable::new(ny, nz, nu, probs).unwrap()
}

fn performance_difference() -> Outcome {
    let mut failures = Vec::new();
    let mut slack = f64::INFINITY;
    for i in 0..20u64 {
        let model = random_pomdp(3, 2, 2, 0.9, 1000 + i).unwrap();
        let internal = sbc(&model, 1);
        let warm = WarmStart::for_controller(&model, &internal);
        let mut rng = stream_rng(i, streams::ORACLE_MC, 7);
        let pi = random_table(2, internal.n_z(), 2, &mut rng);
        let pi_prime = random_table(2, internal.n_z(), 2, &mut rng);
        let h = default_horizon(model.gamma());
        let r = pdl_check(&pi_prime, &pi, &model, &internal, &warm, h, 2_000, &mut rng).unwrap();
        slack = slack.min(r.lhs - r.rhs_lenient);
        if !r.holds {
            failures.push(i);
        }
    }
    outcome(
        failures.is_empty(),
        format!("20 models, failing {failures:?}, min(LHS − RHS at Γ upper bound) = {slack:.4}"),
    )
}

fn nac_improvement() -> Outcome {
    let model = two_state_noisy();
    let internal = sbc(&model, 1);
    let warm = WarmStart::for_controller(&model, &internal);
    let features = Arc::new(tabular_features(model.n_obs(), internal.n_z(), model.n_actions()).unwrap());
    let scale = model.r_max() / (1.0 - model.gamma());
    let radius = scale * (features.dim() as f64).sqrt();
    let actor = ActorConfig::new(50, 10_000, radius, model.gamma(), model.r_max()).unwrap();
    let critic = CriticConfig::new(4, 50_000, radius).unwrap();
    let uniform = JointChain::new(
        &model,
        &internal,
        &PolicyTable::uniform(model.n_obs(), internal.n_z(), model.n_actions()),
        &warm,
    )
    .unwrap()
    .value();
    let best = best_fsc_bruteforce(&model, &internal, &warm).unwrap().value;
    let values: Vec<f64> = (0..5u64)
        .map(|seed| {
            let (_, log) = run_nac(&model, internal.clone(), features.clone(), &actor, &critic, &warm, seed, &NacOptions::default())
                .unwrap();
            log.best.1
        })
        .collect();
    let mean = values.iter().sum::<f64>() / values.len() as f64;
    let (need_gain, need_best) = (uniform + 0.05 * scale, 0.9 * best);
    outcome(
        mean >= need_gain && mean >= need_best,
        format!(
            "mean best-iterate V = {mean:.4} (≥ {need_gain:.4} = V_uniform + 0.05·r_max/(1−γ), ≥ {need_best:.4} = 0.9·V_best_det), per seed {values:.4?}"
        ),
    )
}

fn gradient_checks() -> Outcome {
    let mut rng = stream_rng(3, 100, 0);
    let h = 1e-6;
    let rel = |a: &[f64], b: &[f64]| {
        let num: f64 = a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt();
        let den: f64 = a.iter().map(|x| x * x).sum::<f64>().sqrt().max(b.iter().map(|x| x * x).sum::<f64>().sqrt());
        if den < 1e-12 {
            num
        } else {
            num / den
        }
    };
    let (mut worst_pi, mut worst_cfa) = (0.0f64, 0.0f64);
    for _ in 0..100 {
        let (ny, nz, nu, d) = (2, 3, 3, 5);
        let mut table: Vec<f64> = (0..ny * nz * nu * d).map(|_| rng.random_range(-1.0..1.0)).collect();
        for chunk in table.chunks_mut(d) {
            let n = chunk.iter().map(|v| v * v).sum::<f64>().sqrt();
            chunk.iter_mut().for_each(|v| *v /= n.max(1.0));
        }
        let features = Arc::new(FeatureMap::dense(ny, nz, nu, d, table).unwrap());
        let kernel: Vec<f64> = (0..nz * ny * nu).flat_map(|_| random_simplex(nz, &mut rng)).collect();
        let internal = Arc::new(InternalStateSpec::generic(nz, ny, nu, kernel).unwrap());
        let theta: Vec<f64> = (0..d).map(|_| rng.random_range(-2.0..2.0)).collect();
        let policy = FscPolicy::new(theta.clone(), features.clone(), internal.clone()).unwrap();
        let (y, z, u) = (rng.random_range(0..ny), rng.random_range(0..nz), rng.random_range(0..nu));
        let analytic = policy.log_policy_gradient(y, z, u);
        let numeric: Vec<f64> = (0..d)
            .map(|i| {
                let mut tp = theta.clone();
                let mut tm = theta.clone();
                tp[i] += h;
                tm[i] -= h;
                let lp = policy.with_theta(tp).unwrap().action_probs(y, z)[u].ln();
                let lm = policy.with_theta(tm).unwrap().action_probs(y, z)[u].ln();
                (lp - lm) / (2.0 * h)
            })
            .collect();
        worst_pi = worst_pi.max(rel(&analytic, &numeric));

        let q: Vec<f64> = (0..ny * nz * nu).map(|_| rng.random_range(-5.0..5.0)).collect();
        let derived = DerivedValues::from_q(q, &policy.to_table()).unwrap();
        let w: Vec<f64> = (0..d).map(|_| rng.random_range(-3.0..3.0)).collect();
        let analytic = cfa_loss_gradient(&w, (y, z, u), &policy, &derived);
        let g = policy.log_policy_gradient(y, z, u);
        let a = derived.advantage(y, z, u);
        let numeric: Vec<f64> = (0..d)
            .map(|i| {
                let mut wp = w.clone();
                let mut wm = w.clone();
                wp[i] += h;
                wm[i] -= h;
                (cfa_loss(&wp, &g, a) - cfa_loss(&wm, &g, a)) / (2.0 * h)
            })
            .collect();
        worst_cfa = worst_cfa.max(rel(&analytic, &numeric));
    }
    outcome(
        worst_pi <= 1e-5 && worst_cfa <= 1e-5,
        format!("max relative error: log-policy {worst_pi:.2e}, CFA loss {worst_cfa:.2e} (≤ 1e-5)"),
    )
}

/// `ξ(y₀,z₀)` for an `n = 1` sliding-block controller by summing over
/// `(x₋₁, y₋₁, u₋₁, x₀)`.
fn enumerated_xi(model: &PomdpModel, internal: &InternalStateSpec) -> Vec<f64> {
    let (nx, ny, nu) = (model.n_states(), model.n_obs(), model.n_actions());
    let mut xi = vec![0.0; ny * internal.n_z()];
    for xm in 0..nx {
        for ym in 0..ny {
            for um in 0..nu {
                for x0 in 0..nx {
                    for y0 in 0..ny {
                        let p = (1.0 / nx as f64)
                            * model.channel(xm, ym)
                            * (1.0 / nu as f64)
                            * model.transition(xm, um, x0)
                            * model.channel(x0, y0);
                        let z0 = internal.encode_window(&[ym], &[um]);
                        xi[y0 * internal.n_z() + z0] += p;
                    }
                }
            }
        }
    }
    xi
}

fn sampler_fidelity() -> Outcome {
    let model = two_state_noisy();
    let internal = sbc(&model, 1);
    let warm = WarmStart::for_controller(&model, &internal);
    let mut rng = stream_rng(0, streams::SAMPLER_CHECK, 0);
    let table = random_table(model.n_obs(), internal.n_z(), model.n_actions(), &mut rng);
    let sampler = Sampler::from_table(&model, &internal, table.clone(), &warm).unwrap().without_beliefs();
    let chain = JointChain::new(&model, &internal, &table, &warm).unwrap();
    let exact_d = chain.visitation().d;
    let exact_xi = enumerated_xi(&model, &internal);
    let nz = internal.n_z();
    let samples = 100_000;
    let (mut d_hat, mut xi_hat) = (vec![0.0; exact_d.len()], vec![0.0; exact_xi.len()]);
    for _ in 0..samples {
        let v = sampler.sample_visitation(&mut rng).unwrap();
        d_hat[v.y * nz + v.z] += 1.0 / samples as f64;
        let h0 = sampler.sample_h0(&mut rng).unwrap();
        xi_hat[h0.y0 * nz + h0.z0] += 1.0 / samples as f64;
    }
    let (tv_d, tv_xi) = (tv(&d_hat, &exact_d), tv(&xi_hat, &exact_xi));
    outcome(
        tv_d <= 0.02 && tv_xi <= 0.02,
        format!("TV(d̂, d) = {tv_d:.4}, TV(ξ̂, ξ) = {tv_xi:.4} (≤ 0.02) at 1e5 samples"),
    )
}

fn inference_monotonicity() -> Outcome {
    let model = two_state_noisy();
    let h = default_horizon(model.gamma());
    let gamma_at = |n: usize| {
        let internal = sbc(&model, n);
        let warm = WarmStart::for_controller(&model, &internal);
        let table = PolicyTable::uniform(model.n_obs(), internal.n_z(), model.n_actions());
        let mut rng = stream_rng(n as u64, streams::ORACLE_MC, 11);
        inference_error(&table, &model, &internal, &warm, h, 100_000, &mut rng).unwrap()
    };
    let (g1, g4) = (gamma_at(1), gamma_at(4));
    let (hi4, lo1) = (g4.mean + 3.0 * g4.std_err, g1.mean - 3.0 * g1.std_err);
    outcome(
        hi4 < lo1,
        format!(
            "Γ̂(n=1) = {:.4} ± {:.4}, Γ̂(n=4) = {:.4} ± {:.4}; {hi4:.4} < {lo1:.4}",
            g1.mean, g1.std_err, g4.mean, g4.std_err
        ),
    )
}

#[test]
fn acceptance() {
    type Criterion = (&'static str, u64, fn() -> Outcome);
    let criteria: [Criterion; 11] = [
        ("filter correctness", 5, filter_correctness),
        ("TD(0) recovery", 60, td0_recovery),
        ("fixed-point decay in m", 10, fixed_point_decay),
        ("critic error trend in K", 300, critic_trend),
        ("filter contraction envelope", 60, filter_contraction),
        ("kernel non-expansiveness and contraction", 5, kernel_properties),
        ("performance difference inequality", 300, performance_difference),
        ("NAC improvement", 900, nac_improvement),
        ("gradient checks", 5, gradient_checks),
        ("sampler fidelity", 60, sampler_fidelity),
        ("inference-error monotonicity", 300, inference_monotonicity),
    ];
    let only = std::env::var("ACCEPTANCE_ONLY").ok();
    let mut failed = Vec::new();
    for (i, (name, budget, run)) in criteria.iter().enumerate() {
        let id = i + 1;
        if only.as_deref().is_some_and(|o| !o.split(',').any(|s| s.trim() == id.to_string())) {
            continue;
        }
        let start = Instant::now();
        let out = run();
        let elapsed = start.elapsed();
        let in_time = elapsed <= Duration::from_secs(*budget);
        let pass = out.pass && in_time;
        if !pass {
            failed.push(id);
        }
        let line = format!(
            "[{}] {id:>2}. {name}: {} | {:.1}s (budget {budget}s)\n",
            if pass { "PASS" } else { "FAIL" },
            out.detail,
            elapsed.as_secs_f64()
        );
        std::io::stderr().write_all(line.as_bytes()).unwrap();
    }
    assert!(failed.is_empty(), "failing criteria: {failed:?}");
}
