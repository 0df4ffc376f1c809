//! Seed sweeps of the natural actor-critic with CSV logs.

use std::fs;
use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::Instant;

use pomdp_nac_core::actor::{run_nac, ActorConfig, Clock, NacOptions, NacRunLog, ValueSource};
use pomdp_nac_core::controller::{tabular_features, FscPolicy, PolicyTable};
use pomdp_nac_core::critic::CriticConfig;
use pomdp_nac_core::math::mean_std;
use pomdp_nac_core::oracle::best_fsc_bruteforce;
use pomdp_nac_core::sampling::WarmStart;
use pomdp_nac_core::Error as CoreError;

use crate::config::ExperimentConfig;
use crate::csv_out::{read_table, CsvTable};
use crate::error::{HarnessError, InModule, Result};
use crate::io::save_policy;

/// Largest deterministic-controller search run to get a KL reference.
pub const MAX_REFERENCE_SEARCH: u128 = 4096;

pub const RUN_COLUMNS: [&str; 7] = ["t", "V_hat", "V_oracle", "sgd_loss_mean", "w_norm", "kl_potential", "seconds"];

struct WallClock(Instant);

impl Clock for WallClock {
    fn now_seconds(&self) -> f64 {
        self.0.elapsed().as_secs_f64()
    }
}

#[derive(Debug, Clone)]
pub struct SeedResult {
    pub seed: u64,
    pub csv: PathBuf,
    pub policy: PathBuf,
    pub final_value: f64,
    pub best: (usize, f64),
    pub value_source: ValueSource,
}

#[derive(Debug, Clone)]
pub struct ExperimentOutcome {
    pub seeds: Vec<SeedResult>,
    pub summary: PathBuf,
    /// Whether the KL column was filled from the best deterministic controller.
    pub kl_reference: bool,
}

fn source_name(s: ValueSource) -> &'static str {
    match s {
        ValueSource::Oracle => "oracle",
        ValueSource::MonteCarlo => "monte_carlo",
    }
}

fn opt(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

/// Best deterministic controller as the KL reference, if the search is small.
fn kl_reference(cfg: &ExperimentConfig, warm: &WarmStart) -> Result<Option<PolicyTable>> {
    if !cfg.oracle {
        return Ok(None);
    }
    let (ny, nz, nu) = (cfg.model.n_obs(), cfg.internal.n_z(), cfg.model.n_actions());
    let space = (0..ny * nz).try_fold(1u128, |acc, _| acc.checked_mul(nu as u128));
    if !space.is_some_and(|s| s <= MAX_REFERENCE_SEARCH) {
        return Ok(None);
    }
    match best_fsc_bruteforce(&cfg.model, &cfg.internal, warm) {
        Ok(best) => Ok(Some(best.policy)),
        Err(CoreError::SizeOverflow { .. } | CoreError::SearchSpaceTooLarge { .. }) => Ok(None),
        Err(e) => Err(HarnessError::Core { module: "oracle", source: e }),
    }
}

fn run_seed(cfg: &ExperimentConfig, warm: &WarmStart, reference: Option<&PolicyTable>, seed: u64) -> Result<(FscPolicy, NacRunLog)> {
    let model = &cfg.model;
    let features = Arc::new(
        tabular_features(model.n_obs(), cfg.internal.n_z(), model.n_actions()).in_module("controllers")?,
    );
    let actor = ActorConfig {
        iterations: cfg.iterations,
        sgd_steps: cfg.sgd_steps,
        eta: cfg.eta,
        zeta: cfg.zeta,
        radius: cfg.radius,
    };
    let critic = CriticConfig::new(cfg.m, cfg.critic_iterations, cfg.radius)
        .and_then(|c| c.with_alpha(cfg.alpha))
        .in_module("critic")?;
    let clock = WallClock(Instant::now());
    let options = NacOptions {
        oracle_mode: false,
        reference: reference.cloned(),
        value_rollouts: Some(cfg.value_rollouts),
        skip_oracle: !cfg.oracle,
        clock: cfg.timing.then_some(&clock as &dyn Clock),
    };
    run_nac(model, cfg.internal.clone(), features, &actor, &critic, warm, seed, &options).in_module("actor")
}

fn write_seed_csv(path: &Path, cfg: &ExperimentConfig, hash: &str, seed: u64, log: &NacRunLog) -> Result<()> {
    let mut table = CsvTable::new(
        format!(
            "config_hash={hash} version={} seed={seed} value_source={}",
            crate::VERSION,
            source_name(log.value_source)
        ),
        RUN_COLUMNS.iter().map(|c| c.to_string()).collect(),
    );
    for r in &log.records {
        table.rows.push(vec![
            r.t.to_string(),
            r.v_hat.to_string(),
            opt(r.v_oracle),
            r.sgd_loss_mean.to_string(),
            r.w_norm.to_string(),
            opt(r.kl_potential),
            if cfg.timing { opt(r.seconds) } else { String::new() },
        ]);
    }
    table.write(path)
}

/// Mean and standard deviation across seeds of every numeric column, per `t`.
fn write_summary(path: &Path, hash: &str, seeds: &[SeedResult]) -> Result<()> {
    let tables = seeds.iter().map(|s| read_table(&s.csv)).collect::<Result<Vec<_>>>()?;
    let metrics = &RUN_COLUMNS[1..];
    let mut header = vec!["t".to_string()];
    for m in metrics {
        header.push(format!("{m}_mean"));
        header.push(format!("{m}_std"));
    }
    let seed_list: Vec<String> = seeds.iter().map(|s| s.seed.to_string()).collect();
    let mut out = CsvTable::new(
        format!("config_hash={hash} version={} seeds={}", crate::VERSION, seed_list.join(";")),
        header,
    );
    let rows = tables.iter().map(|t| t.rows.len()).min().unwrap_or(0);
    for i in 0..rows {
        let mut row = vec![tables[0].rows[i][0].clone()];
        for (j, _) in metrics.iter().enumerate() {
            let values: Option<Vec<f64>> = tables.iter().map(|t| t.rows[i][j + 1].parse().ok()).collect();
            match values {
                Some(v) => {
                    let (mean, std) = mean_std(&v);
                    row.push(mean.to_string());
                    row.push(std.to_string());
                }
                None => row.extend([String::new(), String::new()]),
            }
        }
        out.rows.push(row);
    }
    out.write(path)
}

/// Runs every seed, `threads` at a time, then merges the per-seed logs.
/// Output does not depend on `threads`.
pub fn run_experiment(cfg: &ExperimentConfig, threads: usize) -> Result<ExperimentOutcome> {
    fs::create_dir_all(&cfg.out).map_err(HarnessError::io(&cfg.out))?;
    let hash = cfg.hash();
    let warm = WarmStart::for_controller(&cfg.model, &cfg.internal);
    let reference = kl_reference(cfg, &warm)?;
    let threads = threads.clamp(1, cfg.seeds.len());

    let mut results: Vec<Option<Result<(FscPolicy, NacRunLog)>>> = (0..cfg.seeds.len()).map(|_| None).collect();
    std::thread::scope(|scope| {
        let handles: Vec<_> = (0..threads)
            .map(|w| {
                let (warm, reference) = (&warm, reference.as_ref());
                scope.spawn(move || {
                    (w..cfg.seeds.len())
                        .step_by(threads)
                        .map(|i| (i, run_seed(cfg, warm, reference, cfg.seeds[i])))
                        .collect::<Vec<_>>()
                })
            })
            .collect();
        for h in handles {
            for (i, r) in h.join().expect("seed worker panicked") {
                results[i] = Some(r);
            }
        }
    });

    let mut seeds = Vec::with_capacity(cfg.seeds.len());
    for (&seed, result) in cfg.seeds.iter().zip(results) {
        let (policy, log) = result.expect("every seed is assigned to a worker")?;
        let csv = cfg.out.join(format!("seed_{seed}.csv"));
        write_seed_csv(&csv, cfg, &hash, seed, &log)?;
        let policy_path = cfg.out.join(format!("policy_seed_{seed}.json"));
        save_policy(&policy_path, &policy)?;
        seeds.push(SeedResult {
            seed,
            csv,
            policy: policy_path,
            final_value: log.final_value,
            best: log.best,
            value_source: log.value_source,
        });
    }
    let summary = cfg.out.join("summary.csv");
    write_summary(&summary, &hash, &seeds)?;
    Ok(ExperimentOutcome {
        seeds,
        summary,
        kl_reference: reference.is_some(),
    })
}
