//! Subcommands of the `pomdp-nac` binary.

use std::fs;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use pomdp_nac_core::benchmarks::{generate_benchmark, BenchmarkGenerator};
use pomdp_nac_core::controller::tabular_features;
use pomdp_nac_core::critic::{run_mstep_td_in, CriticConfig};
use pomdp_nac_core::math::tv_distance;
use pomdp_nac_core::model::PomdpModel;
use pomdp_nac_core::oracle::{error_report, weighted_norm, JointChain, ReportOptions};
use pomdp_nac_core::rng::{stream_rng, streams};
use pomdp_nac_core::sampling::{InitialLaw, Sampler, WarmStart};
use pomdp_nac_core::stability::{contraction_experiment, CertifiedCondition, ErgodicityCertificate};
use serde_json::json;

use crate::config::{parse_config, RawConfig, RawModel};
use crate::csv_out::CsvTable;
use crate::error::{HarnessError, InModule, Result};
use crate::experiment::run_experiment;
use crate::io::{load_model, load_policy, save_model, LoadedPolicy};

#[derive(Debug, Parser)]
#[command(name = "pomdp-nac", version, about = "Natural actor-critic with finite-state controllers for finite POMDPs")]
pub struct Cli {
    /// Experiment config (TOML); command-line values override it.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Output directory.
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    /// Worker threads for seed sweeps.
    #[arg(long, global = true, default_value_t = 1)]
    pub threads: usize,
    /// Fill the `seconds` column (makes logs non-reproducible).
    #[arg(long, global = true)]
    pub timing: bool,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Run the natural actor-critic over one or more seeds.
    TrainNac(TrainArgs),
    /// Run m-step TD for a fixed policy and log its progress.
    EvalCritic(EvalCriticArgs),
    /// Exact values and error terms for a fixed policy.
    SolveOracle(SolveOracleArgs),
    /// Filter-stability certificate and measured contraction.
    Stability(StabilityArgs),
    /// Write a built-in benchmark model.
    GenModel(GenModelArgs),
    /// Compare sampled initial and visitation laws with their exact values.
    SampleCheck(SampleCheckArgs),
}

#[derive(Debug, Args)]
pub struct PolicyArgs {
    #[arg(long)]
    pub model: PathBuf,
    /// Policy file; without it the uniform sliding-block policy is used.
    #[arg(long)]
    pub policy: Option<PathBuf>,
    #[arg(long, default_value_t = 1)]
    pub block_length: usize,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[arg(long)]
    pub model: Option<PathBuf>,
    #[arg(long)]
    pub block_length: Option<i64>,
    #[arg(long = "T")]
    pub t: Option<i64>,
    #[arg(long = "N")]
    pub n: Option<i64>,
    #[arg(long = "K")]
    pub k: Option<i64>,
    #[arg(long)]
    pub m: Option<i64>,
    #[arg(long = "R")]
    pub r: Option<f64>,
    /// Log Monte Carlo values instead of exact ones.
    #[arg(long)]
    pub no_oracle: bool,
}

#[derive(Debug, Args)]
pub struct EvalCriticArgs {
    #[command(flatten)]
    pub policy: PolicyArgs,
    #[arg(long, default_value_t = 4)]
    pub m: usize,
    #[arg(long = "K", default_value_t = 10_000)]
    pub k: usize,
    #[arg(long = "R")]
    pub r: Option<f64>,
    /// Rows written; defaults to one per K/100 iterations.
    #[arg(long)]
    pub log_every: Option<usize>,
    #[arg(long)]
    pub no_oracle: bool,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum ReportFormat {
    Json,
    Csv,
}

#[derive(Debug, Args)]
pub struct SolveOracleArgs {
    #[command(flatten)]
    pub policy: PolicyArgs,
    #[arg(long, default_value_t = 4)]
    pub m: usize,
    #[arg(long = "R")]
    pub r: Option<f64>,
    /// Comparison policy for the concentrability coefficient.
    #[arg(long)]
    pub reference: Option<PathBuf>,
    #[arg(long, value_enum, default_value_t = ReportFormat::Json)]
    pub report: ReportFormat,
    #[arg(long, default_value_t = 10_000)]
    pub samples: usize,
    #[arg(long, default_value_t = 1_000)]
    pub aliasing_samples: usize,
}

#[derive(Debug, Args)]
pub struct StabilityArgs {
    #[command(flatten)]
    pub policy: PolicyArgs,
    #[arg(long, default_value_t = 1)]
    pub m0: usize,
    #[arg(long, value_delimiter = ',', default_value = "1,2,4,8")]
    pub n_list: Vec<usize>,
    #[arg(long, default_value_t = 10_000)]
    pub samples: usize,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum GeneratorKind {
    #[value(name = "two_state_noisy")]
    TwoStateNoisy,
    #[value(name = "random_pomdp")]
    RandomPomdp,
    #[value(name = "fully_observed")]
    FullyObserved,
}

#[derive(Debug, Args)]
pub struct GenModelArgs {
    #[arg(long, value_enum)]
    pub kind: GeneratorKind,
    #[arg(long, default_value_t = 3)]
    pub states: usize,
    #[arg(long, default_value_t = 2)]
    pub actions: usize,
    #[arg(long, default_value_t = 2)]
    pub observations: usize,
    #[arg(long, default_value_t = 0.9)]
    pub gamma: f64,
    /// Model whose channel `fully_observed` replaces.
    #[arg(long)]
    pub source: Option<PathBuf>,
    #[arg(long, default_value = "model.json")]
    pub file: String,
}

#[derive(Debug, Args)]
pub struct SampleCheckArgs {
    #[command(flatten)]
    pub policy: PolicyArgs,
    #[arg(long, default_value_t = 100_000)]
    pub samples: usize,
    #[arg(long, default_value_t = 0.02)]
    pub tolerance: f64,
}

fn absolute(p: &Path) -> Result<PathBuf> {
    std::path::absolute(p).map_err(HarnessError::io(p))
}

fn out_dir(cli: &Cli) -> Result<PathBuf> {
    let dir = cli.out.clone().unwrap_or_else(|| PathBuf::from("."));
    fs::create_dir_all(&dir).map_err(HarnessError::io(&dir))?;
    Ok(dir)
}

fn load(args: &PolicyArgs) -> Result<(PomdpModel, LoadedPolicy)> {
    let model = load_model(&args.model)?;
    let policy = match &args.policy {
        Some(p) => load_policy(p, &model)?,
        None => LoadedPolicy::uniform_sliding_block(&model, args.block_length)?,
    };
    Ok((model, policy))
}

fn default_radius(model: &PomdpModel, policy: &LoadedPolicy) -> f64 {
    let dim = (model.n_obs() * policy.internal.n_z() * model.n_actions()) as f64;
    model.r_max() / (1.0 - model.gamma()) * dim.sqrt()
}

fn comment(extra: &str) -> String {
    format!("version={} {extra}", crate::VERSION)
}

/// Runs one parsed command line; the error carries the exit code.
pub fn run(cli: &Cli) -> Result<()> {
    match &cli.command {
        Command::TrainNac(a) => train_nac(cli, a),
        Command::EvalCritic(a) => eval_critic(cli, a),
        Command::SolveOracle(a) => solve_oracle(cli, a),
        Command::Stability(a) => stability(cli, a),
        Command::GenModel(a) => gen_model(cli, a),
        Command::SampleCheck(a) => sample_check(cli, a),
    }
}

fn train_nac(cli: &Cli, a: &TrainArgs) -> Result<()> {
    let (base, file) = match &cli.config {
        Some(p) => (
            p.parent().map(Path::to_owned).unwrap_or_default(),
            parse_config(p)?,
        ),
        None => (PathBuf::from("."), RawConfig::default()),
    };
    let flags = RawConfig {
        model: a
            .model
            .as_deref()
            .map(|p| {
                absolute(p).map(|path| RawModel {
                    path: Some(path),
                    ..RawModel::default()
                })
            })
            .transpose()?,
        n: a.block_length,
        t: a.t,
        sgd_steps: a.n,
        k: a.k,
        m: a.m,
        radius: a.r,
        seeds: cli.seed.map(|s| vec![s]),
        out: cli.out.as_deref().map(absolute).transpose()?,
        oracle: a.no_oracle.then_some(false),
        timing: cli.timing.then_some(true),
        ..RawConfig::default()
    };
    let cfg = file.overlay(flags).resolve(&base)?;
    let outcome = run_experiment(&cfg, cli.threads)?;
    for s in &outcome.seeds {
        println!(
            "seed {}: final V = {:.6}, best V = {:.6} at t = {} ({:?}) -> {}",
            s.seed,
            s.final_value,
            s.best.1,
            s.best.0,
            s.value_source,
            s.csv.display()
        );
    }
    println!("summary -> {}", outcome.summary.display());
    Ok(())
}

fn eval_critic(cli: &Cli, a: &EvalCriticArgs) -> Result<()> {
    let (model, policy) = load(&a.policy)?;
    let seed = cli.seed.unwrap_or(0);
    let radius = a.r.unwrap_or_else(|| default_radius(&model, &policy));
    let config = CriticConfig::new(a.m, a.k, radius).in_module("critic")?;
    let warm = WarmStart::for_controller(&model, &policy.internal);
    let (ny, nz, nu) = (model.n_obs(), policy.internal.n_z(), model.n_actions());
    let features = tabular_features(ny, nz, nu).in_module("controllers")?;
    let oracle = if a.no_oracle {
        None
    } else {
        match JointChain::new(&model, &policy.internal, &policy.table, &warm) {
            Ok(chain) => Some((chain.exact().q, chain.visitation().d_pi)),
            Err(pomdp_nac_core::Error::SizeOverflow { .. }) => None,
            Err(e) => return Err(HarnessError::Core { module: "oracle", source: e }),
        }
    };
    let law = InitialLaw::compute(&model, &policy.internal, &warm).in_module("sampling")?;
    let sampler = Sampler::from_table(&model, &policy.internal, policy.table.clone(), &warm)
        .in_module("sampling")?
        .without_beliefs();
    let every = a.log_every.unwrap_or((a.k / 100).max(1)).max(1);

    let mut table = CsvTable::new(
        comment(&format!("seed={seed} m={} K={} R={radius}", a.m, a.k)),
        ["iter", "beta_norm", "td_error_proxy", "q_gap_vs_oracle"].map(String::from).to_vec(),
    );
    let d = features.dim();
    let (mut sum, mut prev) = (vec![0.0; d], vec![0.0; d]);
    let (mut td_abs, mut td_count) = (0.0, 0usize);
    let mut rng = stream_rng(seed, streams::CRITIC, 0);
    run_mstep_td_in(&sampler, &law, &features, &config, &mut rng, |step| {
        // running mean of β₀..β_t, the iterates that enter Q̄
        sum.iter_mut().zip(&prev).for_each(|(s, b)| *s += b);
        prev.copy_from_slice(step.beta);
        td_abs += step.td_error.abs();
        td_count += 1;
        let t = step.iter + 1;
        if t % every != 0 && t != a.k {
            return;
        }
        let avg: Vec<f64> = sum.iter().map(|s| s / t as f64).collect();
        let gap = oracle.as_ref().map(|(q, w)| {
            let mut diff = Vec::with_capacity(q.len());
            for y in 0..ny {
                for z in 0..nz {
                    for u in 0..nu {
                        diff.push(features.dot(&avg, y, z, u) - q[(y * nz + z) * nu + u]);
                    }
                }
            }
            weighted_norm(&diff, w)
        });
        table.rows.push(vec![
            t.to_string(),
            avg.iter().map(|b| b * b).sum::<f64>().sqrt().to_string(),
            (td_abs / td_count as f64).to_string(),
            gap.map(|g| g.to_string()).unwrap_or_default(),
        ]);
        td_abs = 0.0;
        td_count = 0;
    })
    .in_module("critic")?;
    let path = out_dir(cli)?.join("eval_critic.csv");
    table.write(&path)?;
    if let Some(last) = table.rows.last() {
        println!("K = {}: |beta| = {}, gap = {}", a.k, last[1], if last[3].is_empty() { "n/a" } else { &last[3] });
    }
    println!("-> {}", path.display());
    Ok(())
}

fn solve_oracle(cli: &Cli, a: &SolveOracleArgs) -> Result<()> {
    let (model, policy) = load(&a.policy)?;
    let radius = a.r.unwrap_or_else(|| default_radius(&model, &policy));
    let warm = WarmStart::for_controller(&model, &policy.internal);
    let features = tabular_features(model.n_obs(), policy.internal.n_z(), model.n_actions()).in_module("controllers")?;
    let reference = match &a.reference {
        Some(p) => Some(load_policy(p, &model)?.table),
        None => None,
    };
    let options = ReportOptions {
        inference_samples: a.samples,
        aliasing_samples: a.aliasing_samples,
        seed: cli.seed.unwrap_or(0),
        reference,
        ..ReportOptions::default()
    };
    let r = error_report(&policy.table, &model, &policy.internal, &warm, &features, a.m, radius, &options)
        .in_module("oracle")?;
    let fields: Vec<(&str, Option<f64>)> = vec![
        ("value", Some(r.value)),
        ("fixed_point_gap", Some(r.fixed_point_gap)),
        ("projection_error", Some(r.projection_error)),
        ("compatible_fa_error", Some(r.compatible_fa_error)),
        ("eps_pa", Some(r.eps_pa.total())),
        ("eps_pa_first", Some(r.eps_pa.first)),
        ("eps_pa_second", Some(r.eps_pa.second)),
        ("eps_pa_shift_tv", Some(r.eps_pa.shift_tv)),
        ("eps_pa_aliasing_norm", Some(r.eps_pa.aliasing_norm)),
        ("eps_pa_tail", Some(r.eps_pa.tail)),
        ("inference_error", Some(r.inference.mean)),
        ("inference_error_std_err", Some(r.inference.std_err)),
        ("inference_error_tail", Some(r.inference.tail)),
        ("inference_horizon", Some(r.inference.horizon as f64)),
        ("concentrability", r.concentrability),
    ];
    let dir = out_dir(cli)?;
    let path = match a.report {
        ReportFormat::Json => {
            let mut obj = serde_json::Map::new();
            obj.insert("version".into(), json!(crate::VERSION));
            obj.insert("m".into(), json!(a.m));
            obj.insert("radius".into(), json!(radius));
            for (k, v) in &fields {
                obj.insert((*k).into(), json!(v));
            }
            obj.insert("beta_pi".into(), json!(r.beta_pi));
            let path = dir.join("oracle_report.json");
            let text = serde_json::to_string_pretty(&obj).expect("plain data serializes") + "\n";
            fs::write(&path, text).map_err(HarnessError::io(&path))?;
            path
        }
        ReportFormat::Csv => {
            let mut t = CsvTable::new(
                comment(&format!("m={} R={radius}", a.m)),
                vec!["quantity".into(), "value".into()],
            );
            for (k, v) in &fields {
                t.rows.push(vec![(*k).into(), v.map(|x| x.to_string()).unwrap_or_default()]);
            }
            let path = dir.join("oracle_report.csv");
            t.write(&path)?;
            path
        }
    };
    println!(
        "V = {:.6}, gap(m={}) = {:.3e}, eps_pa = {:.3e}, Gamma = {:.4} ± {:.4}",
        r.value,
        a.m,
        r.fixed_point_gap,
        r.eps_pa.total(),
        r.inference.mean,
        r.inference.std_err
    );
    println!("-> {}", path.display());
    Ok(())
}

fn stability(cli: &Cli, a: &StabilityArgs) -> Result<()> {
    let (model, policy) = load(&a.policy)?;
    let nx = model.n_states();
    let warm = WarmStart::for_controller(&model, &policy.internal);
    let cert = ErgodicityCertificate::from_conditions(&policy.table, &model, a.m0)
        .or_else(|_| ErgodicityCertificate::from_joint_chain(&policy.table, &model, &policy.internal, a.m0))
        .ok();
    let (mut first, mut last) = (vec![0.0; nx], vec![0.0; nx]);
    first[0] = 1.0;
    last[nx - 1] = 1.0;
    let mut rng = stream_rng(cli.seed.unwrap_or(0), streams::STABILITY, 0);
    let curve = contraction_experiment(
        &model,
        &policy.table,
        &policy.internal,
        &warm,
        &a.n_list,
        (&first, &last),
        a.samples,
        cert.as_ref(),
        &mut rng,
    )
    .in_module("stability")?;
    let certified = match cert.as_ref().map(|c| c.which) {
        Some(CertifiedCondition::Condition2) => "condition2",
        Some(CertifiedCondition::Condition3) => "condition3",
        _ => "no_envelope",
    };
    let mut t = CsvTable::new(
        comment(&format!(
            "m0={} samples={} skipped={} certificate={certified} monotone={}",
            a.m0, a.samples, curve.skipped, curve.monotone
        )),
        ["n", "tv_mean", "tv_max", "envelope", "certificate_alpha", "certificate_eps0"]
            .map(String::from)
            .to_vec(),
    );
    let fmt = |v: Option<f64>| v.map(|x| x.to_string()).unwrap_or_default();
    for p in &curve.points {
        t.rows.push(vec![
            p.n.to_string(),
            p.tv_mean.to_string(),
            p.tv_max.to_string(),
            fmt(p.envelope),
            fmt(cert.as_ref().map(|c| c.alpha)),
            fmt(cert.as_ref().map(|c| c.eps0)),
        ]);
    }
    let path = out_dir(cli)?.join("stability.csv");
    t.write(&path)?;
    match &cert {
        Some(c) => println!("certificate ({certified}): alpha = {}, eps0 = {}", c.alpha, c.eps0),
        None => println!("no certificate at m0 = {}; empirical curve only", a.m0),
    }
    println!("-> {}", path.display());
    Ok(())
}

fn gen_model(cli: &Cli, a: &GenModelArgs) -> Result<()> {
    let spec = match a.kind {
        GeneratorKind::TwoStateNoisy => BenchmarkGenerator::TwoStateNoisy,
        GeneratorKind::RandomPomdp => BenchmarkGenerator::RandomPomdp {
            states: a.states,
            actions: a.actions,
            observations: a.observations,
            gamma: a.gamma,
            seed: cli.seed.unwrap_or(0),
        },
        GeneratorKind::FullyObserved => {
            let Some(src) = &a.source else {
                return Err(HarnessError::Validation(vec!["fully_observed needs --source".into()]));
            };
            BenchmarkGenerator::FullyObserved(load_model(src)?)
        }
    };
    let model = generate_benchmark(&spec).in_module("harness")?;
    let path = out_dir(cli)?.join(&a.file);
    save_model(&path, &model)?;
    println!("-> {}", path.display());
    Ok(())
}

fn sample_check(cli: &Cli, a: &SampleCheckArgs) -> Result<()> {
    let (model, policy) = load(&a.policy)?;
    let warm = WarmStart::for_controller(&model, &policy.internal);
    let chain = JointChain::new(&model, &policy.internal, &policy.table, &warm).in_module("oracle")?;
    let exact_d = chain.visitation().d;
    let law = InitialLaw::compute(&model, &policy.internal, &warm).in_module("sampling")?;
    let sampler = Sampler::from_table(&model, &policy.internal, policy.table.clone(), &warm)
        .in_module("sampling")?
        .without_beliefs();
    let nz = policy.internal.n_z();
    let seed = cli.seed.unwrap_or(0);
    let w = 1.0 / a.samples as f64;

    let mut xi_hat = vec![0.0; law.xi().len()];
    let mut rng = stream_rng(seed, streams::SAMPLER_CHECK, 0);
    for _ in 0..a.samples {
        let h0 = sampler.sample_h0(&mut rng).in_module("sampling")?;
        xi_hat[h0.y0 * nz + h0.z0] += w;
    }
    let mut d_hat = vec![0.0; exact_d.len()];
    let mut rng = stream_rng(seed, streams::SAMPLER_CHECK, 1);
    for _ in 0..a.samples {
        let v = sampler.sample_visitation(&mut rng).in_module("sampling")?;
        d_hat[v.y * nz + v.z] += w;
    }
    let mut t = CsvTable::new(
        comment(&format!("seed={seed}")),
        ["quantity", "tv", "samples", "within_tolerance"].map(String::from).to_vec(),
    );
    for (name, hat, exact) in [("initial_law", &xi_hat, law.xi()), ("visitation", &d_hat, &exact_d[..])] {
        let tv = tv_distance(hat, exact).in_module("sampling")?;
        println!("{name}: TV = {tv:.5} ({} samples)", a.samples);
        t.rows.push(vec![
            name.into(),
            tv.to_string(),
            a.samples.to_string(),
            (tv <= a.tolerance).to_string(),
        ]);
    }
    let path = out_dir(cli)?.join("sample_check.csv");
    t.write(&path)?;
    println!("-> {}", path.display());
    Ok(())
}
