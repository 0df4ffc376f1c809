use super::{default_horizon, JointChain, PriorTable, Visitation};
use crate::controller::{FeatureMap, InternalStateSpec, PolicyTable};
use crate::linalg::{ball_constrained_quadratic, Matrix};
use crate::math::{dot, powi, sqrt, tv_unchecked};
use crate::model::{filter_step_slice, PomdpModel};
use crate::rng::{sample_index, stream_rng, streams};
use crate::sampling::{Sampler, WarmStart};
use crate::{Error, Result};
use alloc::vec;
use alloc::vec::Vec;
use rand::Rng;

/// Weighted least squares over the radius-R ball.
#[derive(Debug, Clone, PartialEq)]
pub struct LinearFit {
    pub beta: Vec<f64>,
    /// `‖Q − ⟨β,ψ⟩‖_w`
    pub error: f64,
}

/// Minimizes `‖Q(·) − ⟨β,ψ(·)⟩‖_w` over `‖β‖₂ ≤ R`. `q` and `weights` are
/// laid out over `(y,z,u)` as `(y·|Z| + z)·|U| + u`.
pub fn best_linear_fit(q: &[f64], weights: &[f64], features: &FeatureMap, radius: f64) -> Result<LinearFit> {
    let (ny, nz, nu) = features.shape();
    let n = ny * nz * nu;
    if let Some(&len) = [q.len(), weights.len()].iter().find(|&&len| len != n) {
        return Err(Error::DimensionMismatch { expected: n, found: len });
    }
    let d = features.dim();
    let mut gram = Matrix::zeros(d);
    let mut c = vec![0.0; d];
    let mut psi = vec![0.0; d];
    for i in 0..n {
        let w = weights[i];
        if w == 0.0 {
            continue;
        }
        let (y, z, u) = (i / (nz * nu), (i / nu) % nz, i % nu);
        psi.iter_mut().for_each(|v| *v = 0.0);
        features.add_scaled(&mut psi, 1.0, y, z, u);
        for a in 0..d {
            if psi[a] == 0.0 {
                continue;
            }
            c[a] += w * q[i] * psi[a];
            for b in 0..d {
                gram[(a, b)] += w * psi[a] * psi[b];
            }
        }
    }
    let beta = ball_constrained_quadratic(&gram, &c, radius);
    let error = weighted_error(q, weights, features, &beta);
    Ok(LinearFit { beta, error })
}

fn weighted_error(q: &[f64], weights: &[f64], features: &FeatureMap, beta: &[f64]) -> f64 {
    let (_, nz, nu) = features.shape();
    let mut acc = 0.0;
    for (i, (&qi, &w)) in q.iter().zip(weights).enumerate() {
        let e = qi - features.dot(beta, i / (nz * nu), (i / nu) % nz, i % nu);
        acc += w * e * e;
    }
    sqrt(acc)
}

/// `‖v‖_w = (Σ w v²)^{1/2}`
pub fn weighted_norm(v: &[f64], weights: &[f64]) -> f64 {
    sqrt(v.iter().zip(weights).map(|(a, w)| w * a * a).sum())
}

/// Monte Carlo estimate with a truncation budget.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct McEstimate {
    pub mean: f64,
    /// Standard error of the mean.
    pub std_err: f64,
    pub samples: usize,
    pub horizon: usize,
    /// Bound on the truncated tail of the discounted sum.
    pub tail: f64,
}

impl McEstimate {
    /// `mean + 3σ + tail`
    pub fn upper(&self) -> f64 {
        self.mean + 3.0 * self.std_err + self.tail
    }
    /// `mean − 3σ`
    pub fn lower(&self) -> f64 {
        self.mean - 3.0 * self.std_err
    }
}

fn summarize(sum: f64, sum_sq: f64, samples: usize, horizon: usize, tail: f64) -> McEstimate {
    let n = samples as f64;
    let mean = sum / n;
    let var = if samples > 1 {
        ((sum_sq - n * mean * mean) / (n - 1.0)).max(0.0)
    } else {
        0.0
    };
    McEstimate {
        mean,
        std_err: sqrt(var / n),
        samples,
        horizon,
        tail,
    }
}

/// `Γ^π(ξ) = E[Σ_k γ^k d_TV(b_k(·,h_k), b₀(·,I_k)) | I₀ ∼ ξ]` by Monte Carlo
/// over `samples` trajectories of length `horizon`, each with the exact
/// full-history filter. The tail bound is `γ^H/(1−γ)`.
#[allow(clippy::too_many_arguments)]
pub fn inference_error_with<R: Rng + ?Sized>(
    policy: &PolicyTable,
    model: &PomdpModel,
    internal: &InternalStateSpec,
    warm: &WarmStart,
    priors: &PriorTable,
    horizon: usize,
    samples: usize,
    rng: &mut R,
) -> Result<McEstimate> {
    if horizon == 0 || samples == 0 {
        return Err(Error::InvalidConfig("inference error needs H ≥ 1 and at least one sample".into()));
    }
    let sampler = Sampler::from_table(model, internal, policy.clone(), warm)?;
    let gamma = model.gamma();
    let mut scratch = vec![0.0; model.n_states()];
    let (mut sum, mut sum_sq) = (0.0, 0.0);
    for _ in 0..samples {
        let h0 = sampler.sample_h0(rng)?;
        let (mut x, mut y, mut z) = (h0.x0, h0.y0, h0.z0);
        let mut b = h0.prior.into_probs();
        let mut acc = 0.0;
        let mut g = 1.0;
        for k in 0..horizon {
            acc += g * tv_unchecked(&b, priors.get(y, z));
            if k + 1 == horizon {
                break;
            }
            let u = policy.sample(y, z, rng);
            (x, y, z) = sampler.step(x, y, z, u, rng);
            filter_step_slice(model, &b, y, u, &mut scratch)?;
            core::mem::swap(&mut b, &mut scratch);
            g *= gamma;
        }
        sum += acc;
        sum_sq += acc * acc;
    }
    Ok(summarize(sum, sum_sq, samples, horizon, powi(gamma, horizon as i32) / (1.0 - gamma)))
}

/// [`inference_error_with`] using the warm-start priors `b₀(·|y,z)`
/// (uniform where undefined), so no dense solve is needed.
pub fn inference_error<R: Rng + ?Sized>(
    policy: &PolicyTable,
    model: &PomdpModel,
    internal: &InternalStateSpec,
    warm: &WarmStart,
    horizon: usize,
    samples: usize,
    rng: &mut R,
) -> Result<McEstimate> {
    let law = crate::sampling::InitialLaw::compute(model, internal, warm)?;
    let priors = PriorTable::from_law(&law, model.n_states(), model.n_obs(), internal.n_z());
    inference_error_with(policy, model, internal, warm, &priors, horizon, samples, rng)
}

/// Per-`(y,z,u)` Monte Carlo estimates of
/// `E[Σ_k γ^{km} d_TV(b₀(·,I_{(k+1)m}), b_{(k+1)m}(·,h_{(k+1)m})) | I₀ = (y,z), u₀ = u]`
/// for the starts with positive weight under `d_ξ^π∘π`.
#[derive(Debug, Clone, PartialEq)]
pub struct AliasingSums {
    pub mean: Vec<f64>,
    pub std_err: Vec<f64>,
    /// Truncation after `blocks` blocks of length `m`.
    pub blocks: usize,
    /// `γ^{Hm}/(1−γ^m)`
    pub tail: f64,
}

impl AliasingSums {
    /// Largest `mean + 3σ` plus the tail, over the estimated starts.
    pub fn sup_upper(&self) -> f64 {
        self.mean
            .iter()
            .zip(&self.std_err)
            .map(|(m, s)| m + 3.0 * s)
            .fold(0.0, f64::max)
            + self.tail
    }
}

pub fn aliasing_sums<R: Rng + ?Sized>(
    chain: &JointChain,
    warm: &WarmStart,
    m: usize,
    blocks: usize,
    samples_per_start: usize,
    rng: &mut R,
) -> Result<AliasingSums> {
    if m == 0 || blocks == 0 || samples_per_start == 0 {
        return Err(Error::InvalidConfig("aliasing sums need m, H and samples ≥ 1".into()));
    }
    let model = chain.model();
    let policy = chain.policy();
    let sampler = Sampler::from_table(model, chain.internal(), policy.clone(), warm)?;
    let (nz, nu) = (chain.internal().n_z(), model.n_actions());
    let weights = chain.visitation().d_pi;
    let gm = powi(model.gamma(), m as i32);
    let mut mean = vec![0.0; weights.len()];
    let mut std_err = vec![0.0; weights.len()];
    let mut scratch = vec![0.0; model.n_states()];
    for (i, &w) in weights.iter().enumerate() {
        if w == 0.0 {
            continue;
        }
        let (y0, z0, u0) = (i / (nz * nu), (i / nu) % nz, i % nu);
        let prior = chain.priors().get(y0, z0);
        let (mut sum, mut sum_sq) = (0.0, 0.0);
        for _ in 0..samples_per_start {
            let (mut x, mut y, mut z) = (sample_index(prior, rng), y0, z0);
            let mut b = prior.to_vec();
            let mut acc = 0.0;
            let mut g = 1.0;
            for k in 0..blocks * m {
                let u = if k == 0 { u0 } else { policy.sample(y, z, rng) };
                (x, y, z) = sampler.step(x, y, z, u, rng);
                filter_step_slice(model, &b, y, u, &mut scratch)?;
                core::mem::swap(&mut b, &mut scratch);
                if (k + 1) % m == 0 {
                    acc += g * tv_unchecked(&b, chain.priors().get(y, z));
                    g *= gm;
                }
            }
            sum += acc;
            sum_sq += acc * acc;
        }
        let est = summarize(sum, sum_sq, samples_per_start, blocks, 0.0);
        mean[i] = est.mean;
        std_err[i] = est.std_err;
    }
    Ok(AliasingSums {
        mean,
        std_err,
        blocks,
        tail: powi(gm, blocks as i32) / (1.0 - gm),
    })
}

/// Constant `2 r_max (1−γ^m) γ^m / (1−γ)` bounding `|Q_* − Q|` by the
/// conditional discounted belief-mismatch sum.
pub fn lemma_constant(r_max: f64, gamma: f64, m: usize) -> f64 {
    let gm = powi(gamma, m as i32);
    2.0 * r_max * (1.0 - gm) * gm / (1.0 - gamma)
}

/// The two summands of the perceptual-aliasing error.
#[derive(Debug, Clone, PartialEq)]
pub struct EpsPa {
    /// `(R + r_max/(1−γ)) √(2γ^m d_TV(d̃_m∘π, d∘π)/(1−γ^m))`
    pub first: f64,
    /// [`lemma_constant`] times `‖E[Σ_k γ^{km} d_TV(…)|I₀=·]‖_{d∘π}`.
    pub second: f64,
    pub shift_tv: f64,
    pub aliasing_norm: f64,
    pub tail: f64,
    pub blocks: usize,
}

impl EpsPa {
    pub fn total(&self) -> f64 {
        self.first + self.second
    }
}

pub fn eps_pa_for<R: Rng + ?Sized>(
    chain: &JointChain,
    warm: &WarmStart,
    m: usize,
    radius: f64,
    blocks: usize,
    samples_per_start: usize,
    rng: &mut R,
) -> Result<EpsPa> {
    let model = chain.model();
    let gamma = model.gamma();
    let gm = powi(gamma, m as i32);
    let vis = chain.visitation();
    let shifted = chain.shifted_visitation(m)?;
    let shift_tv = tv_unchecked(&shifted, &vis.d);
    let first = (radius + model.r_max() / (1.0 - gamma)) * sqrt(2.0 * gm * shift_tv / (1.0 - gm));
    let sums = aliasing_sums(chain, warm, m, blocks, samples_per_start, rng)?;
    let aliasing_norm = weighted_norm(&sums.mean, &vis.d_pi);
    Ok(EpsPa {
        first,
        second: lemma_constant(model.r_max(), gamma, m) * aliasing_norm,
        shift_tv,
        aliasing_norm,
        tail: sums.tail,
        blocks,
    })
}

/// `ε_PA` for `policy` with `H` blocks and `samples` trajectories per start.
#[allow(clippy::too_many_arguments)]
pub fn eps_pa<R: Rng + ?Sized>(
    policy: &PolicyTable,
    model: &PomdpModel,
    internal: &InternalStateSpec,
    warm: &WarmStart,
    m: usize,
    radius: f64,
    blocks: usize,
    samples_per_start: usize,
    rng: &mut R,
) -> Result<EpsPa> {
    let chain = JointChain::new(model, internal, policy, warm)?;
    eps_pa_for(&chain, warm, m, radius, blocks, samples_per_start, rng)
}

/// `E_{d_t∘π_t}[((d*∘π*)/(d_t∘π_t))²] = Σ (d*∘π*)²/(d_t∘π_t)`.
pub fn concentrability(d_star_pi: &[f64], d_t_pi: &[f64]) -> Result<f64> {
    if d_star_pi.len() != d_t_pi.len() {
        return Err(Error::DimensionMismatch {
            expected: d_star_pi.len(),
            found: d_t_pi.len(),
        });
    }
    let mut acc = 0.0;
    for (i, (&a, &b)) in d_star_pi.iter().zip(d_t_pi).enumerate() {
        if a == 0.0 {
            continue;
        }
        if b == 0.0 {
            return Err(Error::UnboundedRatio { index: i });
        }
        acc += a * a / b;
    }
    Ok(acc)
}

/// Outcome of the performance-difference check, averaged over `h₀ ∼ ξ`.
#[derive(Debug, Clone, PartialEq)]
pub struct PdlReport {
    /// `V^{π'}(ξ) − V^π(ξ)`
    pub lhs: f64,
    /// `(1/(1−γ)) Σ d^{π'}(y,z) π'(u|y,z) A^π(y,z,u)`
    pub advantage_term: f64,
    /// Monte Carlo `Γ^{π'}(ξ)`.
    pub inference: McEstimate,
    /// RHS at the point estimate of `Γ`.
    pub rhs: f64,
    /// RHS at the upper end of the `Γ` interval, tail included.
    pub rhs_lenient: f64,
    pub holds: bool,
}

/// Checks `V^{π'} − V^π ≥ (1/(1−γ)) E_{d^{π'}∘π'}[A^π] − (2r_max/(1−γ)) Γ^{π'}`
/// for two controllers over the same internal kernel.
#[allow(clippy::too_many_arguments)]
pub fn pdl_check<R: Rng + ?Sized>(
    policy_prime: &PolicyTable,
    policy: &PolicyTable,
    model: &PomdpModel,
    internal: &InternalStateSpec,
    warm: &WarmStart,
    horizon: usize,
    samples: usize,
    rng: &mut R,
) -> Result<PdlReport> {
    let base = JointChain::new(model, internal, policy, warm)?;
    let prime = JointChain::new(model, internal, policy_prime, warm)?;
    let exact = base.exact();
    let gamma = model.gamma();
    let lhs = prime.value() - exact.value;
    let vis = prime.visitation();
    let advantage_term = dot(&vis.d_pi, &exact.advantage) / (1.0 - gamma);
    let inference = inference_error_with(policy_prime, model, internal, warm, base.priors(), horizon, samples, rng)?;
    let c = 2.0 * model.r_max() / (1.0 - gamma);
    let rhs = advantage_term - c * inference.mean;
    let rhs_lenient = advantage_term - c * inference.upper();
    Ok(PdlReport {
        lhs,
        advantage_term,
        inference,
        rhs,
        rhs_lenient,
        holds: lhs >= rhs_lenient - 1e-9,
    })
}

/// `ℓ_{2,d∘π}(Q^π, F_Ψ^R)` at `policy`.
pub fn compatible_fa_error(
    policy: &PolicyTable,
    model: &PomdpModel,
    internal: &InternalStateSpec,
    warm: &WarmStart,
    features: &FeatureMap,
    radius: f64,
) -> Result<f64> {
    let chain = JointChain::new(model, internal, policy, warm)?;
    let exact = chain.exact();
    Ok(best_linear_fit(&exact.q, &chain.visitation().d_pi, features, radius)?.error)
}

/// Settings for the Monte Carlo parts of [`error_report`].
#[derive(Debug, Clone, PartialEq)]
pub struct ReportOptions {
    /// Horizon for `Γ`; defaults to [`default_horizon`].
    pub horizon: Option<usize>,
    /// Number of `m`-blocks for the aliasing sums; defaults to `⌈H/m⌉`.
    pub blocks: Option<usize>,
    pub inference_samples: usize,
    pub aliasing_samples: usize,
    pub seed: u64,
    /// Comparison policy for the concentrability coefficient.
    pub reference: Option<PolicyTable>,
}

impl Default for ReportOptions {
    fn default() -> Self {
        Self {
            horizon: None,
            blocks: None,
            inference_samples: 10_000,
            aliasing_samples: 1_000,
            seed: 0,
            reference: None,
        }
    }
}

/// Every error term of the critic and actor bounds at one policy.
#[derive(Debug, Clone, PartialEq)]
pub struct ErrorReport {
    pub value: f64,
    pub projection_error: f64,
    pub beta_pi: Vec<f64>,
    pub eps_pa: EpsPa,
    pub visitation: Visitation,
    pub tilde_d: Vec<f64>,
    pub inference: McEstimate,
    pub concentrability: Option<f64>,
    pub compatible_fa_error: f64,
    /// `‖Q_*^π − Q^π‖_∞`
    pub fixed_point_gap: f64,
}

#[allow(clippy::too_many_arguments)]
pub fn error_report(
    policy: &PolicyTable,
    model: &PomdpModel,
    internal: &InternalStateSpec,
    warm: &WarmStart,
    features: &FeatureMap,
    m: usize,
    radius: f64,
    options: &ReportOptions,
) -> Result<ErrorReport> {
    let chain = JointChain::new(model, internal, policy, warm)?;
    let exact = chain.exact();
    let visitation = chain.visitation();
    let fit = best_linear_fit(&exact.q, &visitation.d_pi, features, radius)?;
    let horizon = options.horizon.unwrap_or_else(|| default_horizon(model.gamma()));
    let blocks = options.blocks.unwrap_or(horizon.div_ceil(m).max(1));
    let mut rng = stream_rng(options.seed, streams::ORACLE_MC, 0);
    let eps = eps_pa_for(&chain, warm, m, radius, blocks, options.aliasing_samples, &mut rng)?;
    let mut rng = stream_rng(options.seed, streams::ORACLE_MC, 1);
    let inference = inference_error_with(
        policy,
        model,
        internal,
        warm,
        chain.priors(),
        horizon,
        options.inference_samples,
        &mut rng,
    )?;
    let concentrability = match &options.reference {
        Some(reference) => {
            let star = JointChain::new(model, internal, reference, warm)?.visitation();
            Some(concentrability(&star.d_pi, &visitation.d_pi)?)
        }
        None => None,
    };
    let q_star = chain.fixed_point(m)?;
    let fixed_point_gap = q_star
        .iter()
        .zip(&exact.q)
        .map(|(a, b)| (a - b).abs())
        .fold(0.0, f64::max);
    Ok(ErrorReport {
        value: exact.value,
        projection_error: fit.error,
        beta_pi: fit.beta,
        tilde_d: chain.shifted_visitation(m)?,
        eps_pa: eps,
        visitation,
        inference,
        concentrability,
        compatible_fa_error: fit.error,
        fixed_point_gap,
    })
}
