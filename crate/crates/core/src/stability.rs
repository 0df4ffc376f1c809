//! Filter stability: persistence-of-excitation and minorization
//! certificates, backward variables, conditional smoothing kernels and the
//! empirical contraction of the Bayes filter.

use crate::controller::{InternalStateSpec, PolicyTable};
use crate::math::{powi, sqrt, tv_unchecked};
use crate::model::{filter_step_slice, History, PomdpModel};
use crate::sampling::{Sampler, WarmStart};
use crate::{Error, Result};
use alloc::vec;
use alloc::vec::Vec;
use rand::Rng;

/// Cap on the number of entries enumerated by the condition checks.
pub const MAX_CONDITION_ENTRIES: usize = 1 << 22;

/// Largest `c ∈ (0,1]` with a probability vector `ν` such that
/// `c·ν ≤ row ≤ ν/c` entrywise for every row, together with such a `ν`.
/// Returns the index of the first entry that is zero in some row and
/// positive in another as the error.
fn sandwich(rows: &[Vec<f64>]) -> core::result::Result<(f64, Vec<f64>), usize> {
    let width = rows[0].len();
    let mut lo = vec![f64::INFINITY; width];
    let mut hi = vec![0.0f64; width];
    for row in rows {
        for (j, &v) in row.iter().enumerate() {
            lo[j] = lo[j].min(v);
            hi[j] = hi[j].max(v);
        }
    }
    let mut c: f64 = 1.0;
    for j in 0..width {
        if hi[j] > 0.0 {
            if lo[j] == 0.0 {
                return Err(j);
            }
            c = c.min(sqrt(lo[j] / hi[j]));
        }
    }
    let (sum_hi, sum_lo): (f64, f64) = (hi.iter().sum(), lo.iter().sum());
    c = c.min(1.0 / sum_hi).min(sum_lo);
    let lower: Vec<f64> = hi.iter().map(|h| c * h).collect();
    let upper: Vec<f64> = lo.iter().zip(&hi).map(|(l, h)| if *h > 0.0 { l / c } else { 0.0 }).collect();
    let (sl, su): (f64, f64) = (lower.iter().sum(), upper.iter().sum());
    let t = if su > sl { ((1.0 - sl) / (su - sl)).clamp(0.0, 1.0) } else { 0.0 };
    let nu = lower.iter().zip(&upper).map(|(l, u)| l + t * (u - l)).collect();
    Ok((c, nu))
}

/// Largest `α` and a `μ̄` with `α μ̄(u) ≤ π(u|y,z) ≤ μ̄(u)/α` for all `(u,y,z)`.
pub fn check_condition1(policy: &PolicyTable) -> Result<(f64, Vec<f64>)> {
    let rows: Vec<Vec<f64>> = (0..policy.n_obs())
        .flat_map(|y| (0..policy.n_z()).map(move |z| (y, z)))
        .map(|(y, z)| policy.probs(y, z).to_vec())
        .collect();
    sandwich(&rows).map_err(|action| Error::SupportMismatch { action })
}

/// `P̄_{m₀}(x_{m₀}, y_1^{m₀}, u^{m₀−1} | x₀)` for every `x₀`. Entries are
/// indexed by `s·|X| + x_{m₀}` where `s` packs the pairs `(u_j, y_{j+1})`
/// in mixed radix `u_j·|Y| + y_{j+1}`, earliest pair most significant.
pub fn condition2_table(model: &PomdpModel, mu_bar: &[f64], m0: usize) -> Result<Vec<Vec<f64>>> {
    let (nx, ny, nu) = (model.n_states(), model.n_obs(), model.n_actions());
    if mu_bar.len() != nu {
        return Err(Error::DimensionMismatch {
            expected: nu,
            found: mu_bar.len(),
        });
    }
    if m0 == 0 {
        return Err(Error::InvalidConfig("m0 must be at least 1".into()));
    }
    let pairs = ny * nu;
    let seqs = (0..m0).try_fold(1usize, |acc, _| acc.checked_mul(pairs));
    let width = seqs.and_then(|s| s.checked_mul(nx)).unwrap_or(usize::MAX);
    if width.saturating_mul(nx) > MAX_CONDITION_ENTRIES {
        return Err(Error::SizeOverflow {
            size: width,
            cap: MAX_CONDITION_ENTRIES / nx,
        });
    }
    let mut rows = Vec::with_capacity(nx);
    for x0 in 0..nx {
        // forward vectors over x for every pair sequence, one step at a time
        let mut layer: Vec<f64> = vec![0.0; nx];
        layer[x0] = 1.0;
        for _ in 0..m0 {
            let blocks = layer.len() / nx;
            let mut next = vec![0.0; blocks * pairs * nx];
            for b in 0..blocks {
                let v = &layer[b * nx..(b + 1) * nx];
                for u in 0..nu {
                    for y in 0..ny {
                        let out = &mut next[((b * pairs) + u * ny + y) * nx..][..nx];
                        for (x, &w) in v.iter().enumerate() {
                            if w == 0.0 {
                                continue;
                            }
                            for (xn, &p) in model.transition_row(x, u).iter().enumerate() {
                                out[xn] += w * mu_bar[u] * p * model.channel(xn, y);
                            }
                        }
                    }
                }
            }
            layer = next;
        }
        rows.push(layer);
    }
    Ok(rows)
}

/// Largest `ε₀` and a `ν` satisfying the minorization-majorization bound on `P̄_{m₀}`.
pub fn check_condition2(model: &PomdpModel, mu_bar: &[f64], m0: usize) -> Result<(f64, Vec<f64>)> {
    let rows = condition2_table(model, mu_bar, m0)?;
    sandwich(&rows).map_err(|column| Error::NotErgodic { column })
}

/// `m₀`-step transition matrix of the chain `(x,y,z,u)` under `policy`,
/// indexed by `((y·|Z| + z)·|X| + x)·|U| + u`.
pub fn joint_action_matrix(
    policy: &PolicyTable,
    model: &PomdpModel,
    internal: &InternalStateSpec,
    m0: usize,
) -> Result<Vec<Vec<f64>>> {
    let (nx, ny, nz, nu) = (model.n_states(), model.n_obs(), internal.n_z(), model.n_actions());
    if m0 == 0 {
        return Err(Error::InvalidConfig("m0 must be at least 1".into()));
    }
    let n = nx * ny * nz * nu;
    if n.saturating_mul(n) > MAX_CONDITION_ENTRIES {
        return Err(Error::SizeOverflow {
            size: n,
            cap: sqrt(MAX_CONDITION_ENTRIES as f64) as usize,
        });
    }
    let idx = |x: usize, y: usize, z: usize, u: usize| (((y * nz + z) * nx) + x) * nu + u;
    let mut one = vec![vec![0.0; n]; n];
    for y in 0..ny {
        for z in 0..nz {
            for x in 0..nx {
                for u in 0..nu {
                    let row = &mut one[idx(x, y, z, u)];
                    internal.for_each_next(z, y, u, |zn, pz| {
                        for (xn, &px) in model.transition_row(x, u).iter().enumerate() {
                            for (yn, &py) in model.channel_row(xn).iter().enumerate() {
                                let w = pz * px * py;
                                if w == 0.0 {
                                    continue;
                                }
                                for (un, pu) in policy.probs(yn, zn).iter().enumerate() {
                                    row[idx(xn, yn, zn, un)] += w * pu;
                                }
                            }
                        }
                    });
                }
            }
        }
    }
    let mut acc = one.clone();
    for _ in 1..m0 {
        acc = mat_mul(&acc, &one);
    }
    Ok(acc)
}

fn mat_mul(a: &[Vec<f64>], b: &[Vec<f64>]) -> Vec<Vec<f64>> {
    let n = b[0].len();
    a.iter()
        .map(|row| {
            let mut out = vec![0.0; n];
            for (k, &v) in row.iter().enumerate() {
                if v != 0.0 {
                    for (o, w) in out.iter_mut().zip(&b[k]) {
                        *o += v * w;
                    }
                }
            }
            out
        })
        .collect()
}

/// Largest `ε₀` and a `υ` satisfying the minorization-majorization bound on
/// the `m₀`-step matrix of the chain `(x,y,z,u)`.
pub fn check_condition3(
    policy: &PolicyTable,
    model: &PomdpModel,
    internal: &InternalStateSpec,
    m0: usize,
) -> Result<(f64, Vec<f64>)> {
    let rows = joint_action_matrix(policy, model, internal, m0)?;
    sandwich(&rows).map_err(|column| Error::NotErgodic { column })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CertifiedCondition {
    Condition2,
    Condition3,
    None,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ErgodicityCertificate {
    pub alpha: f64,
    pub mu_bar: Vec<f64>,
    pub eps0: f64,
    pub nu: Vec<f64>,
    pub m0: usize,
    pub which: CertifiedCondition,
}

impl ErgodicityCertificate {
    /// Conditions 1 and 2 for `policy` at block length `m0`.
    pub fn from_conditions(policy: &PolicyTable, model: &PomdpModel, m0: usize) -> Result<Self> {
        let (alpha, mu_bar) = check_condition1(policy)?;
        let (eps0, nu) = check_condition2(model, &mu_bar, m0)?;
        Ok(Self {
            alpha,
            mu_bar,
            eps0,
            nu,
            m0,
            which: CertifiedCondition::Condition2,
        })
    }

    /// Condition 3 for `policy` at block length `m0`; `α` is not used there.
    pub fn from_joint_chain(
        policy: &PolicyTable,
        model: &PomdpModel,
        internal: &InternalStateSpec,
        m0: usize,
    ) -> Result<Self> {
        let (eps0, nu) = check_condition3(policy, model, internal, m0)?;
        Ok(Self {
            alpha: 1.0,
            mu_bar: Vec::new(),
            eps0,
            nu,
            m0,
            which: CertifiedCondition::Condition3,
        })
    }

    /// Per-block minorization constant of the smoothing kernels:
    /// `α^{2m₀−2} ε₀²` (or `ε₀²` under Condition 3).
    pub fn block_constant(&self) -> f64 {
        match self.which {
            CertifiedCondition::Condition2 => powi(self.alpha, 2 * self.m0 as i32 - 2) * self.eps0 * self.eps0,
            _ => self.eps0 * self.eps0,
        }
    }

    /// `(1 − α^{2m₀−2} ε₀²)^{⌊n/m₀⌋}`
    pub fn envelope(&self, n: usize) -> f64 {
        powi(1.0 - self.block_constant(), (n / self.m0) as i32)
    }
}

/// `β_{k|n}(x) = P(y_{k+1}^n, u_k^{n−1} | x_k = x, h_k)` for `k = 0..=n`.
#[derive(Debug, Clone, PartialEq)]
pub struct BackwardVariables {
    pub beta: Vec<Vec<f64>>,
}

impl BackwardVariables {
    pub fn horizon(&self) -> usize {
        self.beta.len() - 1
    }
}

/// Backward recursion from `β_{n|n} ≡ 1`:
/// `β_{k|n}(x) = Σ_{x'} π(u_k|y_k,z_k) P(x'|x,u_k) Φ(y_{k+1}|x') β_{k+1|n}(x')`.
pub fn backward_variables(model: &PomdpModel, policy: &PolicyTable, history: &History) -> BackwardVariables {
    let nx = model.n_states();
    let n = history.len();
    let mut beta = vec![vec![1.0; nx]; n + 1];
    for k in (0..n).rev() {
        let (y, z, u) = (history.observation(k), history.internal_state(k), history.actions[k]);
        let yn = history.observation(k + 1);
        let p = policy.probs(y, z)[u];
        for x in 0..nx {
            let mut acc = 0.0;
            for (xn, &t) in model.transition_row(x, u).iter().enumerate() {
                acc += t * model.channel(xn, yn) * beta[k + 1][xn];
            }
            beta[k][x] = p * acc;
        }
    }
    BackwardVariables { beta }
}

/// Row-stochastic kernel over `X`, with rows whose normalizer vanished
/// flagged as degenerate (and left at zero).
#[derive(Debug, Clone, PartialEq)]
pub struct SmoothingKernel {
    pub block: usize,
    pub n_states: usize,
    /// `kernel[x·|X| + x'] = κ(x'|x)`
    pub kernel: Vec<f64>,
    pub degenerate: Vec<bool>,
}

impl SmoothingKernel {
    pub fn row(&self, x: usize) -> &[f64] {
        &self.kernel[x * self.n_states..(x + 1) * self.n_states]
    }

    /// `(K₁K₂)(x''|x) = Σ_{x'} K₁(x'|x)K₂(x''|x')`
    pub fn compose(&self, other: &SmoothingKernel) -> SmoothingKernel {
        let n = self.n_states;
        let mut kernel = vec![0.0; n * n];
        for x in 0..n {
            if self.degenerate[x] {
                continue;
            }
            for (xm, &a) in self.row(x).iter().enumerate() {
                if a == 0.0 {
                    continue;
                }
                for (o, b) in kernel[x * n..(x + 1) * n].iter_mut().zip(other.row(xm)) {
                    *o += a * b;
                }
            }
        }
        SmoothingKernel {
            block: self.block,
            n_states: n,
            kernel,
            degenerate: self.degenerate.clone(),
        }
    }
}

/// One-step conditional kernels
/// `κ̃_{k|n}(x'|x) ∝ P(x'|x,u_k) Φ(y_{k+1}|x') β_{k+1|n}(x')` for `k < n`.
pub fn one_step_kernels(model: &PomdpModel, history: &History, backward: &BackwardVariables) -> Vec<SmoothingKernel> {
    let nx = model.n_states();
    (0..history.len())
        .map(|k| {
            let (u, yn) = (history.actions[k], history.observation(k + 1));
            let mut kernel = vec![0.0; nx * nx];
            let mut degenerate = vec![false; nx];
            for x in 0..nx {
                let row = &mut kernel[x * nx..(x + 1) * nx];
                for (xn, &t) in model.transition_row(x, u).iter().enumerate() {
                    row[xn] = t * model.channel(xn, yn) * backward.beta[k + 1][xn];
                }
                let s: f64 = row.iter().sum();
                if s > 0.0 {
                    row.iter_mut().for_each(|v| *v /= s);
                } else {
                    degenerate[x] = true;
                }
            }
            SmoothingKernel {
                block: k,
                n_states: nx,
                kernel,
                degenerate,
            }
        })
        .collect()
}

/// Block kernels `κ^{m₀}_{ℓ|n} = κ̃_{ℓm₀|n} ⋯ κ̃_{(ℓ+1)m₀−1|n}` for
/// `ℓ < ⌊n/m₀⌋`. Fails with `DegenerateHistory` when every row of some
/// one-step kernel is degenerate, i.e. the history is impossible.
pub fn smoothing_kernels(
    model: &PomdpModel,
    policy: &PolicyTable,
    history: &History,
    m0: usize,
) -> Result<Vec<SmoothingKernel>> {
    if m0 == 0 || history.len() < m0 {
        return Err(Error::InvalidConfig("smoothing kernels need 1 ≤ m0 ≤ n".into()));
    }
    let backward = backward_variables(model, policy, history);
    let steps = one_step_kernels(model, history, &backward);
    if let Some(k) = steps.iter().position(|k| k.degenerate.iter().all(|d| *d)) {
        return Err(Error::DegenerateHistory { step: k });
    }
    Ok((0..history.len() / m0)
        .map(|l| {
            let mut block = steps[l * m0].clone();
            for step in &steps[l * m0 + 1..(l + 1) * m0] {
                block = block.compose(step);
            }
            block.block = l;
            block
        })
        .collect())
}

/// `φ(v₀,h_n)(x) ∝ v₀(x) β_{0|n}(x)`, the posterior of `x₀` given `h_n`.
pub fn initial_posterior(v0: &[f64], backward: &BackwardVariables) -> Result<Vec<f64>> {
    let mut out: Vec<f64> = v0.iter().zip(&backward.beta[0]).map(|(a, b)| a * b).collect();
    let s: f64 = out.iter().sum();
    if !(s > 0.0) {
        return Err(Error::DegenerateHistory { step: 0 });
    }
    out.iter_mut().for_each(|v| *v /= s);
    Ok(out)
}

/// `(vK)(x) = Σ_{x'} v(x') K(x|x')` with `kernel[x'·|X| + x] = K(x|x')`.
pub fn left_multiply(v: &[f64], kernel: &[f64]) -> Result<Vec<f64>> {
    let n = v.len();
    if kernel.len() != n * n {
        return Err(Error::DimensionMismatch {
            expected: n * n,
            found: kernel.len(),
        });
    }
    let mut out = vec![0.0; n];
    for (xp, &w) in v.iter().enumerate() {
        if w == 0.0 {
            continue;
        }
        for (o, k) in out.iter_mut().zip(&kernel[xp * n..(xp + 1) * n]) {
            *o += w * k;
        }
    }
    let s: f64 = out.iter().sum();
    if s > 0.0 {
        out.iter_mut().for_each(|o| *o /= s);
    }
    Ok(out)
}

/// Best constant `c` with `K(x'|x) ≥ c·μ(x')` over non-degenerate rows:
/// `c = Σ_{x'} min_x K(x'|x)`.
pub fn minorization_constant(kernel: &SmoothingKernel) -> f64 {
    let n = kernel.n_states;
    let live: Vec<usize> = (0..n).filter(|&x| !kernel.degenerate[x]).collect();
    if live.is_empty() {
        return 1.0;
    }
    (0..n)
        .map(|xn| live.iter().map(|&x| kernel.row(x)[xn]).fold(f64::INFINITY, f64::min))
        .sum()
}

#[derive(Debug, Clone, PartialEq)]
pub struct MinorizationReport {
    pub constants: Vec<f64>,
    pub bound: f64,
    pub holds: bool,
}

/// Compares each block kernel's minorization constant with the certified
/// `α^{2m₀−2} ε₀²`.
pub fn verify_kernel_minorization(kernels: &[SmoothingKernel], certificate: &ErgodicityCertificate) -> MinorizationReport {
    let constants: Vec<f64> = kernels.iter().map(minorization_constant).collect();
    let bound = certificate.block_constant();
    MinorizationReport {
        holds: constants.iter().all(|c| *c >= bound - 1e-12),
        constants,
        bound,
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ContractionPoint {
    pub n: usize,
    pub tv_mean: f64,
    pub tv_max: f64,
    /// `(1 − α^{2m₀−2}ε₀²)^{⌊n/m₀⌋}`, when certified.
    pub envelope: Option<f64>,
    /// Histories where the filter TV exceeded the certified per-history
    /// bound `envelope · d_TV(φ(v₀,h_n), φ(v₀',h_n))`.
    pub envelope_violations: usize,
    /// Histories where TV grew along the smoothing-kernel chain.
    pub expansion_violations: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ContractionCurve {
    pub points: Vec<ContractionPoint>,
    pub samples: usize,
    /// Histories impossible under one of the priors, left out of the means.
    pub skipped: usize,
    pub monotone: bool,
}

/// Samples `samples` histories under `policy` (initial history from the
/// warm start), runs the filters from `v0` and `v0_prime` on the same
/// prefixes of length `n ∈ n_list`, and records their total variation.
#[allow(clippy::too_many_arguments)]
pub fn contraction_experiment<R: Rng + ?Sized>(
    model: &PomdpModel,
    policy: &PolicyTable,
    internal: &InternalStateSpec,
    warm: &WarmStart,
    n_list: &[usize],
    priors: (&[f64], &[f64]),
    samples: usize,
    certificate: Option<&ErgodicityCertificate>,
    rng: &mut R,
) -> Result<ContractionCurve> {
    let nx = model.n_states();
    if priors.0.len() != nx || priors.1.len() != nx {
        return Err(Error::DimensionMismatch {
            expected: nx,
            found: priors.0.len().max(priors.1.len()),
        });
    }
    let mut order: Vec<usize> = n_list.to_vec();
    order.sort_unstable();
    order.dedup();
    let horizon = order.last().copied().unwrap_or(0);
    let sampler = Sampler::from_table(model, internal, policy.clone(), warm)?.without_beliefs();
    let mut sums = vec![0.0; order.len()];
    let mut maxes = vec![0.0f64; order.len()];
    let mut env_bad = vec![0usize; order.len()];
    let mut exp_bad = vec![0usize; order.len()];
    let mut skipped = 0;
    let mut used = 0;
    let (mut a, mut b) = (vec![0.0; nx], vec![0.0; nx]);
    let mut scratch = vec![0.0; nx];
    'histories: for _ in 0..samples {
        let h0 = sampler.sample_h0(rng)?;
        let rec = sampler.rollout((h0.x0, h0.y0, h0.z0), None, horizon, rng)?;
        let full = rec.history();
        let mut tv = vec![0.0; order.len()];
        a.copy_from_slice(priors.0);
        b.copy_from_slice(priors.1);
        let mut done = 0;
        for (i, &n) in order.iter().enumerate() {
            while done < n {
                let (y, u) = (full.observation(done + 1), full.actions[done]);
                if filter_step_slice(model, &a, y, u, &mut scratch).is_err() {
                    skipped += 1;
                    continue 'histories;
                }
                core::mem::swap(&mut a, &mut scratch);
                if filter_step_slice(model, &b, y, u, &mut scratch).is_err() {
                    skipped += 1;
                    continue 'histories;
                }
                core::mem::swap(&mut b, &mut scratch);
                done += 1;
            }
            tv[i] = tv_unchecked(&a, &b);
            if n == 0 {
                continue;
            }
            // the same filters through the smoothing-kernel representation
            let prefix = truncate(&full, n);
            let backward = backward_variables(model, policy, &prefix);
            let (pa, pb) = match (initial_posterior(priors.0, &backward), initial_posterior(priors.1, &backward)) {
                (Ok(pa), Ok(pb)) => (pa, pb),
                _ => {
                    skipped += 1;
                    continue 'histories;
                }
            };
            let m0 = certificate.map_or(1, |c| c.m0);
            let mut chain_tv = tv_unchecked(&pa, &pb);
            let start_tv = chain_tv;
            if n >= m0 {
                let kernels = smoothing_kernels(model, policy, &prefix, m0)?;
                let (mut va, mut vb) = (pa, pb);
                for k in &kernels {
                    va = left_multiply(&va, &k.kernel)?;
                    vb = left_multiply(&vb, &k.kernel)?;
                    let next = tv_unchecked(&va, &vb);
                    if next > chain_tv + 1e-12 {
                        exp_bad[i] += 1;
                    }
                    chain_tv = next;
                }
            }
            if let Some(c) = certificate {
                if tv[i] > c.envelope(n) * start_tv + 1e-12 {
                    env_bad[i] += 1;
                }
            }
        }
        used += 1;
        for i in 0..order.len() {
            sums[i] += tv[i];
            maxes[i] = maxes[i].max(tv[i]);
        }
    }
    let points: Vec<ContractionPoint> = order
        .iter()
        .enumerate()
        .map(|(i, &n)| ContractionPoint {
            n,
            tv_mean: if used > 0 { sums[i] / used as f64 } else { 0.0 },
            tv_max: maxes[i],
            envelope: certificate.map(|c| c.envelope(n)),
            envelope_violations: env_bad[i],
            expansion_violations: exp_bad[i],
        })
        .collect();
    let monotone = points.windows(2).all(|w| w[1].tv_mean <= w[0].tv_mean + 1e-12);
    Ok(ContractionCurve {
        points,
        samples: used,
        skipped,
        monotone,
    })
}

fn truncate(h: &History, n: usize) -> History {
    History {
        initial: h.initial,
        observations: h.observations[..n].to_vec(),
        actions: h.actions[..n].to_vec(),
        internal_states: h.internal_states[..n].to_vec(),
    }
}
