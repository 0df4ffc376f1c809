//! Exact ground truth on small instances: the joint chain over
//! `(x,y,z)`, exact values, the m-step fixed point, visitation
//! distributions and brute-force search over deterministic controllers.

mod diagnostics;

pub use diagnostics::*;

use crate::controller::{InternalStateSpec, PolicyTable};
use crate::linalg::{Lu, Matrix};
use crate::math::{ceil, dot, ln, powi};
use crate::model::PomdpModel;
use crate::sampling::{InitialLaw, WarmStart};
use crate::{Error, Result};
use alloc::vec;
use alloc::vec::Vec;

/// Cap on `|X|·|Y|·|Z|` for dense solves on the joint chain.
pub const MAX_JOINT_STATES: usize = 2048;
/// Cap on `|X|·|Y|·|Z|·|U|`.
pub const MAX_TABLE_ENTRIES: usize = 200_000;
/// Cap on the number of deterministic controllers enumerated.
pub const MAX_ENUMERATION: u128 = 1_000_000;
/// Values closer than this count as ties in the brute-force search.
pub const TIE_TOLERANCE: f64 = 1e-10;

/// `H = ⌈log(10⁻⁸(1−γ))/log γ⌉`, so that `γ^H/(1−γ) ≤ 10⁻⁸`.
pub fn default_horizon(gamma: f64) -> usize {
    let h = ceil(ln(1e-8 * (1.0 - gamma)) / ln(gamma));
    if h.is_finite() && h >= 1.0 {
        h as usize
    } else {
        1
    }
}

/// Law of the hidden state attached to each `(y,z)`.
#[derive(Debug, Clone, PartialEq)]
pub struct PriorTable {
    n_states: usize,
    n_z: usize,
    data: Vec<f64>,
}

impl PriorTable {
    /// `b₀(·|y,z)` where defined and uniform elsewhere.
    pub fn from_law(law: &InitialLaw, n_states: usize, n_obs: usize, n_z: usize) -> Self {
        let mut data = vec![1.0 / n_states as f64; n_states * n_obs * n_z];
        for y in 0..n_obs {
            for z in 0..n_z {
                if let Some(b) = law.prior(y, z) {
                    let s = (y * n_z + z) * n_states;
                    data[s..s + n_states].copy_from_slice(b);
                }
            }
        }
        Self { n_states, n_z, data }
    }

    pub fn get(&self, y: usize, z: usize) -> &[f64] {
        let s = (y * self.n_z + z) * self.n_states;
        &self.data[s..s + self.n_states]
    }
}

#[inline]
fn split(nx: usize, nz: usize, s: usize) -> (usize, usize, usize) {
    (s / (nx * nz), (s / nx) % nz, s % nx)
}

fn joint_successors(
    model: &PomdpModel,
    internal: &InternalStateSpec,
    s: usize,
    u: usize,
    mut f: impl FnMut(usize, f64),
) {
    let (nx, nz) = (model.n_states(), internal.n_z());
    let (y, z, x) = split(nx, nz, s);
    internal.for_each_next(z, y, u, |zn, pz| {
        for (xn, &px) in model.transition_row(x, u).iter().enumerate() {
            if px == 0.0 {
                continue;
            }
            for (yn, &py) in model.channel_row(xn).iter().enumerate() {
                if py > 0.0 {
                    f((yn * nz + zn) * nx + xn, pz * px * py);
                }
            }
        }
    });
}

/// The Markov chain of `s = (x,y,z)` under a stationary FSC policy,
/// indexed as `s = (y·|Z| + z)·|X| + x`.
#[derive(Debug, Clone)]
pub struct JointChain {
    model: PomdpModel,
    internal: InternalStateSpec,
    policy: PolicyTable,
    law: InitialLaw,
    kernel: Matrix,
    reward: Vec<f64>,
    lu: Lu,
    v0: Vec<f64>,
    occupancy: Vec<f64>,
    priors: PriorTable,
}

/// Exact values of a policy.
#[derive(Debug, Clone, PartialEq)]
pub struct ExactSolution {
    /// `Q^π(y,z,u)` at `(y·|Z| + z)·|U| + u`.
    pub q: Vec<f64>,
    /// `Q₀^π(x,y,z,u)` at `s·|U| + u`.
    pub q0: Vec<f64>,
    /// `V₀^π(x,y,z)` at `s`.
    pub v0: Vec<f64>,
    /// `V^π(y,z) = Σ_u π Q^π`.
    pub v: Vec<f64>,
    pub advantage: Vec<f64>,
    /// `V^π(ξ)`
    pub value: f64,
}

/// Visitation distributions of a policy.
#[derive(Debug, Clone, PartialEq)]
pub struct Visitation {
    /// `d_ξ^π(y,z)`
    pub d: Vec<f64>,
    /// `(d_ξ^π∘π)(y,z,u)`
    pub d_pi: Vec<f64>,
}

/// The m-step reward and kernel on `(y,z,u)`.
#[derive(Debug, Clone)]
pub struct MStepOperator {
    pub reward: Vec<f64>,
    pub kernel: Matrix,
    pub discount: f64,
}

impl MStepOperator {
    /// `‖Q − (R_m + γ^m P_m Q)‖_∞`
    pub fn residual(&self, q: &[f64]) -> f64 {
        let n = q.len();
        (0..n)
            .map(|i| (q[i] - self.reward[i] - self.discount * dot(self.kernel.row(i), q)).abs())
            .fold(0.0, f64::max)
    }
}

impl JointChain {
    pub fn new(
        model: &PomdpModel,
        internal: &InternalStateSpec,
        policy: &PolicyTable,
        warm: &WarmStart,
    ) -> Result<Self> {
        let (nx, ny, nz, nu) = (model.n_states(), model.n_obs(), internal.n_z(), model.n_actions());
        if (policy.n_obs(), policy.n_z(), policy.n_actions()) != (ny, nz, nu) {
            return Err(Error::InvalidModel("policy table does not match the controller".into()));
        }
        let ns = nx.saturating_mul(ny).saturating_mul(nz);
        if ns > MAX_JOINT_STATES {
            return Err(Error::SizeOverflow {
                size: ns,
                cap: MAX_JOINT_STATES,
            });
        }
        if ns.saturating_mul(nu) > MAX_TABLE_ENTRIES {
            return Err(Error::SizeOverflow {
                size: ns * nu,
                cap: MAX_TABLE_ENTRIES,
            });
        }
        let law = InitialLaw::compute(model, internal, warm)?;
        let mut kernel = Matrix::zeros(ns);
        let mut reward = vec![0.0; ns];
        for s in 0..ns {
            let (y, z, x) = split(nx, nz, s);
            for u in 0..nu {
                let p = policy.probs(y, z)[u];
                if p == 0.0 {
                    continue;
                }
                reward[s] += p * model.reward(x, u);
                joint_successors(model, internal, s, u, |sn, w| kernel[(s, sn)] += p * w);
            }
        }
        let gamma = model.gamma();
        let mut a = Matrix::identity(ns);
        for i in 0..ns {
            for j in 0..ns {
                a[(i, j)] -= gamma * kernel[(i, j)];
            }
        }
        let lu = Lu::factor(&a)?;
        let v0 = lu.solve(&reward);
        let mut occupancy = lu.solve_transpose(law.joint());
        occupancy.iter_mut().for_each(|v| *v = (*v * (1.0 - gamma)).max(0.0));

        // b₀ where defined, else the law of x given (y,z) under the
        // visitation, else uniform
        let mut data = vec![1.0 / nx as f64; ns];
        for y in 0..ny {
            for z in 0..nz {
                let s = (y * nz + z) * nx;
                if let Some(b) = law.prior(y, z) {
                    data[s..s + nx].copy_from_slice(b);
                } else {
                    let row = &occupancy[s..s + nx];
                    let total: f64 = row.iter().sum();
                    if total > 0.0 {
                        for x in 0..nx {
                            data[s + x] = row[x] / total;
                        }
                    }
                }
            }
        }
        Ok(Self {
            model: model.clone(),
            internal: internal.clone(),
            policy: policy.clone(),
            law,
            kernel,
            reward,
            lu,
            v0,
            occupancy,
            priors: PriorTable {
                n_states: nx,
                n_z: nz,
                data,
            },
        })
    }

    #[inline]
    fn split(&self, s: usize) -> (usize, usize, usize) {
        split(self.model.n_states(), self.internal.n_z(), s)
    }

    #[inline]
    pub fn index(&self, x: usize, y: usize, z: usize) -> usize {
        (y * self.internal.n_z() + z) * self.model.n_states() + x
    }

    /// Condition number of `I − γM_π`.
    pub fn condition(&self) -> f64 {
        self.lu.condition()
    }

    pub fn n_joint(&self) -> usize {
        self.kernel.dim()
    }

    pub fn model(&self) -> &PomdpModel {
        &self.model
    }
    pub fn internal(&self) -> &InternalStateSpec {
        &self.internal
    }
    pub fn policy(&self) -> &PolicyTable {
        &self.policy
    }
    pub fn initial_law(&self) -> &InitialLaw {
        &self.law
    }

    /// `M_π[s][s']`
    pub fn kernel(&self) -> &Matrix {
        &self.kernel
    }

    /// `Σ_u π(u|y,z) r(x,u)`
    pub fn reward(&self) -> &[f64] {
        &self.reward
    }

    /// Calls `f(s', T_u(s,s'))` with `T_u(s,s') = P(x'|x,u)Φ(y'|x')φ(z'|z,y,u)`.
    pub fn for_each_successor(&self, s: usize, u: usize, f: impl FnMut(usize, f64)) {
        joint_successors(&self.model, &self.internal, s, u, f);
    }

    /// Prior table used to condition on `(y,z)`: `b₀` where defined, the
    /// law of `x` given `(y,z)` under `d_ξ^π` where not, uniform if unvisited.
    pub fn priors(&self) -> &PriorTable {
        &self.priors
    }

    /// `V₀^π = (I − γM_π)⁻¹ r_π`
    pub fn v0(&self) -> &[f64] {
        &self.v0
    }

    /// `V^π(ξ) = Σ_s p₀(s) V₀^π(s)`
    pub fn value(&self) -> f64 {
        dot(self.law.joint(), &self.v0)
    }

    /// Discounted occupancy `(1−γ) p₀ᵀ(I − γM_π)⁻¹` over `(x,y,z)`.
    pub fn occupancy(&self) -> &[f64] {
        &self.occupancy
    }

    fn successor_dot(&self, s: usize, u: usize, v: &[f64]) -> f64 {
        let mut acc = 0.0;
        self.for_each_successor(s, u, |sn, w| acc += w * v[sn]);
        acc
    }

    /// Exact `Q₀^π`, `Q^π`, `V^π`, `A^π` and `V^π(ξ)`.
    pub fn exact(&self) -> ExactSolution {
        let (nx, ny, nz, nu) = self.dims();
        let gamma = self.model.gamma();
        let ns = self.n_joint();
        let mut q0 = vec![0.0; ns * nu];
        for s in 0..ns {
            let (_, _, x) = self.split(s);
            for u in 0..nu {
                q0[s * nu + u] = self.model.reward(x, u) + gamma * self.successor_dot(s, u, &self.v0);
            }
        }
        let mut q = vec![0.0; ny * nz * nu];
        let mut v = vec![0.0; ny * nz];
        let mut advantage = vec![0.0; q.len()];
        for y in 0..ny {
            for z in 0..nz {
                let yz = y * nz + z;
                let b = self.priors.get(y, z);
                for u in 0..nu {
                    q[yz * nu + u] = (0..nx).map(|x| b[x] * q0[(yz * nx + x) * nu + u]).sum();
                }
                v[yz] = dot(self.policy.probs(y, z), &q[yz * nu..(yz + 1) * nu]);
                for u in 0..nu {
                    advantage[yz * nu + u] = q[yz * nu + u] - v[yz];
                }
            }
        }
        ExactSolution {
            q,
            q0,
            v0: self.v0.clone(),
            v,
            advantage,
            value: self.value(),
        }
    }

    fn dims(&self) -> (usize, usize, usize, usize) {
        (
            self.model.n_states(),
            self.model.n_obs(),
            self.internal.n_z(),
            self.model.n_actions(),
        )
    }

    /// `d_ξ^π` over `(y,z)` and `d_ξ^π∘π` over `(y,z,u)`.
    pub fn visitation(&self) -> Visitation {
        let (nx, ny, nz, nu) = self.dims();
        let d: Vec<f64> = self.occupancy.chunks(nx).map(|c| c.iter().sum()).collect();
        let mut d_pi = vec![0.0; ny * nz * nu];
        for y in 0..ny {
            for z in 0..nz {
                for (u, p) in self.policy.probs(y, z).iter().enumerate() {
                    d_pi[(y * nz + z) * nu + u] = d[y * nz + z] * p;
                }
            }
        }
        Visitation { d, d_pi }
    }

    /// The m-step operator: `R_m(y,z,u)` is the expected `m`-step discounted
    /// reward from `x ∼ b₀(·|y,z)` with first action `u`, and
    /// `P_m((y,z,u),(y',z',u'))` the law of `(y_m,z_m,u_m)`.
    pub fn m_step(&self, m: usize) -> Result<MStepOperator> {
        if m == 0 {
            return Err(Error::InvalidConfig("m must be at least 1".into()));
        }
        let (nx, ny, nz, nu) = self.dims();
        let ns = self.n_joint();
        let nyz = ny * nz;
        let gamma = self.model.gamma();
        // w = Σ_{k<m−1} γ^k M^k r_π and G = M^{m−1} E with E the (y,z) marginal
        let mut w = vec![0.0; ns];
        let mut g = vec![0.0; ns * nyz];
        for s in 0..ns {
            g[s * nyz + s / nx] = 1.0;
        }
        for _ in 0..m - 1 {
            let mut wn = self.reward.clone();
            let mut gn = vec![0.0; ns * nyz];
            for s in 0..ns {
                let row = self.kernel.row(s);
                let mut acc = 0.0;
                for (sn, &p) in row.iter().enumerate() {
                    if p == 0.0 {
                        continue;
                    }
                    acc += p * w[sn];
                    let (dst, src) = (s * nyz, sn * nyz);
                    for j in 0..nyz {
                        gn[dst + j] += p * g[src + j];
                    }
                }
                wn[s] += gamma * acc;
            }
            w = wn;
            g = gn;
        }
        let nq = nyz * nu;
        let mut reward = vec![0.0; nq];
        let mut kernel = Matrix::zeros(nq);
        let mut next = vec![0.0; nyz];
        for y in 0..ny {
            for z in 0..nz {
                let yz = y * nz + z;
                let b = self.priors.get(y, z);
                for u in 0..nu {
                    let i = yz * nu + u;
                    next.iter_mut().for_each(|v| *v = 0.0);
                    let mut r = 0.0;
                    for x in 0..nx {
                        if b[x] == 0.0 {
                            continue;
                        }
                        let s = yz * nx + x;
                        let mut tail = 0.0;
                        self.for_each_successor(s, u, |sn, p| {
                            tail += p * w[sn];
                            for j in 0..nyz {
                                next[j] += b[x] * p * g[sn * nyz + j];
                            }
                        });
                        r += b[x] * (self.model.reward(x, u) + gamma * tail);
                    }
                    reward[i] = r;
                    for (j, &pj) in next.iter().enumerate() {
                        if pj == 0.0 {
                            continue;
                        }
                        let (yn, zn) = (j / nz, j % nz);
                        for (un, pu) in self.policy.probs(yn, zn).iter().enumerate() {
                            kernel[(i, j * nu + un)] += pj * pu;
                        }
                    }
                }
            }
        }
        Ok(MStepOperator {
            reward,
            kernel,
            discount: powi(gamma, m as i32),
        })
    }

    /// Solves `Q = R_m + γ^m P_m Q` on `(y,z,u)`.
    pub fn fixed_point(&self, m: usize) -> Result<Vec<f64>> {
        Ok(self.fixed_point_with_operator(m)?.0)
    }

    pub fn fixed_point_with_operator(&self, m: usize) -> Result<(Vec<f64>, MStepOperator)> {
        let op = self.m_step(m)?;
        let n = op.reward.len();
        let mut a = Matrix::identity(n);
        for i in 0..n {
            for j in 0..n {
                a[(i, j)] -= op.discount * op.kernel[(i, j)];
            }
        }
        let q = Lu::factor(&a)?.solve(&op.reward);
        Ok((q, op))
    }

    /// `d̃_m(y,z) = Σ_{y₀,z₀,u₀} d(y₀,z₀)π(u₀|y₀,z₀) P((y_m,z_m) = (y,z) | y₀,z₀,u₀)`.
    pub fn shifted_visitation(&self, m: usize) -> Result<Vec<f64>> {
        let op = self.m_step(m)?;
        let vis = self.visitation();
        let nu = self.model.n_actions();
        let nq = vis.d_pi.len();
        let mut out = vec![0.0; nq / nu];
        for i in 0..nq {
            if vis.d_pi[i] == 0.0 {
                continue;
            }
            for (j, p) in op.kernel.row(i).iter().enumerate() {
                out[j / nu] += vis.d_pi[i] * p;
            }
        }
        Ok(out)
    }
}

/// Exact values of `policy`.
pub fn exact_q(
    policy: &PolicyTable,
    model: &PomdpModel,
    internal: &InternalStateSpec,
    warm: &WarmStart,
) -> Result<ExactSolution> {
    Ok(JointChain::new(model, internal, policy, warm)?.exact())
}

/// The m-step fixed point `Q_*^π`.
pub fn fixed_point_q(
    policy: &PolicyTable,
    model: &PomdpModel,
    internal: &InternalStateSpec,
    warm: &WarmStart,
    m: usize,
) -> Result<Vec<f64>> {
    JointChain::new(model, internal, policy, warm)?.fixed_point(m)
}

/// `d_ξ^π` and `d_ξ^π∘π`.
pub fn exact_visitation(
    policy: &PolicyTable,
    model: &PomdpModel,
    internal: &InternalStateSpec,
    warm: &WarmStart,
) -> Result<Visitation> {
    Ok(JointChain::new(model, internal, policy, warm)?.visitation())
}

/// Best deterministic controller for a fixed internal kernel.
#[derive(Debug, Clone, PartialEq)]
pub struct BestFsc {
    /// `actions[y·|Z| + z]`
    pub actions: Vec<usize>,
    pub policy: PolicyTable,
    pub value: f64,
    pub evaluated: usize,
}

/// Enumerates every deterministic map `(y,z) → u` and evaluates `V(ξ)`
/// exactly. Ties within [`TIE_TOLERANCE`] keep the first map in
/// lexicographic order.
pub fn best_fsc_bruteforce(model: &PomdpModel, internal: &InternalStateSpec, warm: &WarmStart) -> Result<BestFsc> {
    let (ny, nz, nu) = (model.n_obs(), internal.n_z(), model.n_actions());
    let slots = ny * nz;
    let size = (0..slots).try_fold(1u128, |acc, _| acc.checked_mul(nu as u128));
    match size {
        Some(s) if s <= MAX_ENUMERATION => {}
        other => {
            return Err(Error::SearchSpaceTooLarge {
                size: other.unwrap_or(u128::MAX),
                cap: MAX_ENUMERATION,
            })
        }
    }
    let mut actions = vec![0usize; slots];
    let mut best: Option<BestFsc> = None;
    let mut evaluated = 0;
    loop {
        let table = PolicyTable::deterministic(ny, nz, nu, &actions);
        let value = JointChain::new(model, internal, &table, warm)?.value();
        evaluated += 1;
        if best.as_ref().is_none_or(|b| value > b.value + TIE_TOLERANCE) {
            best = Some(BestFsc {
                actions: actions.clone(),
                policy: table,
                value,
                evaluated: 0,
            });
        }
        // mixed-radix increment, last slot fastest
        let mut i = slots;
        loop {
            if i == 0 {
                let mut b = best.unwrap();
                b.evaluated = evaluated;
                return Ok(b);
            }
            i -= 1;
            actions[i] += 1;
            if actions[i] < nu {
                break;
            }
            actions[i] = 0;
        }
    }
}
