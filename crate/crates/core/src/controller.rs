//! Finite-state controllers: internal-state dynamics, feature maps and the
//! softmax-linear policy.

use crate::math::{dot, norm2, softmax_into};
use crate::rng::sample_index;
use crate::{Error, Result};
use alloc::format;
use alloc::sync::Arc;
use alloc::vec;
use alloc::vec::Vec;
use rand::Rng;

/// Cap on the number of internal states and on the feature dimension.
pub const MAX_INDEX_SPACE: usize = 1 << 22;

#[derive(Debug, Clone, PartialEq)]
pub enum InternalKind {
    /// Arbitrary kernel `φ[z][y][u][z']`.
    Generic { kernel: Vec<f64> },
    /// Window of the last `n` observations and actions.
    SlidingBlock { n: usize },
}

/// Internal-state space `Z` and its transition kernel `φ(z'|z,y,u)`.
#[derive(Debug, Clone, PartialEq)]
pub struct InternalStateSpec {
    n_z: usize,
    n_obs: usize,
    n_actions: usize,
    kind: InternalKind,
}

fn checked_pow(base: usize, exp: usize) -> Option<usize> {
    (0..exp).try_fold(1usize, |acc, _| acc.checked_mul(base))
}

impl InternalStateSpec {
    /// Sliding-block controller of block length `n`. States pack
    /// `(y_{k−n}..y_{k−1}, u_{k−n}..u_{k−1})` in mixed radix, oldest entry
    /// most significant, observations before actions. `n = 0` gives a
    /// single internal state.
    pub fn sliding_block(n: usize, n_obs: usize, n_actions: usize) -> Result<Self> {
        let n_z = checked_pow(n_obs, n)
            .and_then(|a| checked_pow(n_actions, n).and_then(|b| a.checked_mul(b)))
            .unwrap_or(usize::MAX);
        if n_z > MAX_INDEX_SPACE {
            return Err(Error::SizeOverflow {
                size: n_z,
                cap: MAX_INDEX_SPACE,
            });
        }
        Ok(Self {
            n_z,
            n_obs,
            n_actions,
            kind: InternalKind::SlidingBlock { n },
        })
    }

    /// Generic kernel stored as `kernel[((z·|Y| + y)·|U| + u)·|Z| + z']`.
    pub fn generic(n_z: usize, n_obs: usize, n_actions: usize, mut kernel: Vec<f64>) -> Result<Self> {
        if n_z == 0 {
            return Err(Error::InvalidModel("internal state space must be non-empty".into()));
        }
        let want = n_z * n_obs * n_actions * n_z;
        if kernel.len() != want {
            return Err(Error::DimensionMismatch {
                expected: want,
                found: kernel.len(),
            });
        }
        for (i, row) in kernel.chunks_mut(n_z).enumerate() {
            if row.iter().any(|p| !p.is_finite() || *p < 0.0) {
                return Err(Error::InvalidModel(format!("internal kernel row {i} has a negative entry")));
            }
            let s: f64 = row.iter().sum();
            if (s - 1.0).abs() > crate::model::ROW_SUM_TOLERANCE {
                return Err(Error::InvalidModel(format!("internal kernel row {i} sums to {s}")));
            }
            row.iter_mut().for_each(|p| *p /= s);
        }
        Ok(Self {
            n_z,
            n_obs,
            n_actions,
            kind: InternalKind::Generic { kernel },
        })
    }

    pub fn n_z(&self) -> usize {
        self.n_z
    }
    pub fn n_obs(&self) -> usize {
        self.n_obs
    }
    pub fn n_actions(&self) -> usize {
        self.n_actions
    }
    pub fn kind(&self) -> &InternalKind {
        &self.kind
    }

    pub fn block_length(&self) -> Option<usize> {
        match self.kind {
            InternalKind::SlidingBlock { n } => Some(n),
            InternalKind::Generic { .. } => None,
        }
    }

    fn u_radix(&self, n: usize) -> usize {
        checked_pow(self.n_actions, n).unwrap()
    }

    /// Packs a window of observations and actions (oldest first).
    pub fn encode_window(&self, ys: &[usize], us: &[usize]) -> usize {
        let (yi, ui) = (
            ys.iter().fold(0, |acc, &y| acc * self.n_obs + y),
            us.iter().fold(0, |acc, &u| acc * self.n_actions + u),
        );
        yi * self.u_radix(us.len()) + ui
    }

    /// Unpacks a sliding-block state into `(ys, us)`, oldest first.
    pub fn decode_window(&self, z: usize) -> (Vec<usize>, Vec<usize>) {
        let n = self.block_length().unwrap_or(0);
        let ur = self.u_radix(n);
        let (mut yi, mut ui) = (z / ur, z % ur);
        let mut ys = vec![0; n];
        let mut us = vec![0; n];
        for k in (0..n).rev() {
            ys[k] = yi % self.n_obs;
            yi /= self.n_obs;
            us[k] = ui % self.n_actions;
            ui /= self.n_actions;
        }
        (ys, us)
    }

    /// The successor when `φ(·|z,y,u)` is a point mass.
    pub fn next_deterministic(&self, z: usize, y: usize, u: usize) -> Option<usize> {
        match &self.kind {
            InternalKind::SlidingBlock { n } => {
                if *n == 0 {
                    return Some(0);
                }
                let ur = self.u_radix(*n);
                let yr = self.n_z / ur;
                let (yi, ui) = (z / ur, z % ur);
                let yi = (yi * self.n_obs + y) % yr;
                let ui = (ui * self.n_actions + u) % ur;
                Some(yi * ur + ui)
            }
            InternalKind::Generic { .. } => {
                let row = self.kernel_row(z, y, u);
                let mut it = row.iter().enumerate().filter(|(_, p)| **p > 0.0);
                match (it.next(), it.next()) {
                    (Some((i, p)), None) if *p == 1.0 => Some(i),
                    _ => None,
                }
            }
        }
    }

    fn kernel_row(&self, z: usize, y: usize, u: usize) -> &[f64] {
        match &self.kind {
            InternalKind::Generic { kernel } => {
                let s = ((z * self.n_obs + y) * self.n_actions + u) * self.n_z;
                &kernel[s..s + self.n_z]
            }
            InternalKind::SlidingBlock { .. } => unreachable!(),
        }
    }

    /// Calls `f(z', φ(z'|z,y,u))` for every successor with positive mass.
    pub fn for_each_next(&self, z: usize, y: usize, u: usize, mut f: impl FnMut(usize, f64)) {
        match &self.kind {
            InternalKind::SlidingBlock { .. } => f(self.next_deterministic(z, y, u).unwrap(), 1.0),
            InternalKind::Generic { .. } => {
                for (zn, &p) in self.kernel_row(z, y, u).iter().enumerate() {
                    if p > 0.0 {
                        f(zn, p);
                    }
                }
            }
        }
    }

    /// Draws `z' ∼ φ(·|z,y,u)`.
    pub fn step<R: Rng + ?Sized>(&self, z: usize, y: usize, u: usize, rng: &mut R) -> usize {
        match &self.kind {
            InternalKind::SlidingBlock { .. } => self.next_deterministic(z, y, u).unwrap(),
            InternalKind::Generic { .. } => sample_index(self.kernel_row(z, y, u), rng),
        }
    }
}

/// Feature map `ψ(y,z,u) ∈ R^d` with `‖ψ‖₂ ≤ 1`.
#[derive(Debug, Clone, PartialEq)]
pub enum FeatureMap {
    /// One-hot indicator of `(y,z,u)`; `d = |Y|·|Z|·|U|`.
    Tabular {
        n_obs: usize,
        n_z: usize,
        n_actions: usize,
    },
    /// Explicit table `table[((y·|Z| + z)·|U| + u)·d + i]`.
    Dense {
        n_obs: usize,
        n_z: usize,
        n_actions: usize,
        dim: usize,
        table: Vec<f64>,
    },
}

/// One-hot features over `(y,z,u)`.
pub fn tabular_features(n_obs: usize, n_z: usize, n_actions: usize) -> Result<FeatureMap> {
    tabular_features_capped(n_obs, n_z, n_actions, MAX_INDEX_SPACE)
}

pub fn tabular_features_capped(
    n_obs: usize,
    n_z: usize,
    n_actions: usize,
    cap: usize,
) -> Result<FeatureMap> {
    if n_obs == 0 || n_z == 0 || n_actions == 0 {
        return Err(Error::InvalidModel("feature index sets must be non-empty".into()));
    }
    let d = n_obs
        .checked_mul(n_z)
        .and_then(|v| v.checked_mul(n_actions))
        .unwrap_or(usize::MAX);
    if d > cap {
        return Err(Error::SizeOverflow { size: d, cap });
    }
    Ok(FeatureMap::Tabular {
        n_obs,
        n_z,
        n_actions,
    })
}

impl FeatureMap {
    /// Dense features; every vector must have norm at most 1.
    pub fn dense(n_obs: usize, n_z: usize, n_actions: usize, dim: usize, table: Vec<f64>) -> Result<Self> {
        let want = n_obs * n_z * n_actions * dim;
        if table.len() != want || dim == 0 {
            return Err(Error::DimensionMismatch {
                expected: want,
                found: table.len(),
            });
        }
        for (i, row) in table.chunks(dim).enumerate() {
            if norm2(row) > 1.0 + 1e-12 {
                return Err(Error::InvalidModel(format!("feature vector {i} has norm above 1")));
            }
        }
        Ok(Self::Dense {
            n_obs,
            n_z,
            n_actions,
            dim,
            table,
        })
    }

    pub fn dim(&self) -> usize {
        match self {
            Self::Tabular {
                n_obs,
                n_z,
                n_actions,
            } => n_obs * n_z * n_actions,
            Self::Dense { dim, .. } => *dim,
        }
    }

    pub fn shape(&self) -> (usize, usize, usize) {
        match self {
            Self::Tabular {
                n_obs,
                n_z,
                n_actions,
            }
            | Self::Dense {
                n_obs,
                n_z,
                n_actions,
                ..
            } => (*n_obs, *n_z, *n_actions),
        }
    }

    #[inline]
    fn flat(&self, y: usize, z: usize, u: usize) -> usize {
        let (_, nz, nu) = self.shape();
        (y * nz + z) * nu + u
    }

    /// `⟨v, ψ(y,z,u)⟩`
    #[inline]
    pub fn dot(&self, v: &[f64], y: usize, z: usize, u: usize) -> f64 {
        match self {
            Self::Tabular { .. } => v[self.flat(y, z, u)],
            Self::Dense { dim, table, .. } => {
                let s = self.flat(y, z, u) * dim;
                dot(v, &table[s..s + dim])
            }
        }
    }

    /// `out += scale · ψ(y,z,u)`
    #[inline]
    pub fn add_scaled(&self, out: &mut [f64], scale: f64, y: usize, z: usize, u: usize) {
        match self {
            Self::Tabular { .. } => out[self.flat(y, z, u)] += scale,
            Self::Dense { dim, table, .. } => {
                let s = self.flat(y, z, u) * dim;
                crate::math::axpy(scale, &table[s..s + dim], out);
            }
        }
    }

    pub fn feature(&self, y: usize, z: usize, u: usize) -> Vec<f64> {
        let mut out = vec![0.0; self.dim()];
        self.add_scaled(&mut out, 1.0, y, z, u);
        out
    }
}

/// Explicit stationary FSC policy table `π(u|y,z)`.
#[derive(Debug, Clone, PartialEq)]
pub struct PolicyTable {
    n_obs: usize,
    n_z: usize,
    n_actions: usize,
    probs: Vec<f64>,
}

impl PolicyTable {
    pub fn new(n_obs: usize, n_z: usize, n_actions: usize, probs: Vec<f64>) -> Result<Self> {
        let want = n_obs * n_z * n_actions;
        if probs.len() != want {
            return Err(Error::DimensionMismatch {
                expected: want,
                found: probs.len(),
            });
        }
        for (i, row) in probs.chunks(n_actions).enumerate() {
            let s: f64 = row.iter().sum();
            if row.iter().any(|p| !p.is_finite() || *p < 0.0) || (s - 1.0).abs() > 1e-9 {
                return Err(Error::InvalidModel(format!("policy row {i} is not a distribution")));
            }
        }
        Ok(Self {
            n_obs,
            n_z,
            n_actions,
            probs,
        })
    }

    pub fn uniform(n_obs: usize, n_z: usize, n_actions: usize) -> Self {
        Self {
            n_obs,
            n_z,
            n_actions,
            probs: vec![1.0 / n_actions as f64; n_obs * n_z * n_actions],
        }
    }

    /// Deterministic policy from `actions[y·|Z| + z]`.
    pub fn deterministic(n_obs: usize, n_z: usize, n_actions: usize, actions: &[usize]) -> Self {
        let mut probs = vec![0.0; n_obs * n_z * n_actions];
        for (s, &u) in actions.iter().enumerate() {
            probs[s * n_actions + u] = 1.0;
        }
        Self {
            n_obs,
            n_z,
            n_actions,
            probs,
        }
    }

    pub fn n_obs(&self) -> usize {
        self.n_obs
    }
    pub fn n_z(&self) -> usize {
        self.n_z
    }
    pub fn n_actions(&self) -> usize {
        self.n_actions
    }

    #[inline]
    pub fn probs(&self, y: usize, z: usize) -> &[f64] {
        let s = (y * self.n_z + z) * self.n_actions;
        &self.probs[s..s + self.n_actions]
    }

    pub fn data(&self) -> &[f64] {
        &self.probs
    }

    pub fn sample<R: Rng + ?Sized>(&self, y: usize, z: usize, rng: &mut R) -> usize {
        sample_index(self.probs(y, z), rng)
    }
}

/// Softmax-linear FSC policy `π_θ(u|y,z) ∝ exp(θᵀψ(y,z,u))`.
#[derive(Debug, Clone, PartialEq)]
pub struct FscPolicy {
    theta: Vec<f64>,
    features: Arc<FeatureMap>,
    internal: Arc<InternalStateSpec>,
}

impl FscPolicy {
    /// Zero parameter, i.e. the uniform (max-entropy) policy.
    pub fn max_entropy(features: Arc<FeatureMap>, internal: Arc<InternalStateSpec>) -> Result<Self> {
        let d = features.dim();
        Self::new(vec![0.0; d], features, internal)
    }

    pub fn new(theta: Vec<f64>, features: Arc<FeatureMap>, internal: Arc<InternalStateSpec>) -> Result<Self> {
        if theta.len() != features.dim() {
            return Err(Error::DimensionMismatch {
                expected: features.dim(),
                found: theta.len(),
            });
        }
        let (ny, nz, nu) = features.shape();
        if (ny, nz, nu) != (internal.n_obs(), internal.n_z(), internal.n_actions()) {
            return Err(Error::InvalidModel("feature map and internal state space disagree".into()));
        }
        Ok(Self {
            theta,
            features,
            internal,
        })
    }

    pub fn theta(&self) -> &[f64] {
        &self.theta
    }
    pub fn features(&self) -> &Arc<FeatureMap> {
        &self.features
    }
    pub fn internal(&self) -> &Arc<InternalStateSpec> {
        &self.internal
    }

    pub fn with_theta(&self, theta: Vec<f64>) -> Result<Self> {
        Self::new(theta, self.features.clone(), self.internal.clone())
    }

    pub fn n_actions(&self) -> usize {
        self.internal.n_actions()
    }

    fn probs_into(&self, y: usize, z: usize, logits: &mut [f64], out: &mut [f64]) {
        for (u, l) in logits.iter_mut().enumerate() {
            *l = self.features.dot(&self.theta, y, z, u);
        }
        softmax_into(logits, out);
    }

    /// `π_θ(·|y,z)`
    pub fn action_probs(&self, y: usize, z: usize) -> Vec<f64> {
        let nu = self.n_actions();
        let mut logits = vec![0.0; nu];
        let mut out = vec![0.0; nu];
        self.probs_into(y, z, &mut logits, &mut out);
        out
    }

    /// `∇_θ log π_θ(u|y,z) = ψ(y,z,u) − Σ_{u'} π_θ(u'|y,z) ψ(y,z,u')`.
    pub fn log_policy_gradient(&self, y: usize, z: usize, u: usize) -> Vec<f64> {
        let probs = self.action_probs(y, z);
        score(&self.features, &probs, y, z, u)
    }

    /// Tabulates `π_θ` over every `(y,z)`.
    pub fn to_table(&self) -> PolicyTable {
        let (ny, nz, nu) = self.features.shape();
        let mut probs = vec![0.0; ny * nz * nu];
        let mut logits = vec![0.0; nu];
        for y in 0..ny {
            for z in 0..nz {
                let s = (y * nz + z) * nu;
                self.probs_into(y, z, &mut logits, &mut probs[s..s + nu]);
            }
        }
        PolicyTable {
            n_obs: ny,
            n_z: nz,
            n_actions: nu,
            probs,
        }
    }
}

/// Score function `ψ(y,z,u) − Σ_{u'} probs[u'] ψ(y,z,u')` for given action probabilities.
pub fn score(features: &FeatureMap, probs: &[f64], y: usize, z: usize, u: usize) -> Vec<f64> {
    let mut g = features.feature(y, z, u);
    for (up, &p) in probs.iter().enumerate() {
        features.add_scaled(&mut g, -p, y, z, up);
    }
    g
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::math::ln;
    use crate::rng::stream_rng;

    fn policy(theta: Vec<f64>, ny: usize, n: usize, nu: usize) -> FscPolicy {
        let internal = Arc::new(InternalStateSpec::sliding_block(n, ny, nu).unwrap());
        let features = Arc::new(tabular_features(ny, internal.n_z(), nu).unwrap());
        FscPolicy::new(theta, features, internal).unwrap()
    }

    #[test]
    fn zero_theta_is_uniform() {
        let p = policy(vec![0.0; 2 * 4 * 2], 2, 1, 2);
        for y in 0..2 {
            for z in 0..4 {
                assert_eq!(p.action_probs(y, z), [0.5, 0.5]);
            }
        }
    }

    #[test]
    fn analytic_softmax_and_shift_invariance() {
        let p = policy(vec![1.0, 0.0], 1, 0, 2);
        let probs = p.action_probs(0, 0);
        assert!((probs[0] - 0.7310585786300049).abs() < 1e-12);
        assert!((probs[1] - 0.2689414213699951).abs() < 1e-12);
        let q = policy(vec![4.0, 3.0], 1, 0, 2);
        assert!((q.action_probs(0, 0)[0] - probs[0]).abs() < 1e-15);
    }

    #[test]
    fn single_action_has_zero_score() {
        let p = policy(vec![0.3], 1, 0, 1);
        assert_eq!(p.log_policy_gradient(0, 0, 0), [0.0]);
    }

    #[test]
    fn uniform_score_with_one_hot_features() {
        let p = policy(vec![0.0; 3], 1, 0, 3);
        let g = p.log_policy_gradient(0, 0, 1);
        let third = 1.0 / 3.0;
        for (i, v) in g.iter().enumerate() {
            let want = if i == 1 { 1.0 - third } else { -third };
            assert!((v - want).abs() < 1e-15);
        }
    }

    #[test]
    fn score_matches_central_differences() {
        let theta = vec![0.3, -1.2, 0.7, 2.0, -0.4, 0.1, 0.0, 0.9];
        let p = policy(theta.clone(), 2, 0, 4);
        let eps = 1e-5;
        for y in 0..2 {
            for u in 0..4 {
                let g = p.log_policy_gradient(y, 0, u);
                for i in 0..theta.len() {
                    let mut tp = theta.clone();
                    tp[i] += eps;
                    let mut tm = theta.clone();
                    tm[i] -= eps;
                    let lp = ln(p.with_theta(tp).unwrap().action_probs(y, 0)[u]);
                    let lm = ln(p.with_theta(tm).unwrap().action_probs(y, 0)[u]);
                    assert!(((lp - lm) / (2.0 * eps) - g[i]).abs() < 1e-6);
                }
            }
        }
    }

    #[test]
    fn sliding_block_shift() {
        let spec = InternalStateSpec::sliding_block(1, 3, 2).unwrap();
        assert_eq!(spec.n_z(), 6);
        let z = spec.encode_window(&[2], &[0]);
        let zn = spec.next_deterministic(z, 1, 1).unwrap();
        assert_eq!(spec.decode_window(zn), (vec![1], vec![1]));

        let spec0 = InternalStateSpec::sliding_block(0, 3, 2).unwrap();
        assert_eq!(spec0.n_z(), 1);
        assert_eq!(spec0.next_deterministic(0, 2, 1), Some(0));

        let spec3 = InternalStateSpec::sliding_block(3, 2, 3).unwrap();
        let z = spec3.encode_window(&[1, 0, 1], &[2, 0, 1]);
        assert_eq!(spec3.decode_window(z), (vec![1, 0, 1], vec![2, 0, 1]));
        let zn = spec3.next_deterministic(z, 0, 2).unwrap();
        assert_eq!(spec3.decode_window(zn), (vec![0, 1, 0], vec![0, 1, 2]));
    }

    #[test]
    fn deterministic_generic_kernel_is_table_lookup() {
        // Z = {0,1}; z' = y
        let mut kernel = vec![0.0; 8];
        for z in 0..2 {
            for y in 0..2 {
                kernel[(z * 2 + y) * 2 + y] = 1.0;
            }
        }
        let spec = InternalStateSpec::generic(2, 2, 1, kernel).unwrap();
        let mut rng = stream_rng(0, 0, 0);
        for z in 0..2 {
            for y in 0..2 {
                assert_eq!(spec.next_deterministic(z, y, 0), Some(y));
                assert_eq!(spec.step(z, y, 0, &mut rng), y);
            }
        }
    }

    #[test]
    fn tabular_feature_layout() {
        let f = tabular_features(1, 1, 2).unwrap();
        assert_eq!(f.dim(), 2);
        assert_eq!(f.feature(0, 0, 0), [1.0, 0.0]);
        assert_eq!(f.feature(0, 0, 1), [0.0, 1.0]);
        let g = tabular_features(2, 3, 2).unwrap();
        for a in 0..12 {
            let (y, z, u) = (a / 6, (a / 2) % 3, a % 2);
            let fa = g.feature(y, z, u);
            assert_eq!(norm2(&fa), 1.0);
            for b in 0..12 {
                let (y2, z2, u2) = (b / 6, (b / 2) % 3, b % 2);
                let d = dot(&fa, &g.feature(y2, z2, u2));
                assert_eq!(d, if a == b { 1.0 } else { 0.0 });
            }
        }
        assert!(matches!(
            tabular_features_capped(10, 10, 10, 999),
            Err(Error::SizeOverflow { size: 1000, cap: 999 })
        ));
    }

    #[test]
    fn dense_features_reject_long_vectors() {
        assert!(FeatureMap::dense(1, 1, 1, 2, vec![1.0, 1.0]).is_err());
        assert!(FeatureMap::dense(1, 1, 1, 2, vec![0.6, 0.8]).is_ok());
    }
}
