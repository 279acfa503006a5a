//! Softmax policy over state-action features.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{dot, norm};

/// `pi_theta(a|s) = exp(theta . psi(s,a)) / sum_a' exp(theta . psi(s,a'))`.
///
/// Features are stored flat, indexed `[(s * n_actions + a) * d_theta + k]`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "PolicyDocument", into = "PolicyDocument")]
pub struct SoftmaxPolicy {
    n_states: usize,
    n_actions: usize,
    d_theta: usize,
    psi: Vec<f64>,
    psi_bound: f64,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct PolicyDocument {
    /// `psi[s][a]` is the feature vector of the pair `(s, a)`.
    pub psi: Vec<Vec<Vec<f64>>>,
}

impl TryFrom<PolicyDocument> for SoftmaxPolicy {
    type Error = Error;

    fn try_from(doc: PolicyDocument) -> Result<Self> {
        SoftmaxPolicy::from_table(doc.psi)
    }
}

impl From<SoftmaxPolicy> for PolicyDocument {
    fn from(p: SoftmaxPolicy) -> Self {
        let psi = (0..p.n_states)
            .map(|s| (0..p.n_actions).map(|a| p.feature(s, a).to_vec()).collect())
            .collect();
        PolicyDocument { psi }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RegularityMethod {
    Analytic,
    Audited,
}

/// Constants `B`, `L_l`, `L` of the policy regularity conditions.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct PolicyRegularity {
    /// Bound on the score norm.
    pub b: f64,
    /// Lipschitz constant of the score in theta.
    pub l_l: f64,
    /// Lipschitz constant of the action probabilities in theta.
    pub l: f64,
    pub method: RegularityMethod,
}

impl SoftmaxPolicy {
    pub fn from_table(psi: Vec<Vec<Vec<f64>>>) -> Result<Self> {
        let n_states = psi.len();
        if n_states == 0 {
            return Err(Error::InvalidArgument("feature table has no states".into()));
        }
        let n_actions = psi[0].len();
        if n_actions == 0 {
            return Err(Error::InvalidArgument("feature table has no actions".into()));
        }
        let d_theta = psi[0][0].len();
        if d_theta == 0 {
            return Err(Error::InvalidArgument("policy feature dimension must be positive".into()));
        }
        let mut flat = Vec::with_capacity(n_states * n_actions * d_theta);
        for per_action in &psi {
            if per_action.len() != n_actions {
                return Err(Error::DimensionMismatch { expected: n_actions, got: per_action.len() });
            }
            for v in per_action {
                if v.len() != d_theta {
                    return Err(Error::DimensionMismatch { expected: d_theta, got: v.len() });
                }
                if v.iter().any(|x| !x.is_finite()) {
                    return Err(Error::InvalidArgument("non-finite policy feature".into()));
                }
                flat.extend_from_slice(v);
            }
        }
        Ok(Self::from_flat(n_states, n_actions, d_theta, flat))
    }

    fn from_flat(n_states: usize, n_actions: usize, d_theta: usize, psi: Vec<f64>) -> Self {
        let psi_bound = psi.chunks(d_theta).map(norm).fold(0.0, f64::max);
        SoftmaxPolicy { n_states, n_actions, d_theta, psi, psi_bound }
    }

    /// One-hot features over `(s, a)` pairs; `d_theta = n_states * n_actions`.
    pub fn tabular(n_states: usize, n_actions: usize) -> Self {
        let d = n_states * n_actions;
        let mut psi = vec![0.0; d * d];
        for i in 0..d {
            psi[i * d + i] = 1.0;
        }
        Self::from_flat(n_states, n_actions, d, psi)
    }

    /// Gaussian features, each vector rescaled to unit norm so `psi_bound = 1`.
    pub fn gaussian(n_states: usize, n_actions: usize, d_theta: usize, seed: u64) -> Result<Self> {
        if n_states == 0 || n_actions == 0 || d_theta == 0 {
            return Err(Error::InvalidArgument("policy dimensions must be positive".into()));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut psi = Vec::with_capacity(n_states * n_actions * d_theta);
        for _ in 0..n_states * n_actions {
            let v: Vec<f64> = (0..d_theta).map(|_| StandardNormal.sample(&mut rng)).collect();
            let n = norm(&v);
            psi.extend(v.iter().map(|x| x / n));
        }
        Ok(Self::from_flat(n_states, n_actions, d_theta, psi))
    }

    pub fn n_states(&self) -> usize {
        self.n_states
    }

    pub fn n_actions(&self) -> usize {
        self.n_actions
    }

    pub fn d_theta(&self) -> usize {
        self.d_theta
    }

    /// `max_{s,a} |psi(s,a)|`.
    pub fn psi_bound(&self) -> f64 {
        self.psi_bound
    }

    pub fn feature(&self, s: usize, a: usize) -> &[f64] {
        let start = (s * self.n_actions + a) * self.d_theta;
        &self.psi[start..start + self.d_theta]
    }

    pub fn check_theta(&self, theta: &[f64]) -> Result<()> {
        if theta.len() != self.d_theta {
            return Err(Error::DimensionMismatch { expected: self.d_theta, got: theta.len() });
        }
        match theta.iter().position(|x| !x.is_finite()) {
            Some(i) => Err(Error::NonFiniteTheta(i)),
            None => Ok(()),
        }
    }

    /// Action distribution at `s`, computed with max-logit subtraction.
    pub fn action_probs(&self, theta: &[f64], s: usize) -> Result<Vec<f64>> {
        self.check_theta(theta)?;
        Ok(self.probs_unchecked(theta, s))
    }

    pub(crate) fn probs_unchecked(&self, theta: &[f64], s: usize) -> Vec<f64> {
        let logits: Vec<f64> = (0..self.n_actions).map(|a| dot(theta, self.feature(s, a))).collect();
        softmax(&logits)
    }

    /// Score `grad_theta log pi_theta(a|s) = psi(s,a) - sum_a' pi(a'|s) psi(s,a')`.
    pub fn log_prob_grad(&self, theta: &[f64], s: usize, a: usize) -> Result<Vec<f64>> {
        let probs = self.action_probs(theta, s)?;
        Ok(self.score_with_probs(&probs, s, a))
    }

    /// Score at `(s, a)` given the already computed action distribution at `s`.
    pub fn score_with_probs(&self, probs: &[f64], s: usize, a: usize) -> Vec<f64> {
        let mut g = self.feature(s, a).to_vec();
        for (b, &p) in probs.iter().enumerate() {
            for (gk, fk) in g.iter_mut().zip(self.feature(s, b)) {
                *gk -= p * fk;
            }
        }
        g
    }

    /// Constants implied by the softmax structure alone.
    ///
    /// The score is `psi(s,a) - E[psi]` (norm at most `2 |psi|`), its Jacobian is
    /// `-Cov(psi)` (norm at most `|psi|^2`) and `|grad pi(a|s)| <= 2 |psi| pi (1 - pi) <= |psi| / 2`.
    pub fn analytic_regularity(&self) -> PolicyRegularity {
        let p = self.psi_bound;
        PolicyRegularity { b: 2.0 * p, l_l: p * p, l: 0.5 * p, method: RegularityMethod::Analytic }
    }

    /// Measures the regularity constants on the supplied samples.
    pub fn audit_regularity(
        &self,
        theta_samples: &[Vec<f64>],
        pair_samples: &[(Vec<f64>, Vec<f64>)],
    ) -> Result<PolicyRegularity> {
        if theta_samples.is_empty() {
            return Err(Error::EmptySamples("theta samples"));
        }
        if pair_samples.is_empty() {
            return Err(Error::EmptySamples("theta pairs"));
        }
        let mut b: f64 = 0.0;
        for theta in theta_samples {
            self.check_theta(theta)?;
            for s in 0..self.n_states {
                let probs = self.probs_unchecked(theta, s);
                for a in 0..self.n_actions {
                    b = b.max(norm(&self.score_with_probs(&probs, s, a)));
                }
            }
        }
        let (mut l_l, mut l): (f64, f64) = (0.0, 0.0);
        for (t1, t2) in pair_samples {
            self.check_theta(t1)?;
            self.check_theta(t2)?;
            let dist = norm(&t1.iter().zip(t2).map(|(x, y)| x - y).collect::<Vec<_>>());
            if dist == 0.0 {
                continue;
            }
            for s in 0..self.n_states {
                let p1 = self.probs_unchecked(t1, s);
                let p2 = self.probs_unchecked(t2, s);
                for a in 0..self.n_actions {
                    let g1 = self.score_with_probs(&p1, s, a);
                    let g2 = self.score_with_probs(&p2, s, a);
                    let dg = norm(&g1.iter().zip(&g2).map(|(x, y)| x - y).collect::<Vec<_>>());
                    l_l = l_l.max(dg / dist);
                    l = l.max((p1[a] - p2[a]).abs() / dist);
                    b = b.max(norm(&g1)).max(norm(&g2));
                }
            }
        }
        assert!(
            b <= 2.0 * self.psi_bound + 1e-9,
            "score norm {b} exceeds 2 * psi_bound = {}",
            2.0 * self.psi_bound
        );
        Ok(PolicyRegularity { b, l_l, l, method: RegularityMethod::Audited })
    }

    /// Norm of `sum_a b * grad pi(a|s)`, which vanishes for any state-only baseline.
    pub fn baseline_identity_check(&self, theta: &[f64], s: usize, b_value: f64) -> Result<f64> {
        let probs = self.action_probs(theta, s)?;
        let mut acc = vec![0.0; self.d_theta];
        for (a, &p) in probs.iter().enumerate() {
            let score = self.score_with_probs(&probs, s, a);
            for (x, g) in acc.iter_mut().zip(&score) {
                *x += b_value * p * g;
            }
        }
        Ok(norm(&acc))
    }
}

/// Numerically stable softmax.
pub fn softmax(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.iter().map(|l| (l - max).exp()).collect();
    let z: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / z).collect()
}
