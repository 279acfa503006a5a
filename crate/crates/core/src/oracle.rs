//! Exact theorem-side quantities for a fixed policy parameter.
//!
//! Everything here is computed by dense linear algebra on the finite MDP:
//! the stationary distribution, the average reward `J`, the differential value
//! functions `V` and `Q` (anchored so that `mu^T V = 0`), the exact policy
//! gradient, the TD(0) system `(A, b)`, its fixed point `omega*`, the
//! negative-definiteness margin `lambda` of `A`, and the approximation error of
//! the linear critic at `omega*`.

use nalgebra::{DVector, SymmetricEigen};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::chain::{policy_kernel, stationary_distribution};
use crate::env::FiniteMdp;
use crate::error::{Error, Result};
use crate::linalg::{dist_sq, dot, norm, Matrix};
use crate::policy::SoftmaxPolicy;

/// Margins at or below this value count as a violated negative-definiteness assumption.
pub const LAMBDA_TOL: f64 = 1e-10;

/// Critic feature map `phi: S -> R^d` with `|phi(s)| <= 1`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "FeatureDocument", into = "FeatureDocument")]
pub struct FeatureMap {
    n_states: usize,
    d: usize,
    phi: Vec<f64>,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct FeatureDocument {
    pub phi: Vec<Vec<f64>>,
}

impl TryFrom<FeatureDocument> for FeatureMap {
    type Error = Error;

    fn try_from(doc: FeatureDocument) -> Result<Self> {
        FeatureMap::from_table(doc.phi)
    }
}

impl From<FeatureMap> for FeatureDocument {
    fn from(f: FeatureMap) -> Self {
        FeatureDocument { phi: (0..f.n_states).map(|s| f.phi(s).to_vec()).collect() }
    }
}

impl FeatureMap {
    pub fn from_table(phi: Vec<Vec<f64>>) -> Result<Self> {
        let n_states = phi.len();
        if n_states == 0 {
            return Err(Error::InvalidArgument("feature map has no states".into()));
        }
        let d = phi[0].len();
        if d == 0 {
            return Err(Error::InvalidArgument("feature dimension must be positive".into()));
        }
        let mut flat = Vec::with_capacity(n_states * d);
        for row in &phi {
            if row.len() != d {
                return Err(Error::DimensionMismatch { expected: d, got: row.len() });
            }
            if row.iter().any(|x| !x.is_finite()) {
                return Err(Error::InvalidArgument("non-finite critic feature".into()));
            }
            if norm(row) > 1.0 + 1e-12 {
                return Err(Error::InvalidArgument(format!("feature norm {} exceeds 1", norm(row))));
            }
            flat.extend_from_slice(row);
        }
        Ok(FeatureMap { n_states, d, phi: flat })
    }

    /// Identity features. The all-ones direction lies in their span, so `A` is singular.
    pub fn one_hot(n_states: usize) -> Self {
        let mut phi = vec![0.0; n_states * n_states];
        for s in 0..n_states {
            phi[s * n_states + s] = 1.0;
        }
        FeatureMap { n_states, d: n_states, phi }
    }

    /// Gaussian columns made `weights`-orthogonal to the all-ones vector, then
    /// scaled so the largest row has unit norm.
    ///
    /// Because every column has zero `weights`-mean, no combination of them is a
    /// nonzero constant, which keeps `A` negative definite for every policy.
    pub fn orthogonalized_random(n_states: usize, d: usize, weights: &[f64], seed: u64) -> Result<Self> {
        if d == 0 || d >= n_states {
            return Err(Error::InvalidArgument(format!(
                "need 0 < d < n_states for orthogonalized features (d = {d}, n_states = {n_states})"
            )));
        }
        if weights.len() != n_states {
            return Err(Error::DimensionMismatch { expected: n_states, got: weights.len() });
        }
        let wsum: f64 = weights.iter().sum();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut phi = vec![0.0; n_states * d];
        for k in 0..d {
            let col: Vec<f64> = (0..n_states).map(|_| StandardNormal.sample(&mut rng)).collect();
            let mean = dot(&col, weights) / wsum;
            for s in 0..n_states {
                phi[s * d + k] = col[s] - mean;
            }
        }
        let scale = phi.chunks(d).map(norm).fold(0.0, f64::max);
        if scale == 0.0 {
            return Err(Error::InvalidArgument("degenerate random features".into()));
        }
        phi.iter_mut().for_each(|x| *x /= scale);
        Ok(FeatureMap { n_states, d, phi })
    }

    pub fn n_states(&self) -> usize {
        self.n_states
    }

    pub fn dim(&self) -> usize {
        self.d
    }

    pub fn phi(&self, s: usize) -> &[f64] {
        &self.phi[s * self.d..(s + 1) * self.d]
    }

    /// `phi(s)^T omega`.
    pub fn value(&self, s: usize, omega: &[f64]) -> f64 {
        dot(self.phi(s), omega)
    }
}

/// Exact quantities at one policy parameter.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct OracleReport {
    pub mu: Vec<f64>,
    /// Average reward `J(theta)`.
    pub j_value: f64,
    /// Differential value function anchored by `mu^T V = 0`.
    pub v: Vec<f64>,
    /// `q[s][a]`.
    pub q: Vec<Vec<f64>>,
    pub grad_j: Vec<f64>,
    /// Row-major `d x d`.
    pub a_matrix: Vec<Vec<f64>>,
    pub b_vector: Vec<f64>,
    /// `-A^{-1} b`; absent when `A` is numerically singular.
    pub omega_star: Option<Vec<f64>>,
    /// `-lambda_max((A + A^T) / 2)`.
    pub lambda: f64,
    /// Approximation error of `phi^T omega*`; absent together with `omega_star`.
    pub eps_app: Option<f64>,
    pub assumption_violated: bool,
}

impl OracleReport {
    pub fn grad_j_sq(&self) -> f64 {
        dot(&self.grad_j, &self.grad_j)
    }

    /// `omega*`, or the violated-assumption error.
    pub fn require_omega_star(&self) -> Result<&[f64]> {
        match (&self.omega_star, self.assumption_violated) {
            (Some(w), false) => Ok(w),
            _ => Err(Error::AssumptionViolated { lambda: self.lambda, probe: 0, theta: Vec::new() }),
        }
    }

    pub fn bellman_residual(&self, mdp: &FiniteMdp, policy: &SoftmaxPolicy, theta: &[f64]) -> Result<f64> {
        let mut worst: f64 = 0.0;
        for s in 0..mdp.n_states() {
            let probs = policy.action_probs(theta, s)?;
            let rhs: f64 = probs
                .iter()
                .enumerate()
                .map(|(a, &pa)| {
                    pa * (mdp.reward(s, a) - self.j_value + dot(mdp.row(s, a), &self.v))
                })
                .sum();
            worst = worst.max((self.v[s] - rhs).abs());
        }
        Ok(worst)
    }

    /// `max |A omega* + b|`-style residual (Euclidean norm).
    pub fn td_fixed_point_residual(&self) -> Option<f64> {
        let w = self.omega_star.as_ref()?;
        let r: Vec<f64> = self
            .a_matrix
            .iter()
            .zip(&self.b_vector)
            .map(|(row, b)| dot(row, w) + b)
            .collect();
        Some(norm(&r))
    }
}

fn check_shapes(mdp: &FiniteMdp, policy: &SoftmaxPolicy, features: &FeatureMap) -> Result<()> {
    if features.n_states() != mdp.n_states() {
        return Err(Error::DimensionMismatch { expected: mdp.n_states(), got: features.n_states() });
    }
    if policy.n_states() != mdp.n_states() || policy.n_actions() != mdp.n_actions() {
        return Err(Error::InvalidArgument("policy and MDP disagree on state/action spaces".into()));
    }
    Ok(())
}

/// Average reward `J(theta) = sum_s mu(s) sum_a pi(a|s) r(s,a)` only.
pub fn average_reward(mdp: &FiniteMdp, policy: &SoftmaxPolicy, theta: &[f64]) -> Result<f64> {
    let kernel = policy_kernel(mdp, policy, theta)?;
    let mu = stationary_distribution(&kernel)?;
    let mut j = 0.0;
    for (s, &m) in mu.iter().enumerate() {
        let probs = policy.action_probs(theta, s)?;
        j += m * probs.iter().enumerate().map(|(a, &p)| p * mdp.reward(s, a)).sum::<f64>();
    }
    Ok(j)
}

pub fn compute_oracle(
    mdp: &FiniteMdp,
    policy: &SoftmaxPolicy,
    theta: &[f64],
    features: &FeatureMap,
) -> Result<OracleReport> {
    check_shapes(mdp, policy, features)?;
    let n = mdp.n_states();
    let n_a = mdp.n_actions();
    let d = features.dim();

    let probs: Vec<Vec<f64>> = (0..n).map(|s| policy.action_probs(theta, s)).collect::<Result<_>>()?;
    let kernel = policy_kernel(mdp, policy, theta)?;
    let mu = stationary_distribution(&kernel)?;

    let r_pi: Vec<f64> = (0..n)
        .map(|s| (0..n_a).map(|a| probs[s][a] * mdp.reward(s, a)).sum())
        .collect();
    let j_value = dot(&mu, &r_pi);

    // (I - P + 1 mu^T) V = r_pi - J 1 has a unique solution, and it satisfies mu^T V = 0.
    let mut sys = Matrix::identity(n, n) - &kernel;
    for i in 0..n {
        for j in 0..n {
            sys[(i, j)] += mu[j];
        }
    }
    let rhs = DVector::from_iterator(n, r_pi.iter().map(|r| r - j_value));
    let lu = sys.clone().lu();
    let mut v = lu
        .solve(&rhs)
        .ok_or_else(|| Error::NotErgodic("singular Poisson system for the differential value".into()))?;
    let resid = &rhs - &sys * &v;
    if let Some(corr) = lu.solve(&resid) {
        v += corr;
    }
    let v: Vec<f64> = v.iter().copied().collect();

    let q: Vec<Vec<f64>> = (0..n)
        .map(|s| {
            (0..n_a)
                .map(|a| mdp.reward(s, a) - j_value + dot(mdp.row(s, a), &v))
                .collect()
        })
        .collect();

    let mut grad_j = vec![0.0; policy.d_theta()];
    for s in 0..n {
        for a in 0..n_a {
            let score = policy.score_with_probs(&probs[s], s, a);
            let w = mu[s] * q[s][a] * probs[s][a];
            for (g, x) in grad_j.iter_mut().zip(&score) {
                *g += w * x;
            }
        }
    }

    // A = E[phi(s) (phi(s') - phi(s))^T], b = E[(r(s,a) - J) phi(s)]
    let mut a_mat = Matrix::zeros(d, d);
    let mut b_vec = DVector::zeros(d);
    for s in 0..n {
        let phi_s = features.phi(s);
        for (a, &p_sa) in probs[s].iter().enumerate() {
            let w_sa = mu[s] * p_sa;
            if w_sa == 0.0 {
                continue;
            }
            let r_dev = mdp.reward(s, a) - j_value;
            for (b_i, &f) in b_vec.iter_mut().zip(phi_s.iter()) {
                *b_i += w_sa * r_dev * f;
            }
            for (s2, &p) in mdp.row(s, a).iter().enumerate() {
                let w = w_sa * p;
                if w == 0.0 {
                    continue;
                }
                let phi_n = features.phi(s2);
                for i in 0..d {
                    for k in 0..d {
                        a_mat[(i, k)] += w * phi_s[i] * (phi_n[k] - phi_s[k]);
                    }
                }
            }
        }
    }

    let sym = (&a_mat + a_mat.transpose()) * 0.5;
    let lambda = -SymmetricEigen::new(sym).eigenvalues.max();
    let assumption_violated = lambda.is_nan() || lambda <= LAMBDA_TOL;

    let omega_star = if assumption_violated {
        None
    } else {
        a_mat.clone().lu().solve(&(-&b_vec)).map(|w| w.iter().copied().collect::<Vec<f64>>())
    };
    let eps_app = omega_star.as_ref().map(|w| {
        (0..n)
            .map(|s| {
                let e = features.value(s, w) - v[s];
                mu[s] * e * e
            })
            .sum::<f64>()
            .sqrt()
    });

    Ok(OracleReport {
        mu,
        j_value,
        v,
        q,
        grad_j,
        a_matrix: (0..d).map(|i| (0..d).map(|k| a_mat[(i, k)]).collect()).collect(),
        b_vector: b_vec.iter().copied().collect(),
        omega_star,
        lambda,
        eps_app,
        assumption_violated,
    })
}

/// `R_omega = safety * 2 U_r / lambda`.
pub fn projection_radius(u_r: f64, lambda_min: f64, safety: f64) -> Result<f64> {
    if lambda_min.is_nan() || lambda_min <= 0.0 {
        return Err(Error::InvalidArgument(format!("lambda must be positive, got {lambda_min}")));
    }
    if safety.is_nan() || safety < 1.0 {
        return Err(Error::InvalidArgument(format!("safety factor must be >= 1, got {safety}")));
    }
    Ok(safety * 2.0 * u_r / lambda_min)
}

/// Largest `|omega*(t1) - omega*(t2)| / |t1 - t2|` over the supplied pairs.
pub fn lipschitz_probe_omega_star(
    mdp: &FiniteMdp,
    policy: &SoftmaxPolicy,
    features: &FeatureMap,
    pairs: &[(Vec<f64>, Vec<f64>)],
) -> Result<f64> {
    if pairs.is_empty() {
        return Err(Error::EmptySamples("theta pairs"));
    }
    let mut worst: f64 = 0.0;
    for (i, (t1, t2)) in pairs.iter().enumerate() {
        let dist = dist_sq(t1, t2).sqrt();
        if dist == 0.0 {
            return Err(Error::InvalidArgument(format!("pair {i} has identical endpoints")));
        }
        let mut stars = Vec::with_capacity(2);
        for theta in [t1, t2] {
            let rep = compute_oracle(mdp, policy, theta, features)?;
            let w = rep.require_omega_star().map_err(|_| Error::AssumptionViolated {
                lambda: rep.lambda,
                probe: i,
                theta: theta.clone(),
            })?;
            stars.push(w.to_vec());
        }
        worst = worst.max(dist_sq(&stars[0], &stars[1]).sqrt() / dist);
    }
    Ok(worst)
}
