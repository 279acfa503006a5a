//! Markov-chain analysis of the state process under a fixed policy.

use serde::{Deserialize, Serialize};

use crate::env::FiniteMdp;
use crate::error::{Error, Result};
use crate::linalg::Matrix;
use crate::policy::SoftmaxPolicy;

/// Lower clamp for the fitted contraction factor.
pub const RHO_FLOOR: f64 = 1e-3;
/// Upper clamp for the fitted contraction factor.
pub const RHO_CEIL: f64 = 1.0 - 1e-6;
/// Default horizon of the envelope fit.
pub const DEFAULT_HORIZON: usize = 200;
/// Ratios before this lag are skipped when the chain is slow enough to allow it.
pub const TAU_MIN: usize = 5;
/// Distances at or below this level are treated as numerically mixed.
pub const TV_NOISE_FLOOR: f64 = 1e-12;
/// Residual contract of [`stationary_distribution`].
pub const STATIONARY_TOL: f64 = 1e-12;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Provenance {
    Fitted,
    Supplied,
}

/// Geometric mixing envelope `d_TV(P^tau(s, .), mu) <= m * rho^tau`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct MixingProfile {
    pub m: f64,
    pub rho: f64,
    pub provenance: Provenance,
    /// Last lag at which the envelope was checked; absent for supplied profiles.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub horizon: Option<usize>,
}

impl MixingProfile {
    pub fn supplied(m: f64, rho: f64) -> Result<Self> {
        if !(m > 0.0 && m.is_finite()) || !(rho > 0.0 && rho < 1.0) {
            return Err(Error::InvalidArgument(format!("invalid mixing profile m={m}, rho={rho}")));
        }
        Ok(MixingProfile { m, rho, provenance: Provenance::Supplied, horizon: None })
    }

    pub fn bound(&self, tau: usize) -> f64 {
        self.m * self.rho.powi(tau as i32)
    }
}

/// State-transition matrix `P_pi[s][s'] = sum_a pi(a|s) P[s][a][s']`.
pub fn policy_kernel(mdp: &FiniteMdp, policy: &SoftmaxPolicy, theta: &[f64]) -> Result<Matrix> {
    if policy.n_states() != mdp.n_states() || policy.n_actions() != mdp.n_actions() {
        return Err(Error::InvalidArgument(format!(
            "policy is defined on {}x{} but MDP is {}x{}",
            policy.n_states(),
            policy.n_actions(),
            mdp.n_states(),
            mdp.n_actions()
        )));
    }
    let n = mdp.n_states();
    let mut k = Matrix::zeros(n, n);
    for s in 0..n {
        let probs = policy.action_probs(theta, s)?;
        for (a, &pa) in probs.iter().enumerate() {
            for (j, &p) in mdp.row(s, a).iter().enumerate() {
                k[(s, j)] += pa * p;
            }
        }
    }
    Ok(k)
}

/// `max_s ||mu^T P - mu^T||_inf` style residual of a candidate stationary vector.
pub fn stationary_residual(kernel: &Matrix, mu: &[f64]) -> f64 {
    let n = mu.len();
    (0..n)
        .map(|j| {
            let lhs: f64 = (0..n).map(|i| mu[i] * kernel[(i, j)]).sum();
            (lhs - mu[j]).abs()
        })
        .fold(0.0, f64::max)
}

/// Stationary distribution by a dense solve of `(P^T - I) mu = 0` with the last
/// equation replaced by `sum(mu) = 1`, followed by one refinement step.
pub fn stationary_distribution(kernel: &Matrix) -> Result<Vec<f64>> {
    let n = kernel.nrows();
    if n == 0 || kernel.ncols() != n {
        return Err(Error::InvalidArgument("kernel must be square and non-empty".into()));
    }
    let mut sys = kernel.transpose() - Matrix::identity(n, n);
    for j in 0..n {
        sys[(n - 1, j)] = 1.0;
    }
    let mut rhs = nalgebra::DVector::zeros(n);
    rhs[n - 1] = 1.0;
    let lu = sys.clone().lu();
    let mut mu = lu
        .solve(&rhs)
        .ok_or_else(|| Error::NotErgodic("singular stationary system".into()))?;
    let resid = &rhs - &sys * &mu;
    if let Some(corr) = lu.solve(&resid) {
        mu += corr;
    }
    let total: f64 = mu.iter().sum();
    let mu: Vec<f64> = mu.iter().map(|x| x / total).collect();
    if mu.iter().any(|&x| x.is_nan() || x <= 0.0) {
        return Err(Error::NotErgodic(format!("stationary vector has non-positive mass: {mu:?}")));
    }
    let res = stationary_residual(kernel, &mu);
    if res > STATIONARY_TOL {
        return Err(Error::NotErgodic(format!("stationary residual {res:e} exceeds tolerance")));
    }
    Ok(mu)
}

/// Power iteration from the uniform distribution; used as a cross-check.
pub fn stationary_by_power_iteration(kernel: &Matrix, tol: f64, max_iter: usize) -> Result<Vec<f64>> {
    let n = kernel.nrows();
    let mut mu = vec![1.0 / n as f64; n];
    for _ in 0..max_iter {
        let next: Vec<f64> = (0..n).map(|j| (0..n).map(|i| mu[i] * kernel[(i, j)]).sum()).collect();
        let diff = next.iter().zip(&mu).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
        mu = next;
        if diff <= tol {
            return Ok(mu);
        }
    }
    Err(Error::NotErgodic(format!("power iteration did not converge in {max_iter} steps")))
}

/// `0.5 * sum |p_i - q_i|`.
pub fn total_variation(p: &[f64], q: &[f64]) -> Result<f64> {
    if p.len() != q.len() {
        return Err(Error::DimensionMismatch { expected: p.len(), got: q.len() });
    }
    Ok(0.5 * p.iter().zip(q).map(|(a, b)| (a - b).abs()).sum::<f64>())
}

/// `d_tau = max_s d_TV(P^tau(s, .), mu)` for `tau = 0..=horizon`.
pub fn tv_decay(kernel: &Matrix, mu: &[f64], horizon: usize) -> Vec<f64> {
    let n = kernel.nrows();
    let mut power = Matrix::identity(n, n);
    let mut out = Vec::with_capacity(horizon + 1);
    for tau in 0..=horizon {
        if tau > 0 {
            power = &power * kernel;
        }
        let d = (0..n)
            .map(|s| 0.5 * (0..n).map(|j| (power[(s, j)] - mu[j]).abs()).sum::<f64>())
            .fold(0.0, f64::max);
        out.push(d);
    }
    out
}

/// Fits `(m, rho)` so that `d_tau <= m rho^tau` on every lag above the numerical floor.
pub fn fit_mixing_envelope(kernel: &Matrix, mu: &[f64], horizon: usize) -> Result<MixingProfile> {
    if mu.len() != kernel.nrows() {
        return Err(Error::DimensionMismatch { expected: kernel.nrows(), got: mu.len() });
    }
    let d = tv_decay(kernel, mu, horizon.max(1));
    if d[1] <= TV_NOISE_FLOOR {
        return Ok(MixingProfile { m: 1.0, rho: RHO_FLOOR, provenance: Provenance::Fitted, horizon: Some(0) });
    }
    // d is nonincreasing, so the usable lags form a prefix
    let last = d.iter().rposition(|&x| x > TV_NOISE_FLOOR).unwrap_or(0);
    let start = if last > TAU_MIN { TAU_MIN } else { 0 };
    let rho = (start..last)
        .map(|tau| d[tau + 1] / d[tau])
        .fold(0.0, f64::max)
        .clamp(RHO_FLOOR, RHO_CEIL);
    let m = (0..=last)
        .map(|tau| d[tau] / rho.powi(tau as i32))
        .fold(0.0, f64::max);
    Ok(MixingProfile { m, rho, provenance: Provenance::Fitted, horizon: Some(last) })
}

/// `tau_t = min { i >= 0 : m rho^(i-1) <= min(alpha_t, beta_t) }` by linear scan.
pub fn mixing_time(profile: &MixingProfile, alpha: f64, beta: f64) -> usize {
    let threshold = alpha.min(beta);
    assert!(threshold > 0.0, "step sizes must be positive");
    let mut i: usize = 0;
    loop {
        if profile.m * profile.rho.powi(i as i32 - 1) <= threshold {
            return i;
        }
        i += 1;
    }
}

/// Largest ratio `d_tau(theta) / (m rho^tau)` over lags up to `horizon`.
///
/// Values above one mean the supplied envelope does not cover this kernel.
pub fn envelope_violation(profile: &MixingProfile, kernel: &Matrix, mu: &[f64], horizon: usize) -> f64 {
    tv_decay(kernel, mu, horizon)
        .iter()
        .enumerate()
        .filter(|(_, &d)| d > TV_NOISE_FLOOR)
        .map(|(tau, &d)| d / profile.bound(tau))
        .fold(0.0, f64::max)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::env::generate_random_mdp;
    use proptest::prelude::*;

    fn two_by_two() -> Matrix {
        Matrix::from_row_slice(2, 2, &[0.9, 0.1, 0.2, 0.8])
    }

    #[test]
    fn single_action_kernel_ignores_theta() {
        let mdp = generate_random_mdp(4, 1, 0.2, 3).unwrap();
        let pol = SoftmaxPolicy::gaussian(4, 1, 3, 1).unwrap();
        let k = policy_kernel(&mdp, &pol, &[3.0, -1.0, 0.5]).unwrap();
        for s in 0..4 {
            for j in 0..4 {
                assert_eq!(k[(s, j)], mdp.p(s, 0, j));
            }
        }
    }

    #[test]
    fn uniform_policy_averages_actions() {
        let mdp = generate_random_mdp(4, 2, 0.2, 3).unwrap();
        let pol = SoftmaxPolicy::gaussian(4, 2, 3, 1).unwrap();
        let k = policy_kernel(&mdp, &pol, &[0.0; 3]).unwrap();
        for s in 0..4 {
            for j in 0..4 {
                let want = (mdp.p(s, 0, j) + mdp.p(s, 1, j)) / 2.0;
                assert!((k[(s, j)] - want).abs() < 1e-16);
            }
        }
    }

    #[test]
    fn kernel_rows_sum_to_one() {
        let mdp = generate_random_mdp(7, 3, 0.1, 8).unwrap();
        let pol = SoftmaxPolicy::gaussian(7, 3, 4, 2).unwrap();
        let k = policy_kernel(&mdp, &pol, &[1.0, -2.0, 0.3, 0.7]).unwrap();
        for s in 0..7 {
            assert!((k.row(s).sum() - 1.0).abs() <= 1e-12);
        }
    }

    #[test]
    fn stationary_examples() {
        assert_eq!(stationary_distribution(&Matrix::from_element(1, 1, 1.0)).unwrap(), vec![1.0]);

        let sym = Matrix::from_row_slice(3, 3, &[0.5, 0.3, 0.2, 0.3, 0.4, 0.3, 0.2, 0.3, 0.5]);
        let mu = stationary_distribution(&sym).unwrap();
        assert!(mu.iter().all(|&x| (x - 1.0 / 3.0).abs() < 1e-14));

        let mu = stationary_distribution(&two_by_two()).unwrap();
        assert!((mu[0] - 2.0 / 3.0).abs() < 1e-14 && (mu[1] - 1.0 / 3.0).abs() < 1e-14);
    }

    #[test]
    fn dense_solve_agrees_with_power_iteration() {
        for seed in 0..10 {
            let mdp = generate_random_mdp(6, 2, 0.1, seed).unwrap();
            let pol = SoftmaxPolicy::gaussian(6, 2, 3, seed).unwrap();
            let k = policy_kernel(&mdp, &pol, &[0.5, -0.5, 1.0]).unwrap();
            let a = stationary_distribution(&k).unwrap();
            let b = stationary_by_power_iteration(&k, 1e-15, 100_000).unwrap();
            for (x, y) in a.iter().zip(&b) {
                assert!((x - y).abs() < 1e-12);
            }
            assert!(stationary_residual(&k, &a) <= STATIONARY_TOL);
        }
    }

    #[test]
    fn reducible_kernel_is_rejected() {
        let k = Matrix::from_row_slice(2, 2, &[1.0, 0.0, 0.0, 1.0]);
        assert!(stationary_distribution(&k).is_err());
    }

    #[test]
    fn total_variation_examples() {
        assert_eq!(total_variation(&[0.2, 0.8], &[0.2, 0.8]).unwrap(), 0.0);
        assert_eq!(total_variation(&[1.0, 0.0], &[0.0, 1.0]).unwrap(), 1.0);
        assert_eq!(total_variation(&[0.5, 0.5], &[0.75, 0.25]).unwrap(), 0.25);
        assert!(total_variation(&[1.0], &[0.5, 0.5]).is_err());
    }

    #[test]
    fn identical_rows_mix_instantly() {
        let k = Matrix::from_row_slice(2, 2, &[0.3, 0.7, 0.3, 0.7]);
        let mu = stationary_distribution(&k).unwrap();
        let prof = fit_mixing_envelope(&k, &mu, 50).unwrap();
        assert_eq!((prof.m, prof.rho), (1.0, RHO_FLOOR));
    }

    #[test]
    fn two_state_rate_is_second_eigenvalue() {
        let k = two_by_two();
        let mu = stationary_distribution(&k).unwrap();
        let prof = fit_mixing_envelope(&k, &mu, DEFAULT_HORIZON).unwrap();
        assert!(prof.rho >= 0.69 && prof.rho <= 0.71, "rho = {}", prof.rho);
    }

    fn naive_matrix_power(k: &Matrix, tau: usize) -> Matrix {
        let n = k.nrows();
        let mut out = Matrix::identity(n, n);
        for _ in 0..tau {
            let mut next = Matrix::zeros(n, n);
            for i in 0..n {
                for j in 0..n {
                    next[(i, j)] = (0..n).map(|l| out[(i, l)] * k[(l, j)]).sum();
                }
            }
            out = next;
        }
        out
    }

    #[test]
    fn fitted_envelope_covers_recomputed_distances() {
        for seed in 0..6 {
            let mdp = crate::env::MdpGenerator { concentration: 0.3, ..crate::env::MdpGenerator::new(5, 2, 0.05) }
                .generate(seed)
                .unwrap();
            let pol = SoftmaxPolicy::gaussian(5, 2, 3, seed).unwrap();
            let k = policy_kernel(&mdp, &pol, &[0.0; 3]).unwrap();
            let mu = stationary_distribution(&k).unwrap();
            let prof = fit_mixing_envelope(&k, &mu, 60).unwrap();
            let horizon = prof.horizon.unwrap();
            for tau in 0..=horizon {
                let pw = naive_matrix_power(&k, tau);
                let d = (0..5)
                    .map(|s| total_variation(pw.row(s).transpose().as_slice(), &mu).unwrap())
                    .fold(0.0, f64::max);
                assert!(d <= prof.bound(tau) * (1.0 + 1e-9) + 1e-15, "seed {seed} tau {tau}");
            }
        }
    }

    #[test]
    fn reversible_kernel_distance_decays_monotonically() {
        let k = Matrix::from_row_slice(3, 3, &[0.6, 0.3, 0.1, 0.3, 0.4, 0.3, 0.1, 0.3, 0.6]);
        let mu = stationary_distribution(&k).unwrap();
        let d = tv_decay(&k, &mu, 40);
        assert!(d.windows(2).all(|w| w[1] <= w[0] + 1e-15));
        assert!(d[40] < 1e-6);
    }

    #[test]
    fn mixing_time_examples() {
        let p = MixingProfile::supplied(1.0, 0.5).unwrap();
        assert_eq!(mixing_time(&p, 5.0, 3.0), 0);
        assert_eq!(mixing_time(&p, 1.0, 1.0), 1);
        let p = MixingProfile::supplied(2.0, 0.5).unwrap();
        assert_eq!(mixing_time(&p, 0.1, 0.5), 6);
    }

    fn closed_form_mixing_time(p: &MixingProfile, threshold: f64) -> usize {
        let x = 1.0 + (p.m / threshold).ln() / (1.0 / p.rho).ln();
        x.ceil().max(0.0) as usize
    }

    proptest! {
        #[test]
        fn mixing_time_scan_matches_log_formula(
            m in 0.01f64..10.0,
            rho in 0.01f64..0.99,
            thr in 1e-6f64..2.0,
        ) {
            let p = MixingProfile::supplied(m, rho).unwrap();
            let scan = mixing_time(&p, thr, thr);
            let closed = closed_form_mixing_time(&p, thr);
            // the closed form can land one off exactly at a boundary
            prop_assert!((scan as i64 - closed as i64).abs() <= 1);
            prop_assert!(m * rho.powi(scan as i32 - 1) <= thr);
            if scan > 0 {
                prop_assert!(m * rho.powi(scan as i32 - 2) > thr);
            }
        }

        #[test]
        fn total_variation_is_a_metric(
            raw in prop::collection::vec((0.0f64..1.0, 0.0f64..1.0, 0.0f64..1.0), 2..8),
        ) {
            let normalize = |v: Vec<f64>| {
                let s: f64 = v.iter().sum::<f64>() + 1e-12;
                v.into_iter().map(|x| (x + 1e-12 / 8.0) / s).collect::<Vec<_>>()
            };
            let p = normalize(raw.iter().map(|t| t.0).collect());
            let q = normalize(raw.iter().map(|t| t.1).collect());
            let r = normalize(raw.iter().map(|t| t.2).collect());
            let pq = total_variation(&p, &q).unwrap();
            prop_assert!((pq - total_variation(&q, &p).unwrap()).abs() < 1e-15);
            prop_assert!(total_variation(&p, &p).unwrap() == 0.0);
            prop_assert!((0.0..=1.0 + 1e-12).contains(&pq));
            let pr = total_variation(&p, &r).unwrap();
            let rq = total_variation(&r, &q).unwrap();
            prop_assert!(pq <= pr + rq + 1e-12);
        }
    }
}
