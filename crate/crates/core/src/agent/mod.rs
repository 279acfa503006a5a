//! The on-line two time-scale actor-critic and the decoupled baseline.
//!
//! One iteration of [`Agent::step`]:
//!
//! 1. `a_t ~ pi_theta_t(. | s_t)`
//! 2. `s_{t+1} ~ P(. | s_t, a_t)`, `r_t = r(s_t, a_t)`
//! 3. `delta_t = r_t - eta_t + phi(s_{t+1})^T omega_t - phi(s_t)^T omega_t`
//! 4. `eta_{t+1} = eta_t + gamma_t (r_t - eta_t)`
//! 5. `omega_{t+1} = Proj_R(omega_t + beta_t delta_t phi(s_t))`
//! 6. `theta_{t+1} = theta_t + alpha_t delta_t grad log pi_theta_t(a_t | s_t)`
//!
//! Each iteration consumes exactly two uniforms: one for the action and one for
//! the next state.

mod config;
mod run;

pub use config::{
    CriticSteps, DecoupledSpec, FeatureSpec, Instance, LambdaProbes, MdpSource, PolicySpec, Problem, ProbeSpec,
    RadiusPolicy, RunConfig, ScheduleSpec,
};
pub use run::{run_decoupled, run_decoupled_on, run_two_timescale, run_two_timescale_on, RunParams};

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::analysis::StepSizes;
use crate::env::{inverse_cdf, FiniteMdp, Observation};
use crate::error::{Error, Result};
use crate::linalg::norm;
use crate::oracle::FeatureMap;
use crate::policy::SoftmaxPolicy;

/// Source of uniform draws in `[0, 1)`.
pub trait UniformSource {
    fn uniform(&mut self) -> f64;
}

impl<R: Rng> UniformSource for R {
    fn uniform(&mut self) -> f64 {
        self.random()
    }
}

/// Polynomially decaying step sizes `c / (1 + t)^p` for actor, critic and average reward.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct StepSchedule {
    pub c_alpha: f64,
    pub sigma: f64,
    pub c_beta: f64,
    pub nu: f64,
    pub c_gamma: f64,
}

impl StepSchedule {
    /// Checks `0 < nu < sigma < 1`, positive constants, `c_gamma <= 1` and,
    /// when a margin is known, `c_beta <= 1 / lambda`.
    pub fn validate(&self, lambda: Option<f64>) -> Result<()> {
        let positive = [self.c_alpha, self.c_beta, self.c_gamma]
            .iter()
            .all(|c| *c > 0.0 && c.is_finite());
        if !positive {
            return Err(Error::InvalidArgument("step-size constants must be positive".into()));
        }
        if !(0.0 < self.nu && self.nu < self.sigma && self.sigma < 1.0) {
            return Err(Error::InvalidArgument(format!(
                "need 0 < nu < sigma < 1, got nu = {}, sigma = {}",
                self.nu, self.sigma
            )));
        }
        if self.c_gamma > 1.0 {
            return Err(Error::InvalidArgument(format!("c_gamma = {} must not exceed 1", self.c_gamma)));
        }
        if let Some(lambda) = lambda {
            if self.c_beta > 1.0 / lambda {
                return Err(Error::InvalidArgument(format!(
                    "c_beta = {} exceeds 1/lambda = {}",
                    self.c_beta,
                    1.0 / lambda
                )));
            }
        }
        Ok(())
    }

    pub fn alpha(&self, t: u64) -> f64 {
        self.c_alpha / (1.0 + t as f64).powf(self.sigma)
    }

    pub fn beta(&self, t: u64) -> f64 {
        self.c_beta / (1.0 + t as f64).powf(self.nu)
    }

    pub fn gamma(&self, t: u64) -> f64 {
        self.c_gamma / (1.0 + t as f64).powf(self.nu)
    }
}

impl StepSizes for StepSchedule {
    fn alpha(&self, t: u64) -> f64 {
        StepSchedule::alpha(self, t)
    }

    fn beta(&self, t: u64) -> f64 {
        StepSchedule::beta(self, t)
    }
}

/// Iterates `(theta_t, omega_t, eta_t)`, the step counter and the current state.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AgentState {
    pub theta: Vec<f64>,
    pub omega: Vec<f64>,
    pub eta: f64,
    pub t: u64,
    pub s: usize,
}

impl AgentState {
    /// Zero iterates and `s_0` drawn uniformly with one uniform.
    pub fn initial(d_theta: usize, d: usize, n_states: usize, src: &mut impl UniformSource) -> Self {
        let u = src.uniform();
        let s = ((u * n_states as f64) as usize).min(n_states - 1);
        AgentState { theta: vec![0.0; d_theta], omega: vec![0.0; d], eta: 0.0, t: 0, s }
    }
}

/// Result of one iteration.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Transition {
    pub obs: Observation,
    pub delta: f64,
}

/// TD error `r - eta + phi(s')^T omega - phi(s)^T omega`.
pub fn td_error(obs: &Observation, eta: f64, omega: &[f64], features: &FeatureMap) -> f64 {
    obs.r - eta + features.value(obs.s_next, omega) - features.value(obs.s, omega)
}

/// Euclidean projection onto the ball of radius `radius`.
pub fn project_ball(omega: &mut [f64], radius: f64) {
    let n = norm(omega);
    if n > radius {
        omega.iter_mut().for_each(|w| *w = *w * radius / n);
    }
}

/// Everything one iteration needs besides the iterates.
#[derive(Clone, Copy, Debug)]
pub struct Agent<'a> {
    pub mdp: &'a FiniteMdp,
    pub policy: &'a SoftmaxPolicy,
    pub features: &'a FeatureMap,
    pub schedule: StepSchedule,
    pub r_omega: f64,
}

impl<'a> Agent<'a> {
    /// Samples `a_t` and `s_{t+1}` from the current policy and environment.
    pub fn sample(&self, theta: &[f64], s: usize, src: &mut impl UniformSource) -> (Observation, Vec<f64>) {
        let probs = self.policy.probs_unchecked(theta, s);
        let a = inverse_cdf(&probs, src.uniform());
        (self.mdp.step_with_uniform(s, a, src.uniform()), probs)
    }

    /// Critic and average-reward update with step index `k`; returns `delta`.
    pub fn critic_update(&self, obs: &Observation, omega: &mut [f64], eta: &mut f64, k: u64) -> f64 {
        let delta = td_error(obs, *eta, omega, self.features);
        *eta += self.schedule.gamma(k) * (obs.r - *eta);
        let beta = self.schedule.beta(k);
        for (w, f) in omega.iter_mut().zip(self.features.phi(obs.s)) {
            *w += beta * delta * f;
        }
        project_ball(omega, self.r_omega);
        delta
    }

    /// Actor update `theta += alpha_k delta score`.
    pub fn actor_update(&self, theta: &mut [f64], probs: &[f64], obs: &Observation, delta: f64, k: u64) {
        let score = self.policy.score_with_probs(probs, obs.s, obs.a);
        let alpha = self.schedule.alpha(k);
        for (th, g) in theta.iter_mut().zip(&score) {
            *th += alpha * delta * g;
        }
    }

    /// One full iteration of the two time-scale algorithm.
    pub fn step(&self, state: &mut AgentState, src: &mut impl UniformSource) -> Result<Transition> {
        let (obs, probs) = self.sample(&state.theta, state.s, src);
        let t = state.t;
        let delta = self.critic_update(&obs, &mut state.omega, &mut state.eta, t);
        self.actor_update(&mut state.theta, &probs, &obs, delta, t);
        state.s = obs.s_next;
        state.t += 1;
        if !delta.is_finite() || !state.eta.is_finite() {
            return Err(Error::NonFiniteIterate { step: t, what: "eta/delta" });
        }
        if state.omega.iter().any(|x| !x.is_finite()) {
            return Err(Error::NonFiniteIterate { step: t, what: "omega" });
        }
        if state.theta.iter().any(|x| !x.is_finite()) {
            return Err(Error::NonFiniteIterate { step: t, what: "theta" });
        }
        Ok(Transition { obs, delta })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn td_error_examples() {
        let feats = FeatureMap::from_table(vec![vec![0.5, 0.0], vec![0.0, 0.5]]).unwrap();
        let obs = Observation { s: 0, a: 0, s_next: 1, r: 1.0 };
        // phi(s')^T w = phi(s)^T w
        assert_eq!(td_error(&obs, 0.0, &[0.4, 0.4], &feats), 1.0);
        let obs = Observation { s: 0, a: 0, s_next: 1, r: 0.0 };
        // phi(s')^T w = 0.3, phi(s)^T w = 0.1
        let d = td_error(&obs, 0.5, &[0.2, 0.6], &feats);
        assert!((d + 0.3).abs() < 1e-15);
    }

    #[test]
    fn projection_examples() {
        let mut w = vec![0.3, -0.4];
        project_ball(&mut w, 1.0);
        assert_eq!(w, vec![0.3, -0.4]);
        let mut w = vec![3.0, 4.0];
        project_ball(&mut w, 1.0);
        assert!((w[0] - 0.6).abs() < 1e-15 && (w[1] - 0.8).abs() < 1e-15);
        let once = w.clone();
        project_ball(&mut w, 1.0);
        assert_eq!(w, once);
        let mut z = vec![0.0, 0.0];
        project_ball(&mut z, 2.0);
        assert_eq!(z, vec![0.0, 0.0]);
    }

    #[test]
    fn schedule_validation() {
        let ok = StepSchedule { c_alpha: 0.1, sigma: 0.6, c_beta: 1.0, nu: 0.4, c_gamma: 1.0 };
        ok.validate(Some(0.5)).unwrap();
        assert!(ok.validate(Some(2.0)).is_err());
        assert!(StepSchedule { nu: 0.6, ..ok }.validate(None).is_err());
        assert!(StepSchedule { sigma: 1.0, ..ok }.validate(None).is_err());
        assert!(StepSchedule { c_gamma: 1.5, ..ok }.validate(None).is_err());
        assert!(StepSchedule { c_alpha: 0.0, ..ok }.validate(None).is_err());
    }

    #[test]
    fn actor_critic_ratio_shrinks() {
        let s = StepSchedule { c_alpha: 0.1, sigma: 0.6, c_beta: 0.8, nu: 0.4, c_gamma: 1.0 };
        let ratios: Vec<f64> = (0..10_000u64).step_by(97).map(|t| s.alpha(t) / s.beta(t)).collect();
        assert!(ratios.windows(2).all(|w| w[1] <= w[0]));
        assert!(s.alpha(u64::MAX / 2) / s.beta(u64::MAX / 2) < 1e-3);
        for t in [0u64, 1, 10, 1000] {
            assert!(s.alpha(t + 1) <= s.alpha(t) && s.beta(t + 1) <= s.beta(t) && s.gamma(t + 1) <= s.gamma(t));
        }
    }
}
