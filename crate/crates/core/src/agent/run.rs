use log::{debug, info};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{AgentState, Problem, RunConfig};
use crate::analysis::{Checkpoint, IterateBounds, RunDiagnostics, RunMetrics, RunMode};
use crate::chain::{envelope_violation, policy_kernel, stationary_distribution};
use crate::error::{Error, Result};
use crate::linalg::{dist_sq, norm};
use crate::oracle::compute_oracle;

/// Loop-level settings of one run.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunParams {
    /// Iterations for the two time-scale run; sample budget for the decoupled baseline.
    pub total_steps: u64,
    pub oracle_every: u64,
    pub log_every: u64,
    /// Visited policies whose kernels are checked against the fixed mixing envelope.
    pub envelope_checks: usize,
}

impl RunParams {
    pub fn from_config(cfg: &RunConfig) -> Self {
        RunParams {
            total_steps: cfg.total_steps,
            oracle_every: cfg.oracle_every(),
            log_every: cfg.log_every(),
            envelope_checks: 20,
        }
    }
}

/// Evaluates checkpoints and accumulates diagnostics for one run.
struct Recorder<'p> {
    problem: &'p Problem,
    checkpoints: Vec<Checkpoint>,
    diag: RunDiagnostics,
    last_omega_star: Option<Vec<f64>>,
    envelope_stride: usize,
}

impl<'p> Recorder<'p> {
    fn new(problem: &'p Problem, expected_checkpoints: u64, envelope_checks: usize) -> Self {
        let stride = (expected_checkpoints as usize)
            .checked_div(envelope_checks)
            .map_or(usize::MAX, |s| s.max(1));
        Recorder {
            problem,
            checkpoints: Vec::with_capacity(expected_checkpoints as usize + 1),
            diag: RunDiagnostics { lambda_min_visited: f64::INFINITY, ..RunDiagnostics::default() },
            last_omega_star: None,
            envelope_stride: stride,
        }
    }

    fn record(&mut self, step: u64, samples: u64, theta: &[f64], omega: &[f64], eta: f64) -> Result<()> {
        let p = self.problem;
        let rep = compute_oracle(&p.mdp, &p.policy, theta, &p.features)?;
        self.diag.lambda_min_visited = self.diag.lambda_min_visited.min(rep.lambda);
        match (&rep.omega_star, rep.assumption_violated) {
            (Some(w), false) => {
                if norm(w) > p.r_omega {
                    self.diag.radius_exceeded += 1;
                }
                if let Some(e) = rep.eps_app {
                    self.diag.eps_app_max_visited = self.diag.eps_app_max_visited.max(e);
                }
                self.last_omega_star = Some(w.clone());
            }
            _ => {
                self.diag.lambda_violations.push(step);
            }
        }
        let critic_err_sq = match &self.last_omega_star {
            Some(w) => dist_sq(omega, w),
            None => f64::NAN,
        };
        if self.checkpoints.len().is_multiple_of(self.envelope_stride) {
            let kernel = policy_kernel(&p.mdp, &p.policy, theta)?;
            let mu = stationary_distribution(&kernel)?;
            let horizon = p.mixing.horizon.unwrap_or(crate::chain::DEFAULT_HORIZON);
            let v = envelope_violation(&p.mixing, &kernel, &mu, horizon);
            self.diag.envelope_violation_max = self.diag.envelope_violation_max.max(v);
        }
        self.checkpoints.push(Checkpoint {
            step,
            samples,
            grad_j_sq: rep.grad_j_sq(),
            critic_err_sq,
            eta_err_sq: (eta - rep.j_value) * (eta - rep.j_value),
            j_value: rep.j_value,
            eta,
            omega_norm: norm(omega),
        });
        Ok(())
    }

    fn finish(self, mode: RunMode, seed: u64, bounds: IterateBounds, samples: u64) -> RunMetrics {
        RunMetrics { mode, seed, checkpoints: self.checkpoints, bounds, diagnostics: self.diag, samples }
    }
}

/// Two time-scale actor-critic with the seed and settings from `cfg`.
pub fn run_two_timescale(cfg: &RunConfig) -> Result<RunMetrics> {
    let problem = Problem::resolve(cfg, None)?;
    run_two_timescale_on(&problem, &RunParams::from_config(cfg), cfg.seed)
}

/// Runs `params.total_steps` iterations, one environment transition each.
pub fn run_two_timescale_on(problem: &Problem, params: &RunParams, seed: u64) -> Result<RunMetrics> {
    if params.total_steps == 0 || params.oracle_every == 0 {
        return Err(Error::InvalidArgument("total_steps and oracle_every must be positive".into()));
    }
    let agent = problem.agent();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut state = AgentState::initial(
        problem.policy.d_theta(),
        problem.features.dim(),
        problem.mdp.n_states(),
        &mut rng,
    );
    state.theta.copy_from_slice(&problem.theta0);
    let mut rec = Recorder::new(problem, params.total_steps / params.oracle_every + 1, params.envelope_checks);
    let mut bounds = IterateBounds::default();
    bounds.observe(norm(&state.omega), state.eta, 0.0);

    for t in 0..params.total_steps {
        if t % params.oracle_every == 0 {
            rec.record(t, t, &state.theta, &state.omega, state.eta)?;
        }
        if t % params.log_every == 0 && t > 0 {
            debug!("seed {seed} step {t}: eta = {:.5}, |omega| = {:.4}", state.eta, norm(&state.omega));
        }
        let tr = agent.step(&mut state, &mut rng)?;
        bounds.observe(norm(&state.omega), state.eta, tr.delta);
    }
    let t = params.total_steps;
    rec.record(t, t, &state.theta, &state.omega, state.eta)?;
    info!("two-timescale seed {seed} finished {t} steps");
    Ok(rec.finish(RunMode::TwoTimescale, seed, bounds, t))
}

/// Decoupled baseline with the seed and settings from `cfg`.
pub fn run_decoupled(cfg: &RunConfig) -> Result<RunMetrics> {
    let problem = Problem::resolve(cfg, None)?;
    let mut params = RunParams::from_config(cfg);
    params.total_steps = cfg.decoupled.sample_budget.unwrap_or(cfg.total_steps);
    let steps = cfg.decoupled.critic_steps;
    run_decoupled_on(&problem, &params, cfg.seed, &|k| steps.steps(k))
}

/// Decoupled actor-critic: before actor update `k` the critic restarts from
/// `omega = 0, eta = 0` and runs `critic_steps(k)` TD(0) updates on fresh
/// transitions; the actor then draws one more transition and steps with the
/// resulting TD error.
///
/// Actor update `k` therefore costs `critic_steps(k) + 1` samples. The run stops
/// before the update that would exceed `params.total_steps` samples.
/// Checkpoints are taken before the first update, whenever the cumulative
/// sample count crosses a multiple of `oracle_every`, and at the end.
pub fn run_decoupled_on(
    problem: &Problem,
    params: &RunParams,
    seed: u64,
    critic_steps: &dyn Fn(u64) -> u64,
) -> Result<RunMetrics> {
    if params.total_steps == 0 || params.oracle_every == 0 {
        return Err(Error::InvalidArgument("sample budget and oracle_every must be positive".into()));
    }
    let agent = problem.agent();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut state = AgentState::initial(
        problem.policy.d_theta(),
        problem.features.dim(),
        problem.mdp.n_states(),
        &mut rng,
    );
    state.theta.copy_from_slice(&problem.theta0);
    let mut rec = Recorder::new(problem, params.total_steps / params.oracle_every + 1, params.envelope_checks);
    let mut bounds = IterateBounds::default();
    let mut samples: u64 = 0;
    let mut next_mark = params.oracle_every;
    rec.record(0, 0, &state.theta, &state.omega, state.eta)?;
    let mut recorded_at = 0;

    let mut k: u64 = 0;
    loop {
        let n_critic = critic_steps(k);
        if samples.saturating_add(n_critic).saturating_add(1) > params.total_steps {
            break;
        }
        state.omega.iter_mut().for_each(|w| *w = 0.0);
        state.eta = 0.0;
        for j in 0..n_critic {
            let (obs, _) = agent.sample(&state.theta, state.s, &mut rng);
            let delta = agent.critic_update(&obs, &mut state.omega, &mut state.eta, j);
            bounds.observe(norm(&state.omega), state.eta, delta);
            state.s = obs.s_next;
        }
        let (obs, probs) = agent.sample(&state.theta, state.s, &mut rng);
        let delta = super::td_error(&obs, state.eta, &state.omega, agent.features);
        agent.actor_update(&mut state.theta, &probs, &obs, delta, k);
        bounds.observe(norm(&state.omega), state.eta, delta);
        state.s = obs.s_next;
        samples += n_critic + 1;
        k += 1;
        if state.theta.iter().any(|x| !x.is_finite()) || !delta.is_finite() {
            return Err(Error::NonFiniteIterate { step: k, what: "theta" });
        }
        if samples >= next_mark {
            rec.record(k, samples, &state.theta, &state.omega, state.eta)?;
            recorded_at = k;
            while next_mark <= samples {
                next_mark += params.oracle_every;
            }
        }
    }
    if recorded_at != k {
        rec.record(k, samples, &state.theta, &state.omega, state.eta)?;
    }
    info!("decoupled seed {seed} finished {k} actor updates using {samples} samples");
    Ok(rec.finish(RunMode::Decoupled, seed, bounds, samples))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::agent::{FeatureSpec, MdpSource, PolicySpec, RunConfig};
    use crate::env::MdpGenerator;

    fn config(total: u64) -> RunConfig {
        RunConfig {
            mdp: MdpSource::Generate { params: MdpGenerator::new(4, 2, 0.2), seed: 1 },
            features: FeatureSpec::OrthogonalizedRandom { d: 2, seed: 2 },
            policy: PolicySpec::Gaussian { d_theta: 3, seed: 3 },
            schedule: Default::default(),
            total_steps: total,
            log_every: None,
            oracle_every: Some(50),
            seed: 9,
            r_omega: super::super::RadiusPolicy::PaperFormula,
            r_omega_safety: 1.0,
            probes: Default::default(),
            decoupled: Default::default(),
        }
    }

    #[test]
    fn checkpoint_grid_and_sample_count() {
        let m = run_two_timescale(&config(1020)).unwrap();
        let steps: Vec<u64> = m.checkpoints.iter().map(|c| c.step).collect();
        assert_eq!(steps.first(), Some(&0));
        assert_eq!(steps.last(), Some(&1020));
        assert_eq!(steps.len(), 22);
        assert!(m.checkpoints.iter().all(|c| c.samples == c.step));
        assert_eq!(m.samples, 1020);
    }

    #[test]
    fn decoupled_paper_schedule_sample_accounting() {
        let cfg = config(1);
        let problem = Problem::resolve(&cfg, None).unwrap();
        let k_total = 30u64;
        let params = RunParams { total_steps: k_total * (k_total + 1) / 2, oracle_every: 1, log_every: 1, envelope_checks: 0 };
        let m = run_decoupled_on(&problem, &params, 4, &|k| k).unwrap();
        assert_eq!(m.samples, k_total * (k_total + 1) / 2);
        assert_eq!(m.checkpoints.last().unwrap().step, k_total);
        for c in &m.checkpoints {
            assert_eq!(c.samples, c.step * (c.step + 1) / 2);
        }
    }

    #[test]
    fn decoupled_without_critic_runs() {
        let cfg = config(1);
        let problem = Problem::resolve(&cfg, None).unwrap();
        let params = RunParams { total_steps: 500, oracle_every: 100, log_every: 100, envelope_checks: 2 };
        let m = run_decoupled_on(&problem, &params, 4, &|_| 0).unwrap();
        assert_eq!(m.samples, 500);
        assert_eq!(m.checkpoints.last().unwrap().step, 500);
        assert!(m.checkpoints.iter().all(|c| c.omega_norm == 0.0 && c.eta == 0.0));
    }

    #[test]
    fn runs_are_deterministic() {
        let a = run_two_timescale(&config(800)).unwrap();
        let b = run_two_timescale(&config(800)).unwrap();
        assert_eq!(a.to_csv_string().unwrap(), b.to_csv_string().unwrap());
        let mut other = config(800);
        other.seed = 10;
        assert_ne!(run_two_timescale(&other).unwrap().checkpoints, a.checkpoints);
    }
}
