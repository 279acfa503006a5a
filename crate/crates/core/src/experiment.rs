//! The canned reference experiment and the acceptance checks built on it.

use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::agent::{
    run_decoupled_on, run_two_timescale_on, td_error, project_ball, Agent, AgentState, CriticSteps, DecoupledSpec,
    FeatureSpec, MdpSource, PolicySpec, Problem, ProbeSpec, RadiusPolicy, RunConfig, RunParams, ScheduleSpec,
    StepSchedule, UniformSource,
};
use crate::analysis::{analyze, first_reach_samples, linear_fit, AnalysisReport, EnsembleMetrics, Metric, RunMetrics};
use crate::chain::{mixing_time, policy_kernel, stationary_distribution, stationary_residual};
use crate::env::{generate_random_mdp, FiniteMdp, MdpGenerator, Observation};
use crate::error::Result;
use crate::oracle::{average_reward, compute_oracle, FeatureMap};
use crate::policy::SoftmaxPolicy;
use crate::seeds::derive_seeds;

/// Fixed constants of the reference instance.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ReferenceInstance {
    pub n_states: usize,
    pub n_actions: usize,
    pub smoothing: f64,
    pub concentration: f64,
    pub mdp_seed: u64,
    pub d: usize,
    pub feature_seed: u64,
    pub d_theta: usize,
    pub policy_seed: u64,
    pub c_alpha: f64,
    pub c_beta: Option<f64>,
    pub c_gamma: f64,
    pub oracle_every: u64,
    pub master_seed: u64,
}

impl Default for ReferenceInstance {
    fn default() -> Self {
        ReferenceInstance {
            n_states: 5,
            n_actions: 2,
            smoothing: 0.05,
            concentration: 0.3,
            mdp_seed: 3,
            d: 3,
            feature_seed: 7,
            d_theta: 10,
            policy_seed: 11,
            c_alpha: 0.1,
            c_beta: None,
            c_gamma: 0.1,
            oracle_every: 20,
            master_seed: 0,
        }
    }
}

/// Command-line knobs of the reference experiment.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ReferenceOptions {
    pub total_steps: u64,
    pub seeds: usize,
    pub sigma: f64,
    pub nu: f64,
}

impl Default for ReferenceOptions {
    fn default() -> Self {
        ReferenceOptions { total_steps: 200_000, seeds: 20, sigma: 0.6, nu: 0.4 }
    }
}

impl ReferenceInstance {
    pub fn config(&self, opts: &ReferenceOptions) -> RunConfig {
        let mut generator = MdpGenerator::new(self.n_states, self.n_actions, self.smoothing);
        generator.concentration = self.concentration;
        RunConfig {
            mdp: MdpSource::Generate { params: generator, seed: self.mdp_seed },
            features: FeatureSpec::OrthogonalizedRandom { d: self.d, seed: self.feature_seed },
            policy: PolicySpec::Gaussian { d_theta: self.d_theta, seed: self.policy_seed },
            schedule: ScheduleSpec {
                c_alpha: self.c_alpha,
                sigma: opts.sigma,
                c_beta: self.c_beta,
                nu: opts.nu,
                c_gamma: self.c_gamma,
            },
            total_steps: opts.total_steps,
            log_every: None,
            oracle_every: Some(self.oracle_every.min(opts.total_steps.max(1))),
            seed: self.master_seed,
            r_omega: RadiusPolicy::PaperFormula,
            r_omega_safety: 1.0,
            probes: ProbeSpec::default(),
            decoupled: DecoupledSpec {
                critic_steps: CriticSteps::Paper,
                sample_budget: Some(2 * opts.total_steps),
            },
        }
    }
}

/// One line of the acceptance table.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Criterion {
    pub id: u8,
    pub name: String,
    pub passed: bool,
    pub detail: String,
}

impl Criterion {
    fn new(id: u8, name: &str, passed: bool, detail: String) -> Self {
        Criterion { id, name: name.to_string(), passed, detail }
    }

    pub fn line(&self) -> String {
        format!(
            "[{}] {:>2} {:<28} {}",
            if self.passed { "PASS" } else { "FAIL" },
            self.id,
            self.name,
            self.detail
        )
    }
}

/// Runs every seed of one mode in parallel; results come back in seed order.
pub fn run_seeds(
    problem: &Problem,
    params: &RunParams,
    seeds: &[u64],
    decoupled: Option<CriticSteps>,
) -> Result<Vec<RunMetrics>> {
    seeds
        .par_iter()
        .map(|&seed| match decoupled {
            None => run_two_timescale_on(problem, params, seed),
            Some(steps) => run_decoupled_on(problem, params, seed, &|k| steps.steps(k)),
        })
        .collect()
}

/// Outcome of the reference experiment.
pub struct ReferenceRun {
    pub config: RunConfig,
    pub problem: Problem,
    pub seeds: Vec<u64>,
    pub two_timescale: Vec<RunMetrics>,
    pub decoupled: Vec<RunMetrics>,
    pub ensemble: EnsembleMetrics,
    pub decoupled_ensemble: EnsembleMetrics,
    pub analysis: AnalysisReport,
    pub seconds: f64,
}

impl ReferenceRun {
    pub fn execute(instance: &ReferenceInstance, opts: &ReferenceOptions) -> Result<Self> {
        let start = Instant::now();
        let config = instance.config(opts);
        let problem = Problem::resolve(&config, None)?;
        let seeds = derive_seeds(instance.master_seed, opts.seeds);
        let params = RunParams::from_config(&config);
        let two_timescale = run_seeds(&problem, &params, &seeds, None)?;
        let budget = config.decoupled.sample_budget.unwrap_or(config.total_steps);
        let dparams = RunParams { total_steps: budget, ..params };
        let decoupled = run_seeds(&problem, &dparams, &seeds, Some(config.decoupled.critic_steps))?;
        let ensemble = EnsembleMetrics::from_runs(&two_timescale)?;
        let decoupled_ensemble = EnsembleMetrics::from_runs(&decoupled)?;
        let analysis = analyze(&ensemble, &problem.mixing, &problem.schedule, false)?;
        Ok(ReferenceRun {
            config,
            problem,
            seeds,
            two_timescale,
            decoupled,
            ensemble,
            decoupled_ensemble,
            analysis,
            seconds: start.elapsed().as_secs_f64(),
        })
    }

    fn total(&self) -> u64 {
        self.config.total_steps
    }
}

/// Value of a `(t, _, v)` curve at the last grid point not after `t`.
fn curve_at(curve: &[(u64, u64, f64)], t: u64) -> Option<(u64, f64)> {
    curve.iter().rev().find(|p| p.0 <= t).map(|p| (p.0, p.2))
}

fn ratio_detail(label: &str, early: Option<(u64, f64)>, late: Option<(u64, f64)>) -> (Option<f64>, String) {
    match (early, late) {
        (Some((te, ve)), Some((tl, vl))) if ve > 0.0 => {
            let r = vl / ve;
            (Some(r), format!("{label}({tl}) / {label}({te}) = {vl:.3e} / {ve:.3e} = {r:.4}"))
        }
        _ => (None, format!("{label}: window undefined on this grid")),
    }
}

/// Criterion 1: oracle residuals on random instances and the time budget.
pub fn check_oracle_exactness(count: u64) -> Result<Criterion> {
    let start = Instant::now();
    let (mut fixed, mut bellman, mut stationary) = (0.0f64, 0.0f64, 0.0f64);
    for i in 0..count {
        let mdp = generate_random_mdp(5, 2, 0.1, 1000 + i)?;
        let policy = SoftmaxPolicy::gaussian(5, 2, 4, 2000 + i)?;
        let mut rng = ChaCha8Rng::seed_from_u64(3000 + i);
        let theta: Vec<f64> = (0..4).map(|_| rng.random_range(-2.0..2.0)).collect();
        let mu0 = stationary_distribution(&policy_kernel(&mdp, &policy, &[0.0; 4])?)?;
        let features = FeatureMap::orthogonalized_random(5, 3, &mu0, 4000 + i)?;
        let rep = compute_oracle(&mdp, &policy, &theta, &features)?;
        fixed = fixed.max(rep.td_fixed_point_residual().unwrap_or(f64::INFINITY));
        bellman = bellman.max(rep.bellman_residual(&mdp, &policy, &theta)?);
        stationary = stationary.max(stationary_residual(&policy_kernel(&mdp, &policy, &theta)?, &rep.mu));
    }
    let secs = start.elapsed().as_secs_f64();
    let passed = fixed <= 1e-10 && bellman <= 1e-10 && stationary <= 1e-12 && secs < 5.0;
    Ok(Criterion::new(
        1,
        "oracle exactness",
        passed,
        format!("|A w* + b| {fixed:.1e}, Bellman {bellman:.1e}, mu P - mu {stationary:.1e}, {secs:.2}s over {count} MDPs"),
    ))
}

/// Criterion 2: exact gradient against central differences, `h = 1e-5`.
///
/// Coordinates below `1e-4` in magnitude are compared on an absolute `1e-10` scale,
/// where the difference quotient's own rounding error dominates.
pub fn check_policy_gradient(problem: &Problem, count: u64) -> Result<Criterion> {
    let h = 1e-5;
    let d = problem.policy.d_theta();
    let mut worst = 0.0f64;
    let mut rng = ChaCha8Rng::seed_from_u64(51);
    for _ in 0..count {
        let theta: Vec<f64> = (0..d).map(|_| rng.random_range(-1.5..1.5)).collect();
        let rep = compute_oracle(&problem.mdp, &problem.policy, &theta, &problem.features)?;
        for i in 0..d {
            let (mut tp, mut tm) = (theta.clone(), theta.clone());
            tp[i] += h;
            tm[i] -= h;
            let fd = (average_reward(&problem.mdp, &problem.policy, &tp)?
                - average_reward(&problem.mdp, &problem.policy, &tm)?)
                / (2.0 * h);
            let rel = (fd - rep.grad_j[i]).abs() / rep.grad_j[i].abs().max(1e-4);
            worst = worst.max(rel);
        }
    }
    Ok(Criterion::new(
        2,
        "policy-gradient correctness",
        worst <= 1e-6,
        format!("max relative deviation {worst:.2e} over {count} parameters"),
    ))
}

/// Criterion 3: `sum_a b grad pi(a|s) = 0`.
pub fn check_baseline_identity(problem: &Problem, count: u64) -> Result<Criterion> {
    let d = problem.policy.d_theta();
    let mut rng = ChaCha8Rng::seed_from_u64(52);
    let mut worst = 0.0f64;
    for _ in 0..count {
        let theta: Vec<f64> = (0..d).map(|_| rng.random_range(-3.0..3.0)).collect();
        let s = rng.random_range(0..problem.mdp.n_states());
        let b = rng.random_range(-10.0..10.0);
        worst = worst.max(problem.policy.baseline_identity_check(&theta, s, b)?);
    }
    Ok(Criterion::new(
        3,
        "baseline identity",
        worst <= 1e-12,
        format!("max norm {worst:.1e} over {count} triples"),
    ))
}

/// Uniforms replayed in order.
#[derive(Clone, Debug)]
pub struct ScriptedUniforms {
    values: Vec<f64>,
    next: usize,
}

impl ScriptedUniforms {
    pub fn new(values: Vec<f64>) -> Self {
        ScriptedUniforms { values, next: 0 }
    }
}

impl UniformSource for ScriptedUniforms {
    fn uniform(&mut self) -> f64 {
        let u = self.values[self.next];
        self.next += 1;
        u
    }
}

/// The pinned two-state instance used for the hand trace.
pub struct PinnedInstance {
    pub mdp: FiniteMdp,
    pub policy: SoftmaxPolicy,
    pub features: FeatureMap,
    pub schedule: StepSchedule,
    pub r_omega: f64,
    pub uniforms: Vec<f64>,
}

pub fn pinned_instance() -> Result<PinnedInstance> {
    let mdp = FiniteMdp::new(
        1.0,
        vec![vec![vec![0.9, 0.1], vec![0.2, 0.8]], vec![vec![0.7, 0.3], vec![0.4, 0.6]]],
        vec![vec![1.0, -0.5], vec![0.25, 0.75]],
    )?;
    let policy = SoftmaxPolicy::from_table(vec![
        vec![vec![1.0, 0.0], vec![0.0, 1.0]],
        vec![vec![0.6, 0.8], vec![-0.8, 0.6]],
    ])?;
    let features = FeatureMap::from_table(vec![vec![1.0], vec![-0.5]])?;
    let schedule = StepSchedule { c_alpha: 0.5, sigma: 0.6, c_beta: 0.8, nu: 0.4, c_gamma: 0.9 };
    Ok(PinnedInstance {
        mdp,
        policy,
        features,
        schedule,
        r_omega: 10.0,
        // s0, then (action, next state) per step
        uniforms: vec![0.3, 0.2, 0.95, 0.9, 0.05, 0.45, 0.6],
    })
}

/// Iterates after each of the three pinned steps: `(s, a, s', r, delta, eta, omega, theta)`.
pub type TraceRow = (usize, usize, usize, f64, f64, f64, Vec<f64>, Vec<f64>);

/// Runs three iterations of the implementation on the pinned instance.
pub fn pinned_trace() -> Result<Vec<TraceRow>> {
    let inst = pinned_instance()?;
    let agent = Agent {
        mdp: &inst.mdp,
        policy: &inst.policy,
        features: &inst.features,
        schedule: inst.schedule,
        r_omega: inst.r_omega,
    };
    let mut src = ScriptedUniforms::new(inst.uniforms.clone());
    let mut state = AgentState::initial(2, 1, 2, &mut src);
    let mut rows = Vec::new();
    for _ in 0..3 {
        let tr = agent.step(&mut state, &mut src)?;
        let Observation { s, a, s_next, r } = tr.obs;
        rows.push((s, a, s_next, r, tr.delta, state.eta, state.omega.clone(), state.theta.clone()));
    }
    Ok(rows)
}

/// The same three iterations written out line by line, without the agent.
fn pinned_trace_reference() -> Result<Vec<TraceRow>> {
    let inst = pinned_instance()?;
    let u = &inst.uniforms;
    let mut s = if u[0] < 0.5 { 0 } else { 1 };
    let (mut eta, mut omega, mut theta) = (0.0f64, vec![0.0f64], vec![0.0f64, 0.0]);
    let mut rows = Vec::new();
    for t in 0..3u64 {
        let probs = inst.policy.action_probs(&theta, s)?;
        let a = if u[1 + 2 * t as usize] < probs[0] { 0 } else { 1 };
        let row = inst.mdp.row(s, a);
        let s_next = if u[2 + 2 * t as usize] < row[0] { 0 } else { 1 };
        let r = inst.mdp.reward(s, a);
        let obs = Observation { s, a, s_next, r };
        let delta = td_error(&obs, eta, &omega, &inst.features);
        eta += inst.schedule.gamma(t) * (r - eta);
        omega[0] += inst.schedule.beta(t) * delta * inst.features.phi(s)[0];
        project_ball(&mut omega, inst.r_omega);
        let psi = |b: usize| inst.policy.feature(s, b);
        for (i, th) in theta.iter_mut().enumerate() {
            let score = psi(a)[i] - probs[0] * psi(0)[i] - probs[1] * psi(1)[i];
            *th += inst.schedule.alpha(t) * delta * score;
        }
        rows.push((s, a, s_next, r, delta, eta, omega.clone(), theta.clone()));
        s = s_next;
    }
    Ok(rows)
}

/// Criterion 4: trace fidelity and iterate bounds over a long run.
pub fn check_algorithm_fidelity(problem: &Problem, steps: u64, seed: u64) -> Result<Criterion> {
    let trace_ok = pinned_trace()? == pinned_trace_reference()?;
    let params = RunParams { total_steps: steps, oracle_every: steps, log_every: steps, envelope_checks: 0 };
    let run = run_two_timescale_on(problem, &params, seed)?;
    let b = run.bounds;
    let u_r = problem.mdp.u_r();
    let delta_cap = 2.0 * u_r + 2.0 * problem.r_omega;
    let bounds_ok = b.max_omega_norm <= problem.r_omega * (1.0 + 1e-12)
        && b.max_abs_eta <= u_r
        && b.max_abs_delta <= delta_cap;
    Ok(Criterion::new(
        4,
        "algorithm fidelity",
        trace_ok && bounds_ok,
        format!(
            "trace {}; over {steps} steps |w| <= {:.3} (R {:.3}), |eta| <= {:.3} (U {u_r}), |delta| <= {:.3} (cap {delta_cap:.3})",
            if trace_ok { "bit-identical" } else { "MISMATCH" },
            b.max_omega_norm,
            problem.r_omega,
            b.max_abs_eta,
            b.max_abs_delta,
        ),
    ))
}

/// Geometric grid of `points` integers in `[lo, hi]`, deduplicated.
pub fn log_grid(lo: u64, hi: u64, points: usize) -> Vec<u64> {
    let (a, b) = ((lo as f64).ln(), (hi as f64).ln());
    let mut out: Vec<u64> = (0..points)
        .map(|i| (a + (b - a) * i as f64 / (points - 1) as f64).exp().round() as u64)
        .collect();
    out.dedup();
    out
}

/// Criterion 5: `tau_t` nondecreasing and logarithmic in `t` over `[1e2, 1e5]`.
pub fn check_mixing_schedule(problem: &Problem) -> Criterion {
    let grid = log_grid(100, 100_000, 400);
    let s = &problem.schedule;
    let taus: Vec<f64> = grid
        .iter()
        .map(|&t| mixing_time(&problem.mixing, s.alpha(t), s.beta(t)) as f64)
        .collect();
    let monotone = taus.windows(2).all(|w| w[1] >= w[0]);
    let x: Vec<f64> = grid.iter().map(|&t| (1.0 + t as f64).ln()).collect();
    let fit = linear_fit(&x, &taus);
    let (passed, detail) = match fit {
        Ok(f) => (
            monotone && f.r2 >= 0.95,
            format!(
                "m = {:.3}, rho = {:.4}; tau in [{}, {}], fit {:.2} + {:.3} log(1+t), r2 = {:.4}{}",
                problem.mixing.m,
                problem.mixing.rho,
                taus[0],
                taus[taus.len() - 1],
                f.intercept,
                f.slope,
                f.r2,
                if monotone { "" } else { ", NOT monotone" }
            ),
        ),
        Err(e) => (false, format!("fit failed: {e}")),
    };
    Criterion::new(5, "mixing-time schedule", passed, detail)
}

/// Criterion 6: windowed critic error shrinks tenfold and decays at a moderate rate.
pub fn check_critic_convergence(run: &ReferenceRun) -> Criterion {
    let t = run.total();
    let a = &run.analysis;
    let (ratio, mut detail) =
        ratio_detail("W", curve_at(&a.critic_window, t / 100), curve_at(&a.critic_window, t));
    let slope = a.critic_window_fit.map(|f| f.slope);
    let slope_ok = slope.is_some_and(|s| (-0.8..=-0.15).contains(&s));
    match a.critic_window_fit {
        Some(f) => detail.push_str(&format!("; slope {:.3} (r2 {:.3})", f.slope, f.r2)),
        None => detail.push_str("; slope undefined"),
    }
    Criterion::new(6, "critic convergence", ratio.is_some_and(|r| r <= 0.1) && slope_ok, detail)
}

/// Criterion 7: running minimum of the squared gradient norm.
pub fn check_actor_convergence(run: &ReferenceRun) -> Criterion {
    let t = run.total();
    let a = &run.analysis;
    let monotone = a.running_min_grad.windows(2).all(|w| w[1].2 <= w[0].2);
    let early = curve_at(&a.running_min_grad, 1000.min(t));
    let late = curve_at(&a.running_min_grad, t);
    let (ratio, mut detail) = ratio_detail("minG", early, late);
    let slope_ok = a.running_min_grad_fit.is_some_and(|f| (-0.8..=-0.1).contains(&f.slope));
    match a.running_min_grad_fit {
        Some(f) => detail.push_str(&format!("; slope {:.3} (r2 {:.3})", f.slope, f.r2)),
        None => detail.push_str("; slope undefined"),
    }
    let passed = monotone && ratio.is_some_and(|r| r <= 0.2) && slope_ok;
    Criterion::new(7, "actor convergence", passed, detail)
}

/// Criterion 8: windowed average-reward tracking error shrinks tenfold.
pub fn check_eta_tracking(run: &ReferenceRun) -> Criterion {
    let t = run.total();
    let a = &run.analysis;
    let (ratio, mut detail) = ratio_detail("H", curve_at(&a.eta_window, t / 100), curve_at(&a.eta_window, t));
    if let Some(f) = a.eta_window_fit {
        detail.push_str(&format!("; slope {:.3}", f.slope));
    }
    Criterion::new(8, "average-reward tracking", ratio.is_some_and(|r| r <= 0.1), detail)
}

/// Criterion 9: samples the decoupled baseline needs to reach the two time-scale level at `T/2`.
///
/// A baseline that never reaches the level within its budget is reported as
/// censored at the budget, which is a lower bound on its true cost.
pub fn check_sample_efficiency(run: &ReferenceRun) -> Criterion {
    let t = run.total();
    let threshold = match curve_at(&run.analysis.running_min_grad, t / 2) {
        Some((_, v)) => v,
        None => return Criterion::new(9, "sample efficiency", false, "no checkpoint at T/2".into()),
    };
    let two = first_reach_samples(&run.ensemble, Metric::GradJSq, threshold).unwrap_or(t);
    let budget = *run.decoupled_ensemble.samples.last().unwrap_or(&0);
    let (dec, censored) = match first_reach_samples(&run.decoupled_ensemble, Metric::GradJSq, threshold) {
        Some(s) => (s, false),
        None => (budget, true),
    };
    let ratio = dec as f64 / two.max(1) as f64;
    Criterion::new(
        9,
        "sample efficiency",
        ratio >= 3.0,
        format!(
            "threshold {threshold:.3e}: two time-scale {two} samples, decoupled {}{dec} samples, ratio {}{ratio:.2}",
            if censored { "> " } else { "" },
            if censored { ">= " } else { "" },
        ),
    )
}

/// Criterion 10: rerunning a seed reproduces its CSV byte for byte.
pub fn check_determinism(run: &ReferenceRun) -> Result<Criterion> {
    let params = RunParams::from_config(&run.config);
    let first = &run.two_timescale[0];
    let again = run_two_timescale_on(&run.problem, &params, first.seed)?;
    let (a, b) = (first.to_csv_string()?, again.to_csv_string()?);
    Ok(Criterion::new(
        10,
        "determinism",
        a == b,
        format!("seed {}: {} CSV bytes, {}", first.seed, a.len(), if a == b { "identical" } else { "DIFFERENT" }),
    ))
}

/// Every acceptance criterion on the reference experiment.
pub fn acceptance_table(instance: &ReferenceInstance, opts: &ReferenceOptions) -> Result<(ReferenceRun, Vec<Criterion>)> {
    let run = ReferenceRun::execute(instance, opts)?;
    let mut rows = vec![
        check_oracle_exactness(20)?,
        check_policy_gradient(&run.problem, 20)?,
        check_baseline_identity(&run.problem, 100)?,
        check_algorithm_fidelity(&run.problem, 100_000.min(opts.total_steps.max(1)), run.seeds[0])?,
        check_mixing_schedule(&run.problem),
    ];
    rows.push(check_critic_convergence(&run));
    rows.push(check_actor_convergence(&run));
    rows.push(check_eta_tracking(&run));
    rows.push(check_sample_efficiency(&run));
    rows.push(check_determinism(&run)?);
    Ok((run, rows))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn log_grid_spans_endpoints() {
        let g = log_grid(100, 100_000, 50);
        assert_eq!(g[0], 100);
        assert_eq!(*g.last().unwrap(), 100_000);
        assert!(g.windows(2).all(|w| w[1] > w[0]));
    }

    #[test]
    fn pinned_trace_matches_reference() {
        assert_eq!(pinned_trace().unwrap(), pinned_trace_reference().unwrap());
    }

    #[test]
    fn truncated_reference_runs() {
        let opts = ReferenceOptions { total_steps: 1000, seeds: 2, ..Default::default() };
        let run = ReferenceRun::execute(&ReferenceInstance::default(), &opts).unwrap();
        assert_eq!(run.two_timescale.len(), 2);
        assert_eq!(run.ensemble.steps.last(), Some(&1000));
        assert!(check_determinism(&run).unwrap().passed);
    }
}
