use std::path::{Path, PathBuf};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use super::{Agent, StepSchedule};
use crate::chain::{fit_mixing_envelope, policy_kernel, stationary_distribution, MixingProfile, DEFAULT_HORIZON};
use crate::env::{FiniteMdp, MdpGenerator};
use crate::error::{Error, Result};
use crate::linalg::Matrix;
use crate::oracle::{compute_oracle, projection_radius, FeatureMap, LAMBDA_TOL};
use crate::policy::SoftmaxPolicy;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MdpSource {
    Generate {
        #[serde(flatten)]
        params: MdpGenerator,
        seed: u64,
    },
    Inline(FiniteMdp),
    /// Path to an MDP JSON document, relative to the config file.
    File(PathBuf),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum FeatureSpec {
    /// Random features orthogonalized against constants under the initial stationary distribution.
    OrthogonalizedRandom { d: usize, seed: u64 },
    OneHot,
    Explicit(FeatureMap),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum PolicySpec {
    Gaussian { d_theta: usize, seed: u64 },
    Tabular,
    Explicit(SoftmaxPolicy),
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ScheduleSpec {
    pub c_alpha: f64,
    pub sigma: f64,
    /// Defaults to `min(1 / lambda_probe, 1)`.
    pub c_beta: Option<f64>,
    pub nu: f64,
    pub c_gamma: f64,
}

impl Default for ScheduleSpec {
    fn default() -> Self {
        ScheduleSpec { c_alpha: 0.1, sigma: 0.6, c_beta: None, nu: 0.4, c_gamma: 1.0 }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RadiusPolicy {
    /// `2 U_r / lambda_min` over the probe set.
    PaperFormula,
    Manual(f64),
}

/// Parameters at which the margin `lambda` is checked before a run.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ProbeSpec {
    pub count: usize,
    pub scale: f64,
    pub seed: u64,
}

impl Default for ProbeSpec {
    fn default() -> Self {
        ProbeSpec { count: 16, scale: 1.0, seed: 0 }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CriticSteps {
    /// `k` critic samples at actor update `k`.
    Paper,
    /// `10 * ceil(sqrt(k))`.
    SqrtTen,
    Constant(u64),
}

impl CriticSteps {
    pub fn steps(&self, k: u64) -> u64 {
        match *self {
            CriticSteps::Paper => k,
            CriticSteps::SqrtTen => 10 * ((k as f64).sqrt().ceil() as u64),
            CriticSteps::Constant(n) => n,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DecoupledSpec {
    pub critic_steps: CriticSteps,
    /// Environment samples the baseline may consume; defaults to `total_steps`.
    pub sample_budget: Option<u64>,
}

impl Default for DecoupledSpec {
    fn default() -> Self {
        DecoupledSpec { critic_steps: CriticSteps::SqrtTen, sample_budget: None }
    }
}

fn default_safety() -> f64 {
    1.0
}

fn default_radius() -> RadiusPolicy {
    RadiusPolicy::PaperFormula
}

/// One run (or the template shared by every seed of an experiment).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunConfig {
    pub mdp: MdpSource,
    pub features: FeatureSpec,
    pub policy: PolicySpec,
    #[serde(default)]
    pub schedule: ScheduleSpec,
    pub total_steps: u64,
    /// Progress-log cadence; defaults to `oracle_every`.
    #[serde(default)]
    pub log_every: Option<u64>,
    /// Checkpoint cadence; defaults to `max(1, total_steps / 500)`.
    #[serde(default)]
    pub oracle_every: Option<u64>,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_radius")]
    pub r_omega: RadiusPolicy,
    #[serde(default = "default_safety")]
    pub r_omega_safety: f64,
    #[serde(default)]
    pub probes: ProbeSpec,
    #[serde(default)]
    pub decoupled: DecoupledSpec,
}

impl RunConfig {
    pub fn oracle_every(&self) -> u64 {
        self.oracle_every.unwrap_or((self.total_steps / 500).max(1))
    }

    pub fn log_every(&self) -> u64 {
        self.log_every.unwrap_or_else(|| self.oracle_every())
    }

    pub fn validate(&self) -> Result<()> {
        if self.total_steps < 1 {
            return Err(Error::InvalidArgument("total_steps must be >= 1".into()));
        }
        let oe = self.oracle_every();
        if oe == 0 || self.log_every() == 0 {
            return Err(Error::InvalidArgument("cadences must be positive".into()));
        }
        if self.log_every() > oe && self.log_every.is_some() && self.oracle_every.is_some() {
            return Err(Error::InvalidArgument("log_every must not exceed oracle_every".into()));
        }
        Ok(())
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: RunConfig = serde_json::from_str(text)?;
        cfg.validate()?;
        Ok(cfg)
    }
}

/// Margins measured on the pre-run probe set.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LambdaProbes {
    pub thetas: Vec<Vec<f64>>,
    pub lambdas: Vec<f64>,
    pub min: f64,
    pub max: f64,
}

/// Resolved, immutable problem instance shared by every seed.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Problem {
    pub mdp: FiniteMdp,
    pub policy: SoftmaxPolicy,
    pub features: FeatureMap,
    pub schedule: StepSchedule,
    pub r_omega: f64,
    pub theta0: Vec<f64>,
    /// Envelope fitted at `theta0` and held fixed for the run.
    pub mixing: MixingProfile,
    pub probes: LambdaProbes,
}

/// MDP, policy class and critic features before any margin checks.
#[derive(Clone, Debug, PartialEq)]
pub struct Instance {
    pub mdp: FiniteMdp,
    pub policy: SoftmaxPolicy,
    pub features: FeatureMap,
    pub theta0: Vec<f64>,
    /// Kernel and stationary distribution at `theta0`.
    pub kernel0: Matrix,
    pub mu0: Vec<f64>,
}

impl Instance {
    /// `base_dir` resolves relative MDP file paths.
    pub fn build(cfg: &RunConfig, base_dir: Option<&Path>) -> Result<Self> {
        let mdp = match &cfg.mdp {
            MdpSource::Generate { params, seed } => params.generate(*seed)?,
            MdpSource::Inline(m) => m.clone(),
            MdpSource::File(path) => {
                let full = match base_dir {
                    Some(dir) if path.is_relative() => dir.join(path),
                    _ => path.clone(),
                };
                FiniteMdp::from_json(&std::fs::read_to_string(&full)?)?
            }
        };
        let policy = match &cfg.policy {
            PolicySpec::Gaussian { d_theta, seed } => {
                SoftmaxPolicy::gaussian(mdp.n_states(), mdp.n_actions(), *d_theta, *seed)?
            }
            PolicySpec::Tabular => SoftmaxPolicy::tabular(mdp.n_states(), mdp.n_actions()),
            PolicySpec::Explicit(p) => p.clone(),
        };
        if policy.n_states() != mdp.n_states() || policy.n_actions() != mdp.n_actions() {
            return Err(Error::InvalidArgument("policy and MDP disagree on state/action spaces".into()));
        }
        let theta0 = vec![0.0; policy.d_theta()];
        let kernel0 = policy_kernel(&mdp, &policy, &theta0)?;
        let mu0 = stationary_distribution(&kernel0)?;
        let features = match &cfg.features {
            FeatureSpec::OrthogonalizedRandom { d, seed } => {
                FeatureMap::orthogonalized_random(mdp.n_states(), *d, &mu0, *seed)?
            }
            FeatureSpec::OneHot => FeatureMap::one_hot(mdp.n_states()),
            FeatureSpec::Explicit(f) => f.clone(),
        };
        if features.n_states() != mdp.n_states() {
            return Err(Error::DimensionMismatch { expected: mdp.n_states(), got: features.n_states() });
        }
        Ok(Instance { mdp, policy, features, theta0, kernel0, mu0 })
    }

    /// Margin at every probe parameter, violations included.
    pub fn measure_lambdas(&self, spec: &ProbeSpec) -> Result<LambdaProbes> {
        let thetas = probe_thetas(self.policy.d_theta(), &self.theta0, spec);
        let mut lambdas = Vec::with_capacity(thetas.len());
        for theta in &thetas {
            lambdas.push(compute_oracle(&self.mdp, &self.policy, theta, &self.features)?.lambda);
        }
        let min = lambdas.iter().cloned().fold(f64::INFINITY, f64::min);
        let max = lambdas.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        Ok(LambdaProbes { thetas, lambdas, min, max })
    }
}

impl LambdaProbes {
    /// First probe whose margin is at or below [`LAMBDA_TOL`], as an error.
    pub fn check(&self) -> Result<()> {
        match self.lambdas.iter().position(|&l| l.is_nan() || l <= LAMBDA_TOL) {
            Some(i) => Err(Error::AssumptionViolated {
                lambda: self.lambdas[i],
                probe: i,
                theta: self.thetas[i].clone(),
            }),
            None => Ok(()),
        }
    }
}

impl Problem {
    /// Builds the instance and runs the pre-run margin checks.
    ///
    /// `base_dir` resolves relative MDP file paths.
    pub fn resolve(cfg: &RunConfig, base_dir: Option<&Path>) -> Result<Self> {
        cfg.validate()?;
        let instance = Instance::build(cfg, base_dir)?;
        let probes = instance.measure_lambdas(&cfg.probes)?;
        probes.check()?;
        let Instance { mdp, policy, features, theta0, kernel0, mu0 } = instance;
        let r_omega = match cfg.r_omega {
            RadiusPolicy::PaperFormula => projection_radius(mdp.u_r(), probes.min, cfg.r_omega_safety)?,
            RadiusPolicy::Manual(r) if r > 0.0 && r.is_finite() => r,
            RadiusPolicy::Manual(r) => {
                return Err(Error::InvalidArgument(format!("projection radius must be positive, got {r}")))
            }
        };
        let s = cfg.schedule;
        let schedule = StepSchedule {
            c_alpha: s.c_alpha,
            sigma: s.sigma,
            c_beta: s.c_beta.unwrap_or_else(|| (1.0 / probes.min).min(1.0)),
            nu: s.nu,
            c_gamma: s.c_gamma,
        };
        schedule.validate(Some(probes.min))?;
        let mixing = fit_mixing_envelope(&kernel0, &mu0, DEFAULT_HORIZON)?;
        Ok(Problem { mdp, policy, features, schedule, r_omega, theta0, mixing, probes })
    }

    pub fn agent(&self) -> Agent<'_> {
        Agent {
            mdp: &self.mdp,
            policy: &self.policy,
            features: &self.features,
            schedule: self.schedule,
            r_omega: self.r_omega,
        }
    }
}

/// `theta0` plus `count` Gaussian parameters of standard deviation `scale`.
pub fn probe_thetas(d_theta: usize, theta0: &[f64], spec: &ProbeSpec) -> Vec<Vec<f64>> {
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let mut out = vec![theta0.to_vec()];
    for _ in 0..spec.count {
        out.push(
            (0..d_theta)
                .map(|_| {
                    let z: f64 = StandardNormal.sample(&mut rng);
                    spec.scale * z
                })
                .collect(),
        );
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    const SAMPLE: &str = r#"{
        "mdp": {"generate": {"n_states": 4, "n_actions": 2, "smoothing": 0.1, "seed": 3}},
        "features": {"kind": "orthogonalized_random", "d": 2, "seed": 5},
        "policy": {"kind": "gaussian", "d_theta": 3, "seed": 7},
        "total_steps": 1000
    }"#;

    #[test]
    fn parses_minimal_config_with_defaults() {
        let cfg = RunConfig::from_json(SAMPLE).unwrap();
        assert_eq!(cfg.oracle_every(), 2);
        assert_eq!(cfg.schedule, ScheduleSpec::default());
        assert_eq!(cfg.r_omega, RadiusPolicy::PaperFormula);
        let p = Problem::resolve(&cfg, None).unwrap();
        assert!(p.schedule.c_beta <= 1.0 && p.schedule.c_beta <= 1.0 / p.probes.min);
        assert!((p.r_omega - 2.0 / p.probes.min).abs() < 1e-12);
        assert_eq!(p.probes.lambdas.len(), 17);
    }

    #[test]
    fn config_round_trips_through_json() {
        let mut cfg = RunConfig::from_json(SAMPLE).unwrap();
        cfg.r_omega = RadiusPolicy::Manual(3.5);
        cfg.decoupled.critic_steps = CriticSteps::Constant(4);
        let text = serde_json::to_string(&cfg).unwrap();
        assert_eq!(RunConfig::from_json(&text).unwrap(), cfg);
    }

    #[test]
    fn one_hot_features_fail_the_probe() {
        let mut cfg = RunConfig::from_json(SAMPLE).unwrap();
        cfg.features = FeatureSpec::OneHot;
        match Problem::resolve(&cfg, None) {
            Err(Error::AssumptionViolated { probe, .. }) => assert_eq!(probe, 0),
            other => panic!("expected assumption violation, got {other:?}"),
        }
    }

    #[test]
    fn critic_step_presets() {
        assert_eq!(CriticSteps::Paper.steps(7), 7);
        assert_eq!(CriticSteps::SqrtTen.steps(0), 0);
        assert_eq!(CriticSteps::SqrtTen.steps(5), 30);
        assert_eq!(CriticSteps::Constant(3).steps(100), 3);
    }

    #[test]
    fn rejects_bad_schedules_and_radii() {
        let mut cfg = RunConfig::from_json(SAMPLE).unwrap();
        cfg.schedule.nu = 0.7;
        assert!(Problem::resolve(&cfg, None).is_err());
        let mut cfg = RunConfig::from_json(SAMPLE).unwrap();
        cfg.r_omega = RadiusPolicy::Manual(-1.0);
        assert!(Problem::resolve(&cfg, None).is_err());
        let mut cfg = RunConfig::from_json(SAMPLE).unwrap();
        cfg.schedule.c_beta = Some(1e6);
        assert!(Problem::resolve(&cfg, None).is_err());
        assert!(RunConfig::from_json(&SAMPLE.replace("1000", "0")).is_err());
    }
}
