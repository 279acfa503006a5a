//! Finite MDP model, the random instance generator and the one-step sampler.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Gamma};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Tolerance on row sums of the transition tensor.
pub const ROW_SUM_TOL: f64 = 1e-12;

/// Finite MDP with a deterministic, bounded reward table.
///
/// Transition probabilities are stored flat, indexed `[(s * n_actions + a) * n_states + s_next]`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "MdpDocument", into = "MdpDocument")]
pub struct FiniteMdp {
    n_states: usize,
    n_actions: usize,
    u_r: f64,
    transition: Vec<f64>,
    reward: Vec<f64>,
}

/// JSON layout: nested arrays `transition[s][a][s']` and `reward[s][a]`.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct MdpDocument {
    pub n_states: usize,
    pub n_actions: usize,
    pub u_r: f64,
    pub transition: Vec<Vec<Vec<f64>>>,
    pub reward: Vec<Vec<f64>>,
}

impl TryFrom<MdpDocument> for FiniteMdp {
    type Error = Error;

    fn try_from(doc: MdpDocument) -> Result<Self> {
        FiniteMdp::new(doc.u_r, doc.transition, doc.reward).and_then(|mdp| {
            if mdp.n_states != doc.n_states || mdp.n_actions != doc.n_actions {
                Err(Error::InvalidArgument(format!(
                    "declared shape {}x{} does not match tables {}x{}",
                    doc.n_states, doc.n_actions, mdp.n_states, mdp.n_actions
                )))
            } else {
                Ok(mdp)
            }
        })
    }
}

impl From<FiniteMdp> for MdpDocument {
    fn from(mdp: FiniteMdp) -> Self {
        let transition = (0..mdp.n_states)
            .map(|s| (0..mdp.n_actions).map(|a| mdp.row(s, a).to_vec()).collect())
            .collect();
        let reward = (0..mdp.n_states)
            .map(|s| mdp.reward[s * mdp.n_actions..(s + 1) * mdp.n_actions].to_vec())
            .collect();
        MdpDocument {
            n_states: mdp.n_states,
            n_actions: mdp.n_actions,
            u_r: mdp.u_r,
            transition,
            reward,
        }
    }
}

/// One transition `O = (s, a, s')` together with its reward.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Observation {
    pub s: usize,
    pub a: usize,
    pub s_next: usize,
    pub r: f64,
}

impl FiniteMdp {
    /// Validates and builds an MDP from nested tables.
    pub fn new(u_r: f64, transition: Vec<Vec<Vec<f64>>>, reward: Vec<Vec<f64>>) -> Result<Self> {
        if !(u_r > 0.0 && u_r.is_finite()) {
            return Err(Error::InvalidArgument(format!("reward bound must be positive, got {u_r}")));
        }
        let n_states = transition.len();
        if n_states == 0 {
            return Err(Error::InvalidArgument("MDP needs at least one state".into()));
        }
        let n_actions = transition[0].len();
        if n_actions == 0 {
            return Err(Error::InvalidArgument("MDP needs at least one action".into()));
        }
        if reward.len() != n_states {
            return Err(Error::DimensionMismatch { expected: n_states, got: reward.len() });
        }
        let mut flat = Vec::with_capacity(n_states * n_actions * n_states);
        for (s, per_action) in transition.iter().enumerate() {
            if per_action.len() != n_actions {
                return Err(Error::DimensionMismatch { expected: n_actions, got: per_action.len() });
            }
            for (a, row) in per_action.iter().enumerate() {
                if row.len() != n_states {
                    return Err(Error::DimensionMismatch { expected: n_states, got: row.len() });
                }
                check_row(s, a, row)?;
                flat.extend_from_slice(row);
            }
        }
        let mut rflat = Vec::with_capacity(n_states * n_actions);
        for (s, row) in reward.iter().enumerate() {
            if row.len() != n_actions {
                return Err(Error::DimensionMismatch { expected: n_actions, got: row.len() });
            }
            for (a, &r) in row.iter().enumerate() {
                if !r.is_finite() || r.abs() > u_r {
                    return Err(Error::InvalidArgument(format!(
                        "reward r[{s}][{a}] = {r} outside [-{u_r}, {u_r}]"
                    )));
                }
            }
            rflat.extend_from_slice(row);
        }
        Ok(FiniteMdp { n_states, n_actions, u_r, transition: flat, reward: rflat })
    }

    pub fn n_states(&self) -> usize {
        self.n_states
    }

    pub fn n_actions(&self) -> usize {
        self.n_actions
    }

    /// Reward bound `U_r`.
    pub fn u_r(&self) -> f64 {
        self.u_r
    }

    /// Distribution `P(. | s, a)`.
    pub fn row(&self, s: usize, a: usize) -> &[f64] {
        let start = (s * self.n_actions + a) * self.n_states;
        &self.transition[start..start + self.n_states]
    }

    pub fn p(&self, s: usize, a: usize, s_next: usize) -> f64 {
        self.row(s, a)[s_next]
    }

    pub fn reward(&self, s: usize, a: usize) -> f64 {
        self.reward[s * self.n_actions + a]
    }

    /// Returns a copy with every reward replaced by `f(s, a, r)`.
    pub fn map_rewards(&self, f: impl Fn(usize, usize, f64) -> f64) -> Self {
        let mut out = self.clone();
        let mut bound = self.u_r;
        for s in 0..self.n_states {
            for a in 0..self.n_actions {
                let r = f(s, a, self.reward(s, a));
                bound = bound.max(r.abs());
                out.reward[s * self.n_actions + a] = r;
            }
        }
        out.u_r = bound;
        out
    }

    /// Samples one transition with a single uniform draw consumed by inverse CDF.
    pub fn step<R: Rng + ?Sized>(&self, s: usize, a: usize, rng: &mut R) -> Observation {
        let u: f64 = rng.random();
        self.step_with_uniform(s, a, u)
    }

    /// Deterministic core of [`FiniteMdp::step`] given the uniform draw `u` in `[0, 1)`.
    pub fn step_with_uniform(&self, s: usize, a: usize, u: f64) -> Observation {
        assert!(s < self.n_states && a < self.n_actions, "state/action index out of range");
        let s_next = inverse_cdf(self.row(s, a), u);
        Observation { s, a, s_next, r: self.reward(s, a) }
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        Ok(serde_json::from_str(text)?)
    }
}

fn check_row(s: usize, a: usize, row: &[f64]) -> Result<()> {
    if row.iter().any(|&p| p.is_nan() || p < 0.0 || !p.is_finite()) {
        return Err(Error::InvalidArgument(format!("negative or non-finite entry in P[{s}][{a}]")));
    }
    let sum: f64 = row.iter().sum();
    if (sum - 1.0).abs() > ROW_SUM_TOL {
        return Err(Error::InvalidArgument(format!("row P[{s}][{a}] sums to {sum}")));
    }
    Ok(())
}

/// Index of the first cumulative probability exceeding `u`.
///
/// Falls back to the last index with positive mass when rounding leaves the
/// total slightly below `u`.
pub fn inverse_cdf(probs: &[f64], u: f64) -> usize {
    let mut acc = 0.0;
    for (i, &p) in probs.iter().enumerate() {
        acc += p;
        if u < acc {
            return i;
        }
    }
    probs.iter().rposition(|&p| p > 0.0).unwrap_or(probs.len() - 1)
}

/// Random ergodic instance generator.
///
/// Each row is `(1 - smoothing) * Dirichlet(concentration) + smoothing * uniform`,
/// so every entry is at least `smoothing / n_states`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MdpGenerator {
    pub n_states: usize,
    pub n_actions: usize,
    pub smoothing: f64,
    #[serde(default = "default_concentration")]
    pub concentration: f64,
    #[serde(default = "default_u_r")]
    pub u_r: f64,
}

fn default_concentration() -> f64 {
    1.0
}

fn default_u_r() -> f64 {
    1.0
}

impl MdpGenerator {
    pub fn new(n_states: usize, n_actions: usize, smoothing: f64) -> Self {
        MdpGenerator {
            n_states,
            n_actions,
            smoothing,
            concentration: default_concentration(),
            u_r: default_u_r(),
        }
    }

    pub fn generate(&self, seed: u64) -> Result<FiniteMdp> {
        if self.n_states == 0 || self.n_actions == 0 {
            return Err(Error::InvalidArgument("n_states and n_actions must be >= 1".into()));
        }
        if !(self.smoothing > 0.0 && self.smoothing <= 1.0) {
            return Err(Error::InvalidArgument(format!(
                "smoothing must lie in (0, 1], got {}",
                self.smoothing
            )));
        }
        if !(self.concentration > 0.0 && self.concentration.is_finite()) {
            return Err(Error::InvalidArgument("Dirichlet concentration must be positive".into()));
        }
        if !(self.u_r > 0.0 && self.u_r.is_finite()) {
            return Err(Error::InvalidArgument("reward bound must be positive".into()));
        }
        let n = self.n_states;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let gamma = Gamma::new(self.concentration, 1.0)
            .map_err(|e| Error::InvalidArgument(e.to_string()))?;
        let floor = self.smoothing / n as f64;
        let mut transition = Vec::with_capacity(n);
        for _ in 0..n {
            let mut per_action = Vec::with_capacity(self.n_actions);
            for _ in 0..self.n_actions {
                let mut draw: Vec<f64> = (0..n).map(|_| gamma.sample(&mut rng)).collect();
                let total: f64 = draw.iter().sum();
                if total > 0.0 {
                    draw.iter_mut().for_each(|x| *x /= total);
                } else {
                    draw.iter_mut().for_each(|x| *x = 1.0 / n as f64);
                }
                let mut row: Vec<f64> = draw
                    .iter()
                    .map(|&x| (1.0 - self.smoothing) * x + floor)
                    .collect();
                renormalize(&mut row);
                per_action.push(row);
            }
            transition.push(per_action);
        }
        let reward = (0..n)
            .map(|_| {
                (0..self.n_actions)
                    .map(|_| rng.random_range(-self.u_r..=self.u_r))
                    .collect()
            })
            .collect();
        FiniteMdp::new(self.u_r, transition, reward)
    }
}

/// Removes accumulated rounding so the row sums to one up to a few ulps.
fn renormalize(row: &mut [f64]) {
    let sum: f64 = row.iter().sum();
    row.iter_mut().for_each(|x| *x /= sum);
}

/// Random ergodic MDP with rewards uniform in `[-1, 1]`.
pub fn generate_random_mdp(
    n_states: usize,
    n_actions: usize,
    smoothing: f64,
    seed: u64,
) -> Result<FiniteMdp> {
    MdpGenerator::new(n_states, n_actions, smoothing).generate(seed)
}
