//! Multi-seed aggregation, averaged error functionals and rate fits.
//!
//! Sums over unlogged step indices hold the last logged value (piecewise
//! constant between checkpoints).

use serde::{Deserialize, Serialize};

use crate::chain::{mixing_time, MixingProfile};
use crate::error::{Error, Result};

/// Exact quantities logged at one checkpoint.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    /// Iteration index (actor update index for the decoupled baseline).
    pub step: u64,
    /// Cumulative environment transitions consumed.
    pub samples: u64,
    pub grad_j_sq: f64,
    pub critic_err_sq: f64,
    pub eta_err_sq: f64,
    pub j_value: f64,
    pub eta: f64,
    pub omega_norm: f64,
}

/// Running extremes of the iterates over a whole run.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct IterateBounds {
    pub max_omega_norm: f64,
    pub max_abs_eta: f64,
    pub max_abs_delta: f64,
}

impl IterateBounds {
    pub fn observe(&mut self, omega_norm: f64, eta: f64, delta: f64) {
        self.max_omega_norm = self.max_omega_norm.max(omega_norm);
        self.max_abs_eta = self.max_abs_eta.max(eta.abs());
        self.max_abs_delta = self.max_abs_delta.max(delta.abs());
    }
}

/// Diagnostics gathered at checkpoints.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct RunDiagnostics {
    /// Smallest negative-definiteness margin over visited parameters.
    pub lambda_min_visited: f64,
    /// Largest approximation error over visited parameters.
    pub eps_app_max_visited: f64,
    /// Checkpoints where `|omega*(theta_t)| > R_omega`.
    pub radius_exceeded: usize,
    /// Largest `d_tau / (m rho^tau)` over a subsample of visited policies.
    pub envelope_violation_max: f64,
    /// Checkpoint steps whose margin was not positive.
    pub lambda_violations: Vec<u64>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RunMode {
    TwoTimescale,
    Decoupled,
}

impl RunMode {
    pub fn as_str(&self) -> &'static str {
        match self {
            RunMode::TwoTimescale => "two_timescale",
            RunMode::Decoupled => "decoupled",
        }
    }
}

/// Time series produced by one seeded run.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunMetrics {
    pub mode: RunMode,
    pub seed: u64,
    pub checkpoints: Vec<Checkpoint>,
    pub bounds: IterateBounds,
    pub diagnostics: RunDiagnostics,
    /// Total environment transitions consumed.
    pub samples: u64,
}

impl RunMetrics {
    pub fn validate(&self) -> Result<()> {
        if self.checkpoints.windows(2).any(|w| w[1].step <= w[0].step) {
            return Err(Error::Analysis("checkpoint steps must be strictly increasing".into()));
        }
        let bad = self
            .checkpoints
            .iter()
            .any(|c| !(c.grad_j_sq >= 0.0 && c.critic_err_sq >= 0.0 && c.eta_err_sq >= 0.0));
        if bad {
            return Err(Error::Analysis("squared metrics must be nonnegative".into()));
        }
        Ok(())
    }

    /// CSV with one row per checkpoint.
    pub fn write_csv<W: std::io::Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        for c in &self.checkpoints {
            w.serialize(c)?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn to_csv_string(&self) -> Result<String> {
        let mut buf = Vec::new();
        self.write_csv(&mut buf)?;
        Ok(String::from_utf8(buf).expect("csv output is utf-8"))
    }

    pub fn read_csv<R: std::io::Read>(input: R, mode: RunMode, seed: u64) -> Result<Self> {
        let mut r = csv::Reader::from_reader(input);
        let checkpoints = r.deserialize().collect::<std::result::Result<Vec<Checkpoint>, _>>()?;
        let samples = checkpoints.last().map_or(0, |c| c.samples);
        Ok(RunMetrics {
            mode,
            seed,
            checkpoints,
            bounds: IterateBounds::default(),
            diagnostics: RunDiagnostics::default(),
            samples,
        })
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Metric {
    GradJSq,
    CriticErrSq,
    EtaErrSq,
    JValue,
}

impl Metric {
    pub fn of(&self, c: &Checkpoint) -> f64 {
        match self {
            Metric::GradJSq => c.grad_j_sq,
            Metric::CriticErrSq => c.critic_err_sq,
            Metric::EtaErrSq => c.eta_err_sq,
            Metric::JValue => c.j_value,
        }
    }
}

/// Mean and standard error across seeds.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SeriesStats {
    pub mean: Vec<f64>,
    pub std_err: Vec<f64>,
}

/// Across-seed estimate of the expectations at each checkpoint.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EnsembleMetrics {
    pub seed_count: usize,
    pub steps: Vec<u64>,
    pub samples: Vec<u64>,
    pub grad_j_sq: SeriesStats,
    pub critic_err_sq: SeriesStats,
    pub eta_err_sq: SeriesStats,
    pub j_value: SeriesStats,
}

impl EnsembleMetrics {
    /// All runs must share the same checkpoint grid.
    pub fn from_runs(runs: &[RunMetrics]) -> Result<Self> {
        let first = runs.first().ok_or_else(|| Error::Analysis("no runs to aggregate".into()))?;
        for r in runs {
            r.validate()?;
            let same = r.checkpoints.len() == first.checkpoints.len()
                && r
                    .checkpoints
                    .iter()
                    .zip(&first.checkpoints)
                    .all(|(a, b)| a.step == b.step && a.samples == b.samples);
            if !same {
                return Err(Error::Analysis(format!("seed {} uses a different checkpoint grid", r.seed)));
            }
        }
        if first.checkpoints.is_empty() {
            return Err(Error::Analysis("runs have no checkpoints".into()));
        }
        let stats = |metric: Metric| {
            let n = runs.len() as f64;
            let len = first.checkpoints.len();
            let mut mean = vec![0.0; len];
            let mut std_err = vec![0.0; len];
            for i in 0..len {
                let xs = runs.iter().map(|r| metric.of(&r.checkpoints[i]));
                let m = xs.clone().sum::<f64>() / n;
                mean[i] = m;
                if runs.len() > 1 {
                    let var = xs.map(|x| (x - m) * (x - m)).sum::<f64>() / (n - 1.0);
                    std_err[i] = (var / n).sqrt();
                }
            }
            SeriesStats { mean, std_err }
        };
        Ok(EnsembleMetrics {
            seed_count: runs.len(),
            steps: first.checkpoints.iter().map(|c| c.step).collect(),
            samples: first.checkpoints.iter().map(|c| c.samples).collect(),
            grad_j_sq: stats(Metric::GradJSq),
            critic_err_sq: stats(Metric::CriticErrSq),
            eta_err_sq: stats(Metric::EtaErrSq),
            j_value: stats(Metric::JValue),
        })
    }

    pub fn series(&self, metric: Metric) -> &SeriesStats {
        match metric {
            Metric::GradJSq => &self.grad_j_sq,
            Metric::CriticErrSq => &self.critic_err_sq,
            Metric::EtaErrSq => &self.eta_err_sq,
            Metric::JValue => &self.j_value,
        }
    }

    pub fn mean(&self, metric: Metric) -> &[f64] {
        &self.series(metric).mean
    }

    /// Index of the last checkpoint with `step <= t`.
    pub fn index_at(&self, t: u64) -> Option<usize> {
        match self.steps.binary_search(&t) {
            Ok(i) => Some(i),
            Err(0) => None,
            Err(i) => Some(i - 1),
        }
    }
}

/// `sum_{k=lo}^{hi} y(k)` where `y` holds the value of the last checkpoint `<= k`.
pub fn held_sum(steps: &[u64], values: &[f64], lo: u64, hi: u64) -> Result<f64> {
    if lo > hi {
        return Err(Error::Analysis(format!("empty summation range [{lo}, {hi}]")));
    }
    if steps.first().is_none_or(|&s| s > lo) {
        return Err(Error::Analysis(format!("index {lo} precedes the first checkpoint")));
    }
    let mut total = 0.0;
    for (i, (&start, &v)) in steps.iter().zip(values).enumerate() {
        let end = steps.get(i + 1).map_or(u64::MAX, |&n| n - 1);
        let a = start.max(lo);
        let b = end.min(hi);
        if a <= b {
            total += v * (b - a + 1) as f64;
        }
        if end >= hi {
            break;
        }
    }
    Ok(total)
}

/// `(8/t) sum_{k=1}^t E|omega_k - omega*_k|^2 + (2/t) sum_{k=1}^t E(eta_k - J(theta_k))^2`.
pub fn error_aggregate(ensemble: &EnsembleMetrics, t: u64) -> Result<f64> {
    if t == 0 {
        return Err(Error::Analysis("error aggregate needs t >= 1".into()));
    }
    let critic = held_sum(&ensemble.steps, ensemble.mean(Metric::CriticErrSq), 1, t)?;
    let eta = held_sum(&ensemble.steps, ensemble.mean(Metric::EtaErrSq), 1, t)?;
    Ok((8.0 * critic + 2.0 * eta) / t as f64)
}

/// `1/(1 + t - tau) sum_{k=tau}^t E[metric_k]`.
pub fn windowed_average_from_tau(ensemble: &EnsembleMetrics, metric: Metric, t: u64, tau: u64) -> Result<f64> {
    if tau > t {
        return Err(Error::Analysis(format!("empty window: tau = {tau} > t = {t}")));
    }
    let sum = held_sum(&ensemble.steps, ensemble.mean(metric), tau, t)?;
    Ok(sum / (1 + t - tau) as f64)
}

/// `min_{checkpoints <= t} E[metric]`.
pub fn running_min(ensemble: &EnsembleMetrics, metric: Metric, t: u64) -> Result<f64> {
    let idx = ensemble
        .index_at(t)
        .ok_or_else(|| Error::Analysis(format!("t = {t} precedes the first checkpoint")))?;
    Ok(ensemble.mean(metric)[..=idx].iter().cloned().fold(f64::INFINITY, f64::min))
}

/// Running minimum at every checkpoint.
pub fn running_min_curve(ensemble: &EnsembleMetrics, metric: Metric) -> Vec<f64> {
    let mut best = f64::INFINITY;
    ensemble
        .mean(metric)
        .iter()
        .map(|&x| {
            best = best.min(x);
            best
        })
        .collect()
}

/// Least-squares line through `(log t, log y)`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct PowerFit {
    pub slope: f64,
    pub intercept: f64,
    pub r2: f64,
    pub points: usize,
}

/// Ordinary least squares of `y` on `x`; `r2 = 1` when `y` is constant.
pub fn linear_fit(x: &[f64], y: &[f64]) -> Result<PowerFit> {
    if x.len() != y.len() {
        return Err(Error::DimensionMismatch { expected: x.len(), got: y.len() });
    }
    if x.len() < 3 {
        return Err(Error::Analysis(format!("need at least 3 points, got {}", x.len())));
    }
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let sxx: f64 = x.iter().map(|a| (a - mx) * (a - mx)).sum();
    let sxy: f64 = x.iter().zip(y).map(|(a, b)| (a - mx) * (b - my)).sum();
    if sxx == 0.0 {
        return Err(Error::Analysis("abscissae are all equal".into()));
    }
    let slope = if y.iter().all(|b| *b == y[0]) { 0.0 } else { sxy / sxx };
    let intercept = my - slope * mx;
    let ss_tot: f64 = y.iter().map(|b| (b - my) * (b - my)).sum();
    let ss_res: f64 = x
        .iter()
        .zip(y)
        .map(|(a, b)| {
            let e = b - (intercept + slope * a);
            e * e
        })
        .sum();
    let r2 = if y.iter().all(|b| *b == y[0]) { 1.0 } else { 1.0 - ss_res / ss_tot };
    Ok(PowerFit { slope, intercept, r2, points: x.len() })
}

/// Fits `log y = intercept + slope * log t` over the whole series.
///
/// With `divide_log` the fit is made on `y / log t` instead, absorbing one log factor.
pub fn loglog_slope(series: &[(f64, f64)], divide_log: bool) -> Result<PowerFit> {
    if let Some(&(t, y)) = series.iter().find(|(t, y)| !(*t > 0.0 && *y > 0.0)) {
        return Err(Error::Analysis(format!("nonpositive point ({t}, {y}) in log-log fit")));
    }
    if divide_log && series.iter().any(|&(t, _)| t <= 1.0) {
        return Err(Error::Analysis("log correction needs t > 1".into()));
    }
    let x: Vec<f64> = series.iter().map(|(t, _)| t.ln()).collect();
    let y: Vec<f64> = series
        .iter()
        .map(|&(t, y)| if divide_log { (y / t.ln()).ln() } else { y.ln() })
        .collect();
    linear_fit(&x, &y)
}

/// Restricts a series to `lo <= t <= hi`.
pub fn window(series: &[(f64, f64)], lo: f64, hi: f64) -> Vec<(f64, f64)> {
    series.iter().copied().filter(|&(t, _)| t >= lo && t <= hi).collect()
}

/// Schedule-dependent quantities needed to place the averaging windows.
pub trait StepSizes {
    fn alpha(&self, t: u64) -> f64;
    fn beta(&self, t: u64) -> f64;
}

/// Curves and fits derived from one ensemble.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AnalysisReport {
    pub seed_count: usize,
    pub total_steps: u64,
    pub divide_log: bool,
    /// `(t, E(t))`.
    pub e_of_t: Vec<(u64, f64)>,
    /// `(t, tau_t, windowed critic error)`.
    pub critic_window: Vec<(u64, u64, f64)>,
    /// `(t, tau_t, windowed eta error)`.
    pub eta_window: Vec<(u64, u64, f64)>,
    /// `(t, samples, running min of E|grad J|^2)`.
    pub running_min_grad: Vec<(u64, u64, f64)>,
    pub critic_window_fit: Option<PowerFit>,
    pub eta_window_fit: Option<PowerFit>,
    pub running_min_grad_fit: Option<PowerFit>,
}

/// Builds every curve on the checkpoint grid and fits rates over `[T/10, T]`.
pub fn analyze(
    ensemble: &EnsembleMetrics,
    profile: &MixingProfile,
    schedule: &dyn StepSizes,
    divide_log: bool,
) -> Result<AnalysisReport> {
    let total = *ensemble.steps.last().ok_or_else(|| Error::Analysis("empty ensemble".into()))?;
    let mut e_of_t = Vec::new();
    let mut critic_window = Vec::new();
    let mut eta_window = Vec::new();
    for &t in &ensemble.steps {
        if t >= 1 {
            e_of_t.push((t, error_aggregate(ensemble, t)?));
        }
        let tau = mixing_time(profile, schedule.alpha(t), schedule.beta(t)) as u64;
        if tau <= t && tau >= ensemble.steps[0] {
            critic_window.push((t, tau, windowed_average_from_tau(ensemble, Metric::CriticErrSq, t, tau)?));
            eta_window.push((t, tau, windowed_average_from_tau(ensemble, Metric::EtaErrSq, t, tau)?));
        }
    }
    let running_min_grad: Vec<(u64, u64, f64)> = running_min_curve(ensemble, Metric::GradJSq)
        .into_iter()
        .zip(ensemble.steps.iter().zip(&ensemble.samples))
        .map(|(v, (&t, &s))| (t, s, v))
        .collect();

    let lo = total as f64 / 10.0;
    let hi = total as f64;
    let fit3 = |curve: &[(u64, u64, f64)]| {
        let pts: Vec<(f64, f64)> = curve.iter().map(|&(t, _, v)| (t as f64, v)).collect();
        loglog_slope(&window(&pts, lo, hi), divide_log).ok()
    };
    let critic_window_fit = fit3(&critic_window);
    let eta_window_fit = fit3(&eta_window);
    let running_min_grad_fit = fit3(&running_min_grad);
    Ok(AnalysisReport {
        seed_count: ensemble.seed_count,
        total_steps: total,
        divide_log,
        e_of_t,
        critic_window,
        eta_window,
        running_min_grad,
        critic_window_fit,
        eta_window_fit,
        running_min_grad_fit,
    })
}

/// Samples consumed when the running minimum of `metric` first drops to `threshold`.
pub fn first_reach_samples(ensemble: &EnsembleMetrics, metric: Metric, threshold: f64) -> Option<u64> {
    running_min_curve(ensemble, metric)
        .iter()
        .position(|&v| v <= threshold)
        .map(|i| ensemble.samples[i])
}
