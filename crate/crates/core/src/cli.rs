//! Command-line front end: experiment specs, multi-seed orchestration,
//! persistence, the reference experiment and the assumption audit.
//!
//! Exit codes: 0 success, 2 unreadable or invalid spec (or bad flags),
//! 3 negative-definiteness margin violated, 4 any other runtime failure.

use std::collections::BTreeMap;
use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand};
use log::{error, info};
use serde::{Deserialize, Serialize};

use crate::agent::{Instance, LambdaProbes, Problem, RunConfig, RunParams};
use crate::analysis::{analyze, AnalysisReport, EnsembleMetrics, RunMetrics, RunMode};
use crate::chain::{fit_mixing_envelope, MixingProfile, DEFAULT_HORIZON};
use crate::error::{Error, Result};
use crate::experiment::{acceptance_table, run_seeds, Criterion, ReferenceInstance, ReferenceOptions};
use crate::oracle::{compute_oracle, lipschitz_probe_omega_star};
use crate::policy::PolicyRegularity;
use crate::seeds::derive_seeds;

pub const EXIT_OK: i32 = 0;
pub const EXIT_PARSE: i32 = 2;
pub const EXIT_ASSUMPTION: i32 = 3;
pub const EXIT_RUNTIME: i32 = 4;

/// Environment variable that overrides every output directory.
pub const OUT_ENV: &str = "TSAC_OUT";

/// Maps an error to its process exit code.
pub fn exit_code(err: &Error) -> i32 {
    match err {
        Error::Parse(_) | Error::Json(_) | Error::InvalidArgument(_) => EXIT_PARSE,
        Error::AssumptionViolated { .. } => EXIT_ASSUMPTION,
        _ => EXIT_RUNTIME,
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Mode {
    TwoTimescale,
    Decoupled,
    Both,
}

impl Mode {
    fn run_modes(self) -> &'static [RunMode] {
        match self {
            Mode::TwoTimescale => &[RunMode::TwoTimescale],
            Mode::Decoupled => &[RunMode::Decoupled],
            Mode::Both => &[RunMode::TwoTimescale, RunMode::Decoupled],
        }
    }
}

fn default_mode() -> Mode {
    Mode::TwoTimescale
}

/// A multi-seed experiment.
///
/// Seeds come from the explicit `seeds` list, or else are derived as
/// `hash64(master_seed, i)` for `i < n_seeds` (see [`crate::seeds`]).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentSpec {
    pub name: String,
    pub run: RunConfig,
    #[serde(default)]
    pub seeds: Option<Vec<u64>>,
    #[serde(default)]
    pub master_seed: u64,
    #[serde(default)]
    pub n_seeds: Option<usize>,
    pub output_dir: PathBuf,
    #[serde(default = "default_mode")]
    pub mode: Mode,
    /// Divide rate fits by `log t`.
    #[serde(default)]
    pub divide_log: bool,
}

impl ExperimentSpec {
    pub fn from_json(text: &str) -> Result<Self> {
        let spec: ExperimentSpec = serde_json::from_str(text).map_err(|e| Error::Parse(e.to_string()))?;
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<()> {
        if self.name.is_empty() || self.name.contains(['/', '\\']) {
            return Err(Error::InvalidArgument(format!("invalid experiment name {:?}", self.name)));
        }
        if self.seed_list().is_empty() {
            return Err(Error::InvalidArgument("at least one seed is required".into()));
        }
        self.run.validate()
    }

    pub fn seed_list(&self) -> Vec<u64> {
        match &self.seeds {
            Some(list) => list.clone(),
            None => derive_seeds(self.master_seed, self.n_seeds.unwrap_or(1)),
        }
    }

    /// `TSAC_OUT` if set, else `output_dir`, with the experiment name appended.
    pub fn resolved_output(&self, base_dir: &Path) -> PathBuf {
        let root = match std::env::var_os(OUT_ENV) {
            Some(dir) => PathBuf::from(dir),
            None if self.output_dir.is_relative() => base_dir.join(&self.output_dir),
            None => self.output_dir.clone(),
        };
        root.join(&self.name)
    }
}

/// Writes `bytes` to `path` through a temporary file in the same directory.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let dir = path.parent().filter(|p| !p.as_os_str().is_empty()).unwrap_or(Path::new("."));
    std::fs::create_dir_all(dir)?;
    let mut tmp = tempfile::NamedTempFile::new_in(dir)?;
    tmp.write_all(bytes)?;
    tmp.as_file().sync_all()?;
    tmp.persist(path).map_err(|e| Error::Io(e.error))?;
    Ok(())
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    write_atomic(path, text.as_bytes())
}

fn csv_bytes<F>(fill: F) -> Result<Vec<u8>>
where
    F: FnOnce(&mut csv::Writer<Vec<u8>>) -> Result<()>,
{
    let mut w = csv::Writer::from_writer(Vec::new());
    fill(&mut w)?;
    w.into_inner().map_err(|e| Error::Io(e.into_error()))
}

/// Summary of the resolved problem echoed into result files.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ProblemSummary {
    pub n_states: usize,
    pub n_actions: usize,
    pub d: usize,
    pub d_theta: usize,
    pub lambda_probe_min: f64,
    pub lambda_probe_max: f64,
    pub r_omega: f64,
    pub schedule: crate::agent::StepSchedule,
    pub mixing: MixingProfile,
}

impl ProblemSummary {
    pub fn of(p: &Problem) -> Self {
        ProblemSummary {
            n_states: p.mdp.n_states(),
            n_actions: p.mdp.n_actions(),
            d: p.features.dim(),
            d_theta: p.policy.d_theta(),
            lambda_probe_min: p.probes.min,
            lambda_probe_max: p.probes.max,
            r_omega: p.r_omega,
            schedule: p.schedule,
            mixing: p.mixing,
        }
    }
}

#[derive(Clone, Debug, Serialize)]
struct RunRecord<'a> {
    index: usize,
    seed: u64,
    csv: String,
    samples: u64,
    bounds: &'a crate::analysis::IterateBounds,
    diagnostics: &'a crate::analysis::RunDiagnostics,
}

#[derive(Clone, Debug, Serialize)]
struct EnsembleDocument<'a> {
    spec: &'a ExperimentSpec,
    flags: &'a BTreeMap<String, String>,
    mode: &'static str,
    problem: ProblemSummary,
    runs: Vec<RunRecord<'a>>,
    ensemble: &'a EnsembleMetrics,
}

fn write_curves(dir: &Path, ensemble: &EnsembleMetrics, report: &AnalysisReport) -> Result<()> {
    let curves = dir.join("curves");
    let e = csv_bytes(|w| {
        w.write_record(["step", "e_of_t"])?;
        for (t, v) in &report.e_of_t {
            w.serialize((t, v))?;
        }
        Ok(())
    })?;
    write_atomic(&curves.join("e_of_t.csv"), &e)?;
    for (name, curve, second) in [
        ("critic_window.csv", &report.critic_window, "tau"),
        ("eta_window.csv", &report.eta_window, "tau"),
        ("running_min_grad.csv", &report.running_min_grad, "samples"),
    ] {
        let bytes = csv_bytes(|w| {
            w.write_record(["step", second, "value"])?;
            for row in curve.iter() {
                w.serialize(row)?;
            }
            Ok(())
        })?;
        write_atomic(&curves.join(name), &bytes)?;
    }
    let means = csv_bytes(|w| {
        w.write_record([
            "step",
            "samples",
            "grad_j_sq",
            "grad_j_sq_se",
            "critic_err_sq",
            "critic_err_sq_se",
            "eta_err_sq",
            "eta_err_sq_se",
            "j_value",
            "j_value_se",
        ])?;
        for i in 0..ensemble.steps.len() {
            w.serialize((
                ensemble.steps[i],
                ensemble.samples[i],
                ensemble.grad_j_sq.mean[i],
                ensemble.grad_j_sq.std_err[i],
                ensemble.critic_err_sq.mean[i],
                ensemble.critic_err_sq.std_err[i],
                ensemble.eta_err_sq.mean[i],
                ensemble.eta_err_sq.std_err[i],
                ensemble.j_value.mean[i],
                ensemble.j_value.std_err[i],
            ))?;
        }
        Ok(())
    })?;
    write_atomic(&curves.join("ensemble_mean.csv"), &means)
}

/// Files written by one mode of [`execute_spec`].
#[derive(Clone, Debug, PartialEq)]
pub struct ModeOutput {
    pub mode: RunMode,
    pub dir: PathBuf,
    pub csv_files: Vec<PathBuf>,
}

/// Runs every seed and mode of `spec` and writes the results.
///
/// Per mode directory: `seed_<index>.csv` per seed, `ensemble.json` (spec,
/// flags, resolved problem, per-run diagnostics, across-seed statistics),
/// `analysis.json`, and plotting curves under `curves/`.
pub fn execute_spec(
    spec: &ExperimentSpec,
    base_dir: &Path,
    flags: &BTreeMap<String, String>,
) -> Result<Vec<ModeOutput>> {
    let problem = Problem::resolve(&spec.run, Some(base_dir))?;
    let seeds = spec.seed_list();
    let out_root = spec.resolved_output(base_dir);
    let base = RunParams::from_config(&spec.run);
    let mut outputs = Vec::new();
    for &mode in spec.mode.run_modes() {
        let (params, decoupled) = match mode {
            RunMode::TwoTimescale => (base, None),
            RunMode::Decoupled => (
                RunParams {
                    total_steps: spec.run.decoupled.sample_budget.unwrap_or(spec.run.total_steps),
                    ..base
                },
                Some(spec.run.decoupled.critic_steps),
            ),
        };
        info!("{}: {} seeds, {} steps", mode.as_str(), seeds.len(), params.total_steps);
        let runs: Vec<RunMetrics> = run_seeds(&problem, &params, &seeds, decoupled)?;
        let dir = out_root.join(mode.as_str());
        let width = seeds.len().saturating_sub(1).to_string().len().max(3);
        let mut csv_files = Vec::with_capacity(runs.len());
        let mut records = Vec::with_capacity(runs.len());
        for (i, run) in runs.iter().enumerate() {
            run.validate()?;
            let name = format!("seed_{i:0width$}.csv");
            let path = dir.join(&name);
            write_atomic(&path, run.to_csv_string()?.as_bytes())?;
            csv_files.push(path);
            records.push(RunRecord {
                index: i,
                seed: run.seed,
                csv: name,
                samples: run.samples,
                bounds: &run.bounds,
                diagnostics: &run.diagnostics,
            });
        }
        let ensemble = EnsembleMetrics::from_runs(&runs)?;
        let report = analyze(&ensemble, &problem.mixing, &problem.schedule, spec.divide_log)?;
        write_json(
            &dir.join("ensemble.json"),
            &EnsembleDocument {
                spec,
                flags,
                mode: mode.as_str(),
                problem: ProblemSummary::of(&problem),
                runs: records,
                ensemble: &ensemble,
            },
        )?;
        write_json(&dir.join("analysis.json"), &report)?;
        write_curves(&dir, &ensemble, &report)?;
        outputs.push(ModeOutput { mode, dir, csv_files });
    }
    Ok(outputs)
}

fn read_spec(path: &Path) -> Result<ExperimentSpec> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| Error::Parse(format!("cannot read {}: {e}", path.display())))?;
    ExperimentSpec::from_json(&text)
}

fn base_dir_of(path: &Path) -> PathBuf {
    path.parent().map(Path::to_path_buf).unwrap_or_default()
}

fn report_error(err: &Error) -> i32 {
    match err {
        Error::AssumptionViolated { lambda, probe, theta } => {
            error!("negative-definiteness margin violated: lambda = {lambda:.3e} at probe {probe}, theta = {theta:?}");
            eprintln!("error: assumption violated: lambda = {lambda:.3e} <= 0 at theta probe {probe} ({theta:?})");
        }
        other => eprintln!("error: {other}"),
    }
    exit_code(err)
}

fn with_jobs<T: Send>(jobs: Option<usize>, f: impl FnOnce() -> T + Send) -> Result<T> {
    match jobs {
        Some(0) => Err(Error::InvalidArgument("--jobs must be at least 1".into())),
        Some(n) => {
            let pool = rayon::ThreadPoolBuilder::new()
                .num_threads(n)
                .build()
                .map_err(|e| Error::InvalidArgument(e.to_string()))?;
            Ok(pool.install(f))
        }
        None => Ok(f()),
    }
}

/// `run <spec.json> [--jobs N]`.
pub fn cmd_run(spec_path: &Path, jobs: Option<usize>) -> i32 {
    let result = read_spec(spec_path).and_then(|spec| {
        let mut flags = BTreeMap::new();
        flags.insert("spec".to_string(), spec_path.display().to_string());
        if let Some(j) = jobs {
            flags.insert("jobs".to_string(), j.to_string());
        }
        if let Some(out) = std::env::var_os(OUT_ENV) {
            flags.insert(OUT_ENV.to_string(), out.to_string_lossy().into_owned());
        }
        with_jobs(jobs, || execute_spec(&spec, &base_dir_of(spec_path), &flags))?
    });
    match result {
        Ok(outputs) => {
            for o in outputs {
                println!("{}: {} runs written to {}", o.mode.as_str(), o.csv_files.len(), o.dir.display());
            }
            EXIT_OK
        }
        Err(e) => report_error(&e),
    }
}

/// Result document of `paper-experiment`.
#[derive(Clone, Debug, Serialize)]
pub struct AcceptanceDocument {
    pub instance: ReferenceInstance,
    pub options: ReferenceOptions,
    pub problem: ProblemSummary,
    pub seeds: Vec<u64>,
    pub seconds: f64,
    pub criteria: Vec<Criterion>,
    pub analysis: AnalysisReport,
}

/// Runs the reference experiment and returns its acceptance document.
pub fn paper_experiment(opts: &ReferenceOptions) -> Result<AcceptanceDocument> {
    let instance = ReferenceInstance::default();
    let (run, criteria) = acceptance_table(&instance, opts)?;
    Ok(AcceptanceDocument {
        instance,
        options: *opts,
        problem: ProblemSummary::of(&run.problem),
        seeds: run.seeds.clone(),
        seconds: run.seconds,
        criteria,
        analysis: run.analysis,
    })
}

/// `paper-experiment [--t T] [--seeds N] [--sigma x --nu y]`.
///
/// Prints one line per acceptance criterion. The exit code reflects whether
/// the experiment ran, not whether every criterion passed.
pub fn cmd_paper_experiment(opts: &ReferenceOptions, out: Option<&Path>, jobs: Option<usize>) -> i32 {
    let result = with_jobs(jobs, || paper_experiment(opts)).and_then(|r| r);
    let doc = match result {
        Ok(doc) => doc,
        Err(e) => return report_error(&e),
    };
    println!(
        "reference experiment: T = {}, {} seeds, sigma = {}, nu = {} ({:.1}s)",
        opts.total_steps, opts.seeds, opts.sigma, opts.nu, doc.seconds
    );
    for c in &doc.criteria {
        println!("{}", c.line());
    }
    let passed = doc.criteria.iter().filter(|c| c.passed).count();
    println!("{passed}/{} criteria passed", doc.criteria.len());
    let target = std::env::var_os(OUT_ENV).map(PathBuf::from).or_else(|| out.map(Path::to_path_buf));
    if let Some(dir) = target {
        if let Err(e) = write_json(&dir.join("acceptance.json"), &doc) {
            return report_error(&e);
        }
        println!("wrote {}", dir.join("acceptance.json").display());
    }
    EXIT_OK
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PolicyRegularitySummary {
    pub analytic: PolicyRegularity,
    pub audited: PolicyRegularity,
}

/// Everything `audit` measures without training.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AuditReport {
    pub lambda: LambdaProbes,
    pub violating_probes: Vec<usize>,
    pub mixing: MixingProfile,
    pub regularity: PolicyRegularitySummary,
    /// Largest `|omega*(t1) - omega*(t2)| / |t1 - t2|` over nearby probe pairs.
    pub omega_star_lipschitz: Option<f64>,
    pub eps_app_min: Option<f64>,
    pub eps_app_max: Option<f64>,
}

impl AuditReport {
    pub fn violated(&self) -> bool {
        !self.violating_probes.is_empty()
    }
}

/// Runs the pre-training checks on the instance described by `cfg`.
pub fn audit(cfg: &RunConfig, base_dir: Option<&Path>) -> Result<AuditReport> {
    cfg.validate()?;
    let inst = Instance::build(cfg, base_dir)?;
    let lambda = inst.measure_lambdas(&cfg.probes)?;
    let violating_probes: Vec<usize> = lambda
        .lambdas
        .iter()
        .enumerate()
        .filter(|(_, &l)| l.is_nan() || l <= crate::oracle::LAMBDA_TOL)
        .map(|(i, _)| i)
        .collect();
    let mixing = fit_mixing_envelope(&inst.kernel0, &inst.mu0, DEFAULT_HORIZON)?;
    let step = 1e-3;
    let pairs: Vec<(Vec<f64>, Vec<f64>)> = lambda
        .thetas
        .iter()
        .enumerate()
        .map(|(i, t)| {
            let mut u = t.clone();
            u[i % t.len()] += step;
            (t.clone(), u)
        })
        .collect();
    let regularity = PolicyRegularitySummary {
        analytic: inst.policy.analytic_regularity(),
        audited: inst.policy.audit_regularity(&lambda.thetas, &pairs)?,
    };
    let (omega_star_lipschitz, eps_app_min, eps_app_max) = if violating_probes.is_empty() {
        let lip = lipschitz_probe_omega_star(&inst.mdp, &inst.policy, &inst.features, &pairs)?;
        let mut eps = Vec::with_capacity(lambda.thetas.len());
        for theta in &lambda.thetas {
            let rep = compute_oracle(&inst.mdp, &inst.policy, theta, &inst.features)?;
            eps.extend(rep.eps_app);
        }
        let min = eps.iter().cloned().fold(f64::INFINITY, f64::min);
        let max = eps.iter().cloned().fold(0.0, f64::max);
        (Some(lip), Some(min), Some(max))
    } else {
        (None, None, None)
    };
    Ok(AuditReport { lambda, violating_probes, mixing, regularity, omega_star_lipschitz, eps_app_min, eps_app_max })
}

/// `audit <spec.json>`: accepts an experiment spec or a bare run config.
pub fn cmd_audit(spec_path: &Path) -> i32 {
    let text = match std::fs::read_to_string(spec_path) {
        Ok(t) => t,
        Err(e) => return report_error(&Error::Parse(format!("cannot read {}: {e}", spec_path.display()))),
    };
    let cfg = match ExperimentSpec::from_json(&text) {
        Ok(spec) => spec.run,
        Err(_) => match RunConfig::from_json(&text) {
            Ok(cfg) => cfg,
            Err(e) => return report_error(&Error::Parse(e.to_string())),
        },
    };
    let report = match audit(&cfg, Some(&base_dir_of(spec_path))) {
        Ok(r) => r,
        Err(e) => return report_error(&e),
    };
    let l = &report.lambda;
    println!("lambda over {} probes: min {:.6e}, max {:.6e}", l.lambdas.len(), l.min, l.max);
    println!("mixing profile: m = {:.6}, rho = {:.6}", report.mixing.m, report.mixing.rho);
    let (a, m) = (&report.regularity.analytic, &report.regularity.audited);
    println!("policy regularity (analytic): B = {:.4}, L_l = {:.4}, L = {:.4}", a.b, a.l_l, a.l);
    println!("policy regularity (audited):  B = {:.4}, L_l = {:.4}, L = {:.4}", m.b, m.l_l, m.l);
    match report.omega_star_lipschitz {
        Some(v) => println!("omega* Lipschitz probe: {v:.6}"),
        None => println!("omega* Lipschitz probe: undefined (margin violated)"),
    }
    if let (Some(lo), Some(hi)) = (report.eps_app_min, report.eps_app_max) {
        println!("eps_app over probes: min {lo:.6e}, max {hi:.6e}");
    }
    if report.violated() {
        let i = report.violating_probes[0];
        eprintln!(
            "error: assumption violated: lambda = {:.3e} <= 0 at theta probe {i} ({:?})",
            l.lambdas[i], l.thetas[i]
        );
        return EXIT_ASSUMPTION;
    }
    EXIT_OK
}

#[derive(Debug, Parser)]
#[command(name = "tsac", version, about = "Two time-scale actor-critic convergence lab")]
pub struct Cli {
    /// Increase log verbosity (-v info, -vv debug).
    #[arg(short, long, action = clap::ArgAction::Count, global = true)]
    pub verbose: u8,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Run every seed of an experiment spec and write CSV/JSON results.
    Run {
        spec: PathBuf,
        /// Worker threads (defaults to all cores).
        #[arg(long)]
        jobs: Option<usize>,
    },
    /// Run the reference experiment and print the acceptance table.
    PaperExperiment {
        #[arg(long, default_value_t = 200_000)]
        t: u64,
        #[arg(long, default_value_t = 20)]
        seeds: usize,
        #[arg(long, default_value_t = 0.6, requires = "nu")]
        sigma: f64,
        #[arg(long, default_value_t = 0.4, requires = "sigma")]
        nu: f64,
        /// Directory for acceptance.json (TSAC_OUT takes precedence).
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long)]
        jobs: Option<usize>,
    },
    /// Check the assumptions of a spec without training.
    Audit { spec: PathBuf },
}

/// Parses `args` (including the program name) and runs the command.
pub fn run_cli<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { EXIT_PARSE } else { EXIT_OK };
        }
    };
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    let _ = env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).try_init();
    match cli.command {
        Command::Run { spec, jobs } => cmd_run(&spec, jobs),
        Command::PaperExperiment { t, seeds, sigma, nu, out, jobs } => {
            if seeds == 0 || t == 0 {
                eprintln!("error: --t and --seeds must be positive");
                return EXIT_PARSE;
            }
            cmd_paper_experiment(&ReferenceOptions { total_steps: t, seeds, sigma, nu }, out.as_deref(), jobs)
        }
        Command::Audit { spec } => cmd_audit(&spec),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const SPEC: &str = r#"{
        "name": "smoke",
        "run": {
            "mdp": {"generate": {"n_states": 2, "n_actions": 2, "smoothing": 0.2, "seed": 1}},
            "features": {"kind": "orthogonalized_random", "d": 1, "seed": 2},
            "policy": {"kind": "gaussian", "d_theta": 2, "seed": 3},
            "total_steps": 100
        },
        "n_seeds": 1,
        "output_dir": "out"
    }"#;

    #[test]
    fn parses_spec_and_derives_seeds() {
        let spec = ExperimentSpec::from_json(SPEC).unwrap();
        assert_eq!(spec.mode, Mode::TwoTimescale);
        assert_eq!(spec.seed_list(), derive_seeds(0, 1));
        let explicit = SPEC.replace(r#""n_seeds": 1"#, r#""seeds": [5, 6]"#);
        assert_eq!(ExperimentSpec::from_json(&explicit).unwrap().seed_list(), vec![5, 6]);
    }

    #[test]
    fn rejects_bad_specs() {
        let empty = SPEC.replace(r#""n_seeds": 1"#, r#""n_seeds": 0"#);
        assert_eq!(exit_code(&ExperimentSpec::from_json(&empty).unwrap_err()), EXIT_PARSE);
        let bad_mode = SPEC.replace(r#""n_seeds": 1"#, r#""mode": "sideways""#);
        assert_eq!(exit_code(&ExperimentSpec::from_json(&bad_mode).unwrap_err()), EXIT_PARSE);
        assert!(ExperimentSpec::from_json("{").is_err());
    }

    #[test]
    fn exit_codes_are_distinct() {
        let v = Error::AssumptionViolated { lambda: 0.0, probe: 0, theta: vec![] };
        assert_eq!(exit_code(&v), EXIT_ASSUMPTION);
        assert_eq!(exit_code(&Error::NonFiniteIterate { step: 1, what: "eta" }), EXIT_RUNTIME);
        assert_eq!(exit_code(&Error::Parse("x".into())), EXIT_PARSE);
    }

    #[test]
    fn atomic_write_replaces_contents() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("a/b.txt");
        write_atomic(&p, b"one").unwrap();
        write_atomic(&p, b"two").unwrap();
        assert_eq!(std::fs::read(&p).unwrap(), b"two");
        assert_eq!(std::fs::read_dir(p.parent().unwrap()).unwrap().count(), 1);
    }

    #[test]
    fn audit_reports_one_hot_violation() {
        let mut cfg = ExperimentSpec::from_json(SPEC).unwrap().run;
        let report = audit(&cfg, None).unwrap();
        assert!(!report.violated());
        assert!(report.omega_star_lipschitz.is_some());
        cfg.features = crate::agent::FeatureSpec::OneHot;
        let report = audit(&cfg, None).unwrap();
        assert!(report.violated());
        assert_eq!(report.violating_probes[0], 0);
    }
}
