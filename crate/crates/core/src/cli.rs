//! Command-line front end: `stabilab <eigen|capacity|asymptotics|threshold|simulate>`.
//!
//! Every command writes its JSON (and CSV tables) under `--out` and prints a
//! one-line summary. Exit codes: 0 success, 1 usage error, 2 numerical
//! failure.

use std::ffi::OsString;
use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;

use crate::asymptotics::{
    expansion_report, lattice_aligned, remainder_study, resolving_resolution, scheduled_resolution, write_csv,
    CapacityMode, ExpansionReport,
};
use crate::capacity::{ball_capacity_asymptotic, capacity};
use crate::domain::{build_grid, DomainSpec};
use crate::eigen::{first_eigenpair, richardson, DEFAULT_MAX_ITER, DEFAULT_TOL};
use crate::error::{Error, Result};
use crate::noise::{NoiseModel, NoiseSpec};
use crate::operator::assemble;
use crate::spde::{write_path_csv, EnsembleSummary, InitialData, Scheme, Simulator, SpdeConfig};
use crate::stability::{stability_report, StabilityInputs, StabilityReport};

#[derive(Debug, Parser)]
#[command(name = "stabilab", version, about = "Noise stabilization of reaction-diffusion equations on perforated domains")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// First Dirichlet eigenvalue, raw and Richardson-extrapolated.
    Eigen(EigenArgs),
    /// Capacity of the holes relative to the outer domain.
    Capacity(CapacityArgs),
    /// Eigenvalue shift against the capacity expansion, optionally over a
    /// list of hole sizes.
    Asymptotics(AsymptoticsArgs),
    /// Stabilization margin, critical hole size and predicted exponent.
    Threshold(ThresholdArgs),
    /// Ensemble of stochastic trajectories and their Lyapunov exponents.
    Simulate(SimulateArgs),
}

#[derive(Debug, Args)]
pub struct Common {
    /// Domain JSON file.
    #[arg(long)]
    pub domain: PathBuf,
    /// Output directory.
    #[arg(long, default_value = "stabilab-out")]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct EigenArgs {
    #[command(flatten)]
    pub common: Common,
    /// Lattice nodes per unit length.
    #[arg(long, default_value_t = 128)]
    pub resolution: usize,
}

#[derive(Debug, Args)]
pub struct CapacityArgs {
    #[command(flatten)]
    pub common: Common,
    #[arg(long, default_value_t = 128)]
    pub resolution: usize,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum ModeArg {
    Computed,
    Lemma1,
}

#[derive(Debug, Args)]
pub struct AsymptoticsArgs {
    #[command(flatten)]
    pub common: Common,
    /// Strictly decreasing hole sizes applied to every hole of the domain,
    /// e.g. `0.2,0.1,0.05`. Without it the domain is used as given.
    #[arg(long, value_delimiter = ',')]
    pub eps: Vec<f64>,
    /// Minimum fine resolution; raised per ε so that `h ≤ ε/8`.
    #[arg(long, default_value_t = 64)]
    pub resolution: usize,
    #[arg(long, value_enum, default_value_t = ModeArg::Computed)]
    pub mode: ModeArg,
}

#[derive(Debug, Args)]
pub struct ThresholdArgs {
    #[command(flatten)]
    pub common: Common,
    #[arg(long)]
    pub beta: f64,
    /// `zero`, `linear:alpha=A`, `rational` or `rational:gamma0=G,rho0=R`.
    #[arg(long)]
    pub noise: NoiseModel,
    /// Minimum fine resolution; raised so that the half resolution resolves
    /// every hole.
    #[arg(long, default_value_t = 128)]
    pub resolution: usize,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum SchemeArg {
    SplitExponential,
    SemiImplicitEuler,
}

#[derive(Debug, Args)]
pub struct SimulateArgs {
    #[command(flatten)]
    pub common: Common,
    #[arg(long)]
    pub beta: f64,
    /// `zero`, `linear:alpha=A`, `rational` or `rational:gamma0=G,rho0=R`.
    #[arg(long)]
    pub noise: NoiseModel,
    /// Nodes per unit length; by default the smallest multiple of 16 (at
    /// least 64) with `h < ε/4`.
    #[arg(long)]
    pub resolution: Option<usize>,
    #[arg(long, default_value_t = 0.005)]
    pub dt: f64,
    /// Time horizon.
    #[arg(long = "T", default_value_t = 10.0)]
    pub horizon: f64,
    /// Start of the exponent window [default: T/5].
    #[arg(long)]
    pub burn_in: Option<f64>,
    #[arg(long, default_value_t = 16)]
    pub paths: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, value_enum, default_value_t = SchemeArg::SplitExponential)]
    pub scheme: SchemeArg,
    /// Start from random nodal values with this L² norm instead of φ₁.
    #[arg(long)]
    pub random_init: Option<f64>,
    /// Amplitude of the φ₁ initial state.
    #[arg(long, default_value_t = 1.0)]
    pub amplitude: f64,
    /// Sampling stride in steps [default: about 1000 samples per path].
    #[arg(long)]
    pub record_every: Option<usize>,
    /// Worker threads [default: all cores]. Results do not depend on it.
    #[arg(long)]
    pub threads: Option<usize>,
    /// Skip the per-path CSV files.
    #[arg(long)]
    pub no_paths: bool,
}

/// Parses `argv` (program name first), runs the command and returns the
/// process exit code.
pub fn run<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 1 } else { 0 };
        }
    };
    match execute(&cli.command) {
        Ok(line) => {
            println!("{line}");
            0
        }
        Err(e) => {
            eprintln!("error: {e}");
            exit_code(&e)
        }
    }
}

pub fn exit_code(e: &Error) -> i32 {
    if e.is_numerical() {
        2
    } else {
        1
    }
}

/// Runs a parsed command and returns the summary line.
pub fn execute(command: &Command) -> Result<String> {
    match command {
        Command::Eigen(a) => eigen_cmd(a),
        Command::Capacity(a) => capacity_cmd(a),
        Command::Asymptotics(a) => asymptotics_cmd(a),
        Command::Threshold(a) => threshold_cmd(a),
        Command::Simulate(a) => simulate_cmd(a),
    }
}

fn load_domain(path: &Path) -> Result<DomainSpec> {
    let text = fs::read_to_string(path)
        .map_err(|e| Error::Usage(format!("cannot read domain file {}: {e}", path.display())))?;
    DomainSpec::from_json(&text)
}

fn write_json<T: Serialize>(dir: &Path, name: &str, value: &T) -> Result<PathBuf> {
    fs::create_dir_all(dir)?;
    let path = dir.join(name);
    let mut text = serde_json::to_string_pretty(value).map_err(|e| Error::Io(e.to_string()))?;
    text.push('\n');
    fs::write(&path, text)?;
    Ok(path)
}

#[derive(Debug, Serialize)]
pub struct EigenOutput {
    pub resolution: usize,
    pub spacing: f64,
    pub nodes: usize,
    pub lambda1: f64,
    /// Extrapolated against half the resolution, when that still resolves
    /// the holes.
    pub lambda1_extrapolated: Option<f64>,
    pub richardson_order: Option<u32>,
    pub residual: f64,
    pub iterations: usize,
}

fn eigen_cmd(a: &EigenArgs) -> Result<String> {
    let spec = load_domain(&a.common.domain)?;
    let lap = assemble(build_grid(&spec, a.resolution)?);
    let fine = first_eigenpair(&lap, DEFAULT_TOL, DEFAULT_MAX_ITER)?;
    let nodes = lap.len();
    drop(lap);
    let half = a.resolution / 2;
    let coarse = if a.resolution % 2 == 0 {
        build_grid(&spec, half).ok()
    } else {
        None
    };
    let (extrapolated, order) = match coarse {
        Some(grid) => {
            let lc = first_eigenpair(&assemble(grid), DEFAULT_TOL, DEFAULT_MAX_ITER)?.lambda1;
            let order = if spec.holes.is_empty() && lattice_aligned(&spec, half) { 2 } else { 1 };
            (Some(richardson(lc, fine.lambda1, order)), Some(order))
        }
        None => (None, None),
    };
    let out = EigenOutput {
        resolution: a.resolution,
        spacing: 1.0 / a.resolution as f64,
        nodes,
        lambda1: fine.lambda1,
        lambda1_extrapolated: extrapolated,
        richardson_order: order,
        residual: fine.residual,
        iterations: fine.iterations,
    };
    let path = write_json(&a.common.out, "eigen.json", &out)?;
    Ok(format!(
        "lambda1 = {:.6} (extrapolated {}) at resolution {}, {} nodes -> {}",
        out.lambda1,
        fmt_opt(out.lambda1_extrapolated),
        out.resolution,
        out.nodes,
        path.display()
    ))
}

fn fmt_opt(x: Option<f64>) -> String {
    x.map_or_else(|| "n/a".into(), |v| format!("{v:.6}"))
}

#[derive(Debug, Serialize)]
pub struct CapacityOutput {
    pub resolution: usize,
    pub capacity: f64,
    pub capacity_extrapolated: Option<f64>,
    /// Sum of the small-ball leading terms of every hole.
    pub leading_term: f64,
    pub clamped_nodes: usize,
    pub iterations: usize,
}

fn capacity_cmd(a: &CapacityArgs) -> Result<String> {
    let spec = load_domain(&a.common.domain)?;
    if spec.holes.is_empty() {
        return Err(Error::Usage("capacity needs a domain with at least one hole".into()));
    }
    let fine = capacity(&spec, a.resolution)?;
    let coarse = if a.resolution % 2 == 0 {
        match capacity(&spec, a.resolution / 2) {
            Ok(c) => Some(c.value),
            Err(Error::UnresolvedHole { .. } | Error::ResolutionTooLow(_)) => None,
            Err(e) => return Err(e),
        }
    } else {
        None
    };
    let leading_term = spec
        .holes
        .iter()
        .map(|h| ball_capacity_asymptotic(h.eps, spec.dimension))
        .sum::<Result<f64>>()?;
    let out = CapacityOutput {
        resolution: a.resolution,
        capacity: fine.value,
        capacity_extrapolated: coarse.map(|c| richardson(c, fine.value, 1)),
        leading_term,
        clamped_nodes: fine.clamped_nodes,
        iterations: fine.iterations,
    };
    let path = write_json(&a.common.out, "capacity.json", &out)?;
    Ok(format!(
        "capacity = {:.6} (extrapolated {}, leading term {:.6}) -> {}",
        out.capacity,
        fmt_opt(out.capacity_extrapolated),
        out.leading_term,
        path.display()
    ))
}

fn asymptotics_cmd(a: &AsymptoticsArgs) -> Result<String> {
    let spec = load_domain(&a.common.domain)?;
    let mode = match a.mode {
        ModeArg::Computed => CapacityMode::Computed,
        ModeArg::Lemma1 => CapacityMode::Lemma1,
    };
    let reports: Vec<ExpansionReport> = if a.eps.is_empty() {
        let res = match spec.min_hole_size() {
            Some(eps) => scheduled_resolution(eps, a.resolution),
            None => a.resolution.div_ceil(2) * 2,
        };
        vec![expansion_report(&spec, res, mode)?]
    } else {
        if spec.holes.is_empty() {
            return Err(Error::Usage("--eps needs a domain with at least one hole".into()));
        }
        remainder_study(&spec, &a.eps, a.resolution, mode)?
    };
    fs::create_dir_all(&a.common.out)?;
    let csv = a.common.out.join("expansion.csv");
    let mut w = BufWriter::new(File::create(&csv)?);
    write_csv(&reports, &mut w)?;
    w.flush()?;
    write_json(&a.common.out, "expansion.json", &reports)?;
    let ratios: Vec<String> = reports.iter().map(|r| format!("{:.4}", r.remainder_ratio)).collect();
    Ok(format!(
        "{} case(s), remainder ratios [{}] -> {}",
        reports.len(),
        ratios.join(", "),
        csv.display()
    ))
}

#[derive(Debug, Serialize)]
pub struct ThresholdOutput {
    pub margin: f64,
    pub epsilon0: Option<f64>,
    pub predicted_exponent: f64,
    pub verdict: crate::stability::Verdict,
    pub delta: Option<f64>,
    pub lambda1_base: f64,
    pub lambda1_perforated: f64,
    pub phi1_sq: Vec<f64>,
    pub gamma0: f64,
    pub rho0: f64,
    pub resolution: usize,
}

fn threshold_cmd(a: &ThresholdArgs) -> Result<String> {
    let spec = load_domain(&a.common.domain)?;
    if !(a.beta >= 0.0 && a.beta.is_finite()) {
        return Err(Error::Usage(format!("beta = {} must be finite and nonnegative", a.beta)));
    }
    let res = match spec.min_hole_size() {
        Some(eps) => scheduled_resolution(eps, a.resolution),
        None => a.resolution.div_ceil(2) * 2,
    };
    let ex = expansion_report(&spec, res, CapacityMode::Lemma1)?;
    let report: StabilityReport = stability_report(StabilityInputs {
        dimension: spec.dimension,
        beta: a.beta,
        gamma0: a.noise.gamma0,
        rho0: a.noise.rho0,
        lambda1_base: ex.lambda_base,
        lambda1_exponent: ex.lambda_perforated,
        phi1_sq: &ex.phi1_sq,
    })?;
    let out = ThresholdOutput {
        margin: report.margin,
        epsilon0: report.epsilon0,
        predicted_exponent: report.predicted_exponent,
        verdict: report.verdict,
        delta: report.delta,
        lambda1_base: ex.lambda_base,
        lambda1_perforated: ex.lambda_perforated,
        phi1_sq: ex.phi1_sq,
        gamma0: a.noise.gamma0,
        rho0: a.noise.rho0,
        resolution: res,
    };
    let path = write_json(&a.common.out, "threshold.json", &out)?;
    Ok(format!(
        "{} margin = {:.6}, epsilon0 = {}, predicted exponent = {:.6} -> {}",
        serde_json::to_string(&out.verdict).unwrap_or_default().trim_matches('"'),
        out.margin,
        out.epsilon0.map_or_else(|| "n/a".into(), |e| format!("{e:.6e}")),
        out.predicted_exponent,
        path.display()
    ))
}

/// Contents of `summary.json`.
#[derive(Debug, Serialize)]
pub struct SimulateOutput {
    pub domain: DomainSpec,
    pub resolution: usize,
    pub beta: f64,
    pub noise: Option<NoiseSpec>,
    pub gamma0: f64,
    pub rho0: f64,
    pub dt: f64,
    #[serde(rename = "T")]
    pub horizon: f64,
    pub burn_in: f64,
    pub seed: u64,
    pub scheme: Scheme,
    #[serde(flatten)]
    pub summary: EnsembleSummary,
    pub max_ito_residual: f64,
}

/// Default simulation resolution for `spec`.
pub fn simulate_resolution(spec: &DomainSpec) -> usize {
    spec.min_hole_size().map_or(64, resolving_resolution).max(64)
}

fn simulate_cmd(a: &SimulateArgs) -> Result<String> {
    let spec = load_domain(&a.common.domain)?;
    let resolution = a.resolution.unwrap_or_else(|| simulate_resolution(&spec));
    let mut cfg = SpdeConfig::new(a.beta, a.noise.clone(), a.dt, a.horizon);
    cfg.burn_in = a.burn_in;
    cfg.paths = a.paths;
    cfg.seed = a.seed;
    cfg.record_every = a.record_every;
    cfg.scheme = match a.scheme {
        SchemeArg::SplitExponential => Scheme::SplitExponential,
        SchemeArg::SemiImplicitEuler => Scheme::SemiImplicitEuler,
    };
    cfg.initial = match a.random_init {
        Some(l2_norm) => InitialData::Random { l2_norm },
        None => InitialData::Eigenfunction { amplitude: a.amplitude },
    };
    cfg.validate()?;

    let lap = assemble(build_grid(&spec, resolution)?);
    let sim = Simulator::new(&lap, cfg)?;
    let ensemble = match a.threads {
        Some(n) => rayon::ThreadPoolBuilder::new()
            .num_threads(n.max(1))
            .build()
            .map_err(|e| Error::Usage(format!("thread pool: {e}")))?
            .install(|| sim.ensemble())?,
        None => sim.ensemble()?,
    };

    let cfg = sim.config();
    let max_ito_residual = ensemble
        .paths
        .iter()
        .map(|p| crate::spde::ito_decomposition_check(p, 0.0).residual)
        .fold(0.0, f64::max);
    let out = SimulateOutput {
        domain: spec,
        resolution,
        beta: cfg.beta,
        noise: cfg.noise.spec(),
        gamma0: cfg.noise.gamma0,
        rho0: cfg.noise.rho0,
        dt: cfg.dt,
        horizon: cfg.horizon,
        burn_in: cfg.burn_in_time(),
        seed: cfg.seed,
        scheme: cfg.scheme,
        summary: ensemble.summary.clone(),
        max_ito_residual,
    };
    let path = write_json(&a.common.out, "summary.json", &out)?;
    if !a.no_paths {
        let dir = a.common.out.join("paths");
        fs::create_dir_all(&dir)?;
        for p in &ensemble.paths {
            let mut w = BufWriter::new(File::create(dir.join(format!("path_{:04}.csv", p.path)))?);
            write_path_csv(p, &mut w)?;
            w.flush()?;
        }
    }
    let s = &out.summary;
    Ok(format!(
        "{} paths: median lyapunov_hat = {:.4}, decay_bound = {:.4}, decayed {:.3} -> {}",
        s.paths,
        s.median_lyapunov,
        s.decay_bound,
        s.decayed_fraction,
        path.display()
    ))
}
