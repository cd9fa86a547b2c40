//! Command-line front end.
//!
//! Every command computes all of its outputs in memory first and only then
//! writes them, together with `manifest.json`, into the output directory. A
//! failing command therefore leaves no files behind.

use std::collections::BTreeMap;
use std::ffi::OsString;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use serde::Serialize;

use crate::config::Config;
use crate::fairness::{maxmin_fair, solve_fair, FairAllocation, FairnessError, FairnessProblem};
use crate::format::g12;
use crate::logconv::{
    midpoint_witness, verify_segment, Branch, LogConvError, WitnessRow, WITNESS_CSV_HEADER,
    WITNESS_TOL,
};
use crate::model::{AttemptVector, ModelError, WlanParams};
use crate::rateregion::{
    convexity_probe, figure_files, frontier_mask, nonconvexity_certificate, region_csv,
    sample_region, GridSpec, Normalization, RegionError, Spacing,
};
use crate::simulate::{compare_replicas, SimConfig, SimError};

pub const EXIT_OK: i32 = 0;
pub const EXIT_USAGE: i32 = 1;
pub const EXIT_NUMERICAL: i32 = 2;
pub const MANIFEST_FILE: &str = "manifest.json";

#[derive(Debug, Parser)]
#[command(
    name = "rateregion",
    version,
    about = "WLAN rate regions, log-convexity witnesses and fair allocations"
)]
pub struct Cli {
    /// Parameter file with `key = value` lines.
    #[arg(long, global = true, value_name = "PATH")]
    pub config: Option<PathBuf>,
    #[arg(
        long,
        global = true,
        value_name = "PATH",
        env = "RATEREGION_OUT",
        default_value = "."
    )]
    pub out_dir: PathBuf,
    /// Worker threads. Results do not depend on this.
    #[arg(long, global = true, default_value_t = 1)]
    pub threads: usize,
    #[arg(long, global = true, default_value_t = 0)]
    pub seed: u64,
    #[command(flatten)]
    pub params: ParamArgs,
    #[command(subcommand)]
    pub command: Command,
}

/// Overrides for keys of the parameter file.
#[derive(Debug, Args, Serialize, Default)]
pub struct ParamArgs {
    #[arg(long, global = true)]
    pub n: Option<usize>,
    #[arg(long, global = true)]
    pub sigma: Option<f64>,
    #[arg(long = "t-s", global = true)]
    pub t_s: Option<f64>,
    #[arg(long = "t-c", global = true)]
    pub t_c: Option<f64>,
    /// Comma-separated payloads in bits.
    #[arg(long, global = true)]
    pub payloads: Option<String>,
    /// Comma-separated attempt-probability caps.
    #[arg(long = "tau-bar", global = true)]
    pub tau_bar: Option<String>,
}

#[derive(Debug, Subcommand, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Command {
    /// Sample the rate region and mark its Pareto frontier.
    Region(RegionArgs),
    /// Build the witness for one log-domain combination of two points.
    Witness(WitnessArgs),
    /// Check witnesses along a segment, or at random pairs of grid points.
    Verify(VerifyArgs),
    /// Utility-fair or max-min fair allocation.
    Fair(FairArgs),
    /// Compare slot-level simulation against the analytic model.
    Simulate(SimulateArgs),
}

#[derive(Debug, Args, Serialize)]
pub struct RegionArgs {
    /// Points per axis (default 201 for up to two stations, 41 otherwise).
    #[arg(long)]
    pub grid: Option<usize>,
    #[arg(long, default_value = "phy-rate", value_parser = ["raw", "phy-rate"])]
    pub normalize: String,
    #[arg(long, default_value = "geometric", value_parser = ["geometric", "uniform"])]
    pub spacing: String,
}

#[derive(Debug, Args, Serialize)]
pub struct WitnessArgs {
    /// First point as comma-separated tau (config key `t1`).
    #[arg(long)]
    pub t1: Option<String>,
    /// Second point (config key `t2`).
    #[arg(long)]
    pub t2: Option<String>,
    /// Weight on the first point.
    #[arg(long, default_value_t = 0.5)]
    pub alpha: f64,
    #[arg(long, default_value = "upper", value_parser = ["upper", "lower"])]
    pub branch: String,
}

#[derive(Debug, Args, Serialize)]
pub struct VerifyArgs {
    #[arg(long)]
    pub t1: Option<String>,
    #[arg(long)]
    pub t2: Option<String>,
    /// Mixing weights along the segment.
    #[arg(long, default_value_t = 101)]
    pub alphas: usize,
    /// Random pairs when no segment is given.
    #[arg(long, default_value_t = 1000)]
    pub trials: usize,
    /// Points per axis of the grid the random pairs come from.
    #[arg(long, default_value_t = 41)]
    pub grid: usize,
    #[arg(long, default_value_t = WITNESS_TOL)]
    pub tol: f64,
}

#[derive(Debug, Args, Serialize)]
pub struct FairArgs {
    /// Fairness exponent (config key `fair_alpha`, default 1).
    #[arg(long)]
    pub alpha: Option<f64>,
    /// Comma-separated weights (config key `weights`).
    #[arg(long)]
    pub weights: Option<String>,
    /// Max-min fairness under the caps instead of a utility.
    #[arg(long)]
    pub maxmin: bool,
}

#[derive(Debug, Args, Serialize)]
pub struct SimulateArgs {
    /// Comma-separated attempt probabilities (config key `tau`).
    #[arg(long)]
    pub tau: Option<String>,
    #[arg(long, default_value_t = 1_000_000)]
    pub slots: u64,
    #[arg(long, default_value_t = crate::simulate::DEFAULT_BATCHES)]
    pub batches: usize,
    /// Independent replicas, run in parallel and pooled.
    #[arg(long, default_value_t = 1)]
    pub replicas: usize,
}

#[derive(Debug)]
pub enum CliError {
    Usage(String),
    Numerical(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) => EXIT_USAGE,
            CliError::Numerical(_) => EXIT_NUMERICAL,
        }
    }

    pub fn message(&self) -> &str {
        match self {
            CliError::Usage(m) | CliError::Numerical(m) => m,
        }
    }
}

fn usage(e: impl std::fmt::Display) -> CliError {
    CliError::Usage(e.to_string())
}

impl From<ModelError> for CliError {
    fn from(e: ModelError) -> Self {
        usage(e)
    }
}

impl From<RegionError> for CliError {
    fn from(e: RegionError) -> Self {
        match e {
            RegionError::Witness(LogConvError::NonConvergence(_)) => {
                CliError::Numerical(e.to_string())
            }
            other => usage(other),
        }
    }
}

impl From<LogConvError> for CliError {
    fn from(e: LogConvError) -> Self {
        match e {
            LogConvError::NonConvergence(_) => CliError::Numerical(e.to_string()),
            other => usage(other),
        }
    }
}

impl From<FairnessError> for CliError {
    fn from(e: FairnessError) -> Self {
        match e {
            FairnessError::NotConverged { .. } => CliError::Numerical(e.to_string()),
            other => usage(other),
        }
    }
}

impl From<SimError> for CliError {
    fn from(e: SimError) -> Self {
        usage(e)
    }
}

/// Files produced by a command, plus the text printed on success.
#[derive(Debug, Default)]
pub struct Outcome {
    pub files: Vec<(String, String)>,
    pub report: String,
    /// Set when the outputs were written but a check failed.
    pub failure: Option<String>,
}

#[derive(Debug, Serialize)]
struct Manifest<'a> {
    command: &'static str,
    version: &'static str,
    seed: u64,
    parameters: BTreeMap<String, String>,
    options: &'a Command,
    outputs: Vec<String>,
}

impl Command {
    fn name(&self) -> &'static str {
        match self {
            Command::Region(_) => "region",
            Command::Witness(_) => "witness",
            Command::Verify(_) => "verify",
            Command::Fair(_) => "fair",
            Command::Simulate(_) => "simulate",
        }
    }
}

/// Parameter file merged with command-line overrides.
pub fn effective_config(cli: &Cli) -> Result<Config, CliError> {
    let mut cfg = match &cli.config {
        Some(path) => Config::load(path).map_err(usage)?,
        None => Config::default(),
    };
    let p = &cli.params;
    let overrides = [
        ("n", p.n.map(|v| v.to_string())),
        ("sigma", p.sigma.map(|v| v.to_string())),
        ("t_s", p.t_s.map(|v| v.to_string())),
        ("t_c", p.t_c.map(|v| v.to_string())),
        ("payloads", p.payloads.clone()),
        ("tau_bar", p.tau_bar.clone()),
    ];
    for (key, value) in overrides {
        if let Some(v) = value {
            cfg.set(key, v);
        }
    }
    if let Command::Fair(f) = &cli.command {
        if let Some(a) = f.alpha {
            cfg.set("fair_alpha", a.to_string());
        }
        if let Some(w) = &f.weights {
            cfg.set("weights", w.clone());
        }
    }
    Ok(cfg)
}

fn tau_list(flag: &Option<String>, cfg: &Config, key: &str) -> Result<Vec<f64>, CliError> {
    match flag {
        Some(text) => crate::config::parse_f64_list(text).ok_or_else(|| {
            usage(format!(
                "--{key}: cannot parse {text:?} as a comma-separated list of real numbers"
            ))
        }),
        None => cfg
            .get_f64_list(key)
            .map_err(usage)?
            .ok_or_else(|| usage(format!("missing --{key} (or config key `{key}`)"))),
    }
}

fn attempt_vector(tau: Vec<f64>, p: &WlanParams, key: &str) -> Result<AttemptVector, CliError> {
    if tau.len() != p.n() {
        return Err(usage(format!(
            "--{key} has {} entries but n = {}",
            tau.len(),
            p.n()
        )));
    }
    AttemptVector::from_tau(tau).map_err(|e| usage(format!("--{key}: {e}")))
}

fn region(args: &RegionArgs, cfg: &Config) -> Result<Outcome, CliError> {
    let p = WlanParams::from_config(cfg)?;
    let points = args.grid.unwrap_or(if p.n() <= 2 { 201 } else { 41 });
    let grid = GridSpec {
        points_per_axis: points,
        spacing: args.spacing.parse::<Spacing>().map_err(usage)?,
        ..GridSpec::default()
    };
    let norm = args.normalize.parse::<Normalization>().map_err(usage)?;
    let sample = sample_region(&p, &grid, norm)?;
    let mask = frontier_mask(&sample);
    let frontier = mask.iter().filter(|&&m| m).count();
    let mut report = format!("points {}\nfrontier {}\n", sample.len(), frontier);
    if let Some(c) = nonconvexity_certificate(&sample) {
        report += &format!(
            "chord stations {},{} midpoint {} margin {} resolution {} certified {}\n",
            c.stations.0 + 1,
            c.stations.1 + 1,
            c.midpoint
                .iter()
                .map(|&v| g12(v))
                .collect::<Vec<_>>()
                .join(","),
            g12(c.margin),
            g12(c.resolution),
            c.certified
        );
    }
    let files = if p.n() == 2 {
        let fig = figure_files(&sample, &mask)?;
        vec![
            ("region.csv".into(), fig.region_csv),
            ("logregion.csv".into(), fig.logregion_csv),
            ("frontier.csv".into(), fig.frontier_csv),
        ]
    } else {
        vec![("region.csv".into(), region_csv(&sample, &mask))]
    };
    Ok(Outcome {
        files,
        report,
        failure: None,
    })
}

fn witness(args: &WitnessArgs, cfg: &Config) -> Result<Outcome, CliError> {
    let p = WlanParams::from_config(cfg)?;
    let t1 = attempt_vector(tau_list(&args.t1, cfg, "t1")?, &p, "t1")?;
    let t2 = attempt_vector(tau_list(&args.t2, cfg, "t2")?, &p, "t2")?;
    let branch = args.branch.parse::<Branch>().map_err(usage)?;
    let w = midpoint_witness(&t1, &t2, args.alpha, &p, branch)?;
    let row = WitnessRow::from_witness(&w, &p);
    let n = p.n();
    let mut header = format!("{WITNESS_CSV_HEADER},delta");
    for i in 1..=n {
        header += &format!(",tau_star_{i}");
    }
    let mut line = row.to_csv().trim_end().to_string();
    line += &format!(",{}", g12(w.delta));
    for &t in w.t_star.tau() {
        line += &format!(",{}", g12(t));
    }
    let csv = format!("{header}\n{line}\n");
    let tau_star: Vec<String> = w.t_star.tau().iter().map(|&v| g12(v)).collect();
    let report = format!(
        "delta_lower {}\ndelta_star {}\ndelta_upper {}\ndelta {}\ntau_star {}\nresidual {}\nin_box {}\nnear_tangent {}\n",
        g12(w.delta_lower),
        g12(w.delta_star),
        g12(w.delta_upper),
        g12(w.delta),
        tau_star.join(","),
        g12(w.residual),
        row.in_box,
        w.near_tangent
    );
    let failure = (!w.is_accepted())
        .then(|| format!("residual {} exceeds {}", g12(w.residual), g12(WITNESS_TOL)));
    Ok(Outcome {
        files: vec![("witness.csv".into(), csv)],
        report,
        failure,
    })
}

fn verify(args: &VerifyArgs, cfg: &Config, seed: u64) -> Result<Outcome, CliError> {
    let p = WlanParams::from_config(cfg)?;
    let segment =
        args.t1.is_some() || args.t2.is_some() || cfg.contains("t1") || cfg.contains("t2");
    if segment {
        let t1 = attempt_vector(tau_list(&args.t1, cfg, "t1")?, &p, "t1")?;
        let t2 = attempt_vector(tau_list(&args.t2, cfg, "t2")?, &p, "t2")?;
        let rep = verify_segment(&t1, &t2, &p, args.alphas, args.tol)?;
        let report = format!(
            "witnesses {}\nmax_residual {}\nall_in_box {}\n",
            rep.rows.len(),
            g12(rep.max_residual),
            rep.all_in_box
        );
        let failure =
            (!rep.passed() || !rep.all_in_box).then(|| "segment check failed".to_string());
        return Ok(Outcome {
            files: vec![("verify.csv".into(), rep.to_csv())],
            report,
            failure,
        });
    }
    let sample = sample_region(&p, &GridSpec::with_points(args.grid), Normalization::Raw)?;
    let rep = convexity_probe(&sample, &p, args.trials, args.tol, seed)?;
    let (margin, certified) = rep
        .certificate
        .as_ref()
        .map_or((f64::NAN, false), |c| (c.margin, c.certified));
    let csv = format!(
        "trials,max_residual,all_in_box,failures,chord_margin,chord_certified\n{},{},{},{},{},{}\n",
        rep.trials,
        g12(rep.max_residual),
        u8::from(rep.all_in_box),
        rep.failures,
        g12(margin),
        u8::from(certified)
    );
    let report = format!(
        "trials {}\nmax_residual {}\nall_in_box {}\nfailures {}\nchord_margin {}\n",
        rep.trials,
        g12(rep.max_residual),
        rep.all_in_box,
        rep.failures,
        g12(margin)
    );
    let failure = (!rep.passed()).then(|| format!("{} witness checks failed", rep.failures));
    Ok(Outcome {
        files: vec![("verify.csv".into(), csv)],
        report,
        failure,
    })
}

fn fair(args: &FairArgs, cfg: &Config) -> Result<Outcome, CliError> {
    let prob = FairnessProblem::from_config(cfg)?;
    let sol: FairAllocation = if args.maxmin {
        maxmin_fair(&prob.params, prob.params.tau_bar())?
    } else {
        solve_fair(&prob)?
    };
    let tau: Vec<String> = sol.tau_opt.tau().iter().map(|&v| g12(v)).collect();
    let s: Vec<String> = sol.s_opt.s().iter().map(|&v| g12(v)).collect();
    let mut report = format!(
        "tau {}\ns {}\nobjective {}\nkkt_residual {}\niterations {}\n",
        tau.join(","),
        s.join(","),
        g12(sol.objective),
        g12(sol.kkt_residual),
        sol.iterations
    );
    if !sol.effectively_off.is_empty() {
        let off: Vec<String> = sol
            .effectively_off
            .iter()
            .map(|i| (i + 1).to_string())
            .collect();
        report += &format!("effectively_off {}\n", off.join(","));
    }
    Ok(Outcome {
        files: vec![("fair.csv".into(), sol.to_csv())],
        report,
        failure: None,
    })
}

fn simulate(args: &SimulateArgs, cfg: &Config, seed: u64) -> Result<Outcome, CliError> {
    let p = WlanParams::from_config(cfg)?;
    let tau = tau_list(&args.tau, cfg, "tau")?;
    if tau.len() != p.n() {
        return Err(usage(format!(
            "--tau has {} entries but n = {}",
            tau.len(),
            p.n()
        )));
    }
    let t = AttemptVector::from_tau_saturating(&tau).map_err(|e| usage(format!("--tau: {e}")))?;
    let sim_cfg = SimConfig::new(args.slots, seed, args.batches)?;
    let rep = compare_replicas(&p, &t, &sim_cfg, args.replicas)?;
    let report = format!(
        "max_abs_z {}\nmax_rel_err {}\npassed {}\n",
        g12(rep.max_abs_z()),
        g12(rep.max_rel_err()),
        rep.passed()
    );
    let failure =
        (!rep.passed()).then(|| "simulation disagrees with the analytic model".to_string());
    Ok(Outcome {
        files: vec![("simulate.csv".into(), rep.to_csv())],
        report,
        failure,
    })
}

/// Runs a parsed command without touching the filesystem (apart from
/// reading the config) and returns its outputs, manifest included.
pub fn execute(cli: &Cli) -> Result<Outcome, CliError> {
    let cfg = effective_config(cli)?;
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(cli.threads.max(1))
        .build()
        .map_err(usage)?;
    let mut outcome = pool.install(|| match &cli.command {
        Command::Region(a) => region(a, &cfg),
        Command::Witness(a) => witness(a, &cfg),
        Command::Verify(a) => verify(a, &cfg, cli.seed),
        Command::Fair(a) => fair(a, &cfg),
        Command::Simulate(a) => simulate(a, &cfg, cli.seed),
    })?;
    let mut outputs: Vec<String> = outcome.files.iter().map(|(n, _)| n.clone()).collect();
    outputs.push(MANIFEST_FILE.into());
    let manifest = Manifest {
        command: cli.command.name(),
        version: env!("CARGO_PKG_VERSION"),
        seed: cli.seed,
        parameters: cfg
            .keys()
            .map(|k| (k.to_string(), cfg.raw(k).unwrap_or("").to_string()))
            .collect(),
        options: &cli.command,
        outputs,
    };
    let json = serde_json::to_string_pretty(&manifest).map_err(usage)? + "\n";
    outcome.files.push((MANIFEST_FILE.into(), json));
    Ok(outcome)
}

fn write_files(dir: &Path, files: &[(String, String)]) -> Result<(), CliError> {
    std::fs::create_dir_all(dir)
        .map_err(|e| usage(format!("cannot create {}: {e}", dir.display())))?;
    for (name, content) in files {
        let path = dir.join(name);
        std::fs::write(&path, content)
            .map_err(|e| usage(format!("cannot write {}: {e}", path.display())))?;
    }
    Ok(())
}

/// Parses `args`, runs the command and returns the process exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
        }
    };
    let outcome = execute(&cli).and_then(|o| {
        write_files(&cli.out_dir, &o.files)?;
        Ok(o)
    });
    match outcome {
        Ok(o) => {
            print!("{}", o.report);
            match o.failure {
                Some(msg) => {
                    eprintln!("error: {msg}");
                    EXIT_NUMERICAL
                }
                None => EXIT_OK,
            }
        }
        Err(e) => {
            eprintln!("error: {}", e.message());
            e.exit_code()
        }
    }
}
