//! Command-line front end for the estimation library.
//!
//! The binary never computes statistics of its own: every number in its
//! output is the result of a library call on the loaded inputs. What it adds
//! is plumbing: argument parsing, config/data file IO, input hashing into a
//! run manifest, thread-pool sizing, and exit-code mapping (0 success,
//! 2 usage or config error, 3 data error, 4 numerical failure).

use std::collections::BTreeMap;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::Instant;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::de::DeserializeOwned;
use serde::Serialize;
use sha2::{Digest, Sha256};

use itt_bridge::bounds::{
    balke_pearl_bounds, empirical_stratum_probabilities, manski_pepper_bounds, partial_id_itt,
    BoundsResult, OutcomeBounds,
};
use itt_bridge::data::{load_dataset, AnalysisStage, Role, RoleConfig, TrialDataset};
use itt_bridge::estimators::{
    estimate_itt_eif_design, estimate_itt_eif_posthoc, estimate_itt_reg_design,
    estimate_itt_reg_posthoc, reg_estimate_from_columns, EstimateResult, NuisanceSpecs, Prepared,
    SensitivityParameter,
};
use itt_bridge::inference::{bootstrap_ci, BootstrapConfig, CrossfitPlan};
use itt_bridge::nuisance::AssignmentModel;
use itt_bridge::sensitivity::{cc_p_sweep, cc_p_sweep_eif, SensitivityGrid};
use itt_bridge::simulation::{run_monte_carlo, ScenarioConfig, SimulationReport};
use itt_bridge::{Error, ErrorClass, Result};

#[derive(Parser)]
#[command(
    name = "itt-bridge",
    version,
    about = "Estimate the intention-to-treat effect of an active control against placebo \
             by fusing historical placebo-controlled trial data"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Estimate the target-trial effect from a multi-trial dataset.
    Estimate(EstimateArgs),
    /// Nonparametric partial-identification bounds.
    Bounds(BoundsArgs),
    /// Monte Carlo study of the built-in synthetic scenarios.
    Simulate(SimulateArgs),
}

#[derive(Clone, Copy, PartialEq, ValueEnum)]
enum ModeArg {
    /// Target trial still being planned; its rows carry covariates only.
    Design,
    /// Target trial ran as an active-controlled study with observed uptake.
    Posthoc,
}

#[derive(Clone, Copy, PartialEq, ValueEnum)]
enum MethodArg {
    /// Outcome-regression plug-in estimator.
    Reg,
    /// Influence-function estimator with its own variance interval.
    Eif,
}

#[derive(Clone, Copy, PartialEq, ValueEnum)]
enum BoundsMethodArg {
    /// Instrument bounds on the first historical trial's effect.
    BalkePearl,
    /// Worst-case censoring bounds on the treated mean.
    ManskiPepper,
    /// Target effect interval under partially identified stratum effects.
    PartialId,
}

#[derive(Args)]
struct EstimateArgs {
    /// Patient-level CSV with header s,z,d,y,<covariates>.
    #[arg(long)]
    data: PathBuf,
    /// Trial-role mapping file, TOML or JSON.
    #[arg(long)]
    roles: PathBuf,
    /// Analysis stage; overrides the stage in the roles file.
    #[arg(long, value_enum)]
    mode: Option<ModeArg>,
    #[arg(long, value_enum, default_value_t = MethodArg::Eif)]
    method: MethodArg,
    /// Placebo-crossover rates to sweep, comma separated (post-hoc only).
    #[arg(long, value_delimiter = ',')]
    sens: Vec<f64>,
    /// Bootstrap replicates for the regression method's interval.
    #[arg(long)]
    bootstrap: Option<usize>,
    /// Cross-fitting folds for the influence-function method.
    #[arg(long)]
    crossfit: Option<usize>,
    /// Seed for resampling and fold assignment.
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Report path; stdout when omitted.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Worker threads; ITT_BRIDGE_THREADS overrides, default all cores.
    #[arg(long)]
    threads: Option<usize>,
}

#[derive(Args)]
struct BoundsArgs {
    #[arg(long)]
    data: PathBuf,
    #[arg(long)]
    roles: PathBuf,
    #[arg(long, value_enum)]
    method: BoundsMethodArg,
    /// Lower outcome bound for censoring-style bounds.
    #[arg(long, default_value_t = 0.0)]
    k0: f64,
    /// Upper outcome bound for censoring-style bounds.
    #[arg(long, default_value_t = 1.0)]
    k1: f64,
    /// Assumed placebo-crossover rate for the partial-id method.
    #[arg(long, default_value_t = 0.0)]
    sens: f64,
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    threads: Option<usize>,
}

#[derive(Args)]
struct SimulateArgs {
    /// Scenario config file, TOML or JSON.
    #[arg(long)]
    scenario: PathBuf,
    /// Override the scenario's replicate count.
    #[arg(long)]
    reps: Option<usize>,
    /// Override the scenario's seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Directory receiving report.json and replicates.csv.
    #[arg(long)]
    out_dir: PathBuf,
    #[arg(long)]
    threads: Option<usize>,
}

/// Provenance block embedded in every report.
#[derive(Serialize)]
struct RunManifest {
    command: String,
    config_path: String,
    /// SHA-256 of every input file, keyed by path as given.
    inputs: BTreeMap<String, String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    seed: Option<u64>,
    library_version: String,
    /// The only field expected to differ between identical reruns.
    wall_time_seconds: f64,
}

#[derive(Serialize)]
struct EstimateReport {
    manifest: RunManifest,
    estimate: EstimateResult,
    #[serde(skip_serializing_if = "Option::is_none")]
    sensitivity: Option<SensitivityGrid>,
}

#[derive(Serialize)]
struct BoundsReport {
    manifest: RunManifest,
    bounds: BoundsResult,
}

#[derive(Serialize)]
struct SimulateReport {
    manifest: RunManifest,
    report: SimulationReport,
}

fn main() {
    let cli = Cli::parse();
    if let Err(e) = run(cli) {
        let payload = serde_json::json!({
            "error": {
                "code": e.code(),
                "class": class_name(e.class()),
                "message": e.to_string(),
            }
        });
        eprintln!("{payload}");
        std::process::exit(match e.class() {
            ErrorClass::Config => 2,
            ErrorClass::Data => 3,
            ErrorClass::Numerical => 4,
        });
    }
}

fn class_name(class: ErrorClass) -> &'static str {
    match class {
        ErrorClass::Config => "config",
        ErrorClass::Data => "data",
        ErrorClass::Numerical => "numerical",
    }
}

fn run(cli: Cli) -> Result<()> {
    let started = Instant::now();
    match cli.command {
        Command::Estimate(args) => cmd_estimate(args, started),
        Command::Bounds(args) => cmd_bounds(args, started),
        Command::Simulate(args) => cmd_simulate(args, started),
    }
}

/// The env var wins over the flag; absent both, rayon keeps its own default
/// of one worker per core.
fn configure_threads(flag: Option<usize>) -> Result<()> {
    let n = match std::env::var("ITT_BRIDGE_THREADS") {
        Ok(raw) => Some(raw.parse::<usize>().map_err(|_| {
            Error::InvalidConfig(format!(
                "ITT_BRIDGE_THREADS must be a positive integer, got '{raw}'"
            ))
        })?),
        Err(_) => flag,
    };
    let Some(n) = n else { return Ok(()) };
    if n == 0 {
        return Err(Error::InvalidConfig("thread count must be positive".into()));
    }
    rayon::ThreadPoolBuilder::new()
        .num_threads(n)
        .build_global()
        .map_err(|e| Error::InvalidConfig(e.to_string()))
}

fn sha256_hex(path: &Path) -> Result<String> {
    let bytes = std::fs::read(path).map_err(|source| Error::Io {
        path: path.display().to_string(),
        source,
    })?;
    let digest = Sha256::digest(&bytes);
    Ok(digest.iter().map(|b| format!("{b:02x}")).collect())
}

/// Parse a TOML or JSON config file, chosen by extension.
fn parse_config<T: DeserializeOwned>(path: &Path) -> Result<T> {
    let text = std::fs::read_to_string(path).map_err(|source| Error::Io {
        path: path.display().to_string(),
        source,
    })?;
    if path.extension().and_then(|e| e.to_str()) == Some("json") {
        serde_json::from_str(&text).map_err(Error::Json)
    } else {
        toml::from_str(&text).map_err(|e| {
            Error::InvalidConfig(format!("{}: {e}", path.display()))
        })
    }
}

fn manifest(
    command: &str,
    config_path: &Path,
    input_paths: &[&Path],
    seed: Option<u64>,
    started: Instant,
) -> Result<RunManifest> {
    let mut inputs = BTreeMap::new();
    for path in input_paths {
        inputs.insert(path.display().to_string(), sha256_hex(path)?);
    }
    Ok(RunManifest {
        command: command.to_string(),
        config_path: config_path.display().to_string(),
        inputs,
        seed,
        library_version: itt_bridge::VERSION.to_string(),
        wall_time_seconds: started.elapsed().as_secs_f64(),
    })
}

fn write_report<T: Serialize>(out: Option<&Path>, report: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(report).map_err(Error::Json)?;
    text.push('\n');
    match out {
        Some(path) => std::fs::write(path, text).map_err(|source| Error::Io {
            path: path.display().to_string(),
            source,
        }),
        None => std::io::stdout()
            .write_all(text.as_bytes())
            .map_err(|source| Error::Io {
                path: "<stdout>".into(),
                source,
            }),
    }
}

fn load_with_mode(data: &Path, roles: &Path, mode: Option<ModeArg>) -> Result<TrialDataset> {
    let mut schema: RoleConfig = parse_config(roles)?;
    match mode {
        Some(ModeArg::Design) => schema.stage = AnalysisStage::Design,
        Some(ModeArg::Posthoc) => schema.stage = AnalysisStage::Posthoc,
        None => {}
    }
    load_dataset(data, &schema)
}

fn cmd_estimate(args: EstimateArgs, started: Instant) -> Result<()> {
    configure_threads(args.threads)?;
    if args.bootstrap.is_some() && args.method == MethodArg::Eif {
        return Err(Error::InvalidConfig(
            "the influence-function estimator carries its own variance interval; \
             --bootstrap applies to --method reg"
                .into(),
        ));
    }
    if args.crossfit.is_some() && args.method == MethodArg::Reg {
        return Err(Error::InvalidConfig(
            "--crossfit applies to --method eif".into(),
        ));
    }
    let ds = load_with_mode(&args.data, &args.roles, args.mode)?;
    let posthoc = ds.roles().stage == AnalysisStage::Posthoc;
    if !args.sens.is_empty() && !posthoc {
        return Err(Error::InvalidConfig(
            "--sens sweeps the post-hoc crossover rate; run with --mode posthoc".into(),
        ));
    }
    let specs = NuisanceSpecs::logit_linear();
    let assignment = AssignmentModel::known_half(&ds);
    let plan = match args.crossfit {
        Some(k) => CrossfitPlan::new(k, args.seed)?,
        None => CrossfitPlan::none(),
    };
    let no_crossover = SensitivityParameter::zero();

    let estimate = match (args.method, posthoc) {
        (MethodArg::Reg, false) => {
            let base = estimate_itt_reg_design(&ds, &specs)?;
            match args.bootstrap {
                Some(b) => reg_design_bootstrap(&ds, &specs, base, b, args.seed)?,
                None => base,
            }
        }
        (MethodArg::Reg, true) => {
            let base = estimate_itt_reg_posthoc(&ds, &specs, &no_crossover)?;
            match args.bootstrap {
                Some(b) => reg_posthoc_bootstrap(&ds, &specs, base, b, args.seed)?,
                None => base,
            }
        }
        (MethodArg::Eif, false) => estimate_itt_eif_design(&ds, &specs, &assignment, &plan)?,
        (MethodArg::Eif, true) => {
            estimate_itt_eif_posthoc(&ds, &specs, &no_crossover, &assignment, &plan)?
        }
    };

    let sensitivity = if args.sens.is_empty() {
        None
    } else if args.method == MethodArg::Reg {
        Some(cc_p_sweep(&ds, &specs, &args.sens)?)
    } else {
        Some(cc_p_sweep_eif(&ds, &specs, &args.sens, &assignment, &plan)?)
    };

    let report = EstimateReport {
        manifest: manifest(
            "estimate",
            &args.roles,
            &[&args.data, &args.roles],
            Some(args.seed),
            started,
        )?,
        estimate,
        sensitivity,
    };
    write_report(args.out.as_deref(), &report)
}

/// Percentile bootstrap around the design-stage regression estimate,
/// refitting the nuisance models on every resample (warm-started at the
/// full-sample coefficients).
fn reg_design_bootstrap(
    ds: &TrialDataset,
    specs: &NuisanceSpecs,
    base: EstimateResult,
    replicates: usize,
    seed: u64,
) -> Result<EstimateResult> {
    let prepared = Prepared::new(ds, specs)?;
    let warm = prepared.fit_design(None, None, false)?;
    let cfg = BootstrapConfig::new(replicates, seed)?;
    bootstrap_ci(ds, &cfg, &base, |rows| {
        let fits = prepared.fit_design(Some(rows), Some(&warm), false)?;
        let cols = prepared.design_columns(&fits, None)?;
        Ok(reg_estimate_from_columns(ds, &cols, Some(rows))?.point)
    })
}

/// As [`reg_design_bootstrap`] for the post-hoc no-crossover estimate.
fn reg_posthoc_bootstrap(
    ds: &TrialDataset,
    specs: &NuisanceSpecs,
    base: EstimateResult,
    replicates: usize,
    seed: u64,
) -> Result<EstimateResult> {
    let prepared = Prepared::new(ds, specs)?;
    let warm = prepared.fit_posthoc(None, None, false)?;
    let cfg = BootstrapConfig::new(replicates, seed)?;
    let sens = SensitivityParameter::zero();
    bootstrap_ci(ds, &cfg, &base, |rows| {
        let fits = prepared.fit_posthoc(Some(rows), Some(&warm), false)?;
        let cols = prepared.posthoc_columns(&fits, &sens, None)?;
        Ok(reg_estimate_from_columns(ds, &cols, Some(rows))?.point)
    })
}

fn cmd_bounds(args: BoundsArgs, started: Instant) -> Result<()> {
    configure_threads(args.threads)?;
    let ds = load_with_mode(&args.data, &args.roles, None)?;
    let bounds = match args.method {
        BoundsMethodArg::BalkePearl => {
            let label = ds.roles().label_of(Role::Historical1).to_string();
            let rows = ds.partition().rows(Role::Historical1).to_vec();
            let p = empirical_stratum_probabilities(&ds, &label, &rows)?;
            balke_pearl_bounds(p)?
        }
        BoundsMethodArg::ManskiPepper => {
            let k = OutcomeBounds::new(args.k0, args.k1)?;
            manski_pepper_inputs(&ds, k)?
        }
        BoundsMethodArg::PartialId => {
            let sens = SensitivityParameter::constant(args.sens)?;
            partial_id_itt(&ds, &NuisanceSpecs::logit_linear(), &sens)?
        }
    };
    let report = BoundsReport {
        manifest: manifest(
            "bounds",
            &args.roles,
            &[&args.data, &args.roles],
            None,
            started,
        )?,
        bounds,
    };
    write_report(args.out.as_deref(), &report)
}

/// Empirical censoring-bound inputs from the first historical trial: the
/// assignment split, per-arm uptake rates, and the treated-cell outcome
/// means (the cell mean is irrelevant and pinned to `k0` in an arm with no
/// takers).
fn manski_pepper_inputs(ds: &TrialDataset, k: OutcomeBounds) -> Result<BoundsResult> {
    let rows = ds.partition().rows(Role::Historical1);
    let mut n_z = [0.0f64; 2];
    let mut n_taker = [0.0f64; 2];
    let mut y_taker = [0.0f64; 2];
    for &i in rows {
        let (Some(z), Some(d), Some(y)) = (ds.z(i), ds.d(i), ds.y(i)) else {
            return Err(Error::MissingRequiredColumn {
                column: "z, d, y".into(),
                trial: ds.trial_label(i).into(),
                role: Role::Historical1.name().into(),
            });
        };
        let z = z as usize;
        n_z[z] += 1.0;
        if d == 1 {
            n_taker[z] += 1.0;
            y_taker[z] += f64::from(y);
        }
    }
    let total = n_z[0] + n_z[1];
    if n_z[0] == 0.0 || n_z[1] == 0.0 {
        return Err(Error::EmptyRole("historical1 assignment arm".into()));
    }
    let pi_z = [n_z[0] / total, n_z[1] / total];
    let p_d_given_z = [n_taker[0] / n_z[0], n_taker[1] / n_z[1]];
    let cell_means = [
        if n_taker[0] > 0.0 { y_taker[0] / n_taker[0] } else { k.k0 },
        if n_taker[1] > 0.0 { y_taker[1] / n_taker[1] } else { k.k0 },
    ];
    manski_pepper_bounds(cell_means, p_d_given_z, pi_z, k, 1)
}

fn cmd_simulate(args: SimulateArgs, started: Instant) -> Result<()> {
    configure_threads(args.threads)?;
    let mut cfg: ScenarioConfig = parse_config(&args.scenario)?;
    if let Some(reps) = args.reps {
        cfg.replicates = reps;
    }
    if let Some(seed) = args.seed {
        cfg.seed = seed;
    }
    let report = run_monte_carlo(&cfg)?;
    std::fs::create_dir_all(&args.out_dir).map_err(|source| Error::Io {
        path: args.out_dir.display().to_string(),
        source,
    })?;
    let csv = report.replicates_csv()?;
    let csv_path = args.out_dir.join("replicates.csv");
    std::fs::write(&csv_path, csv).map_err(|source| Error::Io {
        path: csv_path.display().to_string(),
        source,
    })?;
    let wrapped = SimulateReport {
        manifest: manifest(
            "simulate",
            &args.scenario,
            &[&args.scenario],
            Some(cfg.seed),
            started,
        )?,
        report,
    };
    write_report(Some(&args.out_dir.join("report.json")), &wrapped)
}
