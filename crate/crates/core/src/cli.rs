//! Command-line front end: reconstruct, sample-grasps, fit-reachability and
//! simulate. Data goes to files and stdout, diagnostics to stderr.

use std::ffi::OsString;
use std::fs;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use thiserror::Error;

use crate::cloud::PointCloud;
use crate::gpdf::{self, GpdfModel, DEFAULT_LENGTHSCALE, DEFAULT_NOISE_VAR};
use crate::grasp::{self, GripperSpec, PipelineConfig};
use crate::rmm::EmConfig;
use crate::robot::{filter_reachable, ReachabilityModel, RobotError, RobotModel};
use crate::se3::Pose;
use crate::sim::{self, compare_controllers, Scenario, ScenarioMetrics, SimError};

pub const EXIT_OK: i32 = 0;
pub const EXIT_INPUT: i32 = 2;
pub const EXIT_FIT: i32 = 3;
pub const EXIT_SCENARIO: i32 = 4;

/// Outcome of one command.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct CommandResult {
    pub exit_code: i32,
    pub artifacts_written: Vec<PathBuf>,
}

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    Input(String),
    #[error("{0}")]
    Fit(String),
    #[error("{0}")]
    Scenario(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Input(_) => EXIT_INPUT,
            CliError::Fit(_) => EXIT_FIT,
            CliError::Scenario(_) => EXIT_SCENARIO,
        }
    }
}

#[derive(Debug, Parser)]
#[command(name = "fdgrasp", version, about = "Shape completion, grasp sampling, reachability and reactive grasping simulation")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Complete a partial cloud through its distance field.
    Reconstruct(ReconstructArgs),
    /// Sample, filter and optionally reachability-check grasps on a cloud.
    SampleGrasps(SampleArgs),
    /// Fit the reachable-pose mixture of a robot.
    FitReachability(ReachArgs),
    /// Run a scenario file and write logs and summaries.
    Simulate(SimulateArgs),
}

#[derive(Debug, Clone, Args)]
pub struct FieldArgs {
    #[arg(long, default_value_t = DEFAULT_LENGTHSCALE)]
    pub lengthscale: f64,
    #[arg(long = "noise-var", default_value_t = DEFAULT_NOISE_VAR)]
    pub noise_var: f64,
    /// Completion grid as NxNxN.
    #[arg(long, default_value = "8x8x8", value_parser = parse_grid)]
    pub grid: [usize; 3],
}

#[derive(Debug, Args)]
pub struct ReconstructArgs {
    /// Input cloud, .ply or .csv.
    pub cloud: PathBuf,
    #[command(flatten)]
    pub field: FieldArgs,
    /// Completed cloud, .ply or .csv.
    #[arg(long, default_value = "completed.ply")]
    pub out: PathBuf,
    /// Optional CSV dump of the refined distance on the completion grid.
    #[arg(long = "sdf-grid")]
    pub sdf_grid: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct SampleArgs {
    pub cloud: PathBuf,
    /// Gripper JSON; a 10 cm jaw when omitted.
    #[arg(long)]
    pub gripper: Option<PathBuf>,
    #[arg(long, default_value_t = 64)]
    pub n: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Reachability model JSON from fit-reachability.
    #[arg(long = "reach-model")]
    pub reach_model: Option<PathBuf>,
    #[command(flatten)]
    pub field: FieldArgs,
    #[arg(long, default_value = "grasps.json")]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct ReachArgs {
    pub robot: PathBuf,
    #[arg(long, default_value_t = 50_000)]
    pub n: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value_t = 0.99)]
    pub quantile: f64,
    /// Candidate component counts, chosen by BIC.
    #[arg(long, default_value = "8,16,32,64", value_delimiter = ',')]
    pub ks: Vec<usize>,
    /// Poses below this height plus 10 cm are discarded.
    #[arg(long = "table-height", default_value_t = 0.0, allow_negative_numbers = true)]
    pub table_height: f64,
    /// EM stops when the log-likelihood gain falls below this fraction.
    #[arg(long = "em-tol", default_value_t = 1e-5)]
    pub em_tol: f64,
    #[arg(long = "em-iters", default_value_t = 100)]
    pub em_iters: usize,
    #[arg(long, default_value = "reach.json")]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct SimulateArgs {
    pub scenario: PathBuf,
    /// Output directory.
    #[arg(long, default_value = "sim_out")]
    pub out: PathBuf,
}

pub fn parse_grid(s: &str) -> Result<[usize; 3], String> {
    let parts: Vec<&str> = s.split(['x', 'X']).collect();
    if parts.len() != 3 {
        return Err(format!("grid must look like NxNxN, got {s:?}"));
    }
    let mut out = [0; 3];
    for (o, p) in out.iter_mut().zip(parts) {
        *o = p.trim().parse().map_err(|_| format!("bad grid count {p:?}"))?;
        if *o < 2 {
            return Err("grid needs at least 2 nodes per axis".into());
        }
    }
    Ok(out)
}

/// Parses `args` (program name first) and runs the command. Help and
/// version requests exit 0, every other parse problem exits 2.
pub fn run<I, T>(args: I) -> CommandResult
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_INPUT } else { EXIT_OK };
            let _ = e.print();
            return CommandResult {
                exit_code: code,
                artifacts_written: Vec::new(),
            };
        }
    };
    limit_threads();
    let mut written = Vec::new();
    let outcome = match &cli.command {
        Command::Reconstruct(a) => cmd_reconstruct(a, &mut written),
        Command::SampleGrasps(a) => cmd_sample_grasps(a, &mut written),
        Command::FitReachability(a) => cmd_fit_reachability(a, &mut written),
        Command::Simulate(a) => cmd_simulate(a, &mut written),
    };
    let exit_code = match outcome {
        Ok(()) => EXIT_OK,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    };
    CommandResult {
        exit_code,
        artifacts_written: written,
    }
}

/// `RG_THREADS` caps the worker pool. Only the first call in a process
/// takes effect.
fn limit_threads() {
    if let Some(n) = std::env::var("RG_THREADS").ok().and_then(|v| v.parse::<usize>().ok()) {
        if n > 0 {
            let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
        }
    }
}

fn read(path: &Path) -> Result<String, CliError> {
    fs::read_to_string(path).map_err(|e| CliError::Input(format!("{}: {e}", path.display())))
}

fn write(path: &Path, text: &str, written: &mut Vec<PathBuf>) -> Result<(), CliError> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|e| CliError::Input(format!("{}: {e}", dir.display())))?;
    }
    fs::write(path, text).map_err(|e| CliError::Input(format!("{}: {e}", path.display())))?;
    written.push(path.to_path_buf());
    Ok(())
}

fn load_cloud(path: &Path) -> Result<PointCloud, CliError> {
    let cloud = PointCloud::load(path).map_err(|e| CliError::Input(e.to_string()))?;
    if cloud.is_empty() {
        return Err(CliError::Input(format!("{}: no points", path.display())));
    }
    Ok(cloud)
}

fn save_cloud(cloud: &PointCloud, path: &Path, written: &mut Vec<PathBuf>) -> Result<(), CliError> {
    let text = match path.extension().and_then(|e| e.to_str()).map(str::to_ascii_lowercase).as_deref() {
        Some("csv") => cloud.to_csv(),
        Some("ply") => cloud.to_ply(),
        _ => return Err(CliError::Input(format!("{}: output must be .ply or .csv", path.display()))),
    };
    write(path, &text, written)
}

pub fn cmd_reconstruct(a: &ReconstructArgs, written: &mut Vec<PathBuf>) -> Result<(), CliError> {
    let cloud = load_cloud(&a.cloud)?;
    let frame = grasp::object_frame(&cloud);
    let local = cloud.transformed(&frame.inverse());
    let model = GpdfModel::fit(&local, a.field.lengthscale, a.field.noise_var).map_err(|e| CliError::Fit(e.to_string()))?;
    let region = gpdf::expanded_region(&local, &Pose::identity(), PipelineConfig::default().expand);
    let completed = gpdf::complete_shape(&model, &region, a.field.grid, f64::INFINITY).transformed(&frame);
    eprintln!("reconstruct: {} input points, {} completed", cloud.len(), completed.len());
    save_cloud(&completed, &a.out, written)?;
    if let Some(path) = &a.sdf_grid {
        let samples: Vec<gpdf::SdfSample> = gpdf::sample_grid(&model, &region, a.field.grid)
            .into_iter()
            .map(|s| gpdf::SdfSample {
                point: frame.transform_point(&s.point),
                ..s
            })
            .collect();
        write(path, &gpdf::sdf_grid_csv(&samples), written)?;
    }
    println!("{}", a.out.display());
    Ok(())
}

pub fn cmd_sample_grasps(a: &SampleArgs, written: &mut Vec<PathBuf>) -> Result<(), CliError> {
    let cloud = load_cloud(&a.cloud)?;
    let gripper = match &a.gripper {
        Some(p) => {
            let spec: GripperSpec = serde_json::from_str(&read(p)?).map_err(|e| CliError::Input(format!("{}: {e}", p.display())))?;
            spec.validate().map_err(|e| CliError::Input(e.to_string()))?;
            spec
        }
        None => GripperSpec::jaw(0.1),
    };
    let reach = match &a.reach_model {
        Some(p) => Some(
            serde_json::from_str::<ReachabilityModel>(&read(p)?)
                .map_err(|e| CliError::Input(format!("{}: {e}", p.display())))?,
        ),
        None => None,
    };
    let cfg = PipelineConfig {
        lengthscale: a.field.lengthscale,
        noise_var: a.field.noise_var,
        grid: a.field.grid,
        n: a.n,
        seed: a.seed,
        gripper,
        ..PipelineConfig::default()
    };
    let set = grasp::run_pipeline(&cloud, &cfg).map_err(|e| CliError::Fit(e.to_string()))?;
    let mut grasps = set.grasps;
    eprintln!("sample-grasps: {} candidates, {} pass collision and force closure", set.candidates, grasps.len());
    if let Some(model) = &reach {
        grasps = filter_reachable(model, &grasps);
        eprintln!("sample-grasps: {} reachable", grasps.len());
    }
    if grasps.is_empty() {
        eprintln!("warning: no grasp survived filtering");
    }
    write(&a.out, &grasp::grasps_to_json(&grasps), written)?;
    println!("{}", grasps.len());
    Ok(())
}

pub fn cmd_fit_reachability(a: &ReachArgs, written: &mut Vec<PathBuf>) -> Result<(), CliError> {
    let robot = RobotModel::load(&a.robot).map_err(|e| CliError::Input(e.to_string()))?;
    if a.n == 0 {
        return Err(CliError::Fit("n must be positive".into()));
    }
    if !(a.quantile > 0.0 && a.quantile < 1.0) {
        return Err(CliError::Input("quantile must lie in (0, 1)".into()));
    }
    let poses = robot.reachability_dataset(a.n, a.table_height, a.seed);
    eprintln!("fit-reachability: {} of {} samples kept", poses.len(), a.n);
    let em = EmConfig {
        tol: a.em_tol,
        max_iter: a.em_iters,
        ..EmConfig::default()
    };
    let model = ReachabilityModel::fit(&poses, &a.ks, a.seed, a.quantile, &em)
        .map_err(|e| CliError::Fit(e.to_string()))?;
    let text = serde_json::to_string_pretty(&model).expect("model serializes");
    write(&a.out, &text, written)?;
    println!("k = {}, log threshold = {}", model.k, model.log_threshold);
    Ok(())
}

fn sim_error(e: SimError) -> CliError {
    match e {
        SimError::Io { .. } | SimError::Parse(_) | SimError::Cloud(_) | SimError::Invalid(_) => CliError::Input(e.to_string()),
        SimError::Robot(RobotError::Io { .. } | RobotError::Parse(_) | RobotError::Invalid(_)) => {
            CliError::Input(e.to_string())
        }
        other => CliError::Scenario(other.to_string()),
    }
}

pub fn cmd_simulate(a: &SimulateArgs, written: &mut Vec<PathBuf>) -> Result<(), CliError> {
    let scenario = Scenario::load(&a.scenario).map_err(sim_error)?;
    let kinds = if scenario.cfg.compare.is_empty() {
        vec![scenario.cfg.controller]
    } else {
        scenario.cfg.compare.clone()
    };
    let mut runs = Vec::new();
    let mut failures = Vec::new();
    for kind in kinds {
        let s = scenario.with_controller(kind);
        let metrics = sim::run_scenario(&s).unwrap_or_else(|e| {
            ScenarioMetrics::from_log(
                &s.cfg.name,
                kind,
                s.cfg.trajectory.kind,
                Vec::new(),
                &s.cfg.latch,
                Some(e.to_string()),
            )
        });
        let stem = format!("{}_{}", s.cfg.name, kind.name());
        write(&a.out.join(format!("{stem}.csv")), &metrics.log_csv(), written)?;
        write(&a.out.join(format!("{stem}_summary.json")), &metrics.summary_json(), written)?;
        if let Some(f) = &metrics.failure {
            failures.push(format!("{}: {f}", kind.name()));
        }
        runs.push(metrics);
    }
    let table = compare_controllers(&runs).table();
    if runs.len() > 1 {
        write(&a.out.join(format!("{}_comparison.txt", scenario.cfg.name)), &table, written)?;
    }
    print!("{table}");
    for m in &runs {
        println!(
            "{} {}: latched {} at {}",
            m.name,
            m.controller.name(),
            m.grasp_latched,
            m.latch_time.map_or("-".into(), |t| format!("{t:.2} s"))
        );
    }
    if failures.is_empty() {
        Ok(())
    } else {
        Err(CliError::Scenario(failures.join("; ")))
    }
}
