//! Command-line experiment harness for the stiffness-identification
//! toolkit.
//!
//! Subcommands: `simulate` (synthetic trajectories), `sensors` (noise
//! corruption), `estimate` (pidl / rdl / pacejka), `train-rdl` (grid dataset
//! + sequence regressor), `compare` (all methods side by side), and
//! `closed-loop` (yaw-rate regulation with optional online updates).
//!
//! Exit codes: 0 success, 2 config/parse error, 3 numerical or training
//! failure.

use clap::{Parser, Subcommand};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use stiffid::control::{
    closed_loop_sim, pidl_window_estimator, synthesize_gain, ClosedLoopResult, ClosedLoopSetup,
    ControllerGain, PlantSchedule, ReferenceState, UpdatePolicy,
};
use stiffid::dynamics::{
    derive_signals, replay, simulate, synthesize_sensors, trajectory_error, NoiseModel,
    SteerSchedule, Trajectory, VehicleParams,
};
use stiffid::io::{
    config_hash, loss_curve_to_csv, parse_scenario_json, read_trajectory, write_trajectory,
    ClosedLoopSummary, CompareReport, CompareRow, EstimateReport, FitReport, IoError,
    MethodStatus, Scenario, TOOL_VERSION,
};
use stiffid::pidl::{aggregate, train_pidl, EstimateMethod, PidlConfig, StiffnessEstimate};
use stiffid::rdl::{generate_grid_dataset, predict_rdl, train_rdl, DatasetConfig, RdlTrainConfig};
use stiffid::tirefit::{fit_axle, stiffness_from_fit, Axle, SlipConvention};

/// Failure classified for the exit code.
enum CliError {
    /// Bad configuration, flags, or unparseable input files (exit 2).
    Config(String),
    /// Numerical, training, or synthesis failure at runtime (exit 3).
    Numeric(String),
}

impl From<IoError> for CliError {
    fn from(e: IoError) -> Self {
        CliError::Config(e.to_string())
    }
}

type CliResult = Result<(), CliError>;

fn config_err(e: impl std::fmt::Display) -> CliError {
    CliError::Config(e.to_string())
}

fn numeric_err(e: impl std::fmt::Display) -> CliError {
    CliError::Numeric(e.to_string())
}

#[derive(Parser)]
#[command(name = "stiffid", version, about = "Cornering-stiffness identification experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Simulate a maneuver and write the trajectory CSV (plus a JSON
    /// sidecar of the generating parameters).
    Simulate {
        /// JSON config; defaults apply when omitted.
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        caf: Option<f64>,
        #[arg(long)]
        car: Option<f64>,
        #[arg(long)]
        dt: Option<f64>,
        #[arg(long)]
        duration: Option<f64>,
    },
    /// Apply the sensor noise model to a trajectory (clears derived
    /// signals, as raw sensor logs carry none).
    Sensors {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Estimate the stiffness pair from measured trajectories.
    Estimate {
        #[arg(long, value_parser = parse_method)]
        method: EstimateMethod,
        /// One or more trajectory CSVs.
        #[arg(long, required = true)]
        input: Vec<PathBuf>,
        #[arg(long)]
        report: PathBuf,
        #[arg(long)]
        config: Option<PathBuf>,
        /// Trained model file (required for --method rdl).
        #[arg(long)]
        model: Option<PathBuf>,
        /// Combine multiple runs into mean + half-range uncertainty.
        #[arg(long)]
        aggregate: bool,
        /// Score each estimate by re-simulating the maneuver with it.
        #[arg(long)]
        reference_sim: bool,
        /// Write the training loss curve (first input) as CSV.
        #[arg(long)]
        loss_curve: Option<PathBuf>,
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Generate the labeled stiffness-grid dataset and train the sequence
    /// regressor.
    TrainRdl {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        loss_curve: Option<PathBuf>,
        #[arg(long)]
        seed: Option<u64>,
        /// Persist the generated dataset (trajectory CSVs + manifest).
        #[arg(long)]
        dataset_dir: Option<PathBuf>,
    },
    /// Run every estimation method over the given datasets and tabulate.
    Compare {
        #[arg(long, required = true)]
        input: Vec<PathBuf>,
        #[arg(long)]
        report: PathBuf,
        #[arg(long)]
        config: Option<PathBuf>,
        /// Trained model for the rdl column.
        #[arg(long)]
        model: PathBuf,
        /// Directory for plot-ready measured-vs-simulated CSVs.
        #[arg(long)]
        plot_dir: Option<PathBuf>,
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Run a closed-loop scenario (stale and updated configurations when
    /// the scenario requests a comparison).
    ClosedLoop {
        #[arg(long)]
        scenario: PathBuf,
        #[arg(long)]
        out_dir: PathBuf,
    },
}

fn parse_method(s: &str) -> Result<EstimateMethod, String> {
    match s {
        "pidl" => Ok(EstimateMethod::Pidl),
        "rdl" => Ok(EstimateMethod::Rdl),
        "pacejka" => Ok(EstimateMethod::Pacejka),
        other => Err(format!("unknown method `{other}` (expected pidl|rdl|pacejka)")),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(CliError::Config(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(2)
        }
        Err(CliError::Numeric(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(3)
        }
    }
}

fn run(cli: Cli) -> CliResult {
    match cli.command {
        Command::Simulate { config, out, seed, caf, car, dt, duration } => {
            cmd_simulate(config.as_deref(), &out, seed, caf, car, dt, duration)
        }
        Command::Sensors { config, input, out, seed } => {
            cmd_sensors(config.as_deref(), &input, &out, seed)
        }
        Command::Estimate {
            method,
            input,
            report,
            config,
            model,
            aggregate,
            reference_sim,
            loss_curve,
            seed,
        } => cmd_estimate(
            method,
            &input,
            &report,
            config.as_deref(),
            model.as_deref(),
            aggregate,
            reference_sim,
            loss_curve.as_deref(),
            seed,
        ),
        Command::TrainRdl { config, out, loss_curve, seed, dataset_dir } => {
            cmd_train_rdl(config.as_deref(), &out, loss_curve.as_deref(), seed, dataset_dir.as_deref())
        }
        Command::Compare { input, report, config, model, plot_dir, seed } => {
            cmd_compare(&input, &report, config.as_deref(), &model, plot_dir.as_deref(), seed)
        }
        Command::ClosedLoop { scenario, out_dir } => cmd_closed_loop(&scenario, &out_dir),
    }
}

fn load_json_config<T: serde::de::DeserializeOwned + Default>(
    path: Option<&Path>,
) -> Result<T, CliError> {
    match path {
        None => Ok(T::default()),
        Some(p) => {
            let bytes = std::fs::read(p)
                .map_err(|e| CliError::Config(format!("{}: {e}", p.display())))?;
            serde_json::from_slice(&bytes)
                .map_err(|e| CliError::Config(format!("{}:{}: {e}", p.display(), e.line())))
        }
    }
}

fn write_file(path: &Path, contents: &str) -> CliResult {
    if let Some(dir) = path.parent() {
        if !dir.as_os_str().is_empty() {
            std::fs::create_dir_all(dir)
                .map_err(|e| CliError::Config(format!("{}: {e}", dir.display())))?;
        }
    }
    std::fs::write(path, contents)
        .map_err(|e| CliError::Config(format!("{}: {e}", path.display())))
}

fn hash_of<T: serde::Serialize>(value: &T) -> String {
    let canonical = serde_json::to_vec(value).expect("config serialization is infallible");
    config_hash(&canonical)
}

// ---------------------------------------------------------------------------
// simulate
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, serde::Serialize, serde::Deserialize)]
#[serde(default, deny_unknown_fields)]
struct SimulateConfig {
    vehicle: VehicleParams,
    caf: f64,
    car: f64,
    maneuver: SteerSchedule,
    vx: f64,
    dt: f64,
    duration: f64,
    x0: [f64; 2],
    seed: u64,
}

impl Default for SimulateConfig {
    fn default() -> Self {
        Self {
            vehicle: VehicleParams::scaled_test_vehicle(),
            caf: 8.14,
            car: 9.71,
            maneuver: SteerSchedule::default_sine(),
            vx: 1.2,
            dt: 0.01,
            duration: 10.0,
            x0: [0.0, 0.0],
            seed: 0,
        }
    }
}

fn cmd_simulate(
    config: Option<&Path>,
    out: &Path,
    seed: Option<u64>,
    caf: Option<f64>,
    car: Option<f64>,
    dt: Option<f64>,
    duration: Option<f64>,
) -> CliResult {
    let mut cfg: SimulateConfig = load_json_config(config)?;
    if let Some(s) = seed {
        cfg.seed = s;
    }
    if let Some(v) = caf {
        cfg.caf = v;
    }
    if let Some(v) = car {
        cfg.car = v;
    }
    if let Some(v) = dt {
        cfg.dt = v;
    }
    if let Some(v) = duration {
        cfg.duration = v;
    }
    let maneuver = cfg.maneuver;
    let traj = simulate(
        &cfg.vehicle,
        cfg.caf,
        cfg.car,
        |t| maneuver.eval(t),
        cfg.vx,
        cfg.dt,
        cfg.duration,
        cfg.x0,
    )
    .map_err(config_err)?;
    write_trajectory(out, &traj)?;

    #[derive(serde::Serialize)]
    struct Sidecar<'a> {
        version: &'a str,
        config_hash: String,
        config: &'a SimulateConfig,
    }
    let sidecar =
        Sidecar { version: TOOL_VERSION, config_hash: hash_of(&cfg), config: &cfg };
    let mut sidecar_path = out.as_os_str().to_owned();
    sidecar_path.push(".meta.json");
    write_file(
        Path::new(&sidecar_path),
        &serde_json::to_string_pretty(&sidecar).expect("sidecar serialization"),
    )?;
    Ok(())
}

// ---------------------------------------------------------------------------
// sensors
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Default, serde::Serialize, serde::Deserialize)]
#[serde(default, deny_unknown_fields)]
struct SensorsConfig {
    noise: NoiseModel,
}

fn cmd_sensors(
    config: Option<&Path>,
    input: &Path,
    out: &Path,
    seed: Option<u64>,
) -> CliResult {
    let mut cfg: SensorsConfig = load_json_config(config)?;
    if let Some(s) = seed {
        cfg.noise.seed = s;
    }
    let traj = read_trajectory(input)?;
    let noisy = synthesize_sensors(&traj, &cfg.noise).map_err(config_err)?;
    write_trajectory(out, &noisy)
}

// ---------------------------------------------------------------------------
// estimate
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, serde::Serialize, serde::Deserialize)]
#[serde(default, deny_unknown_fields)]
struct EstimateConfig {
    vehicle: VehicleParams,
    pidl: PidlConfig,
    smoothing_window: usize,
    slip_convention: SlipConvention,
}

impl Default for EstimateConfig {
    fn default() -> Self {
        Self {
            vehicle: VehicleParams::scaled_test_vehicle(),
            pidl: PidlConfig::default(),
            smoothing_window: 5,
            slip_convention: SlipConvention::default(),
        }
    }
}

/// Runs the derivation pipeline on a measured file: the derived signals are
/// always rebuilt from the sensor channels so every input follows one path.
fn derive_measured(path: &Path, smoothing_window: usize) -> Result<Trajectory, CliError> {
    let raw = read_trajectory(path)?;
    derive_signals(&raw, smoothing_window).map_err(config_err)
}

fn estimate_one(
    method: EstimateMethod,
    derived: &Trajectory,
    cfg: &EstimateConfig,
    model: Option<&stiffid::rdl::RdlModel>,
) -> Result<StiffnessEstimate, CliError> {
    match method {
        EstimateMethod::Pidl => {
            train_pidl(derived, &cfg.vehicle, &cfg.pidl).map_err(numeric_err)
        }
        EstimateMethod::Rdl => {
            let model = model.ok_or_else(|| {
                CliError::Config("--method rdl requires --model <trained model>".into())
            })?;
            predict_rdl(model, derived).map_err(numeric_err)
        }
        EstimateMethod::Pacejka => {
            let front = fit_axle(derived, &cfg.vehicle, Axle::Front, cfg.slip_convention)
                .map_err(numeric_err)?;
            let rear = fit_axle(derived, &cfg.vehicle, Axle::Rear, cfg.slip_convention)
                .map_err(numeric_err)?;
            Ok(StiffnessEstimate {
                caf: stiffness_from_fit(&front.coeffs),
                car: stiffness_from_fit(&rear.coeffs),
                method: EstimateMethod::Pacejka,
                loss_curve: Vec::new(),
                eq_error: None,
            })
        }
    }
}

fn reference_error(
    derived: &Trajectory,
    est: &StiffnessEstimate,
    vehicle: &VehicleParams,
) -> Result<f64, CliError> {
    let sim = replay(vehicle, est.caf, est.car, derived).map_err(numeric_err)?;
    trajectory_error(derived, &sim).map_err(numeric_err)
}

#[derive(serde::Serialize)]
struct MultiEstimateReport {
    version: String,
    config_hash: String,
    runs: Vec<EstimateReport>,
    #[serde(skip_serializing_if = "Option::is_none")]
    aggregate: Option<EstimateReport>,
}

#[allow(clippy::too_many_arguments)]
fn cmd_estimate(
    method: EstimateMethod,
    inputs: &[PathBuf],
    report_path: &Path,
    config: Option<&Path>,
    model_path: Option<&Path>,
    do_aggregate: bool,
    reference_sim: bool,
    loss_curve: Option<&Path>,
    seed: Option<u64>,
) -> CliResult {
    let mut cfg: EstimateConfig = load_json_config(config)?;
    if let Some(s) = seed {
        cfg.pidl.seed = s;
    }
    let model = match (method, model_path) {
        (EstimateMethod::Rdl, Some(p)) => Some(stiffid::io::load_rdl_model(p)?),
        (EstimateMethod::Rdl, None) => {
            return Err(CliError::Config("--method rdl requires --model".into()))
        }
        _ => None,
    };
    let run_hash = hash_of(&(&cfg, method, inputs, do_aggregate, reference_sim));

    let mut estimates = Vec::new();
    let mut reports = Vec::new();
    for input in inputs {
        let derived = derive_measured(input, cfg.smoothing_window)?;
        let mut est = estimate_one(method, &derived, &cfg, model.as_ref())?;
        if reference_sim {
            est.eq_error = Some(reference_error(&derived, &est, &cfg.vehicle)?);
        }
        let mut report = EstimateReport::new(method, est.caf, est.car, run_hash.clone());
        report.iterations = est.loss_curve.len();
        report.final_loss = est.loss_curve.last().copied();
        report.traj_error = est.eq_error;
        reports.push(report);

        if method == EstimateMethod::Pacejka {
            // Per-axle fit documents alongside the main report.
            for (axle, suffix) in [(Axle::Front, "front"), (Axle::Rear, "rear")] {
                let fit = fit_axle(&derived, &cfg.vehicle, axle, cfg.slip_convention)
                    .map_err(numeric_err)?;
                let doc = FitReport {
                    version: TOOL_VERSION.to_string(),
                    config_hash: run_hash.clone(),
                    b: fit.coeffs.b,
                    c: fit.coeffs.c,
                    d: fit.coeffs.d,
                    e: fit.coeffs.e,
                    rms: fit.residual_rms,
                    stiffness: stiffness_from_fit(&fit.coeffs),
                };
                let mut path = report_path.as_os_str().to_owned();
                path.push(format!(".fit.{suffix}.json"));
                write_file(
                    Path::new(&path),
                    &serde_json::to_string_pretty(&doc).expect("fit report serialization"),
                )?;
            }
        }
        estimates.push(est);
    }

    if let (Some(curve_path), Some(first)) = (loss_curve, estimates.first()) {
        write_file(curve_path, &loss_curve_to_csv(&first.loss_curve))?;
    }

    let out = if estimates.len() == 1 && !do_aggregate {
        serde_json::to_string_pretty(&reports[0]).expect("report serialization")
    } else {
        let agg = if do_aggregate {
            let combined = aggregate(&estimates).map_err(numeric_err)?;
            let mut agg_report =
                EstimateReport::new(method, combined.mean_caf, combined.mean_car, run_hash.clone());
            agg_report.rel_unc_caf = Some(combined.rel_unc_caf);
            agg_report.rel_unc_car = Some(combined.rel_unc_car);
            Some(agg_report)
        } else {
            None
        };
        let multi = MultiEstimateReport {
            version: TOOL_VERSION.to_string(),
            config_hash: run_hash,
            runs: reports,
            aggregate: agg,
        };
        serde_json::to_string_pretty(&multi).expect("report serialization")
    };
    write_file(report_path, &out)
}

// ---------------------------------------------------------------------------
// train-rdl
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, serde::Serialize, serde::Deserialize)]
#[serde(default, deny_unknown_fields)]
struct TrainRdlConfig {
    vehicle: VehicleParams,
    dataset: DatasetConfig,
    training: RdlTrainConfig,
}

impl Default for TrainRdlConfig {
    fn default() -> Self {
        Self {
            vehicle: VehicleParams::scaled_test_vehicle(),
            dataset: DatasetConfig::default(),
            training: RdlTrainConfig::default(),
        }
    }
}

fn cmd_train_rdl(
    config: Option<&Path>,
    out: &Path,
    loss_curve: Option<&Path>,
    seed: Option<u64>,
    dataset_dir: Option<&Path>,
) -> CliResult {
    let mut cfg: TrainRdlConfig = load_json_config(config)?;
    if let Some(s) = seed {
        cfg.dataset.seed = s;
        cfg.training.seed = s;
        if let Some(nm) = cfg.dataset.noise.as_mut() {
            nm.seed = s;
        }
    }
    let ds = generate_grid_dataset(&cfg.vehicle, &cfg.dataset).map_err(numeric_err)?;

    if let Some(dir) = dataset_dir {
        std::fs::create_dir_all(dir)
            .map_err(|e| CliError::Config(format!("{}: {e}", dir.display())))?;
        #[derive(serde::Serialize)]
        struct ManifestItem {
            file: String,
            caf: f64,
            car: f64,
        }
        #[derive(serde::Serialize)]
        struct Manifest<'a> {
            version: &'a str,
            config: &'a DatasetConfig,
            items: Vec<ManifestItem>,
        }
        // Re-simulate per label to persist the raw trajectories; features in
        // memory stay authoritative for training.
        let mut items = Vec::new();
        let mut idx = 0u64;
        for caf in stiffid::rdl::GRID_MIN..=stiffid::rdl::GRID_MAX {
            for car in stiffid::rdl::GRID_MIN..=stiffid::rdl::GRID_MAX {
                let maneuver = cfg.dataset.maneuver;
                let clean = simulate(
                    &cfg.vehicle,
                    caf as f64,
                    car as f64,
                    |t| maneuver.eval(t),
                    cfg.dataset.vx,
                    cfg.dataset.dt,
                    cfg.dataset.duration,
                    [0.0, 0.0],
                )
                .map_err(numeric_err)?;
                let nm = match &cfg.dataset.noise {
                    Some(nm) => NoiseModel { seed: nm.seed.wrapping_add(idx), ..*nm },
                    None => NoiseModel {
                        sigma_r: 0.0,
                        sigma_ay: 0.0,
                        bias_r: 0.0,
                        bias_ay: 0.0,
                        seed: 0,
                    },
                };
                let sensors = synthesize_sensors(&clean, &nm).map_err(numeric_err)?;
                let file = format!("traj_{caf:02}_{car:02}.csv");
                write_trajectory(&dir.join(&file), &sensors)?;
                items.push(ManifestItem { file, caf: caf as f64, car: car as f64 });
                idx += 1;
            }
        }
        let manifest =
            Manifest { version: TOOL_VERSION, config: &cfg.dataset, items };
        write_file(
            &dir.join("manifest.json"),
            &serde_json::to_string_pretty(&manifest).expect("manifest serialization"),
        )?;
    }

    let model = train_rdl(&ds, &cfg.training).map_err(numeric_err)?;
    if let Some(curve_path) = loss_curve {
        write_file(curve_path, &loss_curve_to_csv(&model.loss_curve))?;
    }
    stiffid::io::save_rdl_model(out, &model)?;
    Ok(())
}

// ---------------------------------------------------------------------------
// compare
// ---------------------------------------------------------------------------

fn cmd_compare(
    inputs: &[PathBuf],
    report_path: &Path,
    config: Option<&Path>,
    model_path: &Path,
    plot_dir: Option<&Path>,
    seed: Option<u64>,
) -> CliResult {
    let mut cfg: EstimateConfig = load_json_config(config)?;
    if let Some(s) = seed {
        cfg.pidl.seed = s;
    }
    let model = stiffid::io::load_rdl_model(model_path)?;
    let run_hash = hash_of(&(&cfg, inputs));

    let mut rows = Vec::new();
    for input in inputs {
        let dataset = input.display().to_string();
        let derived = derive_measured(input, cfg.smoothing_window)?;
        for method in [EstimateMethod::Pidl, EstimateMethod::Rdl, EstimateMethod::Pacejka] {
            let row = match estimate_one(method, &derived, &cfg, Some(&model)) {
                Ok(est) => {
                    let err = reference_error(&derived, &est, &cfg.vehicle)?;
                    if let Some(dir) = plot_dir {
                        write_plot_csv(dir, input, method, &derived, &est, &cfg.vehicle)?;
                    }
                    CompareRow {
                        dataset: dataset.clone(),
                        method,
                        status: MethodStatus::Ok,
                        caf: Some(est.caf),
                        car: Some(est.car),
                        traj_error: Some(err),
                        config_hash: run_hash.clone(),
                    }
                }
                // A method failure is recorded in the table; the run
                // continues with the remaining methods.
                Err(CliError::Numeric(message)) | Err(CliError::Config(message)) => CompareRow {
                    dataset: dataset.clone(),
                    method,
                    status: MethodStatus::Failed { message },
                    caf: None,
                    car: None,
                    traj_error: None,
                    config_hash: run_hash.clone(),
                },
            };
            rows.push(row);
        }
    }
    let report = CompareReport {
        version: TOOL_VERSION.to_string(),
        config_hash: run_hash,
        rows,
    };
    write_file(
        report_path,
        &serde_json::to_string_pretty(&report).expect("report serialization"),
    )
}

/// Plot-ready CSV: measured vs simulated response under the estimate.
fn write_plot_csv(
    dir: &Path,
    input: &Path,
    method: EstimateMethod,
    derived: &Trajectory,
    est: &StiffnessEstimate,
    vehicle: &VehicleParams,
) -> CliResult {
    let sim = replay(vehicle, est.caf, est.car, derived).map_err(numeric_err)?;
    let stem = input.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
    let path = dir.join(format!("{stem}.{method}.csv"));
    let vy_m = derived.vy().map_err(numeric_err)?;
    let vy_s = sim.vy().map_err(numeric_err)?;
    let mut out = String::from("t,r_measured,r_simulated,vy_measured,vy_simulated\n");
    for i in 0..derived.len() {
        out.push_str(&format!(
            "{},{},{},{},{}\n",
            stiffid::io::format_f64(derived.t[i]),
            stiffid::io::format_f64(derived.r[i]),
            stiffid::io::format_f64(sim.r[i]),
            stiffid::io::format_f64(vy_m[i]),
            stiffid::io::format_f64(vy_s[i]),
        ));
    }
    write_file(&path, &out)
}

// ---------------------------------------------------------------------------
// closed-loop
// ---------------------------------------------------------------------------

fn build_gain(scenario: &Scenario) -> Result<ControllerGain, CliError> {
    if let Some(k) = scenario.controller.gain_matrix {
        return ControllerGain::from_matrix(k, scenario.dt).map_err(config_err);
    }
    let (caf, car) = scenario.controller.design_stiffness.unwrap_or(scenario.initial_stiffness);
    let ss = stiffid::dynamics::build_state_space(&scenario.vehicle, caf, car, scenario.driver.vx)
        .map_err(config_err)?;
    let sw = scenario.controller.state_weights.unwrap_or([1.0, 1.0]);
    let iw = scenario.controller.input_weights.unwrap_or([1.0, 1.0]);
    let mut gain = synthesize_gain(&ss, sw, iw, scenario.dt).map_err(numeric_err)?;
    gain.design_stiffness = Some((caf, car));
    Ok(gain)
}

fn run_scenario(
    scenario: &Scenario,
    gain: &ControllerGain,
    with_updates: bool,
) -> Result<ClosedLoopResult, CliError> {
    let setup = ClosedLoopSetup {
        params: &scenario.vehicle,
        plant: &scenario.plant,
        gain,
        driver: scenario.driver,
        dt: scenario.dt,
        duration: scenario.duration,
        noise: NoiseModel { seed: scenario.seed, ..scenario.noise },
    };
    let initial = ReferenceState::from_stiffness(
        &scenario.vehicle,
        scenario.initial_stiffness.0,
        scenario.initial_stiffness.1,
    )
    .map_err(config_err)?;
    if with_updates {
        let spec = scenario.update_policy.clone().unwrap_or_default();
        let pidl_cfg = PidlConfig {
            iterations: spec.iterations,
            seed: scenario.seed,
            ..PidlConfig::default()
        };
        let estimator = pidl_window_estimator(scenario.vehicle, pidl_cfg, 5);
        let policy = UpdatePolicy { period: spec.period, window: spec.window, estimator };
        closed_loop_sim(&setup, initial, Some(policy)).map_err(numeric_err)
    } else {
        closed_loop_sim::<fn(&Trajectory) -> Result<(f64, f64), String>>(&setup, initial, None)
            .map_err(numeric_err)
    }
}

fn write_run_outputs(dir: &Path, label: &str, result: &ClosedLoopResult) -> CliResult {
    write_trajectory(&dir.join(format!("{label}.csv")), &result.trajectory)?;
    let mut ref_csv = String::from("t,r_ref,ay_ref\n");
    for i in 0..result.trajectory.len() {
        ref_csv.push_str(&format!(
            "{},{},{}\n",
            stiffid::io::format_f64(result.trajectory.t[i]),
            stiffid::io::format_f64(result.r_ref[i]),
            stiffid::io::format_f64(result.ay_ref[i]),
        ));
    }
    write_file(&dir.join(format!("{label}.ref.csv")), &ref_csv)
}

fn cmd_closed_loop(scenario_path: &Path, out_dir: &Path) -> CliResult {
    let bytes = std::fs::read(scenario_path)
        .map_err(|e| CliError::Config(format!("{}: {e}", scenario_path.display())))?;
    let scenario = parse_scenario_json(&bytes, &scenario_path.display().to_string())?;
    std::fs::create_dir_all(out_dir)
        .map_err(|e| CliError::Config(format!("{}: {e}", out_dir.display())))?;

    let gain = build_gain(&scenario)?;
    let run_hash = hash_of(&scenario);

    let wants_updates = scenario.update_policy.is_some();
    let mut summary = ClosedLoopSummary {
        version: TOOL_VERSION.to_string(),
        config_hash: run_hash,
        yaw_iae_stale: None,
        yaw_iae_updated: None,
        events: Vec::new(),
    };

    if wants_updates {
        let updated = run_scenario(&scenario, &gain, true)?;
        write_run_outputs(out_dir, "updated", &updated)?;
        summary.yaw_iae_updated = Some(updated.yaw_iae);
        summary.events = updated.events.clone();
        if scenario.compare_stale {
            let stale = run_scenario(&scenario, &gain, false)?;
            write_run_outputs(out_dir, "stale", &stale)?;
            summary.yaw_iae_stale = Some(stale.yaw_iae);
        }
    } else {
        let stale = run_scenario(&scenario, &gain, false)?;
        write_run_outputs(out_dir, "stale", &stale)?;
        summary.yaw_iae_stale = Some(stale.yaw_iae);
        summary.events = stale.events.clone();
    }

    write_file(
        &out_dir.join("summary.json"),
        &serde_json::to_string_pretty(&summary).expect("summary serialization"),
    )
}
