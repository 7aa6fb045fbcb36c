//! `lvscal` command-line front end.
//!
//! Values are resolved as built-in defaults, then the `--config` JSON file,
//! then explicit flags.
//!
//! Exit codes: 0 success, 1 Jacobian check failure, 2 input or ingestion
//! error, 3 insufficient data, 4 singular system or no convergence,
//! 5 observability warning under `--strict`.

use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use clap::{Args, Parser, Subcommand};
use nalgebra::{Quaternion, UnitQuaternion};
use serde::Deserialize;

use crate::check::{run_jacobian_check, CheckOptions};
use crate::io::{self, CalibrationRecord};
use crate::liegeo::{OrthonormalLine, PluckerLine, Pose, Vec3};
use crate::residual::CalibrationState;
use crate::solver::{calibrate, initial_state, SolverError, SolverOptions};
use crate::synth::{synthesize, ScenarioConfig, TruthModel};

pub const EXIT_CHECK_FAILED: i32 = 1;
pub const EXIT_INPUT: i32 = 2;
pub const EXIT_INSUFFICIENT: i32 = 3;
pub const EXIT_SOLVER: i32 = 4;
pub const EXIT_CONDITIONING: i32 = 5;

#[derive(Debug)]
pub struct CliError {
    pub code: i32,
    pub msg: String,
}

impl CliError {
    fn new(code: i32, msg: impl Into<String>) -> Self {
        Self {
            code,
            msg: msg.into(),
        }
    }

    fn input(msg: impl ToString) -> Self {
        Self::new(EXIT_INPUT, msg.to_string())
    }
}

impl From<SolverError> for CliError {
    fn from(e: SolverError) -> Self {
        let code = match e {
            SolverError::InsufficientData { .. } => EXIT_INSUFFICIENT,
            SolverError::Trajectory(_) => EXIT_INPUT,
            SolverError::SingularSystem { .. } | SolverError::DegenerateCloud { .. } => EXIT_SOLVER,
        };
        Self::new(code, e.to_string())
    }
}

impl From<io::IngestError> for CliError {
    fn from(e: io::IngestError) -> Self {
        Self::input(e)
    }
}

#[derive(Debug, Parser)]
#[command(
    name = "lvscal",
    version,
    about = "Joint time-offset, hand-eye and line calibration for robot-mounted line scanners"
)]
pub struct Cli {
    /// Worker threads for residual evaluation (default: all cores).
    #[arg(long, global = true, env = "LVSCAL_THREADS")]
    pub threads: Option<usize>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Estimate t_d, hand-eye and the target line from recorded streams.
    Calibrate(CalibrateArgs),
    /// Generate a synthetic S-path scan with known ground truth.
    Synth(SynthArgs),
    /// Compare analytic and numeric Jacobians on random problems.
    Check(CheckArgs),
}

#[derive(Debug, Args)]
pub struct CalibrateArgs {
    /// Robot pose CSV (t,px,py,pz,qw,qx,qy,qz).
    #[arg(long)]
    pub poses: Option<PathBuf>,
    /// Feature CSV (t,x,y,z).
    #[arg(long)]
    pub features: Option<PathBuf>,
    /// Flat JSON file with any of the options below.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Output directory for report.json and iterations.csv [default: .]
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Initial time offset in seconds [default: 0]
    #[arg(long, allow_hyphen_values = true)]
    pub td: Option<f64>,
    /// Initial hand-eye rotation as w,x,y,z [default: 1,0,0,0]
    #[arg(long, value_delimiter = ',', allow_hyphen_values = true)]
    pub he_quat: Option<Vec<f64>>,
    /// Initial hand-eye translation in mm as x,y,z [default: 0,0,0]
    #[arg(long, value_delimiter = ',', allow_hyphen_values = true)]
    pub he_trans: Option<Vec<f64>>,
    /// Initial line as ωx,ωy,ωz,m [default: fitted to the mapped points]
    #[arg(long, value_delimiter = ',', allow_hyphen_values = true)]
    pub phi: Option<Vec<f64>>,
    /// Huber threshold in mm [default: 1]
    #[arg(long)]
    pub huber_delta: Option<f64>,
    /// Initial damping [default: 1e-4]
    #[arg(long)]
    pub mu0: Option<f64>,
    /// Step-norm stopping threshold [default: 1e-8]
    #[arg(long)]
    pub eps: Option<f64>,
    /// Maximum LM attempts [default: 100]
    #[arg(long)]
    pub max_iters: Option<usize>,
    /// Bound on |t_d| in seconds [default: 0.2]
    #[arg(long)]
    pub td_window: Option<f64>,
    /// Exit with code 5 when the problem is poorly conditioned.
    #[arg(long)]
    pub strict: bool,
    /// Add a creation timestamp to report.json.
    #[arg(long)]
    pub stamp: bool,
}

#[derive(Debug, Args)]
pub struct SynthArgs {
    /// Output directory for poses.csv, features.csv and truth.json [default: .]
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Flat JSON scenario file.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Noise seed [default: 0]
    #[arg(long)]
    pub seed: Option<u64>,
    /// True time offset in seconds [default: 0.018]
    #[arg(long, allow_hyphen_values = true)]
    pub td: Option<f64>,
    /// Feature noise per axis in mm [default: 0]
    #[arg(long)]
    pub noise: Option<f64>,
    /// Capture duration in seconds [default: 20]
    #[arg(long)]
    pub duration: Option<f64>,
    /// Lateral S-path amplitude in mm [default: 30]
    #[arg(long)]
    pub amplitude: Option<f64>,
    /// Attitude sweep amplitude in rad [default: 0.3]
    #[arg(long)]
    pub sweep: Option<f64>,
    /// Camera rate in Hz [default: 33]
    #[arg(long)]
    pub cam_rate: Option<f64>,
    /// Robot pose rate in Hz [default: 250]
    #[arg(long)]
    pub pose_rate: Option<f64>,
    /// Sample the true pose from the smooth design curve.
    #[arg(long)]
    pub smooth_truth: bool,
}

#[derive(Debug, Args)]
pub struct CheckArgs {
    /// Number of random cases [default: 200]
    #[arg(long)]
    pub cases: Option<usize>,
    /// Random seed [default: 24301]
    #[arg(long)]
    pub seed: Option<u64>,
    /// Relative error tolerance [default: 1e-5]
    #[arg(long)]
    pub tolerance: Option<f64>,
    #[arg(long, hide = true)]
    pub flip_td_sign: bool,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct CalibrateFile {
    poses: Option<PathBuf>,
    features: Option<PathBuf>,
    out: Option<PathBuf>,
    td_s: Option<f64>,
    he_quat_wxyz: Option<[f64; 4]>,
    he_trans_mm: Option<[f64; 3]>,
    phi: Option<[f64; 4]>,
    huber_delta: Option<f64>,
    mu0: Option<f64>,
    mu_up: Option<f64>,
    mu_down: Option<f64>,
    eps: Option<f64>,
    max_iters: Option<usize>,
    td_window: Option<f64>,
    strict: Option<bool>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct SynthFile {
    out: Option<PathBuf>,
    seed: Option<u64>,
    td_s: Option<f64>,
    noise_sigma: Option<f64>,
    duration: Option<f64>,
    margin: Option<f64>,
    pose_rate: Option<f64>,
    cam_rate: Option<f64>,
    path_amplitude: Option<f64>,
    lateral_freq: Option<f64>,
    attitude_sweep: Option<f64>,
    scan_speed: Option<f64>,
    standoff: Option<f64>,
    depth_ratio: Option<f64>,
    depth_freq: Option<f64>,
    line_point_mm: Option<[f64; 3]>,
    line_dir: Option<[f64; 3]>,
    he_quat_wxyz: Option<[f64; 4]>,
    he_trans_mm: Option<[f64; 3]>,
    smooth_truth: Option<bool>,
}

fn read_config<T: for<'de> Deserialize<'de> + Default>(path: Option<&Path>) -> Result<T, CliError> {
    let Some(path) = path else {
        return Ok(T::default());
    };
    let text = std::fs::read_to_string(path)
        .map_err(|e| CliError::input(format!("{}: {e}", path.display())))?;
    serde_json::from_str(&text).map_err(|e| CliError::input(format!("{}: {e}", path.display())))
}

fn arr<const N: usize>(flag: &str, v: Option<Vec<f64>>) -> Result<Option<[f64; N]>, CliError> {
    v.map(|v| {
        let n = v.len();
        v.try_into().map_err(|_| {
            CliError::input(format!(
                "--{flag} takes {N} comma-separated values, got {n}"
            ))
        })
    })
    .transpose()
}

fn hand_eye(q: [f64; 4], t: [f64; 3]) -> Result<Pose, CliError> {
    let quat = Quaternion::new(q[0], q[1], q[2], q[3]);
    if !(quat.norm() > 1e-6 && quat.norm().is_finite()) {
        return Err(CliError::input(
            "hand-eye quaternion must be nonzero and finite",
        ));
    }
    let rotation = UnitQuaternion::new_normalize(quat).to_rotation_matrix();
    Ok(Pose::new(rotation, Vec3::from(t)))
}

fn fmt_vec(v: &[f64]) -> String {
    let parts: Vec<String> = v.iter().map(|x| format!("{x:.9}")).collect();
    format!("[{}]", parts.join(", "))
}

fn create_dir(dir: &Path) -> Result<(), CliError> {
    std::fs::create_dir_all(dir).map_err(|e| CliError::input(format!("{}: {e}", dir.display())))
}

fn unix_now() -> Option<u64> {
    SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .ok()
        .map(|d| d.as_secs())
}

pub fn run_calibrate(args: CalibrateArgs) -> Result<(), CliError> {
    let file: CalibrateFile = read_config(args.config.as_deref())?;
    let poses = args
        .poses
        .or(file.poses)
        .ok_or_else(|| CliError::input("--poses is required"))?;
    let features = args
        .features
        .or(file.features)
        .ok_or_else(|| CliError::input("--features is required"))?;
    let out = args.out.or(file.out).unwrap_or_else(|| PathBuf::from("."));
    let defaults = SolverOptions::default();
    let opts = SolverOptions {
        huber_delta: args
            .huber_delta
            .or(file.huber_delta)
            .unwrap_or(defaults.huber_delta),
        mu0: args.mu0.or(file.mu0).unwrap_or(defaults.mu0),
        mu_up: file.mu_up.unwrap_or(defaults.mu_up),
        mu_down: file.mu_down.unwrap_or(defaults.mu_down),
        eps: args.eps.or(file.eps).unwrap_or(defaults.eps),
        max_iters: args
            .max_iters
            .or(file.max_iters)
            .unwrap_or(defaults.max_iters),
        td_window: args
            .td_window
            .or(file.td_window)
            .unwrap_or(defaults.td_window),
    };
    opts.validate().map_err(CliError::input)?;
    let strict = args.strict || file.strict.unwrap_or(false);
    let t_d = args.td.or(file.td_s).unwrap_or(0.0);
    let he = hand_eye(
        arr("he-quat", args.he_quat)?
            .or(file.he_quat_wxyz)
            .unwrap_or([1.0, 0.0, 0.0, 0.0]),
        arr("he-trans", args.he_trans)?
            .or(file.he_trans_mm)
            .unwrap_or([0.0; 3]),
    )?;
    let phi = arr("phi", args.phi)?.or(file.phi);

    let data = io::load_dataset(&poses, &features)?;
    let init = match phi {
        Some(p) => {
            if !(p[3] >= 0.0) {
                return Err(CliError::input(
                    "phi: moment magnitude must be non-negative",
                ));
            }
            CalibrationState::new(
                t_d,
                OrthonormalLine::new(Vec3::new(p[0], p[1], p[2]), p[3]),
                he,
            )
        }
        None => initial_state(&data, he, t_d)?,
    };
    let report = calibrate(&data, &init, &opts)?;

    create_dir(&out)?;
    let record = CalibrationRecord::from_report(&report, args.stamp.then(unix_now).flatten());
    io::write_record(&out.join("report.json"), &record)?;
    io::write_iterations(&out.join("iterations.csv"), &report.history)?;

    let s = &report.state;
    println!("t_d_s         {:.9}", s.t_d);
    println!("he_quat_wxyz  {}", fmt_vec(&record.he_quat_wxyz));
    println!("he_trans_mm   {}", fmt_vec(&record.he_trans_mm));
    println!("line_v        {}", fmt_vec(&record.line.v));
    println!("line_n        {}", fmt_vec(&record.line.n));
    println!("rmse_mm       {:.6e}", report.rmse);
    println!("mae_mm        {:.6e}", report.mae);
    println!(
        "iterations    {} ({})",
        report.iterations,
        if report.converged {
            "converged"
        } else {
            "not converged"
        }
    );
    println!("dropped       {}", report.dropped_observations);
    println!("condition     {:.3e}", report.condition);
    if report.condition_warning {
        eprintln!(
            "warning: poorly conditioned problem (condition {:.3e}); the scan does not excite every parameter",
            report.condition
        );
        if strict {
            return Err(CliError::new(
                EXIT_CONDITIONING,
                "strict mode: observability warning",
            ));
        }
    }
    if !report.converged {
        return Err(CliError::new(
            EXIT_SOLVER,
            format!("no convergence after {} iterations", report.iterations),
        ));
    }
    Ok(())
}

fn scenario(args: &SynthArgs, file: &SynthFile) -> Result<ScenarioConfig, CliError> {
    let d = ScenarioConfig::default();
    let line_truth = match (file.line_point_mm, file.line_dir) {
        (None, None) => d.line_truth,
        (p, v) => PluckerLine::from_point_dir(
            &p.map(Vec3::from)
                .unwrap_or_else(|| d.line_truth.closest_point()),
            &v.map(Vec3::from).unwrap_or(d.line_truth.v),
        )
        .map_err(CliError::input)?,
    };
    let he_truth = match (file.he_quat_wxyz, file.he_trans_mm) {
        (None, None) => d.he_truth,
        (q, t) => hand_eye(
            q.unwrap_or_else(|| io::quat_wxyz(&d.he_truth.rotation)),
            t.unwrap_or(d.he_truth.translation.into()),
        )?,
    };
    let cfg = ScenarioConfig {
        line_truth,
        he_truth,
        td_truth: args.td.or(file.td_s).unwrap_or(d.td_truth),
        pose_rate: args.pose_rate.or(file.pose_rate).unwrap_or(d.pose_rate),
        cam_rate: args.cam_rate.or(file.cam_rate).unwrap_or(d.cam_rate),
        duration: args.duration.or(file.duration).unwrap_or(d.duration),
        margin: file.margin.unwrap_or(d.margin),
        path_amplitude: args
            .amplitude
            .or(file.path_amplitude)
            .unwrap_or(d.path_amplitude),
        lateral_freq: file.lateral_freq.unwrap_or(d.lateral_freq),
        attitude_sweep: args
            .sweep
            .or(file.attitude_sweep)
            .unwrap_or(d.attitude_sweep),
        scan_speed: file.scan_speed.unwrap_or(d.scan_speed),
        standoff: file.standoff.unwrap_or(d.standoff),
        depth_ratio: file.depth_ratio.unwrap_or(d.depth_ratio),
        depth_freq: file.depth_freq.unwrap_or(d.depth_freq),
        noise_sigma: args.noise.or(file.noise_sigma).unwrap_or(d.noise_sigma),
        seed: args.seed.or(file.seed).unwrap_or(d.seed),
        truth_model: if args.smooth_truth || file.smooth_truth.unwrap_or(false) {
            TruthModel::Smooth
        } else {
            TruthModel::PiecewiseConstantTwist
        },
    };
    cfg.validate().map_err(CliError::input)?;
    Ok(cfg)
}

pub fn run_synth(args: SynthArgs) -> Result<(), CliError> {
    let file: SynthFile = read_config(args.config.as_deref())?;
    let cfg = scenario(&args, &file)?;
    let out = args
        .out
        .clone()
        .or(file.out)
        .unwrap_or_else(|| PathBuf::from("."));
    let data = synthesize(&cfg);
    create_dir(&out)?;
    io::write_poses(&out.join("poses.csv"), &data.poses)?;
    io::write_features(&out.join("features.csv"), &data.features)?;
    io::write_record(
        &out.join("truth.json"),
        &CalibrationRecord::from_truth(&data.truth),
    )?;
    println!(
        "{} poses, {} features ({} camera ticks skipped) written to {}",
        data.poses.len(),
        data.features.len(),
        data.skipped,
        out.display()
    );
    Ok(())
}

pub fn run_check(args: CheckArgs) -> Result<(), CliError> {
    let d = CheckOptions::default();
    let opts = CheckOptions {
        cases: args.cases.unwrap_or(d.cases),
        seed: args.seed.unwrap_or(d.seed),
        tolerance: args.tolerance.unwrap_or(d.tolerance),
        flip_td_sign: args.flip_td_sign,
        ..d
    };
    let report = run_jacobian_check(&opts);
    for b in &report.blocks {
        let verdict = if b.max_rel_error < report.tolerance {
            "ok"
        } else {
            "FAIL"
        };
        println!(
            "{:<4} max_rel_error {:.3e}  {verdict}",
            b.name, b.max_rel_error
        );
    }
    if report.passed() {
        Ok(())
    } else {
        Err(CliError::new(
            EXIT_CHECK_FAILED,
            format!("Jacobian check failed at tolerance {:e}", report.tolerance),
        ))
    }
}

/// Parse-free entry point used by the binary.
pub fn run(cli: Cli) -> Result<(), CliError> {
    if let Some(n) = cli.threads {
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| CliError::input(format!("thread pool: {e}")))?;
    }
    match cli.command {
        Command::Calibrate(a) => run_calibrate(a),
        Command::Synth(a) => run_synth(a),
        Command::Check(a) => run_check(a),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use clap::CommandFactory;

    #[test]
    fn cli_definition_is_consistent() {
        Cli::command().debug_assert();
    }

    #[test]
    fn flags_override_file() {
        let cli =
            Cli::try_parse_from(["lvscal", "synth", "--td", "-0.01", "--noise", "0.2"]).unwrap();
        let Command::Synth(args) = cli.command else {
            panic!()
        };
        let file = SynthFile {
            td_s: Some(0.05),
            duration: Some(3.0),
            ..Default::default()
        };
        let cfg = scenario(&args, &file).unwrap();
        assert_eq!(cfg.td_truth, -0.01);
        assert_eq!(cfg.noise_sigma, 0.2);
        assert_eq!(cfg.duration, 3.0);
        assert_eq!(cfg.cam_rate, ScenarioConfig::default().cam_rate);
    }

    #[test]
    fn unknown_config_keys_rejected() {
        let r: Result<CalibrateFile, _> = serde_json::from_str(r#"{"td": 0.1}"#);
        assert!(r.is_err());
        let r: CalibrateFile =
            serde_json::from_str(r#"{"td_s": 0.1, "phi": [0.1, 0.0, 0.0, 5.0]}"#).unwrap();
        assert_eq!(r.phi, Some([0.1, 0.0, 0.0, 5.0]));
    }
}
