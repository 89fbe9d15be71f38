use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use trolley_cli::config::Scenario;
use trolley_cli::runner::{run_scenario, write_outputs, Metrics};
use trolley_cli::tools::{fit_plane, pnp, solve_once, PnpRequest, SolveRequest};
use trolley_cli::verify::{read_log, verify_records, verify_solution, VerifyReport};
use trolley_core::calibration::{calibrate_camera, calibrate_lidar, camera_error_stats, lidar_error_stats, TrialRanges};
use trolley_core::mission::PerceptionParams;
use trolley_core::plane::{PointCloud, RansacParams};
use trolley_core::planner::NmpcSolution;
use trolley_core::sim::SensorConfig;

#[derive(Parser)]
#[command(name = "trolley", about = "Autonomous trolley collection in simulation")]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Run a closed-loop mission and write trajectory.csv, log.jsonl and metrics.json.
    Run {
        #[arg(long)]
        scenario: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long, default_value = "out")]
        out: PathBuf,
        #[arg(long)]
        ticks_max: Option<u64>,
        /// Re-check all barrier constraints from the written log.
        #[arg(long)]
        verify: bool,
    },
    /// Solve one planning problem from JSON.
    SolveOnce {
        #[arg(long)]
        problem: PathBuf,
    },
    /// RANSAC plane fit on a whitespace-separated XYZ file.
    FitPlane {
        #[arg(long)]
        cloud: PathBuf,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = 200)]
        iterations: usize,
        #[arg(long, default_value_t = 0.005)]
        tol: f64,
    },
    /// EPnP and refinement on a keypoint JSON file.
    Pnp {
        #[arg(long)]
        keypoints: PathBuf,
    },
    /// Re-evaluate barriers on a run directory, or on a solve-once solution.
    Verify {
        #[arg(long, conflicts_with_all = ["problem", "solution"])]
        run: Option<PathBuf>,
        #[arg(long, requires = "solution")]
        problem: Option<PathBuf>,
        #[arg(long, requires = "problem")]
        solution: Option<PathBuf>,
    },
    /// Sweep sensor noise to hit target perception errors.
    Calibrate {
        #[arg(long, default_value_t = 1000)]
        frames: usize,
        #[arg(long, default_value_t = 1)]
        seed: u64,
    },
}

fn fail(code: u8, msg: impl std::fmt::Display) -> ExitCode {
    eprintln!("error: {msg}");
    ExitCode::from(code)
}

fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T, String> {
    let text = std::fs::read_to_string(path).map_err(|e| format!("{}: {e}", path.display()))?;
    serde_json::from_str(&text).map_err(|e| format!("{}:{}:{}: {e}", path.display(), e.line(), e.column()))
}

fn print_json(v: &impl serde::Serialize) {
    println!("{}", serde_json::to_string_pretty(v).expect("serializable"));
}

fn verify_run(dir: &Path) -> Result<VerifyReport, String> {
    let metrics: Metrics = read_json(&dir.join("metrics.json"))?;
    let records = read_log(&dir.join("log.jsonl")).map_err(|e| e.to_string())?;
    // Plans are checked with the step of the model that produced them.
    let dt = records.get(1).map_or(0.1, |r| r.t - records[0].t);
    Ok(verify_records(&records, metrics.d_safe, dt))
}

fn main() -> ExitCode {
    match Cli::parse().cmd {
        Cmd::Run { scenario, seed, out, ticks_max, verify } => {
            let sc = match Scenario::load(&scenario) {
                Ok(s) => s,
                Err(e) => return fail(1, e),
            };
            let result = run_scenario(&sc, seed, ticks_max);
            if let Err(e) = write_outputs(&result, &out) {
                return fail(1, format!("{}: {e}", out.display()));
            }
            let m = &result.metrics;
            eprintln!("{:?} after {} ticks ({:.1} s), capture {}", m.outcome, m.ticks, m.duration, m.capture_success);
            if let Some(r) = &m.abort_reason {
                eprintln!("abort reason: {r:?}");
            }
            if verify {
                match verify_run(&out) {
                    Ok(rep) => {
                        print_json(&rep);
                        if !rep.passed() {
                            return fail(3, "barrier verification failed");
                        }
                    }
                    Err(e) => return fail(1, e),
                }
            }
            ExitCode::from(result.exit_code() as u8)
        }
        Cmd::SolveOnce { problem } => {
            let req: SolveRequest = match read_json(&problem) {
                Ok(r) => r,
                Err(e) => return fail(1, e),
            };
            match solve_once(&req) {
                Ok(sol) => {
                    print_json(&sol);
                    ExitCode::SUCCESS
                }
                Err(e) => fail(2, e),
            }
        }
        Cmd::FitPlane { cloud, seed, iterations, tol } => {
            let c = match PointCloud::read_xyz(&cloud) {
                Ok(c) => c,
                Err(e) => return fail(1, e),
            };
            match fit_plane(&c, &RansacParams { iterations, inlier_tol_m: tol, seed }) {
                Ok(r) => {
                    print_json(&r);
                    ExitCode::SUCCESS
                }
                Err(e) => fail(2, e),
            }
        }
        Cmd::Pnp { keypoints } => {
            let req: PnpRequest = match read_json(&keypoints) {
                Ok(r) => r,
                Err(e) => return fail(1, e),
            };
            match pnp(&req) {
                Ok(r) => {
                    print_json(&r);
                    ExitCode::SUCCESS
                }
                Err(e) => fail(2, e),
            }
        }
        Cmd::Verify { run, problem, solution } => {
            let rep = if let Some(dir) = run {
                verify_run(&dir)
            } else if let (Some(p), Some(s)) = (problem, solution) {
                read_json::<SolveRequest>(&p).and_then(|req| {
                    let sol: NmpcSolution = read_json(&s)?;
                    Ok(verify_solution(&sol, &req.problem.barriers, req.model.dt))
                })
            } else {
                Err("pass --run DIR, or --problem and --solution".into())
            };
            match rep {
                Ok(r) => {
                    print_json(&r);
                    if r.passed() {
                        ExitCode::SUCCESS
                    } else {
                        ExitCode::from(3)
                    }
                }
                Err(e) => fail(1, e),
            }
        }
        Cmd::Calibrate { frames, seed } => {
            let sensors = SensorConfig::default();
            let p = PerceptionParams { intrinsics: sensors.camera.intrinsics, ..Default::default() };
            let sigma_px = calibrate_camera(&sensors.camera, &p, 0.17, frames, seed);
            let cam = trolley_core::sim::CameraConfig { noise_px: sigma_px, ..sensors.camera.clone() };
            let cam_stats = camera_error_stats(&cam, &p, &TrialRanges::long_range(), frames, seed);
            let (sigma_m, density) = calibrate_lidar(&sensors.lidar, &p, 0.03, 0.02, frames, seed);
            let lidar = trolley_core::sim::LidarConfig { noise_m: sigma_m, density, ..sensors.lidar.clone() };
            let lidar_stats = lidar_error_stats(&lidar, &p, &TrialRanges::short_range(), frames, seed);
            print_json(&serde_json::json!({
                "camera": { "noise_px": sigma_px, "stats": cam_stats },
                "lidar": { "noise_m": sigma_m, "density": density, "stats": lidar_stats },
            }));
            ExitCode::SUCCESS
        }
    }
}
