//! Command-line front door: simulate datasets, run the SLAM pipeline,
//! evaluate trajectories, and emit preset configs.

use clap::{Args, Parser, Subcommand};
use slam2d::config::{instantiate, preset_config, write_config, Registry};
use slam2d::dataset::{parse_dataset, write_dataset};
use slam2d::eval::{
    align_trajectories, associate, ate, parse_tum, render_map_svg, rpe, write_tum, MetricReport,
    Trajectory,
};
use slam2d::geometry::Pose2;
use slam2d::graph::serialize_graph;
use slam2d::pipeline::{run_pipeline, world_points};
use slam2d::sim::{
    parse_path, parse_robot, parse_world, path_preset, robot_preset, simulate, world_preset,
    MotionCommand, RobotModel, World,
};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

#[derive(Parser)]
#[command(name = "slam", about = "Multi-cue 2D graph SLAM toolkit", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a dataset and ground truth from a world, path and robot.
    Simulate(SimulateArgs),
    /// Run the SLAM pipeline over a dataset.
    Run(RunArgs),
    /// Compare an estimated trajectory against ground truth.
    Eval(EvalArgs),
    /// Config file utilities.
    Config {
        #[command(subcommand)]
        command: ConfigCommand,
    },
}

#[derive(Args)]
struct SimulateArgs {
    /// World file, or a preset name: box, office, corridor, two_room.
    #[arg(long)]
    world: String,
    /// Path file, or a preset name matching the world presets.
    #[arg(long)]
    path: String,
    /// Robot file, or a preset name: single, dual, single-noiseless,
    /// dual-noiseless.
    #[arg(long)]
    robot: String,
    #[arg(long)]
    seed: u64,
    /// Output dataset (JSON lines).
    #[arg(long)]
    out: PathBuf,
    /// Output ground-truth trajectory (TUM format).
    #[arg(long)]
    gt: PathBuf,
}

#[derive(Args)]
struct RunArgs {
    /// Config file, or a preset name: lidar-single, lidar-dual,
    /// lidar-dual-odom.
    #[arg(long)]
    config: String,
    #[arg(long)]
    dataset: PathBuf,
    /// Output estimated trajectory (TUM format).
    #[arg(long)]
    traj: PathBuf,
    /// Output pose graph (JSON lines).
    #[arg(long)]
    graph: PathBuf,
    /// Output map rendering (SVG).
    #[arg(long)]
    map: PathBuf,
    /// Ground-truth trajectory; enables the metric report.
    #[arg(long)]
    gt: Option<PathBuf>,
    /// Write a graph snapshot every N packets, next to the graph file.
    #[arg(long, value_name = "N")]
    save_graph_every: Option<usize>,
}

#[derive(Args)]
struct EvalArgs {
    #[arg(long)]
    gt: PathBuf,
    #[arg(long)]
    est: PathBuf,
    /// RPE frame delta.
    #[arg(long, default_value_t = 1)]
    delta: usize,
    /// Skip the rigid alignment before ATE.
    #[arg(long)]
    no_align: bool,
}

#[derive(Subcommand)]
enum ConfigCommand {
    /// Print a preset config to stdout.
    New {
        /// One of: lidar-single, lidar-dual, lidar-dual-odom.
        #[arg(long)]
        preset: String,
    },
}

fn fail(msg: impl std::fmt::Display) -> String {
    msg.to_string()
}

fn read(path: &Path) -> Result<String, String> {
    std::fs::read_to_string(path).map_err(|e| format!("{}: {e}", path.display()))
}

fn write(path: &Path, text: &str) -> Result<(), String> {
    std::fs::write(path, text).map_err(|e| format!("{}: {e}", path.display()))
}

fn load_world(arg: &str) -> Result<World, String> {
    match world_preset(arg) {
        Some(w) if !Path::new(arg).exists() => Ok(w),
        _ => parse_world(&read(Path::new(arg))?).map_err(fail),
    }
}

fn load_path(arg: &str) -> Result<(Pose2, Vec<MotionCommand>), String> {
    match path_preset(arg) {
        Some(p) if !Path::new(arg).exists() => Ok(p),
        _ => parse_path(&read(Path::new(arg))?).map_err(fail),
    }
}

fn load_robot(arg: &str) -> Result<RobotModel, String> {
    let preset = match arg {
        "single" => Some(robot_preset(false, true)),
        "dual" => Some(robot_preset(true, true)),
        "single-noiseless" => Some(robot_preset(false, false)),
        "dual-noiseless" => Some(robot_preset(true, false)),
        _ => None,
    };
    match preset {
        Some(r) if !Path::new(arg).exists() => Ok(r),
        _ => parse_robot(&read(Path::new(arg))?).map_err(fail),
    }
}

fn load_config(arg: &str) -> Result<String, String> {
    match preset_config(arg) {
        Some(text) if !Path::new(arg).exists() => Ok(text),
        _ => read(Path::new(arg)),
    }
}

fn cmd_simulate(args: &SimulateArgs) -> Result<(), String> {
    let world = load_world(&args.world)?;
    let (spawn, path) = load_path(&args.path)?;
    let robot = load_robot(&args.robot)?;
    let (measurements, gt) = simulate(&world, &robot, &spawn, &path, args.seed).map_err(fail)?;
    write(&args.out, &write_dataset(&measurements))?;
    write(&args.gt, &write_tum(&gt))?;
    println!(
        "simulated {} measurements over {:.1} m ({} poses)",
        measurements.len(),
        gt.length(),
        gt.len()
    );
    Ok(())
}

fn metrics(
    gt: &Trajectory,
    est: &Trajectory,
    delta: usize,
    align: bool,
    frame_rate: f64,
) -> Result<MetricReport, String> {
    let pairs = associate(gt, est, 0.05).map_err(fail)?;
    let alignment = if align {
        align_trajectories(&pairs).map_err(fail)?
    } else {
        Pose2::identity()
    };
    let (rpe_trans, rpe_rot) = rpe(&pairs, delta).map_err(fail)?;
    Ok(MetricReport {
        ate_rmse: ate(&pairs, &alignment),
        rpe_rmse_trans: rpe_trans,
        rpe_rmse_rot: rpe_rot,
        frame_rate,
        trajectory_length: est.length(),
    })
}

fn print_report(r: &MetricReport, delta: usize) {
    println!("ate_rmse_m {:.6}", r.ate_rmse);
    println!("rpe_rmse_trans_m {:.6} (delta {delta})", r.rpe_rmse_trans);
    println!("rpe_rmse_rot_rad {:.6} (delta {delta})", r.rpe_rmse_rot);
    println!("frame_rate_hz {:.2}", r.frame_rate);
    println!("trajectory_length_m {:.2}", r.trajectory_length);
}

fn cmd_run(args: &RunArgs) -> Result<(), String> {
    let registry = Registry::builtin();
    let pipeline = instantiate(&registry, &load_config(&args.config)?).map_err(fail)?;
    let measurements = parse_dataset(&read(&args.dataset)?).map_err(fail)?;
    let result = run_pipeline(&pipeline, &measurements, args.save_graph_every).map_err(fail)?;
    write(&args.traj, &write_tum(&result.trajectory))?;
    write(&args.graph, &serialize_graph(&result.graph))?;
    write(
        &args.map,
        &render_map_svg(&world_points(&result.graph), &result.trajectory),
    )?;
    let graph_dir = args.graph.parent().unwrap_or(Path::new("."));
    for (step, text) in &result.checkpoints {
        write(&graph_dir.join(format!("graph_{step}.json")), text)?;
    }
    println!(
        "processed {} packets into {} nodes, {} loop edges ({} degenerate steps)",
        result.packet_count,
        result.graph.nodes.len(),
        result.accepted_loops,
        result.degenerate_steps
    );
    if let Some(gt_path) = &args.gt {
        let gt = parse_tum(&read(gt_path)?).map_err(fail)?;
        let report = metrics(&gt, &result.trajectory, 1, true, result.frame_rate())?;
        print_report(&report, 1);
    } else {
        println!("frame_rate_hz {:.2}", result.frame_rate());
    }
    Ok(())
}

fn cmd_eval(args: &EvalArgs) -> Result<(), String> {
    let gt = parse_tum(&read(&args.gt)?).map_err(fail)?;
    let est = parse_tum(&read(&args.est)?).map_err(fail)?;
    let report = metrics(&gt, &est, args.delta, !args.no_align, 0.0)?;
    print_report(&report, args.delta);
    Ok(())
}

fn cmd_config(command: &ConfigCommand) -> Result<(), String> {
    match command {
        ConfigCommand::New { preset } => {
            let text = preset_config(preset)
                .ok_or_else(|| format!("unknown preset '{preset}'"))?;
            // Normalize through the registry so the emitted file matches
            // what `write_config` would produce after a round trip.
            let registry = Registry::builtin();
            let pipeline = instantiate(&registry, &text).map_err(fail)?;
            print!("{}", write_config(&pipeline));
            Ok(())
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match &cli.command {
        Command::Simulate(args) => cmd_simulate(args),
        Command::Run(args) => cmd_run(args),
        Command::Eval(args) => cmd_eval(args),
        Command::Config { command } => cmd_config(command),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(msg) => {
            eprintln!("error: {}", msg.replace('\n', " "));
            ExitCode::FAILURE
        }
    }
}
