//! Command-line front end.
//!
//! Exit codes: 0 success, 1 validation error (bad flags, config, or
//! inputs), 2 numerical failure (non-finite gradients or a failed grad
//! check). All outputs land under `--out`; identical argv, config and seed
//! produce byte-identical files.

use boxtraj::editing::EditMode;
use boxtraj::evaluation::{miou, offset_blob_suite, run_sweep, trajectory_deviation};
use boxtraj::geometry::{filter_trajectory, interpolate_trajectory};
use boxtraj::grad::gradcheck;
use boxtraj::io::{
    gradcheck_to_csv, opt_report_to_csv, opt_report_to_json, read_detections_jsonl,
    read_trajectory_json, render_heatmap, sweep_to_csv, write_field, write_trajectory_json,
    RunConfig,
};
use boxtraj::masks::{binary_mask, box_mask, gaussian_map, smooth_step_mask};
use boxtraj::optimizer::{optimize_trajectory, OptimizeError};
use clap::error::ErrorKind;
use clap::{Args, Parser, Subcommand, ValueEnum};
use std::fmt::Write as _;
use std::path::PathBuf;
use std::process::ExitCode;

#[derive(Parser)]
#[command(
    name = "boxtraj",
    about = "Differentiable attention-map editing and box-trajectory adjustment",
    version
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Rasterize the Gaussian, step, combined and binary masks
    RenderMasks(CommonArgs),
    /// Run the attention stack with each edit and dump the fields
    Edit(CommonArgs),
    /// Adjust the configured trajectory against the attention stack
    Optimize(CommonArgs),
    /// Compare analytic gradients against finite differences
    Gradcheck(CommonArgs),
    /// Interpolate and filter a detection stream into a trajectory
    FilterTraj(CommonArgs),
    /// Closest-box mean IoU between controls and detections
    EvalMiou(CommonArgs),
    /// Ladder one parameter over the offset-blob fixture suite
    Sweep(CommonArgs),
}

impl Command {
    fn args(&self) -> &CommonArgs {
        match self {
            Command::RenderMasks(a)
            | Command::Edit(a)
            | Command::Optimize(a)
            | Command::Gradcheck(a)
            | Command::FilterTraj(a)
            | Command::EvalMiou(a)
            | Command::Sweep(a) => a,
        }
    }
}

#[derive(Args)]
struct CommonArgs {
    /// Configuration file (defaults apply when omitted)
    #[arg(long)]
    config: Option<PathBuf>,
    /// Seed override; BOXTRAJ_SEED is the fallback when neither this nor
    /// the config sets one
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory
    #[arg(long, default_value = "out")]
    out: PathBuf,
    /// Report format
    #[arg(long, value_enum, default_value_t = Format::Csv)]
    format: Format,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Format {
    Csv,
    Json,
}

/// Failures mapped onto exit codes.
enum CliError {
    /// Exit 1: bad input, config, or rejected data.
    Validation(String),
    /// Exit 2: numerical failure.
    Numerical(String),
}

impl CliError {
    fn validation(e: impl std::fmt::Display) -> Self {
        Self::Validation(e.to_string())
    }
}

impl From<boxtraj::io::IoError> for CliError {
    fn from(e: boxtraj::io::IoError) -> Self {
        Self::Validation(e.to_string())
    }
}

impl From<OptimizeError> for CliError {
    fn from(e: OptimizeError) -> Self {
        match e {
            OptimizeError::Numerical { .. } => Self::Numerical(e.to_string()),
            OptimizeError::Eval(inner) => Self::Numerical(inner.to_string()),
            other => Self::Validation(other.to_string()),
        }
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) if matches!(e.kind(), ErrorKind::DisplayHelp | ErrorKind::DisplayVersion) => {
            print!("{e}");
            return ExitCode::SUCCESS;
        }
        Err(e) => {
            eprint!("{e}");
            return ExitCode::from(1);
        }
    };
    match run(&cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(CliError::Validation(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(1)
        }
        Err(CliError::Numerical(msg)) => {
            eprintln!("numerical failure: {msg}");
            ExitCode::from(2)
        }
    }
}

fn run(command: &Command) -> Result<(), CliError> {
    let args = command.args();
    let mut config = match &args.config {
        Some(path) => RunConfig::from_path(path)?,
        None => RunConfig::default(),
    };
    if let Some(seed) = args.seed {
        config.set_seed(seed);
    } else if !config.is_explicit("seed") {
        if let Ok(env_seed) = std::env::var("BOXTRAJ_SEED") {
            let parsed = env_seed
                .parse::<u64>()
                .map_err(|_| CliError::Validation(format!("BOXTRAJ_SEED=`{env_seed}` is not an integer")))?;
            config.set_seed(parsed);
        }
    }
    std::fs::create_dir_all(&args.out).map_err(CliError::validation)?;

    match command {
        Command::RenderMasks(args) => render_masks(&config, args),
        Command::Edit(args) => edit_dump(&config, args),
        Command::Optimize(args) => optimize(&config, args),
        Command::Gradcheck(args) => run_gradcheck(&config, args),
        Command::FilterTraj(args) => filter_traj(&config, args),
        Command::EvalMiou(args) => eval_miou(&config, args),
        Command::Sweep(args) => sweep(&config, args),
    }
}

fn render_masks(config: &RunConfig, args: &CommonArgs) -> Result<(), CliError> {
    let traj = config.user_trajectory()?;
    let spec = config.backbone_spec()?;
    let params = config.mask_params()?;
    let layer = spec.ladder.first().copied().ok_or_else(|| {
        CliError::Validation("empty ladder".into())
    })?;
    let b = &traj.frames[0];
    let (h, w) = (layer.height, layer.width);

    let gaussian = gaussian_map(b, h, w, &params);
    let (step_x, step_y) = smooth_step_mask(b, h, w, &params);
    let combined = box_mask(b, h, w, &params);
    let binary = binary_mask(b, h, w);
    for (name, grid) in [
        ("gaussian", &gaussian),
        ("step_x", &step_x),
        ("step_y", &step_y),
        ("combined", &combined),
        ("binary", &binary),
    ] {
        render_heatmap(grid, &args.out.join(format!("{name}.pgm")), &[*b])?;
        let data: Vec<f32> = grid.data.iter().map(|&v| v as f32).collect();
        write_field(
            &args.out.join(format!("{name}.afld")),
            &[h as u32, w as u32],
            &data,
        )?;
    }
    println!("wrote 5 masks at {h}x{w} to {}", args.out.display());
    Ok(())
}

fn edit_dump(config: &RunConfig, args: &CommonArgs) -> Result<(), CliError> {
    let spec = config.backbone_spec()?;
    let stack = spec.build().map_err(CliError::validation)?;
    let scene = config.scene_spec()?;
    let traj = config.user_trajectory()?;
    let edit_params = config.edit_params()?;
    let mask_params = config.mask_params()?;

    for (name, mode) in [
        ("identity", EditMode::Identity),
        ("baseline", EditMode::Baseline),
        ("smooth", EditMode::Differentiable),
    ] {
        let run = stack
            .run_stack(&scene, &traj, mode, 1, &edit_params, &mask_params)
            .map_err(CliError::validation)?;
        for (l, rec) in run.layers.iter().enumerate() {
            let field = &rec.post_edit;
            let plane = field.plane(0, 0, 0);
            render_heatmap(
                &plane,
                &args.out.join(format!("{name}_layer{l}.pgm")),
                &[traj.frames[0]],
            )?;
            let data: Vec<f32> = field.data.iter().map(|&v| v as f32).collect();
            write_field(
                &args.out.join(format!("{name}_layer{l}.afld")),
                &[
                    field.channels as u32,
                    field.frames as u32,
                    field.height as u32,
                    field.width as u32,
                    field.tokens as u32,
                ],
                &data,
            )?;
        }
        println!("{name}: dumped {} layers", run.layers.len());
    }
    Ok(())
}

fn optimize(config: &RunConfig, args: &CommonArgs) -> Result<(), CliError> {
    let spec = config.backbone_spec()?;
    let stack = spec.build().map_err(CliError::validation)?;
    let scene = config.scene_spec()?;
    let user = config.user_trajectory()?;
    if user.len() != scene.frames() {
        return Err(CliError::Validation(format!(
            "trajectory has {} frames but the scene has {}",
            user.len(),
            scene.frames()
        )));
    }
    let weights = config.loss_weights()?;
    let loop_cfg = config.loop_config()?;
    let edit_params = config.edit_params()?;
    let mask_params = config.mask_params()?;
    let canvas = config.canvas()?;

    let report = optimize_trajectory(
        &user,
        &stack,
        &scene,
        &weights,
        &loop_cfg,
        &edit_params,
        &mask_params,
    )?;
    for warning in &report.warnings {
        eprintln!("warning: {warning}");
    }
    match args.format {
        Format::Csv => {
            std::fs::write(args.out.join("report.csv"), opt_report_to_csv(&report))
                .map_err(CliError::validation)?;
        }
        Format::Json => {
            std::fs::write(
                args.out.join("report.json"),
                opt_report_to_json(&report, canvas),
            )
            .map_err(CliError::validation)?;
        }
    }
    write_trajectory_json(
        &args.out.join("final_traj.json"),
        &report.final_trajectory,
        canvas,
    )?;
    let deviation = trajectory_deviation(&report.final_trajectory, &user);
    println!(
        "optimized {} iterations over {} edit steps; total {:.6} -> {:.6}; deviation {:.6}; wall {:?}",
        report.rows.len(),
        report.edit_steps,
        report.rows.first().map(|r| r.total).unwrap_or(f64::NAN),
        report.rows.last().map(|r| r.total).unwrap_or(f64::NAN),
        deviation,
        report.wall,
    );
    Ok(())
}

fn run_gradcheck(config: &RunConfig, args: &CommonArgs) -> Result<(), CliError> {
    let check_config = config.gradcheck_config()?;
    let report = gradcheck(&check_config).map_err(|e| CliError::Numerical(e.to_string()))?;
    match args.format {
        Format::Csv => {
            std::fs::write(args.out.join("gradcheck.csv"), gradcheck_to_csv(&report))
                .map_err(CliError::validation)?;
        }
        Format::Json => {
            let doc = serde_json::json!({
                "comparisons": report.rows.len(),
                "p95": report.p95,
                "tolerance": report.tolerance,
                "passed": report.passed,
            });
            std::fs::write(
                args.out.join("gradcheck.json"),
                serde_json::to_string_pretty(&doc).expect("serializes") + "\n",
            )
            .map_err(CliError::validation)?;
        }
    }
    println!("{}", report.summary());
    if report.passed {
        Ok(())
    } else {
        Err(CliError::Numerical(format!(
            "gradcheck p95 {:.3e} exceeds tolerance {:.1e}",
            report.p95, report.tolerance
        )))
    }
}

fn filter_traj(config: &RunConfig, args: &CommonArgs) -> Result<(), CliError> {
    let path = config
        .detections_file()
        .ok_or_else(|| CliError::Validation("filter-traj needs `detections_file`".into()))?;
    let records = read_detections_jsonl(&path)?;
    let total = match config.total_frames()? {
        Some(t) => t,
        None => records
            .iter()
            .map(|r| r.frame_index + 1)
            .max()
            .ok_or_else(|| CliError::Validation("empty detection stream".into()))?,
    };
    let interpolated =
        interpolate_trajectory(&records, total).map_err(CliError::validation)?;
    let window = config.window()?;
    let seed = config.seed()?;
    let filtered =
        filter_trajectory(&interpolated, window, seed).map_err(CliError::validation)?;
    write_trajectory_json(&args.out.join("trajectory.json"), &filtered, config.canvas()?)?;
    println!(
        "accepted: {} detected frames -> {} interpolated -> window of {}",
        records.iter().filter(|r| !r.boxes.is_empty()).count(),
        total,
        filtered.len(),
    );
    Ok(())
}

fn eval_miou(config: &RunConfig, args: &CommonArgs) -> Result<(), CliError> {
    let controls_path = config
        .controls_file()
        .ok_or_else(|| CliError::Validation("eval-miou needs `controls_file`".into()))?;
    let detections_path = config
        .detections_file()
        .ok_or_else(|| CliError::Validation("eval-miou needs `detections_file`".into()))?;
    let controls = read_trajectory_json(&controls_path)?.to_trajectory()?;
    let detections = read_detections_jsonl(&detections_path)?;
    let value = miou(&controls, &detections).map_err(CliError::validation)?;
    match args.format {
        Format::Csv => {
            let mut out = String::from("miou\n");
            let _ = writeln!(out, "{}", boxtraj::io::fmt_float(value));
            std::fs::write(args.out.join("miou.csv"), out).map_err(CliError::validation)?;
        }
        Format::Json => {
            std::fs::write(
                args.out.join("miou.json"),
                serde_json::to_string_pretty(&serde_json::json!({ "miou": value }))
                    .expect("serializes")
                    + "\n",
            )
            .map_err(CliError::validation)?;
        }
    }
    println!("miou {value:.6}");
    Ok(())
}

fn sweep(config: &RunConfig, args: &CommonArgs) -> Result<(), CliError> {
    let spec = config.sweep_spec()?;
    let fixtures = offset_blob_suite(config.user_trajectory()?.len());
    let table = run_sweep(&spec, &fixtures)?;
    match args.format {
        Format::Csv => {
            std::fs::write(args.out.join("sweep.csv"), sweep_to_csv(&table))
                .map_err(CliError::validation)?;
        }
        Format::Json => {
            let rows: Vec<_> = table
                .rows
                .iter()
                .map(|r| {
                    serde_json::json!({
                        "value": r.value,
                        "mean_deviation": r.mean_deviation,
                        "mean_inside_mass": r.mean_inside_mass,
                        "mean_total_loss": r.mean_total_loss,
                    })
                })
                .collect();
            let doc = serde_json::json!({
                "parameter": table.parameter.name(),
                "rows": rows,
            });
            std::fs::write(
                args.out.join("sweep.json"),
                serde_json::to_string_pretty(&doc).expect("serializes") + "\n",
            )
            .map_err(CliError::validation)?;
        }
    }
    for row in &table.rows {
        println!(
            "{} = {:<10} deviation {:.5}  inside-mass {:.4}  loss {:.5}",
            table.parameter.name(),
            row.value,
            row.mean_deviation,
            row.mean_inside_mass,
            row.mean_total_loss,
        );
    }
    Ok(())
}
