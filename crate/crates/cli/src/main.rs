//! `poseheads` command-line front end.
//!
//! Exit status:
//!
//! | code | meaning                                            |
//! |------|----------------------------------------------------|
//! | 0    | success                                            |
//! | 1    | usage error (bad flags, invalid argument values)   |
//! | 2    | I/O error (missing file, unwritable output)        |
//! | 3    | schema error (malformed record, config, skeleton)  |
//! | 4    | numeric failure (NaN metric, divergence, gradcheck)|

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use poseheads::records::OrientationTarget;
use poseheads::{Error, ErrorCategory};

mod eval;
mod train;

#[derive(Parser)]
#[command(name = "poseheads", version)]
#[command(about = "Pose, orientation and visibility head toolkit: metrics, gradient checks, toy training")]
struct Cli {
    /// Print machine-readable JSON instead of tables
    #[arg(long, global = true)]
    json: bool,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Dataset statistics (box diagonals, 3D box size, camera distance) per dataset
    Stats {
        /// Line-delimited record file
        records: PathBuf,
    },
    /// MPJPE of predicted 3D poses against ground truth
    EvalPose(EvalPoseArgs),
    /// Orientation accuracy at 22.5 and 45 degrees plus mean absolute error
    EvalOrient(EvalOrientArgs),
    /// Orientation histogram over [0, 360) as CSV
    Hist(HistArgs),
    /// Train the toy multi-head regressor on synthetic features
    TrainDemo(TrainDemoArgs),
    /// Learning-rate range test on the toy problem
    LrFind(LrFindArgs),
    /// Compare analytic gradients of every differentiable op against finite differences
    Gradcheck(GradcheckArgs),
}

#[derive(Args)]
struct EvalPoseArgs {
    /// Predicted records; with --flip-test each id also needs an `<id>:flipped` record
    #[arg(long)]
    pred: PathBuf,
    /// Ground-truth records
    #[arg(long)]
    gt: PathBuf,
    /// Average each prediction with the mirrored prediction on the flipped input
    #[arg(long)]
    flip_test: bool,
    /// Break MPJPE down by the ground-truth `action` tag
    #[arg(long)]
    by_action: bool,
    /// Millimetres per normalized unit
    #[arg(long, default_value_t = poseheads::skeleton::DEFAULT_HALF_RANGE_MM)]
    half_range_mm: f64,
    /// Builtin skeleton name (common17, extended26) or definition file; picked by joint count if omitted
    #[arg(long)]
    skeleton: Option<String>,
}

#[derive(Clone, Copy, ValueEnum)]
enum Target {
    Body,
    Head,
}

impl From<Target> for OrientationTarget {
    fn from(t: Target) -> Self {
        match t {
            Target::Body => OrientationTarget::Body,
            Target::Head => OrientationTarget::Head,
        }
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum Angle {
    Phi,
    Theta,
}

#[derive(Args)]
struct EvalOrientArgs {
    #[arg(long)]
    pred: PathBuf,
    #[arg(long)]
    gt: PathBuf,
    #[arg(long, value_enum)]
    target: Target,
    #[arg(long, value_enum)]
    angle: Angle,
}

#[derive(Args)]
struct HistArgs {
    records: PathBuf,
    #[arg(long, value_enum)]
    target: Target,
    #[arg(long)]
    bins: usize,
    #[arg(long)]
    out: PathBuf,
    /// Which angle to bin; theta values are binned over [0, 360) as well
    #[arg(long, value_enum, default_value = "phi")]
    angle: Angle,
}

#[derive(Args)]
struct TrainDemoArgs {
    /// TOML config; missing keys take their defaults
    #[arg(long)]
    config: Option<PathBuf>,
    /// Output directory for report.json and loss_curve.csv
    #[arg(long)]
    out: PathBuf,
    /// Override the config seed
    #[arg(long)]
    seed: Option<u64>,
    /// Override the config step count
    #[arg(long)]
    steps: Option<usize>,
}

#[derive(Args)]
struct LrFindArgs {
    #[arg(long)]
    config: Option<PathBuf>,
    /// Curve CSV (lr,loss,smoothed)
    #[arg(long, default_value = "lr_find.csv")]
    out: PathBuf,
}

#[derive(Args)]
struct GradcheckArgs {
    #[arg(long, default_value_t = 100)]
    trials: usize,
    /// Central-difference step
    #[arg(long, default_value_t = 1e-5)]
    eps: f64,
    /// Largest accepted relative error
    #[arg(long, default_value_t = poseheads::gradcheck::DEFAULT_TOLERANCE)]
    tolerance: f64,
    #[arg(long, default_value_t = 0x5eed)]
    seed: u64,
}

pub(crate) fn write_file(path: &Path, contents: &str) -> poseheads::Result<()> {
    std::fs::write(path, contents).map_err(|e| Error::from(e).at_path(path))
}

fn exit_code(e: &Error) -> u8 {
    match e.category() {
        ErrorCategory::Usage => 1,
        ErrorCategory::Io => 2,
        ErrorCategory::Schema => 3,
        ErrorCategory::Numeric => 4,
    }
}

fn gradcheck(args: &GradcheckArgs, json: bool) -> poseheads::Result<()> {
    use poseheads::gradcheck::{run_suite, SuiteConfig};
    if !(args.eps > 0.0 && args.eps.is_finite()) {
        return Err(Error::InvalidArgument(format!(
            "--eps must be positive, got {}",
            args.eps
        )));
    }
    let report = run_suite(&SuiteConfig {
        trials: args.trials,
        eps: args.eps,
        seed: args.seed,
    })?;
    if json {
        println!(
            "{}",
            serde_json::to_string_pretty(&report).expect("report serializes")
        );
    } else {
        println!("{:<28} {:>8} {:>12}", "op", "trials", "max_rel_err");
        for op in &report.ops {
            println!("{:<28} {:>8} {:>12.3e}", op.name, op.trials, op.max_rel_err);
        }
    }
    if report.passed(args.tolerance) {
        Ok(())
    } else {
        let worst = report
            .ops
            .iter()
            .filter(|o| o.max_rel_err >= args.tolerance || o.max_rel_err.is_nan())
            .map(|o| o.name.as_str())
            .collect::<Vec<_>>()
            .join(", ");
        log::error!("gradient check above {:e}: {worst}", args.tolerance);
        Err(Error::Tolerance {
            what: "gradient check max relative error",
            value: report.worst(),
            limit: args.tolerance,
        })
    }
}

fn run(cli: Cli) -> poseheads::Result<()> {
    let json = cli.json;
    match cli.command {
        Command::Stats { records } => eval::stats(&records, json),
        Command::EvalPose(a) => eval::eval_pose(&a, json),
        Command::EvalOrient(a) => eval::eval_orient(&a, json),
        Command::Hist(a) => eval::hist(&a),
        Command::TrainDemo(a) => train::train_demo(&a, json),
        Command::LrFind(a) => train::lr_find(&a, json),
        Command::Gradcheck(a) => gradcheck(&a, json),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}
