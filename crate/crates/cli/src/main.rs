mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

#[derive(Parser, Debug)]
#[command(name = "liftcore", version, about = "Lift a single image into a canonical Gaussian scene")]
struct Cli {
    /// Pipeline configuration (TOML).
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Overrides the configured seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Plan the articulated camera trajectory.
    Plan(PlanArgs),
    /// Emit a synthetic dataset with exact ground truth.
    Synth(SynthArgs),
    /// Estimate the relative pose of every match-graph edge.
    Match(MatchArgs),
    /// Chain relative poses into global poses and merge the point cloud.
    Register(RegisterArgs),
    /// Align relative depth maps to the registered absolute depth.
    Calibrate(CalibrateArgs),
    /// Train the canonical Gaussian scene.
    Train(TrainArgs),
    /// Render PNGs at given poses.
    Render(RenderArgs),
    /// Score a trained scene on held-out views.
    Eval(EvalArgs),
}

#[derive(Args, Debug)]
pub struct PlanArgs {
    /// Frames per clip.
    #[arg(long)]
    pub l: Option<usize>,
    /// First-stage directions (2 or 4).
    #[arg(long = "D")]
    pub directions: Option<usize>,
    #[arg(long)]
    pub translation: Option<f64>,
    #[arg(long)]
    pub rotation: Option<f64>,
    #[arg(long, default_value = "plan.json")]
    pub out: PathBuf,
}

#[derive(Args, Debug)]
pub struct SynthArgs {
    #[arg(long)]
    pub out: PathBuf,
    /// Existing plan; otherwise one is made from the plan flags and config.
    #[arg(long)]
    pub plan: Option<PathBuf>,
    #[arg(long)]
    pub l: Option<usize>,
    #[arg(long = "D")]
    pub directions: Option<usize>,
    #[arg(long)]
    pub translation: Option<f64>,
    /// `none` or `smooth-warp`.
    #[arg(long)]
    pub distortion: Option<String>,
    #[arg(long)]
    pub amplitude: Option<f64>,
    #[arg(long)]
    pub resolution: Option<usize>,
    #[arg(long)]
    pub eval_views: Option<usize>,
    #[arg(long)]
    pub extra_edges: Option<usize>,
}

#[derive(Args, Debug)]
pub struct MatchArgs {
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long, default_value = "relative_poses.json")]
    pub out: PathBuf,
    #[arg(long)]
    pub extra_edges: Option<usize>,
}

#[derive(Args, Debug)]
pub struct RegisterArgs {
    #[arg(long)]
    pub data: PathBuf,
    /// Output of `match`.
    #[arg(long)]
    pub relative: PathBuf,
    /// Receives poses.json and points.ply.
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long)]
    pub focal: Option<f64>,
}

#[derive(Args, Debug)]
pub struct CalibrateArgs {
    #[arg(long)]
    pub data: PathBuf,
    /// Output of `register`, for the per-frame scales.
    #[arg(long)]
    pub poses: PathBuf,
    /// Receives depth/<frame>.pfm and calibration.json.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Args, Debug)]
pub struct TrainArgs {
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long)]
    pub poses: PathBuf,
    /// Merged cloud from `register`.
    #[arg(long)]
    pub points: PathBuf,
    /// Output directory of `calibrate`; no depth loss without it.
    #[arg(long)]
    pub depth: Option<PathBuf>,
    /// Receives gaussians.ply, field.bin, metrics.jsonl and checkpoints/.
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long)]
    pub vanilla_iters: Option<usize>,
    #[arg(long)]
    pub field_iters: Option<usize>,
    #[arg(long)]
    pub max_points: Option<usize>,
}

#[derive(Args, Debug)]
pub struct RenderArgs {
    /// Scene to render; an empty scene when omitted.
    #[arg(long)]
    pub gaussians: Option<PathBuf>,
    /// Field checkpoint, applied at `--stamp`.
    #[arg(long, requires = "stamp")]
    pub field: Option<PathBuf>,
    /// Frame stamp `ti,tj`.
    #[arg(long, value_parser = floats::<2>)]
    pub stamp: Option<[f64; 2]>,
    /// `identity`, a frame id from `--poses`, or `all`.
    #[arg(long, default_value = "identity")]
    pub pose: String,
    #[arg(long)]
    pub poses: Option<PathBuf>,
    #[arg(long)]
    pub focal: Option<f64>,
    #[arg(long)]
    pub width: Option<usize>,
    #[arg(long)]
    pub height: Option<usize>,
    /// Background `r,g,b`; defaults to the training background.
    #[arg(long, value_parser = floats::<3>)]
    pub background: Option<[f64; 3]>,
    /// PNG path, or a directory for `--pose all`.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Args, Debug)]
pub struct EvalArgs {
    /// Synthetic dataset with held-out views.
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long)]
    pub gaussians: PathBuf,
    /// Registered poses, used to map the held-out poses into the scene frame.
    #[arg(long)]
    pub poses: PathBuf,
    #[arg(long)]
    pub steps: Option<usize>,
    #[arg(long, default_value = "eval.json")]
    pub out: PathBuf,
}

/// One line on stderr: `error[kind]: message`.
fn report(err: &anyhow::Error) {
    let kind = err
        .chain()
        .find_map(|e| e.downcast_ref::<liftcore::Error>())
        .map(liftcore::Error::kind)
        .unwrap_or("cli");
    let msg = format!("{err:#}").replace(['\n', '\r'], " ");
    eprintln!("error[{kind}]: {msg}");
}

fn init_threads() -> anyhow::Result<()> {
    if let Ok(v) = std::env::var("LIFTCORE_THREADS") {
        let n: usize = v
            .trim()
            .parse()
            .map_err(|_| anyhow::anyhow!("LIFTCORE_THREADS must be a positive integer, got {v:?}"))?;
        if n == 0 {
            anyhow::bail!("LIFTCORE_THREADS must be positive");
        }
        rayon::ThreadPoolBuilder::new().num_threads(n).build_global()?;
    }
    Ok(())
}

fn run(cli: Cli) -> anyhow::Result<()> {
    init_threads()?;
    let mut cfg = config::PipelineConfig::load(cli.config.as_deref())?;
    if let Some(s) = cli.seed {
        cfg.seed = s;
    }
    match cli.command {
        Command::Plan(a) => commands::plan(&cfg, a),
        Command::Synth(a) => commands::synth(&cfg, a),
        Command::Match(a) => commands::match_edges(&cfg, a),
        Command::Register(a) => commands::register(&cfg, a),
        Command::Calibrate(a) => commands::calibrate(&cfg, a),
        Command::Train(a) => commands::train(&cfg, a),
        Command::Render(a) => commands::render(&cfg, a),
        Command::Eval(a) => commands::eval(&cfg, a),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) if !e.use_stderr() => {
            let _ = e.print();
            return ExitCode::SUCCESS;
        }
        Err(e) => {
            let msg = e.kind().to_string();
            let detail = e.to_string();
            let first = detail.lines().next().unwrap_or(&msg).trim_start_matches("error: ");
            eprintln!("error[usage]: {first}");
            return ExitCode::FAILURE;
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            report(&e);
            ExitCode::FAILURE
        }
    }
}

/// Parses exactly `N` comma-separated numbers.
fn floats<const N: usize>(s: &str) -> Result<[f64; N], String> {
    let v = s
        .split(',')
        .map(|x| x.trim().parse::<f64>().map_err(|e| format!("{x:?}: {e}")))
        .collect::<Result<Vec<_>, _>>()?;
    v.try_into().map_err(|v: Vec<f64>| format!("expected {N} comma-separated values, got {}", v.len()))
}
