use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use log::{error, warn};

use gridplan::config::{Branch, RunConfig};
use gridplan::overlay::{ColorRamp, HexColor};
use gridplan::pipeline::{self, EvaluateRequest, LoraDemoParams};

const EXIT_OK: u8 = 0;
const EXIT_FATAL: u8 = 1;
const EXIT_WARN: u8 = 2;

#[derive(Parser, Debug)]
#[command(
    name = "gridplan",
    version,
    about = "Grid-image supervision and evaluation for robot manipulation episodes"
)]
struct Cli {
    /// JSON run configuration; flags override its fields
    #[arg(long, global = true)]
    config: Option<PathBuf>,

    /// Worker threads for per-episode work
    #[arg(long, global = true, default_value_t = 1)]
    jobs: usize,

    #[arg(long, global = true)]
    seed: Option<u64>,

    #[arg(long, short, global = true)]
    verbose: bool,

    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Debug, Default)]
struct RampArgs {
    /// Color of the earliest segment, #rrggbb
    #[arg(long)]
    traj_color_start: Option<HexColor>,

    /// Color of the latest segment, #rrggbb
    #[arg(long)]
    traj_color_end: Option<HexColor>,

    #[arg(long)]
    stroke_width: Option<u32>,
}

impl RampArgs {
    fn apply(&self, ramp: &mut ColorRamp) {
        if let Some(c) = self.traj_color_start {
            ramp.start_color = c;
        }
        if let Some(c) = self.traj_color_end {
            ramp.end_color = c;
        }
        if let Some(w) = self.stroke_width {
            ramp.stroke_width = w;
        }
    }
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Build supervision pairs for every episode in a dataset root
    Synthesize {
        #[arg(long)]
        dataset_root: Option<PathBuf>,
        #[arg(long)]
        output_root: Option<PathBuf>,
        #[arg(long)]
        branch: Option<Branch>,
        /// Frames sampled per episode
        #[arg(long)]
        count: Option<usize>,
        /// Resize sampled frames to HEIGHTxWIDTH
        #[arg(long, value_parser = parse_size)]
        resize: Option<(u32, u32)>,
        #[arg(long)]
        prompt_template: Option<String>,
        #[command(flatten)]
        ramp: RampArgs,
    },
    /// Split a grid PNG into frame_1.png … frame_9.png
    Split { grid: PathBuf, output_dir: PathBuf },
    /// Draw a trajectory (JSON array of [x, y]) over a frame
    Overlay {
        frame: PathBuf,
        trajectory: PathBuf,
        output: PathBuf,
        #[command(flatten)]
        ramp: RampArgs,
    },
    /// Score predicted episodes against references
    Evaluate {
        #[arg(long)]
        pred: PathBuf,
        #[arg(long)]
        gt: PathBuf,
        #[arg(long)]
        real_features: Option<PathBuf>,
        #[arg(long)]
        gen_features: Option<PathBuf>,
        #[arg(long)]
        labels: Option<PathBuf>,
        /// Directory for report.json, episodes.jsonl and table.txt
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long, default_value = "")]
        dataset: String,
        #[arg(long, default_value = "")]
        method: String,
    },
    /// Exercise the adapter algebra on a toy attention block and print a JSON report
    LoraDemo {
        #[arg(long, default_value_t = 64)]
        d_model: usize,
        #[arg(long, default_value_t = 128)]
        d_ff: usize,
        #[arg(long, default_value_t = 4)]
        rank: usize,
        #[arg(long, default_value_t = 1.0)]
        alpha: f64,
    },
    /// Report manifest violations under a dataset root
    Validate {
        #[arg(long)]
        dataset_root: Option<PathBuf>,
    },
}

fn parse_size(s: &str) -> Result<(u32, u32), String> {
    let (h, w) = s
        .split_once(['x', 'X'])
        .ok_or_else(|| format!("{s:?} is not HEIGHTxWIDTH"))?;
    let h: u32 = h.trim().parse().map_err(|e| format!("height: {e}"))?;
    let w: u32 = w.trim().parse().map_err(|e| format!("width: {e}"))?;
    if h == 0 || w == 0 {
        return Err("size must be positive".into());
    }
    Ok((h, w))
}

fn run(cli: Cli) -> Result<u8, gridplan::Error> {
    let mut config = match &cli.config {
        Some(path) => RunConfig::load(path)?,
        None => RunConfig::default(),
    };
    if let Some(seed) = cli.seed {
        config.seed = seed;
    }
    let jobs = cli.jobs.max(1);

    match cli.command {
        Command::Synthesize {
            dataset_root,
            output_root,
            branch,
            count,
            resize,
            prompt_template,
            ramp,
        } => {
            if dataset_root.is_some() {
                config.dataset_root = dataset_root;
            }
            if output_root.is_some() {
                config.output_root = output_root;
            }
            if let Some(b) = branch {
                config.branch = b;
            }
            if let Some(k) = count {
                config.sampling.target_count = k;
            }
            if resize.is_some() {
                config.sampling.resize_to = resize;
            }
            if let Some(t) = prompt_template {
                config.prompt_template = t;
            }
            ramp.apply(&mut config.ramp);
            let summary = pipeline::synthesize(&config, jobs)?;
            println!(
                "{}",
                serde_json::json!({
                    "episodes": summary.episodes_seen,
                    "pairs_written": summary.pairs_written,
                    "episodes_skipped": summary.episodes_skipped,
                })
            );
            if summary.pairs_written == 0 {
                error!("no supervision pairs were written");
                return Ok(EXIT_FATAL);
            }
            Ok(EXIT_OK)
        }
        Command::Split { grid, output_dir } => {
            for path in pipeline::split(&grid, &output_dir)? {
                println!("{}", path.display());
            }
            Ok(EXIT_OK)
        }
        Command::Overlay {
            frame,
            trajectory,
            output,
            ramp,
        } => {
            ramp.apply(&mut config.ramp);
            pipeline::overlay(&frame, &trajectory, &output, &config.ramp)?;
            Ok(EXIT_OK)
        }
        Command::Evaluate {
            pred,
            gt,
            real_features,
            gen_features,
            labels,
            out,
            dataset,
            method,
        } => {
            let req = EvaluateRequest {
                pred_dir: pred,
                gt_dir: gt,
                real_features,
                gen_features,
                labels,
                dataset,
                method,
            };
            let outcome = pipeline::evaluate(&req, &config, jobs)?;
            for w in &outcome.warnings {
                warn!("{w}");
            }
            if let Some(dir) = out {
                pipeline::write_evaluation(&outcome, &dir)?;
            }
            println!(
                "{}",
                serde_json::to_string_pretty(&outcome.report).expect("report serializes")
            );
            Ok(if outcome.warnings.is_empty() {
                EXIT_OK
            } else {
                EXIT_WARN
            })
        }
        Command::LoraDemo {
            d_model,
            d_ff,
            rank,
            alpha,
        } => {
            let report = pipeline::lora_demo(LoraDemoParams {
                d_model,
                d_ff,
                rank,
                alpha,
                seed: config.seed,
            })?;
            println!("{}", serde_json::to_string_pretty(&report).expect("report serializes"));
            Ok(EXIT_OK)
        }
        Command::Validate { dataset_root } => {
            let root = dataset_root
                .or(config.dataset_root)
                .ok_or_else(|| gridplan::Error::InvalidInput("dataset root not given".into()))?;
            let checks = pipeline::validate_dataset(&root)?;
            let mut dirty = false;
            for check in &checks {
                dirty |= !check.violations.is_empty();
                println!("{}", serde_json::to_string(check).expect("check serializes"));
            }
            Ok(if dirty { EXIT_WARN } else { EXIT_OK })
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let level = if cli.verbose { "info" } else { "warn" };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level))
        .format_timestamp(None)
        .init();
    match run(cli) {
        Ok(code) => ExitCode::from(code),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(EXIT_FATAL)
        }
    }
}
