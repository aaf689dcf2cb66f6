use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use radloc::field::GeneratorConfig;
use radloc::{Error, Result};
use radloc_cli::checkpoint::Checkpoint;
use radloc_cli::commands::{self, AblationKind, RenderArgs, RenderModality};
use radloc_cli::config::RunConfig;
use radloc_cli::gradcheck::MiniConfig;
use radloc_cli::{exit_code, EXIT_NUMERICAL};

#[derive(Parser)]
#[command(name = "radloc", version, about = "3D object localization inside synthetic radiance fields")]
struct Cli {
    #[command(flatten)]
    global: Global,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Global {
    /// Complete run config (JSON). Defaults apply when omitted.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Root seed; overrides `train.seed`.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output directory.
    #[arg(long, global = true, default_value = "out")]
    out: PathBuf,
    /// Dotted config override, e.g. `--set train.epochs=20`. Repeatable.
    #[arg(long = "set", global = true, value_name = "KEY=VALUE")]
    overrides: Vec<String>,
}

#[derive(Subcommand)]
enum Command {
    /// Print the resolved run config as JSON.
    Config,
    /// Generate scene files.
    GenScenes {
        #[arg(long, default_value_t = 4)]
        count: usize,
        #[arg(long, default_value_t = 1)]
        min_objects: usize,
        #[arg(long, default_value_t = 3)]
        max_objects: usize,
    },
    /// Render color and/or depth of one scene view.
    Render {
        scene: PathBuf,
        #[arg(long, value_enum, default_value_t = Modality::Both)]
        modality: Modality,
        /// Focal divisor: above 1 renders the coarse view, below 1 zooms in.
        #[arg(long, default_value_t = 1.0)]
        delta: f64,
        /// Ray grid as WxH.
        #[arg(long, value_parser = parse_grid)]
        grid: Option<(usize, usize)>,
        /// Orbit pose index.
        #[arg(long, default_value_t = 0)]
        view: usize,
    },
    /// Train a detector and write a checkpoint plus loss curve.
    Train {
        /// Directory of scene files instead of generated scenes.
        #[arg(long)]
        scenes: Option<PathBuf>,
    },
    /// Evaluate a checkpoint.
    Eval {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        scenes: Option<PathBuf>,
    },
    /// Detections for every configured view of one scene.
    Infer {
        #[arg(long)]
        checkpoint: PathBuf,
        scene: PathBuf,
    },
    /// Per-pose detections along an orbit.
    Track {
        #[arg(long)]
        checkpoint: PathBuf,
        scene: PathBuf,
        #[arg(long, default_value_t = 4)]
        steps: usize,
    },
    /// Train and evaluate ablation variants.
    Ablate {
        #[arg(long, value_enum, default_value_t = Kind::All)]
        kind: Kind,
        #[arg(long)]
        scenes: Option<PathBuf>,
    },
    /// Finite-difference check of the end-to-end loss gradient.
    Gradcheck {
        #[arg(long, default_value = "fp64")]
        dtype: String,
        /// Worst parameters to list.
        #[arg(long, default_value_t = 10)]
        top: usize,
        /// Test fixture: scale the backward rule of this op.
        #[arg(long, hide = true)]
        corrupt: Option<String>,
    },
    /// SVG charts from loss or metrics CSVs.
    Plot { inputs: Vec<PathBuf> },
}

#[derive(Clone, Copy, ValueEnum)]
enum Modality {
    Color,
    Depth,
    Both,
}

#[derive(Clone, Copy, ValueEnum)]
enum Kind {
    Modality,
    Fusion,
    Stream,
    All,
}

fn parse_grid(s: &str) -> std::result::Result<(usize, usize), String> {
    let (w, h) = s.split_once('x').ok_or("expected WxH")?;
    let parse = |v: &str| v.trim().parse::<usize>().map_err(|e| e.to_string());
    Ok((parse(w)?, parse(h)?))
}

fn config(g: &Global) -> Result<RunConfig> {
    RunConfig::load(g.config.as_deref(), &g.overrides, g.seed)
}

/// The checkpoint's own config unless the command line supplies one.
fn config_for(g: &Global, ckpt: &Checkpoint) -> Result<RunConfig> {
    RunConfig::resolve(&ckpt.manifest.config, g.config.as_deref(), &g.overrides, g.seed)
}

fn show(paths: &[PathBuf]) {
    for p in paths {
        println!("wrote {}", p.display());
    }
}

fn run(cli: Cli) -> Result<i32> {
    let g = &cli.global;
    let out: &Path = &g.out;
    match cli.command {
        Command::Config => print!("{}", config(g)?.to_json()),
        Command::GenScenes { count, min_objects, max_objects } => {
            let cfg = config(g)?;
            let generator = GeneratorConfig { min_objects, max_objects, ..cfg.data.generator };
            show(&commands::gen_scenes(cfg.seed(), count, &generator, out)?);
        }
        Command::Render { scene, modality, delta, grid, view } => {
            let cfg = config(g)?;
            let modality = match modality {
                Modality::Color => RenderModality::Color,
                Modality::Depth => RenderModality::Depth,
                Modality::Both => RenderModality::Both,
            };
            let args = RenderArgs { scene, view, modality, delta, grid };
            show(&commands::render(&cfg, &args, out)?);
        }
        Command::Train { scenes } => {
            let cfg = config(g)?;
            let r = commands::train_cmd(&cfg, scenes.as_deref(), out)?;
            let m = &r.checkpoint.manifest;
            println!(
                "trained {} epochs; last epoch loss {:.6}; final loss {:.6}",
                cfg.train.epochs,
                m.final_epoch_loss.unwrap_or(f64::NAN),
                m.final_loss.unwrap_or(f64::NAN)
            );
            println!("wrote {}", out.join("checkpoint").display());
        }
        Command::Eval { checkpoint, scenes } => {
            let ckpt = Checkpoint::load(&checkpoint)?;
            let cfg = config_for(g, &ckpt)?;
            let r = commands::eval_cmd(&cfg, &ckpt.detector, scenes.as_deref(), out)?;
            println!("loss {:.6}", r.loss);
            print!("{}", radloc::eval::table_csv([(r.label.as_str(), &r.metrics)]));
        }
        Command::Infer { checkpoint, scene } => {
            let ckpt = Checkpoint::load(&checkpoint)?;
            let cfg = config_for(g, &ckpt)?;
            let r = commands::infer_cmd(&cfg, &ckpt.detector, &scene, out)?;
            println!("{} views; wrote {}", r.len(), out.join("detections.json").display());
        }
        Command::Track { checkpoint, scene, steps } => {
            let ckpt = Checkpoint::load(&checkpoint)?;
            let cfg = config_for(g, &ckpt)?;
            let r = commands::track_cmd(&cfg, &ckpt.detector, &scene, steps, out)?;
            println!("{} steps; wrote {}", r.len(), out.join("track.json").display());
        }
        Command::Ablate { kind, scenes } => {
            let cfg = config(g)?;
            let kinds = match kind {
                Kind::Modality => vec![AblationKind::Modality],
                Kind::Fusion => vec![AblationKind::Fusion],
                Kind::Stream => vec![AblationKind::Stream],
                Kind::All => vec![AblationKind::Modality, AblationKind::Fusion, AblationKind::Stream],
            };
            for k in kinds {
                print!("{}", commands::ablate_cmd(&cfg, k, scenes.as_deref(), out)?);
            }
        }
        Command::Gradcheck { dtype, top, corrupt } => {
            if dtype != "fp64" {
                return Err(Error::Config(format!("gradcheck requires --dtype fp64, got {dtype}")));
            }
            let mut mini = MiniConfig { seed: g.seed.unwrap_or(0), ..MiniConfig::default() };
            mini.corrupt = corrupt.map(|op| (op, 1.5));
            let r = commands::gradcheck_cmd(&mini, out)?;
            print!("{}", r.render(top));
            if !r.passed() {
                return Ok(EXIT_NUMERICAL);
            }
        }
        Command::Plot { inputs } => show(&commands::plot_cmd(&inputs, out)?),
    }
    Ok(0)
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    match run(cli) {
        Ok(code) => ExitCode::from(code as u8),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e) as u8)
        }
    }
}
