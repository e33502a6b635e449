//! Command-line front end: `generate`, `train`, `eval`, `demo`, `inspect`.
//!
//! Log verbosity comes from `SPAGENT_LOG` (`error` .. `trace`, default
//! `info`).

pub mod config;
pub mod dataset;
pub mod eval;
pub mod train;

use std::fs::File;
use std::io::BufWriter;
use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};

use crate::agent::{load_checkpoint, save_checkpoint, Agent, Encoder, QNetwork};
use crate::error::{Error, Result};
use crate::geom::{build_frame, TangentPoint, Vec3};
use crate::imitation::{agreement, generate_demo_set, pretrain, save_demos};
use crate::volume::{load_volume, Grid, Volume};

pub use config::RunConfig;
pub use dataset::{cmd_generate, Dataset, Manifest, Split};
pub use eval::{evaluate, EvalReport, EvalRow, Policy};
pub use train::{cmd_train, TrainSummary};

#[derive(Parser, Debug)]
#[command(name = "spagent", version, about = "Standard-plane search agent workbench")]
pub struct Cli {
    #[command(flatten)]
    pub common: CommonArgs,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Args, Debug, Clone, Default)]
pub struct CommonArgs {
    /// key = value configuration file
    #[arg(long, global = true, value_name = "PATH")]
    pub config: Option<PathBuf>,
    #[arg(long, global = true, value_name = "N")]
    pub seed: Option<u64>,
    /// Output directory (the dataset directory for `generate`)
    #[arg(long, global = true, value_name = "DIR")]
    pub out: Option<PathBuf>,
    /// Dataset directory read by `train`, `eval` and `demo`
    #[arg(long, global = true, value_name = "DIR")]
    pub dataset: Option<PathBuf>,
    /// Sample replay uniformly instead of by priority
    #[arg(long, global = true)]
    pub uniform_replay: bool,
    /// Use the anatomical reward with its printed operand order
    #[arg(long, global = true)]
    pub asr_sign_literal: bool,
    /// Frame downsampling factor
    #[arg(long, global = true, value_name = "N")]
    pub downsample: Option<usize>,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Write train/val/test phantoms and a manifest
    Generate,
    /// Pretrain by imitation, then run Q-learning
    Train,
    /// Score a policy on a dataset split
    Eval(EvalArgs),
    /// Generate oracle demonstrations and pretrain only
    Demo,
    /// Dump a reslice of a volume as a PGM image
    Inspect(InspectArgs),
    /// Print the effective configuration
    Config,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum PolicyKind {
    Agent,
    Random,
    Oracle,
}

#[derive(Args, Debug)]
pub struct EvalArgs {
    /// Checkpoint for the agent policy
    #[arg(long, value_name = "PATH")]
    pub checkpoint: Option<PathBuf>,
    #[arg(long, value_enum, default_value = "agent")]
    pub policy: PolicyKind,
    #[arg(long, default_value = "test")]
    pub split: String,
}

#[derive(Args, Debug)]
pub struct InspectArgs {
    /// SPVOL1 volume file
    #[arg(long, value_name = "PATH")]
    pub volume: PathBuf,
    /// Tangent point `x,y,z`; defaults to the ground truth
    #[arg(long, value_name = "X,Y,Z")]
    pub tangent: Option<String>,
    /// Reslice the landmark heatmap instead of the intensities
    #[arg(long)]
    pub heatmap: bool,
    #[arg(long, value_name = "PATH")]
    pub output: PathBuf,
}

/// Defaults, then the config file, then flags.
pub fn resolve_config(args: &CommonArgs) -> Result<RunConfig> {
    let mut cfg = match &args.config {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::default(),
    };
    if let Some(s) = args.seed {
        cfg.seed = s;
    }
    if let Some(o) = &args.out {
        cfg.out = o.clone();
    }
    if let Some(d) = &args.dataset {
        cfg.dataset = d.clone();
    }
    if args.uniform_replay {
        cfg.agent.uniform_replay = true;
    }
    if args.asr_sign_literal {
        cfg.env.asr_sign_literal = true;
    }
    if let Some(f) = args.downsample {
        cfg.agent.downsample = f;
    }
    Ok(cfg)
}

fn parse_tangent(s: &str) -> Result<TangentPoint> {
    let v: Vec<f64> = s
        .split(',')
        .map(|p| p.trim().parse::<f64>())
        .collect::<std::result::Result<_, _>>()
        .map_err(|_| Error::config(format!("bad tangent point {s:?}")))?;
    match v[..] {
        [x, y, z] => TangentPoint::from_vec(Vec3::new(x, y, z)),
        _ => Err(Error::config(format!("bad tangent point {s:?}"))),
    }
}

pub fn cmd_eval(cfg: &RunConfig, args: &EvalArgs) -> Result<EvalReport> {
    let ds = Dataset::open(&cfg.dataset)?;
    let split = Split::parse(&args.split)?;
    let vols = ds.load(split)?;
    let policy = match args.policy {
        PolicyKind::Agent => {
            let path = args
                .checkpoint
                .as_ref()
                .ok_or_else(|| Error::config("--checkpoint is required for the agent policy"))?;
            let ck = load_checkpoint(path, cfg.agent.lr)?;
            Policy::Agent {
                net: ck.online,
                encoder: Encoder::new(&cfg.agent),
            }
        }
        PolicyKind::Random => Policy::Random { seed: cfg.seed },
        PolicyKind::Oracle => Policy::Oracle,
    };
    let report = evaluate(&vols, &cfg.env, &policy)?;
    report.write(&cfg.out, &format!("eval_{}_{}", policy.name(), split.name()))?;
    Ok(report)
}

/// Demonstrations on the training split, pretraining, and held-out
/// agreement on the validation split.
pub fn cmd_demo(cfg: &RunConfig) -> Result<(f64, Option<f64>)> {
    cfg.validate()?;
    let ds = Dataset::open(&cfg.dataset)?;
    let sampler = ds.manifest.sampler();
    let encoder = Encoder::new(&cfg.agent);
    let vols = |s| -> Result<Vec<Volume>> { Ok(ds.load(s)?.into_iter().map(|(_, v)| v).collect()) };
    let train = vols(Split::Train)?;
    let demos = generate_demo_set(&train, &cfg.env, &encoder, &sampler, cfg.demos_per_volume, cfg.seed)?;
    std::fs::create_dir_all(&cfg.out)?;
    save_demos(&demos, cfg.out.join("demos.spdem"))?;
    let mut net = QNetwork::new(cfg.agent.architecture(cfg.env.frame_extent)?, cfg.seed);
    pretrain(&mut net, &demos, &cfg.pretrain())?;
    let train_acc = agreement(&net, &demos)?;
    let val = vols(Split::Val)?;
    let val_acc = if val.is_empty() {
        None
    } else {
        let held = generate_demo_set(&val, &cfg.env, &encoder, &sampler, cfg.demos_per_volume, cfg.seed ^ 0xd3e0)?;
        Some(agreement(&net, &held)?)
    };
    let agent = Agent::from_network(cfg.agent.clone(), net, cfg.seed);
    save_checkpoint(&agent.checkpoint(), cfg.out.join(train::PRETRAINED_CHECKPOINT))?;
    Ok((train_acc, val_acc))
}

pub fn cmd_inspect(args: &InspectArgs, cfg: &RunConfig) -> Result<()> {
    let vol = load_volume(&args.volume)?;
    let t = match &args.tangent {
        Some(s) => parse_tangent(s)?,
        None => vol.gt_tangent(),
    };
    let frame = build_frame(&t, cfg.env.pixel_pitch, cfg.env.frame_extent);
    let grid = if args.heatmap { Grid::Heatmap } else { Grid::Intensity };
    let img = vol.reslice(&frame, grid).min_max_normalized();
    img.write_pgm(BufWriter::new(File::create(&args.output)?))?;
    Ok(())
}

pub fn run(cli: Cli) -> Result<()> {
    let cfg = resolve_config(&cli.common)?;
    match &cli.command {
        Command::Generate => {
            let m = cmd_generate(&cfg)?;
            println!("wrote {} volumes to {}", m.entries.len(), cfg.out.display());
        }
        Command::Train => {
            let s = cmd_train(&cfg)?;
            match s.best_val_ang {
                Some(a) => println!("best validation Ang {a:.3} deg at step {}", s.best_step),
                None => println!("training finished ({} learner updates)", s.train_steps),
            }
        }
        Command::Eval(a) => print!("{}", cmd_eval(&cfg, a)?.table()),
        Command::Demo => {
            let (train, val) = cmd_demo(&cfg)?;
            println!("oracle agreement: train {train:.4}");
            if let Some(v) = val {
                println!("oracle agreement: held-out {v:.4}");
            }
        }
        Command::Inspect(a) => cmd_inspect(a, &cfg)?,
        Command::Config => print!("{}", cfg.render()),
    }
    Ok(())
}

/// Process entry point; returns the exit code.
pub fn main() -> i32 {
    let _ = env_logger::Builder::from_env(env_logger::Env::new().filter_or("SPAGENT_LOG", "info")).try_init();
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            match e {
                Error::Config(_) => 2,
                _ => 1,
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn flags_override_config_file() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("c.cfg");
        std::fs::write(&p, "seed = 3\ndownsample = 2\n").unwrap();
        let cli = Cli::try_parse_from(["spagent", "train", "--config", p.to_str().unwrap(), "--seed", "9", "--uniform-replay"]).unwrap();
        let cfg = resolve_config(&cli.common).unwrap();
        assert_eq!(cfg.seed, 9);
        assert_eq!(cfg.agent.downsample, 2);
        assert!(cfg.agent.uniform_replay);
        assert!(!cfg.env.asr_sign_literal);
    }

    #[test]
    fn tangent_argument() {
        assert_eq!(parse_tangent("1,2,3").unwrap().as_vec(), Vec3::new(1.0, 2.0, 3.0));
        assert!(parse_tangent("1,2").is_err());
        assert!(parse_tangent("0,0,0").is_err());
    }
}
