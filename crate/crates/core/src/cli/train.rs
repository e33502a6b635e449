//! Imitation pretraining followed by Q-learning, with validation-driven
//! checkpointing.

use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::PathBuf;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::config::RunConfig;
use super::dataset::{Dataset, Split};
use super::eval::{evaluate, Policy};
use crate::agent::{save_checkpoint, save_resume, Agent, Encoder, QNetwork, Transition};
use crate::env::Environment;
use crate::error::{Error, Result};
use crate::imitation::{agreement, generate_demo_set, pretrain};
use crate::volume::Volume;

pub const LOG_FILE: &str = "train.log";
pub const BEST_CHECKPOINT: &str = "best.ckpt";
pub const FINAL_CHECKPOINT: &str = "final.ckpt";
pub const PRETRAINED_CHECKPOINT: &str = "pretrained.ckpt";
pub const RESUME_FILE: &str = "final.resume";

/// Line-per-event log, mirrored to the `log` facade.
struct EventLog {
    w: BufWriter<File>,
}

impl EventLog {
    fn line(&mut self, s: String) -> Result<()> {
        log::info!("{s}");
        writeln!(self.w, "{s}")?;
        Ok(())
    }
}

#[derive(Clone, Debug)]
pub struct TrainSummary {
    pub out: PathBuf,
    pub best_val_ang: Option<f64>,
    pub best_step: u64,
    pub pretrain_agreement: Option<f64>,
    pub train_steps: u64,
}

fn validate(vols: &[(String, Volume)], cfg: &RunConfig, net: &QNetwork) -> Result<Option<(f64, f64)>> {
    if vols.is_empty() {
        return Ok(None);
    }
    let policy = Policy::Agent {
        net: net.clone(),
        encoder: Encoder::new(&cfg.agent),
    };
    let rep = evaluate(vols, &cfg.env, &policy)?;
    Ok(Some((rep.aggregate.ang_deg.mean, rep.aggregate.dis_mm.mean)))
}

/// Runs the full protocol on the dataset in `cfg.dataset`, writing the log
/// and checkpoints to `cfg.out`.
pub fn cmd_train(cfg: &RunConfig) -> Result<TrainSummary> {
    cfg.validate()?;
    let ds = Dataset::open(&cfg.dataset)?;
    let train = ds.load(Split::Train)?;
    if train.is_empty() {
        return Err(Error::config("dataset has no training volumes"));
    }
    let val = ds.load(Split::Val)?;
    fs::create_dir_all(&cfg.out)?;
    fs::write(cfg.out.join("config.txt"), cfg.render())?;
    let mut log = EventLog {
        w: BufWriter::new(File::create(cfg.out.join(LOG_FILE))?),
    };
    log.line(format!(
        "start seed={} train={} val={} rl_steps={}",
        cfg.seed,
        train.len(),
        val.len(),
        cfg.rl_steps
    ))?;

    let encoder = Encoder::new(&cfg.agent);
    let arch = cfg.agent.architecture(cfg.env.frame_extent)?;
    let mut net = QNetwork::new(arch, cfg.seed);
    let sampler = ds.manifest.sampler();
    let train_vols: Vec<Volume> = train.iter().map(|(_, v)| v.clone()).collect();

    let mut pretrain_agreement = None;
    if cfg.demos_per_volume > 0 && cfg.pretrain_epochs > 0 {
        let demos = generate_demo_set(&train_vols, &cfg.env, &encoder, &sampler, cfg.demos_per_volume, cfg.seed)?;
        let pairs: usize = demos.iter().map(|d| d.len()).sum();
        log.line(format!("demos count={} pairs={pairs}", demos.len()))?;
        let history = pretrain(&mut net, &demos, &cfg.pretrain())?;
        for (e, loss) in history.iter().enumerate() {
            log.line(format!("pretrain epoch={} loss={loss:.6}", e + 1))?;
        }
        let acc = agreement(&net, &demos)?;
        pretrain_agreement = Some(acc);
        log.line(format!("pretrain agreement={acc:.4}"))?;
    }

    let mut agent = Agent::from_network(cfg.agent.clone(), net, cfg.seed);
    save_checkpoint(&agent.checkpoint(), cfg.out.join(PRETRAINED_CHECKPOINT))?;

    let mut best_val_ang = None;
    let mut best_step = 0;
    let check = |agent: &Agent, log: &mut EventLog, best: &mut Option<f64>, best_step: &mut u64| -> Result<()> {
        match validate(&val, cfg, &agent.online)? {
            Some((ang, dis)) => {
                log.line(format!("validate step={} ang={ang:.4} dis={dis:.4}", agent.global_step))?;
                if best.map_or(true, |b| ang < b) {
                    *best = Some(ang);
                    *best_step = agent.global_step;
                    save_checkpoint(&agent.checkpoint(), cfg.out.join(BEST_CHECKPOINT))?;
                    log.line(format!("best step={} ang={ang:.4}", agent.global_step))?;
                }
            }
            None => {
                *best_step = agent.global_step;
                save_checkpoint(&agent.checkpoint(), cfg.out.join(BEST_CHECKPOINT))?;
            }
        }
        Ok(())
    };
    check(&agent, &mut log, &mut best_val_ang, &mut best_step)?;

    let envs: Vec<Environment> = train
        .iter()
        .map(|(_, v)| Environment::new(v, cfg.env.clone()))
        .collect::<Result<_>>()?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ 0xe915_0de5);
    let warmup = cfg.learning_starts.max(cfg.agent.batch_size);
    let mut episode = 0u64;
    let (mut loss_sum, mut loss_n) = (0.0, 0u64);
    while agent.global_step < cfg.rl_steps {
        let vi = rng.gen_range(0..envs.len());
        let env = &envs[vi];
        let mut state = env.reset(sampler.sample(&mut rng))?;
        let mut obs = encoder.encode(&state)?;
        let mut ret = 0i64;
        while !state.done && agent.global_step < cfg.rl_steps {
            let a = agent.act(&obs)?;
            let out = env.step(&state, a)?;
            let next_obs = encoder.advance(&obs, &out.state)?;
            ret += out.reward as i64;
            agent.remember(Transition {
                obs,
                action: a.index(),
                reward: out.reward,
                next_obs: next_obs.clone(),
                // the time limit is not part of the task
                terminal: false,
                aux_target: out.aux_target,
            });
            obs = next_obs;
            state = out.state;
            if agent.replay.len() >= warmup {
                if let Some(r) = agent.train_step()? {
                    loss_sum += r.losses.total;
                    loss_n += 1;
                    if r.synced {
                        log.line(format!("sync train_step={}", agent.train_steps))?;
                    }
                    if agent.train_steps % 500 == 0 {
                        log.line(format!(
                            "loss train_step={} mean_total={:.6}",
                            agent.train_steps,
                            loss_sum / loss_n as f64
                        ))?;
                        loss_sum = 0.0;
                        loss_n = 0;
                    }
                }
            }
            if agent.global_step % cfg.eval_interval == 0 {
                check(&agent, &mut log, &mut best_val_ang, &mut best_step)?;
            }
        }
        let dist = state.tangent.as_vec().distance(env.target().as_vec());
        log.line(format!(
            "episode {episode} volume={vi} steps={} return={ret} final_dist={dist:.4} epsilon={:.4}",
            state.step_index,
            agent.epsilon()
        ))?;
        episode += 1;
    }

    save_checkpoint(&agent.checkpoint(), cfg.out.join(FINAL_CHECKPOINT))?;
    save_resume(cfg.out.join(RESUME_FILE), &agent, &[&rng])?;
    log.line(format!(
        "done env_steps={} train_steps={} best_step={best_step}",
        agent.global_step, agent.train_steps
    ))?;
    log.w.flush()?;
    Ok(TrainSummary {
        out: cfg.out.clone(),
        best_val_ang,
        best_step,
        pretrain_agreement,
        train_steps: agent.train_steps,
    })
}
