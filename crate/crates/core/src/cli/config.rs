//! Flat `key = value` run configuration.
//!
//! Precedence, lowest first: built-in defaults, the `--config` file, then
//! command-line flags. `#` starts a comment; unknown keys are errors.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use crate::agent::{AgentConfig, EpsilonSchedule};
use crate::env::EnvConfig;
use crate::error::{Error, Result};
use crate::imitation::PretrainConfig;
use crate::volume::PhantomConfig;

#[derive(Clone, Debug, PartialEq)]
pub struct RunConfig {
    pub seed: u64,
    pub out: PathBuf,
    /// Dataset directory read by `train` and `eval`.
    pub dataset: PathBuf,
    pub train_count: usize,
    pub val_count: usize,
    pub test_count: usize,

    pub grid_size: usize,
    pub spacing: f64,
    pub landmark_count: usize,
    pub rotation_range: f64,
    pub noise_level: f64,
    pub heatmap_sigma: f64,

    pub env: EnvConfig,
    pub agent: AgentConfig,

    pub demos_per_volume: usize,
    pub pretrain_epochs: usize,
    pub pretrain_lr: f64,
    pub pretrain_batch: usize,

    pub rl_steps: u64,
    /// Environment steps between validation passes.
    pub eval_interval: u64,
    /// Replay size before learner updates start.
    pub learning_starts: usize,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            seed: 0,
            out: PathBuf::from("run"),
            dataset: PathBuf::from("data"),
            train_count: 16,
            val_count: 4,
            test_count: 8,
            grid_size: 64,
            spacing: 1.0,
            landmark_count: 5,
            rotation_range: 15.0,
            noise_level: 0.1,
            heatmap_sigma: PhantomConfig::default().heatmap_sigma,
            env: EnvConfig::default(),
            agent: AgentConfig::default(),
            demos_per_volume: crate::imitation::DEFAULT_DEMOS,
            pretrain_epochs: 10,
            pretrain_lr: 1e-3,
            pretrain_batch: 32,
            rl_steps: 20_000,
            eval_interval: 2_000,
            learning_starts: 500,
        }
    }
}

fn parse<T: std::str::FromStr>(key: &str, v: &str) -> Result<T> {
    v.parse()
        .map_err(|_| Error::config(format!("invalid value for {key}: {v:?}")))
}

fn parse_bool(key: &str, v: &str) -> Result<bool> {
    match v {
        "true" | "1" | "yes" => Ok(true),
        "false" | "0" | "no" => Ok(false),
        _ => Err(Error::config(format!("invalid boolean for {key}: {v:?}"))),
    }
}

fn parse_list(key: &str, v: &str) -> Result<Vec<usize>> {
    v.split(',').map(|s| parse(key, s.trim())).collect()
}

impl RunConfig {
    /// Sets one key; unknown keys are rejected.
    pub fn set(&mut self, key: &str, v: &str) -> Result<()> {
        let a = &mut self.agent;
        match key {
            "seed" => self.seed = parse(key, v)?,
            "out" => self.out = PathBuf::from(v),
            "dataset" => self.dataset = PathBuf::from(v),
            "train_count" => self.train_count = parse(key, v)?,
            "val_count" => self.val_count = parse(key, v)?,
            "test_count" => self.test_count = parse(key, v)?,
            "grid_size" => self.grid_size = parse(key, v)?,
            "spacing" => self.spacing = parse(key, v)?,
            "landmark_count" => self.landmark_count = parse(key, v)?,
            "rotation_range" => self.rotation_range = parse(key, v)?,
            "noise_level" => self.noise_level = parse(key, v)?,
            "heatmap_sigma" => self.heatmap_sigma = parse(key, v)?,
            "frame_extent" => self.env.frame_extent = parse(key, v)?,
            "pixel_pitch" => self.env.pixel_pitch = parse(key, v)?,
            "max_steps" => self.env.max_steps = parse(key, v)?,
            "asr_sign_literal" => self.env.asr_sign_literal = parse_bool(key, v)?,
            "bounds_margin" => self.env.bounds_margin = parse(key, v)?,
            "gamma" => a.gamma = parse(key, v)?,
            "delta" => a.delta = parse(key, v)?,
            "lr" => a.lr = parse(key, v)?,
            "batch_size" => a.batch_size = parse(key, v)?,
            "target_sync" => a.target_sync = parse(key, v)?,
            "replay_capacity" => a.replay_capacity = parse(key, v)?,
            "alpha" => a.alpha = parse(key, v)?,
            "beta_start" => a.beta_start = parse(key, v)?,
            "beta_end" => a.beta_end = parse(key, v)?,
            "beta_steps" => a.beta_steps = parse(key, v)?,
            "p_min" => a.p_min = parse(key, v)?,
            "uniform_replay" => a.uniform_replay = parse_bool(key, v)?,
            "eps_start" => a.epsilon.start = parse(key, v)?,
            "eps_end" => a.epsilon.end = parse(key, v)?,
            "eps_decay_steps" => a.epsilon.decay_steps = parse(key, v)?,
            "hidden" => a.hidden = parse_list(key, v)?,
            "downsample" => a.downsample = parse(key, v)?,
            "pose_input" => a.pose_input = parse_bool(key, v)?,
            "demos_per_volume" => self.demos_per_volume = parse(key, v)?,
            "pretrain_epochs" => self.pretrain_epochs = parse(key, v)?,
            "pretrain_lr" => self.pretrain_lr = parse(key, v)?,
            "pretrain_batch" => self.pretrain_batch = parse(key, v)?,
            "rl_steps" => self.rl_steps = parse(key, v)?,
            "eval_interval" => self.eval_interval = parse(key, v)?,
            "learning_starts" => self.learning_starts = parse(key, v)?,
            _ => return Err(Error::config(format!("unknown config key {key:?}"))),
        }
        Ok(())
    }

    /// Applies `key = value` lines on top of `self`.
    pub fn apply_text(&mut self, text: &str) -> Result<()> {
        for (n, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| Error::config(format!("line {}: expected key = value", n + 1)))?;
            self.set(k.trim(), v.trim())
                .map_err(|e| Error::config(format!("line {}: {e}", n + 1)))?;
        }
        Ok(())
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let mut c = RunConfig::default();
        c.apply_text(text)?;
        Ok(c)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        RunConfig::from_text(&std::fs::read_to_string(path)?)
    }

    /// Every key with its current value, in the accepted syntax.
    pub fn render(&self) -> String {
        let a = &self.agent;
        let e: &EpsilonSchedule = &a.epsilon;
        let hidden: Vec<String> = a.hidden.iter().map(|h| h.to_string()).collect();
        let pairs: Vec<(&str, String)> = vec![
            ("seed", self.seed.to_string()),
            ("out", self.out.display().to_string()),
            ("dataset", self.dataset.display().to_string()),
            ("train_count", self.train_count.to_string()),
            ("val_count", self.val_count.to_string()),
            ("test_count", self.test_count.to_string()),
            ("grid_size", self.grid_size.to_string()),
            ("spacing", format!("{:?}", self.spacing)),
            ("landmark_count", self.landmark_count.to_string()),
            ("rotation_range", format!("{:?}", self.rotation_range)),
            ("noise_level", format!("{:?}", self.noise_level)),
            ("heatmap_sigma", format!("{:?}", self.heatmap_sigma)),
            ("frame_extent", self.env.frame_extent.to_string()),
            ("pixel_pitch", format!("{:?}", self.env.pixel_pitch)),
            ("max_steps", self.env.max_steps.to_string()),
            ("asr_sign_literal", self.env.asr_sign_literal.to_string()),
            ("bounds_margin", format!("{:?}", self.env.bounds_margin)),
            ("gamma", format!("{:?}", a.gamma)),
            ("delta", format!("{:?}", a.delta)),
            ("lr", format!("{:?}", a.lr)),
            ("batch_size", a.batch_size.to_string()),
            ("target_sync", a.target_sync.to_string()),
            ("replay_capacity", a.replay_capacity.to_string()),
            ("alpha", format!("{:?}", a.alpha)),
            ("beta_start", format!("{:?}", a.beta_start)),
            ("beta_end", format!("{:?}", a.beta_end)),
            ("beta_steps", a.beta_steps.to_string()),
            ("p_min", format!("{:?}", a.p_min)),
            ("uniform_replay", a.uniform_replay.to_string()),
            ("eps_start", format!("{:?}", e.start)),
            ("eps_end", format!("{:?}", e.end)),
            ("eps_decay_steps", e.decay_steps.to_string()),
            ("hidden", hidden.join(",")),
            ("downsample", a.downsample.to_string()),
            ("pose_input", a.pose_input.to_string()),
            ("demos_per_volume", self.demos_per_volume.to_string()),
            ("pretrain_epochs", self.pretrain_epochs.to_string()),
            ("pretrain_lr", format!("{:?}", self.pretrain_lr)),
            ("pretrain_batch", self.pretrain_batch.to_string()),
            ("rl_steps", self.rl_steps.to_string()),
            ("eval_interval", self.eval_interval.to_string()),
            ("learning_starts", self.learning_starts.to_string()),
        ];
        let mut s = String::new();
        for (k, v) in pairs {
            let _ = writeln!(s, "{k} = {v}");
        }
        s
    }

    pub fn phantom(&self, seed: u64) -> PhantomConfig {
        PhantomConfig {
            seed,
            dims: [self.grid_size; 3],
            spacing: self.spacing,
            landmark_count: self.landmark_count,
            rotation_range: self.rotation_range,
            noise_level: self.noise_level,
            heatmap_sigma: self.heatmap_sigma,
        }
    }

    pub fn pretrain(&self) -> PretrainConfig {
        PretrainConfig {
            epochs: self.pretrain_epochs,
            lr: self.pretrain_lr,
            batch_size: self.pretrain_batch,
            seed: self.seed,
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.phantom(0).validate()?;
        self.env.validate()?;
        self.agent.validate()?;
        self.agent.input_len(self.env.frame_extent)?;
        if self.pretrain_batch == 0 || !(self.pretrain_lr > 0.0) {
            return Err(Error::config("pretrain_batch and pretrain_lr must be positive"));
        }
        if self.eval_interval == 0 {
            return Err(Error::config("eval_interval must be positive"));
        }
        Ok(())
    }
}
