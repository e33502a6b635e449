//! `SPAGT1` checkpoints and `SPRPL1` resume files.
//!
//! A checkpoint holds both networks, the optimizer moments and the step
//! counters. A resume file adds what a checkpoint leaves out for an exact
//! continuation: the replay memory and random-number-generator states.

use std::collections::HashMap;
use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;
use std::sync::Arc;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::{Adam, Agent, AgentConfig, Architecture, Frame, Observation, QNetwork, ReplayBuffer, Transition};
use crate::binio::{
    expect_eof, expect_magic, read_exact, read_f32s, read_f64, read_f64s, read_u32, read_u64, read_u8, write_f32s,
    write_f64, write_f64s, write_u32, write_u64,
};
use crate::env::NUM_ACTIONS;
use crate::error::{Error, Result};

pub const CHECKPOINT_MAGIC: &[u8; 6] = b"SPAGT1";
pub const CHECKPOINT_VERSION: u32 = 1;
pub const RESUME_MAGIC: &[u8; 6] = b"SPRPL1";
pub const RESUME_VERSION: u32 = 1;

const MAX_LAYERS: usize = 64;
const MAX_PARAMS: usize = 1 << 28;

#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub online: QNetwork,
    pub target: QNetwork,
    pub optimizer: Adam,
    pub global_step: u64,
    pub epsilon: f64,
}

pub fn write_checkpoint(ck: &Checkpoint, mut w: impl Write) -> Result<()> {
    if ck.online.architecture() != ck.target.architecture() {
        return Err(Error::config("online and target architectures differ"));
    }
    w.write_all(CHECKPOINT_MAGIC)?;
    write_u32(&mut w, CHECKPOINT_VERSION as usize)?;
    let desc = ck.online.architecture().descriptor();
    write_u32(&mut w, desc.len())?;
    for d in desc {
        write_u32(&mut w, d)?;
    }
    write_f64s(&mut w, ck.online.params())?;
    write_f64s(&mut w, ck.target.params())?;
    write_u64(&mut w, ck.optimizer.t)?;
    write_f64s(&mut w, &ck.optimizer.m)?;
    write_f64s(&mut w, &ck.optimizer.v)?;
    write_u64(&mut w, ck.global_step)?;
    write_f64(&mut w, ck.epsilon)?;
    w.flush()?;
    Ok(())
}

/// Reads a checkpoint; the optimizer learning rate is set to `lr`, since
/// it belongs to the run configuration rather than the file.
pub fn read_checkpoint(mut r: impl Read, lr: f64) -> Result<Checkpoint> {
    expect_magic(&mut r, CHECKPOINT_MAGIC, "SPAGT1 checkpoint")?;
    let version = read_u32(&mut r)?;
    if version != CHECKPOINT_VERSION {
        return Err(Error::format(format!("unsupported checkpoint version {version}")));
    }
    let n = read_u32(&mut r)? as usize;
    if n > MAX_LAYERS {
        return Err(Error::format("architecture descriptor too long"));
    }
    let desc = (0..n).map(|_| read_u32(&mut r).map(|v| v as usize)).collect::<Result<Vec<_>>>()?;
    let arch = Architecture::from_descriptor(&desc)?;
    let count = arch
        .layers()
        .iter()
        .try_fold(0usize, |acc, &(i, o)| i.checked_mul(o).and_then(|w| acc.checked_add(w + o)))
        .filter(|&c| c <= MAX_PARAMS)
        .ok_or_else(|| Error::format("parameter count out of range"))?;
    let online = QNetwork::from_params(arch.clone(), read_f64s(&mut r, count)?)?;
    let target = QNetwork::from_params(arch, read_f64s(&mut r, count)?)?;
    let mut optimizer = Adam::new(count, lr);
    optimizer.t = read_u64(&mut r)?;
    optimizer.m = read_f64s(&mut r, count)?;
    optimizer.v = read_f64s(&mut r, count)?;
    let global_step = read_u64(&mut r)?;
    let epsilon = read_f64(&mut r)?;
    expect_eof(&mut r)?;
    Ok(Checkpoint {
        online,
        target,
        optimizer,
        global_step,
        epsilon,
    })
}

pub fn save_checkpoint(ck: &Checkpoint, path: impl AsRef<Path>) -> Result<()> {
    write_checkpoint(ck, BufWriter::new(File::create(path)?))
}

pub fn load_checkpoint(path: impl AsRef<Path>, lr: f64) -> Result<Checkpoint> {
    read_checkpoint(BufReader::new(File::open(path)?), lr)
}

impl Agent {
    pub fn checkpoint(&self) -> Checkpoint {
        Checkpoint {
            online: self.online.clone(),
            target: self.target.clone(),
            optimizer: self.optimizer.clone(),
            global_step: self.global_step,
            epsilon: self.epsilon(),
        }
    }

    /// Rebuilds an agent from a checkpoint with an empty replay memory.
    pub fn from_checkpoint(config: AgentConfig, ck: Checkpoint, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut agent = Agent::from_network(config, ck.online, seed);
        agent.target = ck.target;
        agent.optimizer = ck.optimizer;
        agent.optimizer.lr = agent.config.lr;
        agent.train_steps = agent.optimizer.t;
        agent.global_step = ck.global_step;
        Ok(agent)
    }
}

fn write_rng(w: &mut impl Write, rng: &ChaCha8Rng) -> Result<()> {
    w.write_all(&rng.get_seed())?;
    write_u64(w, rng.get_stream())?;
    w.write_all(&rng.get_word_pos().to_le_bytes())?;
    Ok(())
}

fn read_rng(r: &mut impl Read) -> Result<ChaCha8Rng> {
    let mut seed = [0u8; 32];
    read_exact(r, &mut seed)?;
    let stream = read_u64(r)?;
    let mut pos = [0u8; 16];
    read_exact(r, &mut pos)?;
    let mut rng = ChaCha8Rng::from_seed(seed);
    rng.set_stream(stream);
    rng.set_word_pos(u128::from_le_bytes(pos));
    Ok(rng)
}

fn write_obs(w: &mut impl Write, o: &Observation, ids: &HashMap<*const Vec<f32>, usize>) -> Result<()> {
    for f in &o.frames {
        write_u64(w, ids[&Arc::as_ptr(f)] as u64)?;
    }
    match o.pose {
        Some(p) => {
            w.write_all(&[1])?;
            write_f32s(w, &p)?;
        }
        None => w.write_all(&[0])?,
    }
    Ok(())
}

fn read_obs(r: &mut impl Read, frames: &[Frame]) -> Result<Observation> {
    let mut fs = Vec::with_capacity(3);
    for _ in 0..3 {
        let id = read_u64(r)? as usize;
        fs.push(frames.get(id).cloned().ok_or_else(|| Error::format("frame id out of range"))?);
    }
    let pose = match read_u8(r)? {
        0 => None,
        1 => {
            let p = read_f32s(r, 3)?;
            Some([p[0], p[1], p[2]])
        }
        _ => return Err(Error::format("bad pose flag")),
    };
    let [a, b, c]: [Frame; 3] = fs.try_into().expect("three frames");
    Ok(Observation { frames: [a, b, c], pose })
}

/// Writes replay memory, counters and random-number-generator state of
/// `agent`, plus any caller-owned generators in `extra`.
pub fn save_resume(path: impl AsRef<Path>, agent: &Agent, extra: &[&ChaCha8Rng]) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    w.write_all(RESUME_MAGIC)?;
    write_u32(&mut w, RESUME_VERSION as usize)?;
    write_u64(&mut w, agent.train_steps)?;
    write_rng(&mut w, &agent.rng)?;
    write_u32(&mut w, extra.len())?;
    for rng in extra {
        write_rng(&mut w, rng)?;
    }

    let buf = &agent.replay;
    let mut ids: HashMap<*const Vec<f32>, usize> = HashMap::new();
    let mut table: Vec<&Frame> = Vec::new();
    for i in 0..buf.len() {
        let t = buf.get(i);
        for f in t.obs.frames.iter().chain(&t.next_obs.frames) {
            ids.entry(Arc::as_ptr(f)).or_insert_with(|| {
                table.push(f);
                table.len() - 1
            });
        }
    }
    write_u64(&mut w, table.len() as u64)?;
    for f in &table {
        write_u64(&mut w, f.len() as u64)?;
        write_f32s(&mut w, f)?;
    }
    write_u64(&mut w, buf.capacity() as u64)?;
    write_u64(&mut w, buf.len() as u64)?;
    write_u64(&mut w, buf.cursor() as u64)?;
    write_f64(&mut w, buf.max_priority())?;
    for i in 0..buf.len() {
        let t = buf.get(i);
        write_f64(&mut w, buf.priority(i))?;
        write_obs(&mut w, &t.obs, &ids)?;
        write_obs(&mut w, &t.next_obs, &ids)?;
        w.write_all(&[t.action as u8, t.reward as i8 as u8, t.terminal as u8])?;
        write_f64(&mut w, t.aux_target)?;
    }
    w.flush()?;
    Ok(())
}

/// Restores what [`save_resume`] wrote into `agent` (whose networks and
/// optimizer come from the matching checkpoint) and returns the extra
/// generators.
pub fn load_resume(path: impl AsRef<Path>, agent: &mut Agent) -> Result<Vec<ChaCha8Rng>> {
    let mut r = BufReader::new(File::open(path)?);
    expect_magic(&mut r, RESUME_MAGIC, "SPRPL1 resume")?;
    let version = read_u32(&mut r)?;
    if version != RESUME_VERSION {
        return Err(Error::format(format!("unsupported resume version {version}")));
    }
    let train_steps = read_u64(&mut r)?;
    let rng = read_rng(&mut r)?;
    let n_extra = read_u32(&mut r)? as usize;
    if n_extra > 64 {
        return Err(Error::format("too many generator states"));
    }
    let extra = (0..n_extra).map(|_| read_rng(&mut r)).collect::<Result<Vec<_>>>()?;

    let n_frames = read_u64(&mut r)? as usize;
    let mut frames: Vec<Frame> = Vec::with_capacity(n_frames.min(1 << 20));
    for _ in 0..n_frames {
        let len = read_u64(&mut r)? as usize;
        if len > 1 << 24 {
            return Err(Error::format("frame too large"));
        }
        frames.push(Arc::new(read_f32s(&mut r, len)?));
    }
    let capacity = read_u64(&mut r)? as usize;
    let len = read_u64(&mut r)? as usize;
    let cursor = read_u64(&mut r)? as usize;
    let max_priority = read_f64(&mut r)?;
    if capacity != agent.config.replay_capacity || len > capacity {
        return Err(Error::format("replay capacity does not match the configuration"));
    }
    let mut replay = if agent.config.uniform_replay {
        ReplayBuffer::uniform(capacity)
    } else {
        ReplayBuffer::new(capacity, agent.config.alpha, agent.config.p_min)
    };
    for _ in 0..len {
        let priority = read_f64(&mut r)?;
        if !(priority > 0.0) {
            return Err(Error::format("non-positive priority"));
        }
        let obs = read_obs(&mut r, &frames)?;
        let next_obs = read_obs(&mut r, &frames)?;
        let mut b = [0u8; 3];
        read_exact(&mut r, &mut b)?;
        if b[0] as usize >= NUM_ACTIONS || b[2] > 1 {
            return Err(Error::format("bad transition record"));
        }
        let aux_target = read_f64(&mut r)?;
        replay.push_with_priority(
            Transition {
                obs,
                action: b[0] as usize,
                reward: b[1] as i8 as i32,
                next_obs,
                terminal: b[2] == 1,
                aux_target,
            },
            priority,
        );
    }
    expect_eof(&mut r)?;
    replay.restore_state(cursor, max_priority);
    agent.replay = replay;
    agent.rng = rng;
    agent.train_steps = train_steps;
    Ok(extra)
}
