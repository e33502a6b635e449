//! Oracle demonstrations and behavior-cloning pretraining.
//!
//! The oracle knows the target tangent point and greedily picks the move
//! that brings the current point closest to it. Its step size shrinks
//! whenever no move strictly improves the distance, and it stops once that
//! happens at the smallest step.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use ndarray::{Array1, Array2};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::agent::{argmax, Adam, Encoder, Frame, Observation, QNetwork};
use crate::binio::{
    expect_eof, expect_magic, read_f32s, read_u32, read_u8, write_f32s, write_u32,
};
use crate::env::{Action, EnvConfig, Environment, StartSampler, NUM_ACTIONS, STEP_STAGES};
use crate::error::{Error, Result};
use crate::geom::TangentPoint;
use crate::volume::Volume;

pub const DEMO_MAGIC: &[u8; 6] = b"SPDEM1";

/// Trajectories per volume.
pub const DEFAULT_DEMOS: usize = 20;

/// Move minimizing the distance to `target` after one step of `step_size`;
/// ties go to the earliest action in X+, X-, Y+, Y-, Z+, Z- order.
pub fn oracle_action(cur: &TangentPoint, target: &TangentPoint, step_size: f64) -> Action {
    let (c, t) = (cur.as_vec(), target.as_vec());
    let mut best = Action::ALL[0];
    let mut best_d = f64::INFINITY;
    for a in Action::ALL {
        let d = (c + a.delta(step_size)).distance(t);
        if d < best_d {
            best = a;
            best_d = d;
        }
    }
    best
}

/// Whether moving by `step_size` along `a` strictly reduces the distance.
pub fn improves(cur: &TangentPoint, target: &TangentPoint, a: Action, step_size: f64) -> bool {
    let (c, t) = (cur.as_vec(), target.as_vec());
    (c + a.delta(step_size)).distance(t) < c.distance(t)
}

/// Like [`oracle_action`], but scores moves at the point the environment
/// actually reaches (search box clamping included). `None` when no move
/// strictly improves the distance.
fn clamped_oracle_action(env: &Environment, cur: &TangentPoint, target: &TangentPoint, step_size: f64) -> Option<Action> {
    let t = target.as_vec();
    let here = cur.as_vec().distance(t);
    let mut best: Option<(Action, f64)> = None;
    for a in Action::ALL {
        let d = env.destination(cur, a, step_size).as_vec().distance(t);
        if d < here && best.map_or(true, |(_, bd)| d < bd) {
            best = Some((a, d));
        }
    }
    best.map(|(a, _)| a)
}

/// One scripted episode.
#[derive(Clone, Debug, PartialEq)]
pub struct Demonstration {
    /// Observation before each move, paired with the oracle's move.
    pub pairs: Vec<(Observation, Action)>,
    /// Tangent points visited, starting point first.
    pub path: Vec<TangentPoint>,
    /// Step size of each move.
    pub step_sizes: Vec<f64>,
}

impl Demonstration {
    pub fn len(&self) -> usize {
        self.pairs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pairs.is_empty()
    }
}

/// Runs the oracle from `start` until it stalls at the smallest step or the
/// episode ends.
pub fn run_oracle(env: &Environment, encoder: &Encoder, start: TangentPoint) -> Result<Demonstration> {
    let target = env.target();
    let mut state = env.reset(start)?;
    let mut obs = encoder.encode(&state)?;
    let mut stage = 0;
    let mut demo = Demonstration {
        pairs: Vec::new(),
        path: vec![state.tangent],
        step_sizes: Vec::new(),
    };
    while !state.done {
        let step = STEP_STAGES[stage];
        let Some(a) = clamped_oracle_action(env, &state.tangent, &target, step) else {
            if stage + 1 == STEP_STAGES.len() {
                break;
            }
            stage += 1;
            continue;
        };
        let out = env.step_sized(&state, a, step)?;
        let next_obs = encoder.advance(&obs, &out.state)?;
        demo.pairs.push((obs, a));
        demo.path.push(out.state.tangent);
        demo.step_sizes.push(step);
        obs = next_obs;
        state = out.state;
    }
    Ok(demo)
}

/// `count` oracle demonstrations on one volume from seeded starts.
pub fn generate_demos(
    vol: &Volume,
    env_cfg: &EnvConfig,
    encoder: &Encoder,
    sampler: &StartSampler,
    count: usize,
    seed: u64,
) -> Result<Vec<Demonstration>> {
    let env = Environment::new(vol, env_cfg.clone())?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let starts: Vec<TangentPoint> = (0..count).map(|_| sampler.sample(&mut rng)).collect();
    starts.into_iter().map(|s| run_oracle(&env, encoder, s)).collect()
}

/// Demonstrations for several volumes, generated in parallel. Volume `i`
/// uses seed `seed + i`, so the result does not depend on thread count.
pub fn generate_demo_set(
    vols: &[Volume],
    env_cfg: &EnvConfig,
    encoder: &Encoder,
    sampler: &StartSampler,
    per_volume: usize,
    seed: u64,
) -> Result<Vec<Demonstration>> {
    let per: Vec<Vec<Demonstration>> = vols
        .par_iter()
        .enumerate()
        .map(|(i, v)| generate_demos(v, env_cfg, encoder, sampler, per_volume, seed.wrapping_add(i as u64)))
        .collect::<Result<_>>()?;
    Ok(per.into_iter().flatten().collect())
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PretrainConfig {
    pub epochs: usize,
    pub lr: f64,
    pub batch_size: usize,
    pub seed: u64,
}

impl Default for PretrainConfig {
    fn default() -> Self {
        PretrainConfig {
            epochs: 10,
            lr: 1e-3,
            batch_size: 32,
            seed: 0,
        }
    }
}

/// Mean cross-entropy and gradient of softmax(Q) against `labels`.
pub fn cross_entropy_and_gradient(net: &QNetwork, inputs: Array2<f64>, labels: &[usize]) -> Result<(f64, Vec<f64>)> {
    let n = labels.len();
    let cache = net.forward_batch(inputs)?;
    let mut d_q = Array2::<f64>::zeros((n, NUM_ACTIONS));
    let mut loss = 0.0;
    for (i, &y) in labels.iter().enumerate() {
        let row = cache.q.row(i);
        let m = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let z: f64 = row.iter().map(|&q| (q - m).exp()).sum();
        loss += (z.ln() + m - row[y]) / n as f64;
        for a in 0..NUM_ACTIONS {
            let p = (row[a] - m).exp() / z;
            d_q[[i, a]] = (p - if a == y { 1.0 } else { 0.0 }) / n as f64;
        }
    }
    let mut grad = vec![0.0; net.params().len()];
    net.backward(&cache, &d_q, &Array1::zeros(n), &mut grad);
    Ok((loss, grad))
}

fn pair_matrix(pairs: &[&(Observation, Action)], cols: usize) -> Result<Array2<f64>> {
    let mut data = Vec::with_capacity(pairs.len() * cols);
    for (o, _) in pairs {
        if o.input_len() != cols {
            return Err(Error::ShapeMismatch {
                expected: cols,
                got: o.input_len(),
            });
        }
        o.write_input(&mut data);
    }
    Ok(Array2::from_shape_vec((pairs.len(), cols), data).expect("rows of equal length"))
}

/// Behavior cloning: minimizes the cross-entropy of the oracle action under
/// softmax(Q) over shuffled minibatches. Returns the mean loss per epoch.
pub fn pretrain(net: &mut QNetwork, demos: &[Demonstration], cfg: &PretrainConfig) -> Result<Vec<f64>> {
    let pairs: Vec<&(Observation, Action)> = demos.iter().flat_map(|d| d.pairs.iter()).collect();
    if pairs.is_empty() {
        return Err(Error::EmptyDemoSet);
    }
    if cfg.batch_size == 0 || !(cfg.lr > 0.0) {
        return Err(Error::config("pretraining needs a positive batch size and learning rate"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut opt = Adam::new(net.params().len(), cfg.lr);
    let mut order: Vec<usize> = (0..pairs.len()).collect();
    let mut history = Vec::with_capacity(cfg.epochs);
    for _ in 0..cfg.epochs {
        order.shuffle(&mut rng);
        let mut total = 0.0;
        for chunk in order.chunks(cfg.batch_size) {
            let batch: Vec<&(Observation, Action)> = chunk.iter().map(|&i| pairs[i]).collect();
            let labels: Vec<usize> = batch.iter().map(|(_, a)| a.index()).collect();
            let x = pair_matrix(&batch, net.input_len())?;
            let (loss, grad) = cross_entropy_and_gradient(net, x, &labels)?;
            opt.step(net.params_mut(), &grad);
            total += loss * chunk.len() as f64;
        }
        history.push(total / pairs.len() as f64);
    }
    Ok(history)
}

/// Fraction of pairs whose greedy action matches the recorded one.
pub fn agreement(net: &QNetwork, demos: &[Demonstration]) -> Result<f64> {
    let pairs: Vec<&(Observation, Action)> = demos.iter().flat_map(|d| d.pairs.iter()).collect();
    if pairs.is_empty() {
        return Err(Error::EmptyDemoSet);
    }
    let mut hits = 0usize;
    for chunk in pairs.chunks(256) {
        let cache = net.forward_batch(pair_matrix(chunk, net.input_len())?)?;
        for (i, (_, a)) in chunk.iter().enumerate() {
            let q: Vec<f64> = cache.q.row(i).to_vec();
            hits += (argmax(&q) == a.index()) as usize;
        }
    }
    Ok(hits as f64 / pairs.len() as f64)
}

/// Writes every (observation, action) pair of `demos` as `SPDEM1`.
pub fn write_demos(demos: &[Demonstration], mut w: impl Write) -> Result<()> {
    let pairs: Vec<&(Observation, Action)> = demos.iter().flat_map(|d| d.pairs.iter()).collect();
    w.write_all(DEMO_MAGIC)?;
    write_u32(&mut w, pairs.len())?;
    for (o, a) in pairs {
        write_u32(&mut w, o.frames[0].len())?;
        for f in &o.frames {
            write_f32s(&mut w, f)?;
        }
        match o.pose {
            Some(p) => {
                w.write_all(&[1])?;
                write_f32s(&mut w, &p)?;
            }
            None => w.write_all(&[0])?,
        }
        w.write_all(&[a.index() as u8])?;
    }
    w.flush()?;
    Ok(())
}

/// Reads an `SPDEM1` file back as a single demonstration holding all
/// pairs; paths and step sizes are not stored.
pub fn read_demos(mut r: impl Read) -> Result<Demonstration> {
    expect_magic(&mut r, DEMO_MAGIC, "SPDEM1 demonstration")?;
    let n = read_u32(&mut r)? as usize;
    let mut pairs = Vec::with_capacity(n.min(1 << 16));
    for _ in 0..n {
        let len = read_u32(&mut r)? as usize;
        if len > 1 << 24 {
            return Err(Error::format("frame too large"));
        }
        let mut frames: Vec<Frame> = Vec::with_capacity(3);
        for _ in 0..3 {
            frames.push(std::sync::Arc::new(read_f32s(&mut r, len)?));
        }
        let pose = match read_u8(&mut r)? {
            0 => None,
            1 => {
                let p = read_f32s(&mut r, 3)?;
                Some([p[0], p[1], p[2]])
            }
            _ => return Err(Error::format("bad pose flag")),
        };
        let a = Action::from_index(read_u8(&mut r)? as usize).ok_or_else(|| Error::format("bad action id"))?;
        let [f0, f1, f2]: [Frame; 3] = frames.try_into().expect("three frames");
        pairs.push((
            Observation {
                frames: [f0, f1, f2],
                pose,
            },
            a,
        ));
    }
    expect_eof(&mut r)?;
    Ok(Demonstration {
        pairs,
        path: Vec::new(),
        step_sizes: Vec::new(),
    })
}

pub fn save_demos(demos: &[Demonstration], path: impl AsRef<Path>) -> Result<()> {
    write_demos(demos, BufWriter::new(File::create(path)?))
}

pub fn load_demos(path: impl AsRef<Path>) -> Result<Demonstration> {
    read_demos(BufReader::new(File::open(path)?))
}
