//! Dueling double Q-learning with prioritized replay and an auxiliary
//! similarity head.

mod checkpoint;
mod network;
mod optim;
mod replay;

use std::sync::Arc;

use ndarray::{Array1, Array2};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::env::{Action, EnvState, NUM_ACTIONS};
use crate::error::{Error, Result};
use crate::geom::TangentPoint;
use crate::imaging::{downsample, Image};

pub use checkpoint::{
    load_checkpoint, load_resume, read_checkpoint, save_checkpoint, save_resume, write_checkpoint,
    Checkpoint,
};
pub use network::{argmax, Architecture, ForwardCache, Output, QNetwork};
pub use optim::Adam;
pub use replay::{ReplayBuffer, SampledBatch};

/// Scale applied to tangent coordinates when the pose is part of the input.
pub const POSE_SCALE: f64 = 1.0 / 32.0;

/// Linear decay from `start` to `end` over `decay_steps`, then constant.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct EpsilonSchedule {
    pub start: f64,
    pub end: f64,
    pub decay_steps: u64,
}

impl Default for EpsilonSchedule {
    fn default() -> Self {
        EpsilonSchedule {
            start: 0.6,
            end: 0.05,
            decay_steps: 10_000,
        }
    }
}

impl EpsilonSchedule {
    pub fn value(&self, step: u64) -> f64 {
        if self.decay_steps == 0 || step >= self.decay_steps {
            return self.end;
        }
        let frac = step as f64 / self.decay_steps as f64;
        self.start + (self.end - self.start) * frac
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct AgentConfig {
    pub gamma: f64,
    /// Weight of the auxiliary loss.
    pub delta: f64,
    pub lr: f64,
    pub batch_size: usize,
    /// Training steps between target-network copies.
    pub target_sync: u64,
    pub replay_capacity: usize,
    pub alpha: f64,
    pub beta_start: f64,
    pub beta_end: f64,
    /// Training steps over which beta is annealed.
    pub beta_steps: u64,
    pub p_min: f64,
    pub uniform_replay: bool,
    pub epsilon: EpsilonSchedule,
    pub hidden: Vec<usize>,
    /// Frame downsampling factor.
    pub downsample: usize,
    /// Append the scaled tangent point to the network input.
    pub pose_input: bool,
}

impl Default for AgentConfig {
    fn default() -> Self {
        AgentConfig {
            gamma: 0.85,
            delta: 0.5,
            lr: 5e-5,
            batch_size: 32,
            target_sync: 1800,
            replay_capacity: 15_000,
            alpha: 0.6,
            beta_start: 0.4,
            beta_end: 1.0,
            beta_steps: 20_000,
            p_min: 1e-3,
            uniform_replay: false,
            epsilon: EpsilonSchedule::default(),
            hidden: vec![128, 128],
            downsample: 4,
            pose_input: true,
        }
    }
}

impl AgentConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.gamma > 0.0 && self.gamma < 1.0) {
            return Err(Error::config("gamma must lie in (0, 1)"));
        }
        if !(self.delta >= 0.0) {
            return Err(Error::config("delta must be non-negative"));
        }
        if !(self.lr > 0.0) {
            return Err(Error::config("lr must be positive"));
        }
        if self.batch_size == 0 || self.replay_capacity < self.batch_size {
            return Err(Error::config("batch_size must be positive and fit in the replay buffer"));
        }
        if self.target_sync == 0 {
            return Err(Error::config("target_sync must be positive"));
        }
        if !(self.alpha >= 0.0) || !(self.p_min > 0.0) {
            return Err(Error::config("alpha must be >= 0 and p_min > 0"));
        }
        if !(0.0..=1.0).contains(&self.beta_start) || !(0.0..=1.0).contains(&self.beta_end) {
            return Err(Error::config("beta must lie in [0, 1]"));
        }
        let e = &self.epsilon;
        if !(0.0..=1.0).contains(&e.start) || !(0.0..=1.0).contains(&e.end) || e.end > e.start {
            return Err(Error::config("epsilon must decay within [0, 1]"));
        }
        if self.hidden.is_empty() || self.hidden.contains(&0) {
            return Err(Error::config("hidden layers must be non-empty"));
        }
        if self.downsample == 0 {
            return Err(Error::config("downsample must be positive"));
        }
        Ok(())
    }

    /// Network input length for square frames of `frame_extent` pixels.
    pub fn input_len(&self, frame_extent: usize) -> Result<usize> {
        if self.downsample == 0 || frame_extent % self.downsample != 0 {
            return Err(Error::IndivisibleFactor {
                factor: self.downsample,
                width: frame_extent,
                height: frame_extent,
            });
        }
        let side = frame_extent / self.downsample;
        Ok(3 * side * side + if self.pose_input { 3 } else { 0 })
    }

    pub fn architecture(&self, frame_extent: usize) -> Result<Architecture> {
        Architecture::new(self.input_len(frame_extent)?, self.hidden.clone())
    }
}

/// Downsampled frame shared between consecutive observations.
pub type Frame = Arc<Vec<f32>>;

/// Network-side view of an environment state: the last three frames,
/// downsampled, plus the pose when configured.
#[derive(Clone, Debug, PartialEq)]
pub struct Observation {
    pub frames: [Frame; 3],
    pub pose: Option<[f32; 3]>,
}

impl Observation {
    /// All-zero observation with frames of `frame_len` pixels.
    pub fn blank(frame_len: usize) -> Self {
        let f: Frame = Arc::new(vec![0.0; frame_len]);
        Observation {
            frames: [f.clone(), f.clone(), f],
            pose: None,
        }
    }

    pub fn input_len(&self) -> usize {
        3 * self.frames[0].len() + if self.pose.is_some() { 3 } else { 0 }
    }

    pub fn write_input(&self, out: &mut Vec<f64>) {
        for f in &self.frames {
            out.extend(f.iter().map(|&v| v as f64));
        }
        if let Some(p) = self.pose {
            out.extend(p.iter().map(|&v| v as f64));
        }
    }

    pub fn to_input(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.input_len());
        self.write_input(&mut out);
        out
    }
}

/// Turns environment states into observations, reusing frames that are
/// already encoded.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Encoder {
    pub downsample: usize,
    pub pose_input: bool,
}

impl Encoder {
    pub fn new(cfg: &AgentConfig) -> Self {
        Encoder {
            downsample: cfg.downsample,
            pose_input: cfg.pose_input,
        }
    }

    pub fn frame(&self, img: &Image) -> Result<Frame> {
        let small = if self.downsample == 1 {
            img.clone()
        } else {
            downsample(img, self.downsample)?
        };
        Ok(Arc::new(small.data().iter().map(|&v| v as f32).collect()))
    }

    fn pose(&self, t: &TangentPoint) -> Option<[f32; 3]> {
        self.pose_input.then(|| {
            let v = t.as_vec() * POSE_SCALE;
            [v.x as f32, v.y as f32, v.z as f32]
        })
    }

    /// Encodes every frame of `state`.
    pub fn encode(&self, state: &EnvState) -> Result<Observation> {
        let f0 = self.frame(&state.frames[0])?;
        let f1 = if Arc::ptr_eq(&state.frames[1], &state.frames[0]) {
            f0.clone()
        } else {
            self.frame(&state.frames[1])?
        };
        let f2 = if Arc::ptr_eq(&state.frames[2], &state.frames[1]) {
            f1.clone()
        } else {
            self.frame(&state.frames[2])?
        };
        Ok(Observation {
            frames: [f0, f1, f2],
            pose: self.pose(&state.tangent),
        })
    }

    /// Observation after one step: shifts `prev` and encodes only the
    /// newest frame of `state`.
    pub fn advance(&self, prev: &Observation, state: &EnvState) -> Result<Observation> {
        Ok(Observation {
            frames: [
                prev.frames[1].clone(),
                prev.frames[2].clone(),
                self.frame(state.current_frame())?,
            ],
            pose: self.pose(&state.tangent),
        })
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Transition {
    pub obs: Observation,
    pub action: usize,
    pub reward: i32,
    pub next_obs: Observation,
    pub terminal: bool,
    pub aux_target: f64,
}

/// Epsilon-greedy action choice; greedy ties go to the lowest index.
pub fn select_action(net: &QNetwork, input: &[f64], epsilon: f64, rng: &mut impl Rng) -> Result<Action> {
    if epsilon > 0.0 && rng.gen::<f64>() < epsilon {
        let i = rng.gen_range(0..NUM_ACTIONS);
        return Ok(Action::from_index(i).expect("index below NUM_ACTIONS"));
    }
    let out = net.forward(input)?;
    Ok(Action::from_index(argmax(&out.q)).expect("index below NUM_ACTIONS"))
}

/// Double-DQN target from the next-state Q-values of both networks: the
/// online network picks the action, the target network scores it.
pub fn double_q_target(reward: f64, terminal: bool, q_online_next: &[f64], q_target_next: &[f64], gamma: f64) -> f64 {
    if terminal {
        return reward;
    }
    reward + gamma * q_target_next[argmax(q_online_next)]
}

pub fn td_target(t: &Transition, net: &QNetwork, target: &QNetwork, gamma: f64) -> Result<f64> {
    if t.terminal {
        return Ok(t.reward as f64);
    }
    let x = t.next_obs.to_input();
    let online = net.forward(&x)?;
    let tgt = target.forward(&x)?;
    Ok(double_q_target(t.reward as f64, false, &online.q, &tgt.q, gamma))
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Losses {
    pub q: f64,
    pub aux: f64,
    pub total: f64,
}

pub fn combined_loss(loss_q: f64, loss_aux: f64, delta: f64) -> f64 {
    loss_q + delta * loss_aux
}

/// Loss and parameter gradient of `net` on a batch.
pub struct BatchGradient {
    pub losses: Losses,
    pub grad: Vec<f64>,
    /// `y - Q(s, a)` per sample.
    pub td_errors: Vec<f64>,
}

fn batch_matrix<'a>(obs: impl Iterator<Item = &'a Observation>, rows: usize, cols: usize) -> Result<Array2<f64>> {
    let mut data = Vec::with_capacity(rows * cols);
    for o in obs {
        if o.input_len() != cols {
            return Err(Error::ShapeMismatch {
                expected: cols,
                got: o.input_len(),
            });
        }
        o.write_input(&mut data);
    }
    Ok(Array2::from_shape_vec((rows, cols), data).expect("rows of equal length"))
}

/// `L = mean_i w_i (y_i - Q(s_i,a_i))^2 + delta * mean_i (g_i - score_i)^2`
/// and its gradient with respect to `net`'s parameters. Targets `y_i` are
/// treated as constants.
pub fn loss_and_gradient(
    net: &QNetwork,
    target: &QNetwork,
    batch: &[&Transition],
    weights: &[f64],
    gamma: f64,
    delta: f64,
) -> Result<BatchGradient> {
    let n = batch.len();
    assert_eq!(weights.len(), n, "one weight per sample");
    let cols = net.input_len();
    let x = batch_matrix(batch.iter().map(|t| &t.obs), n, cols)?;
    let x_next = batch_matrix(batch.iter().map(|t| &t.next_obs), n, cols)?;
    let cache = net.forward_batch(x)?;
    let next_online = net.forward_batch(x_next.clone())?;
    let next_target = target.forward_batch(x_next)?;

    let inv_n = 1.0 / n as f64;
    let mut d_q = Array2::<f64>::zeros((n, NUM_ACTIONS));
    let mut d_score = Array1::<f64>::zeros(n);
    let mut td_errors = Vec::with_capacity(n);
    let (mut loss_q, mut loss_a) = (0.0, 0.0);
    for (i, t) in batch.iter().enumerate() {
        let y = double_q_target(
            t.reward as f64,
            t.terminal,
            &network::q_row(&next_online.q, i),
            &network::q_row(&next_target.q, i),
            gamma,
        );
        let td = y - cache.q[[i, t.action]];
        td_errors.push(td);
        loss_q += weights[i] * td * td * inv_n;
        d_q[[i, t.action]] = -2.0 * weights[i] * td * inv_n;
        let r = cache.score[i] - t.aux_target;
        loss_a += r * r * inv_n;
        d_score[i] = 2.0 * delta * r * inv_n;
    }
    let mut grad = vec![0.0; net.params().len()];
    net.backward(&cache, &d_q, &d_score, &mut grad);
    Ok(BatchGradient {
        losses: Losses {
            q: loss_q,
            aux: loss_a,
            total: combined_loss(loss_q, loss_a, delta),
        },
        grad,
        td_errors,
    })
}

/// Result of one learner update.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct TrainReport {
    pub losses: Losses,
    /// The target network was refreshed after this update.
    pub synced: bool,
}

/// Online and target networks, optimizer, replay memory and counters.
#[derive(Clone, Debug)]
pub struct Agent {
    pub config: AgentConfig,
    pub online: QNetwork,
    pub target: QNetwork,
    pub optimizer: Adam,
    pub replay: ReplayBuffer,
    /// Environment steps taken.
    pub global_step: u64,
    /// Learner updates applied.
    pub train_steps: u64,
    rng: ChaCha8Rng,
}

impl Agent {
    pub fn new(config: AgentConfig, arch: Architecture, seed: u64) -> Result<Self> {
        config.validate()?;
        let online = QNetwork::new(arch, seed);
        Ok(Agent::from_network(config, online, seed))
    }

    /// Wraps an existing network; the target starts as a copy of it.
    pub fn from_network(config: AgentConfig, online: QNetwork, seed: u64) -> Self {
        let target = online.clone();
        let optimizer = Adam::new(online.params().len(), config.lr);
        let replay = if config.uniform_replay {
            ReplayBuffer::uniform(config.replay_capacity)
        } else {
            ReplayBuffer::new(config.replay_capacity, config.alpha, config.p_min)
        };
        Agent {
            config,
            online,
            target,
            optimizer,
            replay,
            global_step: 0,
            train_steps: 0,
            rng: ChaCha8Rng::seed_from_u64(seed ^ 0x5eed_a6e7),
        }
    }

    pub fn epsilon(&self) -> f64 {
        self.config.epsilon.value(self.global_step)
    }

    pub fn beta(&self) -> f64 {
        let c = &self.config;
        if c.beta_steps == 0 {
            return c.beta_end;
        }
        let frac = (self.train_steps as f64 / c.beta_steps as f64).min(1.0);
        c.beta_start + (c.beta_end - c.beta_start) * frac
    }

    pub fn rng(&self) -> &ChaCha8Rng {
        &self.rng
    }

    pub fn set_rng(&mut self, rng: ChaCha8Rng) {
        self.rng = rng;
    }

    /// Epsilon-greedy action at the current schedule value.
    pub fn act(&mut self, obs: &Observation) -> Result<Action> {
        let eps = self.epsilon();
        select_action(&self.online, &obs.to_input(), eps, &mut self.rng)
    }

    pub fn greedy(&self, obs: &Observation) -> Result<Action> {
        let q = self.online.forward(&obs.to_input())?.q;
        Ok(Action::from_index(argmax(&q)).expect("index below NUM_ACTIONS"))
    }

    /// Stores a transition and advances the environment-step counter.
    pub fn remember(&mut self, t: Transition) {
        self.replay.push(t);
        self.global_step += 1;
    }

    /// One prioritized-batch update; `None` until the buffer holds a batch.
    pub fn train_step(&mut self) -> Result<Option<TrainReport>> {
        if self.replay.len() < self.config.batch_size {
            return Ok(None);
        }
        let beta = self.beta();
        let sample = self.replay.sample(self.config.batch_size, beta, &mut self.rng)?;
        let batch: Vec<&Transition> = sample.indices.iter().map(|&i| self.replay.get(i)).collect();
        let g = loss_and_gradient(
            &self.online,
            &self.target,
            &batch,
            &sample.weights,
            self.config.gamma,
            self.config.delta,
        )?;
        self.optimizer.step(self.online.params_mut(), &g.grad);
        self.replay.update_priorities(&sample.indices, &g.td_errors);
        self.train_steps += 1;
        let synced = self.train_steps % self.config.target_sync == 0;
        if synced {
            self.sync_target();
        }
        Ok(Some(TrainReport {
            losses: g.losses,
            synced,
        }))
    }

    pub fn sync_target(&mut self) {
        self.target.copy_from(&self.online);
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny_arch() -> Architecture {
        Architecture::new(6, vec![16]).unwrap()
    }

    fn random_obs(rng: &mut ChaCha8Rng, frame_len: usize) -> Observation {
        let mk = |rng: &mut ChaCha8Rng| -> Frame { Arc::new((0..frame_len).map(|_| rng.gen_range(-1.0..1.0)).collect()) };
        Observation {
            frames: [mk(rng), mk(rng), mk(rng)],
            pose: None,
        }
    }

    fn random_transition(rng: &mut ChaCha8Rng, obs_len: usize) -> Transition {
        Transition {
            obs: random_obs(rng, obs_len),
            action: rng.gen_range(0..NUM_ACTIONS),
            reward: rng.gen_range(-2..=2),
            next_obs: random_obs(rng, obs_len),
            terminal: rng.gen_bool(0.2),
            aux_target: rng.gen_range(-1.0..1.0),
        }
    }

    fn net_with_input(input: usize, seed: u64) -> QNetwork {
        QNetwork::new(Architecture::new(input, vec![16]).unwrap(), seed)
    }

    #[test]
    fn epsilon_schedule_is_linear_then_flat() {
        let e = EpsilonSchedule::default();
        assert_eq!(e.value(0), 0.6);
        assert!((e.value(5_000) - 0.325).abs() < 1e-12);
        assert_eq!(e.value(10_000), 0.05);
        assert_eq!(e.value(1_000_000), 0.05);
        let mut prev = f64::INFINITY;
        for s in (0..12_000).step_by(37) {
            let v = e.value(s);
            assert!(v <= prev);
            prev = v;
        }
    }

    #[test]
    fn greedy_picks_largest_q_and_lowest_tie() {
        let mut net = net_with_input(3, 0);
        net.zero_heads();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let x = [0.1, 0.2, 0.3];
        assert_eq!(select_action(&net, &x, 0.0, &mut rng).unwrap().index(), 0);
        // advantage bias for action 1
        let (_, adv_b) = net.layer_ranges()[2].clone();
        net.params_mut()[adv_b.start + 1] = 5.0;
        assert_eq!(select_action(&net, &x, 0.0, &mut rng).unwrap().index(), 1);
    }

    #[test]
    fn full_exploration_is_uniform() {
        let net = net_with_input(3, 0);
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let mut counts = [0usize; NUM_ACTIONS];
        let draws = 60_000;
        for _ in 0..draws {
            counts[select_action(&net, &[0.0; 3], 1.0, &mut rng).unwrap().index()] += 1;
        }
        for c in counts {
            assert!((c as f64 / draws as f64 - 1.0 / 6.0).abs() < 0.02);
        }
    }

    #[test]
    fn double_q_examples() {
        let online = [0.0, 0.0, 9.0, 0.0, 0.0, 0.0];
        let target = [5.0, 5.0, 2.0, 5.0, 5.0, 5.0];
        assert!((double_q_target(1.0, false, &online, &target, 0.85) - 2.7).abs() < 1e-12);
        assert_eq!(double_q_target(-2.0, true, &online, &target, 0.85), -2.0);
        assert_eq!(double_q_target(1.0, false, &online, &target, 0.0), 1.0);
    }

    #[test]
    fn td_target_uses_online_argmax() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let t = Transition {
            terminal: false,
            reward: 1,
            ..random_transition(&mut rng, 2)
        };
        let mut net = net_with_input(6, 1);
        let mut target = net_with_input(6, 2);
        net.zero_heads();
        target.zero_heads();
        let adv = |n: &QNetwork| n.layer_ranges()[2].1.clone();
        let b = adv(&net);
        net.params_mut()[b.start + 2] = 3.0;
        let b = adv(&target);
        target.params_mut()[b.start] = 6.0;
        let x = t.next_obs.to_input();
        let qt = target.forward(&x).unwrap().q;
        assert_eq!(argmax(&qt), 0);
        let y = td_target(&t, &net, &target, 0.85).unwrap();
        assert!((y - (1.0 + 0.85 * qt[2])).abs() < 1e-12);
    }

    #[test]
    fn combined_loss_example() {
        assert_eq!(combined_loss(2.0, 1.0, 0.5), 2.5);
    }

    #[test]
    fn zero_residual_batch_has_zero_loss() {
        let mut net = net_with_input(6, 3);
        net.zero_heads();
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let ts: Vec<Transition> = (0..4)
            .map(|_| Transition {
                reward: 0,
                terminal: true,
                aux_target: 0.0,
                ..random_transition(&mut rng, 2)
            })
            .collect();
        let refs: Vec<&Transition> = ts.iter().collect();
        let g = loss_and_gradient(&net, &net, &refs, &[1.0; 4], 0.85, 0.5).unwrap();
        assert_eq!(g.losses.total, 0.0);
        assert!(g.grad.iter().all(|&v| v == 0.0));
    }

    fn numeric_loss(net: &QNetwork, target: &QNetwork, batch: &[&Transition], w: &[f64]) -> f64 {
        loss_and_gradient(net, target, batch, w, 0.85, 0.5).unwrap().losses.total
    }

    #[test]
    fn gradient_matches_central_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let ts: Vec<Transition> = (0..6).map(|_| random_transition(&mut rng, 3)).collect();
        let refs: Vec<&Transition> = ts.iter().collect();
        let w: Vec<f64> = (0..6).map(|_| rng.gen_range(0.2..1.0)).collect();
        let arch = Architecture::new(9, vec![16, 16]).unwrap();
        let net = QNetwork::new(arch.clone(), 7);
        let target = QNetwork::new(arch, 8);
        let g = loss_and_gradient(&net, &target, &refs, &w, 0.85, 0.5).unwrap();
        let mut probe = net.clone();
        let h = 1e-6;
        let mut worst: f64 = 0.0;
        for k in 0..net.params().len() {
            let p0 = net.params()[k];
            probe.params_mut()[k] = p0 + h;
            let up = numeric_loss(&probe, &target, &refs, &w);
            probe.params_mut()[k] = p0 - h;
            let down = numeric_loss(&probe, &target, &refs, &w);
            probe.params_mut()[k] = p0;
            let fd = (up - down) / (2.0 * h);
            let err = (fd - g.grad[k]).abs() / fd.abs().max(g.grad[k].abs()).max(1e-6);
            worst = worst.max(err);
        }
        assert!(worst < 1e-5, "max relative error {worst}");
    }

    #[test]
    fn repeated_updates_on_one_batch_descend() {
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        let ts: Vec<Transition> = (0..8).map(|_| random_transition(&mut rng, 3)).collect();
        let refs: Vec<&Transition> = ts.iter().collect();
        let mut net = QNetwork::new(Architecture::new(9, vec![16]).unwrap(), 1);
        let target = net.clone();
        let mut opt = Adam::new(net.params().len(), 1e-4);
        let mut prev = f64::INFINITY;
        for _ in 0..25 {
            let g = loss_and_gradient(&net, &target, &refs, &[1.0; 8], 0.85, 0.5).unwrap();
            assert!(g.losses.total < prev, "{} !< {prev}", g.losses.total);
            prev = g.losses.total;
            opt.step(net.params_mut(), &g.grad);
        }
    }

    #[test]
    fn sync_copies_exactly_and_is_idempotent() {
        let cfg = AgentConfig {
            hidden: vec![16],
            batch_size: 4,
            target_sync: 3,
            lr: 1e-3,
            ..AgentConfig::default()
        };
        let mut agent = Agent::new(cfg, tiny_arch(), 5).unwrap();
        let init = agent.target.clone();
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        for _ in 0..8 {
            agent.remember(random_transition(&mut rng, 2));
        }
        agent.train_step().unwrap().unwrap();
        agent.train_step().unwrap().unwrap();
        assert_eq!(agent.target, init);
        assert_ne!(agent.online, init);
        let r = agent.train_step().unwrap().unwrap();
        assert!(r.synced);
        assert_eq!(agent.target, agent.online);
        agent.sync_target();
        assert_eq!(agent.target, agent.online);
        let x = vec![0.3; 6];
        assert_eq!(agent.online.forward(&x).unwrap(), agent.target.forward(&x).unwrap());
    }

    #[test]
    fn observation_input_layout() {
        let o = Observation {
            frames: [Arc::new(vec![1.0]), Arc::new(vec![2.0]), Arc::new(vec![3.0])],
            pose: Some([0.5, 0.25, 0.125]),
        };
        assert_eq!(o.to_input(), vec![1.0, 2.0, 3.0, 0.5, 0.25, 0.125]);
        assert_eq!(o.input_len(), 6);
    }

    #[test]
    fn config_validation() {
        assert!(AgentConfig::default().validate().is_ok());
        for bad in [
            AgentConfig { gamma: 1.0, ..AgentConfig::default() },
            AgentConfig { delta: -1.0, ..AgentConfig::default() },
            AgentConfig { lr: 0.0, ..AgentConfig::default() },
            AgentConfig { batch_size: 0, ..AgentConfig::default() },
        ] {
            assert!(matches!(bad.validate(), Err(Error::Config(_))));
        }
        let c = AgentConfig::default();
        assert_eq!(c.input_len(128).unwrap(), 3 * 32 * 32 + 3);
        assert!(c.input_len(130).is_err());
    }
}
