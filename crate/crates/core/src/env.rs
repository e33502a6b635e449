//! Plane-search environment over a single volume.
//!
//! The agent moves the tangent point one axis at a time. A step size starts
//! at 1 mm and drops by a factor of ten (down to 0.01 mm) each time the agent
//! reverses its previous action three times in a row. Episodes end after
//! [`MAX_STEPS`] moves.

use std::sync::Arc;

use rand::Rng;

use crate::error::{Error, Result};
use crate::geom::{build_frame, TangentPoint, Vec3, R_MIN};
use crate::imaging::{ncc, Image};
use crate::volume::{plane_heatmap_sum, Grid, Volume};

pub const MAX_STEPS: usize = 60;
pub const STEP_STAGES: [f64; 3] = [1.0, 0.1, 0.01];
pub const OSCILLATION_LIMIT: u32 = 3;
pub const NUM_ACTIONS: usize = 6;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Axis {
    X,
    Y,
    Z,
}

impl Axis {
    pub fn index(self) -> usize {
        self as usize
    }
}

/// Translation of one tangent coordinate. Indexed `X+, X-, Y+, Y-, Z+, Z-`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Action {
    pub axis: Axis,
    pub positive: bool,
}

impl Action {
    pub const ALL: [Action; NUM_ACTIONS] = [
        Action::new(Axis::X, true),
        Action::new(Axis::X, false),
        Action::new(Axis::Y, true),
        Action::new(Axis::Y, false),
        Action::new(Axis::Z, true),
        Action::new(Axis::Z, false),
    ];

    pub const fn new(axis: Axis, positive: bool) -> Self {
        Action { axis, positive }
    }

    pub fn index(self) -> usize {
        self.axis.index() * 2 + usize::from(!self.positive)
    }

    pub fn from_index(i: usize) -> Option<Action> {
        Action::ALL.get(i).copied()
    }

    pub fn inverse(self) -> Action {
        Action::new(self.axis, !self.positive)
    }

    pub fn sign(self) -> f64 {
        if self.positive {
            1.0
        } else {
            -1.0
        }
    }

    /// Displacement of the tangent point for a given step size.
    pub fn delta(self, step_size: f64) -> Vec3 {
        Vec3::ZERO.with(self.axis.index(), self.sign() * step_size)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct EnvConfig {
    /// Reslice side length, pixels.
    pub frame_extent: usize,
    /// mm per reslice pixel
    pub pixel_pitch: f64,
    pub max_steps: usize,
    /// Use the anatomical reward exactly as printed, which rewards moving
    /// the heatmap sum away from its target value.
    pub asr_sign_literal: bool,
    /// Search box inflation relative to the grid extent.
    pub bounds_margin: f64,
}

impl Default for EnvConfig {
    fn default() -> Self {
        EnvConfig {
            frame_extent: 128,
            pixel_pitch: 1.0,
            max_steps: MAX_STEPS,
            asr_sign_literal: false,
            bounds_margin: 0.2,
        }
    }
}

impl EnvConfig {
    pub fn validate(&self) -> Result<()> {
        if self.frame_extent == 0 {
            return Err(Error::config("frame_extent must be positive"));
        }
        if !(self.pixel_pitch > 0.0) {
            return Err(Error::config("pixel_pitch must be positive"));
        }
        if self.max_steps == 0 || self.max_steps > MAX_STEPS {
            return Err(Error::config(format!("max_steps must lie in 1..={MAX_STEPS}")));
        }
        if !(self.bounds_margin >= 0.0) {
            return Err(Error::config("bounds_margin must be non-negative"));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct EnvState {
    /// Normalized reslices at steps `t-2`, `t-1`, `t`.
    pub frames: [Arc<Image>; 3],
    pub tangent: TangentPoint,
    pub step_index: usize,
    pub step_size: f64,
    pub osc_counter: u32,
    pub last_action: Option<Action>,
    pub done: bool,
    /// Heatmap sum of the current plane, cached for the next reward.
    pub heat_sum: f64,
}

impl EnvState {
    pub fn current_frame(&self) -> &Image {
        &self.frames[2]
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Reward {
    pub total: i32,
    pub slr: i32,
    pub asr: i32,
}

#[derive(Clone, Debug, PartialEq)]
pub struct StepOutcome {
    pub state: EnvState,
    pub reward: i32,
    pub done: bool,
    pub slr: i32,
    pub asr: i32,
    /// NCC of the new frame against the ground-truth reslice.
    pub aux_target: f64,
}

fn sgn(x: f64) -> i32 {
    if x > 0.0 {
        1
    } else if x < 0.0 {
        -1
    } else {
        0
    }
}

/// Immutable environment bound to one volume. Episode state lives in
/// [`EnvState`], so one environment can serve many episodes.
#[derive(Clone, Debug)]
pub struct Environment<'v> {
    vol: &'v Volume,
    cfg: EnvConfig,
    gt_frame: Image,
    gt_heat: f64,
    lo: Vec3,
    hi: Vec3,
}

impl<'v> Environment<'v> {
    pub fn new(vol: &'v Volume, cfg: EnvConfig) -> Result<Self> {
        cfg.validate()?;
        let gt = vol.gt_tangent();
        let gt_frame = reslice_normalized(vol, &cfg, &gt);
        let gt_heat = plane_heatmap_sum(vol, &gt, cfg.pixel_pitch, cfg.frame_extent);
        let ext = vol.physical_max();
        let lo = ext * -cfg.bounds_margin;
        let hi = ext * (1.0 + cfg.bounds_margin);
        Ok(Environment {
            vol,
            cfg,
            gt_frame,
            gt_heat,
            lo,
            hi,
        })
    }

    pub fn volume(&self) -> &'v Volume {
        self.vol
    }

    pub fn config(&self) -> &EnvConfig {
        &self.cfg
    }

    pub fn target(&self) -> TangentPoint {
        self.vol.gt_tangent()
    }

    pub fn gt_frame(&self) -> &Image {
        &self.gt_frame
    }

    pub fn gt_heat_sum(&self) -> f64 {
        self.gt_heat
    }

    /// Normalized intensity reslice of a plane.
    pub fn observe(&self, p: &TangentPoint) -> Image {
        reslice_normalized(self.vol, &self.cfg, p)
    }

    pub fn heat_sum(&self, p: &TangentPoint) -> f64 {
        plane_heatmap_sum(self.vol, p, self.cfg.pixel_pitch, self.cfg.frame_extent)
    }

    pub fn reset(&self, start: TangentPoint) -> Result<EnvState> {
        let start = TangentPoint::from_vec(start.as_vec())?;
        let frame = Arc::new(self.observe(&start));
        Ok(EnvState {
            frames: [frame.clone(), frame.clone(), frame],
            tangent: start,
            step_index: 0,
            step_size: STEP_STAGES[0],
            osc_counter: 0,
            last_action: None,
            done: false,
            heat_sum: self.heat_sum(&start),
        })
    }

    /// Applies `action` with the oscillation-driven step schedule.
    ///
    /// The reversal that completes an oscillation already moves with the
    /// reduced step.
    pub fn step(&self, state: &EnvState, action: Action) -> Result<StepOutcome> {
        if state.done {
            return Err(Error::EpisodeFinished);
        }
        let mut osc = if state.last_action == Some(action.inverse()) {
            state.osc_counter + 1
        } else {
            0
        };
        let mut step_size = state.step_size;
        if osc >= OSCILLATION_LIMIT {
            step_size = next_stage(step_size);
            osc = 0;
        }
        self.advance(state, action, step_size, osc)
    }

    /// Applies `action` with an explicit step size and no oscillation
    /// tracking; used by scripted controllers.
    pub fn step_sized(&self, state: &EnvState, action: Action, step_size: f64) -> Result<StepOutcome> {
        if state.done {
            return Err(Error::EpisodeFinished);
        }
        if !(step_size > 0.0) {
            return Err(Error::config("step size must be positive"));
        }
        self.advance(state, action, step_size, 0)
    }

    fn advance(&self, state: &EnvState, action: Action, step_size: f64, osc: u32) -> Result<StepOutcome> {
        let moved = self.clamp(state.tangent.as_vec() + action.delta(step_size), state.tangent);
        let frame = Arc::new(self.observe(&moved));
        let heat = self.heat_sum(&moved);
        let reward = self.reward_from_sums(&state.tangent, &moved, state.heat_sum, heat);
        let aux = similarity_or_zero(&frame, &self.gt_frame);
        let step_index = state.step_index + 1;
        let done = step_index >= self.cfg.max_steps;
        let next = EnvState {
            frames: [state.frames[1].clone(), state.frames[2].clone(), frame],
            tangent: moved,
            step_index,
            step_size,
            osc_counter: osc,
            last_action: Some(action),
            done,
            heat_sum: heat,
        };
        Ok(StepOutcome {
            state: next,
            reward: reward.total,
            done,
            slr: reward.slr,
            asr: reward.asr,
            aux_target: aux,
        })
    }

    /// Tangent point reached from `from` by one move, after clamping.
    pub fn destination(&self, from: &TangentPoint, action: Action, step_size: f64) -> TangentPoint {
        self.clamp(from.as_vec() + action.delta(step_size), *from)
    }

    /// Keeps the tangent point inside the search box and off the origin.
    fn clamp(&self, p: Vec3, fallback: TangentPoint) -> TangentPoint {
        let boxed = Vec3::new(
            p.x.clamp(self.lo.x, self.hi.x),
            p.y.clamp(self.lo.y, self.hi.y),
            p.z.clamp(self.lo.z, self.hi.z),
        );
        let r = boxed.norm();
        if r >= R_MIN {
            return TangentPoint::from_vec(boxed).unwrap_or(fallback);
        }
        if r == 0.0 {
            return fallback;
        }
        TangentPoint::from_vec(boxed * (R_MIN / r)).unwrap_or(fallback)
    }

    pub fn search_bounds(&self) -> (Vec3, Vec3) {
        (self.lo, self.hi)
    }

    /// Spatial-anatomical reward for moving from `prev` to `cur`.
    pub fn compute_reward(&self, prev: &TangentPoint, cur: &TangentPoint) -> Reward {
        let (hp, hc) = (self.heat_sum(prev), self.heat_sum(cur));
        self.reward_from_sums(prev, cur, hp, hc)
    }

    fn reward_from_sums(&self, prev: &TangentPoint, cur: &TangentPoint, heat_prev: f64, heat_cur: f64) -> Reward {
        let target = self.target().as_vec();
        let slr = sgn(prev.as_vec().distance(target) - cur.as_vec().distance(target));
        let asr = anatomical_reward(heat_prev, heat_cur, self.gt_heat, self.cfg.asr_sign_literal);
        Reward {
            total: slr + asr,
            slr,
            asr,
        }
    }

    /// NCC of the newest frame against the ground-truth reslice; blank
    /// frames score 0.
    pub fn aux_target(&self, state: &EnvState) -> f64 {
        similarity_or_zero(state.current_frame(), &self.gt_frame)
    }
}

/// Sign of the heatmap-sum improvement; `literal` flips to the printed
/// operand order.
pub fn anatomical_reward(heat_prev: f64, heat_cur: f64, heat_gt: f64, literal: bool) -> i32 {
    let gap_prev = (heat_prev - heat_gt).abs();
    let gap_cur = (heat_cur - heat_gt).abs();
    if literal {
        sgn(gap_cur - gap_prev)
    } else {
        sgn(gap_prev - gap_cur)
    }
}

fn next_stage(step: f64) -> f64 {
    STEP_STAGES
        .iter()
        .copied()
        .find(|&s| s < step)
        .unwrap_or(STEP_STAGES[STEP_STAGES.len() - 1])
}

fn similarity_or_zero(a: &Image, b: &Image) -> f64 {
    ncc(a, b).unwrap_or(0.0)
}

fn reslice_normalized(vol: &Volume, cfg: &EnvConfig, p: &TangentPoint) -> Image {
    let frame = build_frame(p, cfg.pixel_pitch, cfg.frame_extent);
    vol.reslice(&frame, Grid::Intensity).min_max_normalized()
}

/// Samples episode starts uniformly in `mean +- 2 std` per coordinate.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct StartSampler {
    pub mean: Vec3,
    pub std: Vec3,
}

impl StartSampler {
    pub fn from_targets(targets: &[TangentPoint]) -> Result<Self> {
        if targets.is_empty() {
            return Err(Error::config("start sampler needs at least one target"));
        }
        let n = targets.len() as f64;
        let mean = targets
            .iter()
            .fold(Vec3::ZERO, |acc, t| acc + t.as_vec())
            * (1.0 / n);
        let var = targets.iter().fold(Vec3::ZERO, |acc, t| {
            let d = t.as_vec() - mean;
            acc + Vec3::new(d.x * d.x, d.y * d.y, d.z * d.z)
        }) * (1.0 / n);
        Ok(StartSampler {
            mean,
            std: Vec3::new(var.x.sqrt(), var.y.sqrt(), var.z.sqrt()),
        })
    }

    pub fn sample(&self, rng: &mut impl Rng) -> TangentPoint {
        loop {
            let mut c = [0.0; 3];
            for (a, slot) in c.iter_mut().enumerate() {
                let (m, s) = (self.mean.get(a), self.std.get(a));
                *slot = if s > 0.0 {
                    rng.gen_range(m - 2.0 * s..=m + 2.0 * s)
                } else {
                    m
                };
            }
            if let Ok(p) = TangentPoint::from_vec(Vec3::from_array(c)) {
                return p;
            }
        }
    }
}

/// Test-time start: one voxel along each axis from the grid corner.
pub fn canonical_start(spacing: f64) -> TangentPoint {
    TangentPoint::new(spacing, spacing, spacing).expect("spacing is positive")
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::volume::{generate_phantom, PhantomConfig};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn phantom() -> Volume {
        generate_phantom(&PhantomConfig {
            seed: 21,
            dims: [32, 32, 32],
            ..PhantomConfig::default()
        })
        .unwrap()
    }

    fn cfg() -> EnvConfig {
        EnvConfig {
            frame_extent: 48,
            ..EnvConfig::default()
        }
    }

    #[test]
    fn action_indexing() {
        for (i, a) in Action::ALL.iter().enumerate() {
            assert_eq!(a.index(), i);
            assert_eq!(Action::from_index(i), Some(*a));
            assert_eq!(a.inverse().inverse(), *a);
            assert_ne!(a.inverse(), *a);
            assert_eq!(a.inverse().axis, a.axis);
        }
        assert_eq!(Action::from_index(6), None);
    }

    #[test]
    fn reset_gives_three_identical_frames() {
        let vol = phantom();
        let env = Environment::new(&vol, cfg()).unwrap();
        let s = env.reset(TangentPoint::new(3.0, 2.0, 9.0).unwrap()).unwrap();
        assert_eq!(s.frames[0], s.frames[1]);
        assert_eq!(s.frames[1], s.frames[2]);
        assert_eq!((s.step_index, s.step_size, s.osc_counter), (0, 1.0, 0));

        let at_gt = env.reset(vol.gt_tangent()).unwrap();
        assert!((env.aux_target(&at_gt) - 1.0).abs() < 1e-12);
        assert!(TangentPoint::new(0.0, 0.0, 0.0).is_err());
    }

    #[test]
    fn translation_step() {
        let vol = phantom();
        let env = Environment::new(&vol, cfg()).unwrap();
        let s = env.reset(TangentPoint::new(5.0, 0.0, 0.0).unwrap()).unwrap();
        let out = env.step(&s, Action::new(Axis::X, true)).unwrap();
        assert_eq!(out.state.tangent.as_vec(), Vec3::new(6.0, 0.0, 0.0));
        assert_eq!(out.state.step_index, 1);
        assert_eq!(out.reward, out.slr + out.asr);
        assert_eq!(out.state.frames[1], s.frames[2]);
    }

    #[test]
    fn episode_ends_at_sixty() {
        let vol = phantom();
        let env = Environment::new(&vol, cfg()).unwrap();
        let mut s = env.reset(TangentPoint::new(5.0, 5.0, 5.0).unwrap()).unwrap();
        for i in 0..MAX_STEPS {
            let out = env.step(&s, Action::ALL[i % 5]).unwrap();
            assert_eq!(out.done, i + 1 == MAX_STEPS);
            s = out.state;
        }
        assert!(matches!(env.step(&s, Action::ALL[0]), Err(Error::EpisodeFinished)));
    }

    #[test]
    fn three_reversals_shrink_step() {
        let vol = phantom();
        let env = Environment::new(&vol, cfg()).unwrap();
        let x_up = Action::new(Axis::X, true);
        let mut s = env.reset(TangentPoint::new(5.0, 5.0, 5.0).unwrap()).unwrap();
        let mut sizes = vec![];
        for a in [x_up, x_up.inverse(), x_up, x_up.inverse()] {
            s = env.step(&s, a).unwrap().state;
            sizes.push(s.step_size);
        }
        assert_eq!(sizes, vec![1.0, 1.0, 1.0, 0.1]);
        assert_eq!(s.osc_counter, 0);
        assert!((s.tangent.tx() - 5.9).abs() < 1e-12);

        for a in [x_up, x_up.inverse(), x_up, x_up, x_up.inverse(), x_up, x_up.inverse()] {
            s = env.step(&s, a).unwrap().state;
        }
        assert_eq!(s.step_size, 0.01);
        for a in [x_up, x_up.inverse(), x_up, x_up.inverse()] {
            s = env.step(&s, a).unwrap().state;
        }
        assert_eq!(s.step_size, 0.01);
    }

    #[test]
    fn non_reversal_resets_counter() {
        let vol = phantom();
        let env = Environment::new(&vol, cfg()).unwrap();
        let x = Action::new(Axis::X, true);
        let y = Action::new(Axis::Y, true);
        let mut s = env.reset(TangentPoint::new(5.0, 5.0, 5.0).unwrap()).unwrap();
        for a in [x, x.inverse(), x, y, y.inverse(), y] {
            s = env.step(&s, a).unwrap().state;
        }
        assert_eq!(s.step_size, 1.0);
        assert_eq!(s.osc_counter, 2);
    }

    #[test]
    fn moves_are_clamped_to_search_box() {
        let vol = phantom();
        let env = Environment::new(&vol, cfg()).unwrap();
        let (lo, hi) = env.search_bounds();
        let s = env.reset(TangentPoint::new(hi.x - 0.25, 5.0, 5.0).unwrap()).unwrap();
        let out = env.step(&s, Action::new(Axis::X, true)).unwrap();
        assert_eq!(out.state.tangent.tx(), hi.x);
        let s = env.reset(TangentPoint::new(lo.x + 0.5, 0.0, 0.0).unwrap()).unwrap();
        let out = env.step(&s, Action::new(Axis::X, false)).unwrap();
        assert_eq!(out.state.tangent.tx(), lo.x);
    }

    #[test]
    fn moves_never_reach_the_origin() {
        let vol = phantom();
        let env = Environment::new(&vol, cfg()).unwrap();
        let s = env.reset(TangentPoint::new(0.5, 0.0, 0.0).unwrap()).unwrap();
        let out = env.step(&s, Action::new(Axis::X, false)).unwrap();
        assert!(out.state.tangent.radius() >= R_MIN);
        let s = env.reset(TangentPoint::new(1.0, 0.0, 0.0).unwrap()).unwrap();
        let out = env.step(&s, Action::new(Axis::X, false)).unwrap();
        assert_eq!(out.state.tangent, s.tangent);
    }

    #[test]
    fn reward_examples() {
        let vol = phantom();
        let env = Environment::new(&vol, cfg()).unwrap();
        let p = TangentPoint::new(4.0, 4.0, 4.0).unwrap();
        assert_eq!(env.compute_reward(&p, &p), Reward { total: 0, slr: 0, asr: 0 });

        let gt = vol.gt_tangent().as_vec();
        let far = TangentPoint::from_vec(gt + gt.normalized() * 30.0).unwrap();
        let near = TangentPoint::from_vec(gt + gt.normalized() * 2.0).unwrap();
        let r = env.compute_reward(&far, &near);
        assert_eq!(r.slr, 1);
        assert_eq!(r.asr, 1);
        assert_eq!(r.total, 2);
        assert_eq!(env.compute_reward(&near, &far).total, -2);
    }

    #[test]
    fn anatomical_reward_orientation() {
        assert_eq!(anatomical_reward(10.0, 15.0, 20.0, false), 1);
        assert_eq!(anatomical_reward(10.0, 15.0, 20.0, true), -1);
        assert_eq!(anatomical_reward(25.0, 22.0, 20.0, false), 1);
        assert_eq!(anatomical_reward(10.0, 31.0, 20.0, false), -1);
        assert_eq!(anatomical_reward(10.0, 30.0, 20.0, false), 0);
    }

    #[test]
    fn blank_frame_scores_zero() {
        let vol = phantom();
        let env = Environment::new(&vol, cfg()).unwrap();
        let outside = TangentPoint::new(-5.0, -5.0, -5.0).unwrap();
        let s = env.reset(outside).unwrap();
        assert!(s.current_frame().data().iter().all(|&v| v == 0.0));
        assert_eq!(env.aux_target(&s), 0.0);
    }

    #[test]
    fn aux_target_delegates_to_ncc() {
        let vol = phantom();
        let env = Environment::new(&vol, cfg()).unwrap();
        let s = env.reset(TangentPoint::new(3.0, 2.0, 9.0).unwrap()).unwrap();
        assert_eq!(env.aux_target(&s), ncc(s.current_frame(), env.gt_frame()).unwrap());
    }

    #[test]
    fn start_sampler_stays_in_band() {
        let targets: Vec<_> = [(1.0, 2.0, 10.0), (3.0, 2.0, 14.0), (2.0, 2.0, 12.0)]
            .iter()
            .map(|&(x, y, z)| TangentPoint::new(x, y, z).unwrap())
            .collect();
        let sampler = StartSampler::from_targets(&targets).unwrap();
        assert_eq!(sampler.mean, Vec3::new(2.0, 2.0, 12.0));
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for _ in 0..1000 {
            let p = sampler.sample(&mut rng).as_vec();
            for a in 0..3 {
                let (m, s) = (sampler.mean.get(a), sampler.std.get(a));
                assert!(p.get(a) >= m - 2.0 * s - 1e-12 && p.get(a) <= m + 2.0 * s + 1e-12);
            }
            assert_eq!(p.y, 2.0);
        }
        assert!(StartSampler::from_targets(&[]).is_err());
        assert_eq!(canonical_start(0.5).as_vec(), Vec3::new(0.5, 0.5, 0.5));
    }

    #[test]
    fn step_is_deterministic() {
        let vol = phantom();
        let env = Environment::new(&vol, cfg()).unwrap();
        let s = env.reset(TangentPoint::new(3.0, 2.0, 9.0).unwrap()).unwrap();
        let a = env.step(&s, Action::ALL[4]).unwrap();
        let b = env.step(&s, Action::ALL[4]).unwrap();
        assert_eq!(a, b);
    }
}
