//! Synthetic planar pushing environment with exact N-fold rotational
//! symmetry and ground-truth behavior labels.
//!
//! N fingertips and one object live in the unit disc; the task is to push
//! the object to a goal. Fingers have evenly spaced home directions, and
//! each finger's position and velocity command are expressed in its own
//! home-aligned local frame. In that representation, rotating the whole
//! scene by one symmetry step is exactly: shift the finger blocks one slot
//! and rotate the world-frame object/goal coordinates. Dynamics use f64
//! throughout; datasets store f32.
//!
//! State layout: `[finger_0 xy, .., finger_{N-1} xy, object xy, goal xy]`
//! (fingers local, object/goal world). Action layout: per-finger local
//! velocity commands, `2N` wide.

use rand::Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dataset::{
    logistic_reward, Episode, EpisodeDataset, Label, RewardKernelParams, Transition,
};
use crate::error::{domain, Result};
use crate::rng;
use crate::symaug::{BlockCycle, SymmetrySchema, VectorSchema};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EnvParams {
    pub n_fingers: usize,
    /// A finger within this distance of the object can push it.
    pub contact_radius: f64,
    /// Per-step cap on a finger's commanded displacement (norm-clamped).
    pub finger_speed_max: f64,
    /// Fraction of a pushing finger's motion transferred to the object.
    pub push_gain: f64,
    pub kernel: RewardKernelParams,
    pub episode_len: usize,
    /// Distance of each finger's home position from the origin.
    pub finger_home_radius: f64,
    /// Initial-state jitter around the home position, per local axis.
    pub home_jitter: f64,
    /// Object and goal spawn uniformly in a disc of this radius.
    pub object_spawn_radius: f64,
    /// Minimum initial object-goal distance.
    pub min_goal_separation: f64,
    /// Gaussian noise added to every expert action component.
    pub expert_noise_std: f64,
    /// Probability that a weak-policy step behaves like the expert
    /// (the rest are uniform random). Zero gives a purely random policy.
    pub weak_expert_prob: f64,
    /// Base seed for dataset generation; episode i uses an independent
    /// substream keyed by i.
    pub rng_seed: u64,
}

impl Default for EnvParams {
    fn default() -> EnvParams {
        EnvParams {
            n_fingers: 3,
            contact_radius: 0.08,
            finger_speed_max: 0.05,
            push_gain: 1.0,
            kernel: RewardKernelParams { a: 30.0, b: 0.01 },
            episode_len: 150,
            finger_home_radius: 0.6,
            home_jitter: 0.05,
            object_spawn_radius: 0.8,
            min_goal_separation: 0.0,
            expert_noise_std: 0.002,
            weak_expert_prob: 0.5,
            rng_seed: 0,
        }
    }
}

impl EnvParams {
    pub fn validate(&self) -> Result<()> {
        if self.n_fingers < 2 {
            return Err(domain("need at least 2 fingers for a nontrivial symmetry"));
        }
        if !(self.contact_radius > 0.0 && self.contact_radius <= 1.0) {
            return Err(domain("contact_radius must be in (0, 1]"));
        }
        if !(self.finger_speed_max > 0.0) {
            return Err(domain("finger_speed_max must be positive"));
        }
        if !(self.push_gain > 0.0 && self.push_gain <= 1.0) {
            return Err(domain("push_gain must be in (0, 1]"));
        }
        self.kernel.validate()?;
        if self.episode_len == 0 {
            return Err(domain("episode_len must be >= 1"));
        }
        if !(self.finger_home_radius >= 0.0 && self.finger_home_radius <= 1.0) {
            return Err(domain("finger_home_radius must be in [0, 1]"));
        }
        if !(self.home_jitter >= 0.0) {
            return Err(domain("home_jitter must be >= 0"));
        }
        if !(self.object_spawn_radius > 0.0 && self.object_spawn_radius <= 1.0) {
            return Err(domain("object_spawn_radius must be in (0, 1]"));
        }
        if !(self.min_goal_separation >= 0.0
            && self.min_goal_separation < 2.0 * self.object_spawn_radius)
        {
            return Err(domain(
                "min_goal_separation must be in [0, 2 * object_spawn_radius)",
            ));
        }
        if !(self.expert_noise_std >= 0.0) {
            return Err(domain("expert_noise_std must be >= 0"));
        }
        if !(0.0..=1.0).contains(&self.weak_expert_prob) {
            return Err(domain("weak_expert_prob must be in [0, 1]"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
struct Vec2 {
    x: f64,
    y: f64,
}

impl Vec2 {
    fn new(x: f64, y: f64) -> Vec2 {
        Vec2 { x, y }
    }
    fn add(self, o: Vec2) -> Vec2 {
        Vec2::new(self.x + o.x, self.y + o.y)
    }
    fn sub(self, o: Vec2) -> Vec2 {
        Vec2::new(self.x - o.x, self.y - o.y)
    }
    fn scale(self, s: f64) -> Vec2 {
        Vec2::new(self.x * s, self.y * s)
    }
    fn dot(self, o: Vec2) -> f64 {
        self.x * o.x + self.y * o.y
    }
    fn norm(self) -> f64 {
        self.x.hypot(self.y)
    }
    /// Counterclockwise perpendicular.
    fn perp(self) -> Vec2 {
        Vec2::new(-self.y, self.x)
    }
    /// Rotation by the angle whose cosine/sine are given.
    fn rot(self, cos: f64, sin: f64) -> Vec2 {
        Vec2::new(self.x * cos - self.y * sin, self.x * sin + self.y * cos)
    }
    fn clamp_norm(self, max: f64) -> Vec2 {
        let n = self.norm();
        if n > max {
            self.scale(max / n)
        } else {
            self
        }
    }
}

/// Expert controller geometry, all in units of the contact radius.
mod expert {
    /// Pushing standoff ring: where the finger sits behind the object.
    pub const STANDOFF: f64 = 0.8;
    /// Cosine of the alignment cone (~20 degrees) behind the object.
    pub const ALIGN_COS: f64 = 0.94;
    /// Inside this ring an aligned finger starts pushing.
    pub const NEAR: f64 = 1.25;
    /// Outside this ring the finger beelines regardless of alignment.
    pub const FAR: f64 = 2.5;
    /// Aligned approaches stop here, just outside contact, so that entering
    /// contact is always a deliberate, speed-capped push step.
    pub const CONTACT_EDGE: f64 = 1.05;
    /// Orbit radius while circling to the back side.
    pub const TRAVEL_RADIUS: f64 = 1.3;
    /// Where the far beeline stops, just outside the orbit radius.
    pub const TRAVEL_STOP: f64 = 1.4;
    /// Gain on radial distance errors.
    pub const RADIAL_GAIN: f64 = 1.5;
    /// Cap on the push transferred in one contact step, as a fraction of
    /// the remaining object-goal distance. Below 1, the object cannot
    /// overshoot the goal, which would flip the push direction and send
    /// the finger hunting around the object.
    pub const PUSH_MARGIN: f64 = 0.95;
    /// Object-goal dead zone: closer than this, the expert holds still.
    pub const HOLD: f64 = 0.1;
}

pub struct SynthEnv {
    params: EnvParams,
    /// Per-finger home direction as (cos, sin) of
    /// `pi/2 - 2*pi*i/N`: slot indices run clockwise from the top, so a
    /// counterclockwise scene rotation shifts content from slot `i + 1`
    /// into slot `i`.
    home: Vec<(f64, f64)>,
}

impl SynthEnv {
    pub fn new(params: EnvParams) -> Result<SynthEnv> {
        params.validate()?;
        let n = params.n_fingers;
        let home = (0..n)
            .map(|i| {
                let theta =
                    std::f64::consts::FRAC_PI_2 - 2.0 * std::f64::consts::PI * i as f64 / n as f64;
                (theta.cos(), theta.sin())
            })
            .collect();
        Ok(SynthEnv { params, home })
    }

    pub fn params(&self) -> &EnvParams {
        &self.params
    }

    pub fn state_dim(&self) -> usize {
        2 * self.params.n_fingers + 4
    }

    pub fn action_dim(&self) -> usize {
        2 * self.params.n_fingers
    }

    fn finger_local(&self, state: &[f64], i: usize) -> Vec2 {
        Vec2::new(state[2 * i], state[2 * i + 1])
    }

    /// World position of finger `i`, decoded from its local coordinates.
    pub fn finger_world(&self, state: &[f64], i: usize) -> (f64, f64) {
        let (c, s) = self.home[i];
        let w = self.finger_local(state, i).rot(c, s);
        (w.x, w.y)
    }

    fn to_local(&self, i: usize, w: Vec2) -> Vec2 {
        let (c, s) = self.home[i];
        w.rot(c, -s)
    }

    pub fn object(&self, state: &[f64]) -> (f64, f64) {
        let n = self.params.n_fingers;
        (state[2 * n], state[2 * n + 1])
    }

    pub fn goal(&self, state: &[f64]) -> (f64, f64) {
        let n = self.params.n_fingers;
        (state[2 * n + 2], state[2 * n + 3])
    }

    pub fn object_goal_distance(&self, state: &[f64]) -> f64 {
        let (ox, oy) = self.object(state);
        let (gx, gy) = self.goal(state);
        Vec2::new(ox - gx, oy - gy).norm()
    }

    /// Samples a start state: fingers jittered around their homes, object
    /// and goal uniform in the spawn disc with a minimum separation.
    pub fn initial_state(&self, rng: &mut impl Rng) -> Vec<f64> {
        let p = &self.params;
        let mut state = Vec::with_capacity(self.state_dim());
        for _ in 0..p.n_fingers {
            let jx = if p.home_jitter > 0.0 {
                rng.random_range(-p.home_jitter..p.home_jitter)
            } else {
                0.0
            };
            let jy = if p.home_jitter > 0.0 {
                rng.random_range(-p.home_jitter..p.home_jitter)
            } else {
                0.0
            };
            state.push(p.finger_home_radius + jx);
            state.push(jy);
        }
        let object = sample_disc(rng, p.object_spawn_radius);
        let mut goal = sample_disc(rng, p.object_spawn_radius);
        let mut tries = 0;
        while goal.sub(object).norm() < p.min_goal_separation {
            goal = sample_disc(rng, p.object_spawn_radius);
            tries += 1;
            if tries >= 1000 {
                // Pathological parameters: place the goal toward the origin.
                let dir = if object.norm() > 1e-9 {
                    object.scale(-1.0 / object.norm())
                } else {
                    Vec2::new(1.0, 0.0)
                };
                goal = object.add(dir.scale(p.min_goal_separation));
                break;
            }
        }
        state.extend_from_slice(&[object.x, object.y, goal.x, goal.y]);
        state
    }

    /// Advances one step: clamp finger commands, move fingers, transfer
    /// contact pushes to the object, clamp everything to the unit disc, and
    /// reward proximity to the goal after the move.
    pub fn step(&self, state: &[f64], action: &[f64]) -> (Vec<f64>, f64) {
        let p = &self.params;
        let n = p.n_fingers;
        assert_eq!(state.len(), self.state_dim(), "state width mismatch");
        assert_eq!(action.len(), self.action_dim(), "action width mismatch");

        let (ox, oy) = self.object(state);
        let (gx, gy) = self.goal(state);
        let object = Vec2::new(ox, oy);
        let goal = Vec2::new(gx, gy);

        let mut push = Vec2::new(0.0, 0.0);
        let mut next = vec![0.0; self.state_dim()];
        for i in 0..n {
            let (c, s) = self.home[i];
            let before = self.finger_local(state, i).rot(c, s);
            let v = Vec2::new(action[2 * i], action[2 * i + 1])
                .rot(c, s)
                .clamp_norm(p.finger_speed_max);
            let after = before.add(v).clamp_norm(1.0);
            if after.sub(object).norm() <= p.contact_radius {
                let toward = object.sub(before);
                let d = toward.norm();
                if d > 1e-12 {
                    let u = toward.scale(1.0 / d);
                    let c_push = after.sub(before).dot(u).max(0.0);
                    push = push.add(u.scale(p.push_gain * c_push));
                }
            }
            let local = self.to_local(i, after);
            next[2 * i] = local.x;
            next[2 * i + 1] = local.y;
        }
        let new_object = object.add(push).clamp_norm(1.0);
        next[2 * n] = new_object.x;
        next[2 * n + 1] = new_object.y;
        next[2 * n + 2] = goal.x;
        next[2 * n + 3] = goal.y;
        let reward = logistic_reward(new_object.sub(goal).norm(), p.kernel);
        (next, reward)
    }

    /// Pushing controller: the finger nearest the object circles to the
    /// standoff ring behind it (decomposing motion into radial and
    /// tangential parts around the object, so it never barges through),
    /// then drives the object toward the goal and holds still once the
    /// object is close enough. Other fingers hold. Gaussian noise is added
    /// to every action component.
    pub fn expert_action(&self, state: &[f64], rng: &mut impl Rng) -> Vec<f64> {
        let p = &self.params;
        let n = p.n_fingers;
        let cr = p.contact_radius;
        let speed = p.finger_speed_max;
        let (ox, oy) = self.object(state);
        let (gx, gy) = self.goal(state);
        let object = Vec2::new(ox, oy);
        let goal = Vec2::new(gx, gy);
        let mut action = vec![0.0; self.action_dim()];

        let to_goal = goal.sub(object);
        let d_goal = to_goal.norm();
        if d_goal > expert::HOLD * cr {
            let push_dir = to_goal.scale(1.0 / d_goal);
            let active = (0..n)
                .min_by(|&a, &b| {
                    let da = {
                        let (x, y) = self.finger_world(state, a);
                        Vec2::new(x - ox, y - oy).norm()
                    };
                    let db = {
                        let (x, y) = self.finger_world(state, b);
                        Vec2::new(x - ox, y - oy).norm()
                    };
                    da.total_cmp(&db)
                })
                .expect("at least one finger");
            let (fx, fy) = self.finger_world(state, active);
            let finger = Vec2::new(fx, fy);
            let rel = finger.sub(object);
            let d_obj = rel.norm();
            let bearing = if d_obj > 1e-9 {
                rel.scale(1.0 / d_obj)
            } else {
                push_dir.scale(-1.0)
            };
            let behind = push_dir.scale(-1.0);
            let aligned = bearing.dot(behind) > expert::ALIGN_COS;

            let v = if d_obj > expert::FAR * cr {
                // Beeline in, stopping outside the orbit ring.
                bearing.scale(-speed.min(d_obj - expert::TRAVEL_STOP * cr))
            } else if aligned && d_obj <= expert::NEAR * cr {
                // Push toward the goal while holding the standoff ring,
                // with the transferred push capped short of the goal.
                let forward = push_dir.scale(speed.min(d_goal));
                let radial =
                    bearing.scale((expert::STANDOFF * cr - d_obj) * expert::RADIAL_GAIN);
                let mut v = forward.add(radial);
                let inward = -v.dot(bearing);
                let max_inward = expert::PUSH_MARGIN * d_goal / p.push_gain;
                if inward > max_inward {
                    v = v.add(bearing.scale(inward - max_inward));
                }
                v
            } else if aligned {
                // Close in radially, stopping outside the contact radius.
                bearing.scale(-speed.min(d_obj - expert::CONTACT_EDGE * cr))
            } else {
                // Orbit toward the back side at a safe radius.
                let cross = bearing.x * behind.y - bearing.y * behind.x;
                let mut tangent = bearing.perp();
                if cross < 0.0 {
                    tangent = tangent.scale(-1.0);
                }
                let radial = bearing
                    .scale((expert::TRAVEL_RADIUS * cr - d_obj) * expert::RADIAL_GAIN);
                tangent.scale(speed).add(radial)
            };
            let local = self.to_local(active, v.clamp_norm(speed));
            action[2 * active] = local.x;
            action[2 * active + 1] = local.y;
        }

        if p.expert_noise_std > 0.0 {
            let noise = Normal::new(0.0, p.expert_noise_std).expect("validated std");
            for a in action.iter_mut() {
                *a += noise.sample(rng);
            }
        }
        action
    }

    /// Uniform random action within the speed box.
    pub fn random_action(&self, rng: &mut impl Rng) -> Vec<f64> {
        let m = self.params.finger_speed_max;
        (0..self.action_dim())
            .map(|_| rng.random_range(-m..m))
            .collect()
    }

    /// Weak policy: each step behaves like the expert with probability
    /// `weak_expert_prob` and uniformly randomly otherwise.
    pub fn weak_action(&self, state: &[f64], rng: &mut impl Rng) -> Vec<f64> {
        if rng.random_range(0.0..1.0) < self.params.weak_expert_prob {
            self.expert_action(state, rng)
        } else {
            self.random_action(rng)
        }
    }

    /// Rotates a state by `k` symmetry steps, computed from the scene
    /// geometry: decode fingers to the world frame, rotate every world
    /// position, shift slot indices, re-encode. Algebraically this equals
    /// the schema transform of [`SynthEnv::symmetry_schema`]; the two are
    /// implemented independently so tests can cross-check them.
    pub fn rotate_state(&self, state: &[f64], k: usize) -> Vec<f64> {
        assert_eq!(state.len(), self.state_dim(), "state width mismatch");
        let n = self.params.n_fingers;
        let k = k % n;
        let angle = 2.0 * std::f64::consts::PI * k as f64 / n as f64;
        let (sin, cos) = angle.sin_cos();
        let mut out = vec![0.0; self.state_dim()];
        for j in 0..n {
            let src = (j + k) % n;
            let (wx, wy) = self.finger_world(state, src);
            let rotated = Vec2::new(wx, wy).rot(cos, sin);
            let local = self.to_local(j, rotated);
            out[2 * j] = local.x;
            out[2 * j + 1] = local.y;
        }
        let (ox, oy) = self.object(state);
        let (gx, gy) = self.goal(state);
        let o = Vec2::new(ox, oy).rot(cos, sin);
        let g = Vec2::new(gx, gy).rot(cos, sin);
        out[2 * n] = o.x;
        out[2 * n + 1] = o.y;
        out[2 * n + 2] = g.x;
        out[2 * n + 3] = g.y;
        out
    }

    /// Action-space counterpart of [`SynthEnv::rotate_state`].
    pub fn rotate_action(&self, action: &[f64], k: usize) -> Vec<f64> {
        assert_eq!(action.len(), self.action_dim(), "action width mismatch");
        let n = self.params.n_fingers;
        let k = k % n;
        let angle = 2.0 * std::f64::consts::PI * k as f64 / n as f64;
        let (sin, cos) = angle.sin_cos();
        let mut out = vec![0.0; self.action_dim()];
        for j in 0..n {
            let src = (j + k) % n;
            let (c, s) = self.home[src];
            let world = Vec2::new(action[2 * src], action[2 * src + 1]).rot(c, s);
            let local = self.to_local(j, world.rot(cos, sin));
            out[2 * j] = local.x;
            out[2 * j + 1] = local.y;
        }
        out
    }

    /// Symmetry layout of this environment's vectors: finger blocks permute
    /// across slots, object and goal coordinates rotate.
    pub fn symmetry_schema(&self) -> SymmetrySchema {
        let n = self.params.n_fingers;
        let finger_offsets: Vec<usize> = (0..n).map(|i| 2 * i).collect();
        SymmetrySchema {
            n_fold: n,
            state: VectorSchema {
                dim: self.state_dim(),
                cycles: vec![BlockCycle {
                    len: 2,
                    offsets: finger_offsets.clone(),
                }],
                pairs: vec![2 * n, 2 * n + 2],
            },
            action: VectorSchema {
                dim: self.action_dim(),
                cycles: vec![BlockCycle {
                    len: 2,
                    offsets: finger_offsets,
                }],
                pairs: vec![],
            },
        }
    }
}

fn sample_disc(rng: &mut impl Rng, radius: f64) -> Vec2 {
    loop {
        let x = rng.random_range(-radius..radius);
        let y = rng.random_range(-radius..radius);
        if x * x + y * y <= radius * radius {
            return Vec2::new(x, y);
        }
    }
}

/// Chooses actions during a rollout.
pub trait Actor {
    fn act(&mut self, state: &[f64]) -> Vec<f64>;
}

pub struct ExpertActor<'e, R> {
    pub env: &'e SynthEnv,
    pub rng: R,
}

impl<R: Rng> Actor for ExpertActor<'_, R> {
    fn act(&mut self, state: &[f64]) -> Vec<f64> {
        self.env.expert_action(state, &mut self.rng)
    }
}

pub struct WeakActor<'e, R> {
    pub env: &'e SynthEnv,
    pub rng: R,
}

impl<R: Rng> Actor for WeakActor<'_, R> {
    fn act(&mut self, state: &[f64]) -> Vec<f64> {
        self.env.weak_action(state, &mut self.rng)
    }
}

/// One f64 trajectory of `episode_len` steps.
pub struct RolloutTrace {
    pub steps: Vec<(Vec<f64>, Vec<f64>, f64)>,
    pub final_state: Vec<f64>,
}

impl RolloutTrace {
    pub fn episodic_return(&self) -> f64 {
        self.steps.iter().map(|(_, _, r)| r).sum()
    }
}

pub fn rollout(env: &SynthEnv, actor: &mut dyn Actor, init: Vec<f64>) -> RolloutTrace {
    let mut state = init;
    let mut steps = Vec::with_capacity(env.params().episode_len);
    for _ in 0..env.params().episode_len {
        let action = actor.act(&state);
        let (next, reward) = env.step(&state, &action);
        steps.push((std::mem::replace(&mut state, next), action, reward));
    }
    RolloutTrace {
        steps,
        final_state: state,
    }
}

/// What mix of policies a generated dataset draws from.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DatasetKind {
    /// Every episode comes from the expert policy.
    Expert,
    /// 60% expert / 40% weak episodes in seeded random order.
    Mixed,
}

/// Generates a labeled dataset of `n_episodes` episodes. Each episode has
/// its own RNG substream keyed by its id, so any subset is reproducible in
/// isolation and the result does not depend on thread count. The expert/weak
/// interleaving for `Mixed` comes from a separate stream of the same seed.
pub fn generate_dataset(
    env: &SynthEnv,
    kind: DatasetKind,
    n_episodes: usize,
) -> Result<EpisodeDataset> {
    if n_episodes == 0 {
        return Err(domain("dataset needs at least one episode"));
    }
    let seed = env.params().rng_seed;
    let mut from_expert = vec![true; n_episodes];
    if kind == DatasetKind::Mixed {
        let n_expert = (n_episodes as f64 * 0.6).round() as usize;
        for flag in from_expert.iter_mut().skip(n_expert) {
            *flag = false;
        }
        let mut order_rng = rng::stream(seed, "composition");
        for i in (1..n_episodes).rev() {
            let j = order_rng.random_range(0..=i);
            from_expert.swap(i, j);
        }
    }
    let episodes: Vec<Episode> = from_expert
        .into_par_iter()
        .enumerate()
        .map(|(id, expert)| {
            let id = id as u64;
            let mut ep_rng = rng::substream(seed, "episode", id);
            let init = env.initial_state(&mut ep_rng);
            let trace = if expert {
                let mut actor = ExpertActor { env, rng: ep_rng };
                rollout(env, &mut actor, init)
            } else {
                let mut actor = WeakActor { env, rng: ep_rng };
                rollout(env, &mut actor, init)
            };
            Episode {
                id,
                label: if expert { Label::Expert } else { Label::Weak },
                steps: trace
                    .steps
                    .into_iter()
                    .map(|(s, a, r)| Transition {
                        state: s.into_iter().map(|v| v as f32).collect(),
                        action: a.into_iter().map(|v| v as f32).collect(),
                        reward: r as f32,
                    })
                    .collect(),
            }
        })
        .collect();
    let mut ds = EpisodeDataset::new(env.state_dim(), env.action_dim(), env.params().episode_len);
    ds.episodes = episodes;
    ds.validate()?;
    Ok(ds)
}
