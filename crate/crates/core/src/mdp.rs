//! The episodic path-following environment.
//!
//! Observation `[d_c, χ_e, d_wp, r]`: cross-track error and distance in ship
//! lengths, course error in radians, yaw rate in prime-II units at design
//! speed. Rewards are evaluated on the post-step state.

use std::f64::consts::TAU;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::disturbance::Wind;
use crate::dynamics::{self, ShipModel, ShipState};
use crate::error::{invalid, Result};
use crate::geometry::Vec2;
use crate::guidance::{course_error, cross_track_error};

pub const SUCCESS_BONUS: f64 = 100.0;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Observation {
    pub d_c: f64,
    pub chi_e: f64,
    pub d_wp: f64,
    pub r: f64,
}

impl Observation {
    pub fn to_array(&self) -> [f64; 4] {
        [self.d_c, self.chi_e, self.d_wp, self.r]
    }

    pub fn is_finite(&self) -> bool {
        self.to_array().iter().all(|v| v.is_finite())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct RewardBreakdown {
    pub r1: f64,
    pub r2: f64,
    pub r3: f64,
    pub terminal_bonus: f64,
    pub total: f64,
}

impl RewardBreakdown {
    /// Step reward without the success bonus.
    pub fn shaped(&self) -> f64 {
        self.r1 + self.r2 + self.r3
    }

    pub fn with_bonus(mut self, bonus: f64) -> Self {
        self.terminal_bonus = bonus;
        self.total = self.r1 + self.r2 + self.r3 + bonus;
        self
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Status {
    Running,
    Success,
    Overshoot,
    Horizon,
}

impl Status {
    pub fn is_terminal(self) -> bool {
        self != Status::Running
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EpisodeConfig {
    pub horizon: usize,
    pub goal_dist_min_l: f64,
    pub goal_dist_max_l: f64,
    /// Goal bearing range (rad), sampled half-open.
    pub goal_bearing_min: f64,
    pub goal_bearing_max: f64,
    pub tolerance_l: f64,
    pub initial_u_prime: f64,
    pub initial_psi: f64,
    /// Control/integration step in prime-II time.
    pub dt_prime: f64,
    /// Distance the ship must have travelled before the overshoot test applies.
    pub overshoot_guard_l: f64,
}

impl Default for EpisodeConfig {
    fn default() -> Self {
        Self {
            horizon: 160,
            goal_dist_min_l: 8.0,
            goal_dist_max_l: 28.0,
            goal_bearing_min: 0.0,
            goal_bearing_max: TAU,
            tolerance_l: 0.5,
            initial_u_prime: 1.0,
            initial_psi: 0.0,
            dt_prime: 0.3,
            overshoot_guard_l: 1.0,
        }
    }
}

impl EpisodeConfig {
    pub fn validate(&self) -> Result<()> {
        if self.horizon == 0 {
            return Err(invalid("episode horizon must be positive"));
        }
        if !(0.0 <= self.goal_dist_min_l && self.goal_dist_min_l <= self.goal_dist_max_l) {
            return Err(invalid("goal distance range must be ordered and non-negative"));
        }
        if !(self.goal_bearing_min <= self.goal_bearing_max) {
            return Err(invalid("goal bearing range must be ordered"));
        }
        if !(self.tolerance_l > 0.0 && self.dt_prime > 0.0) {
            return Err(invalid("tolerance and dt_prime must be positive"));
        }
        Ok(())
    }

    /// Dimensional control step (s).
    pub fn dt(&self, model: &ShipModel) -> f64 {
        self.dt_prime * model.time_scale()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpisodeContext {
    pub start: Vec2,
    pub destination: Vec2,
    /// `destination − start`.
    pub v1: Vec2,
    pub step_count: usize,
    /// Path length travelled so far (m).
    pub distance_travelled: f64,
}

impl EpisodeContext {
    pub fn new(start: Vec2, destination: Vec2) -> Self {
        Self { start, destination, v1: destination - start, step_count: 0, distance_travelled: 0.0 }
    }
}

/// Ship at the origin heading along `initial_psi` at `initial_u_prime`, with
/// a destination drawn uniformly in distance and bearing.
pub fn reset<R: Rng + ?Sized>(
    config: &EpisodeConfig,
    model: &ShipModel,
    rng: &mut R,
) -> (ShipState, EpisodeContext, Observation) {
    let l = model.length();
    let dist = if config.goal_dist_max_l > config.goal_dist_min_l {
        rng.random_range(config.goal_dist_min_l..config.goal_dist_max_l)
    } else {
        config.goal_dist_min_l
    };
    let bearing = if config.goal_bearing_max > config.goal_bearing_min {
        rng.random_range(config.goal_bearing_min..config.goal_bearing_max)
    } else {
        config.goal_bearing_min
    };
    let destination = Vec2::from_polar(dist * l, bearing);
    start_episode(config, model, Vec2::ZERO, destination)
}

/// Deterministic episode start toward a fixed destination.
pub fn start_episode(
    config: &EpisodeConfig,
    model: &ShipModel,
    start: Vec2,
    destination: Vec2,
) -> (ShipState, EpisodeContext, Observation) {
    let state = ShipState::straight(
        start,
        config.initial_psi,
        config.initial_u_prime * model.design_speed(),
        model.actuator.n_p,
    );
    let ctx = EpisodeContext::new(start, destination);
    let obs = observe(&state, &ctx, model);
    (state, ctx, obs)
}

pub fn observe(state: &ShipState, ctx: &EpisodeContext, model: &ShipModel) -> Observation {
    observe_segment(state, ctx.start, ctx.destination, model)
}

/// Observation against the segment `seg_start → target`; a degenerate
/// segment reports zero cross-track error.
pub fn observe_segment(state: &ShipState, seg_start: Vec2, target: Vec2, model: &ShipModel) -> Observation {
    let l = model.length();
    let pos = state.position();
    let d_c = cross_track_error(pos, seg_start, target).unwrap_or(0.0) / l;
    Observation {
        d_c,
        chi_e: course_error(state, target),
        d_wp: pos.distance(target) / l,
        r: state.r * l / model.design_speed(),
    }
}

pub fn reward(obs: &Observation) -> RewardBreakdown {
    let r1 = 2.0 * (-obs.d_c * obs.d_c / 12.5).exp() - 1.0;
    let r2 = 1.3 * (-10.0 * obs.chi_e.abs()).exp() - 0.3;
    let r3 = -obs.d_wp / 4.0;
    RewardBreakdown { r1, r2, r3, terminal_bonus: 0.0, total: r1 + r2 + r3 }
}

/// Success, then overshoot, then horizon.
pub fn is_terminal(state: &ShipState, ctx: &EpisodeContext, config: &EpisodeConfig, model: &ShipModel) -> Status {
    let l = model.length();
    let v2 = ctx.destination - state.position();
    if v2.norm() < config.tolerance_l * l {
        return Status::Success;
    }
    if ctx.distance_travelled >= config.overshoot_guard_l * l
        && ctx.v1.dot(v2) < 0.0
        && state.ground_velocity().dot(v2) < 0.0
    {
        return Status::Overshoot;
    }
    if ctx.step_count >= config.horizon {
        return Status::Horizon;
    }
    Status::Running
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Transition {
    pub state: ShipState,
    pub ctx: EpisodeContext,
    pub observation: Observation,
    pub reward: RewardBreakdown,
    pub status: Status,
}

/// One control step: dynamics at `dt_prime`, observation, reward and status
/// of the resulting state. The success bonus is added exactly when the
/// status is `Success`.
pub fn env_step(
    state: &ShipState,
    ctx: &EpisodeContext,
    delta_c: f64,
    model: &ShipModel,
    wind: Option<&Wind>,
    config: &EpisodeConfig,
) -> Result<Transition> {
    let next = dynamics::step(state, delta_c, wind, model, config.dt(model))?;
    let mut ctx = *ctx;
    ctx.step_count += 1;
    ctx.distance_travelled += state.position().distance(next.position());
    let observation = observe(&next, &ctx, model);
    let status = is_terminal(&next, &ctx, config, model);
    let bonus = if status == Status::Success { SUCCESS_BONUS } else { 0.0 };
    let reward = reward(&observation).with_bonus(bonus);
    Ok(Transition { state: next, ctx, observation, reward, status })
}

/// Owned environment instance.
#[derive(Debug, Clone)]
pub struct ShipEnv {
    pub model: ShipModel,
    pub wind: Option<Wind>,
    pub config: EpisodeConfig,
    pub state: ShipState,
    pub ctx: EpisodeContext,
    pub status: Status,
}

impl ShipEnv {
    pub fn new<R: Rng + ?Sized>(model: ShipModel, wind: Option<Wind>, config: EpisodeConfig, rng: &mut R) -> (Self, Observation) {
        let (state, ctx, obs) = reset(&config, &model, rng);
        (Self { model, wind, config, state, ctx, status: Status::Running }, obs)
    }

    pub fn reset<R: Rng + ?Sized>(&mut self, rng: &mut R) -> Observation {
        let (state, ctx, obs) = reset(&self.config, &self.model, rng);
        self.state = state;
        self.ctx = ctx;
        self.status = Status::Running;
        obs
    }

    pub fn step(&mut self, delta_c: f64) -> Result<Transition> {
        if self.status.is_terminal() {
            return Err(invalid("episode already terminated"));
        }
        let t = env_step(&self.state, &self.ctx, delta_c, &self.model, self.wind.as_ref(), &self.config)?;
        self.state = t.state;
        self.ctx = t.ctx;
        self.status = t.status;
        Ok(t)
    }
}
