use glam::DVec2;
use serde::{Deserialize, Serialize};

use super::SimError;

/// Index of an agent in its scene. The ego is always agent 0.
pub type AgentId = usize;

pub const EGO: AgentId = 0;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AgentState {
    pub position: DVec2,
    pub velocity: DVec2,
    /// Unit vector; follows the velocity whenever the agent is moving.
    pub heading: DVec2,
}

impl AgentState {
    pub fn at_rest(position: DVec2, heading: DVec2) -> Self {
        Self {
            position,
            velocity: DVec2::ZERO,
            heading: heading.normalize_or(DVec2::X),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Behavior {
    GoalSeeking,
    /// Walk toward `target`'s current position plus a fixed world-frame offset.
    Follower {
        target: AgentId,
        offset: DVec2,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AgentParams {
    pub radius: f64,
    pub max_speed: f64,
    pub pref_speed: f64,
    pub goal: DVec2,
    pub fov_half_angle: f64,
    pub neighbor_dist: f64,
    pub time_horizon: f64,
    pub behavior: Behavior,
}

impl AgentParams {
    pub const DEFAULT_RADIUS: f64 = 0.3;
    pub const DEFAULT_MAX_SPEED: f64 = 2.0;
    pub const DEFAULT_NEIGHBOR_DIST: f64 = 4.0;
    pub const DEFAULT_TIME_HORIZON: f64 = 2.0;
    /// Half of a 210 degree field of view.
    pub const DEFAULT_FOV_HALF_ANGLE: f64 = 105.0 * std::f64::consts::PI / 180.0;

    /// Pedestrian defaults with the given goal and preferred speed.
    pub fn pedestrian(goal: DVec2, pref_speed: f64) -> Self {
        Self {
            radius: Self::DEFAULT_RADIUS,
            max_speed: Self::DEFAULT_MAX_SPEED,
            pref_speed,
            goal,
            fov_half_angle: Self::DEFAULT_FOV_HALF_ANGLE,
            neighbor_dist: Self::DEFAULT_NEIGHBOR_DIST,
            time_horizon: Self::DEFAULT_TIME_HORIZON,
            behavior: Behavior::GoalSeeking,
        }
    }

    pub fn validate(&self) -> Result<(), SimError> {
        let bad = |what: &str| Err(SimError::InvalidParams(what.to_string()));
        if !(self.radius > 0.0) {
            return bad("radius must be positive");
        }
        if !(self.pref_speed > 0.0 && self.pref_speed <= self.max_speed) {
            return bad("pref_speed must lie in (0, max_speed]");
        }
        if !(self.fov_half_angle > 0.0 && self.fov_half_angle <= std::f64::consts::PI) {
            return bad("fov_half_angle must lie in (0, pi]");
        }
        if !(self.neighbor_dist > 2.0 * self.radius) {
            return bad("neighbor_dist must exceed the agent diameter");
        }
        if !(self.time_horizon > 0.0) {
            return bad("time_horizon must be positive");
        }
        if !self.goal.is_finite() {
            return bad("goal must be finite");
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Agent {
    pub state: AgentState,
    pub params: AgentParams,
}

/// Static line-segment obstacle.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Obstacle {
    pub a: DVec2,
    pub b: DVec2,
}

impl Obstacle {
    pub fn new(a: DVec2, b: DVec2) -> Result<Self, SimError> {
        if a.distance_squared(b) == 0.0 {
            return Err(SimError::DegenerateObstacle);
        }
        Ok(Self { a, b })
    }

    pub fn closest_point(&self, p: DVec2) -> DVec2 {
        let ab = self.b - self.a;
        let t = ((p - self.a).dot(ab) / ab.length_squared()).clamp(0.0, 1.0);
        self.a + ab * t
    }
}

/// Initial conditions of one episode. Agent 0 is the ego.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct Scene {
    pub agents: Vec<Agent>,
    pub obstacles: Vec<Obstacle>,
}

impl Scene {
    pub fn validate(&self) -> Result<(), SimError> {
        for (id, agent) in self.agents.iter().enumerate() {
            agent.params.validate()?;
            if let Behavior::Follower { target, .. } = agent.params.behavior {
                if target >= self.agents.len() || target == id {
                    return Err(SimError::InvalidParams(format!("agent {id} follows invalid target {target}")));
                }
            }
            let s = agent.state;
            if !(s.position.is_finite() && s.velocity.is_finite()) {
                return Err(SimError::InvalidParams(format!("agent {id} has a non-finite state")));
            }
            if s.velocity.length() > agent.params.max_speed + 1e-9 {
                return Err(SimError::InvalidParams(format!("agent {id} exceeds max_speed")));
            }
            if (s.heading.length() - 1.0).abs() > 1e-9 {
                return Err(SimError::InvalidParams(format!("agent {id} heading is not unit")));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SimConfig {
    pub dt: f64,
    pub total_steps: usize,
    pub history_steps: usize,
    pub future_steps: usize,
    pub visibility_window: usize,
    pub reciprocity: f64,
    pub rng_seed: u64,
    pub heading_epsilon: f64,
    pub goal_tolerance: f64,
    pub obstacle_time_horizon: f64,
}

impl Default for SimConfig {
    fn default() -> Self {
        Self {
            dt: 0.4,
            total_steps: 20,
            history_steps: 8,
            future_steps: 12,
            visibility_window: 5,
            reciprocity: 0.5,
            rng_seed: 0,
            heading_epsilon: 1e-3,
            goal_tolerance: 0.1,
            obstacle_time_horizon: 2.0,
        }
    }
}

impl SimConfig {
    pub fn validate(&self) -> Result<(), SimError> {
        let bad = |what: &str| Err(SimError::InvalidConfig(what.to_string()));
        if self.total_steps != self.history_steps + self.future_steps {
            return bad("total_steps must equal history_steps + future_steps");
        }
        if !(self.dt > 0.0) {
            return bad("dt must be positive");
        }
        if self.visibility_window < 1 {
            return bad("visibility_window must be at least 1");
        }
        if !(self.reciprocity > 0.0 && self.reciprocity <= 1.0) {
            return bad("reciprocity must lie in (0, 1]");
        }
        if !(self.heading_epsilon >= 0.0 && self.goal_tolerance >= 0.0) {
            return bad("tolerances must be non-negative");
        }
        if !(self.obstacle_time_horizon > 0.0) {
            return bad("obstacle_time_horizon must be positive");
        }
        Ok(())
    }
}
