//! Deterministic ORCA crowd simulation with field-of-view perception.

mod lp;
mod orca;
mod stepper;
mod types;
pub mod visibility;

pub use lp::{shuffle_lines, solve_lp2, solve_lp3, solve_velocity};
pub use orca::{compute_orca_line, det, escape_vector, obstacle_line, Escape, OrcaLine};
pub use stepper::{advance, perceive, preferred_velocity, rollout, rollout_branched, rollout_without, step, Rollout, World};
pub use types::{Agent, AgentId, AgentParams, AgentState, Behavior, Obstacle, Scene, SimConfig, EGO};
pub use visibility::{visible_neighbors, VisibilityMemory};

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum SimError {
    #[error("two agents occupy the same position")]
    CoincidentAgents,
    #[error("obstacle endpoints coincide")]
    DegenerateObstacle,
    #[error("invalid agent parameters: {0}")]
    InvalidParams(String),
    #[error("invalid simulation config: {0}")]
    InvalidConfig(String),
}
