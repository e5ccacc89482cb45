//! Field-of-view perception with a short memory of recently seen neighbours.

use std::collections::BTreeMap;

use glam::DVec2;
use serde::{Deserialize, Serialize};

use super::{AgentId, AgentParams, AgentState};

/// Slack on the field-of-view boundary so that a bearing of exactly the half
/// angle counts as inside despite rounding in `atan2`.
const FOV_BOUNDARY_EPS: f64 = 1e-9;

/// Last step at which each observer saw each other agent, keyed by agent id.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct VisibilityMemory {
    last_seen: Vec<BTreeMap<AgentId, usize>>,
}

impl VisibilityMemory {
    pub fn new(num_agents: usize) -> Self {
        Self {
            last_seen: vec![BTreeMap::new(); num_agents],
        }
    }

    pub fn last_seen(&self, observer: usize, other: AgentId) -> Option<usize> {
        self.last_seen.get(observer)?.get(&other).copied()
    }

    pub fn record(&mut self, observer: usize, other: AgentId, step: usize) {
        self.last_seen[observer].insert(other, step);
    }

    /// Whether `other` was seen within the `window` steps preceding `step`.
    pub fn remembers(&self, observer: usize, other: AgentId, step: usize, window: usize) -> bool {
        matches!(self.last_seen(observer, other), Some(seen) if seen < step && step - seen <= window)
    }

    /// Drop rows for observers not in `keep` (local indices, ascending) and
    /// forget removed agents.
    pub fn retain(&mut self, keep: &[usize], removed: &[AgentId]) {
        let rows = std::mem::take(&mut self.last_seen);
        self.last_seen = keep.iter().map(|&i| rows[i].clone()).collect();
        for row in &mut self.last_seen {
            for id in removed {
                row.remove(id);
            }
        }
    }
}

/// Direction used for the field of view: the stored heading, or the direction
/// toward `fallback_target` while nearly stationary.
pub fn view_direction(state: &AgentState, fallback_target: DVec2, heading_epsilon: f64) -> DVec2 {
    if state.velocity.length() > heading_epsilon {
        return state.velocity.normalize();
    }
    let to_target = fallback_target - state.position;
    if to_target.length() > heading_epsilon {
        to_target.normalize()
    } else {
        state.heading
    }
}

/// Geometric test: within range and inside the (inclusive) view cone.
pub fn in_view(position: DVec2, facing: DVec2, params: &AgentParams, other: DVec2) -> bool {
    let offset = other - position;
    let dist = offset.length();
    if dist > params.neighbor_dist {
        return false;
    }
    if dist == 0.0 {
        return true;
    }
    let bearing = facing.perp_dot(offset).abs().atan2(facing.dot(offset));
    bearing <= params.fov_half_angle + FOV_BOUNDARY_EPS
}

/// Local indices of agents currently in view of `observer`.
pub fn directly_visible(observer: usize, positions: &[DVec2], facing: DVec2, params: &AgentParams) -> Vec<usize> {
    (0..positions.len())
        .filter(|&j| j != observer && in_view(positions[observer], facing, params, positions[j]))
        .collect()
}

/// Perceived neighbours of `ego_index`: agents currently in view plus agents
/// seen during the last `window` steps. Returns sorted local indices.
pub fn visible_neighbors(
    ego_index: usize,
    states: &[AgentState],
    params: &[AgentParams],
    ids: &[AgentId],
    facing: DVec2,
    memory: &VisibilityMemory,
    step: usize,
    window: usize,
) -> Vec<usize> {
    let ego = &states[ego_index];
    (0..states.len())
        .filter(|&j| j != ego_index)
        .filter(|&j| {
            in_view(ego.position, facing, &params[ego_index], states[j].position) || memory.remembers(ego_index, ids[j], step, window)
        })
        .collect()
}
