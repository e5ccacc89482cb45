//! ORCA half-plane construction for agent pairs and static segments.

use glam::DVec2;
use serde::{Deserialize, Serialize};

use super::{AgentParams, AgentState, Obstacle, SimError};

/// Positions closer than this are treated as coincident.
pub const COINCIDENT_EPS: f64 = 1e-9;

#[inline]
pub fn det(a: DVec2, b: DVec2) -> f64 {
    a.x * b.y - a.y * b.x
}

/// Directed line in velocity space; velocities on its left are permitted.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OrcaLine {
    pub point: DVec2,
    /// Unit length.
    pub direction: DVec2,
}

impl OrcaLine {
    /// Signed distance by which `v` violates the line (positive = outside).
    #[inline]
    pub fn penetration(&self, v: DVec2) -> f64 {
        det(self.direction, self.point - v)
    }

    pub fn permits(&self, v: DVec2) -> bool {
        self.penetration(v) <= 0.0
    }

    /// Half-plane `{v : v . normal <= bound}` for a unit `normal`.
    pub fn from_bound(normal: DVec2, bound: f64) -> Self {
        Self {
            point: normal * bound,
            direction: DVec2::new(-normal.y, normal.x),
        }
    }
}

/// Boundary direction of the ORCA constraint and the smallest change `u` to the
/// relative velocity that leaves the truncated velocity obstacle.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Escape {
    pub direction: DVec2,
    pub u: DVec2,
}

pub fn escape_vector(
    ego: (&AgentState, &AgentParams),
    other: (&AgentState, &AgentParams),
    time_horizon: f64,
    dt: f64,
) -> Result<Escape, SimError> {
    let rel_pos = other.0.position - ego.0.position;
    let rel_vel = ego.0.velocity - other.0.velocity;
    let dist_sq = rel_pos.length_squared();
    if dist_sq.sqrt() < COINCIDENT_EPS {
        return Err(SimError::CoincidentAgents);
    }
    let combined_radius = ego.1.radius + other.1.radius;
    let combined_radius_sq = combined_radius * combined_radius;
    let inv_horizon = 1.0 / time_horizon;

    if dist_sq > combined_radius_sq {
        // Vector from the cut-off circle centre to the relative velocity.
        let w = rel_vel - rel_pos * inv_horizon;
        let w_len_sq = w.length_squared();
        let dot = w.dot(rel_pos);
        if dot < 0.0 && dot * dot > combined_radius_sq * w_len_sq {
            // Closest boundary point lies on the cut-off circle.
            let w_len = w_len_sq.sqrt();
            let unit_w = w / w_len;
            Ok(Escape {
                direction: DVec2::new(unit_w.y, -unit_w.x),
                u: unit_w * (combined_radius * inv_horizon - w_len),
            })
        } else {
            // Closest boundary point lies on one of the legs.
            let leg = (dist_sq - combined_radius_sq).sqrt();
            let direction = if det(rel_pos, w) > 0.0 {
                DVec2::new(
                    rel_pos.x * leg - rel_pos.y * combined_radius,
                    rel_pos.x * combined_radius + rel_pos.y * leg,
                ) / dist_sq
            } else {
                -DVec2::new(
                    rel_pos.x * leg + rel_pos.y * combined_radius,
                    -rel_pos.x * combined_radius + rel_pos.y * leg,
                ) / dist_sq
            };
            let projected = rel_vel.dot(direction);
            Ok(Escape {
                direction,
                u: direction * projected - rel_vel,
            })
        }
    } else {
        // Already overlapping: resolve within one step.
        let inv_dt = 1.0 / dt;
        let w = rel_vel - rel_pos * inv_dt;
        let w_len = w.length();
        let unit_w = if w_len > COINCIDENT_EPS { w / w_len } else { -rel_pos.normalize() };
        Ok(Escape {
            direction: DVec2::new(unit_w.y, -unit_w.x),
            u: unit_w * (combined_radius * inv_dt - w_len),
        })
    }
}

/// ORCA half-plane for `ego` induced by `other`; `ego` takes the `reciprocity`
/// share of the avoidance effort.
pub fn compute_orca_line(
    ego: (&AgentState, &AgentParams),
    other: (&AgentState, &AgentParams),
    time_horizon: f64,
    dt: f64,
    reciprocity: f64,
) -> Result<OrcaLine, SimError> {
    let escape = escape_vector(ego, other, time_horizon, dt)?;
    Ok(OrcaLine {
        point: ego.0.velocity + escape.u * reciprocity,
        direction: escape.direction,
    })
}

/// Half-plane keeping the agent out of a static segment for `time_horizon`.
///
/// The distance to a convex set is convex along any straight path, so bounding
/// the approach speed toward the closest point bounds the approach to the
/// whole segment. Overlapping agents are pushed out within one step.
pub fn obstacle_line(state: &AgentState, params: &AgentParams, obstacle: &Obstacle, time_horizon: f64, dt: f64) -> OrcaLine {
    let closest = obstacle.closest_point(state.position);
    let offset = closest - state.position;
    let dist = offset.length();
    let normal = if dist > COINCIDENT_EPS {
        offset / dist
    } else {
        // Centre on the segment: push along the segment normal, toward the side we came from.
        let along = (obstacle.b - obstacle.a).normalize();
        let n = DVec2::new(-along.y, along.x);
        if n.dot(state.velocity) >= 0.0 {
            n
        } else {
            -n
        }
    };
    let clearance = dist - params.radius;
    let bound = if clearance >= 0.0 {
        clearance / time_horizon
    } else {
        clearance / dt
    };
    OrcaLine::from_bound(normal, bound)
}
