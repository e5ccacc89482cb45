//! Two-dimensional linear programs over ORCA half-planes.
//!
//! `solve_lp2` finds the velocity closest to a preferred velocity inside the
//! intersection of the permitted half-planes and the speed disc. When that set
//! is empty, `solve_lp3` relaxes every constraint at the same rate and returns
//! the velocity with the smallest worst-case penetration.
//!
//! Both are incremental: constraints are added one at a time and the optimum
//! only moves when the new constraint is violated, in which case it is
//! re-solved as a 1D program along that constraint's boundary. Callers that
//! want expected linear running time shuffle the constraints first (see
//! [`shuffle_lines`]).

use glam::DVec2;
use rand::seq::SliceRandom;
use rand::Rng;

use super::orca::{det, OrcaLine};

/// Lines whose directions have a cross product below this are treated as parallel.
const PARALLEL_EPS: f64 = 1e-10;

enum Objective {
    /// Closest point to the given velocity.
    Point(DVec2),
    /// Furthest point along the given unit direction.
    Direction(DVec2),
}

/// Optimum of the program restricted to the boundary of `lines[line_no]`,
/// subject to `lines[..line_no]` and the disc. `None` when that segment is empty.
fn solve_on_line(lines: &[OrcaLine], line_no: usize, radius: f64, objective: &Objective) -> Option<DVec2> {
    let line = &lines[line_no];
    let dot = line.point.dot(line.direction);
    let discriminant = dot * dot + radius * radius - line.point.length_squared();
    if discriminant < 0.0 {
        return None;
    }
    let sqrt_disc = discriminant.sqrt();
    let mut t_left = -dot - sqrt_disc;
    let mut t_right = -dot + sqrt_disc;

    for other in &lines[..line_no] {
        let denominator = det(line.direction, other.direction);
        let numerator = det(other.direction, line.point - other.point);
        if denominator.abs() <= PARALLEL_EPS {
            if numerator < 0.0 {
                return None;
            }
            continue;
        }
        let t = numerator / denominator;
        if denominator >= 0.0 {
            t_right = t_right.min(t);
        } else {
            t_left = t_left.max(t);
        }
        if t_left > t_right {
            return None;
        }
    }

    let t = match *objective {
        Objective::Direction(d) => {
            if d.dot(line.direction) > 0.0 {
                t_right
            } else {
                t_left
            }
        }
        Objective::Point(p) => line.direction.dot(p - line.point).clamp(t_left, t_right),
    };
    Some(line.point + line.direction * t)
}

/// Incremental 2D program. On failure returns the index of the first line that
/// could not be satisfied together with the optimum of the lines before it.
fn solve_incremental(lines: &[OrcaLine], radius: f64, objective: &Objective) -> Result<DVec2, (usize, DVec2)> {
    let mut result = match *objective {
        Objective::Direction(d) => d * radius,
        Objective::Point(p) if p.length_squared() > radius * radius => p.normalize() * radius,
        Objective::Point(p) => p,
    };
    for i in 0..lines.len() {
        if lines[i].penetration(result) > 0.0 {
            match solve_on_line(lines, i, radius, objective) {
                Some(v) => result = v,
                None => return Err((i, result)),
            }
        }
    }
    Ok(result)
}

/// Velocity closest to `v_pref` satisfying every half-plane and `|v| <= v_max`,
/// or `None` when no such velocity exists.
pub fn solve_lp2(lines: &[OrcaLine], v_pref: DVec2, v_max: f64) -> Option<DVec2> {
    solve_incremental(lines, v_max, &Objective::Point(v_pref)).ok()
}

/// Velocity in the speed disc minimising the largest penetration over all
/// lines. If the lines are jointly feasible this is simply a feasible point.
pub fn solve_lp3(lines: &[OrcaLine], v_max: f64) -> DVec2 {
    match solve_incremental(lines, v_max, &Objective::Point(DVec2::ZERO)) {
        Ok(v) => v,
        Err((failed, partial)) => relax(lines, 0, failed, v_max, partial),
    }
}

/// The first `rigid` lines are hard constraints; the rest may be relaxed when
/// the full program is infeasible. This is the stepper's entry point.
pub fn solve_velocity(lines: &[OrcaLine], rigid: usize, v_pref: DVec2, v_max: f64) -> DVec2 {
    match solve_incremental(lines, v_max, &Objective::Point(v_pref)) {
        Ok(v) => v,
        // Rigid constraints are unsatisfiable on their own: keep the partial optimum.
        Err((failed, partial)) if failed < rigid => partial,
        Err((failed, partial)) => relax(lines, rigid, failed, v_max, partial),
    }
}

/// Minimax relaxation starting at `begin`. `partial` satisfies `lines[..begin]`.
fn relax(lines: &[OrcaLine], rigid: usize, begin: usize, radius: f64, partial: DVec2) -> DVec2 {
    let mut result = partial;
    let mut distance = 0.0;
    let mut projected: Vec<OrcaLine> = Vec::with_capacity(lines.len());

    for i in begin..lines.len() {
        let line = lines[i];
        if line.penetration(result) <= distance {
            continue;
        }
        projected.clear();
        projected.extend_from_slice(&lines[..rigid]);
        for other in &lines[rigid..i] {
            let determinant = det(line.direction, other.direction);
            let point = if determinant.abs() <= PARALLEL_EPS {
                if line.direction.dot(other.direction) > 0.0 {
                    // Same orientation: relaxing `line` relaxes `other` equally.
                    continue;
                }
                0.5 * (line.point + other.point)
            } else {
                line.point + line.direction * (det(other.direction, line.point - other.point) / determinant)
            };
            let direction = (other.direction - line.direction).normalize();
            projected.push(OrcaLine { point, direction });
        }
        let normal = DVec2::new(-line.direction.y, line.direction.x);
        if let Ok(v) = solve_incremental(&projected, radius, &Objective::Direction(normal)) {
            result = v;
        }
        distance = line.penetration(result);
    }
    result
}

/// Randomised incremental order. Only the slice after `fixed` is permuted.
pub fn shuffle_lines<R: Rng + ?Sized>(lines: &mut [OrcaLine], fixed: usize, rng: &mut R) {
    lines[fixed..].shuffle(rng);
}
