//! Crowd state evolution: perception, preferred velocities, ORCA, Euler integration.

use glam::DVec2;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::lp::{shuffle_lines, solve_velocity};
use super::orca::{compute_orca_line, obstacle_line, OrcaLine};
use super::visibility::{view_direction, visible_neighbors, VisibilityMemory};
use super::{AgentId, AgentParams, AgentState, Behavior, Obstacle, Scene, SimConfig, SimError};
use crate::seed::mix;

/// Evolving crowd: the agents still present, their original ids, and memory.
#[derive(Debug, Clone, PartialEq)]
pub struct World {
    pub ids: Vec<AgentId>,
    pub states: Vec<AgentState>,
    pub params: Vec<AgentParams>,
    /// Point a follower heads for once its target is gone.
    pub fallback_targets: Vec<DVec2>,
    pub memory: VisibilityMemory,
    /// Number of steps already taken.
    pub step: usize,
}

impl World {
    pub fn new(scene: &Scene) -> Self {
        Self::without(scene, &[])
    }

    /// Initial world with the agents in `removed` absent from the start.
    pub fn without(scene: &Scene, removed: &[AgentId]) -> Self {
        let keep: Vec<AgentId> = (0..scene.agents.len()).filter(|id| !removed.contains(id)).collect();
        let fallback_targets = keep
            .iter()
            .map(|&id| match scene.agents[id].params.behavior {
                Behavior::Follower { target, offset } => scene.agents[target].state.position + offset,
                Behavior::GoalSeeking => scene.agents[id].params.goal,
            })
            .collect();
        Self {
            states: keep.iter().map(|&id| scene.agents[id].state).collect(),
            params: keep.iter().map(|&id| scene.agents[id].params).collect(),
            memory: VisibilityMemory::new(keep.len()),
            ids: keep,
            fallback_targets,
            step: 0,
        }
    }

    /// Remove agents mid-episode; followers of removed agents keep heading for
    /// the last point they were steering toward.
    pub fn remove(&mut self, removed: &[AgentId]) {
        let local: Vec<usize> = (0..self.ids.len()).filter(|&i| !removed.contains(&self.ids[i])).collect();
        for &i in &local {
            if let Behavior::Follower { target, offset } = self.params[i].behavior {
                if removed.contains(&target) {
                    if let Some(t) = self.local_index(target) {
                        self.fallback_targets[i] = self.states[t].position + offset;
                    }
                }
            }
        }
        self.memory.retain(&local, removed);
        self.ids = local.iter().map(|&i| self.ids[i]).collect();
        self.states = local.iter().map(|&i| self.states[i]).collect();
        self.params = local.iter().map(|&i| self.params[i]).collect();
        self.fallback_targets = local.iter().map(|&i| self.fallback_targets[i]).collect();
    }

    pub fn local_index(&self, id: AgentId) -> Option<usize> {
        self.ids.binary_search(&id).ok()
    }

    /// Where agent `i` is steering: its goal, its leader plus offset, or the
    /// fallback point when the leader is absent.
    pub fn steering_target(&self, i: usize) -> DVec2 {
        match self.params[i].behavior {
            Behavior::GoalSeeking => self.params[i].goal,
            Behavior::Follower { target, offset } => match self.local_index(target) {
                Some(t) => self.states[t].position + offset,
                None => self.fallback_targets[i],
            },
        }
    }

    pub fn positions(&self) -> Vec<DVec2> {
        self.states.iter().map(|s| s.position).collect()
    }
}

/// Speed toward `target` capped at `pref_speed` and at the speed that reaches it
/// in one step; zero once within `tolerance`.
pub fn preferred_velocity(position: DVec2, target: DVec2, pref_speed: f64, dt: f64, tolerance: f64) -> DVec2 {
    let to_target = target - position;
    let dist = to_target.length();
    if dist <= tolerance {
        return DVec2::ZERO;
    }
    to_target / dist * pref_speed.min(dist / dt)
}

/// Perceived neighbour sets of every agent at the current step.
pub fn perceive(world: &World, config: &SimConfig) -> Vec<Vec<usize>> {
    (0..world.ids.len())
        .map(|i| {
            let facing = view_direction(&world.states[i], world.steering_target(i), config.heading_epsilon);
            visible_neighbors(
                i,
                &world.states,
                &world.params,
                &world.ids,
                facing,
                &world.memory,
                world.step,
                config.visibility_window,
            )
        })
        .collect()
}

/// One simulation step. Also returns the perceived set (local indices) each
/// agent acted on.
#[allow(clippy::needless_range_loop)]
pub fn step(world: &World, obstacles: &[Obstacle], config: &SimConfig) -> Result<(World, Vec<Vec<usize>>), SimError> {
    let perceived = perceive(world, config);
    let mut next = world.clone();
    let mut lines: Vec<OrcaLine> = Vec::new();

    for i in 0..world.ids.len() {
        let (state, params) = (&world.states[i], &world.params[i]);
        let target = world.steering_target(i);
        let v_pref = preferred_velocity(state.position, target, params.pref_speed, config.dt, config.goal_tolerance);

        lines.clear();
        lines.extend(
            obstacles
                .iter()
                .map(|o| obstacle_line(state, params, o, config.obstacle_time_horizon, config.dt)),
        );
        let rigid = lines.len();
        for &j in &perceived[i] {
            lines.push(compute_orca_line(
                (state, params),
                (&world.states[j], &world.params[j]),
                params.time_horizon,
                config.dt,
                config.reciprocity,
            )?);
        }
        let mut rng = ChaCha8Rng::seed_from_u64(mix(&[config.rng_seed, world.step as u64, world.ids[i] as u64]));
        shuffle_lines(&mut lines, rigid, &mut rng);

        let velocity = solve_velocity(&lines, rigid, v_pref, params.max_speed);
        let heading = if velocity.length() > config.heading_epsilon {
            velocity.normalize()
        } else {
            view_direction(
                &AgentState {
                    velocity: DVec2::ZERO,
                    ..*state
                },
                target,
                config.heading_epsilon,
            )
        };
        next.states[i] = AgentState {
            position: state.position + velocity * config.dt,
            velocity,
            heading,
        };
    }

    // Memory records direct sightings only, so it cannot sustain itself.
    for i in 0..world.ids.len() {
        let facing = view_direction(&world.states[i], world.steering_target(i), config.heading_epsilon);
        for &j in &perceived[i] {
            if super::visibility::in_view(world.states[i].position, facing, &world.params[i], world.states[j].position) {
                next.memory.record(i, world.ids[j], world.step);
            }
        }
    }
    next.step = world.step + 1;
    Ok((next, perceived))
}

/// Positions of every agent after each step, plus the ego's perceived set per step.
#[derive(Debug, Clone, PartialEq)]
pub struct Rollout {
    /// Original ids of the simulated agents, ascending.
    pub ids: Vec<AgentId>,
    /// `positions[agent][t]` is the position after step `t + 1`.
    pub positions: Vec<Vec<DVec2>>,
    /// Ids the ego perceived when taking step `t + 1`.
    pub ego_perceived: Vec<Vec<AgentId>>,
}

impl Rollout {
    fn empty(ids: Vec<AgentId>, steps: usize) -> Self {
        Self {
            positions: vec![Vec::with_capacity(steps); ids.len()],
            ids,
            ego_perceived: Vec::with_capacity(steps),
        }
    }

    pub fn row(&self, id: AgentId) -> Option<&[DVec2]> {
        self.ids.binary_search(&id).ok().map(|r| self.positions[r].as_slice())
    }

    pub fn ego(&self) -> Option<&[DVec2]> {
        self.row(super::EGO)
    }

    pub fn num_steps(&self) -> usize {
        self.ego_perceived.len()
    }

    /// Bitwise equality of all recorded positions.
    pub fn bit_identical(&self, other: &Rollout) -> bool {
        self.ids == other.ids
            && self.positions.len() == other.positions.len()
            && self.positions.iter().zip(&other.positions).all(|(a, b)| {
                a.len() == b.len()
                    && a.iter()
                        .zip(b)
                        .all(|(p, q)| p.x.to_bits() == q.x.to_bits() && p.y.to_bits() == q.y.to_bits())
            })
    }
}

/// Advance `world` until `config.total_steps` steps have been taken, appending
/// to `rollout`. Returns the final world.
pub fn advance(
    mut world: World,
    obstacles: &[Obstacle],
    config: &SimConfig,
    until: usize,
    rollout: &mut Rollout,
) -> Result<World, SimError> {
    while world.step < until {
        let (next, perceived) = step(&world, obstacles, config)?;
        // Perception happened on `world`; positions are those after the step.
        rollout.record_after(&world, &next, &perceived);
        world = next;
    }
    Ok(world)
}

impl Rollout {
    fn record_after(&mut self, before: &World, after: &World, perceived: &[Vec<usize>]) {
        let mut perceived_ids = Vec::new();
        if let Some(ego) = before.local_index(super::EGO) {
            perceived_ids = perceived[ego].iter().map(|&j| before.ids[j]).collect();
        }
        for (row, id) in self.ids.iter().enumerate() {
            if let Some(i) = after.local_index(*id) {
                self.positions[row].push(after.states[i].position);
            }
        }
        self.ego_perceived.push(perceived_ids);
    }
}

/// Full episode of `config.total_steps` steps from the scene's initial state.
pub fn rollout(scene: &Scene, config: &SimConfig) -> Result<Rollout, SimError> {
    rollout_without(scene, &[], config)
}

/// Episode with `removed` agents absent from the start.
pub fn rollout_without(scene: &Scene, removed: &[AgentId], config: &SimConfig) -> Result<Rollout, SimError> {
    config.validate()?;
    let world = World::without(scene, removed);
    let mut out = Rollout::empty(world.ids.clone(), config.total_steps);
    advance(world, &scene.obstacles, config, config.total_steps, &mut out)?;
    Ok(out)
}

/// Episode that runs with every agent until `branch_step`, then continues with
/// `removed` agents taken out. Rows of removed agents stop at the branch.
pub fn rollout_branched(scene: &Scene, removed: &[AgentId], branch_step: usize, config: &SimConfig) -> Result<Rollout, SimError> {
    config.validate()?;
    let world = World::new(scene);
    let mut out = Rollout::empty(world.ids.clone(), config.total_steps);
    let mut world = advance(world, &scene.obstacles, config, branch_step.min(config.total_steps), &mut out)?;
    world.remove(removed);
    advance(world, &scene.obstacles, config, config.total_steps, &mut out)?;
    Ok(out)
}
