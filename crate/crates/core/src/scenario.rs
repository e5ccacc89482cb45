//! Seeded scene generators for the in-distribution split and the three
//! out-of-distribution splits (denser crowds, a narrow street, a plaza with
//! stationary pedestrians).
//!
//! Every scene draws from its own RNG stream derived from the split seed and
//! the scene index, so a split can be generated in any order or in parallel
//! and still come out byte-identical.

use std::f64::consts::{PI, TAU};

use glam::DVec2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::counterfactual::{
    annotate_with_rollouts, simulate_counterfactual, BranchPoint, Category, CausalAnnotation, CausalThresholds, CounterfactualConfig,
    CounterfactualError, RemovalSpec,
};
use crate::seed::mix;
use crate::sim::{Agent, AgentId, AgentParams, AgentState, Behavior, Obstacle, Scene, SimConfig, EGO};

const MAX_ATTEMPTS: u32 = 100;
const MIN_SEPARATION: f64 = 1.0;

#[derive(Debug, thiserror::Error)]
pub enum ScenarioError {
    #[error("invalid split spec: {0}")]
    InvalidSpec(String),
    #[error("scene {index}: no valid scene after {attempts} attempts")]
    RetryExhausted { index: usize, attempts: u32 },
    #[error(transparent)]
    Counterfactual(#[from] CounterfactualError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Split {
    Id,
    OodDensity,
    OodContext,
    OodDensityContext,
}

impl Split {
    pub fn as_str(&self) -> &'static str {
        match self {
            Split::Id => "id",
            Split::OodDensity => "ood_density",
            Split::OodContext => "ood_context",
            Split::OodDensityContext => "ood_density_context",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        [Split::Id, Split::OodDensity, Split::OodContext, Split::OodDensityContext]
            .into_iter()
            .find(|v| v.as_str() == s)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Context {
    /// Unobstructed disc of the given radius.
    OpenArea { radius: f64 },
    /// Corridor along the x axis, walled on both long sides.
    Street { width: f64, length: f64 },
    /// Open area where a fraction of pedestrians stand still.
    Plaza { radius: f64, static_fraction: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SplitSpec {
    pub split: Split,
    pub num_scenes: usize,
    pub rng_seed: u64,
    /// Mean number of agents per scene, ego included.
    pub target_agents: f64,
    pub context: Context,
    /// Fraction of the crowd spawned directly behind the ego, walking its way.
    pub behind_ego_fraction: f64,
    /// Chance that a scene holds a companion pair: one walker just ahead of the
    /// ego keeping station on a partner out of its sight behind.
    pub companion_probability: f64,
    /// Fraction of non-ego agents that follow another agent.
    pub follower_fraction: f64,
    /// Longest leader chain (a follower of a follower has chain length 2).
    pub max_follow_chain: usize,
    pub fov_half_angle: f64,
    pub sim: SimConfig,
    pub thresholds: CausalThresholds,
    pub branch: BranchPoint,
}

impl SplitSpec {
    /// Defaults for each split.
    pub fn new(split: Split, num_scenes: usize, rng_seed: u64) -> Self {
        let base = Self {
            split,
            num_scenes,
            rng_seed,
            target_agents: 12.0,
            context: Context::OpenArea { radius: 4.5 },
            behind_ego_fraction: 0.0,
            companion_probability: 0.5,
            follower_fraction: 0.15,
            max_follow_chain: 2,
            fov_half_angle: AgentParams::DEFAULT_FOV_HALF_ANGLE,
            sim: SimConfig {
                rng_seed,
                ..SimConfig::default()
            },
            thresholds: CausalThresholds::default(),
            branch: BranchPoint::EpisodeStart,
        };
        match split {
            Split::Id => base,
            Split::OodDensity => Self {
                target_agents: 29.0,
                context: Context::OpenArea { radius: 7.0 },
                behind_ego_fraction: 0.3,
                ..base
            },
            Split::OodContext => Self {
                target_agents: 29.0,
                context: Context::Street { width: 4.0, length: 30.0 },
                ..base
            },
            Split::OodDensityContext => Self {
                target_agents: 29.0,
                context: Context::Plaza {
                    radius: 7.0,
                    static_fraction: 0.3,
                },
                ..base
            },
        }
    }

    pub fn validate(&self) -> Result<(), ScenarioError> {
        let bad = |m: &str| Err(ScenarioError::InvalidSpec(m.to_string()));
        if self.num_scenes == 0 {
            return bad("num_scenes must be positive");
        }
        if !(self.target_agents >= 2.0) {
            return bad("target_agents must be at least 2");
        }
        match self.context {
            Context::Street { width, length } => {
                if !(width > 4.0 * AgentParams::DEFAULT_RADIUS) || !(length > width) {
                    return bad("street must be wider than two agents and longer than wide");
                }
            }
            Context::OpenArea { radius } | Context::Plaza { radius, .. } => {
                if !(radius > 2.0) {
                    return bad("area radius must exceed 2 m");
                }
            }
        }
        if let Context::Plaza { static_fraction, .. } = self.context {
            if !(0.0..1.0).contains(&static_fraction) {
                return bad("static_fraction must lie in [0, 1)");
            }
        }
        if !(0.0..1.0).contains(&self.follower_fraction) || !(0.0..1.0).contains(&self.behind_ego_fraction) {
            return bad("fractions must lie in [0, 1)");
        }
        if !(0.0..=1.0).contains(&self.companion_probability) {
            return bad("companion_probability must lie in [0, 1]");
        }
        if !(self.fov_half_angle > 0.0 && self.fov_half_angle <= PI) {
            return bad("fov_half_angle must lie in (0, pi]");
        }
        self.sim.validate().map_err(|e| ScenarioError::InvalidSpec(e.to_string()))?;
        self.thresholds.validate()?;
        Ok(())
    }

    pub fn counterfactual_config(&self) -> CounterfactualConfig {
        CounterfactualConfig {
            sim: self.sim,
            thresholds: self.thresholds,
            branch: self.branch,
        }
    }
}

/// One generated episode with its annotations.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SceneRecord {
    pub scene_id: String,
    pub split: Split,
    pub config: SimConfig,
    pub scene: Scene,
    /// `trajectories[agent][t]`, positions after each step.
    pub trajectories: Vec<Vec<DVec2>>,
    pub annotations: Vec<CausalAnnotation>,
    /// Ego future with every non-causal neighbour removed at once.
    pub noncausal_future: Vec<DVec2>,
}

impl SceneRecord {
    pub fn num_agents(&self) -> usize {
        self.scene.agents.len()
    }

    pub fn ego_future(&self) -> &[DVec2] {
        &self.trajectories[EGO][self.config.history_steps..]
    }

    pub fn count(&self, category: Category) -> usize {
        self.annotations.iter().filter(|a| a.category == category).count()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct SplitSummary {
    pub num_scenes: usize,
    pub non_causal: f64,
    pub direct_causal: f64,
    pub indirect_causal: f64,
    pub ambiguous: f64,
    /// Ego included.
    pub total: f64,
}

impl SplitSummary {
    pub fn of(records: &[SceneRecord]) -> Self {
        let n = records.len().max(1) as f64;
        let mean = |c: Category| records.iter().map(|r| r.count(c)).sum::<usize>() as f64 / n;
        Self {
            num_scenes: records.len(),
            non_causal: mean(Category::NonCausal),
            direct_causal: mean(Category::DirectCausal),
            indirect_causal: mean(Category::IndirectCausal),
            ambiguous: mean(Category::Ambiguous),
            total: records.iter().map(|r| r.num_agents()).sum::<usize>() as f64 / n,
        }
    }
}

impl std::fmt::Display for SplitSummary {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(
            f,
            "scenes={} non_causal={:.2} direct={:.2} indirect={:.2} ambiguous={:.2} total={:.2}",
            self.num_scenes, self.non_causal, self.direct_causal, self.indirect_causal, self.ambiguous, self.total
        )
    }
}

pub fn scene_id(split: Split, index: usize) -> String {
    format!("{}-{:06}", split.as_str(), index)
}

/// Generate, simulate and annotate scene `index` of a split.
pub fn generate_scene(spec: &SplitSpec, index: usize) -> Result<SceneRecord, ScenarioError> {
    spec.validate()?;
    let config = spec.counterfactual_config();
    for attempt in 0..MAX_ATTEMPTS {
        let mut rng = ChaCha8Rng::seed_from_u64(mix(&[spec.rng_seed, index as u64, attempt as u64]));
        let Some(scene) = sample_scene(spec, &mut rng) else {
            continue;
        };
        let annotated = annotate_with_rollouts(&scene, &config)?;
        if !annotated.annotations.iter().any(|a| a.category == Category::DirectCausal) {
            continue;
        }
        let noncausal: Vec<AgentId> = annotated
            .annotations
            .iter()
            .filter(|a| a.category == Category::NonCausal)
            .map(|a| a.agent_id)
            .collect();
        let noncausal_future = if noncausal.is_empty() {
            annotated.factual.positions[EGO][spec.sim.history_steps..].to_vec()
        } else {
            let cf = simulate_counterfactual(&scene, &RemovalSpec::new(&scene, noncausal)?, &config)?;
            cf.positions[EGO][spec.sim.history_steps..].to_vec()
        };
        return Ok(SceneRecord {
            scene_id: scene_id(spec.split, index),
            split: spec.split,
            config: spec.sim,
            scene,
            trajectories: annotated.factual.positions,
            annotations: annotated.annotations,
            noncausal_future,
        });
    }
    Err(ScenarioError::RetryExhausted {
        index,
        attempts: MAX_ATTEMPTS,
    })
}

/// All scenes of a split, in index order, plus per-category means.
pub fn generate_split(spec: &SplitSpec) -> Result<(Vec<SceneRecord>, SplitSummary), ScenarioError> {
    spec.validate()?;
    let records = (0..spec.num_scenes)
        .into_par_iter()
        .map(|i| generate_scene(spec, i))
        .collect::<Result<Vec<_>, _>>()?;
    let summary = SplitSummary::of(&records);
    Ok((records, summary))
}

fn sample_count(target: f64, rng: &mut impl Rng) -> usize {
    // Uniform jitter of +-2 around the mean keeps the mean exact.
    let base = target.round() as i64;
    (base + rng.random_range(-2..=2)).max(2) as usize
}

fn pedestrian(position: DVec2, goal: DVec2, spec: &SplitSpec, rng: &mut impl Rng) -> Agent {
    let mut params = AgentParams::pedestrian(goal, rng.random_range(0.8..1.5));
    params.fov_half_angle = spec.fov_half_angle;
    let heading = (goal - position).normalize_or(DVec2::X);
    Agent {
        state: AgentState::at_rest(position, heading),
        params,
    }
}

fn uniform_in_disc(radius: f64, rng: &mut (impl Rng + ?Sized)) -> DVec2 {
    let r = radius * rng.random::<f64>().sqrt();
    DVec2::from_angle(rng.random_range(0.0..TAU)) * r
}

fn clear_of(p: DVec2, agents: &[Agent]) -> bool {
    agents.iter().all(|a| a.state.position.distance(p) >= MIN_SEPARATION)
}

/// Rejection-sample a position; `None` if the area is too crowded.
fn place(agents: &[Agent], rng: &mut impl Rng, mut draw: impl FnMut(&mut dyn rand::RngCore) -> DVec2) -> Option<DVec2> {
    (0..200).map(|_| draw(rng)).find(|&p| clear_of(p, agents))
}

fn sample_scene(spec: &SplitSpec, rng: &mut ChaCha8Rng) -> Option<Scene> {
    let n = sample_count(spec.target_agents, rng);
    let jitter = Normal::new(0.0, 1.0).expect("unit normal");
    let mut agents: Vec<Agent> = Vec::with_capacity(n);
    let mut obstacles = Vec::new();

    match spec.context {
        Context::OpenArea { radius } | Context::Plaza { radius, .. } => {
            // Ego starts part-way out and crosses the area.
            let ego_start = DVec2::from_angle(rng.random_range(0.0..TAU)) * radius * rng.random_range(0.4..0.7);
            let ego_goal = -ego_start + DVec2::new(jitter.sample(rng), jitter.sample(rng));
            agents.push(pedestrian(ego_start, ego_goal, spec, rng));
            let ego_dir = (ego_goal - ego_start).normalize();

            let behind = ((n - 1) as f64 * spec.behind_ego_fraction).round() as usize;
            for _ in 0..behind {
                let p = place(&agents, rng, |r| {
                    let back = r.random_range(1.5..6.0);
                    let side = r.random_range(-2.5..2.5);
                    ego_start - ego_dir * back + ego_dir.perp() * side
                })?;
                let travel = ego_start.distance(ego_goal);
                agents.push(pedestrian(p, p + ego_dir * travel, spec, rng));
            }

            let mut companions = 0;
            if n >= 4 && rng.random_bool(spec.companion_probability) {
                // Companion pair: the one ahead of the ego keeps station on a
                // partner walking out of sight behind it.
                let ego_speed = agents[EGO].params.pref_speed;
                let travel = ego_start.distance(ego_goal);
                let back = ego_start - ego_dir * rng.random_range(4.4..5.2) + ego_dir.perp() * rng.random_range(-0.8..0.8);
                let ahead = ego_start + ego_dir * rng.random_range(1.5..2.8) + ego_dir.perp() * rng.random_range(-0.6..0.6);
                if clear_of(back, &agents) && clear_of(ahead, &agents) && back.distance(ahead) >= MIN_SEPARATION {
                    let mut lead = pedestrian(back, back + ego_dir * travel, spec, rng);
                    lead.params.pref_speed = ego_speed;
                    let leader = agents.len();
                    agents.push(lead);
                    let offset = ahead - back;
                    let mut f = pedestrian(ahead, ahead + ego_dir * travel, spec, rng);
                    f.params.pref_speed = ego_speed;
                    f.params.behavior = Behavior::Follower { target: leader, offset };
                    agents.push(f);
                    companions = 2;
                }
            }

            let statics = match spec.context {
                Context::Plaza { static_fraction, .. } => ((n - 1 - behind - companions) as f64 * static_fraction).round() as usize,
                _ => 0,
            };
            while agents.len() < n {
                let p = place(&agents, rng, |r| uniform_in_disc(radius, r))?;
                let standing = agents.len() - 1 - behind - companions < statics;
                let goal = if standing {
                    p
                } else {
                    -p + DVec2::new(jitter.sample(rng), jitter.sample(rng))
                };
                agents.push(pedestrian(p, goal, spec, rng));
            }
        }
        Context::Street { width, length } => {
            let (half_w, half_l) = (width / 2.0, length / 2.0);
            let lane = |r: &mut dyn rand::RngCore| r.random_range(-half_w + 0.5..half_w - 0.5);
            let ego_start = DVec2::new(rng.random_range(-half_l + 1.0..-half_l / 3.0), lane(rng));
            let ego_goal = DVec2::new(half_l - 1.0, lane(rng));
            agents.push(pedestrian(ego_start, ego_goal, spec, rng));
            while agents.len() < n {
                let rightward = agents.len().is_multiple_of(2);
                let p = place(&agents, rng, |r| DVec2::new(r.random_range(-half_l + 1.0..half_l - 1.0), lane(r)))?;
                let goal_x = if rightward { half_l - 1.0 } else { -half_l + 1.0 };
                let goal = DVec2::new(goal_x, lane(rng));
                agents.push(pedestrian(p, goal, spec, rng));
            }
            obstacles.push(Obstacle::new(DVec2::new(-half_l, -half_w), DVec2::new(half_l, -half_w)).ok()?);
            obstacles.push(Obstacle::new(DVec2::new(-half_l, half_w), DVec2::new(half_l, half_w)).ok()?);
        }
    }

    assign_followers(&mut agents, spec, rng);
    let scene = Scene { agents, obstacles };
    scene.validate().ok()?;
    Some(scene)
}

/// Whether an agent centred at `p` fits inside the context's walls.
fn walkable(context: &Context, p: DVec2) -> bool {
    match *context {
        Context::Street { width, length } => {
            p.y.abs() <= width / 2.0 - AgentParams::DEFAULT_RADIUS && p.x.abs() <= length / 2.0 - AgentParams::DEFAULT_RADIUS
        }
        Context::OpenArea { .. } | Context::Plaza { .. } => true,
    }
}

/// Turn some walkers into followers trailing another walker.
fn assign_followers(agents: &mut [Agent], spec: &SplitSpec, rng: &mut ChaCha8Rng) {
    if spec.follower_fraction <= 0.0 || agents.len() < 3 || spec.max_follow_chain == 0 {
        return;
    }
    let candidates = agents.len() - 1;
    let wanted = (candidates as f64 * spec.follower_fraction).round() as usize;
    let mut depth = vec![0usize; agents.len()];
    let mut assigned = 0;
    for _ in 0..wanted * 10 {
        if assigned == wanted {
            break;
        }
        let follower = rng.random_range(1..agents.len());
        let leader = rng.random_range(1..agents.len());
        if follower == leader
            || depth[follower] > 0
            || depth[leader] >= spec.max_follow_chain
            || agents[follower].params.behavior != Behavior::GoalSeeking
        {
            continue;
        }
        // Never create cycles or lengthen an existing chain through the follower.
        if agents
            .iter()
            .any(|a| matches!(a.params.behavior, Behavior::Follower { target, .. } if target == follower))
        {
            continue;
        }
        let lead = agents[leader];
        if lead.state.position.distance(lead.params.goal) < 1e-6 {
            continue;
        }
        let dir = (lead.params.goal - lead.state.position).normalize();
        let offset = DVec2::from_angle(rng.random_range(-0.2..0.2)).rotate(-dir) * rng.random_range(1.0..1.8);
        let position = lead.state.position + offset;
        let others: Vec<Agent> = agents.iter().enumerate().filter(|&(i, _)| i != follower).map(|(_, a)| *a).collect();
        if !clear_of(position, &others) || !walkable(&spec.context, position) {
            continue;
        }
        let a = &mut agents[follower];
        a.state = AgentState::at_rest(position, dir);
        a.params.behavior = Behavior::Follower { target: leader, offset };
        a.params.goal = lead.params.goal + offset;
        a.params.pref_speed = lead.params.pref_speed.max(a.params.pref_speed);
        depth[follower] = depth[leader] + 1;
        assigned += 1;
    }
}
