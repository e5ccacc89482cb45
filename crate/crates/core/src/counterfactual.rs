//! Paired factual/counterfactual rollouts, ground-truth causal effects and
//! agent categories.
//!
//! The causal effect of removing a set of neighbours is the mean point-wise
//! distance between the ego's future in the full scene and its future in the
//! scene re-simulated without them. Each neighbour is additionally tagged as
//! directly influencing the ego at a step when the ego perceives it then.

use std::collections::BTreeSet;

use glam::DVec2;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::sim::{self, AgentId, Rollout, Scene, SimConfig, SimError, EGO};

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum CounterfactualError {
    #[error(transparent)]
    Sim(#[from] SimError),
    #[error("trajectory lengths differ: {left} vs {right}")]
    LengthMismatch { left: usize, right: usize },
    #[error("invalid removal: {0}")]
    InvalidRemoval(String),
    #[error("only {available} non-causal agents, {requested} requested")]
    InsufficientNonCausal { available: usize, requested: usize },
    #[error("thresholds must satisfy 0 < epsilon < eta")]
    InvalidThresholds,
}

/// Set of neighbours removed in a counterfactual; never contains the ego.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct RemovalSpec {
    removed: BTreeSet<AgentId>,
}

impl RemovalSpec {
    pub fn new(scene: &Scene, removed: impl IntoIterator<Item = AgentId>) -> Result<Self, CounterfactualError> {
        let removed: BTreeSet<AgentId> = removed.into_iter().collect();
        if removed.contains(&EGO) {
            return Err(CounterfactualError::InvalidRemoval("the ego cannot be removed".into()));
        }
        if let Some(&bad) = removed.iter().find(|&&id| id >= scene.agents.len()) {
            return Err(CounterfactualError::InvalidRemoval(format!("agent {bad} is not in the scene")));
        }
        Ok(Self { removed })
    }

    pub fn single(scene: &Scene, id: AgentId) -> Result<Self, CounterfactualError> {
        Self::new(scene, [id])
    }

    pub fn is_empty(&self) -> bool {
        self.removed.is_empty()
    }

    pub fn ids(&self) -> Vec<AgentId> {
        self.removed.iter().copied().collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CausalThresholds {
    /// Effects below this are non-causal.
    pub epsilon: f64,
    /// Effects above this are causal.
    pub eta: f64,
}

impl Default for CausalThresholds {
    fn default() -> Self {
        Self { epsilon: 0.02, eta: 0.1 }
    }
}

impl CausalThresholds {
    pub fn new(epsilon: f64, eta: f64) -> Result<Self, CounterfactualError> {
        let t = Self { epsilon, eta };
        t.validate()?;
        Ok(t)
    }

    pub fn validate(&self) -> Result<(), CounterfactualError> {
        if self.epsilon > 0.0 && self.epsilon < self.eta {
            Ok(())
        } else {
            Err(CounterfactualError::InvalidThresholds)
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Category {
    NonCausal,
    DirectCausal,
    IndirectCausal,
    /// Effect between the two thresholds.
    Ambiguous,
}

impl Category {
    pub const ALL: [Category; 4] = [
        Category::NonCausal,
        Category::DirectCausal,
        Category::IndirectCausal,
        Category::Ambiguous,
    ];

    pub fn as_str(&self) -> &'static str {
        match self {
            Category::NonCausal => "non_causal",
            Category::DirectCausal => "direct_causal",
            Category::IndirectCausal => "indirect_causal",
            Category::Ambiguous => "ambiguous",
        }
    }

    pub fn is_causal(&self) -> bool {
        matches!(self, Category::DirectCausal | Category::IndirectCausal)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CausalAnnotation {
    pub agent_id: AgentId,
    pub effect: f64,
    pub category: Category,
    /// `direct_mask[t]`: the ego perceived this agent when taking step `t + 1`.
    pub direct_mask: Vec<bool>,
    /// Ego future in the world without this agent.
    pub counterfactual_future: Vec<DVec2>,
}

/// Where counterfactual worlds diverge from the factual one.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BranchPoint {
    /// Removed agents are absent for the whole episode.
    #[default]
    EpisodeStart,
    /// History is shared; removal happens at the history/future boundary.
    HistoryEnd,
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct CounterfactualConfig {
    pub sim: SimConfig,
    pub thresholds: CausalThresholds,
    pub branch: BranchPoint,
}

/// Counterfactual rollout for `removal` under the configured branch point.
pub fn simulate_counterfactual(
    scene: &Scene,
    removal: &RemovalSpec,
    config: &CounterfactualConfig,
) -> Result<Rollout, CounterfactualError> {
    let ids = removal.ids();
    Ok(match config.branch {
        BranchPoint::EpisodeStart => sim::rollout_without(scene, &ids, &config.sim)?,
        BranchPoint::HistoryEnd => sim::rollout_branched(scene, &ids, config.sim.history_steps, &config.sim)?,
    })
}

/// Factual and counterfactual rollouts sharing initial conditions and seed.
pub fn simulate_pair(
    scene: &Scene,
    removal: &RemovalSpec,
    config: &CounterfactualConfig,
) -> Result<(Rollout, Rollout), CounterfactualError> {
    let factual = sim::rollout(scene, &config.sim)?;
    let counterfactual = simulate_counterfactual(scene, removal, config)?;
    Ok((factual, counterfactual))
}

/// Mean point-wise distance between two ego trajectories over the future
/// segment (every step after `history_steps`).
pub fn causal_effect(factual: &[DVec2], counterfactual: &[DVec2], history_steps: usize) -> Result<f64, CounterfactualError> {
    if factual.len() != counterfactual.len() {
        return Err(CounterfactualError::LengthMismatch {
            left: factual.len(),
            right: counterfactual.len(),
        });
    }
    let future = factual.len().saturating_sub(history_steps);
    if future == 0 {
        return Ok(0.0);
    }
    let total: f64 = factual[history_steps..]
        .iter()
        .zip(&counterfactual[history_steps..])
        .map(|(a, b)| a.distance(*b))
        .sum();
    Ok(total / future as f64)
}

/// Causal effect between the ego rows of two rollouts.
pub fn rollout_effect(factual: &Rollout, counterfactual: &Rollout, config: &SimConfig) -> Result<f64, CounterfactualError> {
    let (f, c) = (ego_row(factual)?, ego_row(counterfactual)?);
    if f.len() != config.total_steps || c.len() != config.total_steps {
        return Err(CounterfactualError::LengthMismatch {
            left: f.len(),
            right: c.len(),
        });
    }
    causal_effect(f, c, config.history_steps)
}

fn ego_row(r: &Rollout) -> Result<&[DVec2], CounterfactualError> {
    r.ego()
        .ok_or_else(|| CounterfactualError::InvalidRemoval("rollout has no ego".into()))
}

/// Steps at which the ego perceived `agent_id` in `factual`.
pub fn direct_influence_mask(factual: &Rollout, agent_id: AgentId) -> Vec<bool> {
    factual.ego_perceived.iter().map(|seen| seen.contains(&agent_id)).collect()
}

pub fn categorize(effect: f64, direct_mask: &[bool], thresholds: &CausalThresholds) -> Category {
    if effect < thresholds.epsilon {
        Category::NonCausal
    } else if effect > thresholds.eta {
        if direct_mask.iter().any(|&d| d) {
            Category::DirectCausal
        } else {
            Category::IndirectCausal
        }
    } else {
        Category::Ambiguous
    }
}

/// Annotations plus the rollouts that produced them.
#[derive(Debug, Clone)]
pub struct AnnotatedScene {
    pub factual: Rollout,
    /// One singleton-removal rollout per neighbour, ordered by agent id.
    pub counterfactuals: Vec<Rollout>,
    pub annotations: Vec<CausalAnnotation>,
}

/// One annotation per neighbour from singleton removals.
pub fn annotate_scene(scene: &Scene, config: &CounterfactualConfig) -> Result<Vec<CausalAnnotation>, CounterfactualError> {
    Ok(annotate_with_rollouts(scene, config)?.annotations)
}

pub fn annotate_with_rollouts(scene: &Scene, config: &CounterfactualConfig) -> Result<AnnotatedScene, CounterfactualError> {
    config.thresholds.validate()?;
    let factual = sim::rollout(scene, &config.sim)?;
    let mut counterfactuals = Vec::with_capacity(scene.agents.len().saturating_sub(1));
    let mut annotations = Vec::with_capacity(scene.agents.len().saturating_sub(1));
    for id in 1..scene.agents.len() {
        let cf = simulate_counterfactual(scene, &RemovalSpec::single(scene, id)?, config)?;
        let effect = rollout_effect(&factual, &cf, &config.sim)?;
        let direct_mask = direct_influence_mask(&factual, id);
        annotations.push(CausalAnnotation {
            agent_id: id,
            effect,
            category: categorize(effect, &direct_mask, &config.thresholds),
            direct_mask,
            counterfactual_future: ego_row(&cf)?[config.sim.history_steps..].to_vec(),
        });
        counterfactuals.push(cf);
    }
    Ok(AnnotatedScene {
        factual,
        counterfactuals,
        annotations,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum SubsetSelection {
    /// The `k` smallest non-causal ids.
    #[default]
    Smallest,
    /// A uniformly random `k`-subset drawn with the given seed.
    Seeded(u64),
}

/// Non-causal agents chosen for a joint removal of size `k`.
pub fn noncausal_subset(
    annotations: &[CausalAnnotation],
    k: usize,
    selection: SubsetSelection,
) -> Result<Vec<AgentId>, CounterfactualError> {
    let mut pool: Vec<AgentId> = annotations
        .iter()
        .filter(|a| a.category == Category::NonCausal)
        .map(|a| a.agent_id)
        .collect();
    if pool.len() < k {
        return Err(CounterfactualError::InsufficientNonCausal {
            available: pool.len(),
            requested: k,
        });
    }
    if let SubsetSelection::Seeded(seed) = selection {
        pool.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    }
    let mut chosen = pool[..k].to_vec();
    chosen.sort_unstable();
    Ok(chosen)
}

/// Causal effect of removing `k` non-causal agents at once. `factual` may be
/// passed to avoid re-simulating the full scene.
pub fn joint_removal_effect(
    scene: &Scene,
    annotations: &[CausalAnnotation],
    k: usize,
    selection: SubsetSelection,
    config: &CounterfactualConfig,
    factual: Option<&Rollout>,
) -> Result<f64, CounterfactualError> {
    let chosen = noncausal_subset(annotations, k, selection)?;
    if k == 0 {
        return Ok(0.0);
    }
    let owned;
    let factual = match factual {
        Some(f) => f,
        None => {
            owned = sim::rollout(scene, &config.sim)?;
            &owned
        }
    };
    let cf = simulate_counterfactual(scene, &RemovalSpec::new(scene, chosen)?, config)?;
    rollout_effect(factual, &cf, &config.sim)
}
