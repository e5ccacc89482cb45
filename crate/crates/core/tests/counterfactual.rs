use causal_crowds::counterfactual::{
    annotate_scene, annotate_with_rollouts, categorize, causal_effect, direct_influence_mask, joint_removal_effect, simulate_pair,
    Category, CausalThresholds, CounterfactualConfig, CounterfactualError, RemovalSpec, SubsetSelection,
};
use causal_crowds::sim::{rollout, Agent, AgentParams, AgentState, Behavior, Scene, SimConfig, EGO};
use glam::DVec2;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};

fn walker(position: DVec2, goal: DVec2, pref_speed: f64) -> Agent {
    Agent {
        state: AgentState::at_rest(position, goal - position),
        params: AgentParams::pedestrian(goal, pref_speed),
    }
}

fn ego() -> Agent {
    walker(DVec2::ZERO, DVec2::new(30.0, 0.0), 1.0)
}

fn config() -> CounterfactualConfig {
    CounterfactualConfig::default()
}

/// Scalar re-implementation of the effect: mean distance over future steps.
fn effect_oracle(f: &[DVec2], c: &[DVec2], history: usize) -> f64 {
    let mut sum = 0.0;
    let mut n = 0.0;
    for t in history..f.len() {
        let dx = f[t].x - c[t].x;
        let dy = f[t].y - c[t].y;
        sum += (dx * dx + dy * dy).sqrt();
        n += 1.0;
    }
    sum / n
}

fn blocker_scene() -> Scene {
    Scene {
        agents: vec![ego(), walker(DVec2::new(9.0, 0.02), DVec2::new(-30.0, 0.02), 1.0)],
        obstacles: Vec::new(),
    }
}

#[test]
fn removing_nothing_reproduces_the_factual_rollout() {
    let s = blocker_scene();
    let (f, c) = simulate_pair(&s, &RemovalSpec::default(), &config()).unwrap();
    assert!(f.bit_identical(&c));
}

#[test]
fn removing_a_head_on_blocker_changes_the_ego_future() {
    let s = blocker_scene();
    let (f, c) = simulate_pair(&s, &RemovalSpec::single(&s, 1).unwrap(), &config()).unwrap();
    let (fe, ce) = (f.ego().unwrap(), c.ego().unwrap());
    let e = causal_effect(fe, ce, 8).unwrap();
    assert!(e > 0.1, "effect {e}");
    assert!((e - effect_oracle(fe, ce, 8)).abs() < 1e-12);
    let ann = annotate_scene(&s, &config()).unwrap();
    assert_eq!(ann[0].category, Category::DirectCausal);
    assert_eq!(ann[0].effect, e);
}

#[test]
fn follower_chain_yields_an_indirect_causal_leader() {
    // Leader A walks behind the ego beyond its sensing range; follower B keeps
    // station 2 m ahead of the ego. Without A, B stops where it stands and
    // the ego must pass it.
    let a = walker(DVec2::new(-4.8, 0.0), DVec2::new(30.0, 0.0), 1.0);
    let mut b = walker(DVec2::new(2.0, 0.0), DVec2::new(30.0, 0.0), 1.0);
    b.params.behavior = Behavior::Follower {
        target: 2,
        offset: DVec2::new(6.8, 0.0),
    };
    let s = Scene {
        agents: vec![ego(), b, a],
        obstacles: Vec::new(),
    };
    let ann = annotate_scene(&s, &config()).unwrap();
    let leader = &ann[1];
    assert_eq!(leader.agent_id, 2);
    assert!(leader.direct_mask.iter().all(|&d| !d));
    assert!(leader.effect > 0.1, "effect {}", leader.effect);
    assert_eq!(leader.category, Category::IndirectCausal);
    assert!(ann[0].direct_mask.iter().all(|&d| d));
}

#[test]
fn one_annotation_and_one_rollout_per_neighbour() {
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(4);
    let mut agents = vec![ego()];
    for k in 0..7 {
        let p = DVec2::new(2.0 + 1.5 * k as f64, rng.random_range(-3.0..3.0));
        agents.push(walker(p, DVec2::new(-p.x, -p.y), rng.random_range(0.8..1.5)));
    }
    let s = Scene {
        agents,
        obstacles: Vec::new(),
    };
    let out = annotate_with_rollouts(&s, &config()).unwrap();
    assert_eq!(out.annotations.len(), 7);
    assert_eq!(out.counterfactuals.len(), 7);
    assert!(out.annotations.iter().enumerate().all(|(i, a)| a.agent_id == i + 1));
    // Deterministic across calls.
    assert_eq!(annotate_scene(&s, &config()).unwrap(), out.annotations);

    let one = Scene {
        agents: s.agents[..2].to_vec(),
        obstacles: Vec::new(),
    };
    assert_eq!(annotate_scene(&one, &config()).unwrap().len(), 1);
}

/// Random crowd around the ego plus one agent far from everyone, inserted at
/// `far_id`.
fn with_distant_agent(seed: u64, far_id: usize) -> Scene {
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
    let mut agents = vec![ego()];
    while agents.len() < 8 {
        let p = DVec2::new(rng.random_range(-6.0..6.0), rng.random_range(-6.0..6.0));
        if agents.iter().any(|a| a.state.position.distance(p) < 1.0) {
            continue;
        }
        agents.push(walker(p, -p, rng.random_range(0.8..1.5)));
    }
    let far = walker(DVec2::new(200.0, 200.0), DVec2::new(260.0, 260.0), 1.2);
    agents.insert(far_id.clamp(1, agents.len()), far);
    Scene {
        agents,
        obstacles: Vec::new(),
    }
}

#[test]
fn never_perceived_agents_have_exactly_zero_effect() {
    for seed in 0..20 {
        let far_id = 1 + seed as usize % 8;
        let s = with_distant_agent(seed, far_id);
        for branch in [Default::default(), causal_crowds::counterfactual::BranchPoint::HistoryEnd] {
            let cfg = CounterfactualConfig { branch, ..config() };
            let (f, c) = simulate_pair(&s, &RemovalSpec::single(&s, far_id).unwrap(), &cfg).unwrap();
            assert_eq!(f.ego().unwrap(), c.ego().unwrap(), "seed {seed}");
            let ann = annotate_scene(&s, &cfg).unwrap();
            assert_eq!(ann[far_id - 1].effect, 0.0);
            assert_eq!(ann[far_id - 1].category, Category::NonCausal);
        }
    }
}

#[test]
fn mask_is_false_for_a_distant_agent() {
    let s = Scene {
        agents: vec![ego(), walker(DVec2::new(5.0, 20.0), DVec2::new(35.0, 20.0), 1.0)],
        obstacles: Vec::new(),
    };
    let f = rollout(&s, &SimConfig::default()).unwrap();
    assert!(direct_influence_mask(&f, 1).iter().all(|&d| !d));
}

#[test]
fn mask_is_true_for_an_agent_walking_just_ahead() {
    let s = Scene {
        agents: vec![ego(), walker(DVec2::new(2.0, 0.0), DVec2::new(32.0, 0.0), 1.0)],
        obstacles: Vec::new(),
    };
    let f = rollout(&s, &SimConfig::default()).unwrap();
    let mask = direct_influence_mask(&f, 1);
    assert_eq!(mask.len(), 20);
    assert!(mask.iter().all(|&d| d));
}

#[test]
fn mask_is_false_for_an_agent_crossing_behind() {
    let s = Scene {
        agents: vec![ego(), walker(DVec2::new(-1.0, -3.0), DVec2::new(-1.0, 3.0), 0.8)],
        obstacles: Vec::new(),
    };
    let f = rollout(&s, &SimConfig::default()).unwrap();
    let r1 = f.row(1).unwrap();
    assert!(r1.iter().zip(f.ego().unwrap()).any(|(p, e)| p.distance(*e) < 4.0));
    assert!(direct_influence_mask(&f, 1).iter().all(|&d| !d));
}

#[test]
fn category_examples() {
    let t = CausalThresholds::default();
    assert_eq!(t.epsilon, 0.02);
    assert_eq!(t.eta, 0.1);
    assert_eq!(categorize(0.01, &[true, false], &t), Category::NonCausal);
    assert_eq!(categorize(0.01, &[false], &t), Category::NonCausal);
    assert_eq!(categorize(0.5, &[false, true], &t), Category::DirectCausal);
    assert_eq!(categorize(0.5, &[false, false], &t), Category::IndirectCausal);
    assert_eq!(categorize(0.05, &[true], &t), Category::Ambiguous);
    assert_eq!(categorize(0.02, &[true], &t), Category::Ambiguous);
    assert_eq!(categorize(0.1, &[true], &t), Category::Ambiguous);
}

#[test]
fn joint_removal_of_zero_is_zero_and_too_many_is_an_error() {
    let s = with_distant_agent(1, 3);
    let ann = annotate_scene(&s, &config()).unwrap();
    let e = joint_removal_effect(&s, &ann, 0, SubsetSelection::Smallest, &config(), None).unwrap();
    assert_eq!(e, 0.0);
    let nc = ann.iter().filter(|a| a.category == Category::NonCausal).count();
    assert!(matches!(
        joint_removal_effect(&s, &ann, nc + 1, SubsetSelection::Smallest, &config(), None),
        Err(CounterfactualError::InsufficientNonCausal { .. })
    ));
    if nc >= 1 {
        let one = joint_removal_effect(&s, &ann, 1, SubsetSelection::Smallest, &config(), None).unwrap();
        assert!(one < 0.02);
    }
}

#[test]
fn ego_removal_is_rejected() {
    let s = blocker_scene();
    assert!(RemovalSpec::single(&s, EGO).is_err());
    assert!(RemovalSpec::single(&s, 2).is_err());
}

proptest! {
    #[test]
    fn categorize_is_monotone_in_effect(a in 0.0..1.0f64, b in 0.0..1.0f64, mask in prop::collection::vec(any::<bool>(), 1..20)) {
        let t = CausalThresholds::default();
        let rank = |c: Category| match c {
            Category::NonCausal => 0,
            Category::Ambiguous => 1,
            _ => 2,
        };
        let (lo, hi) = if a <= b { (a, b) } else { (b, a) };
        prop_assert!(rank(categorize(lo, &mask, &t)) <= rank(categorize(hi, &mask, &t)));
    }

    #[test]
    fn effect_is_non_negative_and_zero_on_itself(points in prop::collection::vec((-10.0..10.0f64, -10.0..10.0f64), 20)) {
        let f: Vec<DVec2> = points.iter().map(|&(x, y)| DVec2::new(x, y)).collect();
        prop_assert_eq!(causal_effect(&f, &f, 8).unwrap(), 0.0);
        let g: Vec<DVec2> = f.iter().rev().copied().collect();
        let e = causal_effect(&f, &g, 8).unwrap();
        prop_assert!(e >= 0.0);
        prop_assert!((e - effect_oracle(&f, &g, 8)).abs() < 1e-12);
    }
}
