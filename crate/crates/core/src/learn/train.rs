//! Training the toy forecaster with or without causal regularisation, and
//! turning a predictor into prediction files.

use std::fmt::Write as _;

use glam::DVec2;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::features::{encode, Encoded, Normalizer, FUTURE, HISTORY, OUTPUT_DIM};
use super::loss::{contrastive_loss_grad, embedding_distance_grad, ranking_loss_grad, LossConfig};
use super::model::ToyModel;
use super::LearnError;
use crate::counterfactual::{simulate_counterfactual, BranchPoint, Category, CausalThresholds, CounterfactualConfig, RemovalSpec};
use crate::dataset::{PredictionSet, RemovalKey};
use crate::metrics::{self, MetricsReport};
use crate::scenario::SceneRecord;
use crate::seed::mix;
use crate::sim::{AgentId, Rollout, EGO};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Mode {
    Baseline,
    Augment,
    Contrast,
    Ranking,
}

impl Mode {
    pub const ALL: [Mode; 4] = [Mode::Baseline, Mode::Augment, Mode::Contrast, Mode::Ranking];

    pub fn as_str(&self) -> &'static str {
        match self {
            Mode::Baseline => "baseline",
            Mode::Augment => "augment",
            Mode::Contrast => "contrast",
            Mode::Ranking => "ranking",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|m| m.as_str() == s)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub mode: Mode,
    pub epochs: usize,
    pub learning_rate: f64,
    pub clip_norm: f64,
    pub batch_size: usize,
    pub pairs_per_scene: usize,
    pub loss: LossConfig,
    pub thresholds: CausalThresholds,
    pub seed: u64,
}

impl TrainConfig {
    pub fn new(mode: Mode, epochs: usize, seed: u64) -> Self {
        Self {
            mode,
            epochs,
            learning_rate: 1e-2,
            clip_norm: 5.0,
            batch_size: 16,
            pairs_per_scene: 4,
            loss: LossConfig::default(),
            thresholds: CausalThresholds::default(),
            seed,
        }
    }

    pub fn validate(&self) -> Result<(), LearnError> {
        self.loss.validate()?;
        if !(self.learning_rate > 0.0 && self.clip_norm > 0.0) || self.batch_size == 0 {
            return Err(LearnError::InvalidConfig(
                "need learning_rate > 0, clip_norm > 0 and batch_size > 0".into(),
            ));
        }
        Ok(())
    }
}

/// One neighbour's counterfactual world as seen by the model.
#[derive(Debug, Clone, PartialEq)]
pub struct CounterfactualSample {
    pub agent_id: AgentId,
    pub effect: f64,
    pub category: Category,
    pub encoded: Encoded,
    /// Ego future in that world, world coordinates.
    pub future: Vec<DVec2>,
}

/// Model-ready view of one scene.
#[derive(Debug, Clone, PartialEq)]
pub struct SceneSample {
    pub scene_id: String,
    pub factual: Encoded,
    pub future: Vec<DVec2>,
    pub counterfactuals: Vec<CounterfactualSample>,
    /// World with every non-causal neighbour removed.
    pub noncausal: Encoded,
}

fn encode_rollout(r: &Rollout) -> Result<Encoded, LearnError> {
    let ego = r.ego().ok_or_else(|| LearnError::InvalidData("rollout has no ego".into()))?;
    let others: Vec<&[DVec2]> = r
        .ids
        .iter()
        .zip(&r.positions)
        .filter(|(id, _)| **id != EGO)
        .map(|(_, p)| p.as_slice())
        .collect();
    encode(ego, &others)
}

fn encode_record(r: &SceneRecord) -> Result<Encoded, LearnError> {
    let others: Vec<&[DVec2]> = r.trajectories[1..].iter().map(Vec::as_slice).collect();
    encode(&r.trajectories[EGO], &others)
}

/// Re-simulate every counterfactual world of a record and encode its history.
pub fn prepare_scene(r: &SceneRecord, branch: BranchPoint) -> Result<SceneSample, LearnError> {
    if r.config.history_steps != HISTORY || r.config.future_steps != FUTURE {
        return Err(LearnError::DimensionMismatch {
            expected: HISTORY + FUTURE,
            found: r.config.total_steps,
        });
    }
    let config = CounterfactualConfig {
        sim: r.config,
        thresholds: CausalThresholds::default(),
        branch,
    };
    let world_without = |ids: Vec<AgentId>| -> Result<Encoded, LearnError> {
        let removal = RemovalSpec::new(&r.scene, ids).map_err(|e| LearnError::InvalidData(e.to_string()))?;
        let rollout = simulate_counterfactual(&r.scene, &removal, &config).map_err(|e| LearnError::InvalidData(e.to_string()))?;
        encode_rollout(&rollout)
    };
    let counterfactuals = r
        .annotations
        .iter()
        .map(|a| {
            Ok(CounterfactualSample {
                agent_id: a.agent_id,
                effect: a.effect,
                category: a.category,
                encoded: world_without(vec![a.agent_id])?,
                future: a.counterfactual_future.clone(),
            })
        })
        .collect::<Result<Vec<_>, LearnError>>()?;
    let noncausal_ids: Vec<AgentId> = r
        .annotations
        .iter()
        .filter(|a| a.category == Category::NonCausal)
        .map(|a| a.agent_id)
        .collect();
    let factual = encode_record(r)?;
    let noncausal = if noncausal_ids.is_empty() {
        factual.clone()
    } else {
        world_without(noncausal_ids)?
    };
    Ok(SceneSample {
        scene_id: r.scene_id.clone(),
        factual,
        future: r.ego_future().to_vec(),
        counterfactuals,
        noncausal,
    })
}

pub fn prepare(records: &[SceneRecord], branch: BranchPoint) -> Result<Vec<SceneSample>, LearnError> {
    records.par_iter().map(|r| prepare_scene(r, branch)).collect()
}

/// Loss terms of one scene (or the mean over a batch).
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct LossTerms {
    pub task: f64,
    pub causal: f64,
    pub total: f64,
}

/// What the causal term of one scene draws on, fixed before differentiation
/// so the loss is a deterministic function of the parameters.
#[derive(Debug, Clone, PartialEq)]
pub enum CausalDraw {
    None,
    /// Index pairs into `counterfactuals` with effect of the first < second.
    Ranking(Vec<(usize, usize)>),
    /// Positive index and negative indices into `counterfactuals`.
    Contrast(usize, Vec<usize>),
}

/// Everything random about one scene's contribution to a step.
#[derive(Debug, Clone, PartialEq)]
pub struct SceneDraw {
    /// Train the task on this counterfactual instead of the factual world.
    pub augment: Option<usize>,
    pub causal: CausalDraw,
}

pub fn draw_scene(sample: &SceneSample, config: &TrainConfig, rng: &mut impl Rng) -> SceneDraw {
    let cfs = &sample.counterfactuals;
    let t = &config.thresholds;
    let of = |c: Category| -> Vec<usize> { (0..cfs.len()).filter(|&k| cfs[k].category == c).collect() };
    match config.mode {
        Mode::Baseline => SceneDraw {
            augment: None,
            causal: CausalDraw::None,
        },
        Mode::Augment => {
            let nc = of(Category::NonCausal);
            let augment = (!nc.is_empty() && rng.random_bool(0.5)).then(|| nc[rng.random_range(0..nc.len())]);
            SceneDraw {
                augment,
                causal: CausalDraw::None,
            }
        }
        Mode::Ranking => {
            let mut pairs = Vec::new();
            if cfs.len() >= 2 {
                for _ in 0..config.pairs_per_scene * 16 {
                    if pairs.len() == config.pairs_per_scene {
                        break;
                    }
                    let (i, j) = (rng.random_range(0..cfs.len()), rng.random_range(0..cfs.len()));
                    if (cfs[i].effect - cfs[j].effect).abs() > config.loss.margin {
                        pairs.push(if cfs[i].effect < cfs[j].effect { (i, j) } else { (j, i) });
                    }
                }
            }
            SceneDraw {
                augment: None,
                causal: CausalDraw::Ranking(pairs),
            }
        }
        Mode::Contrast => {
            let pos: Vec<usize> = (0..cfs.len()).filter(|&k| cfs[k].effect > t.eta).collect();
            let neg: Vec<usize> = (0..cfs.len()).filter(|&k| cfs[k].effect < t.epsilon).collect();
            let causal = if pos.is_empty() || neg.is_empty() {
                CausalDraw::None
            } else {
                CausalDraw::Contrast(pos[rng.random_range(0..pos.len())], neg)
            };
            SceneDraw { augment: None, causal }
        }
    }
}

/// Loss of one scene and, if `grad` is given, its gradient added in.
pub fn scene_loss(
    model: &ToyModel,
    sample: &SceneSample,
    draw: &SceneDraw,
    loss: &LossConfig,
    grad: Option<&mut [f64]>,
) -> Result<LossTerms, LearnError> {
    let (input, truth) = match draw.augment {
        Some(k) => (&sample.counterfactuals[k].encoded, &sample.counterfactuals[k].future),
        None => (&sample.factual, &sample.future),
    };
    let act = model.activations(input);
    let pred = model.predict_local(input, &act);
    let mut task = 0.0;
    let mut d_off = vec![0.0; OUTPUT_DIM];
    for (t, (p, y)) in pred.iter().zip(truth).enumerate() {
        let e = *p - input.frame.to_local(*y);
        task += e.length_squared();
        d_off[2 * t] = 2.0 * e.x / OUTPUT_DIM as f64;
        d_off[2 * t + 1] = 2.0 * e.y / OUTPUT_DIM as f64;
    }
    task /= OUTPUT_DIM as f64;

    // Counterfactual embeddings only matter for the causal term, and that
    // always compares against the factual world.
    let used: Vec<usize> = match &draw.causal {
        CausalDraw::None => Vec::new(),
        CausalDraw::Ranking(pairs) => {
            let mut v: Vec<usize> = pairs.iter().flat_map(|&(i, j)| [i, j]).collect();
            v.sort_unstable();
            v.dedup();
            v
        }
        CausalDraw::Contrast(p, negs) => {
            let mut v = negs.clone();
            v.push(*p);
            v.sort_unstable();
            v.dedup();
            v
        }
    };
    let factual_act = if draw.augment.is_some() && !used.is_empty() {
        Some(model.activations(&sample.factual))
    } else {
        None
    };
    let f_act = factual_act.as_ref().unwrap_or(&act);
    let cf_acts: Vec<(usize, _)> = used
        .iter()
        .map(|&k| (k, model.activations(&sample.counterfactuals[k].encoded)))
        .collect();
    let slot = |k: usize| cf_acts.binary_search_by_key(&k, |(i, _)| *i).expect("drawn index");
    let mut dist = Vec::with_capacity(cf_acts.len());
    for (_, a) in &cf_acts {
        dist.push(embedding_distance_grad(&f_act.p, &a.p)?);
    }
    // d(causal)/d(distance) per used counterfactual.
    let mut d_dist = vec![0.0; cf_acts.len()];
    let causal = match &draw.causal {
        CausalDraw::None => 0.0,
        CausalDraw::Ranking(pairs) => {
            if pairs.is_empty() {
                0.0
            } else {
                let n = pairs.len() as f64;
                let mut total = 0.0;
                for &(i, j) in pairs {
                    let (si, sj) = (slot(i), slot(j));
                    let (l, gi, gj) = ranking_loss_grad(dist[si].0, dist[sj].0, loss.margin);
                    total += l / n;
                    d_dist[si] += gi / n;
                    d_dist[sj] += gj / n;
                }
                total
            }
        }
        CausalDraw::Contrast(p, negs) => {
            let neg_d: Vec<f64> = negs.iter().map(|&k| dist[slot(k)].0).collect();
            let (l, g0, gk) = contrastive_loss_grad(dist[slot(*p)].0, &neg_d, loss.tau);
            d_dist[slot(*p)] += g0;
            for (&k, g) in negs.iter().zip(gk) {
                d_dist[slot(k)] += g;
            }
            l
        }
    };

    if let Some(grad) = grad {
        let mut d_pf = vec![0.0; f_act.p.len()];
        for (s, (_, a)) in cf_acts.iter().enumerate() {
            let w = loss.alpha * d_dist[s];
            if w == 0.0 {
                continue;
            }
            let (_, ga, gb) = &dist[s];
            d_pf.iter_mut().zip(ga).for_each(|(d, g)| *d += w * g);
            let d_pc: Vec<f64> = gb.iter().map(|g| w * g).collect();
            model.backward(a, None, Some(&d_pc), grad);
        }
        let any_p = d_pf.iter().any(|&v| v != 0.0);
        match &factual_act {
            Some(fa) => {
                model.backward(&act, Some(&d_off), None, grad);
                if any_p {
                    model.backward(fa, None, Some(&d_pf), grad);
                }
            }
            None => model.backward(&act, Some(&d_off), any_p.then_some(d_pf.as_slice()), grad),
        }
    }
    Ok(LossTerms {
        task,
        causal,
        total: task + loss.alpha * causal,
    })
}

/// Mean loss over `batch` with its gradient, reduced in batch order.
pub fn batch_loss(
    model: &ToyModel,
    samples: &[SceneSample],
    batch: &[(usize, SceneDraw)],
    loss: &LossConfig,
) -> Result<(LossTerms, Vec<f64>), LearnError> {
    let parts = batch
        .par_iter()
        .map(|(i, draw)| {
            let mut g = vec![0.0; model.params.len()];
            let terms = scene_loss(model, &samples[*i], draw, loss, Some(&mut g))?;
            Ok((terms, g))
        })
        .collect::<Result<Vec<_>, LearnError>>()?;
    let n = batch.len().max(1) as f64;
    let mut grad = vec![0.0; model.params.len()];
    let mut terms = LossTerms::default();
    for (t, g) in parts {
        terms.task += t.task / n;
        terms.causal += t.causal / n;
        terms.total += t.total / n;
        grad.iter_mut().zip(g).for_each(|(a, b)| *a += b / n);
    }
    Ok((terms, grad))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpochLog {
    pub epoch: usize,
    pub task_loss: f64,
    pub causal_loss: f64,
    pub ade: f64,
    pub ace: f64,
}

pub fn log_csv(log: &[EpochLog]) -> String {
    let mut s = String::from("epoch,task_loss,causal_loss,ade,ace\n");
    for e in log {
        let _ = writeln!(s, "{},{},{},{},{}", e.epoch, e.task_loss, e.causal_loss, e.ade, e.ace);
    }
    s
}

/// Train from a fresh initialisation. `epochs = 0` returns the initial model.
pub fn train_toy(samples: &[SceneSample], config: &TrainConfig) -> Result<(ToyModel, Vec<EpochLog>), LearnError> {
    config.validate()?;
    if samples.is_empty() {
        return Err(LearnError::InvalidData("no training scenes".into()));
    }
    let norm = Normalizer::fit(samples.iter().map(|s| &s.factual));
    let mut model = ToyModel::init(mix(&[config.seed, 0x1417]), norm);
    let mut log = Vec::with_capacity(config.epochs);
    for epoch in 0..config.epochs {
        let mut order: Vec<usize> = (0..samples.len()).collect();
        order.shuffle(&mut ChaCha8Rng::seed_from_u64(mix(&[config.seed, epoch as u64])));
        let (mut task, mut causal) = (0.0, 0.0);
        for (b, chunk) in order.chunks(config.batch_size).enumerate() {
            let batch: Vec<(usize, SceneDraw)> = chunk
                .iter()
                .map(|&i| {
                    let mut rng = ChaCha8Rng::seed_from_u64(mix(&[config.seed, epoch as u64, i as u64, 1]));
                    (i, draw_scene(&samples[i], config, &mut rng))
                })
                .collect();
            let (terms, mut grad) = batch_loss(&model, samples, &batch, &config.loss)?;
            if !terms.total.is_finite() || grad.iter().any(|g| !g.is_finite()) {
                return Err(LearnError::DivergedLoss { epoch, batch: b });
            }
            let norm = grad.iter().map(|g| g * g).sum::<f64>().sqrt();
            if norm > config.clip_norm {
                let s = config.clip_norm / norm;
                grad.iter_mut().for_each(|g| *g *= s);
            }
            model.params.iter_mut().zip(&grad).for_each(|(p, g)| *p -= config.learning_rate * g);
            task += terms.task * chunk.len() as f64;
            causal += terms.causal * chunk.len() as f64;
        }
        if !model.is_finite() {
            return Err(LearnError::DivergedLoss { epoch, batch: 0 });
        }
        let summary = quick_eval(&Predictor::Toy(model.clone()), samples);
        log.push(EpochLog {
            epoch: epoch + 1,
            task_loss: task / samples.len() as f64,
            causal_loss: causal / samples.len() as f64,
            ade: summary.0,
            ace: summary.1,
        });
    }
    Ok((model, log))
}

/// Mean ADE and mean per-scene ACE without building prediction files.
fn quick_eval(predictor: &Predictor, samples: &[SceneSample]) -> (f64, f64) {
    let rows: Vec<(f64, f64)> = samples
        .par_iter()
        .map(|s| {
            let f = predictor.predict(&s.factual);
            let ade = metrics::ade(&f, &s.future).unwrap_or(f64::NAN);
            let k = s.counterfactuals.len().max(1) as f64;
            let ace = s
                .counterfactuals
                .iter()
                .map(|c| (metrics::ade(&f, &predictor.predict(&c.encoded)).unwrap_or(f64::NAN) - c.effect).abs())
                .sum::<f64>()
                / k;
            (ade, ace)
        })
        .collect();
    let n = rows.len().max(1) as f64;
    (rows.iter().map(|r| r.0).sum::<f64>() / n, rows.iter().map(|r| r.1).sum::<f64>() / n)
}

/// Anything that maps an encoded world to an ego future.
#[derive(Debug, Clone, PartialEq)]
pub enum Predictor {
    ConstantVelocity,
    Toy(ToyModel),
}

impl Predictor {
    pub fn predict(&self, encoded: &Encoded) -> Vec<DVec2> {
        match self {
            Predictor::ConstantVelocity => encoded.cv.iter().map(|c| encoded.frame.to_world(*c)).collect(),
            Predictor::Toy(m) => m.predict(encoded),
        }
    }

    pub fn embedding(&self, encoded: &Encoded) -> Option<Vec<f64>> {
        match self {
            Predictor::ConstantVelocity => None,
            Predictor::Toy(m) => Some(m.activations(encoded).p),
        }
    }
}

/// Factual and every singleton counterfactual, plus the world without any
/// non-causal neighbour when `with_noncausal`.
pub fn predict_scene(predictor: &Predictor, sample: &SceneSample, with_noncausal: bool) -> PredictionSet {
    let mut set = PredictionSet::new(sample.scene_id.clone());
    set.entries.insert(RemovalKey::Factual, predictor.predict(&sample.factual));
    for c in &sample.counterfactuals {
        set.entries.insert(RemovalKey::Agent(c.agent_id), predictor.predict(&c.encoded));
    }
    if with_noncausal {
        set.entries.insert(RemovalKey::NonCausal, predictor.predict(&sample.noncausal));
    }
    set
}

pub fn predict_all(predictor: &Predictor, samples: &[SceneSample], with_noncausal: bool) -> Vec<PredictionSet> {
    samples.par_iter().map(|s| predict_scene(predictor, s, with_noncausal)).collect()
}

/// Metrics report of a predictor over prepared scenes of `records`.
pub fn evaluate_predictor(predictor: &Predictor, records: &[SceneRecord], samples: &[SceneSample]) -> Result<MetricsReport, LearnError> {
    let preds = predict_all(predictor, samples, true);
    let (report, _) = metrics::evaluate(records, &preds).map_err(|e| LearnError::InvalidData(e.to_string()))?;
    Ok(report)
}

/// How well embedding distances track true effects.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EmbeddingAlignment {
    /// Spearman rank correlation of distance against effect over all neighbours.
    pub spearman: f64,
    /// Among same-scene pairs with effect_i + gap < effect_j, the fraction with d_i < d_j.
    pub ordered_fraction: f64,
    pub pairs: usize,
}

pub fn embedding_alignment(model: &ToyModel, samples: &[SceneSample], gap: f64) -> Result<EmbeddingAlignment, LearnError> {
    let per_scene = samples
        .par_iter()
        .map(|s| {
            let pf = model.activations(&s.factual).p;
            s.counterfactuals
                .iter()
                .map(|c| Ok((super::loss::embedding_distance(&pf, &model.activations(&c.encoded).p)?, c.effect)))
                .collect::<Result<Vec<(f64, f64)>, LearnError>>()
        })
        .collect::<Result<Vec<_>, _>>()?;
    let (mut ordered, mut pairs) = (0usize, 0usize);
    for scene in &per_scene {
        for a in scene {
            for b in scene {
                if a.1 + gap < b.1 {
                    pairs += 1;
                    ordered += (a.0 < b.0) as usize;
                }
            }
        }
    }
    let all: Vec<(f64, f64)> = per_scene.into_iter().flatten().collect();
    let d: Vec<f64> = all.iter().map(|x| x.0).collect();
    let e: Vec<f64> = all.iter().map(|x| x.1).collect();
    Ok(EmbeddingAlignment {
        spearman: spearman(&d, &e),
        ordered_fraction: if pairs == 0 { 0.0 } else { ordered as f64 / pairs as f64 },
        pairs,
    })
}

/// Average ranks, ties sharing the mean rank.
pub fn ranks(v: &[f64]) -> Vec<f64> {
    let mut idx: Vec<usize> = (0..v.len()).collect();
    idx.sort_by(|&a, &b| v[a].total_cmp(&v[b]));
    let mut r = vec![0.0; v.len()];
    let mut i = 0;
    while i < idx.len() {
        let mut j = i;
        while j + 1 < idx.len() && v[idx[j + 1]] == v[idx[i]] {
            j += 1;
        }
        let mean = (i + j) as f64 / 2.0 + 1.0;
        for &k in &idx[i..=j] {
            r[k] = mean;
        }
        i = j + 1;
    }
    r
}

pub fn spearman(a: &[f64], b: &[f64]) -> f64 {
    let (ra, rb) = (ranks(a), ranks(b));
    let n = ra.len() as f64;
    if n < 2.0 {
        return 0.0;
    }
    let (ma, mb) = (ra.iter().sum::<f64>() / n, rb.iter().sum::<f64>() / n);
    let cov: f64 = ra.iter().zip(&rb).map(|(x, y)| (x - ma) * (y - mb)).sum();
    let va: f64 = ra.iter().map(|x| (x - ma).powi(2)).sum();
    let vb: f64 = rb.iter().map(|y| (y - mb).powi(2)).sum();
    if va == 0.0 || vb == 0.0 {
        0.0
    } else {
        cov / (va * vb).sqrt()
    }
}
