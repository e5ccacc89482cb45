//! Accuracy (ADE/FDE) and causal-awareness (ACE) scores, the non-causal
//! robustness gap, and the joint non-causal removal curve.

use std::collections::HashMap;
use std::fmt::Write as _;

use glam::DVec2;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::counterfactual::{joint_removal_effect, Category, CausalAnnotation, CounterfactualConfig, CounterfactualError, SubsetSelection};
use crate::dataset::{PredictionSet, RemovalKey};
use crate::scenario::SceneRecord;
use crate::sim;

#[derive(Debug, thiserror::Error)]
pub enum MetricsError {
    #[error("trajectory lengths differ: {left} vs {right}")]
    LengthMismatch { left: usize, right: usize },
    #[error("empty trajectory")]
    Empty,
    #[error("scene {scene_id}: no prediction for the world without agent {agent}")]
    MissingCounterfactual { scene_id: String, agent: usize },
    #[error("scene {0}: no non-causal-removed prediction")]
    MissingPair(String),
    #[error("scene {0}: no predictions")]
    MissingScene(String),
    #[error(transparent)]
    Counterfactual(#[from] CounterfactualError),
}

fn check(pred: &[DVec2], truth: &[DVec2]) -> Result<(), MetricsError> {
    if pred.len() != truth.len() {
        return Err(MetricsError::LengthMismatch {
            left: pred.len(),
            right: truth.len(),
        });
    }
    if pred.is_empty() {
        return Err(MetricsError::Empty);
    }
    Ok(())
}

/// Mean point-wise Euclidean distance.
pub fn ade(pred: &[DVec2], truth: &[DVec2]) -> Result<f64, MetricsError> {
    check(pred, truth)?;
    Ok(pred.iter().zip(truth).map(|(p, t)| p.distance(*t)).sum::<f64>() / pred.len() as f64)
}

/// Distance at the last step.
pub fn fde(pred: &[DVec2], truth: &[DVec2]) -> Result<f64, MetricsError> {
    check(pred, truth)?;
    Ok(pred[pred.len() - 1].distance(truth[truth.len() - 1]))
}

/// Agents an ACE aggregate ranges over: every annotated neighbour, or only
/// those of one category.
pub fn in_scope(a: &CausalAnnotation, filter: Option<Category>) -> bool {
    filter.is_none_or(|c| a.category == c)
}

/// Mean |estimated effect - true effect| over the agents in scope, or `None`
/// when no agent is in scope.
pub fn ace(predictions: &PredictionSet, annotations: &[CausalAnnotation], filter: Option<Category>) -> Result<Option<f64>, MetricsError> {
    let factual = predictions
        .factual()
        .ok_or_else(|| MetricsError::MissingScene(predictions.scene_id.clone()))?;
    let mut total = 0.0;
    let mut count = 0usize;
    for a in annotations.iter().filter(|a| in_scope(a, filter)) {
        let cf = predictions
            .get(RemovalKey::Agent(a.agent_id))
            .ok_or_else(|| MetricsError::MissingCounterfactual {
                scene_id: predictions.scene_id.clone(),
                agent: a.agent_id,
            })?;
        total += (ade(factual, cf)? - a.effect).abs();
        count += 1;
    }
    Ok((count > 0).then(|| total / count as f64))
}

/// Signed robustness gap: error with all non-causal agents removed minus the
/// factual error.
pub fn delta_noncausal(
    pred_factual: &[DVec2],
    truth_factual: &[DVec2],
    pred_removed: &[DVec2],
    truth_removed: &[DVec2],
) -> Result<f64, MetricsError> {
    Ok(ade(pred_removed, truth_removed)? - ade(pred_factual, truth_factual)?)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct JointPoint {
    pub k: usize,
    pub mean_effect: f64,
    pub fraction_above_eta: f64,
    /// Scenes with at least `k` non-causal agents.
    pub scenes: usize,
    pub skipped: usize,
}

/// Joint removal effect of `k` non-causal agents for every scene and every
/// `k`; `None` where a scene has fewer than `k` of them.
pub fn joint_effects(
    records: &[SceneRecord],
    ks: &[usize],
    config: &CounterfactualConfig,
    selection: SubsetSelection,
) -> Result<Vec<Vec<Option<f64>>>, MetricsError> {
    records
        .par_iter()
        .map(|r| {
            let cfg = CounterfactualConfig { sim: r.config, ..*config };
            let available = r.count(Category::NonCausal);
            let factual = if ks.iter().any(|&k| k > 0 && k <= available) {
                Some(sim::rollout(&r.scene, &r.config).map_err(CounterfactualError::from)?)
            } else {
                None
            };
            ks.iter()
                .map(|&k| {
                    if k > available {
                        return Ok(None);
                    }
                    let e = joint_removal_effect(&r.scene, &r.annotations, k, selection, &cfg, factual.as_ref())?;
                    Ok(Some(e))
                })
                .collect()
        })
        .collect()
}

/// Aggregate per-scene joint effects (as from [`joint_effects`]) for each k.
pub fn joint_curve_from(ks: &[usize], effects: &[Vec<Option<f64>>], eta: f64) -> Vec<JointPoint> {
    ks.iter()
        .enumerate()
        .map(|(col, &k)| {
            let values: Vec<f64> = effects.iter().filter_map(|row| row[col]).collect();
            let n = values.len();
            let (mean_effect, fraction_above_eta) = if n == 0 || k == 0 {
                (0.0, 0.0)
            } else {
                (
                    values.iter().sum::<f64>() / n as f64,
                    values.iter().filter(|&&e| e > eta).count() as f64 / n as f64,
                )
            };
            JointPoint {
                k,
                mean_effect,
                fraction_above_eta,
                scenes: n,
                skipped: effects.len() - n,
            }
        })
        .collect()
}

pub fn joint_curve(
    records: &[SceneRecord],
    ks: &[usize],
    config: &CounterfactualConfig,
    selection: SubsetSelection,
) -> Result<Vec<JointPoint>, MetricsError> {
    let effects = joint_effects(records, ks, config, selection)?;
    Ok(joint_curve_from(ks, &effects, config.thresholds.eta))
}

/// Scores for one scene; ACE fields are `None` when nothing is in scope.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SceneMetrics {
    pub scene_id: String,
    pub ade: f64,
    pub fde: f64,
    pub ace: Option<f64>,
    pub ace_nc: Option<f64>,
    pub ace_dc: Option<f64>,
    pub ace_ic: Option<f64>,
    pub delta: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct MetricsReport {
    pub num_scenes: usize,
    pub ade: f64,
    pub fde: f64,
    pub ace: Option<f64>,
    pub ace_nc: Option<f64>,
    pub ace_dc: Option<f64>,
    pub ace_ic: Option<f64>,
    pub delta: Option<f64>,
    pub delta_abs: Option<f64>,
    /// Mean ground-truth effect over all annotated agents, averaged per scene first.
    pub mean_true_effect: f64,
    pub joint_curve: Vec<JointPoint>,
}

fn mean_of(values: impl Iterator<Item = Option<f64>>) -> Option<f64> {
    let (sum, n) = values.flatten().fold((0.0, 0usize), |(s, n), v| (s + v, n + 1));
    (n > 0).then(|| sum / n as f64)
}

pub fn scene_metrics(record: &SceneRecord, set: &PredictionSet, with_ace: bool, with_delta: bool) -> Result<SceneMetrics, MetricsError> {
    let factual = set.factual().ok_or_else(|| MetricsError::MissingScene(record.scene_id.clone()))?;
    let truth = record.ego_future();
    let ace_for = |filter| {
        if with_ace {
            ace(set, &record.annotations, filter)
        } else {
            Ok(None)
        }
    };
    let delta = if with_delta {
        let removed = set
            .get(RemovalKey::NonCausal)
            .ok_or_else(|| MetricsError::MissingPair(record.scene_id.clone()))?;
        Some(delta_noncausal(factual, truth, removed, &record.noncausal_future)?)
    } else {
        None
    };
    Ok(SceneMetrics {
        scene_id: record.scene_id.clone(),
        ade: ade(factual, truth)?,
        fde: fde(factual, truth)?,
        ace: ace_for(None)?,
        ace_nc: ace_for(Some(Category::NonCausal))?,
        ace_dc: ace_for(Some(Category::DirectCausal))?,
        ace_ic: ace_for(Some(Category::IndirectCausal))?,
        delta,
    })
}

/// Score `predictions` against every record. ACE is reported when any set
/// carries counterfactual entries, and then every set must carry all of
/// them; likewise Δ for the non-causal-removed entry.
pub fn evaluate(records: &[SceneRecord], predictions: &[PredictionSet]) -> Result<(MetricsReport, Vec<SceneMetrics>), MetricsError> {
    let by_id: HashMap<&str, &PredictionSet> = predictions.iter().map(|p| (p.scene_id.as_str(), p)).collect();
    let with_ace = predictions
        .iter()
        .any(|p| p.entries.keys().any(|k| matches!(k, RemovalKey::Agent(_))));
    let with_delta = predictions.iter().any(|p| p.get(RemovalKey::NonCausal).is_some());
    let rows = records
        .par_iter()
        .map(|r| {
            let set = by_id
                .get(r.scene_id.as_str())
                .ok_or_else(|| MetricsError::MissingScene(r.scene_id.clone()))?;
            scene_metrics(r, set, with_ace, with_delta)
        })
        .collect::<Result<Vec<_>, _>>()?;
    let n = rows.len().max(1) as f64;
    let report = MetricsReport {
        num_scenes: rows.len(),
        ade: rows.iter().map(|m| m.ade).sum::<f64>() / n,
        fde: rows.iter().map(|m| m.fde).sum::<f64>() / n,
        ace: mean_of(rows.iter().map(|m| m.ace)),
        ace_nc: mean_of(rows.iter().map(|m| m.ace_nc)),
        ace_dc: mean_of(rows.iter().map(|m| m.ace_dc)),
        ace_ic: mean_of(rows.iter().map(|m| m.ace_ic)),
        delta: mean_of(rows.iter().map(|m| m.delta)),
        delta_abs: mean_of(rows.iter().map(|m| m.delta.map(f64::abs))),
        mean_true_effect: mean_of(records.iter().map(|r| {
            let k = r.annotations.len();
            (k > 0).then(|| r.annotations.iter().map(|a| a.effect).sum::<f64>() / k as f64)
        }))
        .unwrap_or(0.0),
        joint_curve: Vec::new(),
    };
    Ok((report, rows))
}

fn opt(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

fn opt_text(v: Option<f64>) -> String {
    v.map(|x| format!("{x:.6}")).unwrap_or_else(|| "n/a".into())
}

impl MetricsReport {
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "scenes            {}", self.num_scenes);
        let _ = writeln!(s, "ade               {:.6}", self.ade);
        let _ = writeln!(s, "fde               {:.6}", self.fde);
        let _ = writeln!(s, "ace               {}", opt_text(self.ace));
        let _ = writeln!(s, "ace_nc            {}", opt_text(self.ace_nc));
        let _ = writeln!(s, "ace_dc            {}", opt_text(self.ace_dc));
        let _ = writeln!(s, "ace_ic            {}", opt_text(self.ace_ic));
        let _ = writeln!(s, "delta             {}", opt_text(self.delta));
        let _ = writeln!(s, "delta_abs         {}", opt_text(self.delta_abs));
        let _ = writeln!(s, "mean_true_effect  {:.6}", self.mean_true_effect);
        for p in &self.joint_curve {
            let _ = writeln!(
                s,
                "joint k={} mean={:.6} frac_above_eta={:.4} scenes={} skipped={}",
                p.k, p.mean_effect, p.fraction_above_eta, p.scenes, p.skipped
            );
        }
        s
    }
}

pub const SCENE_CSV_HEADER: &str = "scene_id,ade,fde,ace,ace_nc,ace_dc,ace_ic,delta";

/// Per-scene CSV with a closing `mean` row. Floats use shortest round-trip
/// formatting; empty cells mean "not applicable".
pub fn scenes_csv(rows: &[SceneMetrics], report: &MetricsReport) -> String {
    let mut s = String::from(SCENE_CSV_HEADER);
    s.push('\n');
    for m in rows {
        let _ = writeln!(
            s,
            "{},{},{},{},{},{},{},{}",
            m.scene_id,
            m.ade,
            m.fde,
            opt(m.ace),
            opt(m.ace_nc),
            opt(m.ace_dc),
            opt(m.ace_ic),
            opt(m.delta)
        );
    }
    let _ = writeln!(
        s,
        "mean,{},{},{},{},{},{},{}",
        report.ade,
        report.fde,
        opt(report.ace),
        opt(report.ace_nc),
        opt(report.ace_dc),
        opt(report.ace_ic),
        opt(report.delta)
    );
    s
}

pub fn joint_csv(points: &[JointPoint]) -> String {
    let mut s = String::from("k,mean_effect,fraction_above_eta,scenes,skipped\n");
    for p in points {
        let _ = writeln!(s, "{},{},{},{},{}", p.k, p.mean_effect, p.fraction_above_eta, p.scenes, p.skipped);
    }
    s
}

/// Line chart of mean joint effect (solid) and fraction above eta (dashed) against k.
pub fn joint_svg(points: &[JointPoint], eta: f64) -> String {
    let (w, h, pad) = (480.0, 320.0, 48.0);
    let k_max = points.iter().map(|p| p.k).max().unwrap_or(1).max(1) as f64;
    let y_max = points.iter().map(|p| p.mean_effect).fold(eta * 1.5, f64::max).max(1.0);
    let x = |k: usize| pad + (w - 2.0 * pad) * k as f64 / k_max;
    let y = |v: f64| h - pad - (h - 2.0 * pad) * v / y_max;
    let path = |f: &dyn Fn(&JointPoint) -> f64| {
        points
            .iter()
            .map(|p| format!("{:.2},{:.2}", x(p.k), y(f(p))))
            .collect::<Vec<_>>()
            .join(" ")
    };
    let mut s = String::new();
    let _ = writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{w}" height="{h}" viewBox="0 0 {w} {h}">"#
    );
    let _ = writeln!(s, r#"<rect width="100%" height="100%" fill="white"/>"#);
    let _ = writeln!(
        s,
        r#"<line x1="{pad}" y1="{b}" x2="{r}" y2="{b}" stroke="black"/><line x1="{pad}" y1="{pad}" x2="{pad}" y2="{b}" stroke="black"/>"#,
        b = h - pad,
        r = w - pad
    );
    let _ = writeln!(
        s,
        r##"<line x1="{pad}" y1="{e:.2}" x2="{r}" y2="{e:.2}" stroke="#999" stroke-dasharray="2,3"/>"##,
        e = y(eta),
        r = w - pad
    );
    let _ = writeln!(
        s,
        r##"<polyline fill="none" stroke="#1f77b4" stroke-width="2" points="{}"/>"##,
        path(&|p| p.mean_effect)
    );
    let _ = writeln!(
        s,
        r##"<polyline fill="none" stroke="#d62728" stroke-width="2" stroke-dasharray="6,4" points="{}"/>"##,
        path(&|p| p.fraction_above_eta)
    );
    for p in points {
        let _ = writeln!(
            s,
            r#"<text x="{:.2}" y="{}" font-size="12" text-anchor="middle">{}</text>"#,
            x(p.k),
            h - pad + 16.0,
            p.k
        );
    }
    let _ = writeln!(
        s,
        r#"<text x="{}" y="{}" font-size="12" text-anchor="middle">non-causal agents removed (k)</text>"#,
        w / 2.0,
        h - 8.0
    );
    let _ = writeln!(
        s,
        r#"<text x="12" y="{}" font-size="12" transform="rotate(-90 12 {})" text-anchor="middle">mean effect (m) / fraction &gt; eta</text>"#,
        h / 2.0,
        h / 2.0
    );
    let _ = writeln!(s, r#"<text x="{pad}" y="20" font-size="12">max {y_max:.3}</text>"#);
    s.push_str("</svg>\n");
    s
}
