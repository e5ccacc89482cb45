//! Embedding distance and the causal regularisers, each with its gradient.

use serde::{Deserialize, Serialize};

use super::LearnError;

/// Norms below this are treated as zero.
pub const MIN_EMBEDDING_NORM: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossConfig {
    /// Contrastive temperature.
    pub tau: f64,
    /// Ranking margin.
    pub margin: f64,
    /// Weight of the causal term.
    pub alpha: f64,
}

impl Default for LossConfig {
    fn default() -> Self {
        Self {
            tau: 0.1,
            margin: 0.001,
            alpha: 1000.0,
        }
    }
}

impl LossConfig {
    pub fn validate(&self) -> Result<(), LearnError> {
        if !(self.tau > 0.0 && self.margin > 0.0 && self.alpha >= 0.0) || !self.alpha.is_finite() {
            return Err(LearnError::InvalidConfig("need tau > 0, margin > 0 and finite alpha >= 0".into()));
        }
        Ok(())
    }
}

/// Cosine distance `1 - cos(a, b)`, in [0, 2].
pub fn embedding_distance(a: &[f64], b: &[f64]) -> Result<f64, LearnError> {
    Ok(embedding_distance_grad(a, b)?.0)
}

/// Cosine distance with its gradients with respect to `a` and `b`.
pub fn embedding_distance_grad(a: &[f64], b: &[f64]) -> Result<(f64, Vec<f64>, Vec<f64>), LearnError> {
    if a.len() != b.len() {
        return Err(LearnError::DimensionMismatch {
            expected: a.len(),
            found: b.len(),
        });
    }
    let na = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    if !(na > MIN_EMBEDDING_NORM && nb > MIN_EMBEDDING_NORM) {
        return Err(LearnError::ZeroNormEmbedding);
    }
    let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    let cos = dot / (na * nb);
    // d(cos)/da = b / (|a||b|) - cos * a / |a|^2.
    let ga = a.iter().zip(b).map(|(x, y)| -(y / (na * nb) - cos * x / (na * na))).collect();
    let gb = a.iter().zip(b).map(|(x, y)| -(x / (na * nb) - cos * y / (nb * nb))).collect();
    Ok((1.0 - cos, ga, gb))
}

/// `-log(exp(d+/tau) / (exp(d+/tau) + sum_k exp(d_k/tau)))`.
pub fn contrastive_loss(d_positive: f64, d_negatives: &[f64], tau: f64) -> f64 {
    contrastive_loss_grad(d_positive, d_negatives, tau).0
}

/// Contrastive loss with derivatives with respect to `d_positive` and each negative.
pub fn contrastive_loss_grad(d_positive: f64, d_negatives: &[f64], tau: f64) -> (f64, f64, Vec<f64>) {
    if d_negatives.is_empty() {
        return (0.0, 0.0, Vec::new());
    }
    let l0 = d_positive / tau;
    let max = d_negatives.iter().map(|d| d / tau).fold(l0, f64::max);
    let e0 = (l0 - max).exp();
    let ek: Vec<f64> = d_negatives.iter().map(|d| (d / tau - max).exp()).collect();
    let sum = e0 + ek.iter().sum::<f64>();
    let loss = -(l0 - max) + sum.ln();
    let g0 = (e0 / sum - 1.0) / tau;
    let gk = ek.iter().map(|e| e / sum / tau).collect();
    (loss, g0, gk)
}

/// `max(0, d_i - d_j + m)` for a pair with true effects `E_i < E_j`.
pub fn ranking_loss(d_i: f64, d_j: f64, margin: f64) -> f64 {
    (d_i - d_j + margin).max(0.0)
}

/// Ranking loss with derivatives with respect to `d_i` and `d_j`.
pub fn ranking_loss_grad(d_i: f64, d_j: f64, margin: f64) -> (f64, f64, f64) {
    let v = d_i - d_j + margin;
    if v > 0.0 {
        (v, 1.0, -1.0)
    } else {
        (0.0, 0.0, 0.0)
    }
}

pub fn combined_loss(task_loss: f64, causal_loss: f64, alpha: f64) -> f64 {
    task_loss + alpha * causal_loss
}
