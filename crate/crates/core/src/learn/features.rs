//! Ego-centric scene encoding for the toy forecaster.
//!
//! Layout of the 152 raw features: the ego's 8 history positions (16 values),
//! then 8 neighbour slots of 8 positions plus a presence flag (17 values
//! each), nearest neighbour first by distance at the last observed step.

use glam::DVec2;
use serde::{Deserialize, Serialize};

use super::LearnError;

pub const HISTORY: usize = 8;
pub const FUTURE: usize = 12;
pub const MAX_NEIGHBORS: usize = 8;
pub const SLOT: usize = 2 * HISTORY + 1;
pub const INPUT_DIM: usize = 2 * HISTORY + MAX_NEIGHBORS * SLOT;
pub const OUTPUT_DIM: usize = 2 * FUTURE;

/// Whether raw feature `i` is a neighbour presence flag.
pub fn is_presence(i: usize) -> bool {
    i >= 2 * HISTORY && (i - 2 * HISTORY) % SLOT == SLOT - 1
}

/// Neighbour slot a raw feature belongs to, if any.
pub fn slot_of(i: usize) -> Option<usize> {
    (i >= 2 * HISTORY).then(|| (i - 2 * HISTORY) / SLOT)
}

/// Ego frame: origin at the last observed ego position, x along its heading.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Frame {
    pub origin: DVec2,
    /// Unit heading.
    pub axis: DVec2,
}

impl Frame {
    pub fn to_local(&self, p: DVec2) -> DVec2 {
        self.axis.rotate(p - self.origin)
    }

    /// Inverse of [`Frame::to_local`].
    pub fn to_world(&self, p: DVec2) -> DVec2 {
        DVec2::new(self.axis.x, -self.axis.y).rotate(p) + self.origin
    }

    fn local_vector(&self, v: DVec2) -> DVec2 {
        self.axis.rotate(v)
    }
}

/// One encoded scene: raw features, the frame and the constant-velocity
/// extrapolation in that frame.
#[derive(Debug, Clone, PartialEq)]
pub struct Encoded {
    pub raw: Vec<f64>,
    pub frame: Frame,
    pub cv: Vec<DVec2>,
}

/// Encode the histories of one world. `ego` and every neighbour row hold at
/// least [`HISTORY`] positions; only the first [`HISTORY`] are used.
pub fn encode(ego: &[DVec2], neighbors: &[&[DVec2]]) -> Result<Encoded, LearnError> {
    if ego.len() < HISTORY || neighbors.iter().any(|n| n.len() < HISTORY) {
        return Err(LearnError::DimensionMismatch {
            expected: HISTORY,
            found: ego.len().min(neighbors.iter().map(|n| n.len()).min().unwrap_or(HISTORY)),
        });
    }
    let last = ego[HISTORY - 1];
    let step = last - ego[HISTORY - 2];
    let axis = [step, last - ego[0]]
        .into_iter()
        .find(|d| d.length() > 1e-9)
        .map(|d| d.normalize())
        .unwrap_or(DVec2::X);
    // Rotation taking `axis` to +x.
    let frame = Frame {
        origin: last,
        axis: DVec2::new(axis.x, -axis.y),
    };

    let mut raw = vec![0.0; INPUT_DIM];
    for (t, p) in ego[..HISTORY].iter().enumerate() {
        let q = frame.to_local(*p);
        raw[2 * t] = q.x;
        raw[2 * t + 1] = q.y;
    }
    let mut order: Vec<usize> = (0..neighbors.len()).collect();
    let dist = |k: usize| neighbors[k][HISTORY - 1].distance(last);
    order.sort_by(|&a, &b| dist(a).total_cmp(&dist(b)).then(a.cmp(&b)));
    for (slot, &k) in order.iter().take(MAX_NEIGHBORS).enumerate() {
        let base = 2 * HISTORY + slot * SLOT;
        for (t, p) in neighbors[k][..HISTORY].iter().enumerate() {
            let q = frame.to_local(*p);
            raw[base + 2 * t] = q.x;
            raw[base + 2 * t + 1] = q.y;
        }
        raw[base + SLOT - 1] = 1.0;
    }

    let v = frame.local_vector(step);
    let cv = (1..=FUTURE).map(|k| v * k as f64).collect();
    Ok(Encoded { raw, frame, cv })
}

/// Per-feature standardisation fitted on present values only. Presence flags
/// pass through unchanged and absent slots encode as zeros.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Normalizer {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

impl Normalizer {
    pub fn identity() -> Self {
        Self {
            mean: vec![0.0; INPUT_DIM],
            std: vec![1.0; INPUT_DIM],
        }
    }

    pub fn fit<'a>(samples: impl IntoIterator<Item = &'a Encoded>) -> Self {
        let mut sum = vec![0.0; INPUT_DIM];
        let mut sum_sq = vec![0.0; INPUT_DIM];
        let mut count = vec![0usize; INPUT_DIM];
        for s in samples {
            for i in 0..INPUT_DIM {
                if is_presence(i) || !present(&s.raw, i) {
                    continue;
                }
                sum[i] += s.raw[i];
                sum_sq[i] += s.raw[i] * s.raw[i];
                count[i] += 1;
            }
        }
        let mut out = Self::identity();
        for i in 0..INPUT_DIM {
            if is_presence(i) || count[i] == 0 {
                continue;
            }
            let n = count[i] as f64;
            let mean = sum[i] / n;
            let var = (sum_sq[i] / n - mean * mean).max(0.0);
            out.mean[i] = mean;
            out.std[i] = if var.sqrt() > 1e-9 { var.sqrt() } else { 1.0 };
        }
        out
    }

    pub fn apply(&self, raw: &[f64]) -> Vec<f64> {
        (0..INPUT_DIM)
            .map(|i| {
                if is_presence(i) {
                    raw[i]
                } else if present(raw, i) {
                    (raw[i] - self.mean[i]) / self.std[i]
                } else {
                    0.0
                }
            })
            .collect()
    }
}

fn present(raw: &[f64], i: usize) -> bool {
    match slot_of(i) {
        None => true,
        Some(s) => raw[2 * HISTORY + s * SLOT + SLOT - 1] != 0.0,
    }
}
