//! Central finite-difference check of the analytic training gradients on
//! synthetic scenes.

use glam::DVec2;
use rand::Rng;
use rand_distr::{Distribution, Normal};

use super::features::{encode, Encoded, Normalizer, HISTORY};
use super::loss::LossConfig;
use super::model::ToyModel;
use super::train::{batch_loss, CounterfactualSample, SceneDraw, SceneSample};
use super::LearnError;
use crate::counterfactual::Category;

fn history(rng: &mut impl Rng, start: DVec2) -> Vec<DVec2> {
    let v = DVec2::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)) * 0.5;
    (0..HISTORY)
        .map(|t| start + v * t as f64 + DVec2::new(rng.random_range(-0.05..0.05), rng.random_range(-0.05..0.05)))
        .collect()
}

fn world(rng: &mut impl Rng, n: usize) -> Encoded {
    let ego = history(rng, DVec2::ZERO);
    let others: Vec<Vec<DVec2>> = (0..n)
        .map(|_| {
            let s = DVec2::new(rng.random_range(-4.0..4.0), rng.random_range(-4.0..4.0));
            history(rng, s)
        })
        .collect();
    let refs: Vec<&[DVec2]> = others.iter().map(Vec::as_slice).collect();
    encode(&ego, &refs).unwrap()
}

/// Ego future roughly continuing its history, world coordinates.
fn continuation(rng: &mut impl Rng, e: &Encoded) -> Vec<DVec2> {
    e.cv.iter()
        .map(|c| {
            e.frame
                .to_world(*c + DVec2::new(rng.random_range(-0.2..0.2), rng.random_range(-0.2..0.2)))
        })
        .collect()
}

/// Synthetic scene with `k` neighbours and random effects.
pub fn synthetic(rng: &mut impl Rng, k: usize) -> SceneSample {
    let factual = world(rng, k);
    let future = continuation(rng, &factual);
    let cats = [
        Category::NonCausal,
        Category::DirectCausal,
        Category::IndirectCausal,
        Category::Ambiguous,
    ];
    let counterfactuals = (0..k)
        .map(|i| {
            let category = cats[i % 4];
            let effect = match category {
                Category::NonCausal => rng.random_range(0.0..0.02),
                Category::Ambiguous => rng.random_range(0.02..0.1),
                _ => rng.random_range(0.11..1.0),
            };
            let cf = world(rng, k - 1);
            let future = continuation(rng, &cf);
            CounterfactualSample {
                agent_id: i + 1,
                effect,
                category,
                encoded: cf,
                future,
            }
        })
        .collect();
    SceneSample {
        scene_id: "synthetic".into(),
        noncausal: factual.clone(),
        factual,
        future,
        counterfactuals,
    }
}

pub fn random_model(rng: &mut impl Rng, samples: &[SceneSample]) -> ToyModel {
    let worlds = samples
        .iter()
        .flat_map(|s| std::iter::once(&s.factual).chain(s.counterfactuals.iter().map(|c| &c.encoded)));
    let mut m = ToyModel::init(rng.random(), Normalizer::fit(worlds));
    let noise = Normal::new(0.0, 0.05).unwrap();
    m.params.iter_mut().for_each(|p| *p += noise.sample(rng));
    m
}

/// Largest |analytic - fd| / (|fd| + 1e-8) over the parameter indices given.
pub fn max_relative_error(
    model: &ToyModel,
    samples: &[SceneSample],
    batch: &[(usize, SceneDraw)],
    loss: &LossConfig,
    indices: impl Iterator<Item = usize>,
) -> Result<f64, LearnError> {
    let (_, grad) = batch_loss(model, samples, batch, loss)?;
    let h = 1e-5;
    let mut worst: f64 = 0.0;
    let mut m = model.clone();
    for i in indices {
        let orig = m.params[i];
        m.params[i] = orig + h;
        let up = batch_loss(&m, samples, batch, loss)?.0;
        m.params[i] = orig - h;
        let down = batch_loss(&m, samples, batch, loss)?.0;
        m.params[i] = orig;
        // Terms differenced separately so a large causal value does not
        // swamp small task gradients in roundoff.
        let fd = ((up.task - down.task) + loss.alpha * (up.causal - down.causal)) / (2.0 * h);
        let e = (grad[i] - fd).abs() / (fd.abs() + 1e-8);
        worst = worst.max(e);
    }
    Ok(worst)
}
