use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::budget::normalize_budget;
use crate::error::{Error, Result};
use crate::lightfield::{relight, LightField, ScenePair};
use crate::scorer::Scorer;

/// Settings for [`optimize_blackbox`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct BlackboxConfig {
    pub iterations: usize,
    /// Side of the perturbation blocks in pixels.
    pub block_size: usize,
    /// Magnitude added to or removed from each selected block.
    pub perturbation: f32,
    /// Chance that a block takes part in a given perturbation.
    pub block_prob: f64,
    pub epsilon: f64,
    pub seed: u64,
}

impl Default for BlackboxConfig {
    fn default() -> Self {
        Self {
            iterations: 200,
            block_size: 8,
            perturbation: 0.1,
            block_prob: 0.5,
            epsilon: 1e-6,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BlackboxOutcome {
    pub field: LightField,
    pub score: f64,
    pub initial_score: f64,
    /// `(iteration, score)` for every accepted move.
    pub accepted: Vec<(usize, f64)>,
    pub evaluations: usize,
}

fn evaluate(pair: &ScenePair, scorer: &mut dyn Scorer, m: &LightField) -> Result<f64> {
    let total = scorer.evaluate(&relight(pair, m)?, pair.annotations(), false)?.total;
    if !total.is_finite() {
        return Err(Error::Numerical(format!("scorer {} returned {total}", scorer.name())));
    }
    Ok(total)
}

/// Blockwise simultaneous perturbation search.
///
/// Each iteration draws a random signed pattern over blocks, scores
/// `M + cΔ` and `M - cΔ` (both renormalized to `eta`) and keeps the better
/// one if it beats the current score.
pub fn optimize_blackbox(
    pair: &ScenePair,
    scorer: &mut dyn Scorer,
    eta: f64,
    cfg: &BlackboxConfig,
) -> Result<BlackboxOutcome> {
    if cfg.block_size == 0 {
        return Err(Error::Config("block size must be positive".into()));
    }
    if !(cfg.perturbation > 0.0 && cfg.perturbation <= 1.0) {
        return Err(Error::Config(format!("perturbation {} outside (0, 1]", cfg.perturbation)));
    }
    if !(cfg.block_prob > 0.0 && cfg.block_prob <= 1.0) {
        return Err(Error::Config(format!("block probability {} outside (0, 1]", cfg.block_prob)));
    }
    let (h, w) = pair.dims();
    let bs = cfg.block_size;
    let (bh, bw) = (h.div_ceil(bs), w.div_ceil(bs));
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);

    let mut field = normalize_budget(&LightField::constant(h, w, eta.min(1.0) as f32)?, eta, cfg.epsilon)?.field;
    let initial_score = evaluate(pair, scorer, &field)?;
    let mut score = initial_score;
    let mut evaluations = 1;
    let mut accepted = Vec::new();
    let mut signs = vec![0.0f32; bh * bw];
    for it in 0..cfg.iterations {
        for s in signs.iter_mut() {
            *s = if rng.random_bool(cfg.block_prob) {
                if rng.random_bool(0.5) { 1.0 } else { -1.0 }
            } else {
                0.0
            };
        }
        if signs.iter().all(|&s| s == 0.0) {
            let i = rng.random_range(0..signs.len());
            signs[i] = if rng.random_bool(0.5) { 1.0 } else { -1.0 };
        }
        let mut best: Option<(f64, LightField)> = None;
        for dir in [1.0f32, -1.0] {
            let c = dir * cfg.perturbation;
            let moved = LightField::from_fn(h, w, |y, x| {
                field.get(y, x) + c * signs[(y / bs) * bw + x / bs]
            });
            let candidate = normalize_budget(&moved, eta, cfg.epsilon)?.field;
            let s = evaluate(pair, scorer, &candidate)?;
            evaluations += 1;
            if best.as_ref().is_none_or(|(b, _)| s > *b) {
                best = Some((s, candidate));
            }
        }
        if let Some((s, candidate)) = best {
            if s > score {
                score = s;
                field = candidate;
                accepted.push((it, s));
            }
        }
    }
    log::debug!("blackbox search: {initial_score:.6} -> {score:.6}, {} accepted", accepted.len());
    Ok(BlackboxOutcome {
        field,
        score,
        initial_score,
        accepted,
        evaluations,
    })
}
