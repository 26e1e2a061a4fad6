use serde::{Deserialize, Serialize};

use super::budget::{cap_budget, residual_update};
use super::{Policy, PolicyDescriptor, PolicyInput, Residual};
use crate::error::{Error, Result};
use crate::lightfield::{relight, relight_gradient, LightField, ScenePair};
use crate::scorer::Scorer;

/// Settings for [`optimize_gradient`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GradientConfig {
    pub steps: usize,
    /// Largest per-pixel change of one step.
    pub step_size: f64,
    /// Stop once halving drives the step below this.
    pub min_step: f64,
    pub epsilon: f64,
}

impl Default for GradientConfig {
    fn default() -> Self {
        Self {
            steps: 100,
            step_size: 0.5,
            min_step: 1e-3,
            epsilon: 1e-6,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GradientOutcome {
    pub field: LightField,
    pub score: f64,
    pub initial_score: f64,
    /// Score after every accepted step.
    pub accepted: Vec<f64>,
}

/// `d score / d M` at `m`, with the score.
fn field_gradient(pair: &ScenePair, scorer: &mut dyn Scorer, m: &LightField) -> Result<(f64, Vec<f32>)> {
    let image = relight(pair, m)?;
    let ev = scorer.evaluate(&image, pair.annotations(), true)?;
    let g = ev
        .gradient
        .ok_or_else(|| Error::Config(format!("scorer {} returned no gradient", scorer.name())))?;
    let gm = relight_gradient(pair, &g)?;
    if gm.iter().any(|v| !v.is_finite()) || !ev.total.is_finite() {
        return Err(Error::Numerical(format!("non-finite gradient from scorer {}", scorer.name())));
    }
    Ok((ev.total, gm))
}

/// Step of at most `step` per pixel along `g`, scaled by its largest entry.
fn scaled_step(g: &[f32], step: f64) -> Option<Vec<f32>> {
    let gmax = g.iter().fold(0.0f32, |a, v| a.max(v.abs()));
    if gmax == 0.0 {
        return None;
    }
    let k = (step / gmax as f64) as f32;
    Some(g.iter().map(|v| (v * k).clamp(-1.0, 1.0)).collect())
}

/// Projected gradient ascent on `score(relight(pair, M))` from the uniform
/// field at `eta`. Every iterate is projected onto `mean(M) <= eta`; steps
/// that do not improve the score are rejected and halve the step size.
pub fn optimize_gradient(
    pair: &ScenePair,
    scorer: &mut dyn Scorer,
    eta: f64,
    cfg: &GradientConfig,
) -> Result<GradientOutcome> {
    if !scorer.differentiable() {
        return Err(Error::Config(format!("scorer {} is not differentiable", scorer.name())));
    }
    if !(eta > 0.0 && eta <= 1.0) {
        return Err(Error::Budget(format!("target mean {eta} outside (0, 1]")));
    }
    let (h, w) = pair.dims();
    let mut field = LightField::constant(h, w, eta as f32)?;
    let (initial_score, mut grad) = field_gradient(pair, scorer, &field)?;
    let mut score = initial_score;
    let mut step = cfg.step_size;
    let mut accepted = Vec::new();
    for _ in 0..cfg.steps {
        if step < cfg.min_step {
            break;
        }
        let Some(delta) = scaled_step(&grad, step) else {
            break;
        };
        let moved = residual_update(&field, &Residual::new(h, w, delta)?)?;
        let candidate = cap_budget(&moved, eta, cfg.epsilon)?;
        let (s, g) = field_gradient(pair, scorer, &candidate)?;
        if s > score {
            field = candidate;
            score = s;
            grad = g;
            accepted.push(s);
        } else {
            step *= 0.5;
        }
    }
    log::debug!("gradient ascent: {initial_score:.6} -> {score:.6} in {} accepted steps", accepted.len());
    Ok(GradientOutcome {
        field,
        score,
        initial_score,
        accepted,
    })
}

/// Closed-loop policy: one scaled gradient step on the observed image.
///
/// The gradient is taken at the observation handed in by the loop, which
/// may lag the current field.
pub struct GradientPolicy<'a> {
    pair: &'a ScenePair,
    scorer: Box<dyn Scorer>,
    step_size: f64,
}

impl<'a> GradientPolicy<'a> {
    pub fn new(pair: &'a ScenePair, scorer: Box<dyn Scorer>, step_size: f64) -> Result<Self> {
        if !scorer.differentiable() {
            return Err(Error::Config(format!("scorer {} is not differentiable", scorer.name())));
        }
        if !(step_size > 0.0 && step_size <= 1.0) {
            return Err(Error::Config(format!("step size {step_size} outside (0, 1]")));
        }
        Ok(Self {
            pair,
            scorer,
            step_size,
        })
    }
}

impl Policy for GradientPolicy<'_> {
    fn descriptor(&self) -> PolicyDescriptor {
        PolicyDescriptor {
            name: format!("gradient[{}]", self.scorer.name()),
            single_scene: true,
        }
    }

    fn propose(&mut self, input: &PolicyInput<'_>) -> Result<Residual> {
        let ev = self.scorer.evaluate(input.image, self.pair.annotations(), true)?;
        let g = ev
            .gradient
            .ok_or_else(|| Error::Policy(format!("scorer {} returned no gradient", self.scorer.name())))?;
        let gm = relight_gradient(self.pair, &g)?;
        if gm.iter().any(|v| !v.is_finite()) {
            return Err(Error::Numerical("non-finite gradient in policy".into()));
        }
        let (h, w) = input.prev_field.dims();
        match scaled_step(&gm, self.step_size) {
            Some(delta) => Residual::new(h, w, delta),
            None => Ok(Residual::zeros(h, w)),
        }
    }
}
