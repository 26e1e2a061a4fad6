use std::fs;
use std::path::Path;

use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use serde_json::json;

use super::budget::{normalize_budget, residual_update};
use super::{CoordChannels, Policy, PolicyInput};
use crate::error::{Error, Result};
use crate::lightfield::{relight, Image, LightField, ScenePair};
use crate::scorer::{ScoreReport, Scorer};

/// Budget slack allowed on every emitted field.
const BUDGET_TOL: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RefinementConfig {
    pub n_steps: usize,
    pub k_scored: usize,
    pub epsilon: f64,
    pub latency_frames: usize,
    /// Seeds the choice of scored steps.
    pub seed: u64,
}

impl Default for RefinementConfig {
    fn default() -> Self {
        Self {
            n_steps: 40,
            k_scored: 5,
            epsilon: 1e-6,
            latency_frames: 1,
            seed: 0,
        }
    }
}

impl RefinementConfig {
    pub fn validate(&self) -> Result<()> {
        if self.k_scored < 1 || self.k_scored > self.n_steps {
            return Err(Error::Config(format!(
                "scored steps {} must lie in [1, {}]",
                self.k_scored, self.n_steps
            )));
        }
        if self.epsilon.is_nan() || self.epsilon <= 0.0 {
            return Err(Error::Config(format!("epsilon must be positive, got {}", self.epsilon)));
        }
        Ok(())
    }
}

/// Step 0 plus `k - 1` distinct steps drawn uniformly from `1..n`, sorted.
pub fn scored_steps(n: usize, k: usize, seed: u64) -> Result<Vec<usize>> {
    if k < 1 || k > n {
        return Err(Error::Config(format!("cannot score {k} of {n} steps")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut steps: Vec<usize> = sample(&mut rng, n - 1, k - 1).into_iter().map(|i| i + 1).collect();
    steps.push(0);
    steps.sort_unstable();
    Ok(steps)
}

#[derive(Debug, Clone, PartialEq)]
pub struct StepScore {
    pub total: f64,
    pub report: ScoreReport,
}

/// One unrolled step: the field in effect and the image it produced.
#[derive(Debug, Clone, PartialEq)]
pub struct Step {
    pub t: usize,
    pub field: LightField,
    pub image: Image,
    /// Whether normalizing this field clipped (always false at `t = 0`).
    pub clipped: bool,
    /// Whether the field entered normalization with a mean below epsilon.
    pub guarded: bool,
    pub score: Option<StepScore>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    pub policy: String,
    pub eta: f64,
    pub config: RefinementConfig,
    pub steps: Vec<Step>,
    /// Field after the last update, `M_N`.
    pub final_field: LightField,
    pub final_clipped: bool,
    pub final_guarded: bool,
}

impl Trajectory {
    /// `(t, total)` for every scored step.
    pub fn scores(&self) -> Vec<(usize, f64)> {
        self.steps
            .iter()
            .filter_map(|s| s.score.as_ref().map(|sc| (s.t, sc.total)))
            .collect()
    }

    /// Writes `field_TTT.lidf` and `image_TTT.lidf` per step, `field_final.lidf`
    /// and `manifest.json` into `dir`.
    pub fn dump(&self, dir: impl AsRef<Path>) -> Result<()> {
        let dir = dir.as_ref();
        fs::create_dir_all(dir)?;
        let mut steps = Vec::with_capacity(self.steps.len());
        for s in &self.steps {
            let field = format!("field_{:03}.lidf", s.t);
            let image = format!("image_{:03}.lidf", s.t);
            s.field.save(dir.join(&field))?;
            s.image.save(dir.join(&image))?;
            steps.push(json!({
                "t": s.t,
                "field": field,
                "image": image,
                "mean": s.field.mean(),
                "clipped": s.clipped,
                "guarded": s.guarded,
                "total": s.score.as_ref().map(|sc| sc.total),
                "scores": s.score.as_ref().map(|sc| &sc.report.scores),
            }));
        }
        self.final_field.save(dir.join("field_final.lidf"))?;
        let manifest = json!({
            "policy": self.policy,
            "seed": self.config.seed,
            "eta": self.eta,
            "config": self.config,
            "steps": steps,
            "final": {
                "field": "field_final.lidf",
                "mean": self.final_field.mean(),
                "clipped": self.final_clipped,
                "guarded": self.final_guarded,
            },
        });
        fs::write(dir.join("manifest.json"), serde_json::to_string_pretty(&manifest)? + "\n")?;
        Ok(())
    }
}

fn check_budget(m: &LightField, eta: f64, what: &str) -> Result<()> {
    let mean = m.mean();
    if mean > eta + BUDGET_TOL {
        return Err(Error::Budget(format!("{what} mean {mean} exceeds budget {eta}")));
    }
    Ok(())
}

/// Unrolls `policy` on one scene for `cfg.n_steps` steps starting at `init`.
///
/// The policy at step `t` observes the image from step
/// `max(t - latency_frames, 0)`. Only field and image values pass between
/// steps.
pub fn refine(
    pair: &ScenePair,
    policy: &mut dyn Policy,
    scorer: &mut dyn Scorer,
    cfg: &RefinementConfig,
    eta: f64,
    init: LightField,
) -> Result<Trajectory> {
    cfg.validate()?;
    if !(eta > 0.0 && eta <= 1.0) {
        return Err(Error::Budget(format!("target mean {eta} outside (0, 1]")));
    }
    if init.dims() != pair.dims() {
        return Err(crate::error::shape_err("refine init", init.dims(), pair.dims()));
    }
    check_budget(&init, eta, "initial field")?;
    let scored = scored_steps(cfg.n_steps, cfg.k_scored, cfg.seed)?;
    let (h, w) = pair.dims();
    let coords = CoordChannels::new(h, w);
    let name = policy.descriptor().name;

    let mut steps: Vec<Step> = Vec::with_capacity(cfg.n_steps);
    let mut field = init;
    let mut clipped = false;
    let mut guarded = false;
    for t in 0..cfg.n_steps {
        let image = relight(pair, &field)?;
        let score = if scored.binary_search(&t).is_ok() {
            let ev = scorer.evaluate(&image, pair.annotations(), false)?;
            Some(StepScore {
                total: ev.total,
                report: ev.report,
            })
        } else {
            None
        };
        steps.push(Step {
            t,
            field: field.clone(),
            image,
            clipped,
            guarded,
            score,
        });
        let observed = &steps[t.saturating_sub(cfg.latency_frames)].image;
        let delta = policy.propose(&PolicyInput {
            image: observed,
            prev_field: &field,
            coords: &coords,
        })?;
        if delta.dims() != (h, w) {
            let (dh, dw) = delta.dims();
            return Err(Error::Policy(format!(
                "policy {name} returned {dh}x{dw} residual for a {h}x{w} scene"
            )));
        }
        let next = normalize_budget(&residual_update(&field, &delta)?, eta, cfg.epsilon)?;
        check_budget(&next.field, eta, "refined field")?;
        field = next.field;
        clipped = next.clipped;
        guarded = next.guarded;
    }
    Ok(Trajectory {
        policy: name,
        eta,
        config: *cfg,
        steps,
        final_field: field,
        final_clipped: clipped,
        final_guarded: guarded,
    })
}
