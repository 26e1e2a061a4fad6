//! Perception scores used to guide the light field.
//!
//! Two differentiable proxies are built in (local object contrast and global
//! well-exposedness). Real detectors and segmenters plug in through the
//! external scorer client, which speaks a newline-delimited JSON protocol to
//! a separate process. Parts are combined by a weighted sum.

mod external;
pub mod protocol;
mod proxy;

pub use external::{ExternalParams, ExternalScorer, ImageEncoding, TIMEOUT_ENV};
pub(crate) use proxy::object_region;
pub use proxy::{
    contrast_score, exposure_score, luminance, ContrastParams, ContrastScorer, ExposureParams,
    ExposureScorer, LUMA_WEIGHTS,
};

use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::lightfield::{Annotation, BBox, Image};

/// One task's scalar result.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TaskScore {
    pub task: String,
    pub value: f64,
    pub higher_is_better: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Detection {
    pub class_id: u32,
    pub bbox: BBox,
    pub confidence: f32,
}

/// What a scorer returns for one image.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ScoreReport {
    pub scores: Vec<TaskScore>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub detections: Vec<Detection>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mask_path: Option<String>,
    /// Wall-clock time spent scoring; excluded from equality-sensitive outputs.
    #[serde(skip)]
    pub timing_ms: f64,
}

impl ScoreReport {
    pub fn validate(&self) -> Result<()> {
        if let Some(s) = self.scores.iter().find(|s| !s.value.is_finite()) {
            return Err(Error::Numerical(format!("non-finite score for task `{}`", s.task)));
        }
        if let Some(d) = self
            .detections
            .iter()
            .find(|d| !(0.0..=1.0).contains(&d.confidence))
        {
            return Err(Error::InvalidValue(format!(
                "detection confidence {} outside [0, 1]",
                d.confidence
            )));
        }
        Ok(())
    }

    pub fn score(&self, task: &str) -> Option<f64> {
        self.scores.iter().find(|s| s.task == task).map(|s| s.value)
    }
}

/// Result of scoring one image.
#[derive(Debug, Clone, PartialEq)]
pub struct Evaluation {
    pub report: ScoreReport,
    /// Scalar to maximize.
    pub total: f64,
    /// `d total / d image`, channel interleaved like the image, when the
    /// scorer is differentiable and a gradient was requested.
    pub gradient: Option<Vec<f32>>,
}

/// A perception score over a relit image. Higher is better.
pub trait Scorer: Send {
    fn name(&self) -> &str;

    fn differentiable(&self) -> bool;

    fn evaluate(
        &mut self,
        image: &Image,
        annotations: &[Annotation],
        want_gradient: bool,
    ) -> Result<Evaluation>;
}

/// Kind and parameters of one aggregate part.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ScorerKind {
    ContrastProxy(ContrastParams),
    ExposureProxy(ExposureParams),
    External(ExternalParams),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScorerSpec {
    #[serde(flatten)]
    pub kind: ScorerKind,
    pub weight: f64,
}

impl ScorerSpec {
    pub fn contrast(weight: f64) -> Self {
        Self {
            kind: ScorerKind::ContrastProxy(ContrastParams::default()),
            weight,
        }
    }

    pub fn exposure(weight: f64) -> Self {
        Self {
            kind: ScorerKind::ExposureProxy(ExposureParams::default()),
            weight,
        }
    }

    pub fn external(params: ExternalParams, weight: f64) -> Self {
        Self {
            kind: ScorerKind::External(params),
            weight,
        }
    }

    pub fn label(&self) -> &'static str {
        match self.kind {
            ScorerKind::ContrastProxy(_) => "contrast",
            ScorerKind::ExposureProxy(_) => "exposure",
            ScorerKind::External(_) => "external",
        }
    }

    pub fn is_differentiable(&self) -> bool {
        !matches!(self.kind, ScorerKind::External(_))
    }

    /// Instantiates the part, connecting to external scorers.
    pub fn build(&self) -> Result<Box<dyn Scorer>> {
        Ok(match &self.kind {
            ScorerKind::ContrastProxy(p) => Box::new(ContrastScorer::new(p.clone())),
            ScorerKind::ExposureProxy(p) => Box::new(ExposureScorer::new(p.clone())),
            ScorerKind::External(p) => Box::new(ExternalScorer::connect(p.clone())?),
        })
    }
}

/// Weighted sum of scorer parts.
pub struct AggregateScorer {
    parts: Vec<(ScorerSpec, Box<dyn Scorer>)>,
}

impl AggregateScorer {
    pub fn new(specs: &[ScorerSpec]) -> Result<Self> {
        if specs.is_empty() {
            return Err(Error::Config("aggregate needs at least one scorer".into()));
        }
        let mut parts = Vec::with_capacity(specs.len());
        for (i, spec) in specs.iter().enumerate() {
            if !(spec.weight.is_finite() && spec.weight >= 0.0) {
                return Err(Error::Config(format!(
                    "scorer weight must be >= 0, got {}",
                    spec.weight
                )));
            }
            let scorer = spec.build().map_err(|e| Error::ScorerPart {
                part: format!("{}#{i}", spec.label()),
                source: Box::new(e),
            })?;
            parts.push((spec.clone(), scorer));
        }
        Ok(Self { parts })
    }

    pub fn specs(&self) -> impl Iterator<Item = &ScorerSpec> {
        self.parts.iter().map(|(s, _)| s)
    }
}

impl Scorer for AggregateScorer {
    fn name(&self) -> &str {
        "aggregate"
    }

    fn differentiable(&self) -> bool {
        self.parts.iter().all(|(_, s)| s.differentiable())
    }

    fn evaluate(
        &mut self,
        image: &Image,
        annotations: &[Annotation],
        want_gradient: bool,
    ) -> Result<Evaluation> {
        let start = Instant::now();
        let differentiable = self.differentiable();
        let mut total = 0.0;
        let mut gradient = (want_gradient && differentiable).then(|| vec![0.0f32; image.data().len()]);
        let mut report = ScoreReport::default();
        for (i, (spec, scorer)) in self.parts.iter_mut().enumerate() {
            let part = format!("{}#{i}", spec.label());
            let eval = scorer
                .evaluate(image, annotations, gradient.is_some())
                .and_then(|e| e.report.validate().map(|_| e))
                .map_err(|e| Error::ScorerPart {
                    part: part.clone(),
                    source: Box::new(e),
                })?;
            total += spec.weight * eval.total;
            if let (Some(acc), Some(g)) = (gradient.as_mut(), eval.gradient.as_ref()) {
                let w = spec.weight as f32;
                acc.iter_mut().zip(g).for_each(|(a, b)| *a += w * b);
            }
            report.scores.extend(eval.report.scores.into_iter().map(|mut s| {
                s.task = format!("{part}/{}", s.task);
                s
            }));
            report.detections.extend(eval.report.detections);
            if report.mask_path.is_none() {
                report.mask_path = eval.report.mask_path;
            }
        }
        report.scores.push(TaskScore {
            task: "aggregate".into(),
            value: total,
            higher_is_better: true,
        });
        report.timing_ms = start.elapsed().as_secs_f64() * 1e3;
        Ok(Evaluation {
            report,
            total,
            gradient,
        })
    }
}

/// Evaluates a one-off aggregate of `specs` on `image`.
pub fn aggregate(specs: &[ScorerSpec], image: &Image, annotations: &[Annotation]) -> Result<Evaluation> {
    AggregateScorer::new(specs)?.evaluate(image, annotations, true)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn fixture() -> (Image, Vec<Annotation>) {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let img = Image::from_fn(24, 32, 3, |_, _, _| rng.random_range(0.0..0.9)).unwrap();
        let anns = vec![
            Annotation::new(0, BBox::new(4.0, 4.0, 10.0, 12.0)),
            Annotation::new(1, BBox::new(18.0, 6.0, 26.0, 20.0)),
        ];
        (img, anns)
    }

    #[test]
    fn single_part_equals_part_score() {
        let (img, anns) = fixture();
        let agg = aggregate(&[ScorerSpec::contrast(1.0)], &img, &anns).unwrap();
        let (direct, grad) = contrast_score(&img, &anns, &ContrastParams::default());
        assert_eq!(agg.total, direct);
        assert_eq!(agg.gradient.unwrap(), grad);
        assert_eq!(agg.report.score("aggregate"), Some(direct));
    }

    #[test]
    fn weights_two_and_zero() {
        let (img, anns) = fixture();
        let agg = aggregate(&[ScorerSpec::contrast(2.0), ScorerSpec::exposure(0.0)], &img, &anns)
            .unwrap();
        let (c, _) = contrast_score(&img, &anns, &ContrastParams::default());
        assert!((agg.total - 2.0 * c).abs() < 1e-12);
    }

    #[test]
    fn mixed_parts_equal_hand_sum() {
        let (img, anns) = fixture();
        let agg = aggregate(&[ScorerSpec::contrast(1.0), ScorerSpec::exposure(0.5)], &img, &anns)
            .unwrap();
        let (c, gc) = contrast_score(&img, &anns, &ContrastParams::default());
        let (e, ge) = exposure_score(&img, &ExposureParams::default());
        assert!((agg.total - (c + 0.5 * e)).abs() <= 1e-6);
        for ((a, x), y) in agg.gradient.unwrap().iter().zip(&gc).zip(&ge) {
            assert!((a - (x + 0.5 * y)).abs() <= 1e-6);
        }
    }

    #[test]
    fn doubling_weights_doubles_score() {
        let (img, anns) = fixture();
        let a = aggregate(&[ScorerSpec::contrast(0.7), ScorerSpec::exposure(1.3)], &img, &anns)
            .unwrap()
            .total;
        let b = aggregate(&[ScorerSpec::contrast(1.4), ScorerSpec::exposure(2.6)], &img, &anns)
            .unwrap()
            .total;
        assert_eq!(2.0 * a, b);
    }

    #[test]
    fn invalid_configs() {
        let (img, anns) = fixture();
        assert!(matches!(aggregate(&[], &img, &anns), Err(Error::Config(_))));
        assert!(aggregate(&[ScorerSpec::contrast(-1.0)], &img, &anns).is_err());
    }

    #[test]
    fn failing_part_is_named() {
        let spec = ScorerSpec::external(
            ExternalParams {
                endpoint: "tcp://127.0.0.1:1".into(),
                tasks: vec!["det".into()],
                timeout_ms: 200,
                encoding: ImageEncoding::PngBase64,
            },
            1.0,
        );
        let err = AggregateScorer::new(&[ScorerSpec::contrast(1.0), spec]).err().unwrap();
        assert!(err.to_string().contains("external#1"), "{err}");
    }

    #[test]
    fn spec_json_shape() {
        let s = serde_json::to_string(&ScorerSpec::exposure(0.5)).unwrap();
        assert_eq!(s, r#"{"kind":"exposure_proxy","sigma":0.25,"weight":0.5}"#);
        let back: ScorerSpec = serde_json::from_str(&s).unwrap();
        assert_eq!(back, ScorerSpec::exposure(0.5));
    }
}
