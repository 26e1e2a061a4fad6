use std::collections::BTreeMap;
use std::fmt;
use std::fs;
use std::path::Path;
use std::str::FromStr;
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::dataset::{Dataset, Scene, CLASS_NAMES};
use super::detector::{scene_candidates, ProxyDetector};
use super::metrics::{
    detection_metrics, distance_banded, power_of, BandMetrics, Confusion, DistanceBands, GroundTruth,
    Prediction, IOU_50_90,
};
use crate::error::{Error, Result};
use crate::lightfield::{relight, LightField};
use crate::photometry::HeadlightModel;
use crate::policy::{
    baseline_field, init_field, mean_field, normalize_budget, optimize_blackbox, optimize_gradient, refine,
    BaselineContext, BaselineKind, BlackboxConfig, GradientConfig, GradientPolicy, InitConfig,
    RefinementConfig,
};
use crate::scorer::{AggregateScorer, Detection, Scorer, ScorerSpec};

/// Where a method's light field comes from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum FieldSource {
    Baseline(BaselineKind),
    /// Per-scene projected gradient ascent.
    Gradient,
    /// Per-scene blockwise perturbation search.
    Blackbox,
    /// Closed-loop refinement with the gradient policy.
    Refine,
}

/// A field source at a power relative to the low beam.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MethodSpec {
    pub source: FieldSource,
    /// Relative power; `None` for sources with a fixed power.
    pub power: Option<f64>,
}

impl MethodSpec {
    pub fn new(source: FieldSource, power: Option<f64>) -> Result<Self> {
        let fixed = matches!(
            source,
            FieldSource::Baseline(BaselineKind::NoEgo | BaselineKind::LowBeam | BaselineKind::HighBeam)
        );
        match (fixed, power) {
            (true, Some(_)) => Err(Error::Config(format!("{} has a fixed power", Self::name(source)))),
            (false, None) => Err(Error::Config(format!("{} needs a power, as in {}@0.6", Self::name(source), Self::name(source)))),
            (false, Some(p)) if !(p > 0.0 && p.is_finite()) => Err(Error::Config(format!("invalid power {p}"))),
            _ => Ok(Self { source, power }),
        }
    }

    fn name(source: FieldSource) -> &'static str {
        match source {
            FieldSource::Baseline(k) => k.as_str(),
            FieldSource::Gradient => "optimized",
            FieldSource::Blackbox => "blackbox",
            FieldSource::Refine => "refine",
        }
    }

    pub fn label(&self) -> String {
        self.to_string()
    }

    /// Parses a comma-separated method list.
    pub fn parse_list(s: &str) -> Result<Vec<Self>> {
        s.split(',').filter(|t| !t.trim().is_empty()).map(|t| t.trim().parse()).collect()
    }
}

impl fmt::Display for MethodSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.power {
            Some(p) => write!(f, "{}@{p}", Self::name(self.source)),
            None => f.write_str(Self::name(self.source)),
        }
    }
}

impl FromStr for MethodSpec {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let (name, power) = match s.split_once('@') {
            Some((n, p)) => (
                n,
                Some(p.parse::<f64>().map_err(|_| Error::Config(format!("bad power in {s:?}")))?),
            ),
            None => (s, None),
        };
        let source = match name {
            "optimized" | "gradient" => FieldSource::Gradient,
            "blackbox" => FieldSource::Blackbox,
            "refine" => FieldSource::Refine,
            other => FieldSource::Baseline(other.parse()?),
        };
        Self::new(source, power)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ExperimentConfig {
    pub scorers: Vec<ScorerSpec>,
    pub gradient: GradientConfig,
    pub blackbox: BlackboxConfig,
    pub refinement: RefinementConfig,
    /// Largest per-pixel change of one refinement step.
    pub refine_step: f64,
    pub init: InitConfig,
    pub detector: ProxyDetector,
    pub bands: DistanceBands,
    pub workers: usize,
    pub seed: u64,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            scorers: vec![ScorerSpec::contrast(1.0)],
            gradient: GradientConfig::default(),
            blackbox: BlackboxConfig::default(),
            refinement: RefinementConfig::default(),
            refine_step: 0.25,
            init: InitConfig::default(),
            detector: ProxyDetector::default(),
            bands: DistanceBands::default(),
            workers: 1,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "status", rename_all = "snake_case")]
pub enum CellStatus {
    Ok,
    Failed { reason: String },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub precision: f64,
    pub recall: f64,
    pub map50: Option<f64>,
    pub map50_90: Option<f64>,
    pub miou: Option<f64>,
    pub macc: Option<f64>,
    pub bands: Vec<Option<BandMetrics>>,
    /// Mean power relative to the low beam over scenes.
    pub power: f64,
    /// Mean scorer total over scenes.
    pub score: f64,
    pub scenes: usize,
    /// Scenes whose field was clipped when normalized to its budget.
    pub clipped: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MethodReport {
    pub method: String,
    pub target_power: Option<f64>,
    #[serde(flatten)]
    pub status: CellStatus,
    pub metrics: Option<MetricsReport>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SceneRow {
    pub scene: String,
    pub method: String,
    pub power: f64,
    pub score: f64,
    pub detections: usize,
    pub tp50: usize,
    pub clipped: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentReport {
    pub methods: Vec<MethodReport>,
    pub scenes: Vec<SceneRow>,
    pub band_edges: Vec<Option<f64>>,
    pub band_rule: String,
    /// Wall-clock seconds per method. Not part of the deterministic output.
    #[serde(skip)]
    pub timing: BTreeMap<String, f64>,
}

const BAND_RULE: &str = "matched predictions follow their ground truth; unmatched predictions go to the band of the most-overlapping ground truth in the same image, else the last band";

impl ExperimentReport {
    pub fn method(&self, label: &str) -> Option<&MethodReport> {
        self.methods.iter().find(|m| m.method == label)
    }

    pub fn metrics(&self, label: &str) -> Option<&MetricsReport> {
        self.method(label).and_then(|m| m.metrics.as_ref())
    }

    /// Writes `metrics.json`, `metrics.csv`, `scenes.csv` and `timing.json`.
    pub fn write(&self, dir: impl AsRef<Path>) -> Result<()> {
        let dir = dir.as_ref();
        fs::create_dir_all(dir)?;
        fs::write(dir.join("metrics.json"), serde_json::to_string_pretty(self)? + "\n")?;

        let mut w = csv::Writer::from_path(dir.join("metrics.csv")).map_err(csv_err)?;
        let mut header = vec![
            "method", "target_power", "status", "power", "precision", "recall", "map50", "map50_90", "miou",
            "macc", "score", "scenes", "clipped",
        ]
        .into_iter()
        .map(String::from)
        .collect::<Vec<_>>();
        header.extend(self.band_edges.windows(2).map(|e| band_name(e[0], e[1])));
        w.write_record(&header).map_err(csv_err)?;
        let opt = |v: Option<f64>| v.map(|x| x.to_string()).unwrap_or_default();
        for m in &self.methods {
            let mut row = vec![m.method.clone(), opt(m.target_power)];
            match (&m.status, &m.metrics) {
                (CellStatus::Ok, Some(r)) => {
                    row.push("ok".into());
                    row.extend([
                        r.power.to_string(),
                        r.precision.to_string(),
                        r.recall.to_string(),
                        opt(r.map50),
                        opt(r.map50_90),
                        opt(r.miou),
                        opt(r.macc),
                        r.score.to_string(),
                        r.scenes.to_string(),
                        r.clipped.to_string(),
                    ]);
                    row.extend(r.bands.iter().map(|b| opt(b.as_ref().and_then(|b| b.map50))));
                }
                _ => {
                    let reason = match &m.status {
                        CellStatus::Failed { reason } => reason.as_str(),
                        CellStatus::Ok => "missing metrics",
                    };
                    row.push(format!("failed: {reason}"));
                    row.resize(header.len(), String::new());
                }
            }
            w.write_record(&row).map_err(csv_err)?;
        }
        w.flush()?;

        let mut w = csv::Writer::from_path(dir.join("scenes.csv")).map_err(csv_err)?;
        for r in &self.scenes {
            w.serialize(r).map_err(csv_err)?;
        }
        w.flush()?;

        fs::write(dir.join("timing.json"), serde_json::to_string_pretty(&self.timing)? + "\n")?;
        Ok(())
    }
}

fn csv_err(e: csv::Error) -> Error {
    Error::Format(format!("csv: {e}"))
}

fn band_name(lo: Option<f64>, hi: Option<f64>) -> String {
    match (lo, hi) {
        (Some(lo), Some(hi)) => format!("map50_{lo}-{hi}m"),
        (Some(lo), None) => format!("map50_{lo}m+"),
        _ => "map50_band".into(),
    }
}

/// Outcome of one method on one scene.
#[derive(Debug, Clone)]
struct Cell {
    field: Option<LightField>,
    power: f64,
    score: f64,
    clipped: bool,
    detections: Vec<Detection>,
    confusion: Option<Confusion>,
}

type CellResult = std::result::Result<Cell, String>;

struct SceneContext<'a> {
    index: usize,
    scene: &'a Scene,
    lb: Option<LightField>,
    hb: Option<LightField>,
}

impl SceneContext<'_> {
    fn lb(&self) -> Result<&LightField> {
        self.lb
            .as_ref()
            .ok_or_else(|| Error::Config("power targets need a camera and a depth map for the low beam reference".into()))
    }

    fn eta(&self, power: f64) -> Result<f64> {
        let eta = power * self.lb()?.mean();
        if !(eta > 0.0 && eta <= 1.0) {
            return Err(Error::Budget(format!(
                "power {power} maps to mean intensity {eta}, outside (0, 1]"
            )));
        }
        Ok(eta)
    }

    fn seed(&self, base: u64) -> u64 {
        base.wrapping_mul(0x9E37_79B9_7F4A_7C15).wrapping_add(self.index as u64)
    }
}

fn scene_context<'a>(dataset: &'a Dataset, index: usize) -> SceneContext<'a> {
    let scene = &dataset.scenes[index];
    let beams = match (&dataset.camera, scene.pair.depth()) {
        (Some(cam), Some(depth)) => {
            let project = |hl: HeadlightModel| crate::photometry::project_beam(cam, &hl, depth).ok();
            (project(HeadlightModel::low_beam()), project(HeadlightModel::high_beam()))
        }
        _ => (None, None),
    };
    SceneContext {
        index,
        scene,
        lb: beams.0,
        hb: beams.1,
    }
}

fn produce_field(
    ctx: &SceneContext<'_>,
    method: &MethodSpec,
    scorer: &mut AggregateScorer,
    cfg: &ExperimentConfig,
) -> Result<(LightField, bool)> {
    let pair = &ctx.scene.pair;
    let (h, w) = pair.dims();
    let eta = method.power.map(|p| ctx.eta(p)).transpose()?;
    match method.source {
        FieldSource::Baseline(BaselineKind::Static) => {
            unreachable!("static fields are built from the optimized fields")
        }
        FieldSource::Baseline(kind) => {
            let bctx = BaselineContext {
                height: h,
                width: w,
                budget: eta,
                ..Default::default()
            };
            match kind {
                BaselineKind::LowBeam => Ok((ctx.lb()?.clone(), false)),
                BaselineKind::HighBeam => ctx
                    .hb
                    .clone()
                    .map(|m| (m, false))
                    .ok_or_else(|| Error::Config("high beam needs a camera and a depth map".into())),
                _ => Ok((baseline_field(kind, &bctx)?, false)),
            }
        }
        FieldSource::Gradient => {
            let out = optimize_gradient(pair, scorer, eta.expect("power"), &cfg.gradient)?;
            Ok((out.field, false))
        }
        FieldSource::Blackbox => {
            let bb = BlackboxConfig {
                seed: ctx.seed(cfg.blackbox.seed),
                ..cfg.blackbox
            };
            let out = optimize_blackbox(pair, scorer, eta.expect("power"), &bb)?;
            Ok((out.field, false))
        }
        FieldSource::Refine => {
            let eta = eta.expect("power");
            let init = init_field(h, w, eta, &cfg.init, ctx.seed(cfg.seed))?;
            let mut policy = GradientPolicy::new(pair, Box::new(AggregateScorer::new(&cfg.scorers)?), cfg.refine_step)?;
            let rcfg = RefinementConfig {
                seed: ctx.seed(cfg.refinement.seed),
                ..cfg.refinement
            };
            let traj = refine(pair, &mut policy, scorer, &rcfg, eta, init)?;
            Ok((traj.final_field, traj.final_clipped))
        }
    }
}

fn evaluate_field(
    ctx: &SceneContext<'_>,
    field: LightField,
    clipped: bool,
    keep_field: bool,
    scorer: &mut AggregateScorer,
    cfg: &ExperimentConfig,
) -> Result<Cell> {
    let scene = ctx.scene;
    let image = relight(&scene.pair, &field)?;
    let score = scorer.evaluate(&image, scene.pair.annotations(), false)?.total;
    let out = cfg.detector.run(&image, &scene_candidates(scene));
    let confusion = match &scene.labels {
        Some(l) => {
            let mut c = Confusion::new(CLASS_NAMES.len() + 1);
            c.add(&l.data, &out.labels)?;
            Some(c)
        }
        None => None,
    };
    let power = match &ctx.lb {
        Some(lb) => power_of(&field, lb).unwrap_or(f64::NAN),
        None => f64::NAN,
    };
    Ok(Cell {
        field: keep_field.then_some(field),
        power,
        score,
        clipped,
        detections: out.detections,
        confusion,
    })
}

fn failed(scene: &Scene, e: impl fmt::Display) -> String {
    format!("{}: {e}", scene.id)
}

/// Evaluates every method on every scene and reduces to one report row per
/// method.
///
/// Scenes are processed on `cfg.workers` threads, each with its own scorer.
/// Results are gathered in scene order before reduction, so the report does
/// not depend on the worker count. A method that fails on any scene is
/// reported as failed with the first reason; other methods are unaffected.
pub fn run_experiment(dataset: &Dataset, methods: &[MethodSpec], cfg: &ExperimentConfig) -> Result<ExperimentReport> {
    if methods.is_empty() {
        return Err(Error::Config("no methods to evaluate".into()));
    }
    if dataset.scenes.is_empty() {
        return Err(Error::Config("dataset has no scenes".into()));
    }
    cfg.refinement.validate()?;

    // Static fields average the optimized fields at the same power.
    let mut producers: Vec<MethodSpec> = methods
        .iter()
        .filter(|m| m.source != FieldSource::Baseline(BaselineKind::Static))
        .copied()
        .collect();
    for m in methods.iter().filter(|m| m.source == FieldSource::Baseline(BaselineKind::Static)) {
        let src = MethodSpec {
            source: FieldSource::Gradient,
            power: m.power,
        };
        if !producers.contains(&src) {
            producers.push(src);
        }
    }
    let keep = |m: &MethodSpec| {
        m.source == FieldSource::Gradient
            && methods
                .iter()
                .any(|s| s.source == FieldSource::Baseline(BaselineKind::Static) && s.power == m.power)
    };

    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(cfg.workers.max(1))
        .build()
        .map_err(|e| Error::Config(format!("worker pool: {e}")))?;
    let mut timing: BTreeMap<String, f64> = BTreeMap::new();

    let started = Instant::now();
    let first: Vec<Vec<(CellResult, f64)>> = pool.install(|| {
        (0..dataset.scenes.len())
            .into_par_iter()
            .map_init(
                || AggregateScorer::new(&cfg.scorers),
                |scorer, i| {
                    let ctx = scene_context(dataset, i);
                    producers
                        .iter()
                        .map(|m| {
                            let t = Instant::now();
                            let r = match scorer {
                                Ok(s) => produce_field(&ctx, m, s, cfg)
                                    .and_then(|(f, c)| evaluate_field(&ctx, f, c, keep(m), s, cfg))
                                    .map_err(|e| failed(ctx.scene, e)),
                                Err(e) => Err(failed(ctx.scene, e)),
                            };
                            (r, t.elapsed().as_secs_f64())
                        })
                        .collect()
                },
            )
            .collect()
    });
    for (k, m) in producers.iter().enumerate() {
        timing.insert(m.label(), first.iter().map(|row| row[k].1).sum());
    }
    let mut cells: BTreeMap<String, Vec<CellResult>> = producers
        .iter()
        .enumerate()
        .map(|(k, m)| (m.label(), first.iter().map(|row| row[k].0.clone()).collect()))
        .collect();

    for m in methods.iter().filter(|m| m.source == FieldSource::Baseline(BaselineKind::Static)) {
        let t = Instant::now();
        let src = MethodSpec {
            source: FieldSource::Gradient,
            power: m.power,
        };
        let fields: std::result::Result<Vec<LightField>, String> = cells[&src.label()]
            .iter()
            .map(|c| c.as_ref().map(|c| c.field.clone().expect("kept field")).map_err(|e| e.clone()))
            .collect();
        let results: Vec<CellResult> = match fields {
            Err(e) => vec![Err(format!("optimized fields unavailable: {e}")); dataset.scenes.len()],
            Ok(fields) => {
                let mean = mean_field(&fields);
                pool.install(|| {
                    (0..dataset.scenes.len())
                        .into_par_iter()
                        .map_init(
                            || AggregateScorer::new(&cfg.scorers),
                            |scorer, i| {
                                let ctx = scene_context(dataset, i);
                                let mut run = || -> Result<Cell> {
                                    let s = scorer.as_mut().map_err(|e| Error::Config(e.to_string()))?;
                                    let mean = mean.as_ref().map_err(|e| Error::Config(e.to_string()))?;
                                    let eta = ctx.eta(m.power.expect("power"))?;
                                    let n = normalize_budget(mean, eta, cfg.gradient.epsilon)?;
                                    evaluate_field(&ctx, n.field, n.clipped, false, s, cfg)
                                };
                                run().map_err(|e| failed(ctx.scene, e))
                            },
                        )
                        .collect()
                })
            }
        };
        timing.insert(m.label(), t.elapsed().as_secs_f64());
        cells.insert(m.label(), results);
    }
    timing.insert("total".into(), started.elapsed().as_secs_f64());

    let gts: Vec<GroundTruth> = dataset
        .scenes
        .iter()
        .enumerate()
        .flat_map(|(i, s)| {
            s.pair.annotations().iter().map(move |a| GroundTruth {
                image: i,
                class_id: a.class_id,
                bbox: a.bbox,
                distance: a.distance,
            })
        })
        .collect();

    let mut reports = Vec::with_capacity(methods.len());
    let mut rows = Vec::new();
    for m in methods {
        let label = m.label();
        let results = &cells[&label];
        if let Some(reason) = results.iter().find_map(|r| r.as_ref().err()) {
            reports.push(MethodReport {
                method: label,
                target_power: m.power,
                status: CellStatus::Failed { reason: reason.clone() },
                metrics: None,
            });
            continue;
        }
        let cells: Vec<&Cell> = results.iter().map(|r| r.as_ref().expect("checked")).collect();
        let preds: Vec<Prediction> = cells
            .iter()
            .enumerate()
            .flat_map(|(i, c)| {
                c.detections.iter().map(move |d| Prediction {
                    image: i,
                    class_id: d.class_id,
                    bbox: d.bbox,
                    confidence: d.confidence as f64,
                })
            })
            .collect();
        let det = detection_metrics(&preds, &gts, &IOU_50_90);
        let bands = if gts.iter().all(|g| g.distance.is_some()) {
            distance_banded(&preds, &gts, &cfg.bands)?
        } else {
            Vec::new()
        };
        let confusion = cells.iter().try_fold(Confusion::new(CLASS_NAMES.len() + 1), |mut acc, c| {
            c.confusion.as_ref().map(|x| {
                acc.merge(x);
                acc
            })
        });
        let n = cells.len() as f64;
        for (i, c) in cells.iter().enumerate() {
            let scene_preds: Vec<Prediction> = preds.iter().filter(|p| p.image == i).copied().collect();
            let scene_gts: Vec<GroundTruth> = gts.iter().filter(|g| g.image == i).copied().collect();
            rows.push(SceneRow {
                scene: dataset.scenes[i].id.clone(),
                method: label.clone(),
                power: c.power,
                score: c.score,
                detections: c.detections.len(),
                tp50: detection_metrics(&scene_preds, &scene_gts, &[0.5]).per_threshold[0].tp,
                clipped: c.clipped,
            });
        }
        reports.push(MethodReport {
            method: label,
            target_power: m.power,
            status: CellStatus::Ok,
            metrics: Some(MetricsReport {
                precision: det.precision(),
                recall: det.recall(),
                map50: det.map50(),
                map50_90: det.map_mean(),
                miou: confusion.as_ref().and_then(|c| c.miou()),
                macc: confusion.as_ref().and_then(|c| c.macc()),
                bands,
                power: cells.iter().map(|c| c.power).sum::<f64>() / n,
                score: cells.iter().map(|c| c.score).sum::<f64>() / n,
                scenes: cells.len(),
                clipped: cells.iter().filter(|c| c.clipped).count(),
            }),
        });
    }
    Ok(ExperimentReport {
        methods: reports,
        scenes: rows,
        band_edges: cfg.bands.edges().iter().map(|e| e.is_finite().then_some(*e)).collect(),
        band_rule: BAND_RULE.into(),
        timing,
    })
}
