use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use lightloop_core::harness::{
    generate_toy_corpus, run_experiment, Dataset, DistanceBands, ExperimentConfig, ExperimentReport, MethodSpec,
    Scene, SynthParams,
};
use lightloop_core::photometry::{
    build_warp, camera_to_headlight, project_beam, CalibrationFile, ReferenceGeometry,
};
use lightloop_core::policy::{
    baseline_field, init_field, mean_field, normalize_budget, optimize_blackbox, optimize_gradient, BaselineContext,
    BaselineKind, BlackboxConfig, GradientConfig, GradientPolicy, InitConfig,
};
use lightloop_core::scorer::{AggregateScorer, ExternalParams, ScorerSpec};
use lightloop_core::{
    refine, relight, AngularIntensityTable, CameraModel, DepthMap, HeadlightModel, LightField, RefinementConfig, Scorer,
};
use serde_json::json;

#[derive(Parser)]
#[command(name = "lightloop", version, about = "Perception-driven adaptive headlight engine")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate the synthetic night-road corpus.
    SynthGen(SynthGenArgs),
    /// Optimize a light field per scene and dump fields, images and scores.
    Optimize(OptimizeArgs),
    /// Write a baseline light field per scene.
    Baseline(BaselineArgs),
    /// Evaluate methods over a dataset and write metrics.
    Eval(EvalArgs),
    /// Build a headlight-to-camera warp and report its round-trip error.
    WarpCalib(WarpCalibArgs),
    /// Print a metrics.json produced by `eval` as a table.
    Report(ReportArgs),
}

#[derive(Args)]
struct SynthGenArgs {
    #[arg(long, default_value_t = 200)]
    count: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// JSON file overriding generator parameters.
    #[arg(long)]
    params: Option<PathBuf>,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args, Clone)]
struct ScorerArgs {
    /// Weighted scorer parts, e.g. `contrast:1,exposure:0.5` or `external:1`.
    #[arg(long, default_value = "contrast:1")]
    scorer: String,
    /// Endpoint for the external part: `tcp://host:port` or `stdio:<command>`.
    #[arg(long, env = "LIDAS_SCORER_ENDPOINT")]
    scorer_endpoint: Option<String>,
    /// Tasks requested from the external scorer.
    #[arg(long, default_value = "det", value_delimiter = ',')]
    scorer_tasks: Vec<String>,
}

impl ScorerArgs {
    fn specs(&self) -> Result<Vec<ScorerSpec>> {
        parse_scorers(&self.scorer, self.scorer_endpoint.as_deref(), &self.scorer_tasks)
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum OptimizeMethod {
    Gradient,
    Blackbox,
    Refine,
}

#[derive(Args)]
struct OptimizeArgs {
    /// Dataset manifest.
    #[arg(long)]
    dataset: PathBuf,
    #[arg(long, value_enum, default_value = "gradient")]
    method: OptimizeMethod,
    /// Power relative to the low beam.
    #[arg(long, default_value_t = 0.6)]
    budget: f64,
    /// Gradient or black-box iterations, or refinement steps.
    #[arg(long)]
    steps: Option<usize>,
    /// Scored refinement steps.
    #[arg(long, default_value_t = 5)]
    scored_steps: usize,
    /// Largest per-pixel change of one step.
    #[arg(long, default_value_t = 0.25)]
    step_size: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Only these scene ids.
    #[arg(long, value_delimiter = ',')]
    scene: Vec<String>,
    #[command(flatten)]
    scorer: ScorerArgs,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct BaselineArgs {
    #[arg(long)]
    dataset: PathBuf,
    /// uniform, no_ego, low_beam, high_beam or static.
    #[arg(long)]
    kind: BaselineKind,
    /// Power relative to the low beam, for uniform and static.
    #[arg(long)]
    budget: Option<f64>,
    /// Directory of `<scene>/field_final.lidf` from `optimize`, for static.
    #[arg(long)]
    fields_dir: Option<PathBuf>,
    #[command(flatten)]
    scorer: ScorerArgs,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct EvalArgs {
    #[arg(long)]
    dataset: PathBuf,
    /// Methods as `name[@power]`, e.g. `uniform@1,low_beam,optimized@0.6,static@0.6`.
    #[arg(long, default_value = "no_ego,uniform@1,low_beam,high_beam,optimized@0.6,static@0.6")]
    methods: String,
    /// JSON experiment config; flags below override it.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Gradient optimizer iterations.
    #[arg(long)]
    steps: Option<usize>,
    /// Refinement steps.
    #[arg(long)]
    refine_steps: Option<usize>,
    #[arg(long)]
    scored_steps: Option<usize>,
    /// Distance band edges in meters, e.g. `0,20,60,70`.
    #[arg(long)]
    bands: Option<String>,
    #[arg(long)]
    workers: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    #[command(flatten)]
    scorer: ScorerArgs,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct WarpCalibArgs {
    /// Calibration JSON. Without it the default headlight under the
    /// synthetic camera is used and written next to the warp.
    #[arg(long)]
    calib: Option<PathBuf>,
    /// Angular intensity table CSV: horizontal angles across, vertical angles down.
    #[arg(long)]
    table: Option<PathBuf>,
    /// Depth map to warp through instead of the calibration plane.
    #[arg(long)]
    depth: Option<PathBuf>,
    /// Reference plane distance, overriding the calibration.
    #[arg(long)]
    plane: Option<f64>,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Clone, Copy, ValueEnum)]
enum ReportFormat {
    Markdown,
    Csv,
}

#[derive(Args)]
struct ReportArgs {
    /// metrics.json, or the directory holding it.
    metrics: PathBuf,
    #[arg(long, value_enum, default_value = "markdown")]
    format: ReportFormat,
}

fn parse_scorers(s: &str, endpoint: Option<&str>, tasks: &[String]) -> Result<Vec<ScorerSpec>> {
    let mut specs = vec![];
    for part in s.split(',').map(str::trim).filter(|p| !p.is_empty()) {
        let (name, weight) = match part.split_once(':') {
            Some((n, w)) => (n, w.parse::<f64>().with_context(|| format!("bad scorer weight in {part:?}"))?),
            None => (part, 1.0),
        };
        specs.push(match name {
            "contrast" => ScorerSpec::contrast(weight),
            "exposure" => ScorerSpec::exposure(weight),
            "external" => {
                let Some(ep) = endpoint else {
                    bail!("external scorer needs --scorer-endpoint")
                };
                ScorerSpec::external(ExternalParams::new(ep, tasks.to_vec()), weight)
            }
            other => bail!("unknown scorer {other:?}; expected contrast, exposure or external"),
        });
    }
    if specs.is_empty() {
        bail!("no scorer given");
    }
    Ok(specs)
}

fn write_json(path: &Path, value: &serde_json::Value) -> Result<()> {
    fs::write(path, serde_json::to_string_pretty(value)? + "\n").with_context(|| format!("writing {}", path.display()))
}

fn load_dataset(path: &Path) -> Result<Dataset> {
    Dataset::load(path).with_context(|| format!("loading dataset {}", path.display()))
}

fn low_beam(dataset: &Dataset, scene: &Scene) -> Result<LightField> {
    let (Some(cam), Some(depth)) = (&dataset.camera, scene.pair.depth()) else {
        bail!("scene {}: power budgets need a camera and a depth map", scene.id)
    };
    Ok(project_beam(cam, &HeadlightModel::low_beam(), depth)?)
}

fn eta_for(dataset: &Dataset, scene: &Scene, power: f64) -> Result<(f64, LightField)> {
    let lb = low_beam(dataset, scene)?;
    let eta = power * lb.mean();
    if !(eta > 0.0 && eta <= 1.0) {
        bail!("scene {}: power {power} maps to mean intensity {eta}, outside (0, 1]", scene.id);
    }
    Ok((eta, lb))
}

fn synth_gen(a: SynthGenArgs) -> Result<()> {
    let params = match &a.params {
        Some(p) => serde_json::from_slice(&fs::read(p)?).with_context(|| format!("parsing {}", p.display()))?,
        None => SynthParams::default(),
    };
    let ds = generate_toy_corpus(a.count, a.seed, &params)?;
    let manifest = ds.save(&a.out)?;
    write_json(&a.out.join("synth_params.json"), &json!({ "seed": a.seed, "count": a.count, "params": params }))?;
    println!("{}", manifest.display());
    Ok(())
}

fn optimize(a: OptimizeArgs) -> Result<()> {
    let ds = load_dataset(&a.dataset)?;
    let specs = a.scorer.specs()?;
    let mut scorer = AggregateScorer::new(&specs)?;
    fs::create_dir_all(&a.out)?;
    let mut summary = csv_writer(&a.out.join("summary.csv"))?;
    summary.write_record(["scene", "method", "eta", "initial_score", "score", "power"])?;
    let mut done = 0;
    for (i, scene) in ds.scenes.iter().enumerate() {
        if !a.scene.is_empty() && !a.scene.contains(&scene.id) {
            continue;
        }
        let (eta, lb) = eta_for(&ds, scene, a.budget)?;
        let dir = a.out.join(&scene.id);
        fs::create_dir_all(&dir)?;
        let seed = a.seed.wrapping_add(i as u64);
        let (field, initial, score, method) = match a.method {
            OptimizeMethod::Gradient => {
                let cfg = GradientConfig {
                    steps: a.steps.unwrap_or(GradientConfig::default().steps),
                    step_size: a.step_size,
                    ..Default::default()
                };
                let out = optimize_gradient(&scene.pair, &mut scorer, eta, &cfg)?;
                (out.field, out.initial_score, out.score, "gradient")
            }
            OptimizeMethod::Blackbox => {
                let cfg = BlackboxConfig {
                    iterations: a.steps.unwrap_or(BlackboxConfig::default().iterations),
                    seed,
                    ..Default::default()
                };
                let out = optimize_blackbox(&scene.pair, &mut scorer, eta, &cfg)?;
                (out.field, out.initial_score, out.score, "blackbox")
            }
            OptimizeMethod::Refine => {
                let (h, w) = scene.pair.dims();
                let cfg = RefinementConfig {
                    n_steps: a.steps.unwrap_or(RefinementConfig::default().n_steps),
                    k_scored: a.scored_steps,
                    seed,
                    ..Default::default()
                };
                let init = init_field(h, w, eta, &InitConfig::default(), seed)?;
                let mut policy = GradientPolicy::new(&scene.pair, Box::new(AggregateScorer::new(&specs)?), a.step_size)?;
                let traj = refine(&scene.pair, &mut policy, &mut scorer, &cfg, eta, init)?;
                traj.dump(&dir)?;
                let scores = traj.scores();
                let first = scores.first().map_or(f64::NAN, |s| s.1);
                let last = scores.last().map_or(f64::NAN, |s| s.1);
                (traj.final_field, first, last, "refine")
            }
        };
        if !matches!(a.method, OptimizeMethod::Refine) {
            field.save(dir.join("field_final.lidf"))?;
            relight(&scene.pair, &field)?.save(dir.join("image_final.lidf"))?;
        }
        let power = lightloop_core::harness::power_of(&field, &lb)?;
        summary.write_record([
            scene.id.clone(),
            method.to_string(),
            eta.to_string(),
            initial.to_string(),
            score.to_string(),
            power.to_string(),
        ])?;
        log::info!("{}: {method} score {initial:.4} -> {score:.4} at power {power:.3}", scene.id);
        done += 1;
    }
    summary.flush()?;
    if done == 0 {
        bail!("no scene matched");
    }
    println!("{}", a.out.display());
    Ok(())
}

fn baseline(a: BaselineArgs) -> Result<()> {
    let ds = load_dataset(&a.dataset)?;
    let mut scorer = AggregateScorer::new(&a.scorer.specs()?)?;
    fs::create_dir_all(&a.out)?;
    let static_mean = match a.kind {
        BaselineKind::Static => {
            let Some(dir) = &a.fields_dir else {
                bail!("static needs --fields-dir with optimized fields")
            };
            let fields = ds
                .scenes
                .iter()
                .map(|s| {
                    let p = dir.join(&s.id).join("field_final.lidf");
                    LightField::load(&p).with_context(|| format!("loading {}", p.display()))
                })
                .collect::<Result<Vec<_>>>()?;
            Some(mean_field(&fields)?)
        }
        _ => None,
    };
    let (lbm, hbm) = (HeadlightModel::low_beam(), HeadlightModel::high_beam());
    let mut summary = csv_writer(&a.out.join("summary.csv"))?;
    summary.write_record(["scene", "kind", "power", "score", "clipped"])?;
    for scene in &ds.scenes {
        let (h, w) = scene.pair.dims();
        let lb = low_beam(&ds, scene).ok();
        let (field, clipped) = match a.kind {
            BaselineKind::Static => {
                let Some(p) = a.budget else { bail!("static needs --budget") };
                let (eta, _) = eta_for(&ds, scene, p)?;
                let n = normalize_budget(static_mean.as_ref().expect("static mean"), eta, 1e-6)?;
                (n.field, n.clipped)
            }
            BaselineKind::Uniform => {
                let Some(p) = a.budget else { bail!("uniform needs --budget") };
                let (eta, _) = eta_for(&ds, scene, p)?;
                let ctx = BaselineContext {
                    height: h,
                    width: w,
                    budget: Some(eta),
                    ..Default::default()
                };
                (baseline_field(BaselineKind::Uniform, &ctx)?, false)
            }
            kind => {
                if a.budget.is_some() {
                    bail!("{kind} has a fixed power; drop --budget");
                }
                let ctx = BaselineContext {
                    height: h,
                    width: w,
                    camera: ds.camera.as_ref(),
                    depth: scene.pair.depth(),
                    low_beam: Some(&lbm),
                    high_beam: Some(&hbm),
                    ..Default::default()
                };
                (baseline_field(kind, &ctx)?, false)
            }
        };
        let dir = a.out.join(&scene.id);
        fs::create_dir_all(&dir)?;
        field.save(dir.join("field_final.lidf"))?;
        let image = relight(&scene.pair, &field)?;
        image.save(dir.join("image_final.lidf"))?;
        let score = scorer.evaluate(&image, scene.pair.annotations(), false)?.total;
        let power = match &lb {
            Some(lb) => lightloop_core::harness::power_of(&field, lb)?,
            None => f64::NAN,
        };
        summary.write_record([
            scene.id.clone(),
            a.kind.to_string(),
            power.to_string(),
            score.to_string(),
            clipped.to_string(),
        ])?;
    }
    summary.flush()?;
    println!("{}", a.out.display());
    Ok(())
}

fn eval(a: EvalArgs) -> Result<()> {
    let ds = load_dataset(&a.dataset)?;
    let methods = MethodSpec::parse_list(&a.methods)?;
    let mut cfg: ExperimentConfig = match &a.config {
        Some(p) => serde_json::from_slice(&fs::read(p)?).with_context(|| format!("parsing {}", p.display()))?,
        None => ExperimentConfig::default(),
    };
    cfg.scorers = a.scorer.specs()?;
    if let Some(s) = a.steps {
        cfg.gradient.steps = s;
    }
    if let Some(n) = a.refine_steps {
        cfg.refinement.n_steps = n;
    }
    if let Some(k) = a.scored_steps {
        cfg.refinement.k_scored = k;
    }
    if let Some(b) = &a.bands {
        cfg.bands = DistanceBands::parse(b)?;
    }
    if let Some(w) = a.workers {
        cfg.workers = w;
    }
    if let Some(s) = a.seed {
        cfg.seed = s;
    }
    let report = run_experiment(&ds, &methods, &cfg)?;
    report.write(&a.out)?;
    write_json(&a.out.join("config.json"), &serde_json::to_value(&cfg)?)?;
    print!("{}", render_markdown(&report));
    Ok(())
}

fn warp_calib(a: WarpCalibArgs) -> Result<()> {
    fs::create_dir_all(&a.out)?;
    let calib = match &a.calib {
        Some(p) => CalibrationFile::load(p)?,
        None => {
            let c = CalibrationFile::default_for(SynthParams::default().camera()?);
            c.save(a.out.join("calib.json"))?;
            c
        }
    };
    let table = match &a.table {
        Some(p) => AngularIntensityTable::from_csv(fs::File::open(p)?)?,
        None => AngularIntensityTable::synthetic_low_beam(),
    };
    let hl = calib.headlight_model(table)?;
    let cam: CameraModel = calib.camera;
    let depth = a.depth.as_ref().map(DepthMap::load).transpose()?;
    let plane = a.plane.unwrap_or(calib.plane_distance);
    let reference = match &depth {
        Some(d) => ReferenceGeometry::Depth(d),
        None => ReferenceGeometry::Plane(plane),
    };
    let warp = build_warp(&cam, &hl, reference)?;
    warp.save(a.out.join("warp.lidf"))?;

    let mut summary = json!({
        "headlight": [warp.width, warp.height],
        "camera": [warp.camera_width, warp.camera_height],
        "valid": warp.valid_count(),
        "reference": if depth.is_some() { json!("depth") } else { json!({ "plane": plane }) },
    });
    if depth.is_none() {
        let (mut worst, mut sum, mut n) = (0.0f64, 0.0, 0usize);
        for y in 0..warp.height {
            for x in 0..warp.width {
                let Some((u, v)) = warp.get(y, x) else { continue };
                let Some((hu, hv)) = camera_to_headlight(&cam, &hl, u as f64, v as f64, plane) else {
                    continue;
                };
                let e = (hu - x as f64).abs().max((hv - y as f64).abs());
                worst = worst.max(e);
                sum += e;
                n += 1;
            }
        }
        summary["round_trip_px"] = json!({ "max": worst, "mean": if n > 0 { sum / n as f64 } else { 0.0 } });
    }
    write_json(&a.out.join("warp_summary.json"), &summary)?;
    println!("{}", serde_json::to_string_pretty(&summary)?);
    Ok(())
}

fn report(a: ReportArgs) -> Result<()> {
    let path = if a.metrics.is_dir() { a.metrics.join("metrics.json") } else { a.metrics.clone() };
    let report: ExperimentReport =
        serde_json::from_slice(&fs::read(&path).with_context(|| format!("reading {}", path.display()))?)?;
    match a.format {
        ReportFormat::Markdown => print!("{}", render_markdown(&report)),
        ReportFormat::Csv => {
            let dir = path.parent().unwrap_or(Path::new("."));
            print!("{}", fs::read_to_string(dir.join("metrics.csv"))?);
        }
    }
    Ok(())
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map_or_else(|| "-".into(), |x| format!("{x:.3}"))
}

fn render_markdown(r: &ExperimentReport) -> String {
    let bands: Vec<String> = r
        .band_edges
        .windows(2)
        .map(|e| match (e[0], e[1]) {
            (Some(lo), Some(hi)) => format!("{lo}-{hi}m"),
            (Some(lo), None) => format!("{lo}m+"),
            _ => "band".into(),
        })
        .collect();
    let mut out = format!(
        "| method | power | P | R | mAP50 | mAP50-90 | mIoU | mAcc | {} |\n",
        bands.join(" | ")
    );
    out += &format!("|{}\n", "---|".repeat(8 + bands.len()));
    for m in &r.methods {
        match &m.metrics {
            Some(x) => {
                let b: Vec<String> = x.bands.iter().map(|b| fmt_opt(b.as_ref().and_then(|b| b.map50))).collect();
                out += &format!(
                    "| {} | {:.3} | {:.3} | {:.3} | {} | {} | {} | {} | {} |\n",
                    m.method,
                    x.power,
                    x.precision,
                    x.recall,
                    fmt_opt(x.map50),
                    fmt_opt(x.map50_90),
                    fmt_opt(x.miou),
                    fmt_opt(x.macc),
                    b.join(" | ")
                );
            }
            None => {
                let reason = match &m.status {
                    lightloop_core::harness::CellStatus::Failed { reason } => reason.as_str(),
                    _ => "no metrics",
                };
                out += &format!("| {} | failed: {} |\n", m.method, reason);
            }
        }
    }
    out
}

fn csv_writer(path: &Path) -> Result<csv::Writer<fs::File>> {
    csv::Writer::from_path(path).with_context(|| format!("creating {}", path.display()))
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    let result = match cli.command {
        Command::SynthGen(a) => synth_gen(a),
        Command::Optimize(a) => optimize(a),
        Command::Baseline(a) => baseline(a),
        Command::Eval(a) => eval(a),
        Command::WarpCalib(a) => warp_calib(a),
        Command::Report(a) => report(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
