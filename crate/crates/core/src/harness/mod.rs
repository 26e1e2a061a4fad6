//! Datasets, the toy scene generator, metrics and experiment runs.

mod dataset;
mod detector;
mod experiment;
mod metrics;
mod synth;

pub use dataset::{
    AnnotationRecord, Clutter, Dataset, DatasetManifest, LabelMap, Scene, SceneRecord, Split,
    CLASS_NAMES,
};
pub use detector::{scene_candidates, Candidate, ProxyDetector, ProxyOutput};
pub use experiment::{
    run_experiment, CellStatus, ExperimentConfig, ExperimentReport, FieldSource, MethodReport,
    MethodSpec, MetricsReport, SceneRow,
};
pub use metrics::{
    average_precision, detection_metrics, distance_banded, match_greedy, power_of, BandMetrics,
    Confusion, DetectionMetrics, DistanceBands, GroundTruth, Prediction, ThresholdMetrics,
    IOU_50_90,
};
pub use synth::{generate_toy_corpus, SynthParams};
