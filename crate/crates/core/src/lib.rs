//! Budget-constrained active illumination for night-time perception.
//!
//! The crate models a high-definition headlight as a per-pixel light field in
//! the camera frame. A scene is represented by two co-registered renders, one
//! with the headlight at full power and one with it off; any light field is
//! turned into an observed image by blending the two. On top of that operator
//! sit the budget machinery, a closed-loop refinement driver, built-in
//! optimizers, classic beam baselines and an evaluation harness.
//!
//! Modules:
//! - [`lightfield`]: images, light fields, scene pairs and the relighting operators.
//! - [`photometry`]: pinhole camera/projector geometry, beam tables and the runtime warp.
//! - [`policy`]: initialization, budget handling, refinement loop, optimizers, baselines.
//! - [`scorer`]: proxy perception scores, weighted aggregation and the external scorer client.
//! - [`harness`]: datasets, the toy scene generator, metrics and experiment orchestration.

pub mod error;
pub mod harness;
pub mod lightfield;
pub mod photometry;
pub mod policy;
pub mod scorer;

pub use error::{Error, Result, ScorerError};
pub use lightfield::{
    darken_only, relight, relight_gradient, Annotation, BBox, DepthMap, Image, LightField, Mask,
    ScenePair,
};

pub use photometry::{
    AngularIntensityTable, CameraModel, Extrinsics, HeadlightModel, WarpMap,
};
pub use policy::{
    normalize_budget, refine, residual_update, scheduled_eta, BudgetSchedule, Policy,
    PolicyInput, RefinementConfig, Residual, Trajectory,
};
pub use scorer::{Evaluation, ScoreReport, Scorer, ScorerKind, ScorerSpec};
