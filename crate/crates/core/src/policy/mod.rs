//! The illumination control loop.
//!
//! A policy maps the current observation and field to a residual update.
//! [`refine`] unrolls a policy on one scene, projecting every update back
//! onto the energy budget. Two built-in optimizers stand in for a learned
//! policy: projected gradient ascent through the relighting operator and a
//! blockwise perturbation search for scorers without gradients.

mod baseline;
mod blackbox;
mod budget;
mod gradient;
mod init;
mod refine;

pub use baseline::{baseline_field, mean_field, BaselineContext, BaselineKind};
pub use blackbox::{optimize_blackbox, BlackboxConfig, BlackboxOutcome};
pub use budget::{
    cap_budget, normalize_budget, residual_update, scheduled_eta, BudgetSchedule, Normalized,
};
pub use gradient::{optimize_gradient, GradientConfig, GradientOutcome, GradientPolicy};
pub use init::{init_field, InitConfig};
pub use refine::{refine, scored_steps, RefinementConfig, Step, StepScore, Trajectory};

pub use crate::lightfield::Residual;

use crate::error::Result;
use crate::lightfield::{Image, LightField};

/// Normalized pixel coordinates, `x = col / (w - 1)` and `y = row / (h - 1)`.
#[derive(Debug, Clone, PartialEq)]
pub struct CoordChannels {
    height: usize,
    width: usize,
    x: Vec<f32>,
    y: Vec<f32>,
}

impl CoordChannels {
    pub fn new(height: usize, width: usize) -> Self {
        let norm = |i: usize, n: usize| if n > 1 { i as f32 / (n - 1) as f32 } else { 0.0 };
        let mut x = Vec::with_capacity(height * width);
        let mut y = Vec::with_capacity(height * width);
        for r in 0..height {
            for c in 0..width {
                x.push(norm(c, width));
                y.push(norm(r, height));
            }
        }
        Self { height, width, x, y }
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.height, self.width)
    }

    pub fn x(&self) -> &[f32] {
        &self.x
    }

    pub fn y(&self) -> &[f32] {
        &self.y
    }
}

/// What a policy sees at one step.
#[derive(Debug, Clone, Copy)]
pub struct PolicyInput<'a> {
    pub image: &'a Image,
    pub prev_field: &'a LightField,
    pub coords: &'a CoordChannels,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PolicyDescriptor {
    pub name: String,
    /// The instance holds per-scene state and must not be shared across
    /// scene workers.
    pub single_scene: bool,
}

/// Maps an observation to a residual `ΔM` in `[-1, 1]` with the input's
/// dimensions.
pub trait Policy {
    fn descriptor(&self) -> PolicyDescriptor;

    fn propose(&mut self, input: &PolicyInput<'_>) -> Result<Residual>;
}

/// Always proposes `ΔM = 0`.
#[derive(Debug, Clone, Copy, Default)]
pub struct HoldPolicy;

impl Policy for HoldPolicy {
    fn descriptor(&self) -> PolicyDescriptor {
        PolicyDescriptor {
            name: "hold".into(),
            single_scene: false,
        }
    }

    fn propose(&mut self, input: &PolicyInput<'_>) -> Result<Residual> {
        let (h, w) = input.prev_field.dims();
        Ok(Residual::zeros(h, w))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn coords_span_unit_square() {
        let c = CoordChannels::new(3, 5);
        assert_eq!(c.x()[0], 0.0);
        assert_eq!(c.x()[4], 1.0);
        assert_eq!(c.y()[14], 1.0);
        assert_eq!(c.x()[2], 0.5);
        assert_eq!(CoordChannels::new(1, 1).x(), &[0.0]);
    }
}
