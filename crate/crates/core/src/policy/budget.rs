use serde::{Deserialize, Serialize};

use crate::error::{shape_err, Error, Result};
use crate::lightfield::{LightField, Residual};

/// Adds a residual to the previous field and clamps element-wise to `[0, 1]`.
pub fn residual_update(prev: &LightField, delta: &Residual) -> Result<LightField> {
    if prev.dims() != delta.dims() {
        return Err(shape_err("residual_update", delta.dims(), prev.dims()));
    }
    let (h, w) = prev.dims();
    LightField::from_clamped(
        h,
        w,
        prev.data()
            .iter()
            .zip(delta.data())
            .map(|(m, d)| m + d)
            .collect(),
    )
}

/// Output of [`normalize_budget`].
#[derive(Debug, Clone, PartialEq)]
pub struct Normalized {
    pub field: LightField,
    /// Set when rescaling pushed at least one pixel above 1, so the mean
    /// falls short of the target.
    pub clipped: bool,
    /// Set when `mean(m) < epsilon`, so the scale was capped by the guard
    /// and the mean stays below the target.
    pub guarded: bool,
}

fn check_eta(eta: f64) -> Result<()> {
    if !(eta > 0.0 && eta <= 1.0) {
        return Err(Error::Budget(format!("target mean {eta} outside (0, 1]")));
    }
    Ok(())
}

/// Rescales `m` so its mean is `eta`: `m * eta / max(epsilon, mean(m))`,
/// then clips to `[0, 1]`.
pub fn normalize_budget(m: &LightField, eta: f64, epsilon: f64) -> Result<Normalized> {
    check_eta(eta)?;
    if epsilon.is_nan() || epsilon <= 0.0 {
        return Err(Error::Budget(format!("epsilon must be positive, got {epsilon}")));
    }
    let mean = m.mean();
    let scale = eta / mean.max(epsilon);
    let mut clipped = false;
    let data = m
        .data()
        .iter()
        .map(|&v| {
            let s = v as f64 * scale;
            if s > 1.0 {
                clipped = true;
                1.0
            } else {
                s as f32
            }
        })
        .collect();
    let (h, w) = m.dims();
    Ok(Normalized {
        field: LightField::new(h, w, data)?,
        clipped,
        guarded: mean < epsilon,
    })
}

/// Projects onto `mean <= eta`: fields already within budget pass through
/// unchanged, others are rescaled as in [`normalize_budget`].
pub fn cap_budget(m: &LightField, eta: f64, epsilon: f64) -> Result<LightField> {
    check_eta(eta)?;
    if m.mean() <= eta {
        Ok(m.clone())
    } else {
        Ok(normalize_budget(m, eta, epsilon)?.field)
    }
}

/// Linear ramp of the energy target over training epochs.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BudgetSchedule {
    pub eta_final: f64,
    /// Fraction of `eta_final` used at epoch 0.
    pub alpha: f64,
    pub e_max: u32,
}

impl BudgetSchedule {
    pub const DEFAULT_ALPHA: f64 = 0.1;

    pub fn new(eta_final: f64, alpha: f64, e_max: u32) -> Result<Self> {
        check_eta(eta_final)?;
        if !(alpha > 0.0 && alpha <= 1.0) {
            return Err(Error::Budget(format!("alpha {alpha} outside (0, 1]")));
        }
        if e_max < 1 {
            return Err(Error::Budget("e_max must be at least 1".into()));
        }
        Ok(Self {
            eta_final,
            alpha,
            e_max,
        })
    }

    pub fn eta(&self, epoch: u32) -> Result<f64> {
        scheduled_eta(self, epoch)
    }
}

/// `eta_final * (alpha + (1 - alpha) * e / e_max)`.
pub fn scheduled_eta(s: &BudgetSchedule, epoch: u32) -> Result<f64> {
    if epoch > s.e_max {
        return Err(Error::Schedule {
            epoch,
            e_max: s.e_max,
        });
    }
    Ok(s.eta_final * (s.alpha + (1.0 - s.alpha) * epoch as f64 / s.e_max as f64))
}
