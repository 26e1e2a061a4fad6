use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::budget::normalize_budget;
use crate::error::{Error, Result};
use crate::lightfield::{DepthMap, LightField};
use crate::photometry::{project_beam, CameraModel, HeadlightModel};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BaselineKind {
    Uniform,
    NoEgo,
    LowBeam,
    HighBeam,
    Static,
}

impl BaselineKind {
    pub const ALL: [BaselineKind; 5] = [
        BaselineKind::Uniform,
        BaselineKind::NoEgo,
        BaselineKind::LowBeam,
        BaselineKind::HighBeam,
        BaselineKind::Static,
    ];

    pub fn as_str(&self) -> &'static str {
        match self {
            BaselineKind::Uniform => "uniform",
            BaselineKind::NoEgo => "no_ego",
            BaselineKind::LowBeam => "low_beam",
            BaselineKind::HighBeam => "high_beam",
            BaselineKind::Static => "static",
        }
    }
}

impl fmt::Display for BaselineKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for BaselineKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|k| k.as_str() == s.replace('-', "_"))
            .ok_or_else(|| Error::Config(format!("unknown baseline {s:?}")))
    }
}

/// Inputs a baseline may need. Unused fields may stay `None`.
#[derive(Debug, Clone, Copy, Default)]
pub struct BaselineContext<'a> {
    pub height: usize,
    pub width: usize,
    /// Target mean for `uniform` and `static`.
    pub budget: Option<f64>,
    pub camera: Option<&'a CameraModel>,
    pub depth: Option<&'a DepthMap>,
    pub low_beam: Option<&'a HeadlightModel>,
    pub high_beam: Option<&'a HeadlightModel>,
    /// Field collection averaged by `static`.
    pub fields: Option<&'a [LightField]>,
}

fn need<T>(v: Option<T>, kind: BaselineKind, what: &str) -> Result<T> {
    v.ok_or_else(|| Error::Config(format!("baseline {kind} needs {what}")))
}

/// Pixelwise mean of a non-empty collection of equally sized fields.
pub fn mean_field(fields: &[LightField]) -> Result<LightField> {
    let first = fields
        .first()
        .ok_or_else(|| Error::Config("static baseline over an empty collection".into()))?;
    let (h, w) = first.dims();
    let mut acc = vec![0.0f64; h * w];
    for f in fields {
        if f.dims() != (h, w) {
            return Err(crate::error::shape_err("field average", f.dims(), (h, w)));
        }
        for (a, v) in acc.iter_mut().zip(f.data()) {
            *a += *v as f64;
        }
    }
    let n = fields.len() as f64;
    LightField::new(h, w, acc.into_iter().map(|a| (a / n) as f32).collect())
}

pub fn baseline_field(kind: BaselineKind, ctx: &BaselineContext<'_>) -> Result<LightField> {
    let (h, w) = (ctx.height, ctx.width);
    match kind {
        BaselineKind::Uniform => {
            let b = need(ctx.budget, kind, "a budget")?;
            if !(0.0..=1.0).contains(&b) {
                return Err(Error::Budget(format!("uniform budget {b} outside [0, 1]")));
            }
            LightField::constant(h, w, b as f32)
        }
        BaselineKind::NoEgo => Ok(LightField::zeros(h, w)),
        BaselineKind::LowBeam | BaselineKind::HighBeam => {
            let cam = need(ctx.camera, kind, "a camera model")?;
            let depth = need(ctx.depth, kind, "a depth map")?;
            let hl = if kind == BaselineKind::LowBeam {
                need(ctx.low_beam, kind, "a low beam model")?
            } else {
                need(ctx.high_beam, kind, "a high beam model")?
            };
            let m = project_beam(cam, hl, depth)?;
            if m.dims() != (h, w) {
                return Err(crate::error::shape_err("beam baseline", m.dims(), (h, w)));
            }
            Ok(m)
        }
        BaselineKind::Static => {
            let b = need(ctx.budget, kind, "a budget")?;
            let fields = need(ctx.fields, kind, "a field collection")?;
            let mean = mean_field(fields)?;
            if mean.dims() != (h, w) {
                return Err(crate::error::shape_err("static baseline", mean.dims(), (h, w)));
            }
            Ok(normalize_budget(&mean, b, 1e-6)?.field)
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ctx<'a>() -> BaselineContext<'a> {
        BaselineContext {
            height: 4,
            width: 6,
            ..Default::default()
        }
    }

    #[test]
    fn uniform_and_no_ego() {
        let c = BaselineContext {
            budget: Some(0.6),
            ..ctx()
        };
        assert!(baseline_field(BaselineKind::Uniform, &c).unwrap().data().iter().all(|&v| v == 0.6));
        assert!(baseline_field(BaselineKind::NoEgo, &c).unwrap().data().iter().all(|&v| v == 0.0));
        assert!(matches!(baseline_field(BaselineKind::Uniform, &ctx()), Err(Error::Config(_))));
    }

    #[test]
    fn static_mean_then_renormalize() {
        let fields = [
            LightField::constant(4, 6, 0.2).unwrap(),
            LightField::constant(4, 6, 0.6).unwrap(),
        ];
        let c = BaselineContext {
            budget: Some(0.4),
            fields: Some(&fields),
            ..ctx()
        };
        let m = baseline_field(BaselineKind::Static, &c).unwrap();
        assert!(m.data().iter().all(|&v| (v - 0.4).abs() < 1e-6));
        assert!(matches!(
            baseline_field(BaselineKind::Static, &BaselineContext { budget: Some(0.4), ..ctx() }),
            Err(Error::Config(_))
        ));
    }

    #[test]
    fn beams_need_context() {
        for k in [BaselineKind::LowBeam, BaselineKind::HighBeam] {
            assert!(matches!(baseline_field(k, &ctx()), Err(Error::Config(_))));
        }
        let cam = CameraModel::from_fov(6, 4, 60.0, 40.0).unwrap();
        let depth = DepthMap::constant(4, 6, 10.0);
        let lb = HeadlightModel::low_beam();
        let c = BaselineContext {
            camera: Some(&cam),
            depth: Some(&depth),
            low_beam: Some(&lb),
            ..ctx()
        };
        let m = baseline_field(BaselineKind::LowBeam, &c).unwrap();
        assert_eq!(m, project_beam(&cam, &lb, &depth).unwrap());
        assert!(baseline_field(BaselineKind::HighBeam, &c).is_err());
    }

    #[test]
    fn names_roundtrip() {
        for k in BaselineKind::ALL {
            assert_eq!(k.as_str().parse::<BaselineKind>().unwrap(), k);
        }
        assert_eq!("no-ego".parse::<BaselineKind>().unwrap(), BaselineKind::NoEgo);
        assert!("fog".parse::<BaselineKind>().is_err());
    }
}
