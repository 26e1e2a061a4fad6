use std::io::{Read, Write};

use crate::error::{Error, Result};

/// Relative luminous intensity on a regular (horizontal, vertical) angle grid
/// in degrees. Vertical angles grow downward, matching image `y`.
#[derive(Debug, Clone, PartialEq)]
pub struct AngularIntensityTable {
    h_angles: Vec<f64>,
    v_angles: Vec<f64>,
    /// Row-major over vertical angles: `values[vi * h_angles.len() + hi]`.
    values: Vec<f64>,
}

fn strictly_increasing(v: &[f64]) -> bool {
    v.iter().all(|x| x.is_finite()) && v.windows(2).all(|w| w[0] < w[1])
}

/// Index of the grid cell containing `x` and the interpolation weight.
fn locate(grid: &[f64], x: f64) -> Option<(usize, f64)> {
    let (first, last) = (grid[0], grid[grid.len() - 1]);
    if !(x >= first && x <= last) {
        return None;
    }
    if grid.len() == 1 {
        return Some((0, 0.0));
    }
    let i = grid.partition_point(|&g| g <= x).clamp(1, grid.len() - 1) - 1;
    Some((i, (x - grid[i]) / (grid[i + 1] - grid[i])))
}

impl AngularIntensityTable {
    pub fn new(h_angles: Vec<f64>, v_angles: Vec<f64>, values: Vec<f64>) -> Result<Self> {
        if h_angles.is_empty() || v_angles.is_empty() {
            return Err(Error::Model("intensity table needs at least one angle per axis".into()));
        }
        if !strictly_increasing(&h_angles) || !strictly_increasing(&v_angles) {
            return Err(Error::Model("intensity table angles must be strictly increasing".into()));
        }
        if values.len() != h_angles.len() * v_angles.len() {
            return Err(Error::Model(format!(
                "intensity table has {} values for a {}x{} grid",
                values.len(),
                v_angles.len(),
                h_angles.len()
            )));
        }
        if values.iter().any(|v| !(v.is_finite() && *v >= 0.0)) {
            return Err(Error::Model("intensity values must be finite and >= 0".into()));
        }
        Ok(Self {
            h_angles,
            v_angles,
            values,
        })
    }

    /// Tabulates `f(h, v)` on a regular grid.
    pub fn from_fn(
        h: (f64, f64, f64),
        v: (f64, f64, f64),
        f: impl Fn(f64, f64) -> f64,
    ) -> Result<Self> {
        let axis = |(lo, hi, step): (f64, f64, f64)| -> Vec<f64> {
            let n = ((hi - lo) / step).round() as usize;
            (0..=n).map(|i| lo + i as f64 * step).collect()
        };
        let (ha, va) = (axis(h), axis(v));
        let values = va
            .iter()
            .flat_map(|&vv| ha.iter().map(move |&hh| (hh, vv)))
            .map(|(hh, vv)| f(hh, vv))
            .collect();
        Self::new(ha, va, values)
    }

    pub fn h_angles(&self) -> &[f64] {
        &self.h_angles
    }

    pub fn v_angles(&self) -> &[f64] {
        &self.v_angles
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn h_range(&self) -> (f64, f64) {
        (self.h_angles[0], self.h_angles[self.h_angles.len() - 1])
    }

    pub fn v_range(&self) -> (f64, f64) {
        (self.v_angles[0], self.v_angles[self.v_angles.len() - 1])
    }

    pub fn peak(&self) -> f64 {
        self.values.iter().copied().fold(0.0, f64::max)
    }

    /// Bilinear lookup; zero outside the tabulated range.
    pub fn sample(&self, h_deg: f64, v_deg: f64) -> f64 {
        let (Some((hi, hf)), Some((vi, vf))) =
            (locate(&self.h_angles, h_deg), locate(&self.v_angles, v_deg))
        else {
            return 0.0;
        };
        let nh = self.h_angles.len();
        let at = |v: usize, h: usize| self.values[v.min(self.v_angles.len() - 1) * nh + h.min(nh - 1)];
        let top = at(vi, hi) * (1.0 - hf) + at(vi, hi + 1) * hf;
        let bottom = at(vi + 1, hi) * (1.0 - hf) + at(vi + 1, hi + 1) * hf;
        top * (1.0 - vf) + bottom * vf
    }

    pub fn scaled(&self, s: f64) -> Result<Self> {
        Self::new(
            self.h_angles.clone(),
            self.v_angles.clone(),
            self.values.iter().map(|v| v * s).collect(),
        )
    }

    /// Rescales so the peak equals one. An all-zero table is returned as is.
    pub fn peak_normalized(&self) -> Self {
        let p = self.peak();
        if p > 0.0 {
            self.scaled(1.0 / p).expect("scaling keeps the table valid")
        } else {
            self.clone()
        }
    }

    /// Trapezoidal integral over the angle grid, in value x deg^2.
    pub fn integrated_power(&self) -> f64 {
        let weights = |g: &[f64]| -> Vec<f64> {
            if g.len() == 1 {
                return vec![1.0];
            }
            (0..g.len())
                .map(|i| {
                    let left = if i > 0 { g[i] - g[i - 1] } else { 0.0 };
                    let right = if i + 1 < g.len() { g[i + 1] - g[i] } else { 0.0 };
                    (left + right) / 2.0
                })
                .collect()
        };
        let (wh, wv) = (weights(&self.h_angles), weights(&self.v_angles));
        let nh = self.h_angles.len();
        self.values
            .iter()
            .enumerate()
            .map(|(k, v)| v * wh[k % nh] * wv[k / nh])
            .sum()
    }

    /// Reads the CSV layout: a header row of horizontal angles (first cell is
    /// a free label), then one row per vertical angle with the angle in the
    /// first column followed by intensities.
    pub fn from_csv<R: Read>(reader: R) -> Result<Self> {
        let mut rdr = csv::ReaderBuilder::new()
            .has_headers(false)
            .trim(csv::Trim::All)
            .from_reader(reader);
        let parse = |s: &str| -> Result<f64> {
            s.parse::<f64>()
                .map_err(|_| Error::Format(format!("invalid number `{s}` in intensity table")))
        };
        let mut rows = rdr.records();
        let header = rows
            .next()
            .ok_or_else(|| Error::Format("empty intensity table".into()))?
            .map_err(|e| Error::Format(e.to_string()))?;
        let h_angles = header.iter().skip(1).map(parse).collect::<Result<Vec<_>>>()?;
        let mut v_angles = Vec::new();
        let mut values = Vec::new();
        for row in rows {
            let row = row.map_err(|e| Error::Format(e.to_string()))?;
            let mut cells = row.iter();
            let Some(first) = cells.next() else { continue };
            v_angles.push(parse(first)?);
            let before = values.len();
            for c in cells {
                values.push(parse(c)?);
            }
            if values.len() - before != h_angles.len() {
                return Err(Error::Format(format!(
                    "row for vertical angle {first} has {} values, expected {}",
                    values.len() - before,
                    h_angles.len()
                )));
            }
        }
        Self::new(h_angles, v_angles, values)
    }

    pub fn to_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        let err = |e: csv::Error| Error::Format(e.to_string());
        let mut header = vec!["v\\h".to_string()];
        header.extend(self.h_angles.iter().map(|a| a.to_string()));
        w.write_record(&header).map_err(err)?;
        for (vi, v) in self.v_angles.iter().enumerate() {
            let mut row = vec![v.to_string()];
            let nh = self.h_angles.len();
            row.extend(self.values[vi * nh..(vi + 1) * nh].iter().map(|x| x.to_string()));
            w.write_record(&row).map_err(err)?;
        }
        w.flush()?;
        Ok(())
    }

    /// Synthetic low beam: asymmetric lobe below a sharp cutoff line that
    /// rises by 15 degrees on the right (curb) side.
    pub fn synthetic_low_beam() -> Self {
        Self::from_fn(LB_GRID.0, LB_GRID.1, low_beam_shape)
            .expect("valid synthetic table")
            .peak_normalized()
    }

    /// Synthetic high beam: centered wide lobe with 1.8x the integrated power
    /// of [`Self::synthetic_low_beam`] at the same unit peak.
    pub fn synthetic_high_beam() -> Self {
        let target = HIGH_TO_LOW_POWER * Self::synthetic_low_beam().integrated_power();
        let table = |k: f64| {
            Self::from_fn(LB_GRID.0, LB_GRID.1, |h, v| high_beam_shape(h, v, k))
                .expect("valid synthetic table")
        };
        let (mut lo, mut hi) = (0.1, 10.0);
        for _ in 0..80 {
            let mid = 0.5 * (lo + hi);
            if table(mid).integrated_power() < target {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        table(0.5 * (lo + hi))
    }
}

/// Integrated-power ratio of the synthetic high beam to the low beam.
pub const HIGH_TO_LOW_POWER: f64 = 1.8;

const LB_GRID: ((f64, f64, f64), (f64, f64, f64)) = ((-45.0, 45.0, 0.5), (-15.0, 15.0, 0.25));

fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

fn low_beam_shape(h: f64, v: f64) -> f64 {
    let cutoff = 0.57 - (h.max(0.0) * 15f64.to_radians().tan()).min(2.0);
    let spread = if h < 0.0 { 12.0 } else { 18.0 };
    let lateral = (-0.5 * (h / spread).powi(2)).exp();
    let below = v - cutoff;
    let vertical = (-0.5 * ((below - 1.5) / 3.0).powi(2)).exp() * sigmoid(below / 0.15);
    lateral * vertical + 0.01 * lateral
}

fn high_beam_shape(h: f64, v: f64, k: f64) -> f64 {
    (-0.5 * ((h / (10.0 * k)).powi(2) + (v / (3.5 * k)).powi(2))).exp()
}
