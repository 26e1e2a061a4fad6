use serde::{Deserialize, Serialize};

use super::dataset::Scene;
use crate::lightfield::{Annotation, BBox, Image};
use crate::scorer::{luminance, object_region, Detection};

/// Candidate region examined by the proxy detector.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Candidate {
    pub class_id: u32,
    pub bbox: BBox,
}

/// Annotated objects followed by clutter.
pub fn scene_candidates(scene: &Scene) -> Vec<Candidate> {
    scene
        .pair
        .annotations()
        .iter()
        .map(|a| Candidate {
            class_id: a.class_id,
            bbox: a.bbox,
        })
        .chain(scene.clutter.iter().map(|c| Candidate {
            class_id: c.class_id,
            bbox: c.bbox,
        }))
        .collect()
}

/// A stand-in for a detector and a segmenter driven by local contrast.
///
/// A candidate is detected when `|c| >= tau`, where `c` is the mean
/// luminance of its box minus that of the surrounding ring. Confidence is
/// `|c| / (|c| + tau)`. The reported box is shrunk about its center by
/// `max_shrink * tau / |c|` of its size on each side, so weakly visible
/// objects are localized poorly.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ProxyDetector {
    pub tau: f64,
    pub ring_fraction: f64,
    pub max_shrink: f64,
}

impl Default for ProxyDetector {
    fn default() -> Self {
        Self {
            tau: 0.03,
            ring_fraction: 0.25,
            max_shrink: 0.25,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ProxyOutput {
    pub detections: Vec<Detection>,
    /// Per-pixel labels, 0 for background and `class_id + 1` otherwise.
    pub labels: Vec<u8>,
}

impl ProxyDetector {
    fn contrast(&self, lum: &[f64], c: &Candidate, w: usize, h: usize) -> Option<(f64, f64)> {
        let r = object_region(&Annotation::new(c.class_id, c.bbox), w, h, self.ring_fraction)?;
        let mean = |idx: &[usize]| {
            if idx.is_empty() {
                0.0
            } else {
                idx.iter().map(|&i| lum[i]).sum::<f64>() / idx.len() as f64
            }
        };
        let ring = mean(&r.ring);
        Some((mean(&r.interior) - ring, ring))
    }

    pub fn run(&self, image: &Image, candidates: &[Candidate]) -> ProxyOutput {
        let (h, w) = image.dims();
        let lum = luminance(image);
        let mut found: Vec<(Detection, &Candidate, f64, f64)> = Vec::new();
        for cand in candidates {
            let Some((c, ring)) = self.contrast(&lum, cand, w, h) else {
                continue;
            };
            let a = c.abs();
            if a < self.tau || a == 0.0 {
                continue;
            }
            let s = self.max_shrink * (self.tau / a).min(1.0);
            let b = cand.bbox;
            let (dx, dy) = (s as f32 * b.width(), s as f32 * b.height());
            found.push((
                Detection {
                    class_id: cand.class_id,
                    bbox: BBox::new(b.x1 + dx, b.y1 + dy, b.x2 - dx, b.y2 - dy),
                    confidence: (a / (a + self.tau)) as f32,
                },
                cand,
                c,
                ring,
            ));
        }

        let mut labels = vec![0u8; w * h];
        let mut order: Vec<usize> = (0..found.len()).collect();
        order.sort_by(|&i, &j| found[i].0.confidence.total_cmp(&found[j].0.confidence).then(i.cmp(&j)));
        for i in order {
            let (_, cand, c, ring) = &found[i];
            let (x0, x1, y0, y1) = cand.bbox.pixel_range(w, h);
            for y in y0..y1 {
                for x in x0..x1 {
                    let k = y * w + x;
                    if (lum[k] - ring) * c.signum() >= c.abs() / 2.0 {
                        labels[k] = cand.class_id as u8 + 1;
                    }
                }
            }
        }
        ProxyOutput {
            detections: found.into_iter().map(|f| f.0).collect(),
            labels,
        }
    }
}
