use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::lightfield::{BBox, LightField};

/// IoU thresholds 0.50, 0.55, ..., 0.90.
pub const IOU_50_90: [f64; 9] = [0.5, 0.55, 0.6, 0.65, 0.7, 0.75, 0.8, 0.85, 0.9];

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GroundTruth {
    /// Index of the image the object belongs to.
    pub image: usize,
    pub class_id: u32,
    pub bbox: BBox,
    pub distance: Option<f32>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Prediction {
    pub image: usize,
    pub class_id: u32,
    pub bbox: BBox,
    pub confidence: f64,
}

/// Prediction indices sorted by descending confidence, ties by index.
fn confidence_order(preds: &[Prediction]) -> Vec<usize> {
    let mut order: Vec<usize> = (0..preds.len()).collect();
    order.sort_by(|&a, &b| preds[b].confidence.total_cmp(&preds[a].confidence).then(a.cmp(&b)));
    order
}

/// Greedy matching at one IoU threshold.
///
/// Predictions are visited by descending confidence; each takes the
/// still-unmatched ground truth of the same image and class with the highest
/// IoU, provided it reaches `iou`. Returns the matched ground truth per
/// prediction.
pub fn match_greedy(preds: &[Prediction], gts: &[GroundTruth], iou: f64) -> Vec<Option<usize>> {
    let mut taken = vec![false; gts.len()];
    let mut matched = vec![None; preds.len()];
    for pi in confidence_order(preds) {
        let p = &preds[pi];
        let mut best: Option<(usize, f64)> = None;
        for (gi, g) in gts.iter().enumerate() {
            if taken[gi] || g.image != p.image || g.class_id != p.class_id {
                continue;
            }
            let v = p.bbox.iou(&g.bbox);
            if v >= iou && best.is_none_or(|(_, b)| v > b) {
                best = Some((gi, v));
            }
        }
        if let Some((gi, _)) = best {
            taken[gi] = true;
            matched[pi] = Some(gi);
        }
    }
    matched
}

/// 101-point interpolated average precision of a ranked list of
/// true/false positive flags against `n_gt` ground truths.
pub fn average_precision(ranked_tp: &[bool], n_gt: usize) -> f64 {
    if n_gt == 0 || ranked_tp.is_empty() {
        return 0.0;
    }
    let mut tp = 0usize;
    let mut recall = Vec::with_capacity(ranked_tp.len());
    let mut precision = Vec::with_capacity(ranked_tp.len());
    for (k, &hit) in ranked_tp.iter().enumerate() {
        tp += hit as usize;
        recall.push(tp as f64 / n_gt as f64);
        precision.push(tp as f64 / (k + 1) as f64);
    }
    for i in (0..precision.len().saturating_sub(1)).rev() {
        precision[i] = precision[i].max(precision[i + 1]);
    }
    let mut sum = 0.0;
    let mut k = 0;
    for r in 0..=100 {
        let target = r as f64 / 100.0;
        while k < recall.len() && recall[k] < target - 1e-12 {
            k += 1;
        }
        if k < recall.len() {
            sum += precision[k];
        }
    }
    sum / 101.0
}

/// Per-class AP from a matching. Classes with neither ground truth nor
/// predictions are left out.
fn class_aps(preds: &[Prediction], gts: &[GroundTruth], matched: &[Option<usize>]) -> BTreeMap<u32, f64> {
    let mut classes: BTreeMap<u32, (Vec<bool>, usize)> = BTreeMap::new();
    for g in gts {
        classes.entry(g.class_id).or_default().1 += 1;
    }
    for pi in confidence_order(preds) {
        classes.entry(preds[pi].class_id).or_default().0.push(matched[pi].is_some());
    }
    classes
        .into_iter()
        .map(|(c, (ranked, n_gt))| (c, average_precision(&ranked, n_gt)))
        .collect()
}

fn mean(values: impl IntoIterator<Item = f64>) -> Option<f64> {
    let (mut sum, mut n) = (0.0, 0usize);
    for v in values {
        sum += v;
        n += 1;
    }
    (n > 0).then(|| sum / n as f64)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ThresholdMetrics {
    pub iou: f64,
    pub tp: usize,
    pub fp: usize,
    #[serde(rename = "fn")]
    pub fn_: usize,
    pub ap: BTreeMap<u32, f64>,
    /// Mean over classes; `None` when no class has data.
    pub map: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DetectionMetrics {
    pub per_threshold: Vec<ThresholdMetrics>,
}

impl DetectionMetrics {
    pub fn at(&self, iou: f64) -> Option<&ThresholdMetrics> {
        self.per_threshold.iter().find(|t| (t.iou - iou).abs() < 1e-9)
    }

    /// Precision at the first threshold. Zero without predictions.
    pub fn precision(&self) -> f64 {
        self.per_threshold.first().map_or(0.0, |t| {
            if t.tp + t.fp == 0 { 0.0 } else { t.tp as f64 / (t.tp + t.fp) as f64 }
        })
    }

    /// Recall at the first threshold. Zero without ground truth.
    pub fn recall(&self) -> f64 {
        self.per_threshold.first().map_or(0.0, |t| {
            if t.tp + t.fn_ == 0 { 0.0 } else { t.tp as f64 / (t.tp + t.fn_) as f64 }
        })
    }

    pub fn map50(&self) -> Option<f64> {
        self.at(0.5).and_then(|t| t.map)
    }

    /// mAP averaged over all thresholds.
    pub fn map_mean(&self) -> Option<f64> {
        if self.per_threshold.iter().any(|t| t.map.is_none()) {
            return None;
        }
        mean(self.per_threshold.iter().filter_map(|t| t.map))
    }
}

/// Precision, recall and AP at each IoU threshold.
pub fn detection_metrics(preds: &[Prediction], gts: &[GroundTruth], iou_thresholds: &[f64]) -> DetectionMetrics {
    let per_threshold = iou_thresholds
        .iter()
        .map(|&iou| {
            let matched = match_greedy(preds, gts, iou);
            let tp = matched.iter().filter(|m| m.is_some()).count();
            let ap = class_aps(preds, gts, &matched);
            ThresholdMetrics {
                iou,
                tp,
                fp: preds.len() - tp,
                fn_: gts.len() - tp,
                map: mean(ap.values().copied()),
                ap,
            }
        })
        .collect();
    DetectionMetrics { per_threshold }
}

/// Distance band edges starting at 0; the last band is open-ended.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DistanceBands {
    edges: Vec<f64>,
}

impl Default for DistanceBands {
    fn default() -> Self {
        Self {
            edges: vec![0.0, 20.0, 60.0, 70.0, f64::INFINITY],
        }
    }
}

impl DistanceBands {
    /// `edges` must start at 0 and increase strictly. A final infinite edge
    /// is appended when missing.
    pub fn new(mut edges: Vec<f64>) -> Result<Self> {
        if edges.first() != Some(&0.0) {
            return Err(Error::Config("distance bands must start at 0".into()));
        }
        if edges.iter().any(|e| e.is_nan()) || edges.windows(2).any(|w| w[1] <= w[0]) {
            return Err(Error::Config(format!("band edges {edges:?} are not increasing")));
        }
        if edges.last().is_some_and(|e| e.is_finite()) {
            edges.push(f64::INFINITY);
        }
        if edges.len() < 2 {
            return Err(Error::Config("need at least one band".into()));
        }
        Ok(Self { edges })
    }

    /// Parses a comma-separated list such as `0,20,60,70`.
    pub fn parse(s: &str) -> Result<Self> {
        let edges = s
            .split(',')
            .map(|t| {
                let t = t.trim();
                if t == "inf" {
                    Ok(f64::INFINITY)
                } else {
                    t.parse::<f64>().map_err(|_| Error::Config(format!("bad band edge {t:?}")))
                }
            })
            .collect::<Result<Vec<_>>>()?;
        Self::new(edges)
    }

    pub fn edges(&self) -> &[f64] {
        &self.edges
    }

    pub fn len(&self) -> usize {
        self.edges.len() - 1
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn band_of(&self, distance: f64) -> usize {
        self.edges[1..].iter().position(|&hi| distance < hi).unwrap_or(self.len() - 1)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BandMetrics {
    pub lo: f64,
    /// Upper edge; `None` for the open-ended band.
    pub hi: Option<f64>,
    pub gts: usize,
    pub preds: usize,
    pub tp: usize,
    pub fp: usize,
    #[serde(rename = "fn")]
    pub fn_: usize,
    pub map50: Option<f64>,
}

/// Per-band metrics at IoU 0.5. Bands with neither ground truth nor
/// predictions are `None`.
///
/// Ground truths go to the band of their distance. A matched prediction
/// follows its ground truth; an unmatched one is charged to the band of the
/// ground truth in the same image it overlaps most, or to the last band
/// when it overlaps none.
pub fn distance_banded(preds: &[Prediction], gts: &[GroundTruth], bands: &DistanceBands) -> Result<Vec<Option<BandMetrics>>> {
    let gt_band = gts
        .iter()
        .map(|g| {
            g.distance
                .map(|d| bands.band_of(d as f64))
                .ok_or_else(|| Error::InvalidValue("ground truth without distance".into()))
        })
        .collect::<Result<Vec<_>>>()?;
    let matched = match_greedy(preds, gts, 0.5);
    let last = bands.len() - 1;
    let pred_band: Vec<usize> = preds
        .iter()
        .zip(&matched)
        .map(|(p, m)| match m {
            Some(gi) => gt_band[*gi],
            None => {
                let mut best: Option<(usize, f64)> = None;
                for (gi, g) in gts.iter().enumerate().filter(|(_, g)| g.image == p.image) {
                    let v = p.bbox.iou(&g.bbox);
                    if v > 0.0 && best.is_none_or(|(_, b)| v > b) {
                        best = Some((gi, v));
                    }
                }
                best.map_or(last, |(gi, _)| gt_band[gi])
            }
        })
        .collect();

    Ok((0..bands.len())
        .map(|b| {
            let bp: Vec<usize> = (0..preds.len()).filter(|&i| pred_band[i] == b).collect();
            let bg: Vec<usize> = (0..gts.len()).filter(|&i| gt_band[i] == b).collect();
            if bp.is_empty() && bg.is_empty() {
                return None;
            }
            let sub_preds: Vec<Prediction> = bp.iter().map(|&i| preds[i]).collect();
            let sub_gts: Vec<GroundTruth> = bg.iter().map(|&i| gts[i]).collect();
            // Reindex the global matching into the subset.
            let sub_match: Vec<Option<usize>> = bp
                .iter()
                .map(|&i| matched[i].map(|gi| bg.iter().position(|&x| x == gi).expect("matched gt in band")))
                .collect();
            let tp = sub_match.iter().filter(|m| m.is_some()).count();
            let ap = class_aps(&sub_preds, &sub_gts, &sub_match);
            Some(BandMetrics {
                lo: bands.edges[b],
                hi: bands.edges[b + 1].is_finite().then_some(bands.edges[b + 1]),
                gts: bg.len(),
                preds: bp.len(),
                tp,
                fp: bp.len() - tp,
                fn_: bg.len() - tp,
                map50: mean(ap.values().copied()),
            })
        })
        .collect())
}

/// Pixel confusion counts over `n` labels, rows ground truth.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Confusion {
    n: usize,
    counts: Vec<u64>,
}

impl Confusion {
    pub fn new(n: usize) -> Self {
        Self {
            n,
            counts: vec![0; n * n],
        }
    }

    pub fn add(&mut self, gt: &[u8], pred: &[u8]) -> Result<()> {
        if gt.len() != pred.len() {
            return Err(Error::Shape(format!("label lengths {} and {}", gt.len(), pred.len())));
        }
        for (&g, &p) in gt.iter().zip(pred) {
            let (g, p) = (g as usize, p as usize);
            if g >= self.n || p >= self.n {
                return Err(Error::InvalidValue(format!("label {} outside 0..{}", g.max(p), self.n)));
            }
            self.counts[g * self.n + p] += 1;
        }
        Ok(())
    }

    pub fn merge(&mut self, other: &Confusion) {
        for (a, b) in self.counts.iter_mut().zip(&other.counts) {
            *a += b;
        }
    }

    fn at(&self, g: usize, p: usize) -> u64 {
        self.counts[g * self.n + p]
    }

    /// Mean IoU over labels present in ground truth or prediction.
    pub fn miou(&self) -> Option<f64> {
        mean((0..self.n).filter_map(|c| {
            let tp = self.at(c, c);
            let row: u64 = (0..self.n).map(|p| self.at(c, p)).sum();
            let col: u64 = (0..self.n).map(|g| self.at(g, c)).sum();
            let union = row + col - tp;
            (union > 0).then(|| tp as f64 / union as f64)
        }))
    }

    /// Mean per-label accuracy over labels present in ground truth.
    pub fn macc(&self) -> Option<f64> {
        mean((0..self.n).filter_map(|c| {
            let row: u64 = (0..self.n).map(|p| self.at(c, p)).sum();
            (row > 0).then(|| self.at(c, c) as f64 / row as f64)
        }))
    }
}

/// Power relative to the low beam: `mean(m) / mean(m_lb)`.
pub fn power_of(m: &LightField, m_lb: &LightField) -> Result<f64> {
    if m.dims() != m_lb.dims() {
        return Err(crate::error::shape_err("power_of", m.dims(), m_lb.dims()));
    }
    let lb = m_lb.mean();
    if lb.is_nan() || lb <= 0.0 {
        return Err(Error::ZeroReference);
    }
    Ok(m.mean() / lb)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn gt(image: usize, class_id: u32, b: [f32; 4], d: f32) -> GroundTruth {
        GroundTruth {
            image,
            class_id,
            bbox: BBox::new(b[0], b[1], b[2], b[3]),
            distance: Some(d),
        }
    }

    fn pred(image: usize, class_id: u32, b: [f32; 4], confidence: f64) -> Prediction {
        Prediction {
            image,
            class_id,
            bbox: BBox::new(b[0], b[1], b[2], b[3]),
            confidence,
        }
    }

    #[test]
    fn perfect_predictions() {
        let gts = vec![gt(0, 0, [0., 0., 10., 10.], 5.), gt(0, 1, [20., 20., 30., 40.], 5.), gt(1, 0, [5., 5., 9., 9.], 5.)];
        let preds: Vec<_> = gts.iter().map(|g| pred(g.image, g.class_id, [g.bbox.x1, g.bbox.y1, g.bbox.x2, g.bbox.y2], 1.0)).collect();
        let m = detection_metrics(&preds, &gts, &IOU_50_90);
        assert_eq!(m.map50(), Some(1.0));
        assert_eq!(m.map_mean(), Some(1.0));
        assert_eq!(m.precision(), 1.0);
        assert_eq!(m.recall(), 1.0);
    }

    #[test]
    fn no_predictions() {
        let gts = vec![gt(0, 0, [0., 0., 10., 10.], 5.)];
        let m = detection_metrics(&[], &gts, &[0.5]);
        assert_eq!(m.recall(), 0.0);
        assert_eq!(m.map50(), Some(0.0));
        let empty = detection_metrics(&[], &[], &[0.5]);
        assert_eq!(empty.map50(), None);
    }

    #[test]
    fn hand_enumerated_curve() {
        // gt A = [0,0,10,10], gt B = [20,0,30,10].
        // p1 (0.9) hits A at IoU 0.6, p2 (0.8) duplicates A, p3 (0.7) misses.
        let gts = vec![gt(0, 0, [0., 0., 10., 10.], 5.), gt(0, 0, [20., 0., 30., 10.], 5.)];
        let preds = vec![
            pred(0, 0, [0., 0., 10., 6.], 0.9),
            pred(0, 0, [0., 0., 10., 10.5], 0.8),
            pred(0, 0, [50., 50., 60., 60.], 0.7),
        ];
        assert!((preds[0].bbox.iou(&gts[0].bbox) - 0.6).abs() < 1e-9);
        let m = detection_metrics(&preds, &gts, &[0.5]);
        let t = &m.per_threshold[0];
        assert_eq!((t.tp, t.fp, t.fn_), (1, 2, 1));
        // Ranked flags T F F: recall 0.5 reached with precision 1, never
        // exceeded, so recall points 0..=50 score 1 and the rest 0.
        assert!((m.map50().unwrap() - 51.0 / 101.0).abs() < 1e-12);
    }

    #[test]
    fn greedy_prefers_confident_and_overlapping() {
        let gts = vec![gt(0, 0, [0., 0., 10., 10.], 5.), gt(0, 0, [2., 0., 12., 10.], 5.)];
        let preds = vec![pred(0, 0, [1., 0., 11., 10.], 0.5), pred(0, 0, [2., 0., 12., 10.], 0.9)];
        assert_eq!(match_greedy(&preds, &gts, 0.5), vec![Some(0), Some(1)]);
        // Classes and images never cross.
        let other = vec![pred(1, 0, [0., 0., 10., 10.], 1.0), pred(0, 1, [0., 0., 10., 10.], 1.0)];
        assert_eq!(match_greedy(&other, &gts, 0.5), vec![None, None]);
    }

    #[test]
    fn bands_populate_and_sum() {
        let gts = vec![gt(0, 0, [0., 0., 10., 10.], 30.), gt(0, 0, [40., 0., 50., 10.], 35.)];
        let preds = vec![pred(0, 0, [0., 0., 10., 10.], 0.9), pred(0, 0, [80., 80., 90., 90.], 0.3)];
        let bands = DistanceBands::default();
        let b = distance_banded(&preds, &gts, &bands).unwrap();
        assert!(b[0].is_none() && b[2].is_none());
        let mid = b[1].as_ref().unwrap();
        assert_eq!((mid.gts, mid.tp, mid.fn_), (2, 1, 1));
        // The stray prediction overlaps nothing and lands in the last band.
        let last = b[3].as_ref().unwrap();
        assert_eq!((last.gts, last.fp), (0, 1));
        assert_eq!(last.map50, Some(0.0));
    }

    #[test]
    fn bands_match_subset_recomputation() {
        let gts = vec![
            gt(0, 0, [0., 0., 10., 10.], 10.),
            gt(0, 1, [20., 0., 30., 10.], 10.),
            gt(1, 0, [0., 0., 4., 4.], 40.),
            gt(1, 0, [10., 10., 14., 14.], 45.),
        ];
        let preds = vec![
            pred(0, 0, [0., 0., 10., 9.], 0.9),
            pred(0, 1, [21., 0., 30., 10.], 0.4),
            pred(1, 0, [0., 0., 4., 4.], 0.8),
            pred(1, 0, [10., 11., 14., 15.], 0.6),
            pred(1, 0, [30., 30., 34., 34.], 0.95),
        ];
        let bands = DistanceBands::new(vec![0.0, 20.0]).unwrap();
        let b = distance_banded(&preds, &gts, &bands).unwrap();
        let near = detection_metrics(&preds[..2], &gts[..2], &[0.5]);
        let far = detection_metrics(&preds[2..], &gts[2..], &[0.5]);
        assert_eq!(b[0].as_ref().unwrap().map50, near.map50());
        assert_eq!(b[1].as_ref().unwrap().map50, far.map50());
    }

    #[test]
    fn band_edges() {
        assert!(DistanceBands::new(vec![0.0, 20.0, 10.0]).is_err());
        assert!(DistanceBands::new(vec![5.0, 20.0]).is_err());
        let b = DistanceBands::parse("0,20,60,70").unwrap();
        assert_eq!(b, DistanceBands::default());
        assert_eq!(b.band_of(0.0), 0);
        assert_eq!(b.band_of(20.0), 1);
        assert_eq!(b.band_of(65.0), 2);
        assert_eq!(b.band_of(500.0), 3);
    }

    #[test]
    fn confusion_rates() {
        let mut c = Confusion::new(3);
        c.add(&[0, 0, 1, 1, 2], &[0, 1, 1, 1, 0]).unwrap();
        // IoU: class 0 = 1/3, class 1 = 2/3, class 2 = 0/1.
        assert!((c.miou().unwrap() - 1.0 / 3.0).abs() < 1e-12);
        // Acc: 1/2, 1, 0.
        assert!((c.macc().unwrap() - 0.5).abs() < 1e-12);
        assert!(c.add(&[0], &[5]).is_err());
    }

    #[test]
    fn power_cases() {
        let lb = LightField::from_fn(4, 4, |y, x| (y * 4 + x) as f32 / 16.0);
        assert!((power_of(&lb, &lb).unwrap() - 1.0).abs() < 1e-12);
        let scaled = LightField::from_fn(4, 4, |y, x| 0.6 * lb.get(y, x));
        assert!((power_of(&scaled, &lb).unwrap() - 0.6).abs() < 1e-6);
        let uniform = LightField::constant(4, 4, lb.mean() as f32).unwrap();
        assert!((power_of(&uniform, &lb).unwrap() - 1.0).abs() < 1e-6);
        assert!(matches!(power_of(&lb, &LightField::zeros(4, 4)), Err(Error::ZeroReference)));
    }
}
