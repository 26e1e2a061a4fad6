//! Brute-force reference for detection matching and AP on integer boxes.

use std::collections::BTreeSet;

use lightloop_core::harness::{GroundTruth, Prediction};
use lightloop_core::BBox;

/// Integer-corner IoU as an exact fraction, then divided once.
pub fn iou(a: &BBox, b: &BBox) -> f64 {
    let c = |v: f32| v.round() as i64;
    let area = |x: &BBox| (c(x.x2) - c(x.x1)).max(0) * (c(x.y2) - c(x.y1)).max(0);
    let ix = (c(a.x2).min(c(b.x2)) - c(a.x1).max(c(b.x1))).max(0);
    let iy = (c(a.y2).min(c(b.y2)) - c(a.y1).max(c(b.y1))).max(0);
    let inter = ix * iy;
    let union = area(a) + area(b) - inter;
    if union <= 0 {
        0.0
    } else {
        inter as f64 / union as f64
    }
}

fn rank(preds: &[Prediction]) -> Vec<usize> {
    let mut keyed: Vec<(i64, usize)> = preds
        .iter()
        .enumerate()
        .map(|(i, p)| (-(p.confidence * 1e9).round() as i64, i))
        .collect();
    keyed.sort();
    keyed.into_iter().map(|(_, i)| i).collect()
}

fn eligible(p: &Prediction, g: &GroundTruth, t: f64) -> bool {
    p.image == g.image && p.class_id == g.class_id && iou(&p.bbox, &g.bbox) >= t
}

/// Every injective partial assignment of predictions to ground truths.
fn assignments(np: usize, ng: usize) -> Vec<Vec<Option<usize>>> {
    let mut out = vec![];
    let mut cur = vec![None; np];
    fn go(i: usize, ng: usize, used: &mut BTreeSet<usize>, cur: &mut Vec<Option<usize>>, out: &mut Vec<Vec<Option<usize>>>) {
        if i == cur.len() {
            out.push(cur.clone());
            return;
        }
        cur[i] = None;
        go(i + 1, ng, used, cur, out);
        for g in 0..ng {
            if used.insert(g) {
                cur[i] = Some(g);
                go(i + 1, ng, used, cur, out);
                used.remove(&g);
            }
        }
        cur[i] = None;
    }
    go(0, ng, &mut BTreeSet::new(), &mut cur, &mut out);
    out
}

/// Whether `a` is the matching a confidence-ordered greedy pass produces:
/// each prediction, in rank order, holds the best remaining eligible ground
/// truth (ties to the lowest index) or nothing when none remains.
fn is_greedy(a: &[Option<usize>], order: &[usize], preds: &[Prediction], gts: &[GroundTruth], t: f64) -> bool {
    let mut used = BTreeSet::new();
    for &pi in order {
        let p = &preds[pi];
        let free: Vec<usize> = (0..gts.len()).filter(|g| !used.contains(g) && eligible(p, &gts[*g], t)).collect();
        match a[pi] {
            None => {
                if !free.is_empty() {
                    return false;
                }
            }
            Some(g) => {
                if !free.contains(&g) {
                    return false;
                }
                let v = iou(&p.bbox, &gts[g].bbox);
                if free.iter().any(|&o| {
                    let w = iou(&p.bbox, &gts[o].bbox);
                    w > v || (w == v && o < g)
                }) {
                    return false;
                }
                used.insert(g);
            }
        }
    }
    true
}

/// The unique greedy matching, found by enumeration.
pub fn brute_match(preds: &[Prediction], gts: &[GroundTruth], t: f64) -> Vec<Option<usize>> {
    let order = rank(preds);
    let found: Vec<_> = assignments(preds.len(), gts.len())
        .into_iter()
        .filter(|a| is_greedy(a, &order, preds, gts, t))
        .collect();
    assert_eq!(found.len(), 1, "greedy matching must be unique");
    found.into_iter().next().unwrap()
}

/// 101-point AP evaluated with integer recall comparisons.
pub fn brute_ap(ranked: &[bool], n_gt: usize) -> f64 {
    if n_gt == 0 {
        return 0.0;
    }
    let mut points = vec![];
    let mut tp = 0;
    for (k, &hit) in ranked.iter().enumerate() {
        tp += hit as usize;
        points.push((tp, k + 1));
    }
    let mut sum = 0.0;
    for r in 0..=100usize {
        let best = points
            .iter()
            .filter(|(tp, _)| 100 * tp >= r * n_gt)
            .map(|&(tp, k)| tp as f64 / k as f64)
            .fold(0.0, f64::max);
        sum += best;
    }
    sum / 101.0
}

#[derive(Debug, Clone, PartialEq)]
pub struct Counts {
    pub tp: usize,
    pub fp: usize,
    pub fn_: usize,
    pub map: Option<f64>,
}

pub fn brute_metrics(preds: &[Prediction], gts: &[GroundTruth], t: f64) -> Counts {
    let m = brute_match(preds, gts, t);
    let tp = m.iter().flatten().count();
    let order = rank(preds);
    let classes: BTreeSet<u32> = preds.iter().map(|p| p.class_id).chain(gts.iter().map(|g| g.class_id)).collect();
    let aps: Vec<f64> = classes
        .iter()
        .map(|&c| {
            let ranked: Vec<bool> = order.iter().filter(|&&i| preds[i].class_id == c).map(|&i| m[i].is_some()).collect();
            brute_ap(&ranked, gts.iter().filter(|g| g.class_id == c).count())
        })
        .collect();
    Counts {
        tp,
        fp: preds.len() - tp,
        fn_: gts.len() - tp,
        map: (!aps.is_empty()).then(|| aps.iter().sum::<f64>() / aps.len() as f64),
    }
}

/// A random case on an 8x8 integer grid over two images and two classes.
/// Most predictions jitter a ground truth, and confidences are coarse so
/// ties occur.
pub fn random_case<R: rand::Rng>(rng: &mut R) -> (Vec<Prediction>, Vec<GroundTruth>) {
    fn bbox<R: rand::Rng>(rng: &mut R) -> BBox {
        let x1 = rng.random_range(0..7);
        let y1 = rng.random_range(0..7);
        let x2 = x1 + rng.random_range(1..=8 - x1);
        let y2 = y1 + rng.random_range(1..=8 - y1);
        BBox::new(x1 as f32, y1 as f32, x2 as f32, y2 as f32)
    }
    fn jitter<R: rand::Rng>(rng: &mut R, b: &BBox) -> BBox {
        let mut d = || rng.random_range(-1i32..=1) as f32;
        let x1 = (b.x1 + d()).clamp(0.0, 7.0);
        let y1 = (b.y1 + d()).clamp(0.0, 7.0);
        let x2 = (b.x2 + d()).clamp(x1 + 1.0, 8.0);
        let y2 = (b.y2 + d()).clamp(y1 + 1.0, 8.0);
        BBox::new(x1, y1, x2, y2)
    }
    let ng = rng.random_range(0..=4);
    let gts: Vec<GroundTruth> = (0..ng)
        .map(|_| GroundTruth {
            image: rng.random_range(0..2),
            class_id: rng.random_range(0..2),
            bbox: bbox(rng),
            distance: Some([5.0, 30.0, 65.0, 100.0][rng.random_range(0..4)]),
        })
        .collect();
    let np = rng.random_range(0..=4);
    let preds = (0..np)
        .map(|_| {
            let confidence = rng.random_range(1..=4) as f64 / 4.0;
            if !gts.is_empty() && rng.random_bool(0.75) {
                let g = gts[rng.random_range(0..gts.len())];
                Prediction {
                    image: if rng.random_bool(0.9) { g.image } else { 1 - g.image },
                    class_id: if rng.random_bool(0.9) { g.class_id } else { 1 - g.class_id },
                    bbox: jitter(rng, &g.bbox),
                    confidence,
                }
            } else {
                Prediction {
                    image: rng.random_range(0..2),
                    class_id: rng.random_range(0..2),
                    bbox: bbox(rng),
                    confidence,
                }
            }
        })
        .collect();
    (preds, gts)
}
