//! Differentiable proxy scores.

use serde::{Deserialize, Serialize};

use super::{Evaluation, ScoreReport, Scorer, TaskScore};
use crate::lightfield::{Annotation, Image};

/// Rec. 709 luminance weights.
pub const LUMA_WEIGHTS: [f64; 3] = [0.2126, 0.7152, 0.0722];

fn channel_weights(channels: usize) -> &'static [f64] {
    if channels == 1 {
        &[1.0]
    } else {
        &LUMA_WEIGHTS
    }
}

/// Per-pixel luminance. Single-channel images are their own luminance.
pub fn luminance(image: &Image) -> Vec<f64> {
    let w = channel_weights(image.channels());
    image
        .data()
        .chunks_exact(image.channels())
        .map(|px| px.iter().zip(w).map(|(&v, &k)| v as f64 * k).sum())
        .collect()
}

/// Spreads a per-pixel luminance gradient onto the image channels.
fn luma_to_image_gradient(dl: &[f64], channels: usize) -> Vec<f32> {
    let w = channel_weights(channels);
    dl.iter()
        .flat_map(|&g| w.iter().map(move |&k| (g * k) as f32))
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ContrastParams {
    /// Weight of the saturation penalty.
    pub lambda_sat: f64,
    /// Luminance above which pixels count as saturated.
    pub saturation_knee: f64,
    /// Ring width as a fraction of the box diagonal.
    pub ring_fraction: f64,
}

impl Default for ContrastParams {
    fn default() -> Self {
        Self {
            lambda_sat: 1.0,
            saturation_knee: 0.95,
            ring_fraction: 0.25,
        }
    }
}

/// Interior and surrounding-ring pixel indices of one annotation.
pub(crate) struct ObjectRegion {
    pub interior: Vec<usize>,
    pub ring: Vec<usize>,
}

pub(crate) fn object_region(
    ann: &Annotation,
    width: usize,
    height: usize,
    ring_fraction: f64,
) -> Option<ObjectRegion> {
    let (x0, x1, y0, y1) = ann.bbox.pixel_range(width, height);
    if x0 == x1 || y0 == y1 {
        return None;
    }
    let interior: Vec<usize> = (y0..y1)
        .flat_map(|y| (x0..x1).map(move |x| y * width + x))
        .collect();
    let margin = (ring_fraction * ann.bbox.diagonal() as f64) as f32;
    let outer = ann.bbox.expand(margin);
    let (ox0, ox1, oy0, oy1) = outer.pixel_range(width, height);
    let ring = (oy0..oy1)
        .flat_map(|y| (ox0..ox1).map(move |x| (y, x)))
        .filter(|&(y, x)| !(x >= x0 && x < x1 && y >= y0 && y < y1))
        .map(|(y, x)| y * width + x)
        .collect();
    Some(ObjectRegion { interior, ring })
}

fn mean_at(values: &[f64], idx: &[usize]) -> f64 {
    if idx.is_empty() {
        0.0
    } else {
        idx.iter().map(|&i| values[i]).sum::<f64>() / idx.len() as f64
    }
}

/// Local-contrast proxy for detection.
///
/// For every annotated object with a nonempty interior, the signed contrast
/// `c = mean(L_interior) - mean(L_ring)` is squashed by `c / (1 + |c|)`; the
/// score is the mean over objects minus `lambda_sat * mean(max(L - knee, 0))`.
/// An object whose ring falls entirely outside the image is compared against
/// zero. Returns the score and its gradient with respect to the image.
pub fn contrast_score(image: &Image, annotations: &[Annotation], p: &ContrastParams) -> (f64, Vec<f32>) {
    let (h, w) = image.dims();
    let lum = luminance(image);
    let n = lum.len() as f64;
    let mut dl = vec![0.0f64; lum.len()];

    let regions: Vec<ObjectRegion> = annotations
        .iter()
        .filter_map(|a| {
            let r = object_region(a, w, h, p.ring_fraction);
            if r.is_none() {
                log::warn!("skipping annotation with empty pixel footprint: {:?}", a.bbox);
            }
            r
        })
        .collect();

    let mut contrast = 0.0;
    if !regions.is_empty() {
        let k = regions.len() as f64;
        for r in &regions {
            let c = mean_at(&lum, &r.interior) - mean_at(&lum, &r.ring);
            contrast += c / (1.0 + c.abs()) / k;
            let d = 1.0 / ((1.0 + c.abs()).powi(2) * k);
            let din = d / r.interior.len() as f64;
            r.interior.iter().for_each(|&i| dl[i] += din);
            if !r.ring.is_empty() {
                let dring = d / r.ring.len() as f64;
                r.ring.iter().for_each(|&i| dl[i] -= dring);
            }
        }
    }

    let mut penalty = 0.0;
    for (i, &l) in lum.iter().enumerate() {
        if l > p.saturation_knee {
            penalty += l - p.saturation_knee;
            dl[i] -= p.lambda_sat / n;
        }
    }
    let score = contrast - p.lambda_sat * penalty / n;
    (score, luma_to_image_gradient(&dl, image.channels()))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ExposureParams {
    pub sigma: f64,
}

impl Default for ExposureParams {
    fn default() -> Self {
        Self { sigma: 0.25 }
    }
}

/// Well-exposedness proxy for segmentation: mean of
/// `exp(-(L - 0.5)^2 / (2 sigma^2))` over pixels, with its image gradient.
pub fn exposure_score(image: &Image, p: &ExposureParams) -> (f64, Vec<f32>) {
    let lum = luminance(image);
    let n = lum.len() as f64;
    let s2 = p.sigma * p.sigma;
    let mut score = 0.0;
    let dl: Vec<f64> = lum
        .iter()
        .map(|&l| {
            let k = (-(l - 0.5).powi(2) / (2.0 * s2)).exp();
            score += k;
            -k * (l - 0.5) / s2 / n
        })
        .collect();
    (score / n, luma_to_image_gradient(&dl, image.channels()))
}

fn proxy_evaluation(task: &str, (score, grad): (f64, Vec<f32>), want_gradient: bool) -> Evaluation {
    Evaluation {
        report: ScoreReport {
            scores: vec![TaskScore {
                task: task.into(),
                value: score,
                higher_is_better: true,
            }],
            ..Default::default()
        },
        total: score,
        gradient: want_gradient.then_some(grad),
    }
}

#[derive(Debug, Clone, Default)]
pub struct ContrastScorer {
    params: ContrastParams,
}

impl ContrastScorer {
    pub fn new(params: ContrastParams) -> Self {
        Self { params }
    }
}

impl Scorer for ContrastScorer {
    fn name(&self) -> &str {
        "contrast"
    }

    fn differentiable(&self) -> bool {
        true
    }

    fn evaluate(
        &mut self,
        image: &Image,
        annotations: &[Annotation],
        want_gradient: bool,
    ) -> crate::Result<Evaluation> {
        Ok(proxy_evaluation(
            "contrast",
            contrast_score(image, annotations, &self.params),
            want_gradient,
        ))
    }
}

#[derive(Debug, Clone, Default)]
pub struct ExposureScorer {
    params: ExposureParams,
}

impl ExposureScorer {
    pub fn new(params: ExposureParams) -> Self {
        Self { params }
    }
}

impl Scorer for ExposureScorer {
    fn name(&self) -> &str {
        "exposure"
    }

    fn differentiable(&self) -> bool {
        true
    }

    fn evaluate(
        &mut self,
        image: &Image,
        _annotations: &[Annotation],
        want_gradient: bool,
    ) -> crate::Result<Evaluation> {
        Ok(proxy_evaluation(
            "exposure",
            exposure_score(image, &self.params),
            want_gradient,
        ))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::lightfield::BBox;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    /// Central differences of `f` over every image element, relative error
    /// of the whole gradient vector.
    fn fd_rel_error(img: &Image, analytic: &[f32], f: impl Fn(&Image) -> f64) -> f64 {
        let h = 1e-3f32;
        let (hh, ww, cc) = (img.height(), img.width(), img.channels());
        let (mut num, mut den) = (0.0, 0.0);
        for k in 0..img.data().len() {
            let mut plus = img.data().to_vec();
            let mut minus = img.data().to_vec();
            plus[k] = (plus[k] + h).min(1.0);
            minus[k] = (minus[k] - h).max(0.0);
            let step = (plus[k] - minus[k]) as f64;
            let fd = (f(&Image::new(hh, ww, cc, plus).unwrap())
                - f(&Image::new(hh, ww, cc, minus).unwrap()))
                / step;
            num += (fd - analytic[k] as f64).powi(2);
            den += fd * fd;
        }
        (num / den.max(1e-300)).sqrt()
    }

    #[test]
    fn equal_interior_and_ring_gives_zero_contrast() {
        let img = Image::filled(20, 20, 3, 0.3).unwrap();
        let anns = vec![Annotation::new(0, BBox::new(5.0, 5.0, 12.0, 12.0))];
        let (s, _) = contrast_score(&img, &anns, &ContrastParams::default());
        assert!(s.abs() < 1e-12);
    }

    #[test]
    fn saturated_image_penalty() {
        let img = Image::filled(8, 8, 3, 1.0).unwrap();
        let (s, _) = contrast_score(&img, &[], &ContrastParams::default());
        // Luminance weights sum to 1 up to rounding.
        assert!((s + 0.05).abs() < 1e-9, "{s}");
    }

    #[test]
    fn zero_area_box_is_skipped() {
        let img = Image::filled(8, 8, 1, 0.2).unwrap();
        let anns = vec![Annotation::new(0, BBox::new(3.0, 3.0, 3.0, 6.0))];
        let (s, g) = contrast_score(&img, &anns, &ContrastParams::default());
        assert_eq!(s, 0.0);
        assert!(g.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn exposure_cases() {
        let p = ExposureParams::default();
        let mid = Image::filled(4, 4, 3, 0.5).unwrap();
        assert!((exposure_score(&mid, &p).0 - 1.0).abs() < 1e-9);
        let dark = exposure_score(&Image::filled(4, 4, 1, 0.0).unwrap(), &p).0;
        let bright = exposure_score(&Image::filled(4, 4, 1, 1.0).unwrap(), &p).0;
        assert_eq!(dark, bright);
        let s = exposure_score(&Image::filled(4, 4, 1, 0.75).unwrap(), &p).0;
        assert!((s - (-0.5f64).exp()).abs() < 1e-12);
        assert!((s - 0.6065).abs() < 1e-4);
    }

    fn random_case(seed: u64) -> (Image, Vec<Annotation>) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        // Keep luminance away from the saturation kink so central
        // differences do not straddle it.
        let img = loop {
            let img = Image::from_fn(32, 32, 3, |_, _, _| rng.random::<f32>()).unwrap();
            if luminance(&img).iter().all(|l| (l - 0.95).abs() > 2e-3) {
                break img;
            }
        };
        let anns = (0..3)
            .map(|i| {
                let x = rng.random_range(0.0..24.0f32);
                let y = rng.random_range(0.0..24.0f32);
                Annotation::new(i, BBox::new(x, y, x + rng.random_range(2.0..8.0), y + rng.random_range(2.0..8.0)))
            })
            .collect();
        (img, anns)
    }

    #[test]
    fn contrast_gradient_matches_finite_differences() {
        let p = ContrastParams::default();
        for seed in 0..3 {
            let (img, anns) = random_case(seed);
            let (_, g) = contrast_score(&img, &anns, &p);
            let err = fd_rel_error(&img, &g, |im| contrast_score(im, &anns, &p).0);
            assert!(err <= 1e-3, "seed {seed}: {err}");
        }
    }

    #[test]
    fn exposure_gradient_matches_finite_differences() {
        let p = ExposureParams::default();
        let (img, _) = random_case(11);
        let (_, g) = exposure_score(&img, &p);
        let err = fd_rel_error(&img, &g, |im| exposure_score(im, &p).0);
        assert!(err <= 1e-3, "{err}");
    }

    proptest! {
        #[test]
        fn brighter_interior_never_lowers_contrast(seed in any::<u64>(), boost in 0.0f32..0.3) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let base = Image::from_fn(16, 16, 3, |_, _, _| rng.random_range(0.0..0.6)).unwrap();
            let bbox = BBox::new(4.0, 5.0, 10.0, 11.0);
            let anns = vec![Annotation::new(0, bbox)];
            let lifted = Image::from_fn(16, 16, 3, |y, x, c| {
                let v = base.get(y, x, c);
                if bbox.contains_pixel(x, y) { v + boost } else { v }
            }).unwrap();
            let p = ContrastParams::default();
            prop_assert!(contrast_score(&lifted, &anns, &p).0 >= contrast_score(&base, &anns, &p).0);
        }
    }
}
