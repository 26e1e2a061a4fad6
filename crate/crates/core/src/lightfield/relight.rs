use super::{clamp_unit, Image, LightField, ScenePair};
use crate::error::{shape_err, Error, Result};

/// Blends the two renders of `pair` by the light field:
/// `out = i_full * m + i_off * (1 - m)` per pixel and channel.
pub fn relight(pair: &ScenePair, m: &LightField) -> Result<Image> {
    if m.dims() != pair.dims() {
        return Err(shape_err("relight", m.dims(), pair.dims()));
    }
    let c = pair.channels();
    let full = pair.i_full().data();
    let off = pair.i_off().data();
    let mut out = Vec::with_capacity(full.len());
    for (p, &mv) in m.data().iter().enumerate() {
        let inv = 1.0 - mv;
        for k in p * c..(p + 1) * c {
            out.push(clamp_unit(full[k] * mv + off[k] * inv));
        }
    }
    let (h, w) = pair.dims();
    Ok(Image::from_parts_unchecked(h, w, c, out))
}

/// Backward pass of [`relight`]: given `dL/dÎ` (image-shaped, channel
/// interleaved) returns `dL/dM` per pixel,
/// `sum_c upstream[p, c] * (i_full[p, c] - i_off[p, c])`.
pub fn relight_gradient(pair: &ScenePair, upstream: &[f32]) -> Result<Vec<f32>> {
    let full = pair.i_full().data();
    let off = pair.i_off().data();
    if upstream.len() != full.len() {
        return Err(Error::Shape(format!(
            "upstream gradient length {} != image length {}",
            upstream.len(),
            full.len()
        )));
    }
    let c = pair.channels();
    Ok(upstream
        .chunks_exact(c)
        .enumerate()
        .map(|(p, g)| {
            g.iter()
                .enumerate()
                .map(|(k, gv)| gv * (full[p * c + k] - off[p * c + k]))
                .sum()
        })
        .collect())
}

/// Attenuation-only relighting of an image captured under low beam.
///
/// Light can only be removed where the requested field is below the low-beam
/// field: `m' = 1 - max(m_lb - m, 0)` and `out = i_lb * m'`.
pub fn darken_only(i_lb: &Image, m_lb: &LightField, m: &LightField) -> Result<(Image, LightField)> {
    if m_lb.dims() != i_lb.dims() {
        return Err(shape_err("darken_only low-beam field", m_lb.dims(), i_lb.dims()));
    }
    if m.dims() != i_lb.dims() {
        return Err(shape_err("darken_only field", m.dims(), i_lb.dims()));
    }
    let attenuation: Vec<f32> = m_lb
        .data()
        .iter()
        .zip(m.data())
        .map(|(&lb, &v)| clamp_unit(1.0 - (lb - v).max(0.0)))
        .collect();
    let c = i_lb.channels();
    let out: Vec<f32> = i_lb
        .data()
        .iter()
        .enumerate()
        .map(|(k, &v)| v * attenuation[k / c])
        .collect();
    let (h, w) = i_lb.dims();
    Ok((
        Image::from_parts_unchecked(h, w, c, out),
        LightField::new(h, w, attenuation)?,
    ))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::lightfield::Image;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn const_pair(h: usize, w: usize, c: usize, full: f32, off: f32) -> ScenePair {
        ScenePair::new(
            Image::filled(h, w, c, full).unwrap(),
            Image::filled(h, w, c, off).unwrap(),
        )
        .unwrap()
    }

    fn random_pair(rng: &mut ChaCha8Rng, h: usize, w: usize, c: usize) -> ScenePair {
        let n = h * w * c;
        let full = (0..n).map(|_| rng.random::<f32>()).collect();
        let off = (0..n).map(|_| rng.random::<f32>()).collect();
        ScenePair::new(
            Image::new(h, w, c, full).unwrap(),
            Image::new(h, w, c, off).unwrap(),
        )
        .unwrap()
    }

    fn random_field(rng: &mut ChaCha8Rng, h: usize, w: usize) -> LightField {
        LightField::new(h, w, (0..h * w).map(|_| rng.random::<f32>()).collect()).unwrap()
    }

    #[test]
    fn endpoints_and_midpoint() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let pair = random_pair(&mut rng, 5, 7, 3);
        let ones = LightField::constant(5, 7, 1.0).unwrap();
        let zeros = LightField::zeros(5, 7);
        assert_eq!(relight(&pair, &ones).unwrap(), *pair.i_full());
        assert_eq!(relight(&pair, &zeros).unwrap(), *pair.i_off());

        let pair = const_pair(3, 3, 3, 0.8, 0.2);
        let half = LightField::constant(3, 3, 0.5).unwrap();
        for v in relight(&pair, &half).unwrap().data() {
            assert!((v - 0.5).abs() < 1e-7);
        }
    }

    #[test]
    fn dimension_mismatch_is_shape_error() {
        let pair = const_pair(3, 3, 1, 0.8, 0.2);
        let m = LightField::zeros(3, 4);
        assert!(matches!(relight(&pair, &m), Err(Error::Shape(_))));
        assert!(matches!(relight_gradient(&pair, &[0.0; 4]), Err(Error::Shape(_))));
    }

    #[test]
    fn gradient_trivial_cases() {
        let pair = const_pair(4, 4, 3, 0.3, 0.3);
        let g = relight_gradient(&pair, &[1.0; 48]).unwrap();
        assert!(g.iter().all(|&v| v == 0.0));

        let pair = const_pair(4, 4, 3, 1.0, 0.0);
        let g = relight_gradient(&pair, &[1.0; 48]).unwrap();
        assert!(g.iter().all(|&v| v == 3.0));
    }

    #[test]
    fn gradient_matches_finite_differences() {
        // Sum-loss with random per-element weights; central differences.
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let pair = random_pair(&mut rng, 8, 8, 3);
        let weights: Vec<f32> = (0..8 * 8 * 3).map(|_| rng.random_range(-1.0..1.0)).collect();
        let m = LightField::from_fn(8, 8, |_, _| rng.random_range(0.1..0.9));
        let loss = |field: &LightField| -> f64 {
            relight(&pair, field)
                .unwrap()
                .data()
                .iter()
                .zip(&weights)
                .map(|(&a, &b)| a as f64 * b as f64)
                .sum()
        };
        let analytic = relight_gradient(&pair, &weights).unwrap();
        let h = 1e-3f32;
        let (mut num, mut den) = (0.0f64, 0.0f64);
        for p in 0..64 {
            let mut plus = m.data().to_vec();
            let mut minus = m.data().to_vec();
            plus[p] += h;
            minus[p] -= h;
            let step = (plus[p] - minus[p]) as f64;
            let fd = (loss(&LightField::new(8, 8, plus).unwrap())
                - loss(&LightField::new(8, 8, minus).unwrap()))
                / step;
            num += (fd - analytic[p] as f64).powi(2);
            den += fd * fd;
        }
        assert!((num / den).sqrt() <= 1e-4, "rel err {}", (num / den).sqrt());
    }

    #[test]
    fn darken_only_cases() {
        let img = Image::filled(2, 2, 3, 0.5).unwrap();
        let lb = LightField::constant(2, 2, 0.6).unwrap();
        let m = LightField::constant(2, 2, 0.4).unwrap();
        let (out, factor) = darken_only(&img, &lb, &m).unwrap();
        assert!(factor.data().iter().all(|v| (v - 0.8).abs() < 1e-6));
        assert!(out.data().iter().all(|v| (v - 0.4).abs() < 1e-6));

        let brighter = LightField::constant(2, 2, 0.9).unwrap();
        assert_eq!(darken_only(&img, &lb, &brighter).unwrap().0, img);

        let full = LightField::constant(2, 2, 1.0).unwrap();
        let (black, _) = darken_only(&img, &full, &LightField::zeros(2, 2)).unwrap();
        assert!(black.data().iter().all(|&v| v == 0.0));
    }

    proptest! {
        #[test]
        fn relight_is_affine_and_bounded(seed in any::<u64>(), lambda in 0.0f32..=1.0) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let pair = random_pair(&mut rng, 6, 5, 3);
            let m1 = random_field(&mut rng, 6, 5);
            let m2 = random_field(&mut rng, 6, 5);
            let mix = LightField::new(6, 5, m1.data().iter().zip(m2.data())
                .map(|(a, b)| lambda * a + (1.0 - lambda) * b).collect()).unwrap();
            let lhs = relight(&pair, &mix).unwrap();
            let r1 = relight(&pair, &m1).unwrap();
            let r2 = relight(&pair, &m2).unwrap();
            for k in 0..lhs.data().len() {
                let rhs = lambda * r1.data()[k] + (1.0 - lambda) * r2.data()[k];
                prop_assert!((lhs.data()[k] - rhs).abs() <= 1e-6);
                let (a, b) = (pair.i_full().data()[k], pair.i_off().data()[k]);
                prop_assert!(lhs.data()[k] >= a.min(b) - 1e-7 && lhs.data()[k] <= a.max(b) + 1e-7);
            }
        }

        #[test]
        fn darken_only_never_brightens(seed in any::<u64>()) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let img = random_pair(&mut rng, 4, 4, 3).i_full().clone();
            let lb = random_field(&mut rng, 4, 4);
            let m = random_field(&mut rng, 4, 4);
            let (once, _) = darken_only(&img, &lb, &m).unwrap();
            let (twice, _) = darken_only(&once, &lb, &m).unwrap();
            for k in 0..img.data().len() {
                prop_assert!(once.data()[k] <= img.data()[k]);
                prop_assert!(twice.data()[k] <= once.data()[k]);
            }
        }
    }
}
