use lightloop_core::policy::{init_field, InitConfig, PolicyDescriptor, PolicyInput};
use lightloop_core::scorer::ScorerSpec;
use lightloop_core::{refine, Image, Policy, RefinementConfig, Residual, ScenePair};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Proposes uniform noise in `[-amp, amp]`, sometimes saturating.
struct NoisePolicy {
    rng: ChaCha8Rng,
    amp: f32,
}

impl Policy for NoisePolicy {
    fn descriptor(&self) -> PolicyDescriptor {
        PolicyDescriptor {
            name: "noise".into(),
            single_scene: false,
        }
    }

    fn propose(&mut self, input: &PolicyInput<'_>) -> lightloop_core::Result<Residual> {
        let (h, w) = input.prev_field.dims();
        let saturate = self.rng.random_bool(0.1).then(|| if self.rng.random_bool(0.5) { 1.0 } else { -1.0 });
        let data = (0..h * w)
            .map(|_| saturate.unwrap_or_else(|| self.rng.random_range(-self.amp..=self.amp)))
            .collect();
        Residual::new(h, w, data)
    }
}

fn pair(seed: u64) -> ScenePair {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let albedo: Vec<f32> = (0..12 * 16).map(|_| rng.random_range(0.0..1.0)).collect();
    let off = Image::from_fn(12, 16, 3, |y, x, _| 0.1 * albedo[y * 16 + x]).unwrap();
    let full = Image::from_fn(12, 16, 3, |y, x, _| 0.8 * albedo[y * 16 + x]).unwrap();
    ScenePair::new(full, off).unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn every_step_respects_the_budget(
        seed in any::<u64>(),
        eta in prop::sample::select(vec![0.1, 0.6, 1.0]),
        amp in 0.05f32..1.0,
        latency in 0usize..3,
    ) {
        let p = pair(seed);
        let cfg = RefinementConfig { n_steps: 12, k_scored: 3, latency_frames: latency, seed, ..Default::default() };
        let init = init_field(12, 16, eta, &InitConfig { block_range: (2, 6), ..Default::default() }, seed).unwrap();
        let mut policy = NoisePolicy { rng: ChaCha8Rng::seed_from_u64(seed ^ 1), amp };
        let mut scorer = ScorerSpec::exposure(1.0).build().unwrap();
        let traj = refine(&p, &mut policy, scorer.as_mut(), &cfg, eta, init).unwrap();
        prop_assert_eq!(traj.steps.len(), 12);
        prop_assert_eq!(traj.scores().len(), 3);
        for s in &traj.steps {
            let mean = s.field.mean();
            prop_assert!(mean <= eta + 1e-6, "t={} mean {} > {}", s.t, mean, eta);
            prop_assert!(s.field.data().iter().all(|v| (0.0..=1.0).contains(v)));
            if s.t > 0 && !s.clipped && !s.guarded {
                prop_assert!((mean - eta).abs() <= 1e-6, "t={} mean {} vs {}", s.t, mean, eta);
            }
        }
        let m = traj.final_field.mean();
        prop_assert!(m <= eta + 1e-6);
        if !traj.final_clipped && !traj.final_guarded {
            prop_assert!((m - eta).abs() <= 1e-6);
        }
    }
}

#[test]
fn refinement_is_reproducible() {
    let p = pair(4);
    let cfg = RefinementConfig {
        n_steps: 8,
        k_scored: 4,
        seed: 4,
        ..Default::default()
    };
    let run = || {
        let init = init_field(12, 16, 0.6, &InitConfig { block_range: (2, 6), ..Default::default() }, 4).unwrap();
        let mut policy = NoisePolicy {
            rng: ChaCha8Rng::seed_from_u64(9),
            amp: 0.3,
        };
        let mut scorer = ScorerSpec::exposure(1.0).build().unwrap();
        refine(&p, &mut policy, scorer.as_mut(), &cfg, 0.6, init).unwrap()
    };
    let (a, b) = (run(), run());
    assert_eq!(a.scores(), b.scores());
    assert_eq!(a.final_field, b.final_field);

    let (da, db) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    a.dump(da.path()).unwrap();
    b.dump(db.path()).unwrap();
    let names: Vec<_> = std::fs::read_dir(da.path()).unwrap().map(|e| e.unwrap().file_name()).collect();
    assert_eq!(names.len(), 8 * 2 + 2);
    for n in names {
        assert_eq!(std::fs::read(da.path().join(&n)).unwrap(), std::fs::read(db.path().join(&n)).unwrap());
    }
}
