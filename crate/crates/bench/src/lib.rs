//! Shared inputs for the engine benchmarks.

use lightloop_core::harness::{generate_toy_corpus, Scene, SynthParams};
use lightloop_core::LightField;

/// One scene of the synthetic corpus at its default resolution.
pub fn toy_scene() -> Scene {
    generate_toy_corpus(1, 42, &SynthParams::default())
        .expect("default synth params are valid")
        .scenes
        .remove(0)
}

/// A deterministic non-constant field over `h x w`.
pub fn ramp_field(h: usize, w: usize) -> LightField {
    LightField::from_fn(h, w, |y, x| ((x * 7 + y * 13) % 97) as f32 / 96.0)
}
