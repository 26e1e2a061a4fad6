use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::budget::normalize_budget;
use crate::error::{Error, Result};
use crate::lightfield::LightField;

/// Parameters of the random starting field.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct InitConfig {
    /// Probability of starting from the fully black field.
    pub black_prob: f64,
    /// Inclusive range of the block side in pixels.
    pub block_range: (usize, usize),
    pub epsilon: f64,
}

impl Default for InitConfig {
    fn default() -> Self {
        Self {
            black_prob: 0.5,
            block_range: (20, 80),
            epsilon: 1e-6,
        }
    }
}

/// Random starting field: black with probability `black_prob`, otherwise
/// blockwise-constant uniform noise rescaled to mean `eta`.
pub fn init_field(h: usize, w: usize, eta: f64, cfg: &InitConfig, seed: u64) -> Result<LightField> {
    if eta > 1.0 {
        return Err(Error::Budget(format!("initial budget {eta} exceeds 1")));
    }
    let (lo, hi) = cfg.block_range;
    if lo == 0 || lo > hi {
        return Err(Error::Config(format!("invalid block range [{lo}, {hi}]")));
    }
    if !(0.0..=1.0).contains(&cfg.black_prob) {
        return Err(Error::Config(format!("black probability {} outside [0, 1]", cfg.black_prob)));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    if rng.random::<f64>() < cfg.black_prob {
        return Ok(LightField::zeros(h, w));
    }
    let side = rng.random_range(lo..=hi);
    let bw = w.div_ceil(side);
    let bh = h.div_ceil(side);
    let blocks: Vec<f32> = (0..bw * bh).map(|_| rng.random::<f32>()).collect();
    let noise = LightField::from_fn(h, w, |y, x| blocks[(y / side) * bw + x / side]);
    if eta <= 0.0 {
        return Ok(LightField::zeros(h, w));
    }
    Ok(normalize_budget(&noise, eta, cfg.epsilon)?.field)
}
