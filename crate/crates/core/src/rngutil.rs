//! Small deterministic sampling helpers shared by initialization and the
//! synthetic benchmark generator.

use rand::Rng;
use rand_chacha::ChaCha8Rng;

/// Uniform draw in `[0, 1)`.
pub(crate) fn uniform(rng: &mut ChaCha8Rng) -> f64 {
    rng.gen::<f64>()
}

/// Standard normal via Box–Muller (two uniform draws per sample).
pub(crate) fn normal(rng: &mut ChaCha8Rng) -> f64 {
    let u1: f64 = rng.gen_range(f64::MIN_POSITIVE..1.0);
    let u2: f64 = rng.gen_range(0.0..1.0);
    (-2.0 * u1.ln()).sqrt() * (std::f64::consts::TAU * u2).cos()
}
