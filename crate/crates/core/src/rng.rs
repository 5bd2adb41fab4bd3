//! Seeded random streams shared by attacks, k-means, dataset selection and
//! sampling. Everything goes through PCG64 so runs reproduce across platforms.

use rand::{Rng, SeedableRng};
use rand_pcg::Pcg64;

pub type StreamRng = Pcg64;

pub fn seeded(seed: u64) -> StreamRng {
    Pcg64::seed_from_u64(seed)
}

/// SplitMix64 finalizer.
fn mix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Derives an independent seed for sub-task `index` of stream `stream`
/// under a base seed. Used so that per-task generators do not depend on
/// scheduling order.
pub fn derive_seed(base: u64, stream: u64, index: u64) -> u64 {
    mix(mix(mix(base) ^ stream.rotate_left(17)) ^ index.rotate_left(41))
}

/// One standard normal draw via the Box–Muller transform.
pub fn standard_normal(rng: &mut StreamRng) -> f64 {
    // u1 in (0, 1] keeps ln finite.
    let u1 = 1.0 - rng.random::<f64>();
    let u2 = rng.random::<f64>();
    (-2.0 * u1.ln()).sqrt() * (std::f64::consts::TAU * u2).cos()
}

/// Uniform draw in [0, 1).
pub fn uniform(rng: &mut StreamRng) -> f64 {
    rng.random::<f64>()
}

/// Uniform integer in [0, n).
pub fn below(rng: &mut StreamRng, n: usize) -> usize {
    rng.random_range(0..n)
}
