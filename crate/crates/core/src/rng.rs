//! Seeded random streams.
//!
//! Every stochastic draw in the library comes from a `ChaCha8Rng` whose seed
//! is derived from a base seed plus a tuple of counters (frame, step, patch).
//! Parallel and serial execution therefore consume identical streams.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::tensor::FrameTensor;

pub type Rng = ChaCha8Rng;

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Stream for `(seed, counters...)`. Distinct counter tuples give independent streams.
pub fn stream(seed: u64, counters: &[u64]) -> Rng {
    let mut h = splitmix64(seed);
    for &c in counters {
        h = splitmix64(h ^ splitmix64(c.wrapping_add(0x632B_E59B_D9B4_E019)));
    }
    ChaCha8Rng::seed_from_u64(h)
}

pub fn seeded(seed: u64) -> Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Standard normal tensor of the given shape.
pub fn normal_tensor<R: rand::Rng + ?Sized>(
    rng: &mut R,
    height: usize,
    width: usize,
    channels: usize,
) -> FrameTensor {
    let data: Vec<f32> = (0..height * width * channels)
        .map(|_| {
            let z: f64 = StandardNormal.sample(rng);
            z as f32
        })
        .collect();
    FrameTensor::from_vec(height, width, channels, data).expect("shape is consistent")
}
