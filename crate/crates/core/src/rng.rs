//! Seeded, splittable random streams. Every consumer draws from its own
//! ChaCha stream so that, for example, changing the sampling rate never
//! perturbs the generated point cloud for the same seed.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[repr(u64)]
pub enum Stream {
    Dataset = 1,
    Sampling = 2,
    Noise = 3,
    PowerIteration = 4,
    Test = 99,
}

pub fn stream_rng(seed: u64, stream: Stream) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream as u64);
    rng
}
