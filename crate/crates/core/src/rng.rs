//! Seeded random streams.
//!
//! Every consumer of randomness owns its own [`RngStream`]. Streams are derived
//! from a run seed plus a stream id, so two consumers never share state and a
//! run is a pure function of its seed.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub type RngStream = ChaCha8Rng;

/// Stream ids used by the experiment runner.
pub mod ids {
    pub const OFFLINE_DATA: u64 = 1;
    pub const MASKS: u64 = 2;
    pub const ONLINE: u64 = 3;
    pub const LSVI: u64 = 4;
    /// Member `l` uses `MEMBER_BASE + l`.
    pub const MEMBER_BASE: u64 = 1000;
}

pub fn stream(seed: u64, id: u64) -> RngStream {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(id);
    rng
}

/// Draws an index from a discrete distribution by inversion.
///
/// Falls back to the last index with positive mass when rounding leaves the
/// cumulative sum slightly below the uniform draw.
pub fn sample_index<R: Rng + ?Sized>(probs: &[f64], rng: &mut R) -> usize {
    let u: f64 = rng.gen();
    let mut acc = 0.0;
    let mut last_positive = 0;
    for (i, &p) in probs.iter().enumerate() {
        if p > 0.0 {
            acc += p;
            last_positive = i;
            if u < acc {
                return i;
            }
        }
    }
    last_positive
}
