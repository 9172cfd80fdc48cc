//! Seeded random streams.
//!
//! Every chain and every replication draws from a ChaCha8 stream keyed by the
//! user seed, with the ChaCha stream id selecting the substream. ChaCha is a
//! counter-based generator, so substreams never overlap and a replication's
//! draws do not depend on how work is scheduled across threads.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type FiduxRng = ChaCha8Rng;

/// Generator for substream `stream` of `seed`.
pub fn substream(seed: u64, stream: u64) -> FiduxRng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

/// Stream id for replication `rep` of scenario `scenario`.
pub fn replication_stream(scenario: usize, rep: usize) -> u64 {
    ((scenario as u64) << 32) | rep as u64
}

/// A uniform draw on the open interval (0, 1).
pub fn open_unit<R: rand::Rng + ?Sized>(rng: &mut R) -> f64 {
    loop {
        let v: f64 = rng.random();
        if v > 0.0 {
            return v;
        }
    }
}
