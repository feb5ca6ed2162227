//! Seeded random streams.
//!
//! Every stage draws from its own named stream derived from the run seed, so
//! changing how many numbers one stage consumes never shifts another stage.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type StageRng = ChaCha8Rng;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Stream {
    Walks,
    Augment,
    Init,
    Synth,
}

impl Stream {
    fn id(self) -> u64 {
        match self {
            Stream::Walks => 1,
            Stream::Augment => 2,
            Stream::Init => 3,
            Stream::Synth => 4,
        }
    }
}

fn splitmix64(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9E37_79B9_7F4A_7C15);
    x = (x ^ (x >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    x = (x ^ (x >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    x ^ (x >> 31)
}

/// Generator for `stream` under `seed`.
pub fn stream(seed: u64, stream: Stream) -> StageRng {
    let mut rng = ChaCha8Rng::seed_from_u64(splitmix64(seed));
    rng.set_stream(stream.id());
    rng
}

/// Generator for one item (entity, epoch, ...) within a stream. Independent of
/// the order in which items are visited.
pub fn item_stream(seed: u64, stream: Stream, item: u64) -> StageRng {
    let mut rng = ChaCha8Rng::seed_from_u64(splitmix64(splitmix64(seed) ^ item));
    rng.set_stream(stream.id());
    rng
}
