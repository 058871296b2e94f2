//! Seeded RNG streams.
//!
//! Every random draw in the toolkit comes from a ChaCha8 stream derived from
//! the experiment seed, a purpose domain and a stream index (usually a label).
//! Streams for different labels are independent, so adding a label does not
//! perturb the draws of the others.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Purpose domains. Each gets its own key so split and sampling shuffles of
/// the same label never share a stream.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Domain {
    Split,
    Sample,
    Synthetic,
}

impl Domain {
    fn key(self) -> u64 {
        match self {
            Domain::Split => 0x5350_4c49_5400_0001,
            Domain::Sample => 0x5341_4d50_4c45_0002,
            Domain::Synthetic => 0x5359_4e54_4800_0003,
        }
    }
}

pub fn stream(seed: u64, domain: Domain, index: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ domain.key());
    rng.set_stream(index);
    rng
}
