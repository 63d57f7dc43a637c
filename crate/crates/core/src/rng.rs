//! Seed derivation.
//!
//! A single experiment seed feeds every random stream. Each consumer gets its
//! own ChaCha8 stream selected by `set_stream`, with the 64-bit stream word
//! laid out as `tag << 56 | sub << 40 | index`:
//!
//! | tag | consumer                         | sub        | index   |
//! |-----|----------------------------------|------------|---------|
//! | 1   | network parameter init           | 0          | 0       |
//! | 2   | traffic arrivals                 | flow index | episode |
//! | 3   | multipath next-hop sampling      | 0          | episode |
//! | 4   | OU exploration noise             | 0          | 0       |
//! | 5   | replay sampling                  | 0          | 0       |
//! | 6   | random-weight baseline           | 0          | episode |

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type SimRng = ChaCha8Rng;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[repr(u8)]
pub enum Stream {
    Init = 1,
    Traffic = 2,
    Routing = 3,
    Noise = 4,
    Replay = 5,
    Baseline = 6,
}

pub fn substream(seed: u64, stream: Stream, sub: u16, index: u64) -> SimRng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let word = ((stream as u64) << 56) | ((sub as u64) << 40) | (index & ((1 << 40) - 1));
    rng.set_stream(word);
    rng
}
