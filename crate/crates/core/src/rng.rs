//! Named random streams split from one master seed, so that changing how
//! much randomness one consumer draws never shifts another.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Stream {
    Init,
    Env,
    Exploration,
    Minibatch,
    EnsembleSubset,
    TargetNoise,
    Eval,
    Downsample,
    Forge,
}

impl Stream {
    fn id(self) -> u64 {
        match self {
            Stream::Init => 1,
            Stream::Env => 2,
            Stream::Exploration => 3,
            Stream::Minibatch => 4,
            Stream::EnsembleSubset => 5,
            Stream::TargetNoise => 6,
            Stream::Eval => 7,
            Stream::Downsample => 8,
            Stream::Forge => 9,
        }
    }
}

/// Independent generator for `stream` under `master`.
pub fn stream(master: u64, stream: Stream) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(master);
    rng.set_stream(stream.id());
    rng
}

/// Deterministic seed derived from `master` and an index, for sub-seeding
/// episodes or sweep members.
pub fn sub_seed(master: u64, index: u64) -> u64 {
    // splitmix64 finalizer over the pair
    let mut z = master ^ index.wrapping_add(1).wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}
