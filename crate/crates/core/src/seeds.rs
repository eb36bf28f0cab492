use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Independent deterministic random stream `stream` derived from `seed`.
pub fn rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut r = ChaCha8Rng::seed_from_u64(seed);
    r.set_stream(stream);
    r
}

/// Stream ids, so that unrelated consumers of one seed never share randomness.
pub mod streams {
    pub const INIT: u64 = 1;
    pub const PAIRS: u64 = 2;
    pub const SHUFFLE: u64 = 3;
    pub const SPLIT: u64 = 4;
    pub const POPULATION: u64 = 10;
    pub const DEPLOYMENT: u64 = 11;
    pub const EVALUATION: u64 = 12;
    pub const PURITY: u64 = 13;
}
