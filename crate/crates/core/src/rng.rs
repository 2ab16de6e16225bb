use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Portable seeded generator. Distinct `stream`s give independent sequences
/// for the same seed, so stages sharing a user seed do not correlate.
pub fn seeded(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}
