use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Seeded generator for an independent sub-stream of a run.
///
/// Stream 0 is the root stream; per-RP and per-fold work uses `index + 1`.
pub fn derive_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}
