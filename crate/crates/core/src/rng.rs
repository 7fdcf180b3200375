//! Seed derivation and chunked, scheduling-independent random streams.
//!
//! Every stochastic quantity in the crate is drawn from a ChaCha8 stream whose
//! seed is derived from a user seed and a stream index. Work is split into
//! fixed-size chunks, chunk `c` always uses stream `c`, so results do not
//! depend on the number of worker threads.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

pub type Rng = ChaCha8Rng;

/// Replicates generated sequentially from one stream.
pub const CHUNK: usize = 64;

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Child seed for stream `index` of `seed`.
pub fn derive_seed(seed: u64, index: u64) -> u64 {
    splitmix64(seed ^ splitmix64(index.wrapping_add(0x632B_E59B_D9B4_E019)))
}

pub fn stream(seed: u64, index: u64) -> Rng {
    ChaCha8Rng::seed_from_u64(derive_seed(seed, index))
}

/// Generate `count` items in parallel chunks of [`CHUNK`].
///
/// `init` builds per-chunk scratch space, `draw` produces one item.
pub fn chunked_map<T, S, I, F>(seed: u64, count: usize, init: I, draw: F) -> Vec<T>
where
    T: Send,
    I: Fn() -> S + Sync,
    F: Fn(&mut Rng, &mut S) -> T + Sync,
{
    let chunks = count.div_ceil(CHUNK);
    let parts: Vec<Vec<T>> = (0..chunks)
        .into_par_iter()
        .map(|c| {
            let mut rng = stream(seed, c as u64);
            let mut scratch = init();
            let len = CHUNK.min(count - c * CHUNK);
            (0..len).map(|_| draw(&mut rng, &mut scratch)).collect()
        })
        .collect();
    parts.into_iter().flatten().collect()
}

/// Run `job(i, seed_i)` for `i in 0..count` in parallel, each with its own derived seed.
pub fn indexed_map<T, F>(seed: u64, count: usize, job: F) -> Vec<T>
where
    T: Send,
    F: Fn(usize, u64) -> T + Sync,
{
    (0..count)
        .into_par_iter()
        .map(|i| job(i, derive_seed(seed, i as u64)))
        .collect()
}
