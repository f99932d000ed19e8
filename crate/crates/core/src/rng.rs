//! Deterministic seed splitting and chunked parallel execution.
//!
//! Work is cut into fixed-size chunks and chunk `i` always draws from
//! substream `i` of the master seed, so results do not depend on how many
//! worker threads execute the chunks.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::error::{Error, Result};

pub type SimRng = ChaCha8Rng;

/// Generator for substream `stream` of `seed`.
pub fn substream(seed: u64, stream: u64) -> SimRng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

/// SplitMix64 step; used to derive independent master seeds (e.g. one per
/// grid point of a sweep).
pub fn derive_seed(seed: u64, index: u64) -> u64 {
    let mut z = seed
        .wrapping_add(0x9E37_79B9_7F4A_7C15)
        .wrapping_add(index.wrapping_mul(0xD1B5_4A32_D192_ED03));
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Run `total` units of work in chunks of at most `chunk` units.
///
/// `f(chunk_index, units)` is invoked once per chunk; results come back in
/// chunk order. `workers = None` uses the global rayon pool.
pub fn run_chunks<T, F>(total: u64, chunk: u64, workers: Option<usize>, f: F) -> Result<Vec<T>>
where
    T: Send,
    F: Fn(u64, u64) -> T + Sync + Send,
{
    let chunk = chunk.max(1);
    let n_chunks = total.div_ceil(chunk);
    let job = || {
        (0..n_chunks)
            .into_par_iter()
            .map(|i| {
                let units = chunk.min(total - i * chunk);
                f(i, units)
            })
            .collect::<Vec<T>>()
    };
    match workers {
        None => Ok(job()),
        Some(n) => {
            let pool = rayon::ThreadPoolBuilder::new()
                .num_threads(n.max(1))
                .build()
                .map_err(|e| Error::WorkerPool(e.to_string()))?;
            Ok(pool.install(job))
        }
    }
}
