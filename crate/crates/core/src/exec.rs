//! Execution helpers shared by every Monte Carlo routine.
//!
//! Work is expressed as an indexed map. With the `parallel` feature it runs
//! on rayon; without it the same closure runs on the calling thread. Each
//! work item draws from its own generator, seeded from the run seed and the
//! item's index, which makes output independent of scheduling.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Generator used for all simulation randomness.
pub type SimRng = ChaCha8Rng;

/// Number of shots handled by one work item. Fixed so that the seed layout
/// (and therefore every tally) does not change with the thread count.
pub const SHOT_CHUNK: u64 = 8192;

#[cfg(feature = "parallel")]
pub fn map_indexed<R, F>(n: usize, f: F) -> Vec<R>
where
    R: Send,
    F: Fn(usize) -> R + Sync + Send,
{
    use rayon::prelude::*;
    (0..n).into_par_iter().map(f).collect()
}

#[cfg(not(feature = "parallel"))]
pub fn map_indexed<R, F>(n: usize, f: F) -> Vec<R>
where
    R: Send,
    F: Fn(usize) -> R + Sync + Send,
{
    (0..n).map(f).collect()
}

/// Runs `f` on a dedicated pool of `threads` workers. Without the `parallel`
/// feature the thread count is ignored and `f` runs inline.
#[cfg(feature = "parallel")]
pub fn with_threads<R, F>(threads: usize, f: F) -> R
where
    R: Send,
    F: FnOnce() -> R + Send,
{
    match rayon::ThreadPoolBuilder::new()
        .num_threads(threads.max(1))
        .build()
    {
        Ok(pool) => pool.install(f),
        Err(_) => f(),
    }
}

#[cfg(not(feature = "parallel"))]
pub fn with_threads<R, F>(_threads: usize, f: F) -> R
where
    R: Send,
    F: FnOnce() -> R + Send,
{
    f()
}

pub fn parallel_enabled() -> bool {
    cfg!(feature = "parallel")
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Mixes a base seed with a path of indices (e.g. point, chunk).
pub fn derive_seed(base: u64, keys: &[u64]) -> u64 {
    keys.iter()
        .fold(splitmix64(base), |acc, &k| splitmix64(acc ^ splitmix64(k)))
}

pub fn rng_for(base: u64, keys: &[u64]) -> SimRng {
    SimRng::seed_from_u64(derive_seed(base, keys))
}

/// Splits `shots` into fixed-size chunks: returns (chunk index, shots in chunk).
pub fn shot_chunks(shots: u64) -> impl Iterator<Item = (u64, u64)> {
    let n = shots.div_ceil(SHOT_CHUNK);
    (0..n).map(move |i| (i, SHOT_CHUNK.min(shots - i * SHOT_CHUNK)))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;

    #[test]
    fn derived_seeds_differ_by_key() {
        let a = derive_seed(7, &[0, 1]);
        let b = derive_seed(7, &[1, 0]);
        let c = derive_seed(8, &[0, 1]);
        assert_ne!(a, b);
        assert_ne!(a, c);
        assert_eq!(a, derive_seed(7, &[0, 1]));
    }

    #[test]
    fn chunks_cover_all_shots() {
        let total: u64 = shot_chunks(3 * SHOT_CHUNK + 5).map(|(_, n)| n).sum();
        assert_eq!(total, 3 * SHOT_CHUNK + 5);
        assert_eq!(shot_chunks(0).count(), 0);
    }

    #[test]
    fn map_is_thread_count_independent() {
        let run = || {
            map_indexed(64, |i| {
                let mut rng = rng_for(11, &[i as u64]);
                (0..100).map(|_| rng.random::<u32>() as u64).sum::<u64>()
            })
        };
        assert_eq!(with_threads(1, run), with_threads(4, run));
    }
}
