//! Independent keyed jobs run on the rayon pool, aggregated in key order so
//! results never depend on completion order or thread count.

use rayon::prelude::*;

/// Run `f` once per distinct key and return `(key, result)` sorted by key.
/// The first error in key order wins.
pub fn run_keyed<K, T, E, F>(mut keys: Vec<K>, f: F) -> Result<Vec<(K, T)>, E>
where
    K: Ord + Send + Sync,
    T: Send,
    E: Send,
    F: Fn(&K) -> Result<T, E> + Sync,
{
    keys.sort();
    keys.dedup();
    let out: Vec<Result<(K, T), E>> = keys.into_par_iter().map(|k| f(&k).map(|t| (k, t))).collect();
    out.into_iter().collect()
}

/// Run `op` on a dedicated pool of `threads` workers (0 = rayon default).
pub fn with_threads<R: Send>(threads: usize, op: impl FnOnce() -> R + Send) -> R {
    match rayon::ThreadPoolBuilder::new().num_threads(threads).build() {
        Ok(pool) => pool.install(op),
        Err(_) => op(),
    }
}
