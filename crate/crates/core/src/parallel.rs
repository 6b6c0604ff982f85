//! Thread pool used for independent jobs (training restarts, batch evaluation).
//!
//! `NEUROTOK_THREADS` caps the number of worker threads; otherwise rayon's
//! default applies.

use std::sync::OnceLock;

pub const THREADS_ENV: &str = "NEUROTOK_THREADS";

fn pool() -> Option<&'static rayon::ThreadPool> {
    static POOL: OnceLock<Option<rayon::ThreadPool>> = OnceLock::new();
    POOL.get_or_init(|| {
        let n: usize = std::env::var(THREADS_ENV).ok()?.trim().parse().ok().filter(|&n| n > 0)?;
        rayon::ThreadPoolBuilder::new().num_threads(n).build().ok()
    })
    .as_ref()
}

/// Runs `f` inside the capped pool when one is configured.
pub fn install<R: Send>(f: impl FnOnce() -> R + Send) -> R {
    match pool() {
        Some(p) => p.install(f),
        None => f(),
    }
}
