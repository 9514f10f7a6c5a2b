//! Process-wide settings: worker threads and allocator behaviour.

use crate::error::{Error, Result};

/// Environment variable selecting the worker count (`1` is the reference mode).
pub const THREADS_ENV: &str = "EVNSP_THREADS";

/// Parses a worker count as given in [`THREADS_ENV`].
pub fn parse_threads(s: &str) -> Result<usize> {
    match s.trim().parse::<usize>() {
        Ok(n) if n >= 1 => Ok(n),
        _ => Err(Error::Config(format!("{THREADS_ENV} must be a positive integer, got {s:?}"))),
    }
}

/// Worker count requested through the environment, if any.
pub fn threads_from_env() -> Result<Option<usize>> {
    match std::env::var(THREADS_ENV) {
        Ok(s) => parse_threads(&s).map(Some),
        Err(std::env::VarError::NotPresent) => Ok(None),
        Err(e) => Err(Error::Config(format!("{THREADS_ENV}: {e}"))),
    }
}

/// Configures the global pool from the environment and tunes the allocator.
/// Returns the number of workers in use. Calling it again is harmless; the
/// first pool wins.
pub fn init() -> Result<usize> {
    retain_freed_memory();
    if let Some(n) = threads_from_env()? {
        // a pool built earlier in the process keeps its size
        let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
    }
    Ok(rayon::current_num_threads())
}

/// Keeps freed field buffers in the heap instead of returning them to the
/// kernel. Every stage allocates and drops dozens of grid-sized arrays; with
/// glibc's defaults each one is a fresh mapping that page-faults on first
/// touch.
pub fn retain_freed_memory() {
    #[cfg(all(target_os = "linux", target_env = "gnu"))]
    unsafe {
        const LARGE: libc::c_int = 1 << 30;
        libc::mallopt(libc::M_MMAP_THRESHOLD, LARGE);
        libc::mallopt(libc::M_TRIM_THRESHOLD, LARGE);
    }
}
