//! Worker-thread configuration. The `DAOCC_THREADS` environment variable
//! caps the rayon pool used for scene generation and evaluation; an
//! explicit override (e.g. a CLI flag) wins over the environment.

use std::sync::OnceLock;

static CONFIGURED: OnceLock<usize> = OnceLock::new();

/// Build the global thread pool once and report its size. Safe to call
/// repeatedly; later calls return the first configuration.
pub fn configure_threads(override_threads: Option<usize>) -> usize {
    *CONFIGURED.get_or_init(|| {
        let requested = override_threads.or_else(|| {
            std::env::var("DAOCC_THREADS")
                .ok()
                .and_then(|v| v.parse::<usize>().ok())
        });
        match requested {
            Some(n) if n >= 1 => {
                // Ignore failure: a pool may already exist (e.g. under test).
                let _ = rayon::ThreadPoolBuilder::new()
                    .num_threads(n)
                    .build_global();
                n
            }
            _ => rayon::current_num_threads(),
        }
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn configuration_is_sticky() {
        let first = configure_threads(Some(2));
        let second = configure_threads(Some(7));
        assert_eq!(first, second);
    }
}
