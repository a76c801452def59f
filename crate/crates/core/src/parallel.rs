//! Order-preserving scoped parallel map with a process-wide worker cap.
//!
//! Results are always reduced in input order by the callers, so outputs do
//! not depend on the number of workers.

use std::sync::atomic::{AtomicUsize, Ordering};

static THREADS: AtomicUsize = AtomicUsize::new(1);

/// Caps the number of workers used by [`par_map`]; `0` means one per core.
pub fn set_threads(n: usize) {
    let n = if n == 0 {
        std::thread::available_parallelism().map_or(1, |p| p.get())
    } else {
        n
    };
    THREADS.store(n, Ordering::Relaxed);
}

/// Current worker cap.
pub fn threads() -> usize {
    THREADS.load(Ordering::Relaxed)
}

/// `items.iter().map(f).collect()`, split into contiguous chunks across up
/// to [`threads`] scoped workers.
pub fn par_map<T: Sync, R: Send>(items: &[T], f: impl Fn(&T) -> R + Sync) -> Vec<R> {
    let workers = threads().min(items.len());
    if workers <= 1 {
        return items.iter().map(f).collect();
    }
    let chunk = items.len().div_ceil(workers);
    let f = &f;
    std::thread::scope(|s| {
        let handles: Vec<_> = items
            .chunks(chunk)
            .map(|part| s.spawn(move || part.iter().map(f).collect::<Vec<R>>()))
            .collect();
        handles
            .into_iter()
            .flat_map(|h| h.join().expect("worker panicked"))
            .collect()
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn keeps_order_for_any_worker_count() {
        let items: Vec<u64> = (0..103).collect();
        let serial: Vec<u64> = items.iter().map(|v| v * v).collect();
        for n in [1, 2, 7, 200] {
            THREADS.store(n, Ordering::Relaxed);
            assert_eq!(par_map(&items, |v| v * v), serial);
        }
        THREADS.store(1, Ordering::Relaxed);
    }
}
