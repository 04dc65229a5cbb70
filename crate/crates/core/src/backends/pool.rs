//! Order-preserving parallel map with a hard cap on in-flight calls.

use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;
use std::thread;

use crate::error::{Error, Result};

/// Applies `f` to every item using at most `max_concurrent` worker threads.
/// Output slot `i` always holds the result for `items[i]`.
pub fn map<T, R, F>(items: &[T], max_concurrent: usize, f: F) -> Vec<R>
where
    T: Sync,
    R: Send,
    F: Fn(usize, &T) -> R + Sync,
{
    let workers = max_concurrent.max(1).min(items.len());
    if workers <= 1 {
        return items.iter().enumerate().map(|(i, t)| f(i, t)).collect();
    }
    let next = AtomicUsize::new(0);
    let slots: Mutex<Vec<Option<R>>> = Mutex::new((0..items.len()).map(|_| None).collect());
    thread::scope(|scope| {
        for _ in 0..workers {
            scope.spawn(|| loop {
                let i = next.fetch_add(1, Ordering::Relaxed);
                if i >= items.len() {
                    break;
                }
                let r = f(i, &items[i]);
                slots.lock().expect("result slots poisoned")[i] = Some(r);
            });
        }
    });
    slots
        .into_inner()
        .expect("result slots poisoned")
        .into_iter()
        .map(|r| r.expect("every slot is filled once the scope joins"))
        .collect()
}

/// Unwraps per-item results, tagging the first failure with its index.
pub fn collect_indexed<R>(results: Vec<Result<R>>) -> Result<Vec<R>> {
    results
        .into_iter()
        .enumerate()
        .map(|(index, r)| r.map_err(|e| Error::BatchItem { index, source: Box::new(e) }))
        .collect()
}
