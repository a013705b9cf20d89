//! Ordered fan-out over scoped threads.

/// Applies `f` to every item using up to `threads` workers on contiguous chunks.
/// Results come back in item order, so the outcome never depends on `threads`.
pub fn map_ordered<I, R, F>(items: &[I], threads: usize, f: F) -> Vec<R>
where
    I: Sync,
    R: Send,
    F: Fn(&I) -> R + Sync,
{
    let threads = threads.clamp(1, items.len().max(1));
    if threads == 1 {
        return items.iter().map(&f).collect();
    }
    let chunk = items.len().div_ceil(threads);
    let f = &f;
    std::thread::scope(|scope| {
        let handles: Vec<_> = items
            .chunks(chunk)
            .map(|part| scope.spawn(move || part.iter().map(f).collect::<Vec<R>>()))
            .collect();
        handles.into_iter().flat_map(|h| h.join().expect("worker panicked")).collect()
    })
}

/// Worker count from `HRCAM_THREADS`; 1 when unset or unparsable.
pub fn threads_from_env() -> usize {
    std::env::var("HRCAM_THREADS").ok().and_then(|v| v.trim().parse().ok()).filter(|&n| n >= 1).unwrap_or(1)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn order_is_preserved() {
        let items: Vec<u32> = (0..37).collect();
        let one = map_ordered(&items, 1, |x| x * x);
        for t in [2, 3, 8, 100] {
            assert_eq!(map_ordered(&items, t, |x| x * x), one);
        }
        assert!(map_ordered(&[] as &[u32], 4, |x| *x).is_empty());
    }
}
