//! Document-level fan-out.
//!
//! With the `parallel` feature (default) the map runs on the rayon pool;
//! without it, or when `parallel == false`, it runs sequentially. Output
//! order always matches input order, and callers derive per-item RNG
//! streams from stable ids, so results are identical either way.

#[cfg(feature = "parallel")]
use rayon::prelude::*;

/// Map `f` over `items`, preserving order.
pub fn map_indexed<T, R, F>(items: &[T], parallel: bool, f: F) -> Vec<R>
where
    T: Sync,
    R: Send,
    F: Fn(usize, &T) -> R + Sync + Send,
{
    #[cfg(feature = "parallel")]
    {
        if parallel {
            return items.par_iter().enumerate().map(|(i, t)| f(i, t)).collect();
        }
    }
    let _ = parallel;
    items.iter().enumerate().map(|(i, t)| f(i, t)).collect()
}

/// True when the crate was built with rayon support.
pub fn parallel_available() -> bool {
    cfg!(feature = "parallel")
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn preserves_order() {
        let xs: Vec<u64> = (0..101).collect();
        let seq = map_indexed(&xs, false, |i, x| (i as u64) * 1000 + x);
        let par = map_indexed(&xs, true, |i, x| (i as u64) * 1000 + x);
        assert_eq!(seq, par);
    }
}
