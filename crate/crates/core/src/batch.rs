//! Data-parallel map over independent jobs such as benchmark cells or
//! randomized property runs. Each job owns its simulator, so results are
//! identical whichever path runs them.

/// Maps in order on the current thread.
pub fn seq_map<T, R, F>(items: Vec<T>, f: F) -> Vec<R>
where
    F: Fn(T) -> R,
{
    items.into_iter().map(f).collect()
}

/// Maps on the rayon pool, keeping input order.
#[cfg(feature = "parallel")]
pub fn par_map<T, R, F>(items: Vec<T>, f: F) -> Vec<R>
where
    T: Send,
    R: Send,
    F: Fn(T) -> R + Sync + Send,
{
    use rayon::prelude::*;
    items.into_par_iter().map(f).collect()
}

/// The parallel path when the `parallel` feature is on, else sequential.
pub fn map<T, R, F>(items: Vec<T>, f: F) -> Vec<R>
where
    T: Send,
    R: Send,
    F: Fn(T) -> R + Sync + Send,
{
    #[cfg(feature = "parallel")]
    {
        par_map(items, f)
    }
    #[cfg(not(feature = "parallel"))]
    {
        seq_map(items, f)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn keeps_order() {
        let xs: Vec<u64> = (0..100).collect();
        let want: Vec<u64> = xs.iter().map(|x| x * x).collect();
        assert_eq!(seq_map(xs.clone(), |x| x * x), want);
        assert_eq!(map(xs, |x| x * x), want);
    }
}
