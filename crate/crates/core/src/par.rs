//! Thin layer over rayon so every kernel also builds without it.
//!
//! All helpers split work on fixed boundaries that do not depend on the
//! worker count, so results are bit-identical with or without the
//! `parallel` feature.

#[cfg(feature = "parallel")]
use rayon::prelude::*;

/// Calls `f(row_index, row)` for every `width`-long row of `data`.
pub(crate) fn for_each_row<T, F>(data: &mut [T], width: usize, f: F)
where
    T: Send,
    F: Fn(usize, &mut [T]) + Sync + Send,
{
    #[cfg(feature = "parallel")]
    data.par_chunks_mut(width)
        .enumerate()
        .for_each(|(y, row)| f(y, row));
    #[cfg(not(feature = "parallel"))]
    data.chunks_mut(width)
        .enumerate()
        .for_each(|(y, row)| f(y, row));
}

/// Calls `f(first_row, band)` for bands of `rows_per_band` rows.
pub(crate) fn for_each_band<T, F>(data: &mut [T], width: usize, rows_per_band: usize, f: F)
where
    T: Send,
    F: Fn(usize, &mut [T]) + Sync + Send,
{
    let chunk = width * rows_per_band.max(1);
    #[cfg(feature = "parallel")]
    data.par_chunks_mut(chunk)
        .enumerate()
        .for_each(|(i, band)| f(i * rows_per_band, band));
    #[cfg(not(feature = "parallel"))]
    data.chunks_mut(chunk)
        .enumerate()
        .for_each(|(i, band)| f(i * rows_per_band, band));
}

/// `(0..n).map(f).collect()`, in parallel when enabled. Output order is
/// always index order.
pub(crate) fn map_range<R, F>(n: usize, f: F) -> Vec<R>
where
    R: Send,
    F: Fn(usize) -> R + Sync + Send,
{
    #[cfg(feature = "parallel")]
    return (0..n).into_par_iter().map(f).collect();
    #[cfg(not(feature = "parallel"))]
    return (0..n).map(f).collect();
}

/// Number of workers kernels will use on this thread.
pub fn current_workers() -> usize {
    #[cfg(feature = "parallel")]
    return rayon::current_num_threads();
    #[cfg(not(feature = "parallel"))]
    return 1;
}

/// Runs `f` with kernels restricted to `workers` threads. Without the
/// `parallel` feature this is a plain call.
pub fn with_workers<R: Send>(workers: usize, f: impl FnOnce() -> R + Send) -> R {
    #[cfg(feature = "parallel")]
    {
        match rayon::ThreadPoolBuilder::new()
            .num_threads(workers.max(1))
            .build()
        {
            Ok(pool) => pool.install(f),
            Err(_) => f(),
        }
    }
    #[cfg(not(feature = "parallel"))]
    {
        let _ = workers;
        f()
    }
}

/// Sums fixed-size blocks, then combines the partials pairwise. The block
/// tree depends only on `len`, never on scheduling.
pub(crate) fn block_sum<S, F>(len: usize, block: usize, zero: S, f: F) -> S
where
    S: Copy + Send + std::ops::Add<Output = S>,
    F: Fn(std::ops::Range<usize>) -> S + Sync + Send,
{
    let block = block.max(1);
    let blocks = len.div_ceil(block);
    let mut partials = map_range(blocks, |b| f(b * block..((b + 1) * block).min(len)));
    if partials.is_empty() {
        return zero;
    }
    while partials.len() > 1 {
        partials = partials
            .chunks(2)
            .map(|pair| if pair.len() == 2 { pair[0] + pair[1] } else { pair[0] })
            .collect();
    }
    partials[0]
}
