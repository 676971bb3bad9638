//! Thin wrappers so the engines can run node loops on the ambient rayon
//! pool when the `parallel` feature is on, or serially otherwise. Both
//! paths visit nodes in index order with identical per-node arithmetic,
//! so results never depend on worker count.

#[cfg(feature = "parallel")]
pub(crate) fn for_each_indexed_mut<T, F>(items: &mut [T], f: F)
where
    T: Send,
    F: Fn(usize, &mut T) + Sync + Send,
{
    use rayon::prelude::*;
    items
        .par_iter_mut()
        .enumerate()
        .for_each(|(i, item)| f(i, item));
}

#[cfg(not(feature = "parallel"))]
pub(crate) fn for_each_indexed_mut<T, F>(items: &mut [T], f: F)
where
    T: Send,
    F: Fn(usize, &mut T) + Sync + Send,
{
    for (i, item) in items.iter_mut().enumerate() {
        f(i, item);
    }
}

/// Visit `values` in chunks of `chunk` (one chunk per node) zipped with a
/// per-node output slot.
#[cfg(feature = "parallel")]
pub(crate) fn for_each_chunk_zip_mut<O, F>(values: &mut [f64], chunk: usize, out: &mut [O], f: F)
where
    O: Send,
    F: Fn(usize, &mut [f64], &mut O) + Sync + Send,
{
    use rayon::prelude::*;
    values
        .par_chunks_mut(chunk)
        .zip(out.par_iter_mut())
        .enumerate()
        .for_each(|(i, (vals, slot))| f(i, vals, slot));
}

#[cfg(not(feature = "parallel"))]
pub(crate) fn for_each_chunk_zip_mut<O, F>(values: &mut [f64], chunk: usize, out: &mut [O], f: F)
where
    O: Send,
    F: Fn(usize, &mut [f64], &mut O) + Sync + Send,
{
    for (i, (vals, slot)) in values.chunks_mut(chunk).zip(out.iter_mut()).enumerate() {
        f(i, vals, slot);
    }
}
