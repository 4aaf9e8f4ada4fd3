//! Data-parallel helpers whose results do not depend on the thread count.

use rayon::prelude::*;

use crate::error::Result;

/// Maps `f` over `items` in parallel, keeping input order.
pub fn ordered_map<T, U, F>(items: &[T], f: F) -> Result<Vec<U>>
where
    T: Sync,
    U: Send,
    F: Fn(usize, &T) -> Result<U> + Sync,
{
    items.par_iter().enumerate().map(|(i, x)| f(i, x)).collect()
}

/// Maps in parallel chunks of `rayon::current_num_threads()` and folds each
/// result into the accumulator strictly in index order, so floating-point
/// sums are reproducible. At most one chunk of mapped values is alive at a
/// time.
pub fn ordered_fold<T, U, A, F, G>(items: &[T], f: F, init: A, mut fold: G) -> Result<A>
where
    T: Sync,
    U: Send,
    F: Fn(usize, &T) -> Result<U> + Sync,
    G: FnMut(A, usize, U) -> Result<A>,
{
    let chunk = rayon::current_num_threads().max(1);
    let mut acc = init;
    for (c, part) in items.chunks(chunk).enumerate() {
        let base = c * chunk;
        let mapped: Vec<U> = part
            .par_iter()
            .enumerate()
            .map(|(i, x)| f(base + i, x))
            .collect::<Result<_>>()?;
        for (i, u) in mapped.into_iter().enumerate() {
            acc = fold(acc, base + i, u)?;
        }
    }
    Ok(acc)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn fold_order_is_fixed() {
        let xs: Vec<f64> = (0..1000).map(|i| 1.0 / (i as f64 + 1.0)).collect();
        let serial = xs.iter().fold(0.0, |a, x| a + x);
        let par = ordered_fold(&xs, |_, &x| Ok(x), 0.0, |a, _, x| Ok(a + x)).unwrap();
        assert_eq!(serial.to_bits(), par.to_bits());
        let pool = rayon::ThreadPoolBuilder::new().num_threads(3).build().unwrap();
        let three = pool.install(|| ordered_fold(&xs, |_, &x| Ok(x), 0.0, |a, _, x| Ok(a + x)).unwrap());
        assert_eq!(serial.to_bits(), three.to_bits());
    }

    #[test]
    fn map_keeps_order() {
        let out = ordered_map(&[3, 1, 2], |i, &x| Ok(i * 10 + x)).unwrap();
        assert_eq!(out, vec![3, 11, 22]);
    }
}
