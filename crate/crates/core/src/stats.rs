//! Small numeric helpers shared across modules.

/// Pairwise (cascade) summation. The reduction tree depends only on the
/// slice length, so results are reproducible for a fixed input order.
pub fn pairwise_sum(xs: &[f64]) -> f64 {
    const BLOCK: usize = 32;
    if xs.len() <= BLOCK {
        return xs.iter().sum();
    }
    let mid = xs.len() / 2;
    pairwise_sum(&xs[..mid]) + pairwise_sum(&xs[mid..])
}

pub fn mean(xs: &[f64]) -> f64 {
    if xs.is_empty() {
        return 0.0;
    }
    pairwise_sum(xs) / xs.len() as f64
}

/// Population standard deviation.
pub fn std_pop(xs: &[f64]) -> f64 {
    if xs.is_empty() {
        return 0.0;
    }
    let m = mean(xs);
    let dev: Vec<f64> = xs.iter().map(|x| (x - m) * (x - m)).collect();
    (pairwise_sum(&dev) / xs.len() as f64).sqrt()
}

/// Mean that does not depend on the order of `xs`: values are sorted by
/// their total order before a pairwise two-pass mean.
pub fn order_invariant_mean(xs: &[f64]) -> f64 {
    let mut sorted = xs.to_vec();
    sorted.sort_by(f64::total_cmp);
    let m = mean(&sorted);
    let resid: Vec<f64> = sorted.iter().map(|x| x - m).collect();
    m + mean(&resid)
}
