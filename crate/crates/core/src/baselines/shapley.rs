use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Largest feature count accepted for full coalition enumeration.
pub const MAX_EXACT_FEATURES: usize = 20;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ShapleyAttribution {
    pub phi: Vec<f64>,
    /// Value of the empty coalition (every feature at its baseline).
    pub base_value: f64,
    /// Value of the full coalition.
    pub full_value: f64,
}

/// Exact Shapley values by enumerating all `2^F` coalitions.
///
/// `value` receives one input row per coalition mask (bit `i` set means
/// feature `i` takes its value from `x`, otherwise from `baseline`) and
/// returns the coalition values in the same order.
pub fn exact_shapley<F>(x: &[f64], baseline: &[f64], value: F) -> Result<ShapleyAttribution>
where
    F: FnOnce(&Array2<f64>) -> Result<Vec<f64>>,
{
    let f = x.len();
    if baseline.len() != f {
        return Err(Error::DimensionMismatch { expected: f, got: baseline.len() });
    }
    if f > MAX_EXACT_FEATURES {
        return Err(Error::TooManyFeatures(f));
    }
    let n = 1usize << f;
    let inputs = Array2::from_shape_fn((n, f), |(mask, i)| if mask >> i & 1 == 1 { x[i] } else { baseline[i] });
    let v = value(&inputs)?;
    if v.len() != n {
        return Err(Error::DimensionMismatch { expected: n, got: v.len() });
    }
    // weight[s] = s! (F - s - 1)! / F!
    let weight: Vec<f64> = (0..f)
        .map(|s| {
            let mut w = 1.0 / f as f64;
            for j in 1..=s {
                w *= j as f64 / (f - j) as f64;
            }
            w
        })
        .collect();
    let mut phi = vec![0.0; f];
    for (i, p) in phi.iter_mut().enumerate() {
        let bit = 1usize << i;
        let mut acc = 0.0;
        for mask in (0..n).filter(|m| m & bit == 0) {
            acc += weight[mask.count_ones() as usize] * (v[mask | bit] - v[mask]);
        }
        *p = acc;
    }
    Ok(ShapleyAttribution { phi, base_value: v[0], full_value: v[n - 1] })
}

/// [`exact_shapley`] for a scalar function of one input.
pub fn exact_shapley_fn(x: &[f64], baseline: &[f64], f: impl Fn(&[f64]) -> f64) -> Result<ShapleyAttribution> {
    exact_shapley(x, baseline, |rows| Ok(rows.rows().into_iter().map(|r| f(&r.to_vec())).collect()))
}

#[cfg(test)]
mod tests {
    use proptest::prelude::*;

    use super::*;

    /// Shapley values as the average marginal contribution over all
    /// feature orderings.
    fn permutation_oracle(x: &[f64], base: &[f64], f: &dyn Fn(&[f64]) -> f64) -> Vec<f64> {
        fn perms(items: Vec<usize>) -> Vec<Vec<usize>> {
            if items.len() <= 1 {
                return vec![items];
            }
            let mut out = Vec::new();
            for i in 0..items.len() {
                let mut rest = items.clone();
                let head = rest.remove(i);
                for mut p in perms(rest) {
                    p.insert(0, head);
                    out.push(p);
                }
            }
            out
        }
        let n = x.len();
        let orders = perms((0..n).collect());
        let mut phi = vec![0.0; n];
        for order in &orders {
            let mut cur = base.to_vec();
            let mut prev = f(&cur);
            for &i in order {
                cur[i] = x[i];
                let now = f(&cur);
                phi[i] += now - prev;
                prev = now;
            }
        }
        phi.iter().map(|p| p / orders.len() as f64).collect()
    }

    #[test]
    fn linear_function_attributions() {
        let a = exact_shapley_fn(&[1.0, 1.0], &[0.0, 0.0], |v| v[0] + 2.0 * v[1]).unwrap();
        assert!((a.phi[0] - 1.0).abs() < 1e-15 && (a.phi[1] - 2.0).abs() < 1e-15);
        assert_eq!(a.base_value, 0.0);
        assert_eq!(a.full_value, 3.0);
    }

    #[test]
    fn constant_function_gives_zero() {
        let a = exact_shapley_fn(&[1.0, 2.0, 3.0], &[0.0; 3], |_| 7.0).unwrap();
        assert!(a.phi.iter().all(|p| *p == 0.0));
    }

    #[test]
    fn too_many_features_is_rejected() {
        let x = vec![0.0; 21];
        assert!(matches!(exact_shapley_fn(&x, &x, |_| 0.0), Err(Error::TooManyFeatures(21))));
        assert!(exact_shapley_fn(&[0.0; 2], &[0.0; 3], |_| 0.0).is_err());
    }

    /// A small random two-layer network over `n` inputs.
    fn random_net(n: usize, seed: u64) -> impl Fn(&[f64]) -> f64 {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        let w1: Vec<Vec<f64>> = (0..4).map(|_| (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect()).collect();
        let w2: Vec<f64> = (0..4).map(|_| rng.gen_range(-1.0..1.0)).collect();
        move |x: &[f64]| {
            let z: f64 = w1
                .iter()
                .zip(&w2)
                .map(|(row, o)| o * row.iter().zip(x).map(|(a, b)| a * b).sum::<f64>().tanh())
                .sum();
            1.0 / (1.0 + (-z).exp())
        }
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(16))]

        #[test]
        fn efficiency_holds(n in 1usize..=12, seed in 0u64..1000) {
            let f = random_net(n, seed);
            let x: Vec<f64> = (0..n).map(|i| (i as f64 * 0.37).sin()).collect();
            let base = vec![0.1; n];
            let a = exact_shapley_fn(&x, &base, &f).unwrap();
            prop_assert!((a.phi.iter().sum::<f64>() - (f(&x) - f(&base))).abs() <= 1e-6);
        }

        #[test]
        fn matches_permutation_oracle(n in 1usize..=6, seed in 0u64..1000) {
            let f = random_net(n, seed);
            let x: Vec<f64> = (0..n).map(|i| 1.0 - 0.3 * i as f64).collect();
            let base = vec![0.0; n];
            let a = exact_shapley_fn(&x, &base, &f).unwrap();
            let oracle = permutation_oracle(&x, &base, &f);
            for (p, q) in a.phi.iter().zip(&oracle) {
                prop_assert!((p - q).abs() <= 1e-12, "{p} vs {q}");
            }
        }

        #[test]
        fn symmetric_and_null_features(n in 3usize..=10, seed in 0u64..1000) {
            // Features 0 and 1 enter only through their sum; the last feature is ignored.
            let g = random_net(n - 1, seed);
            let f = |v: &[f64]| {
                let mut u = v[..n - 1].to_vec();
                u[0] = v[0] + v[1];
                u[1] = v[0] + v[1];
                g(&u)
            };
            let mut x: Vec<f64> = (0..n).map(|i| 0.5 + 0.1 * i as f64).collect();
            x[1] = x[0];
            let a = exact_shapley_fn(&x, &vec![0.0; n], f).unwrap();
            prop_assert!((a.phi[0] - a.phi[1]).abs() <= 1e-9);
            prop_assert!(a.phi[n - 1].abs() <= 1e-12);
        }
    }
}
