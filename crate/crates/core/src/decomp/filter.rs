//! Tonic skin-conductance extraction: a centered moving median followed by a
//! zero-phase (forward-backward) first-order low-pass. Both stages pad the
//! signal by odd reflection around its endpoints, so linear trends pass
//! through unchanged.

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TonicFilter {
    /// Width of the moving-median window, seconds.
    pub median_window_s: f64,
    /// Low-pass cutoff, Hz.
    pub cutoff_hz: f64,
}

impl Default for TonicFilter {
    fn default() -> Self {
        Self { median_window_s: 4.0, cutoff_hz: 0.05 }
    }
}

impl TonicFilter {
    pub fn apply(&self, xs: &[f64], sample_rate_hz: f64) -> Vec<f64> {
        if xs.len() < 2 {
            return xs.to_vec();
        }
        let half = (self.median_window_s * sample_rate_hz / 2.0).round() as usize;
        let med = moving_median(xs, half);
        let rc = 1.0 / (2.0 * PI * self.cutoff_hz);
        let dt = 1.0 / sample_rate_hz;
        let alpha = dt / (rc + dt);
        let pad = (6.0 * rc * sample_rate_hz).ceil() as usize;
        lowpass_filtfilt(&med, alpha, pad)
    }
}

/// Odd reflection: `2 x[0] - x[k]` before the start, `2 x[n-1] - x[n-1-k]`
/// past the end. `pad` is capped at `n - 1`.
pub(crate) fn odd_extend(xs: &[f64], pad: usize) -> (Vec<f64>, usize) {
    let n = xs.len();
    let pad = pad.min(n.saturating_sub(1));
    let mut out = Vec::with_capacity(n + 2 * pad);
    out.extend((1..=pad).rev().map(|k| 2.0 * xs[0] - xs[k]));
    out.extend_from_slice(xs);
    out.extend((1..=pad).map(|k| 2.0 * xs[n - 1] - xs[n - 1 - k]));
    (out, pad)
}

pub(crate) fn moving_median(xs: &[f64], half: usize) -> Vec<f64> {
    if half == 0 {
        return xs.to_vec();
    }
    let (ext, pad) = odd_extend(xs, half);
    let mut buf = Vec::with_capacity(2 * half + 1);
    (0..xs.len())
        .map(|i| {
            let c = i + pad;
            let lo = c.saturating_sub(half);
            let hi = (c + half + 1).min(ext.len());
            buf.clear();
            buf.extend_from_slice(&ext[lo..hi]);
            buf.sort_by(f64::total_cmp);
            let m = buf.len();
            if m % 2 == 1 {
                buf[m / 2]
            } else {
                0.5 * (buf[m / 2 - 1] + buf[m / 2])
            }
        })
        .collect()
}

pub(crate) fn lowpass_filtfilt(xs: &[f64], alpha: f64, pad: usize) -> Vec<f64> {
    let (mut ext, pad) = odd_extend(xs, pad);
    let mut y = ext[0];
    for v in ext.iter_mut() {
        y += alpha * (*v - y);
        *v = y;
    }
    let mut y = *ext.last().expect("non-empty");
    for v in ext.iter_mut().rev() {
        y += alpha * (*v - y);
        *v = y;
    }
    ext[pad..pad + xs.len()].to_vec()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn odd_extension_continues_a_line() {
        let (ext, pad) = odd_extend(&[1.0, 2.0, 3.0, 4.0], 2);
        assert_eq!(pad, 2);
        assert_eq!(ext, vec![-1.0, 0.0, 1.0, 2.0, 3.0, 4.0, 5.0, 6.0]);
    }

    #[test]
    fn median_rejects_single_spike() {
        let mut xs = vec![1.0; 21];
        xs[10] = 50.0;
        let m = moving_median(&xs, 2);
        assert!(m.iter().all(|&v| v == 1.0));
    }

    #[test]
    fn constant_passes_unchanged() {
        let xs = vec![3.5; 40];
        let y = TonicFilter::default().apply(&xs, 4.0);
        for v in y {
            assert!((v - 3.5).abs() < 1e-12);
        }
    }
}
