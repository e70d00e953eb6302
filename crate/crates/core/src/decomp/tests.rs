use std::collections::BTreeMap;

use proptest::prelude::*;

use super::*;

fn baselines(pairs: &[(Modality, f64)]) -> BaselineSet {
    BaselineSet::new(pairs.iter().copied().collect::<BTreeMap<_, _>>()).unwrap()
}

fn window(channels: &[(Modality, Vec<f64>)], rate: f64) -> MultimodalWindow {
    let ch: Channels = channels.iter().cloned().collect();
    MultimodalWindow::new("w", "s", Some(0), rate, ch).unwrap()
}

fn series(c: &Component) -> &[f64] {
    c.payload.series()
}

fn max_abs_diff(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

#[test]
fn acc_constant_at_baseline_is_all_zero() {
    let (cs, aux) = decompose_acc(&[1.0; 10], 1.0, 3.0);
    assert_eq!(cs[0].payload, Payload::Scalar(0.0));
    assert!(series(&cs[1]).iter().all(|&v| v == 0.0));
    assert!(series(&cs[2]).iter().all(|&v| v == 0.0));
    assert!(aux.acc_signs.unwrap().iter().all(|&s| s == 0));
}

#[test]
fn acc_spike_lands_in_outlier() {
    // One spike in 26 flat samples has z = sqrt(25) = 5.
    let mut r = vec![1.0; 26];
    r[7] = 3.0;
    let (cs, _) = decompose_acc(&r, 0.9, 3.0);
    // Oracle: direct per-sample z-scores of the zero-mean signal.
    let m = r.iter().sum::<f64>() / 26.0;
    let zm: Vec<f64> = r.iter().map(|x| x - m).collect();
    let sd = (zm.iter().map(|z| z * z).sum::<f64>() / 26.0).sqrt();
    let z: Vec<f64> = zm.iter().map(|v| v / sd).collect();
    assert!((z[7] - 5.0).abs() < 1e-12);
    let outlier = series(&cs[1]);
    for k in 0..26 {
        assert_eq!(outlier[k] != 0.0, z[k].abs() > 3.0, "sample {k}");
    }
    assert!((outlier[7] - zm[7]).abs() < 1e-12);
    let activity = series(&cs[2]);
    assert_eq!(activity[7], 0.0);
    let rest: Vec<f64> = activity.iter().enumerate().filter(|(k, _)| *k != 7).map(|(_, v)| *v).collect();
    assert!(max_abs_diff(&rest, &vec![rest[0]; rest.len()]) < 1e-12);
}

#[test]
fn acc_zero_variance_has_no_outliers() {
    let (cs, _) = decompose_acc(&[2.0; 5], 1.0, 0.0);
    assert!(series(&cs[1]).iter().all(|&v| v == 0.0));
}

#[test]
fn hr_examples() {
    let (cs, aux) = decompose_hr(&[60.0; 4], 60.0).unwrap();
    assert_eq!(cs[0].payload, Payload::Scalar(0.0));
    assert!(series(&cs[1]).iter().all(|&v| v == 0.0));
    assert_eq!(aux.hr_anchor_rr_ms, Some(0.0));

    // RR = [1000, 990, 1010]
    let hr: Vec<f64> = [1000.0, 990.0, 1010.0].iter().map(|rr| 60000.0 / rr).collect();
    let (cs, aux) = decompose_hr(&hr, 60.0).unwrap();
    let v = series(&cs[1]);
    assert!((v[0] - 10.0).abs() < 1e-9 && (v[1] - 20.0).abs() < 1e-9);
    assert_eq!(aux.hr_signs.unwrap(), vec![-1, 1]);

    let (cs, _) = decompose_hr(&[80.0; 3], 60.0).unwrap();
    assert!((cs[0].payload.scalar() - 20.0).abs() < 1e-12);

    assert!(matches!(decompose_hr(&[60.0, -1.0], 60.0), Err(Error::NonPositiveHeartRate { index: 1, .. })));
}

#[test]
fn eda_constant_at_baseline_is_all_zero() {
    let (cs, _) = decompose_eda(&[2.0; 32], 2.0, 4.0, &TonicFilter::default());
    assert!(cs[0].payload.scalar().abs() < 1e-12);
    assert!(series(&cs[1]).iter().all(|v| v.abs() < 1e-12));
    assert!(series(&cs[2]).iter().all(|v| v.abs() < 1e-12));
}

/// Independent re-implementation of the tonic filter, written with plain
/// index arithmetic instead of the shared padding helper.
fn oracle_tonic(xs: &[f64], rate: f64, median_s: f64, cutoff: f64) -> Vec<f64> {
    let n = xs.len() as isize;
    let at = |i: isize| -> f64 {
        if i < 0 {
            2.0 * xs[0] - xs[(-i) as usize]
        } else if i >= n {
            2.0 * xs[(n - 1) as usize] - xs[(2 * (n - 1) - i) as usize]
        } else {
            xs[i as usize]
        }
    };
    let h = (median_s * rate / 2.0).round() as isize;
    let h_pad = h.min(n - 1);
    let med: Vec<f64> = (0..n)
        .map(|i| {
            let lo = (i - h).max(-h_pad);
            let hi = (i + h).min(n - 1 + h_pad);
            let mut v: Vec<f64> = (lo..=hi).map(at).collect();
            v.sort_by(|a, b| a.partial_cmp(b).unwrap());
            let m = v.len();
            if m % 2 == 1 { v[m / 2] } else { (v[m / 2 - 1] + v[m / 2]) / 2.0 }
        })
        .collect();
    let rc = 1.0 / (2.0 * std::f64::consts::PI * cutoff);
    let alpha = (1.0 / rate) / (rc + 1.0 / rate);
    let pad = ((6.0 * rc * rate).ceil() as isize).min(n - 1);
    let mat = |i: isize| -> f64 {
        if i < 0 {
            2.0 * med[0] - med[(-i) as usize]
        } else if i >= n {
            2.0 * med[(n - 1) as usize] - med[(2 * (n - 1) - i) as usize]
        } else {
            med[i as usize]
        }
    };
    let ext: Vec<f64> = (-pad..n + pad).map(mat).collect();
    let mut fwd = vec![0.0; ext.len()];
    fwd[0] = ext[0];
    for i in 1..ext.len() {
        fwd[i] = fwd[i - 1] + alpha * (ext[i] - fwd[i - 1]);
    }
    let mut bwd = vec![0.0; ext.len()];
    let last = ext.len() - 1;
    bwd[last] = fwd[last];
    for i in (0..last).rev() {
        bwd[i] = bwd[i + 1] + alpha * (fwd[i] - bwd[i + 1]);
    }
    bwd[pad as usize..(pad + n) as usize].to_vec()
}

#[test]
fn tonic_filter_matches_oracle() {
    let xs: Vec<f64> = (0..90).map(|i| 2.0 + (i as f64 * 0.37).sin() + 0.01 * i as f64).collect();
    let got = TonicFilter::default().apply(&xs, 2.0);
    let want = oracle_tonic(&xs, 2.0, 4.0, 0.05);
    assert!(max_abs_diff(&got, &want) < 1e-12);
}

#[test]
fn eda_slow_ramp_is_tonic() {
    let rate = 4.0;
    let xs: Vec<f64> = (0..240).map(|i| 1.0 + 0.5 * i as f64 / 239.0).collect();
    let amplitude = 0.5;
    let (cs, _) = decompose_eda(&xs, 1.2, rate, &TonicFilter::default());
    let phasic = series(&cs[2]);
    let worst = phasic.iter().fold(0.0f64, |a, v| a.max(v.abs()));
    assert!(worst < 0.01 * amplitude, "phasic max {worst}");
    let tonic = oracle_tonic(&xs, rate, 4.0, 0.05);
    let change = series(&cs[1]);
    let mean = cs[0].payload.scalar();
    for k in 0..xs.len() {
        assert!((1.2 + mean + change[k] - tonic[k]).abs() < 1e-12);
    }
}

#[test]
fn temp_examples() {
    let (cs, _) = decompose_temp(&[34.0, 34.5, 35.0, 35.2], 34.0);
    assert!(series(&cs[2]).iter().all(|&v| v == 0.0));

    let (cs, aux) = decompose_temp(&[34.0, 34.2, 34.1], 34.1);
    assert!(cs[0].payload.scalar().abs() < 1e-12);
    let rising = series(&cs[1]);
    let falling = series(&cs[2]);
    assert!((rising[0] - 0.2).abs() < 1e-12 && rising[1] == 0.0);
    assert!(falling[0] == 0.0 && (falling[1] + 0.1).abs() < 1e-12);
    assert!((aux.temp_anchor.unwrap() + 0.1).abs() < 1e-12);
}

fn full_window() -> (MultimodalWindow, BaselineSet) {
    let t = 40;
    let f = |a: f64, b: f64, c: f64| (0..t).map(|i| a + b * (i as f64 * c).sin()).collect::<Vec<_>>();
    let w = window(
        &[
            (Modality::Acc, f(1.0, 0.3, 0.9)),
            (Modality::Hr, f(72.0, 8.0, 0.4)),
            (Modality::Eda, f(2.0, 0.4, 0.2)),
            (Modality::Temp, f(33.0, 0.2, 0.1)),
        ],
        2.0,
    );
    let b = baselines(&[(Modality::Acc, 1.02), (Modality::Hr, 70.0), (Modality::Eda, 1.8), (Modality::Temp, 33.4)]);
    (w, b)
}

#[test]
fn component_counts_follow_modalities() {
    let (w, b) = full_window();
    let cs = decompose(&w, &b, &DecompConfig::default()).unwrap();
    assert_eq!(cs.d(), 11);
    assert_eq!(cs.kinds(), ComponentKind::ALL.to_vec());

    let mut ch = w.channels().clone();
    ch.remove(&Modality::Temp);
    let cs = decompose(&w.with_channels(ch).unwrap(), &b, &DecompConfig::default()).unwrap();
    assert_eq!(cs.d(), 8);
}

#[test]
fn missing_baseline_is_an_error() {
    let (w, _) = full_window();
    let b = baselines(&[(Modality::Hr, 70.0)]);
    assert!(matches!(decompose(&w, &b, &DecompConfig::default()), Err(Error::MissingModality(_))));
}

#[test]
fn reconstruct_ones_is_identity() {
    let (w, b) = full_window();
    let cs = decompose(&w, &b, &DecompConfig::default()).unwrap();
    let back = reconstruct(&cs, &WeightVector::ones(cs.d())).unwrap();
    for (m, xs) in w.channels() {
        assert!(max_abs_diff(xs, back.channel(*m).unwrap()) <= 1e-9, "{m}");
    }
}

#[test]
fn reconstruct_zeros_matches_hand_formulas() {
    let w = window(
        &[
            (Modality::Acc, vec![1.0, 1.2, 0.8, 1.1, 0.9]),
            (Modality::Hr, vec![60.0, 62.0, 65.0, 61.0, 58.0]),
            (Modality::Eda, vec![2.0, 2.1, 2.3, 2.2, 2.0]),
            (Modality::Temp, vec![33.0, 33.1, 33.3, 33.2, 33.4]),
        ],
        1.0,
    );
    let b = baselines(&[(Modality::Acc, 1.0), (Modality::Hr, 70.0), (Modality::Eda, 1.5), (Modality::Temp, 33.5)]);
    let cs = decompose(&w, &b, &DecompConfig::default()).unwrap();
    let out = reconstruct(&cs, &WeightVector::zeros(cs.d())).unwrap();
    assert!(out.channel(Modality::Acc).unwrap().iter().all(|&v| v == 1.0));
    assert!(out.channel(Modality::Eda).unwrap().iter().all(|&v| v == 1.5));
    // HR: RR anchor x_RR_0 - mean(x_RR), propagated unchanged.
    let rr: Vec<f64> = [60.0, 62.0, 65.0, 61.0, 58.0].iter().map(|h| 60000.0 / h).collect();
    let anchor = rr[0] - rr.iter().sum::<f64>() / 5.0;
    let hr0 = 60000.0 / (60000.0 / 70.0 + anchor);
    for v in out.channel(Modality::Hr).unwrap() {
        assert!((v - hr0).abs() < 1e-9);
    }
    // TEMP: b + anchor, no ramp. anchor = x0 - b - mean(x - b) = x0 - mean(x).
    let temp_anchor = 33.0 - (33.0 + 33.1 + 33.3 + 33.2 + 33.4) / 5.0;
    for v in out.channel(Modality::Temp).unwrap() {
        assert!((v - (33.5 + temp_anchor)).abs() < 1e-9);
    }
}

#[test]
fn zeroing_hr_mean_collapses_to_baseline() {
    let w = window(&[(Modality::Hr, vec![80.0; 6])], 1.0);
    let b = baselines(&[(Modality::Hr, 60.0)]);
    let cs = decompose(&w, &b, &DecompConfig::default()).unwrap();
    assert!((cs.components()[0].payload.scalar() - 20.0).abs() < 1e-12);
    let out = reconstruct(&cs, &WeightVector::new(vec![0.0, 1.0]).unwrap()).unwrap();
    for v in out.channel(Modality::Hr).unwrap() {
        assert!((v - 60.0).abs() < 1e-9);
    }
}

#[test]
fn reconstruct_validates_weights() {
    let (w, b) = full_window();
    let cs = decompose(&w, &b, &DecompConfig::default()).unwrap();
    assert!(matches!(WeightVector::new(vec![1.5]), Err(Error::WeightOutOfRange { index: 0, .. })));
    assert!(matches!(
        reconstruct(&cs, &WeightVector::ones(3)),
        Err(Error::DimensionMismatch { expected: 11, got: 3 })
    ));
}

/// `sum(g * reconstruct(w))`, the scalar whose w-gradient is `weight_jvp`.
fn projected(cs: &ComponentSet, w: &[f64], g: &Channels) -> f64 {
    let out = reconstruct_channels(cs, w);
    out.iter().map(|(m, xs)| xs.iter().zip(&g[m]).map(|(a, b)| a * b).sum::<f64>()).sum()
}

fn central_fd(cs: &ComponentSet, w: &[f64], g: &Channels, h: f64) -> Vec<f64> {
    (0..w.len())
        .map(|i| {
            let mut wp = w.to_vec();
            let mut wm = w.to_vec();
            wp[i] += h;
            wm[i] -= h;
            (projected(cs, &wp, g) - projected(cs, &wm, g)) / (2.0 * h)
        })
        .collect()
}

fn rel_err(a: &[f64], b: &[f64]) -> f64 {
    let num = a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt();
    let den = a.iter().map(|x| x * x).sum::<f64>().sqrt().max(b.iter().map(|x| x * x).sum::<f64>().sqrt());
    if den == 0.0 { num } else { num / den }
}

#[test]
fn weight_jvp_matches_finite_differences() {
    let (w, b) = full_window();
    let cs = decompose(&w, &b, &DecompConfig::default()).unwrap();
    let g: Channels = w
        .channels()
        .keys()
        .enumerate()
        .map(|(j, m)| (*m, (0..w.len()).map(|i| ((i * 7 + j * 3) as f64 * 0.61).cos()).collect()))
        .collect();
    let wv: Vec<f64> = (0..cs.d()).map(|i| 0.2 + 0.06 * i as f64).collect();
    let analytic = weight_jvp(&cs, &WeightVector::new(wv.clone()).unwrap(), &g).unwrap();
    let fd = central_fd(&cs, &wv, &g, 1e-5);
    assert!(rel_err(&analytic, &fd) <= 1e-6, "analytic {analytic:?}\nfd {fd:?}");
}

#[test]
fn weight_jvp_of_zero_gradient_is_zero() {
    let (w, b) = full_window();
    let cs = decompose(&w, &b, &DecompConfig::default()).unwrap();
    let g: Channels = w.channels().keys().map(|m| (*m, vec![0.0; w.len()])).collect();
    let grad = weight_jvp(&cs, &WeightVector::ones(cs.d()), &g).unwrap();
    assert!(grad.iter().all(|&v| v == 0.0));
}

#[test]
fn clamped_rr_samples_have_zero_gradient() {
    // RR = [1000, 1000, 500, 200]; with w = (0, 0.8) and b_hr = 200 the last
    // reconstructed interval is -15 ms and gets clamped.
    let w = window(&[(Modality::Hr, vec![60.0, 60.0, 120.0, 300.0])], 1.0);
    let b = baselines(&[(Modality::Hr, 200.0)]);
    let cs = decompose(&w, &b, &DecompConfig::default()).unwrap();
    let wv = vec![0.0, 0.8];
    let rr = hr_rr(&cs, &wv).rr;
    assert!(rr[3] < 200.0 && rr[2] > 200.0);
    let out = reconstruct_channels(&cs, &wv);
    assert!((out[&Modality::Hr][3] - 300.0).abs() < 1e-12);

    // Only the clamped sample carries gradient: both routes must give zero.
    let mut g = Channels::new();
    g.insert(Modality::Hr, vec![0.0, 0.0, 0.0, 1.0]);
    let analytic = weight_jvp(&cs, &WeightVector::new(wv.clone()).unwrap(), &g).unwrap();
    let fd = central_fd(&cs, &wv, &g, 1e-5);
    assert_eq!(analytic, vec![0.0, 0.0]);
    assert!(fd.iter().all(|v| v.abs() < 1e-12));

    // With all samples weighted the two routes still agree.
    g.insert(Modality::Hr, vec![0.3, -0.2, 0.7, 1.0]);
    let analytic = weight_jvp(&cs, &WeightVector::new(wv.clone()).unwrap(), &g).unwrap();
    let fd = central_fd(&cs, &wv, &g, 1e-5);
    assert!(rel_err(&analytic, &fd) <= 1e-6);
}

#[test]
fn component_dump_shape() {
    let (w, b) = full_window();
    let cs = decompose(&w, &b, &DecompConfig::default()).unwrap();
    let v = serde_json::to_value(ComponentDump::from(&cs)).unwrap();
    assert_eq!(v["window_id"], "w");
    assert_eq!(v["components"][0]["name"], "ACC.MeanOB");
    assert!(v["components"][0]["payload"].is_number());
    assert!(v["components"][1]["payload"].is_array());
    assert!(v["aux"]["hr_anchor_rr_ms"].is_number());
    assert!(v["baselines"]["HR"].is_number());
}

fn arb_window() -> impl Strategy<Value = (MultimodalWindow, BaselineSet)> {
    (2usize..64).prop_flat_map(|t| {
        (
            prop::collection::vec(0.0f64..3.0, t),
            prop::collection::vec(35.0f64..190.0, t),
            prop::collection::vec(0.05f64..20.0, t),
            prop::collection::vec(28.0f64..38.0, t),
            (0.5f64..1.5, 50.0f64..100.0, 0.5f64..5.0, 30.0f64..35.0),
            prop::sample::select(vec![1.0, 2.0, 4.0, 32.0]),
        )
            .prop_map(|(acc, hr, eda, temp, (ba, bh, be, bt), rate)| {
                let w = window(
                    &[(Modality::Acc, acc), (Modality::Hr, hr), (Modality::Eda, eda), (Modality::Temp, temp)],
                    rate,
                );
                let b = baselines(&[(Modality::Acc, ba), (Modality::Hr, bh), (Modality::Eda, be), (Modality::Temp, bt)]);
                (w, b)
            })
    })
}

proptest! {
    #[test]
    fn round_trip_is_exact((w, b) in arb_window()) {
        let cs = decompose(&w, &b, &DecompConfig::default()).unwrap();
        let back = reconstruct(&cs, &WeightVector::ones(cs.d())).unwrap();
        for (m, xs) in w.channels() {
            prop_assert!(max_abs_diff(xs, back.channel(*m).unwrap()) <= 1e-9);
        }
    }

    #[test]
    fn signs_times_magnitudes_recover_residuals((w, b) in arb_window()) {
        let cs = decompose(&w, &b, &DecompConfig::default()).unwrap();
        // HR: signs * |diff| == diff exactly.
        let rr: Vec<f64> = w.channel(Modality::Hr).unwrap().iter().map(|x| 60000.0 / x).collect();
        let var = cs.payload(ComponentKind::HrVariability).series();
        for (k, (&s, v)) in cs.aux().hr_signs.as_ref().unwrap().iter().zip(var).enumerate() {
            prop_assert_eq!(f64::from(s) * v, rr[k + 1] - rr[k]);
            prop_assert!(*v >= 0.0);
        }
        // ACC: signs * activity + outlier == zero-mean signal exactly.
        let act = cs.payload(ComponentKind::AccActivity).series();
        prop_assert!(act.iter().all(|&v| v >= 0.0));
        let out = cs.payload(ComponentKind::AccOutlier).series();
        let b_acc = b.get(Modality::Acc).unwrap();
        let meanob = cs.payload(ComponentKind::AccMeanOb).scalar();
        for (k, &s) in cs.aux().acc_signs.as_ref().unwrap().iter().enumerate() {
            let zm = w.channel(Modality::Acc).unwrap()[k] - b_acc - meanob;
            prop_assert_eq!(f64::from(s) * act[k], zm - out[k]);
        }
    }

    #[test]
    fn tonic_plus_phasic_is_input(
        xs in prop::collection::vec(0.05f64..20.0, 2..128),
        median_s in 0.0f64..10.0,
        cutoff in 0.005f64..2.0,
        rate in 0.5f64..32.0,
    ) {
        let filter = TonicFilter { median_window_s: median_s, cutoff_hz: cutoff };
        let (cs, _) = decompose_eda(&xs, 1.0, rate, &filter);
        let meanob = cs[0].payload.scalar();
        let change = series(&cs[1]);
        let phasic = series(&cs[2]);
        for k in 0..xs.len() {
            let tonic = 1.0 + meanob + change[k];
            prop_assert!((tonic + phasic[k] - xs[k]).abs() <= 1e-12);
        }
    }

    #[test]
    fn reconstruct_is_affine_in_linear_weights((w, b) in arb_window(), a in 0.0f64..1.0) {
        // ACC/EDA/TEMP are affine in their weights: x(a) = (1-a) x(0) + a x(1).
        let cs = decompose(&w, &b, &DecompConfig::default()).unwrap();
        let d = cs.d();
        let x0 = reconstruct_channels(&cs, &vec![0.0; d]);
        let x1 = reconstruct_channels(&cs, &vec![1.0; d]);
        let xa = reconstruct_channels(&cs, &vec![a; d]);
        for m in [Modality::Acc, Modality::Eda, Modality::Temp] {
            for k in 0..cs.t() {
                let lin = (1.0 - a) * x0[&m][k] + a * x1[&m][k];
                prop_assert!((xa[&m][k] - lin).abs() <= 1e-9 * (1.0 + lin.abs()));
            }
        }
    }
}
