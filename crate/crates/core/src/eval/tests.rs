use std::collections::BTreeMap;

use proptest::prelude::*;
use rand::{Rng, SeedableRng};

use super::*;
use crate::decomp::{decompose, DecompConfig};
use crate::nn::{Arch, Model, ModelSpec};
use crate::signal::{BaselineSet, Channels, Modality, MultimodalWindow};

#[test]
fn metrics_examples() {
    let m = classification_metrics(&[0, 1, 1, 0], &[0, 1, 1, 0], 2).unwrap();
    assert_eq!((m.accuracy, m.f1), (1.0, 1.0));
    let m = classification_metrics(&[1; 10], &[0, 1, 0, 1, 0, 1, 0, 1, 0, 1], 2).unwrap();
    assert_eq!(m.accuracy, 0.5);

    // TP=8, FP=2, FN=2, TN=8.
    let mut preds = vec![1; 8];
    let mut labels = vec![1; 8];
    preds.extend([1, 1, 0, 0]);
    labels.extend([0, 0, 1, 1]);
    preds.extend([0; 8]);
    labels.extend([0; 8]);
    let m = classification_metrics(&preds, &labels, 2).unwrap();
    assert!((m.f1 - 2.0 * 8.0 / (2.0 * 8.0 + 2.0 + 2.0)).abs() < 1e-15);
    assert!((m.accuracy - 0.8).abs() < 1e-15);

    assert!(matches!(classification_metrics(&[], &[], 2), Err(Error::EmptyEval)));
}

#[test]
fn multiclass_f1_is_macro() {
    // Class 0: perfect; class 1: TP 1, FN 1; class 2: TP 1, FP 1.
    let m = classification_metrics(&[0, 1, 2, 2], &[0, 1, 1, 2], 3).unwrap();
    let expected = (1.0 + 2.0 / 3.0 + 2.0 / 3.0) / 3.0;
    assert!((m.f1 - expected).abs() < 1e-15);
}

#[test]
fn top_k_is_stable() {
    assert_eq!(top_k(&[0.1, 0.5, 0.5, 0.2], 3), vec![1, 2, 3]);
    assert_eq!(top_k(&[0.0; 4], 2), vec![0, 1]);
    assert!(top_k(&[1.0], 0).is_empty());
}

fn sign_masker(rows: &[Vec<f64>]) -> FeatureMasker<'_, impl Fn(&[f64]) -> Result<usize> + Sync> {
    const MEAN: [f64; 3] = [0.0, 0.0, 0.0];
    FeatureMasker { rows, train_mean: &MEAN, predict: |x: &[f64]| Ok(usize::from(x[0] + 0.1 * x[1] > 0.05)) }
}

fn random_rows(n: usize, seed: u64) -> Vec<Vec<f64>> {
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
    (0..n).map(|_| (0..3).map(|_| rng.gen_range(-1.0..1.0)).collect()).collect()
}

#[test]
fn masking_nothing_flips_nothing() {
    let rows = random_rows(50, 1);
    let m = sign_masker(&rows);
    let imp = vec![vec![0.5, 0.3, 0.2]; 50];
    assert_eq!(fidelity(&m, &imp, 0).unwrap().flip_rate, 0.0);
    assert_eq!(sufficiency(&m, &imp, 0.0).unwrap().flip_rate, 0.0);
    assert!(matches!(fidelity(&m, &imp, 4), Err(Error::KTooLarge { k: 4, d: 3 })));
}

#[test]
fn sufficiency_above_one_equals_full_fidelity() {
    let rows = random_rows(60, 2);
    let m = sign_masker(&rows);
    let imp: Vec<Vec<f64>> = random_rows(60, 3).into_iter().map(|r| r.iter().map(|v| v.abs()).collect()).collect();
    let s = sufficiency(&m, &imp, 1.0 + 1e-9).unwrap();
    let f = fidelity(&m, &imp, 3).unwrap();
    assert_eq!(s.flips, f.flips);
}

#[test]
fn top_masking_beats_random_masking() {
    let rows = random_rows(400, 4);
    let m = sign_masker(&rows);
    let imp = vec![vec![0.9, 0.1, 0.0]; 400];
    let top = fidelity(&m, &imp, 1).unwrap();
    let rand = random_fidelity(&m, 1, 7).unwrap();
    assert!(top.flip_rate >= rand.flip_rate + 0.1, "{} vs {}", top.flip_rate, rand.flip_rate);
    assert_eq!(random_fidelity(&m, 1, 7).unwrap(), rand);
}

fn window(seed: u64) -> MultimodalWindow {
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
    let mut ch = Channels::new();
    ch.insert(Modality::Hr, (0..10).map(|_| 75.0 + rng.gen_range(-5.0..5.0)).collect());
    ch.insert(Modality::Eda, (0..10).map(|_| 2.0 + rng.gen_range(-0.5..0.5)).collect());
    MultimodalWindow::new(format!("w{seed}"), "s", Some((seed % 2) as usize), 1.0, ch).unwrap()
}

fn component_setup() -> (Model, Vec<ComponentSet>) {
    let b = BaselineSet::new([(Modality::Hr, 70.0), (Modality::Eda, 1.8)].into_iter().collect::<BTreeMap<_, _>>()).unwrap();
    let sets = (0..12).map(|s| decompose(&window(s), &b, &DecompConfig::default()).unwrap()).collect();
    let mut spec = ModelSpec::new(Arch::Fcn, 10, vec!["HR".into(), "EDA".into()], 2);
    spec.hidden_size = 6;
    spec.seed = 3;
    let mut model = Model::new(spec).unwrap();
    model.set_standardizer(crate::nn::Standardizer { mean: vec![75.0, 2.0], std: vec![3.0, 0.3] });
    (model, sets)
}

#[test]
fn component_masker_zeroes_selected_weights() {
    let (model, sets) = component_setup();
    let masker = ComponentMasker { model: &model, sets: &sets };
    let d = masker.d();
    let mut mask = vec![false; d];
    mask[0] = true;
    mask[d - 1] = true;
    let mut w = vec![1.0; d];
    w[0] = 0.0;
    w[d - 1] = 0.0;
    let direct = model.predict(&reconstruct(&sets[2], &WeightVector::new(w).unwrap()).unwrap()).unwrap();
    assert_eq!(masker.predict(2, &mask).unwrap(), direct);
}

#[test]
fn masking_everything_matches_baseline_reconstruction() {
    let (model, sets) = component_setup();
    let masker = ComponentMasker { model: &model, sets: &sets };
    let d = masker.d();
    let imp = vec![vec![0.5; d]; sets.len()];
    let report = fidelity(&masker, &imp, d).unwrap();
    for (i, cs) in sets.iter().enumerate() {
        let full = model.predict(&reconstruct(cs, &WeightVector::ones(d)).unwrap()).unwrap();
        let base = model.predict(&reconstruct(cs, &WeightVector::zeros(d)).unwrap()).unwrap();
        assert_eq!(report.flips[i], full != base);
    }
}

fn local(importance: Vec<f64>, values: Vec<f64>, predicted: usize, label: usize) -> LocalSummary {
    LocalSummary { importance, values: Some(values), predicted, label: Some(label) }
}

fn names(n: &[&str]) -> Vec<String> {
    n.iter().map(|s| s.to_string()).collect()
}

#[test]
fn global_means_and_ranking() {
    let g = aggregate_global(
        &names(&["A", "B"]),
        &[local(vec![1.0, 0.0], vec![3.0, 4.0], 1, 1), local(vec![0.0, 1.0], vec![5.0, 6.0], 0, 0)],
    )
    .unwrap();
    assert_eq!(g.mean_importance, vec![0.5, 0.5]);
    assert_eq!(g.top(2), vec!["A", "B"]);
    assert_eq!(
        g.distributions,
        vec![
            DistributionRow { component: "A".into(), group: OutcomeGroup::TruePositive, value: 3.0 },
            DistributionRow { component: "B".into(), group: OutcomeGroup::TrueNegative, value: 6.0 },
        ]
    );

    let same = local(vec![0.2, 0.7], vec![0.0, 0.0], 1, 0);
    let g = aggregate_global(&names(&["A", "B"]), &[same.clone(), same.clone(), same]).unwrap();
    assert_eq!(g.mean_importance, vec![0.2, 0.7]);
    assert_eq!(g.top(1), vec!["B"]);
    assert!(g.distributions.is_empty(), "misclassified windows are not summarized");

    let zero = aggregate_global(&names(&["A"]), &[local(vec![0.0], vec![1.0], 0, 0)]).unwrap();
    assert!(zero.ranking.is_empty());
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn global_ranking_ignores_order(seed in 0u64..1000, n in 1usize..30) {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        let locals: Vec<LocalSummary> = (0..n)
            .map(|_| local((0..4).map(|_| rng.gen_range(0.0..1.0)).collect(), vec![0.0; 4], rng.gen_range(0..2), rng.gen_range(0..2)))
            .collect();
        let mut rev = locals.clone();
        rev.reverse();
        let a = aggregate_global(&names(&["a", "b", "c", "d"]), &locals).unwrap();
        let b = aggregate_global(&names(&["a", "b", "c", "d"]), &rev).unwrap();
        prop_assert_eq!(&a.mean_importance, &b.mean_importance);
        prop_assert_eq!(&a.ranking, &b.ranking);
        prop_assert!(a.ranking.windows(2).all(|w| w[0].importance >= w[1].importance));
    }

    #[test]
    fn flip_rate_is_mean_of_flips(seed in 0u64..1000, k in 0usize..=3) {
        let rows = random_rows(40, seed);
        let m = sign_masker(&rows);
        let r = random_fidelity(&m, k, seed).unwrap();
        let mean = r.flips.iter().filter(|f| **f).count() as f64 / r.flips.len() as f64;
        prop_assert_eq!(r.flip_rate, mean);
    }
}
