mod common;

use common::*;
use epvt::eval::*;
use epvt::synth::{ArtifactKind, ImageRecord};
use epvt::train::Method;
use epvt::EpvtError;
use nalgebra::{DMatrix, DVector};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// `P(score_pos > score_neg) + ½·P(tie)` over every positive/negative pair.
fn auc_brute_force(scores: &[f64], labels: &[u8]) -> f64 {
    let mut total = 0.0;
    let mut pairs = 0.0;
    for i in 0..scores.len() {
        for j in 0..scores.len() {
            if labels[i] == 1 && labels[j] == 0 {
                pairs += 1.0;
                if scores[i] > scores[j] {
                    total += 1.0;
                } else if scores[i] == scores[j] {
                    total += 0.5;
                }
            }
        }
    }
    total / pairs
}

fn random_instance(rng: &mut ChaCha8Rng) -> (Vec<f64>, Vec<u8>) {
    let n = rng.random_range(2..60);
    // Coarse scores so ties are common.
    let levels = rng.random_range(2..20);
    let scores: Vec<f64> = (0..n).map(|_| rng.random_range(0..levels) as f64 / levels as f64).collect();
    let mut labels: Vec<u8> = (0..n).map(|_| rng.random_range(0..2)).collect();
    labels[0] = 0;
    labels[1] = 1;
    (scores, labels)
}

#[test]
fn auc_matches_brute_force_on_random_instances() {
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    for _ in 0..100 {
        let (scores, labels) = random_instance(&mut rng);
        let want = auc_brute_force(&scores, &labels);
        let got = roc_auc(&ScoredSet::new(scores, labels).unwrap()).unwrap();
        assert!((got - want).abs() < 1e-9, "{got} vs {want}");
    }
}

#[test]
fn auc_examples() {
    let set = |s: &[f64], l: &[u8]| ScoredSet::new(s.to_vec(), l.to_vec()).unwrap();
    assert_eq!(roc_auc(&set(&[0.1, 0.2, 0.8, 0.9], &[0, 0, 1, 1])).unwrap(), 1.0);
    assert_eq!(roc_auc(&set(&[0.5; 4], &[0, 1, 0, 1])).unwrap(), 0.5);
    assert!((roc_auc(&set(&[0.1, 0.4, 0.35, 0.8], &[0, 0, 1, 1])).unwrap() - 0.75).abs() < 1e-12);
    assert!(matches!(
        roc_auc(&set(&[0.1, 0.4], &[1, 1])),
        Err(EpvtError::UndefinedMetric(_))
    ));
}

/// Ranks 1..n of distinct values.
fn plain_ranks(xs: &[f64]) -> Vec<f64> {
    let mut order: Vec<usize> = (0..xs.len()).collect();
    order.sort_by(|&a, &b| xs[a].total_cmp(&xs[b]));
    let mut r = vec![0.0; xs.len()];
    for (rank, &i) in order.iter().enumerate() {
        r[i] = rank as f64 + 1.0;
    }
    r
}

fn pearson_oracle(x: &[f64], y: &[f64]) -> f64 {
    let n = x.len() as f64;
    let (mx, my) = (x.iter().sum::<f64>() / n, y.iter().sum::<f64>() / n);
    let cov: f64 = x.iter().zip(y).map(|(a, b)| (a - mx) * (b - my)).sum();
    let vx: f64 = x.iter().map(|a| (a - mx).powi(2)).sum();
    let vy: f64 = y.iter().map(|b| (b - my).powi(2)).sum();
    cov / (vx * vy).sqrt()
}

#[test]
fn spearman_examples() {
    let x = [1.0, 2.0, 3.0, 4.0];
    assert!((spearman(&x, &x).unwrap() - 1.0).abs() < 1e-12);
    let neg: Vec<f64> = x.iter().map(|v| -v).collect();
    assert!((spearman(&x, &neg).unwrap() + 1.0).abs() < 1e-12);
    assert!((spearman(&x, &[10.0, 9.0, 30.0, 40.0]).unwrap() - 0.8).abs() < 1e-12);
    assert!(matches!(
        spearman(&x, &[2.0; 4]),
        Err(EpvtError::UndefinedCorrelation(_))
    ));
}

fn summary(mean: &[f64], diag: &[f64]) -> GaussianSummary {
    GaussianSummary::new(
        DVector::from_column_slice(mean),
        DMatrix::from_diagonal(&DVector::from_column_slice(diag)),
        100,
    )
    .unwrap()
}

#[test]
fn frechet_closed_forms() {
    let a = summary(&[0.0], &[1.0]);
    let b = summary(&[1.0], &[1.0]);
    assert!((frechet_distance(&a, &b).unwrap() - 1.0).abs() < 1e-6);
    assert!(frechet_distance(&a, &a).unwrap().abs() < 1e-8);

    let a = summary(&[0.0, 0.0], &[1.0, 1.0]);
    let b = summary(&[1.0, 1.0], &[4.0, 4.0]);
    assert!((frechet_distance(&a, &b).unwrap() - 4.0).abs() < 1e-6);

    let c = summary(&[0.0, 0.0, 0.0], &[1.0, 1.0, 1.0]);
    assert!(matches!(frechet_distance(&a, &c), Err(EpvtError::Dimension(_))));
}

fn random_summary(rng: &mut ChaCha8Rng, d: usize, n: usize) -> GaussianSummary {
    let shift: Vec<f64> = (0..d).map(|_| rng.random_range(-2.0..2.0)).collect();
    let scale: Vec<f64> = (0..d).map(|_| rng.random_range(0.1..3.0)).collect();
    let rows: Vec<Vec<f64>> = (0..n)
        .map(|_| (0..d).map(|k| shift[k] + scale[k] * rng.random_range(-1.0..1.0)).collect())
        .collect();
    GaussianSummary::from_samples(&rows).unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn auc_agrees_with_pairwise_count(seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (scores, labels) = random_instance(&mut rng);
        let want = auc_brute_force(&scores, &labels);
        let got = roc_auc(&ScoredSet::new(scores, labels).unwrap()).unwrap();
        prop_assert!((got - want).abs() < 1e-9);
    }

    #[test]
    fn spearman_is_pearson_on_ranks(xs in prop::collection::vec(-1e3f64..1e3, 3..30), seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let ys: Vec<f64> = xs.iter().map(|x| x + rng.random_range(-500.0..500.0)).collect();
        let distinct = |v: &[f64]| {
            let mut s = v.to_vec();
            s.sort_by(f64::total_cmp);
            s.windows(2).all(|w| w[0] != w[1]) && s[0] != s[s.len() - 1]
        };
        prop_assume!(distinct(&xs) && distinct(&ys));
        let want = pearson_oracle(&plain_ranks(&xs), &plain_ranks(&ys));
        prop_assert!((spearman(&xs, &ys).unwrap() - want).abs() < 1e-9);
        // Monotone transforms leave the ranks alone.
        let cubed: Vec<f64> = xs.iter().map(|x| x.powi(3)).collect();
        prop_assert!((spearman(&cubed, &ys).unwrap() - want).abs() < 1e-9);
    }

    #[test]
    fn frechet_is_symmetric_and_nonnegative(seed in any::<u64>(), d in 1usize..6) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let a = random_summary(&mut rng, d, 3 * d + 5);
        let b = random_summary(&mut rng, d, 3 * d + 5);
        let ab = frechet_distance(&a, &b).unwrap();
        let ba = frechet_distance(&b, &a).unwrap();
        prop_assert!((ab - ba).abs() < 1e-6);
        prop_assert!(ab >= -1e-8);
        prop_assert!(frechet_distance(&a, &a).unwrap().abs() < 1e-8);
    }
}

#[test]
fn rank_deficient_samples_still_give_finite_distances() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let rows: Vec<Vec<f64>> = (0..3).map(|_| (0..8).map(|_| rng.random_range(-1.0..1.0)).collect()).collect();
    let a = GaussianSummary::from_samples(&rows).unwrap();
    let b = random_summary(&mut rng, 8, 40);
    let d = frechet_distance(&a, &b).unwrap();
    assert!(d.is_finite() && d >= 0.0);
}

fn five_domain_records(seed: u64) -> Vec<ImageRecord> {
    (0..15)
        .map(|i| image(seed * 100 + i as u64, (i % 2) as u8, ArtifactKind::from_index(i % 5).unwrap(), 16))
        .collect()
}

fn five_domain_model(seed: u64) -> epvt::vit::EpvtModel {
    let cfg = epvt::vit::ModelConfig {
        num_domains: 5,
        ..epvt::vit::ModelConfig::tiny()
    };
    epvt::vit::EpvtModel::new(&cfg, candle_core::DType::F64, seed).unwrap()
}

#[test]
fn zeroed_adapter_reports_uniform_weights() {
    let model = five_domain_model(1);
    let out = model.adapter().output_layer();
    out.weight().set(&out.weight().as_tensor().zeros_like().unwrap()).unwrap();
    out.bias().set(&out.bias().as_tensor().zeros_like().unwrap()).unwrap();
    let report = domain_weight_report(&model, Method::Epvt, &five_domain_records(1)).unwrap();
    assert_eq!(report.rows.len(), 5);
    for (_, w) in report.rows.iter().chain(std::iter::once(&(ArtifactKind::Clean, report.overall.clone()))) {
        assert!(w.iter().all(|&x| (x - 0.2).abs() < 1e-12));
    }
}

#[test]
fn weight_rows_sum_to_one() {
    let model = five_domain_model(2);
    let records = five_domain_records(2);
    let report = domain_weight_report(&model, Method::Epvt, &records).unwrap();
    for (_, w) in &report.rows {
        assert!((w.iter().sum::<f64>() - 1.0).abs() < 1e-4);
    }
    assert!((report.overall.iter().sum::<f64>() - 1.0).abs() < 1e-4);
    let csv = report.to_csv();
    assert_eq!(csv.lines().next().unwrap(), "domain,w_1,w_2,w_3,w_4,w_5");
    assert_eq!(csv.lines().count(), 1 + 5 + 1);
}

#[test]
fn weight_report_rejects_erm_models() {
    let model = five_domain_model(3);
    assert!(matches!(
        domain_weight_report(&model, Method::Erm, &five_domain_records(3)),
        Err(EpvtError::UnsupportedMethod(_))
    ));
}

#[test]
fn prompt_weight_analysis_covers_every_source_domain() {
    let model = five_domain_model(4);
    let source = five_domain_records(4);
    let target = five_domain_records(5);
    let a = prompt_weight_analysis(&model, &source, &target).unwrap();
    assert_eq!(a.domains, ArtifactKind::ALL.to_vec());
    assert!(a.distances.iter().all(|d| d.is_finite() && *d >= 0.0));
    assert!((-1.0..=1.0).contains(&a.spearman));
    let direct = spearman(&a.distances, &a.target_weights).unwrap();
    assert_eq!(a.spearman, direct);
}

#[test]
fn scores_are_probabilities_for_both_methods() {
    let model = five_domain_model(6);
    let records = five_domain_records(6);
    for method in [Method::Erm, Method::Epvt] {
        let s = melanoma_scores(&model, method, &records).unwrap();
        assert_eq!(s.len(), records.len());
        assert!(s.iter().all(|p| (0.0..=1.0).contains(p)));
    }
}

#[test]
fn sweep_rows_serialize_with_the_header() {
    let rows = vec![
        SweepRow { bias: 0.5, method: Method::Erm, seed: 1, test_auc: 0.75 },
        SweepRow { bias: 0.5, method: Method::Epvt, seed: 1, test_auc: 0.8 },
        SweepRow { bias: 0.5, method: Method::Erm, seed: 2, test_auc: 0.65 },
    ];
    let csv = sweep_csv(&rows);
    assert_eq!(csv.lines().next().unwrap(), SWEEP_HEADER);
    assert_eq!(csv.lines().nth(1).unwrap(), "0.5,erm,1,0.75");
    assert!((mean_auc(&rows, 0.5, Method::Erm).unwrap() - 0.7).abs() < 1e-12);
    assert_eq!(mean_auc(&rows, 1.0, Method::Erm), None);
}
