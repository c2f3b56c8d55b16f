use proptest::prelude::*;
use std::collections::HashSet;

use strats::data::*;
use strats::metrics::{min_re_pr, pr_auc, roc_auc, ScoredLabels};

fn scored_instance() -> impl Strategy<Value = (Vec<f64>, Vec<bool>)> {
    // scores from a small grid so ties are common
    (2usize..=50)
        .prop_flat_map(|n| {
            (
                prop::collection::vec(0u8..12, n),
                prop::collection::vec(any::<bool>(), n),
            )
        })
        .prop_map(|(s, l)| (s.into_iter().map(|k| f64::from(k) / 11.0).collect(), l))
}

fn all_pairs_auc(scores: &[f64], labels: &[bool]) -> f64 {
    // twice the Mann-Whitney count keeps everything integral
    let (mut twice, mut pairs) = (0u64, 0u64);
    for (i, &si) in scores.iter().enumerate() {
        for (j, &sj) in scores.iter().enumerate() {
            if labels[i] && !labels[j] {
                pairs += 1;
                twice += if si > sj {
                    2
                } else if si == sj {
                    1
                } else {
                    0
                };
            }
        }
    }
    (twice as f64 / 2.0) / pairs as f64
}

fn threshold_sweep(scores: &[f64], labels: &[bool]) -> f64 {
    let n_pos = labels.iter().filter(|&&l| l).count();
    let mut best = 0.0f64;
    for &t in scores {
        let predicted = scores.iter().filter(|&&s| s >= t).count();
        let tp = scores
            .iter()
            .zip(labels)
            .filter(|(&s, &l)| s >= t && l)
            .count();
        let recall = tp as f64 / n_pos as f64;
        let precision = tp as f64 / predicted as f64;
        best = best.max(recall.min(precision));
    }
    best
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(1000))]

    #[test]
    fn roc_auc_equals_all_pairs_count((scores, labels) in scored_instance()) {
        let both = labels.iter().any(|&l| l) && labels.iter().any(|&l| !l);
        let s = ScoredLabels::new(scores.clone(), labels.clone()).unwrap();
        match roc_auc(&s) {
            Ok(v) => prop_assert_eq!(v, all_pairs_auc(&scores, &labels)),
            Err(_) => prop_assert!(!both),
        }
    }

    #[test]
    fn min_re_pr_equals_threshold_sweep((scores, labels) in scored_instance()) {
        let s = ScoredLabels::new(scores.clone(), labels.clone()).unwrap();
        if labels.iter().any(|&l| l) {
            prop_assert_eq!(min_re_pr(&s).unwrap(), threshold_sweep(&scores, &labels));
        } else {
            prop_assert!(min_re_pr(&s).is_err());
        }
    }

    #[test]
    fn metrics_are_bounded_and_rank_based((scores, labels) in scored_instance()) {
        prop_assume!(labels.iter().any(|&l| l) && labels.iter().any(|&l| !l));
        let s = ScoredLabels::new(scores.clone(), labels.clone()).unwrap();
        let stretched = ScoredLabels::new(scores.iter().map(|x| 3.0 * x - 1.0).collect(), labels).unwrap();
        for f in [roc_auc, pr_auc, min_re_pr] {
            let v = f(&s).unwrap();
            prop_assert!((0.0..=1.0).contains(&v));
            prop_assert_eq!(v, f(&stretched).unwrap());
        }
    }
}

fn sample_strategy(n_vars: usize, n_demo: usize) -> impl Strategy<Value = TimeSeriesSample> {
    (
        prop::collection::vec((0.0f64..60.0, 0..n_vars, -100.0f64..100.0), 1..25),
        prop::collection::vec(-5.0f64..5.0, n_demo),
        prop::option::of(0u8..=1),
        0usize..40,
    )
        .prop_map(|(obs, demographics, label, patient)| {
            let mut s = TimeSeriesSample {
                stay_id: String::new(),
                patient_id: format!("p{patient}"),
                triplets: obs
                    .into_iter()
                    .map(|(t, v, x)| ObservationTriplet::new(t, v, x))
                    .collect(),
                demographics,
                label,
            };
            s.sort_triplets();
            s
        })
}

fn dataset_strategy() -> impl Strategy<Value = Vec<TimeSeriesSample>> {
    prop::collection::vec(sample_strategy(4, 2), 3..30).prop_map(|mut v| {
        for (i, s) in v.iter_mut().enumerate() {
            s.stay_id = format!("stay{i}");
        }
        v
    })
}

fn as_dataset(samples: Vec<TimeSeriesSample>) -> Dataset {
    Dataset {
        vocabulary: Vocabulary::new((0..4).map(|i| format!("var{i}")).collect()).unwrap(),
        demographic_names: vec!["age".into(), "weight".into()],
        samples,
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn csv_export_round_trips(samples in dataset_strategy()) {
        let dir = tempfile::tempdir().unwrap();
        let dataset = as_dataset(samples);
        export_csv(&dataset, dir.path()).unwrap();
        let back = load_data_dir(dir.path()).unwrap();
        prop_assert_eq!(back, dataset);
    }

    #[test]
    fn patient_split_is_a_disjoint_cover(samples in dataset_strategy(), seed in any::<u64>()) {
        let patients: HashSet<&str> = samples.iter().map(|s| s.patient_id.as_str()).collect();
        prop_assume!(patients.len() >= 3);
        let split = split_patients(&samples, SplitRatios::default(), seed).unwrap();
        prop_assert_eq!(split.train.len() + split.val.len() + split.test.len(), samples.len());
        let ids = |v: &[TimeSeriesSample]| v.iter().map(|s| s.patient_id.clone()).collect::<HashSet<_>>();
        let (a, b, c) = (ids(&split.train), ids(&split.val), ids(&split.test));
        prop_assert!(a.is_disjoint(&b) && a.is_disjoint(&c) && b.is_disjoint(&c));
        prop_assert_eq!(split.clone(), split_patients(&samples, SplitRatios::default(), seed).unwrap());
    }

    #[test]
    fn normalized_training_values_are_standardized(samples in dataset_strategy()) {
        let stats = fit_normalizer(&samples, 4, 48.0).unwrap();
        let normed: Vec<TimeSeriesSample> = samples.iter().map(|s| normalize(s, &stats).unwrap()).collect();
        for v in 0..4 {
            let xs: Vec<f64> = normed.iter().flat_map(|s| s.triplets.iter()).filter(|o| o.variable == v).map(|o| o.value).collect();
            if xs.len() < 2 || stats.variables[v].std == 1.0 {
                continue;
            }
            let mean = xs.iter().sum::<f64>() / xs.len() as f64;
            let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / xs.len() as f64;
            prop_assert!(mean.abs() < 1e-9, "mean {}", mean);
            prop_assert!((var - 1.0).abs() < 1e-9, "var {}", var);
        }
        for (s, n) in samples.iter().zip(&normed) {
            for (o, p) in s.triplets.iter().zip(&n.triplets) {
                prop_assert!((p.time - o.time / 48.0).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn forecast_windows_respect_their_masks(samples in dataset_strategy(), mimic in any::<bool>()) {
        let spec = if mimic { WindowSpec { endpoints: vec![8.0, 20.0, 32.0], lookback: Some(10.0), horizon: 2.0 } } else { WindowSpec::physionet_style() };
        let stats = fit_normalizer(&samples, 4, 48.0).unwrap();
        let windows = build_forecast_windows(&samples, &spec, &stats).unwrap();
        for w in &windows {
            let src = samples.iter().find(|s| s.stay_id == w.base.stay_id).unwrap();
            let inside: Vec<&ObservationTriplet> = src.triplets.iter().filter(|o| o.time >= w.window_start && o.time < w.window_end).collect();
            prop_assert!(!inside.is_empty());
            prop_assert_eq!(inside.len(), w.base.triplets.len());
            for (o, b) in inside.iter().zip(&w.base.triplets) {
                prop_assert!((b.time - (o.time - w.window_start)).abs() < 1e-9);
                prop_assert_eq!(b.value, o.value);
            }
            let mut any = false;
            for v in 0..4 {
                let ahead: Vec<&ObservationTriplet> = src.triplets.iter()
                    .filter(|o| o.variable == v && o.time >= w.window_end && o.time < w.window_end + spec.horizon)
                    .collect();
                prop_assert_eq!(w.forecast_mask[v], !ahead.is_empty());
                match ahead.last() {
                    Some(o) => { any = true; prop_assert_eq!(w.forecast_values[v], stats.value(v, o.value).unwrap()); }
                    None => prop_assert_eq!(w.forecast_values[v], 0.0),
                }
            }
            prop_assert!(any);
        }
    }

    #[test]
    fn truncation_keeps_the_latest_observations(s in sample_strategy(3, 1), cap in 1usize..30) {
        let t = truncate_observations(&s, cap);
        prop_assert_eq!(t.triplets.len(), s.triplets.len().min(cap));
        prop_assert_eq!(&t.triplets[..], &s.triplets[s.triplets.len() - t.triplets.len()..]);
    }
}

#[test]
fn mimic_spec_enumerates_27_candidate_windows() {
    let spec = WindowSpec::mimic_style();
    let windows = spec.candidate_windows();
    assert_eq!(windows.len(), 27);
    assert_eq!(windows[0], (0.0, 20.0));
    assert_eq!(windows[26], (100.0, 124.0));
}
