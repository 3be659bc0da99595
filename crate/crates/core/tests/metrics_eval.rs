use ipred::metrics::{compute_metrics, render_report, report_json, roc_curve, table_text, RenderOptions};
use ipred::nn::History;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn names(n: usize) -> Vec<String> {
    (0..n).map(|i| format!("class{i}")).collect()
}

/// Counts every sample for every class, no confusion matrix involved.
fn brute(truth: &[usize], pred: &[usize], k: usize) -> (f64, f64, f64, u64) {
    let (mut tp, mut fp, mut fn_) = (0u64, 0u64, 0u64);
    for i in 0..truth.len() {
        match (truth[i] == k, pred[i] == k) {
            (true, true) => tp += 1,
            (false, true) => fp += 1,
            (true, false) => fn_ += 1,
            _ => {}
        }
    }
    let p = if tp + fp == 0 { 0.0 } else { tp as f64 / (tp + fp) as f64 };
    let r = if tp + fn_ == 0 { 0.0 } else { tp as f64 / (tp + fn_) as f64 };
    let f = if p + r == 0.0 { 0.0 } else { 2.0 * p * r / (p + r) };
    (p, r, f, tp + fn_)
}

#[test]
fn matches_counting_oracle_on_random_instances() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    for _ in 0..200 {
        let c = rng.gen_range(2..7);
        let n = rng.gen_range(1..400);
        let truth: Vec<usize> = (0..n).map(|_| rng.gen_range(0..c)).collect();
        // mostly right, like a real classifier
        let pred: Vec<usize> = truth.iter().map(|&t| if rng.gen_bool(0.7) { t } else { rng.gen_range(0..c) }).collect();
        let r = compute_metrics(&truth, &pred, &names(c), Some(c - 1)).unwrap();
        let correct = truth.iter().zip(&pred).filter(|(a, b)| a == b).count();
        assert!((r.accuracy - correct as f64 / n as f64).abs() <= 1e-12);
        let (mut mp, mut wf) = (0.0, 0.0);
        for k in 0..c {
            let (p, rec, f, s) = brute(&truth, &pred, k);
            let m = &r.per_class[k];
            assert!((m.precision - p).abs() <= 1e-12);
            assert!((m.recall - rec).abs() <= 1e-12);
            assert!((m.f1 - f).abs() <= 1e-12);
            assert_eq!(m.support, s);
            mp += p / c as f64;
            wf += f * s as f64 / n as f64;
        }
        assert!((r.macro_avg.precision - mp).abs() <= 1e-12);
        assert!((r.weighted_avg.f1 - wf).abs() <= 1e-12);
        assert_eq!(r.confusion.total(), n as u64);
    }
}

#[test]
fn worked_counts() {
    let mut truth = vec![1; 100];
    truth.extend(vec![0; 400]);
    let mut pred = vec![1; 90];
    pred.extend(vec![0; 10]);
    pred.extend(vec![1; 4]);
    pred.extend(vec![0; 396]);
    let r = compute_metrics(&truth, &pred, &names(2), Some(1)).unwrap();
    let a = r.class("class1").unwrap();
    assert!((a.recall - 0.9).abs() < 1e-12);
    assert!((a.precision - 0.9574).abs() < 5e-5);
    assert!((r.accuracy - 0.972).abs() < 1e-12);
    assert!((a.f1 - 0.9278).abs() < 5e-5);

    let perfect = compute_metrics(&[0, 1, 2, 1], &[0, 1, 2, 1], &names(3), None).unwrap();
    assert_eq!(perfect.accuracy, 1.0);
    assert!(perfect.per_class.iter().all(|c| c.f1 == 1.0));
}

/// P(s+ > s-) + ½ P(s+ = s-) over every (positive, negative) pair.
fn mann_whitney(truth: &[bool], scores: &[f64]) -> f64 {
    let (mut twice, mut pairs) = (0u128, 0u128);
    for i in 0..truth.len() {
        for j in 0..truth.len() {
            if truth[i] && !truth[j] {
                pairs += 1;
                if scores[i] > scores[j] {
                    twice += 2;
                } else if scores[i] == scores[j] {
                    twice += 1;
                }
            }
        }
    }
    twice as f64 / (2 * pairs) as f64
}

#[test]
fn auc_equals_pair_counting_exactly() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    for case in 0..120 {
        let n = if case == 0 { 1000 } else { rng.gen_range(2..300) };
        let mut truth: Vec<bool> = (0..n).map(|_| rng.gen_bool(0.4)).collect();
        truth[0] = true;
        truth[1] = false;
        // coarse grid so ties are common
        let scores: Vec<f64> = truth.iter().map(|&t| (rng.gen_range(0..20) + if t { 4 } else { 0 }) as f64 / 23.0).collect();
        let roc = roc_curve(&truth, &scores).unwrap();
        assert_eq!(roc.auc, mann_whitney(&truth, &scores));
        assert!((0.0..=1.0).contains(&roc.auc));
        assert!(roc.points.windows(2).all(|w| w[0].fpr <= w[1].fpr && w[0].tpr <= w[1].tpr));
        let last = roc.points.last().unwrap();
        assert_eq!((last.fpr, last.tpr), (1.0, 1.0));
    }
}

#[test]
fn auc_hand_cases() {
    let t = [true, true, false, true, false, false];
    let s = [0.9, 0.8, 0.7, 0.6, 0.4, 0.2];
    assert_eq!(roc_curve(&t, &s).unwrap().auc, mann_whitney(&t, &s));
    assert_eq!(roc_curve(&t, &s).unwrap().auc, 8.0 / 9.0);
    assert_eq!(roc_curve(&[true, false], &[1.0, 0.0]).unwrap().auc, 1.0);
    assert_eq!(roc_curve(&[true, false, true], &[0.3; 3]).unwrap().auc, 0.5);
    assert!(roc_curve(&[false, false], &[0.1, 0.2]).is_err());
    assert!(roc_curve(&[true, false], &[f64::NAN, 0.2]).is_err());
}

/// Binary counts with a known report: 431757 normal, 70979 attack.
fn table_iv_like() -> ipred::metrics::EvalReport {
    let classes = vec!["Normal".to_string(), "Attack".to_string()];
    let (tn, fp, fn_, tp) = (429_095usize, 2_662usize, 7_098usize, 63_881usize);
    let mut truth = Vec::new();
    let mut pred = Vec::new();
    for (t, p, n) in [(0, 0, tn), (0, 1, fp), (1, 0, fn_), (1, 1, tp)] {
        truth.extend(std::iter::repeat(t).take(n));
        pred.extend(std::iter::repeat(p).take(n));
    }
    compute_metrics(&truth, &pred, &classes, Some(1)).unwrap()
}

#[test]
fn table_layout_matches_golden_file() {
    let want = include_str!("fixtures/classification_report.txt");
    assert_eq!(table_text(&table_iv_like(), 2), want);
}

#[test]
fn json_is_byte_identical_and_plots_are_written() {
    let mut r = table_iv_like();
    let truth: Vec<bool> = (0..200).map(|i| i % 3 == 0).collect();
    let scores: Vec<f64> = (0..200).map(|i| if i % 3 == 0 { 0.6 + (i % 7) as f64 * 0.05 } else { (i % 11) as f64 * 0.06 }).collect();
    r.roc = Some(roc_curve(&truth, &scores).unwrap());
    let opts = RenderOptions {
        plots: true,
        history: Some(History { train_loss: vec![0.9, 0.5, 0.4], val_loss: vec![0.8, 0.6, 0.65], best_epoch: 2, stopped_early: false }),
        ..Default::default()
    };
    assert_eq!(report_json(&r, &opts).unwrap(), report_json(&r.clone(), &opts).unwrap());

    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    let fa = render_report(&r, a.path(), "lstm", &opts).unwrap();
    let fb = render_report(&r, b.path(), "lstm", &opts).unwrap();
    assert_eq!(std::fs::read(&fa.json).unwrap(), std::fs::read(&fb.json).unwrap());
    for p in [fa.roc_svg.unwrap(), fa.loss_svg.unwrap(), fa.roc_csv.unwrap(), fa.text] {
        assert!(std::fs::metadata(&p).unwrap().len() > 0, "{} is empty", p.display());
    }
}

proptest! {
    #[test]
    fn joint_shuffle_changes_nothing(pairs in proptest::collection::vec((0usize..4, 0usize..4), 1..150), seed in any::<u64>()) {
        let (t, p): (Vec<usize>, Vec<usize>) = pairs.iter().cloned().unzip();
        let mut idx: Vec<usize> = (0..t.len()).collect();
        use rand::seq::SliceRandom;
        idx.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
        let t2: Vec<usize> = idx.iter().map(|&i| t[i]).collect();
        let p2: Vec<usize> = idx.iter().map(|&i| p[i]).collect();
        prop_assert_eq!(compute_metrics(&t, &p, &names(4), Some(3)).unwrap(), compute_metrics(&t2, &p2, &names(4), Some(3)).unwrap());
    }

    #[test]
    fn f1_is_harmonic_mean_and_accuracy_is_trace(pairs in proptest::collection::vec((0usize..3, 0usize..3), 1..150)) {
        let (t, p): (Vec<usize>, Vec<usize>) = pairs.iter().cloned().unzip();
        let r = compute_metrics(&t, &p, &names(3), None).unwrap();
        for c in &r.per_class {
            if c.precision + c.recall > 0.0 {
                prop_assert!((c.f1 - 2.0 * c.precision * c.recall / (c.precision + c.recall)).abs() <= 1e-12);
            }
        }
        prop_assert_eq!(r.accuracy, r.confusion.trace() as f64 / r.confusion.total() as f64);
    }
}
