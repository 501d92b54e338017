//! Property tests of the evaluation metrics on sampled shots.

use proptest::prelude::*;

use qloss::experiment::{sample_dataset, NoiseParams, ShotRecord};
use qloss::lattice::{build_layout, Basis};
use qloss::metrics::{logical_accuracy, lost_by_end, miss_analysis, threshold_sweep, uniform_grid, wilson_interval};

fn shots(seed: u64) -> Vec<ShotRecord> {
    let layout = build_layout(3).unwrap();
    sample_dataset(&layout, NoiseParams::new(0.01, 0.01, 0.05).unwrap(), 4, Basis::Z, 40, seed)
        .unwrap()
        .shots
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn sweep_counts_are_monotone(seed in 0u64..1000, raw in proptest::collection::vec(0.0f64..1.0, 360)) {
        let recs = shots(seed);
        let probs: Vec<Vec<f64>> = raw.chunks(9).map(<[f64]>::to_vec).collect();
        let sweep = threshold_sweep(&probs, &recs, &uniform_grid(11)).unwrap();
        let positives: usize = recs.iter().map(|r| (0..9).filter(|&q| lost_by_end(r, q)).count()).sum();
        for pair in sweep.windows(2) {
            let (a, b) = (&pair[0], &pair[1]);
            prop_assert!(b.true_positives <= a.true_positives);
            prop_assert!(b.true_positives + b.false_positives <= a.true_positives + a.false_positives);
            prop_assert!(b.recall <= a.recall);
        }
        for m in &sweep {
            prop_assert_eq!(m.true_positives + m.false_negatives, positives);
            if m.precision + m.recall > 0.0 {
                let h = 2.0 * m.precision * m.recall / (m.precision + m.recall);
                prop_assert!((m.f1 - h).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn truth_and_its_negation_bound_accuracy(seed in 0u64..1000) {
        let recs = shots(seed);
        let truth: Vec<Vec<bool>> = recs.iter().map(|r| r.logical_labels.clone()).collect();
        let wrong: Vec<Vec<bool>> = truth.iter().map(|v| v.iter().map(|b| !b).collect()).collect();
        let good = logical_accuracy(&truth, &recs).unwrap();
        let bad = logical_accuracy(&wrong, &recs).unwrap();
        prop_assert_eq!(good.kept, bad.kept);
        if good.kept > 0 {
            prop_assert_eq!(good.accuracy, 1.0);
            prop_assert_eq!(bad.accuracy, 0.0);
            prop_assert_eq!(bad.shot_failures, bad.shots_scored);
        }
        prop_assert_eq!(good.shot_failures, 0);
    }

    #[test]
    fn miss_analysis_partitions_events(seed in 0u64..1000, flag in proptest::collection::vec(any::<bool>(), 360)) {
        let recs = shots(seed);
        let verdicts: Vec<Vec<bool>> = flag.chunks(9).map(<[bool]>::to_vec).collect();
        let m = miss_analysis(&verdicts, &recs).unwrap();
        let events: usize = recs.iter().map(|r| (0..9).filter(|&q| r.loss_onset(q).is_some()).count()).sum();
        prop_assert_eq!(m.events_by_loss_round.iter().sum::<usize>(), events);
        for (miss, ev) in m.fn_by_loss_round.iter().zip(&m.events_by_loss_round) {
            prop_assert!(miss <= ev);
        }
    }

    #[test]
    fn wilson_interval_brackets_estimate(n in 1usize..5000, frac in 0.0f64..=1.0, z in 0.5f64..3.5) {
        let k = ((n as f64) * frac).round() as usize;
        let (lo, hi) = wilson_interval(k, n, z);
        let p = k as f64 / n as f64;
        prop_assert!(0.0 <= lo && lo <= p + 1e-12 && p <= hi + 1e-12 && hi <= 1.0);
        let (lo2, hi2) = wilson_interval(k, n, z + 0.5);
        prop_assert!(lo2 <= lo + 1e-12 && hi <= hi2 + 1e-12);
    }
}
