//! Evaluation: logical accuracy over surviving observables, loss
//! identification scores, miss analysis by onset round, and latency.

use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::experiment::ShotRecord;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LogicalAccuracy {
    /// Mean success over all (shot, kept observable) pairs.
    pub accuracy: f64,
    pub correct: usize,
    pub kept: usize,
    /// `(correct, kept)` per observable index.
    pub per_observable: Vec<(usize, usize)>,
    /// Shots with at least one kept observable.
    pub shots_scored: usize,
    /// Scored shots with at least one wrong kept observable.
    pub shot_failures: usize,
}

impl LogicalAccuracy {
    pub fn shot_error_rate(&self) -> f64 {
        if self.shots_scored == 0 {
            0.0
        } else {
            self.shot_failures as f64 / self.shots_scored as f64
        }
    }
}

pub fn logical_accuracy(
    predictions: &[Vec<bool>],
    records: &[ShotRecord],
) -> Result<LogicalAccuracy> {
    if predictions.len() != records.len() {
        return Err(Error::ShapeMismatch(format!(
            "{} predictions for {} shots",
            predictions.len(),
            records.len()
        )));
    }
    let d = records.first().map_or(0, |r| r.logical_labels.len());
    let mut out = LogicalAccuracy {
        accuracy: 0.0,
        correct: 0,
        kept: 0,
        per_observable: vec![(0, 0); d],
        shots_scored: 0,
        shot_failures: 0,
    };
    for (i, (pred, rec)) in predictions.iter().zip(records).enumerate() {
        if pred.len() != rec.logical_labels.len() || rec.logical_labels.len() != d {
            return Err(Error::ShapeMismatch(format!(
                "shot {i}: {} predictions for {} observables",
                pred.len(),
                rec.logical_labels.len()
            )));
        }
        let mut kept = 0;
        let mut wrong = false;
        for j in 0..d {
            if rec.excluded_observables[j] {
                continue;
            }
            kept += 1;
            out.per_observable[j].1 += 1;
            if pred[j] == rec.logical_labels[j] {
                out.correct += 1;
                out.per_observable[j].0 += 1;
            } else {
                wrong = true;
            }
        }
        out.kept += kept;
        if kept > 0 {
            out.shots_scored += 1;
            out.shot_failures += wrong as usize;
        }
    }
    out.accuracy = if out.kept == 0 {
        0.0
    } else {
        out.correct as f64 / out.kept as f64
    };
    Ok(out)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LossMetrics {
    pub threshold: f64,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub true_positives: usize,
    pub false_positives: usize,
    pub false_negatives: usize,
}

/// A qubit counts as lost if it was lost in any round.
pub fn lost_by_end(rec: &ShotRecord, q: usize) -> bool {
    rec.rounds() > 0 && rec.loss_mask_truth.get(rec.rounds() - 1, q)
}

fn check_aligned(probs: &[Vec<f64>], records: &[ShotRecord]) -> Result<()> {
    if probs.len() != records.len() {
        return Err(Error::ShapeMismatch(format!(
            "{} verdicts for {} shots",
            probs.len(),
            records.len()
        )));
    }
    for (i, (p, r)) in probs.iter().zip(records).enumerate() {
        if p.len() != r.num_data() {
            return Err(Error::ShapeMismatch(format!(
                "shot {i}: {} verdicts for {} qubits",
                p.len(),
                r.num_data()
            )));
        }
    }
    Ok(())
}

/// Precision, recall and F1 of final-round loss verdicts.
///
/// `probs[shot][q]` is the predicted probability that data qubit `q` is lost
/// by the final round.
pub fn loss_metrics(
    probs: &[Vec<f64>],
    records: &[ShotRecord],
    threshold: f64,
) -> Result<LossMetrics> {
    check_aligned(probs, records)?;
    let (mut tp, mut fp, mut fneg) = (0, 0, 0);
    for (p, rec) in probs.iter().zip(records) {
        for (q, &pq) in p.iter().enumerate() {
            match (pq >= threshold, lost_by_end(rec, q)) {
                (true, true) => tp += 1,
                (true, false) => fp += 1,
                (false, true) => fneg += 1,
                (false, false) => {}
            }
        }
    }
    Ok(scores(threshold, tp, fp, fneg))
}

fn scores(threshold: f64, tp: usize, fp: usize, fneg: usize) -> LossMetrics {
    let precision = if tp + fp == 0 {
        1.0
    } else {
        tp as f64 / (tp + fp) as f64
    };
    let recall = if tp + fneg == 0 {
        1.0
    } else {
        tp as f64 / (tp + fneg) as f64
    };
    let f1 = if precision + recall > 0.0 {
        2.0 * precision * recall / (precision + recall)
    } else {
        0.0
    };
    LossMetrics {
        threshold,
        precision,
        recall,
        f1,
        true_positives: tp,
        false_positives: fp,
        false_negatives: fneg,
    }
}

/// `n` evenly spaced thresholds covering `[0, 1]`.
pub fn uniform_grid(n: usize) -> Vec<f64> {
    match n {
        0 => Vec::new(),
        1 => vec![0.5],
        _ => (0..n).map(|i| i as f64 / (n - 1) as f64).collect(),
    }
}

pub fn threshold_sweep(
    probs: &[Vec<f64>],
    records: &[ShotRecord],
    grid: &[f64],
) -> Result<Vec<LossMetrics>> {
    if grid.is_empty() {
        return Err(Error::InvalidParameter("empty threshold grid".into()));
    }
    if let Some(t) = grid.iter().find(|t| !(0.0..=1.0).contains(*t)) {
        return Err(Error::InvalidParameter(format!(
            "threshold {t} outside [0, 1]"
        )));
    }
    grid.iter()
        .map(|&t| loss_metrics(probs, records, t))
        .collect()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MissAnalysis {
    /// Entry `r - 1`: missed qubits whose loss began in round `r`.
    pub fn_by_loss_round: Vec<usize>,
    /// Entry `r - 1`: all lost qubits whose loss began in round `r`.
    pub events_by_loss_round: Vec<usize>,
    /// Misses over events per onset round; `None` where there were no events.
    pub miss_rate_by_round: Vec<Option<f64>>,
}

/// Tallies missed loss events by onset round from final-round verdicts.
pub fn miss_analysis(verdicts: &[Vec<bool>], records: &[ShotRecord]) -> Result<MissAnalysis> {
    if verdicts.len() != records.len() {
        return Err(Error::ShapeMismatch(format!(
            "{} verdicts for {} shots",
            verdicts.len(),
            records.len()
        )));
    }
    let t = records.iter().map(|r| r.rounds()).max().unwrap_or(0);
    let mut misses = vec![0; t];
    let mut events = vec![0; t];
    for (i, (v, rec)) in verdicts.iter().zip(records).enumerate() {
        if v.len() != rec.num_data() {
            return Err(Error::ShapeMismatch(format!(
                "shot {i}: {} verdicts",
                v.len()
            )));
        }
        for (q, &flagged) in v.iter().enumerate() {
            if let Some(r) = rec.loss_onset(q) {
                events[r - 1] += 1;
                if !flagged {
                    misses[r - 1] += 1;
                }
            }
        }
    }
    let miss_rate_by_round = misses
        .iter()
        .zip(&events)
        .map(|(&m, &e)| (e > 0).then(|| m as f64 / e as f64))
        .collect();
    Ok(MissAnalysis {
        fn_by_loss_round: misses,
        events_by_loss_round: events,
        miss_rate_by_round,
    })
}

/// Wilson score interval for `k` successes in `n` trials.
pub fn wilson_interval(k: usize, n: usize, z: f64) -> (f64, f64) {
    if n == 0 {
        return (0.0, 1.0);
    }
    let n = n as f64;
    let p = k as f64 / n;
    let z2 = z * z;
    let centre = (p + z2 / (2.0 * n)) / (1.0 + z2 / n);
    let half = z * (p * (1.0 - p) / n + z2 / (4.0 * n * n)).sqrt() / (1.0 + z2 / n);
    ((centre - half).max(0.0), (centre + half).min(1.0))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LatencyStats {
    /// Median wall-clock time per window.
    pub per_window_ms: f64,
    pub p25_ms: f64,
    pub p75_ms: f64,
    pub iqr_ms: f64,
    pub min_ms: f64,
    pub max_ms: f64,
    pub windows_measured: usize,
    pub warmup: usize,
    /// Forward passes per measured window, when the decoder counts them.
    pub forward_passes_per_window: Option<f64>,
    /// Desk-scale timings are only meaningful relative to each other.
    pub scale: String,
}

fn quantile(sorted: &[f64], q: f64) -> f64 {
    let pos = q * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    sorted[lo] + (sorted[hi] - sorted[lo]) * (pos - lo as f64)
}

/// Times `decode` over `repetitions` windows after `warmup` untimed ones,
/// cycling through `windows`.
pub fn latency_bench<W, F, C>(
    windows: &[W],
    warmup: usize,
    repetitions: usize,
    mut decode: F,
    forward_counter: Option<C>,
) -> Result<LatencyStats>
where
    F: FnMut(&W) -> Result<()>,
    C: Fn() -> u64,
{
    if windows.is_empty() {
        return Err(Error::InvalidParameter("no windows to benchmark".into()));
    }
    if repetitions == 0 {
        return Err(Error::InvalidParameter(
            "at least one timed repetition is required".into(),
        ));
    }
    for i in 0..warmup {
        decode(&windows[i % windows.len()])?;
    }
    let before = forward_counter.as_ref().map(|c| c());
    let mut times = Vec::with_capacity(repetitions);
    for i in 0..repetitions {
        let w = &windows[(warmup + i) % windows.len()];
        let start = Instant::now();
        decode(w)?;
        times.push(start.elapsed().as_secs_f64() * 1e3);
    }
    let passes = forward_counter
        .as_ref()
        .zip(before)
        .map(|(c, b)| (c() - b) as f64 / repetitions as f64);
    times.sort_by(f64::total_cmp);
    let p25 = quantile(&times, 0.25);
    let p75 = quantile(&times, 0.75);
    Ok(LatencyStats {
        per_window_ms: quantile(&times, 0.5),
        p25_ms: p25,
        p75_ms: p75,
        iqr_ms: p75 - p25,
        min_ms: times[0],
        max_ms: *times.last().unwrap(),
        windows_measured: repetitions,
        warmup,
        forward_passes_per_window: passes,
        scale: "relative".into(),
    })
}

/// Summary written by evaluation runs. Absent fields serialize as `null`.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub decoder: String,
    pub dataset_sha256: Option<String>,
    pub shots: usize,
    pub logical_accuracy: Option<f64>,
    /// `(T, accuracy)` rows.
    pub per_t_accuracy: Vec<(usize, f64)>,
    pub precision: Option<f64>,
    pub recall: Option<f64>,
    pub f1: Option<f64>,
    pub threshold: Option<f64>,
    pub threshold_curve: Vec<LossMetrics>,
    pub fn_by_loss_round: Vec<usize>,
    pub miss_rate_by_round: Vec<Option<f64>>,
    pub latency: Option<LatencyStats>,
    pub config: Option<serde_json::Value>,
}

impl EvalReport {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report is serializable")
    }

    pub fn from_json(text: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| Error::Corrupt(e.to_string()))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::bits::BitMatrix;
    use crate::lattice::Basis;

    fn shot(
        d: usize,
        t: usize,
        lost: &[(usize, usize)],
        labels: Vec<bool>,
        excluded: Vec<bool>,
    ) -> ShotRecord {
        let nd = d * d;
        let mut mask = BitMatrix::zeros(t, nd);
        for &(q, r) in lost {
            for rr in r..=t {
                mask.set(rr - 1, q, true);
            }
        }
        ShotRecord {
            basis: Basis::Z,
            ancilla_outcomes: BitMatrix::zeros(t, nd - 1),
            detectors: BitMatrix::zeros(t + 1, nd - 1),
            final_readout: vec![false; nd],
            loss_mask_truth: mask,
            ancilla_loss_truth: BitMatrix::zeros(t, nd - 1),
            logical_labels: labels,
            excluded_observables: excluded,
        }
    }

    #[test]
    fn accuracy_skips_excluded() {
        let recs = vec![
            shot(
                3,
                2,
                &[],
                vec![false, true, false],
                vec![false, true, false],
            ),
            shot(3, 2, &[], vec![true, true, true], vec![true, true, true]),
        ];
        let preds = vec![vec![false, false, true], vec![false, false, false]];
        let acc = logical_accuracy(&preds, &recs).unwrap();
        assert_eq!((acc.correct, acc.kept), (1, 2));
        assert_eq!(acc.accuracy, 0.5);
        assert_eq!(acc.shots_scored, 1);
        assert_eq!(acc.shot_failures, 1);
        assert!(logical_accuracy(&preds[..1], &recs).is_err());
    }

    #[test]
    fn half_overlap_gives_halves() {
        // truth {0, 2}, predicted {0, 1}
        let recs = vec![shot(
            3,
            3,
            &[(0, 1), (2, 3)],
            vec![false; 3],
            vec![false; 3],
        )];
        let mut p = vec![0.0; 9];
        p[0] = 1.0;
        p[1] = 0.9;
        let m = loss_metrics(&[p], &recs, 0.5).unwrap();
        assert_eq!((m.precision, m.recall, m.f1), (0.5, 0.5, 0.5));
    }

    #[test]
    fn empty_denominators_are_one() {
        let recs = vec![shot(3, 2, &[], vec![false; 3], vec![false; 3])];
        let m = loss_metrics(&[vec![0.0; 9]], &recs, 0.5).unwrap();
        assert_eq!((m.precision, m.recall, m.f1), (1.0, 1.0, 1.0));
    }

    #[test]
    fn sweep_is_monotone() {
        let recs: Vec<ShotRecord> = (0..9)
            .map(|q| shot(3, 2, &[(q, 1)], vec![false; 3], vec![false; 3]))
            .collect();
        let probs: Vec<Vec<f64>> = (0..9)
            .map(|i| {
                (0..9)
                    .map(|q| ((i * 7 + q * 3) % 10) as f64 / 10.0)
                    .collect()
            })
            .collect();
        let curve = threshold_sweep(&probs, &recs, &uniform_grid(21)).unwrap();
        for w in curve.windows(2) {
            assert!(w[1].recall <= w[0].recall);
        }
        assert!(threshold_sweep(&probs, &recs, &[]).is_err());
        assert!(threshold_sweep(&probs, &recs, &[1.5]).is_err());
    }

    #[test]
    fn misses_by_onset() {
        let recs = vec![
            shot(3, 3, &[(0, 1), (1, 3)], vec![false; 3], vec![false; 3]),
            shot(3, 3, &[(4, 3)], vec![false; 3], vec![false; 3]),
        ];
        let mut v0 = vec![false; 9];
        v0[0] = true;
        let v1 = vec![false; 9];
        let m = miss_analysis(&[v0, v1], &recs).unwrap();
        assert_eq!(m.fn_by_loss_round, vec![0, 0, 2]);
        assert_eq!(m.miss_rate_by_round, vec![Some(0.0), None, Some(1.0)]);
    }

    #[test]
    fn latency_stats() {
        let windows = vec![1u64, 2, 3];
        let counter = std::cell::Cell::new(0u64);
        let stats = latency_bench(
            &windows,
            2,
            10,
            |_| {
                counter.set(counter.get() + 1);
                Ok(())
            },
            Some(|| counter.get()),
        )
        .unwrap();
        assert_eq!(stats.windows_measured, 10);
        assert_eq!(stats.forward_passes_per_window, Some(1.0));
        assert!(stats.per_window_ms <= stats.max_ms);
        let none: Option<fn() -> u64> = None;
        assert!(latency_bench(&windows, 2, 0, |_| Ok(()), none).is_err());
        assert!(latency_bench::<u64, _, fn() -> u64>(&[], 0, 5, |_| Ok(()), None).is_err());
    }

    #[test]
    fn report_json_roundtrip() {
        let r = EvalReport {
            decoder: "mwpm".into(),
            logical_accuracy: Some(0.75),
            miss_rate_by_round: vec![None, Some(0.5)],
            ..Default::default()
        };
        let back = EvalReport::from_json(&r.to_json()).unwrap();
        assert_eq!(back, r);
    }

    #[test]
    fn wilson_contains_estimate() {
        let (lo, hi) = wilson_interval(30, 100, 1.96);
        assert!(lo < 0.3 && 0.3 < hi);
        assert!(hi - lo < 0.2);
    }
}
