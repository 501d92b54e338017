//! Independent oracles shared by the integration tests. Nothing here calls
//! into the code under test except to read inputs.

#![allow(dead_code)]

pub mod dense;
pub mod matching;

use statrs::distribution::{ChiSquared, ContinuousCDF};

/// Pearson goodness-of-fit p-value of `observed` counts against exact
/// probabilities. Bins with expected count below 5 are pooled; any count in
/// a zero-probability bin gives 0.
pub fn chi_square_p(expected: &[f64], observed: &[u64]) -> f64 {
    assert_eq!(expected.len(), observed.len());
    let n: u64 = observed.iter().sum();
    let nf = n as f64;
    if expected.iter().zip(observed).any(|(&p, &o)| p <= 0.0 && o > 0) {
        return 0.0;
    }
    let mut bins: Vec<(f64, f64)> = Vec::new();
    let mut pooled = (0.0, 0.0);
    for (&p, &o) in expected.iter().zip(observed) {
        if p <= 0.0 {
            continue;
        }
        let e = p * nf;
        if e < 5.0 {
            pooled.0 += e;
            pooled.1 += o as f64;
        } else {
            bins.push((e, o as f64));
        }
    }
    if pooled.0 > 0.0 {
        if pooled.0 >= 5.0 || bins.is_empty() {
            bins.push(pooled);
        } else {
            // Fold a tiny pooled bin into the smallest regular one.
            let k = (0..bins.len()).min_by(|&a, &b| bins[a].0.total_cmp(&bins[b].0)).unwrap();
            bins[k].0 += pooled.0;
            bins[k].1 += pooled.1;
        }
    }
    if bins.len() < 2 {
        return 1.0;
    }
    let stat: f64 = bins.iter().map(|(e, o)| (o - e) * (o - e) / e).sum();
    let dist = ChiSquared::new((bins.len() - 1) as f64).unwrap();
    1.0 - dist.cdf(stat)
}

/// Paired one-sided lower confidence bound on `mean(a - b)` at normal
/// quantile `z`.
pub fn paired_lower_bound(a: &[f64], b: &[f64], z: f64) -> (f64, f64) {
    assert_eq!(a.len(), b.len());
    let n = a.len() as f64;
    let diffs: Vec<f64> = a.iter().zip(b).map(|(x, y)| x - y).collect();
    let mean = diffs.iter().sum::<f64>() / n;
    let var = diffs.iter().map(|d| (d - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, mean - z * (var / n).sqrt())
}
