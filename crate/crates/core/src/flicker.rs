//! Likelihood-ratio loss detector.
//!
//! A lost data qubit makes the checks around it flip like a fair coin, while
//! an intact neighbourhood clicks at the Pauli background rate `b`. For each
//! data qubit and candidate onset round the score sums, over adjacent
//! detectors and every slice from that round on, `ln(0.5 / b)` per click and
//! `ln(0.5 / (1 - b))` per silent detector. Slots that are zero by
//! construction (off-basis detectors in the first and last slice) carry no
//! evidence and are skipped.

use rayon::prelude::*;

use crate::bits::BitMatrix;
use crate::error::{Error, Result};
use crate::experiment::{sample_dataset, NoiseParams};
use crate::lattice::{Basis, CodeLayout};

/// Log-likelihood ratios indexed `(round - 1, data qubit)`.
#[derive(Clone, Debug, PartialEq)]
pub struct FlickerScore {
    rounds: usize,
    num_data: usize,
    values: Vec<f64>,
}

impl FlickerScore {
    pub fn rounds(&self) -> usize {
        self.rounds
    }

    pub fn num_data(&self) -> usize {
        self.num_data
    }

    /// Evidence that qubit `q` has been lost since round `r + 1`.
    pub fn get(&self, r: usize, q: usize) -> f64 {
        self.values[r * self.num_data + q]
    }

    /// Best onset hypothesis per qubit.
    pub fn max_per_qubit(&self) -> Vec<f64> {
        (0..self.num_data)
            .map(|q| (0..self.rounds).map(|r| self.get(r, q)).fold(f64::NEG_INFINITY, f64::max))
            .collect()
    }

    /// `P(onset <= r + 1 | detectors)` under a geometric onset prior with
    /// per-round loss probability `prior_rate`, indexed like the scores.
    pub fn round_probabilities(&self, prior_rate: f64) -> Result<Vec<f64>> {
        if !(prior_rate > 0.0 && prior_rate < 1.0) {
            return Err(Error::InvalidParameter(format!("prior rate {prior_rate} must lie in (0, 1)")));
        }
        let stay = (1.0 - prior_rate).ln();
        let start = prior_rate.ln();
        let never = self.rounds as f64 * stay;
        let mut out = vec![0.0; self.values.len()];
        let mut terms = vec![0.0; self.rounds];
        for q in 0..self.num_data {
            for (r, t) in terms.iter_mut().enumerate() {
                *t = start + r as f64 * stay + self.get(r, q);
            }
            let top = terms.iter().copied().fold(never, f64::max);
            let total = terms.iter().map(|t| (t - top).exp()).sum::<f64>() + (never - top).exp();
            let mut acc = 0.0;
            for r in 0..self.rounds {
                acc += (terms[r] - top).exp();
                out[r * self.num_data + q] = (acc / total).min(1.0);
            }
        }
        Ok(out)
    }

    /// `P(lost by the final round | detectors)` per qubit.
    pub fn final_probabilities(&self, prior_rate: f64) -> Result<Vec<f64>> {
        let all = self.round_probabilities(prior_rate)?;
        Ok(all[(self.rounds - 1) * self.num_data..].to_vec())
    }
}

fn live(layout: &CodeLayout, basis: Basis, slices: usize, s: usize, o: usize) -> bool {
    layout.ancilla_basis(o) == basis || (s != 0 && s + 1 != slices)
}

pub fn flicker_scores(detectors: &BitMatrix, layout: &CodeLayout, basis: Basis, background_rate: f64) -> Result<FlickerScore> {
    if !(background_rate > 0.0 && background_rate < 0.5) {
        return Err(Error::InvalidParameter(format!(
            "background rate {background_rate} must lie in (0, 0.5)"
        )));
    }
    let na = layout.num_ancillas();
    let nd = layout.num_data();
    let slices = detectors.rows();
    if detectors.cols() != na || slices < 2 {
        return Err(Error::ShapeMismatch(format!(
            "detector volume {}x{} for {na} ancillas",
            slices,
            detectors.cols()
        )));
    }
    let rounds = slices - 1;
    let click = (0.5 / background_rate).ln();
    let quiet = (0.5 / (1.0 - background_rate)).ln();
    let mut values = vec![0.0; rounds * nd];
    for q in 0..nd {
        let ords: Vec<usize> = layout.data_neighbors(q).iter().map(|&a| a - nd).collect();
        let mut suffix = 0.0;
        for s in (0..slices).rev() {
            for &o in &ords {
                if live(layout, basis, slices, s, o) {
                    suffix += if detectors.get(s, o) { click } else { quiet };
                }
            }
            if s < rounds {
                values[s * nd + q] = suffix;
            }
        }
    }
    Ok(FlickerScore { rounds, num_data: nd, values })
}

/// `mask(r, q) = score(r, q) >= threshold`.
pub fn classify(scores: &FlickerScore, threshold: f64) -> BitMatrix {
    BitMatrix::from_fn(scores.rounds, scores.num_data, |r, q| scores.get(r, q) >= threshold)
}

/// Mean click rate of live detector slots in loss-free shots at `noise`.
pub fn calibrate_background(
    layout: &CodeLayout,
    noise: NoiseParams,
    rounds: usize,
    basis: Basis,
    shots: usize,
    seed: u64,
) -> Result<f64> {
    let data = sample_dataset(layout, noise.without_loss(), rounds, basis, shots, seed)?;
    let slices = rounds + 1;
    let na = layout.num_ancillas();
    let (clicks, slots) = data
        .shots
        .par_iter()
        .map(|s| {
            let mut c = 0usize;
            let mut n = 0usize;
            for sl in 0..slices {
                for o in 0..na {
                    if live(layout, basis, slices, sl, o) {
                        n += 1;
                        c += s.detectors.get(sl, o) as usize;
                    }
                }
            }
            (c, n)
        })
        .reduce(|| (0, 0), |a, b| (a.0 + b.0, a.1 + b.1));
    // Laplace smoothing keeps the rate inside (0, 0.5) for tiny samples.
    let rate = (clicks as f64 + 1.0) / (slots as f64 + 2.0);
    Ok(rate.min(0.49))
}

/// Flicker detector with a fixed background rate.
#[derive(Clone, Debug)]
pub struct FlickerDetector<'a> {
    pub layout: &'a CodeLayout,
    pub basis: Basis,
    pub background_rate: f64,
}

impl FlickerDetector<'_> {
    pub fn scores(&self, detectors: &BitMatrix) -> Result<FlickerScore> {
        flicker_scores(detectors, self.layout, self.basis, self.background_rate)
    }
}
