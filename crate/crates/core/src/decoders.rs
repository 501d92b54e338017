//! Uniform window-decoder interface over the matching, flicker and STGNN
//! decoders, and the evaluation loop that turns their outputs into an
//! [`EvalReport`].

use std::str::FromStr;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::experiment::ShotRecord;
use crate::flicker::flicker_scores;
use crate::lattice::{Basis, CodeLayout};
use crate::matching::{erasure_decode, mwpm_decode, DetectorGraph};
use crate::metrics::{logical_accuracy, loss_metrics, miss_analysis, threshold_sweep, uniform_grid, EvalReport};
use crate::stgnn::Stgnn;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum DecoderKind {
    Mwpm,
    DeMwpm,
    Flicker,
    Stgnn,
}

impl FromStr for DecoderKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "mwpm" => Ok(DecoderKind::Mwpm),
            "de-mwpm" => Ok(DecoderKind::DeMwpm),
            "flicker" => Ok(DecoderKind::Flicker),
            "stgnn" => Ok(DecoderKind::Stgnn),
            _ => Err(Error::Config(format!(
                "unknown decoder {s:?} (expected mwpm, de-mwpm, flicker or stgnn)"
            ))),
        }
    }
}

impl std::fmt::Display for DecoderKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            DecoderKind::Mwpm => "mwpm",
            DecoderKind::DeMwpm => "de-mwpm",
            DecoderKind::Flicker => "flicker",
            DecoderKind::Stgnn => "stgnn",
        })
    }
}

/// How per-round loss probabilities become one verdict per qubit.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum VerdictMode {
    /// Probability at the final round.
    #[default]
    Final,
    /// Largest probability over all rounds.
    Max,
}

impl FromStr for VerdictMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "final" => Ok(VerdictMode::Final),
            "max" => Ok(VerdictMode::Max),
            _ => Err(Error::Config(format!("unknown verdict mode {s:?} (expected final or max)"))),
        }
    }
}

/// Result of decoding one full window.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct WindowOutput {
    /// Predicted flip per equivalent observable, if the decoder corrects.
    pub logical: Option<Vec<bool>>,
    /// `rounds x data` loss probabilities, round-major, if the decoder
    /// identifies loss.
    pub loss_probabilities: Option<Vec<f64>>,
}

impl WindowOutput {
    /// One probability per data qubit under `mode`.
    pub fn verdict_probabilities(&self, num_data: usize, mode: VerdictMode) -> Option<Vec<f64>> {
        let p = self.loss_probabilities.as_ref()?;
        let rounds = p.len() / num_data;
        Some(match mode {
            VerdictMode::Final => p[(rounds - 1) * num_data..].to_vec(),
            VerdictMode::Max => (0..num_data)
                .map(|q| (0..rounds).map(|r| p[r * num_data + q]).fold(0.0, f64::max))
                .collect(),
        })
    }
}

pub trait WindowDecoder: Sync {
    fn name(&self) -> String;

    fn decode(&self, record: &ShotRecord) -> Result<WindowOutput>;

    /// Network evaluations issued so far, for decoders that count them.
    fn forward_passes(&self) -> Option<u64> {
        None
    }
}

pub struct MwpmDecoder<'a> {
    pub graph: &'a DetectorGraph,
}

impl WindowDecoder for MwpmDecoder<'_> {
    fn name(&self) -> String {
        "mwpm".into()
    }

    fn decode(&self, record: &ShotRecord) -> Result<WindowOutput> {
        Ok(WindowOutput {
            logical: Some(mwpm_decode(self.graph, &record.detectors)?),
            loss_probabilities: None,
        })
    }
}

/// Matching that reweights edges of qubits known, from the ground truth,
/// to be lost by the end of the window.
pub struct ErasureMwpmDecoder<'a> {
    pub graph: &'a DetectorGraph,
}

impl WindowDecoder for ErasureMwpmDecoder<'_> {
    fn name(&self) -> String {
        "de-mwpm".into()
    }

    fn decode(&self, record: &ShotRecord) -> Result<WindowOutput> {
        Ok(WindowOutput {
            logical: Some(erasure_decode(self.graph, &record.detectors, &record.lost_data())?),
            loss_probabilities: None,
        })
    }
}

/// Loss identification only.
pub struct FlickerDecoder<'a> {
    pub layout: &'a CodeLayout,
    pub basis: Basis,
    pub background_rate: f64,
    /// Per-round loss probability of the onset prior.
    pub prior_rate: f64,
}

impl WindowDecoder for FlickerDecoder<'_> {
    fn name(&self) -> String {
        "flicker".into()
    }

    fn decode(&self, record: &ShotRecord) -> Result<WindowOutput> {
        let s = flicker_scores(&record.detectors, self.layout, self.basis, self.background_rate)?;
        Ok(WindowOutput {
            logical: None,
            loss_probabilities: Some(s.round_probabilities(self.prior_rate)?),
        })
    }
}

/// One forward pass per window.
pub struct StgnnDecoder<'a> {
    pub model: &'a Stgnn,
}

impl WindowDecoder for StgnnDecoder<'_> {
    fn name(&self) -> String {
        "stgnn".into()
    }

    fn decode(&self, record: &ShotRecord) -> Result<WindowOutput> {
        let l = self.model.forward(record)?;
        Ok(WindowOutput {
            logical: Some(l.logical.iter().map(|&z| z > 0.0).collect()),
            loss_probabilities: Some(l.loss.iter().map(|&z| 1.0 / (1.0 + (-z).exp())).collect()),
        })
    }

    fn forward_passes(&self) -> Option<u64> {
        Some(self.model.forward_passes())
    }
}

/// Decodes every record in parallel, in order.
pub fn decode_all(decoder: &dyn WindowDecoder, records: &[ShotRecord]) -> Result<Vec<WindowOutput>> {
    records.par_iter().map(|r| decoder.decode(r)).collect()
}

/// Scores decoder outputs. Logical fields stay `None` when the decoder does
/// not correct; loss fields stay empty when it does not identify loss.
pub fn evaluate(
    name: &str,
    outputs: &[WindowOutput],
    records: &[ShotRecord],
    threshold: f64,
    mode: VerdictMode,
) -> Result<EvalReport> {
    if outputs.len() != records.len() {
        return Err(Error::ShapeMismatch(format!(
            "{} outputs for {} records",
            outputs.len(),
            records.len()
        )));
    }
    let mut report = EvalReport {
        decoder: name.to_string(),
        shots: records.len(),
        ..Default::default()
    };
    let logical: Option<Vec<Vec<bool>>> = outputs.iter().map(|o| o.logical.clone()).collect();
    if let Some(preds) = logical {
        let acc = logical_accuracy(&preds, records)?;
        report.logical_accuracy = Some(acc.accuracy);
        let mut by_t: std::collections::BTreeMap<usize, (Vec<Vec<bool>>, Vec<ShotRecord>)> = Default::default();
        for (p, r) in preds.into_iter().zip(records) {
            let e = by_t.entry(r.rounds()).or_default();
            e.0.push(p);
            e.1.push(r.clone());
        }
        for (t, (p, r)) in by_t {
            report.per_t_accuracy.push((t, logical_accuracy(&p, &r)?.accuracy));
        }
    }
    let probs: Option<Vec<Vec<f64>>> = outputs
        .iter()
        .zip(records)
        .map(|(o, r)| o.verdict_probabilities(r.num_data(), mode))
        .collect();
    if let Some(probs) = probs {
        let m = loss_metrics(&probs, records, threshold)?;
        report.precision = Some(m.precision);
        report.recall = Some(m.recall);
        report.f1 = Some(m.f1);
        report.threshold = Some(threshold);
        report.threshold_curve = threshold_sweep(&probs, records, &uniform_grid(21))?;
        let verdicts: Vec<Vec<bool>> = probs
            .iter()
            .map(|p| p.iter().map(|&x| x >= threshold).collect())
            .collect();
        let miss = miss_analysis(&verdicts, records)?;
        report.fn_by_loss_round = miss.fn_by_loss_round;
        report.miss_rate_by_round = miss.miss_rate_by_round;
    }
    Ok(report)
}
