//! Noisy surface-code memory experiments with qubit loss.
//!
//! A shot runs `T` stabilizer rounds followed by a destructive readout of all
//! data qubits in the task basis. Loss is modelled by skipping every gate that
//! touches a lost qubit: data-qubit loss is persistent, ancilla loss lasts for
//! the current round only. Lost qubits always read out as 0.

mod io;

pub use io::{deserialize, serialize, DATASET_MAGIC, DATASET_VERSION};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::bits::BitMatrix;
use crate::circuit::{Fault, MemoryCircuit, Op};
use crate::error::{check_probability, Error, Result};
use crate::lattice::{Basis, CodeLayout};
use crate::stab_sim::{sample_channel, Channel, Pauli, Tableau};

/// Upper bound on the in-memory size of a sampled dataset.
pub const MAX_DATASET_BYTES: usize = 4 << 30;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct NoiseParams {
    /// Single- and two-qubit depolarizing probability.
    pub p_pauli: f64,
    /// Readout flip probability.
    pub p_meas: f64,
    /// Per-qubit, per-round loss probability.
    pub p_loss: f64,
}

impl NoiseParams {
    pub fn new(p_pauli: f64, p_meas: f64, p_loss: f64) -> Result<Self> {
        let n = NoiseParams {
            p_pauli,
            p_meas,
            p_loss,
        };
        n.validate()?;
        Ok(n)
    }

    /// All three channels at the same rate.
    pub fn uniform(p: f64) -> Result<Self> {
        Self::new(p, p, p)
    }

    pub fn noiseless() -> Self {
        NoiseParams {
            p_pauli: 0.0,
            p_meas: 0.0,
            p_loss: 0.0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        check_probability(self.p_pauli)?;
        check_probability(self.p_meas)?;
        check_probability(self.p_loss)
    }

    pub fn without_loss(&self) -> Self {
        NoiseParams {
            p_loss: 0.0,
            ..*self
        }
    }
}

/// Deterministic events imposed on a shot on top of the stochastic noise.
#[derive(Clone, Debug, Default)]
pub struct Forcing {
    /// `(data qubit, round)`: the qubit is lost from that round on.
    pub data_losses: Vec<(usize, usize)>,
    /// `(ancilla ordinal, round)`: the ancilla is lost for that round.
    pub ancilla_losses: Vec<(usize, usize)>,
    pub faults: Vec<Fault>,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ShotRecord {
    pub basis: Basis,
    /// `T x ancillas`.
    pub ancilla_outcomes: BitMatrix,
    /// `(T+1) x ancillas`.
    pub detectors: BitMatrix,
    /// One bit per data qubit, task basis.
    pub final_readout: Vec<bool>,
    /// `T x data`, set from the round of loss onwards.
    pub loss_mask_truth: BitMatrix,
    /// `T x ancillas`.
    pub ancilla_loss_truth: BitMatrix,
    /// Measured value of each equivalent observable XOR its noiseless value.
    pub logical_labels: Vec<bool>,
    /// Observables whose support touches a qubit lost by the last round.
    pub excluded_observables: Vec<bool>,
}

impl ShotRecord {
    pub fn rounds(&self) -> usize {
        self.ancilla_outcomes.rows()
    }

    pub fn num_data(&self) -> usize {
        self.final_readout.len()
    }

    /// First round (1-based) in which data qubit `q` is lost.
    pub fn loss_onset(&self, q: usize) -> Option<usize> {
        (0..self.rounds())
            .find(|&r| self.loss_mask_truth.get(r, q))
            .map(|r| r + 1)
    }

    /// Data qubits lost at or before the final round.
    pub fn lost_data(&self) -> Vec<usize> {
        let t = self.rounds();
        if t == 0 {
            return Vec::new();
        }
        (0..self.num_data())
            .filter(|&q| self.loss_mask_truth.get(t - 1, q))
            .collect()
    }
}

/// Reusable driver for one `(layout, noise, T, basis)` configuration.
#[derive(Clone, Debug)]
pub struct Experiment<'a> {
    layout: &'a CodeLayout,
    circuit: MemoryCircuit,
    noise: NoiseParams,
}

impl<'a> Experiment<'a> {
    pub fn new(
        layout: &'a CodeLayout,
        noise: NoiseParams,
        rounds: usize,
        basis: Basis,
    ) -> Result<Self> {
        noise.validate()?;
        if rounds == 0 {
            return Err(Error::InvalidParameter(
                "at least one round is required".into(),
            ));
        }
        Ok(Experiment {
            layout,
            circuit: MemoryCircuit::build(layout, rounds, basis),
            noise,
        })
    }

    pub fn layout(&self) -> &CodeLayout {
        self.layout
    }

    pub fn circuit(&self) -> &MemoryCircuit {
        &self.circuit
    }

    pub fn noise(&self) -> NoiseParams {
        self.noise
    }

    pub fn rounds(&self) -> usize {
        self.circuit.rounds
    }

    pub fn basis(&self) -> Basis {
        self.circuit.basis
    }

    pub fn run<R: Rng + ?Sized>(&self, rng: &mut R) -> ShotRecord {
        self.run_forced(rng, &Forcing::default())
            .expect("unforced shots cannot fail")
    }

    pub fn run_forced<R: Rng + ?Sized>(
        &self,
        rng: &mut R,
        forcing: &Forcing,
    ) -> Result<ShotRecord> {
        let layout = self.layout;
        let circuit = &self.circuit;
        let nd = layout.num_data();
        let na = layout.num_ancillas();
        let t_rounds = circuit.rounds;
        for &(q, r) in &forcing.data_losses {
            if q >= nd {
                return Err(Error::UnknownQubit(q));
            }
            if r == 0 || r > t_rounds {
                return Err(Error::InvalidParameter(format!(
                    "loss round {r} outside 1..={t_rounds}"
                )));
            }
        }
        for &(a, r) in &forcing.ancilla_losses {
            if a >= na || r == 0 || r > t_rounds {
                return Err(Error::InvalidParameter(format!(
                    "bad ancilla loss ({a}, {r})"
                )));
            }
        }
        for f in &forcing.faults {
            if f.op >= circuit.ops.len() || f.paulis.iter().any(|&(q, _)| q >= circuit.num_qubits) {
                return Err(Error::InvalidParameter(format!(
                    "fault {f:?} outside the circuit"
                )));
            }
        }

        let mut tab = Tableau::new(circuit.num_qubits)?;
        let noise = self.noise;
        let mut lost = vec![false; circuit.num_qubits];
        let mut ancilla_outcomes = BitMatrix::zeros(t_rounds, na);
        let mut loss_mask = BitMatrix::zeros(t_rounds, nd);
        let mut ancilla_loss = BitMatrix::zeros(t_rounds, na);
        let mut final_readout = vec![false; nd];
        let mut faults: Vec<&Fault> = forcing.faults.iter().collect();
        faults.sort_by_key(|f| f.op);
        let mut next_fault = 0;

        for (i, op) in circuit.ops.iter().enumerate() {
            match *op {
                Op::RoundStart(r) => {
                    for q in 0..nd {
                        if !lost[q]
                            && (forcing.data_losses.contains(&(q, r))
                                || noise.p_loss > 0.0 && rng.gen::<f64>() < noise.p_loss)
                        {
                            lost[q] = true;
                        }
                        if lost[q] {
                            loss_mask.set(r - 1, q, true);
                        }
                    }
                    for o in 0..na {
                        let gone = forcing.ancilla_losses.contains(&(o, r))
                            || noise.p_loss > 0.0 && rng.gen::<f64>() < noise.p_loss;
                        lost[nd + o] = gone;
                        ancilla_loss.set(r - 1, o, gone);
                    }
                }
                Op::Reset(q) => {
                    if !lost[q] {
                        tab.reset_z_unchecked(q, rng);
                    }
                }
                Op::H(q) => {
                    if !lost[q] {
                        tab.h(q);
                    }
                }
                Op::Cx(c, t) => {
                    if !lost[c] && !lost[t] {
                        tab.cx(c, t);
                    }
                }
                Op::Depol1(q) => {
                    if !lost[q] && noise.p_pauli > 0.0 {
                        let [p, _] = sample_channel(Channel::Depolarize1, noise.p_pauli, rng);
                        if p != Pauli::I {
                            tab.pauli(q, p);
                        }
                    }
                }
                Op::Depol2(a, b) => {
                    if !lost[a] && !lost[b] && noise.p_pauli > 0.0 {
                        let [pa, pb] = sample_channel(Channel::Depolarize2, noise.p_pauli, rng);
                        if pa != Pauli::I {
                            tab.pauli(a, pa);
                        }
                        if pb != Pauli::I {
                            tab.pauli(b, pb);
                        }
                    }
                }
                Op::MeasFlip(q) => {
                    if !lost[q] && noise.p_meas > 0.0 && rng.gen::<f64>() < noise.p_meas {
                        tab.pauli(q, Pauli::X);
                    }
                }
                Op::Measure { qubit, round } => {
                    let bit = !lost[qubit] && tab.measure_z_unchecked(qubit, rng).outcome;
                    ancilla_outcomes.set(round - 1, qubit - nd, bit);
                }
                Op::FinalMeasure(q) => {
                    final_readout[q] = !lost[q] && tab.measure_z_unchecked(q, rng).outcome;
                }
            }
            while next_fault < faults.len() && faults[next_fault].op == i {
                for &(q, p) in &faults[next_fault].paulis {
                    if !lost[q] && p != Pauli::I {
                        tab.pauli(q, p);
                    }
                }
                next_fault += 1;
            }
        }

        let basis = circuit.basis;
        let detectors = compute_detectors(layout, basis, &ancilla_outcomes, &final_readout)?;
        let observables = layout.observable_supports(basis);
        let lost_final: Vec<bool> = (0..nd).map(|q| loss_mask.get(t_rounds - 1, q)).collect();
        let logical_labels = observables
            .iter()
            .map(|obs| obs.iter().fold(false, |acc, &q| acc ^ final_readout[q]))
            .collect();
        let excluded_observables = observables
            .iter()
            .map(|obs| obs.iter().any(|&q| lost_final[q]))
            .collect();

        Ok(ShotRecord {
            basis,
            ancilla_outcomes,
            detectors,
            final_readout,
            loss_mask_truth: loss_mask,
            ancilla_loss_truth: ancilla_loss,
            logical_labels,
            excluded_observables,
        })
    }
}

/// Runs a single shot. Prefer [`Experiment`] when sampling many shots.
pub fn run_shot<R: Rng + ?Sized>(
    layout: &CodeLayout,
    noise: NoiseParams,
    rounds: usize,
    basis: Basis,
    rng: &mut R,
) -> Result<ShotRecord> {
    Ok(Experiment::new(layout, noise, rounds, basis)?.run(rng))
}

/// Detector volume of `(T+1)` slices.
///
/// Slice 1 compares on-basis ancillas against their deterministic initial
/// value 0; off-basis first-round outcomes are random so those slots stay 0.
/// Slices 2..=T difference consecutive rounds. Slice T+1 compares round T of
/// the on-basis ancillas against the stabilizer value reconstructed from the
/// final readout.
pub fn compute_detectors(
    layout: &CodeLayout,
    basis: Basis,
    ancilla_outcomes: &BitMatrix,
    final_readout: &[bool],
) -> Result<BitMatrix> {
    let na = layout.num_ancillas();
    let t = ancilla_outcomes.rows();
    if ancilla_outcomes.cols() != na || t == 0 {
        return Err(Error::ShapeMismatch(format!(
            "ancilla outcomes are {}x{}, expected Tx{}",
            t,
            ancilla_outcomes.cols(),
            na
        )));
    }
    if final_readout.len() != layout.num_data() {
        return Err(Error::ShapeMismatch(format!(
            "final readout has {} bits, expected {}",
            final_readout.len(),
            layout.num_data()
        )));
    }
    let mut det = BitMatrix::zeros(t + 1, na);
    for o in 0..na {
        let on_basis = layout.ancilla_basis(o) == basis;
        if on_basis {
            det.set(0, o, ancilla_outcomes.get(0, o));
        }
        for s in 1..t {
            det.set(
                s,
                o,
                ancilla_outcomes.get(s, o) ^ ancilla_outcomes.get(s - 1, o),
            );
        }
        if on_basis {
            let parity = layout
                .support(o)
                .iter()
                .fold(false, |acc, &q| acc ^ final_readout[q]);
            det.set(t, o, parity ^ ancilla_outcomes.get(t - 1, o));
        }
    }
    Ok(det)
}

/// Independent RNG stream for shot `index` under `seed`.
pub fn shot_rng(seed: u64, index: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(index);
    rng
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DatasetHeader {
    pub d: usize,
    pub rounds: usize,
    pub basis: Basis,
    pub noise: NoiseParams,
    pub seed: u64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    pub header: DatasetHeader,
    pub shots: Vec<ShotRecord>,
}

impl Dataset {
    pub fn len(&self) -> usize {
        self.shots.len()
    }

    pub fn is_empty(&self) -> bool {
        self.shots.is_empty()
    }
}

fn shot_bytes(layout: &CodeLayout, rounds: usize) -> usize {
    let na = layout.num_ancillas();
    let nd = layout.num_data();
    std::mem::size_of::<ShotRecord>()
        + 2 * rounds * na
        + (rounds + 1) * na
        + nd
        + rounds * nd
        + 2 * layout.distance()
}

/// Samples `shots` independent shots; shot `i` uses stream `i` of `seed`.
pub fn sample_dataset(
    layout: &CodeLayout,
    noise: NoiseParams,
    rounds: usize,
    basis: Basis,
    shots: usize,
    seed: u64,
) -> Result<Dataset> {
    if shots == 0 {
        return Err(Error::InvalidParameter("shots must be at least 1".into()));
    }
    let need = shot_bytes(layout, rounds).saturating_mul(shots);
    if need > MAX_DATASET_BYTES {
        return Err(Error::ResourceLimit(format!(
            "{shots} shots need about {need} bytes (limit {MAX_DATASET_BYTES})"
        )));
    }
    let exp = Experiment::new(layout, noise, rounds, basis)?;
    let mut out = Vec::new();
    out.try_reserve_exact(shots)
        .map_err(|e| Error::ResourceLimit(format!("cannot allocate {shots} shots: {e}")))?;
    (0..shots)
        .into_par_iter()
        .map(|i| exp.run(&mut shot_rng(seed, i as u64)))
        .collect_into_vec(&mut out);
    Ok(Dataset {
        header: DatasetHeader {
            d: layout.distance(),
            rounds,
            basis,
            noise,
            seed,
        },
        shots: out,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::lattice::build_layout;

    #[test]
    fn noiseless_shots_are_silent() {
        let l = build_layout(3).unwrap();
        for basis in [Basis::Z, Basis::X] {
            let exp = Experiment::new(&l, NoiseParams::noiseless(), 5, basis).unwrap();
            for seed in 0..20 {
                let rec = exp.run(&mut shot_rng(seed, 0));
                assert!(rec.detectors.is_zero(), "{basis} seed {seed}");
                assert!(rec.logical_labels.iter().all(|&b| !b));
                assert!(rec.loss_mask_truth.is_zero());
                assert!(rec.excluded_observables.iter().all(|&b| !b));
            }
        }
    }

    #[test]
    fn detector_differences() {
        let l = build_layout(3).unwrap();
        let na = l.num_ancillas();
        let z = l.ancillas_of(Basis::Z)[0];
        let mut outcomes = BitMatrix::zeros(5, na);
        // ancilla flips between rounds 3 and 4 and stays flipped
        outcomes.set(3, z, true);
        outcomes.set(4, z, true);
        let mut readout = vec![false; 9];
        readout[l.support(z)[0]] = true;
        let det = compute_detectors(&l, Basis::Z, &outcomes, &readout).unwrap();
        assert_eq!(det.ones().collect::<Vec<_>>(), vec![(3, z)]);
    }

    #[test]
    fn detector_shape_errors() {
        let l = build_layout(3).unwrap();
        let bad = BitMatrix::zeros(3, 5);
        assert!(matches!(
            compute_detectors(&l, Basis::Z, &bad, &[false; 9]),
            Err(Error::ShapeMismatch(_))
        ));
        let ok = BitMatrix::zeros(3, 8);
        assert!(compute_detectors(&l, Basis::Z, &ok, &[false; 4]).is_err());
    }

    #[test]
    fn persistent_loss_mask() {
        let l = build_layout(3).unwrap();
        let exp =
            Experiment::new(&l, NoiseParams::new(0.0, 0.0, 0.05).unwrap(), 8, Basis::Z).unwrap();
        for i in 0..200 {
            let rec = exp.run(&mut shot_rng(3, i));
            for q in 0..9 {
                let col: Vec<bool> = (0..8).map(|r| rec.loss_mask_truth.get(r, q)).collect();
                assert!(col.windows(2).all(|w| !w[0] || w[1]), "non-monotone mask");
            }
            let lost = rec.lost_data();
            for (i, obs) in l.observable_supports(Basis::Z).iter().enumerate() {
                assert_eq!(
                    rec.excluded_observables[i],
                    obs.iter().any(|q| lost.contains(q))
                );
            }
        }
    }

    #[test]
    fn lost_data_reads_zero() {
        let l = build_layout(3).unwrap();
        let exp = Experiment::new(&l, NoiseParams::noiseless(), 3, Basis::X).unwrap();
        let forcing = Forcing {
            data_losses: vec![(4, 2)],
            ..Default::default()
        };
        for i in 0..50 {
            let rec = exp.run_forced(&mut shot_rng(1, i), &forcing).unwrap();
            assert!(!rec.final_readout[4]);
            assert_eq!(rec.loss_onset(4), Some(2));
            assert_eq!(rec.excluded_observables, vec![false, true, false]);
        }
    }

    #[test]
    fn forcing_is_validated() {
        let l = build_layout(3).unwrap();
        let exp = Experiment::new(&l, NoiseParams::noiseless(), 3, Basis::Z).unwrap();
        let bad = Forcing {
            data_losses: vec![(12, 1)],
            ..Default::default()
        };
        assert!(exp.run_forced(&mut shot_rng(0, 0), &bad).is_err());
        assert!(Experiment::new(&l, NoiseParams::noiseless(), 0, Basis::Z).is_err());
        assert!(NoiseParams::new(0.1, -0.1, 0.0).is_err());
    }

    #[test]
    fn same_seed_same_dataset() {
        let l = build_layout(3).unwrap();
        let noise = NoiseParams::uniform(0.01).unwrap();
        let a = sample_dataset(&l, noise, 4, Basis::Z, 40, 9).unwrap();
        let b = sample_dataset(&l, noise, 4, Basis::Z, 40, 9).unwrap();
        assert_eq!(a, b);
        assert!(sample_dataset(&l, noise, 4, Basis::Z, 0, 9).is_err());
    }
}
