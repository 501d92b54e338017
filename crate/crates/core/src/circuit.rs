//! The memory-experiment circuit as a flat op list, plus Pauli-frame
//! propagation of single faults through it.
//!
//! Qubit indices are layout node indices. Noise ops mark fault locations; the
//! sampler draws from them and the matching-graph builder enumerates them.

use crate::lattice::{Basis, CodeLayout, NodeKind};
use crate::stab_sim::Pauli;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Op {
    /// Start of round `r` (1-based). Loss draws happen here.
    RoundStart(usize),
    Reset(usize),
    H(usize),
    /// `Cx(control, target)`.
    Cx(usize, usize),
    Depol1(usize),
    Depol2(usize, usize),
    /// Readout error: X flip with the measurement-error probability.
    MeasFlip(usize),
    /// Ancilla Z measurement of round `round` (1-based).
    Measure {
        qubit: usize,
        round: usize,
    },
    /// Destructive Z readout of a data qubit (after any basis change).
    FinalMeasure(usize),
}

impl Op {
    pub fn is_noise(&self) -> bool {
        matches!(self, Op::Depol1(_) | Op::Depol2(..) | Op::MeasFlip(_))
    }
}

#[derive(Clone, Debug)]
pub struct MemoryCircuit {
    pub num_qubits: usize,
    pub num_data: usize,
    pub num_ancillas: usize,
    pub rounds: usize,
    pub basis: Basis,
    pub ops: Vec<Op>,
    round_starts: Vec<usize>,
}

/// A Pauli fault applied right after op `op`.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Fault {
    pub op: usize,
    pub paulis: Vec<(usize, Pauli)>,
}

impl MemoryCircuit {
    pub fn build(layout: &CodeLayout, rounds: usize, basis: Basis) -> Self {
        let n = layout.num_nodes();
        let nd = layout.num_data();
        let na = layout.num_ancillas();
        let ancillas: Vec<usize> = (nd..n).collect();
        let x_ancillas: Vec<usize> = ancillas
            .iter()
            .copied()
            .filter(|&a| layout.nodes()[a].kind == NodeKind::AncillaX)
            .collect();

        let mut ops = Vec::new();
        let mut round_starts = Vec::with_capacity(rounds);
        for q in 0..nd {
            ops.push(Op::Reset(q));
            if basis == Basis::X {
                ops.push(Op::H(q));
            }
        }
        for r in 1..=rounds {
            round_starts.push(ops.len());
            ops.push(Op::RoundStart(r));
            for &a in &ancillas {
                ops.push(Op::Reset(a));
                ops.push(Op::Depol1(a));
            }
            for &a in &x_ancillas {
                ops.push(Op::H(a));
                ops.push(Op::Depol1(a));
            }
            for layer in layout.schedule() {
                let mut busy = vec![false; n];
                for &(a, q) in layer {
                    let (c, t) = if layout.nodes()[a].kind == NodeKind::AncillaX {
                        (a, q)
                    } else {
                        (q, a)
                    };
                    ops.push(Op::Cx(c, t));
                    ops.push(Op::Depol2(c, t));
                    busy[a] = true;
                    busy[q] = true;
                }
                for (q, &b) in busy.iter().enumerate() {
                    if !b {
                        ops.push(Op::Depol1(q));
                    }
                }
            }
            for &a in &x_ancillas {
                ops.push(Op::H(a));
                ops.push(Op::Depol1(a));
            }
            for &a in &ancillas {
                ops.push(Op::MeasFlip(a));
                ops.push(Op::Measure { qubit: a, round: r });
            }
        }
        for q in 0..nd {
            if basis == Basis::X {
                ops.push(Op::H(q));
            }
            ops.push(Op::MeasFlip(q));
            ops.push(Op::FinalMeasure(q));
        }
        MemoryCircuit {
            num_qubits: n,
            num_data: nd,
            num_ancillas: na,
            rounds,
            basis,
            ops,
            round_starts,
        }
    }

    /// Op index of `RoundStart(round)`.
    pub fn round_start(&self, round: usize) -> usize {
        self.round_starts[round - 1]
    }

    /// Measurement flips caused by a Pauli fault inserted after op `fault.op`,
    /// relative to the noiseless circuit.
    pub fn propagate(&self, fault: &Fault) -> FrameEffect {
        let mut fx = vec![false; self.num_qubits];
        let mut fz = vec![false; self.num_qubits];
        for &(q, p) in &fault.paulis {
            let (x, z) = p.bits();
            fx[q] ^= x;
            fz[q] ^= z;
        }
        let mut effect = FrameEffect {
            ancilla_flips: vec![false; self.rounds * self.num_ancillas],
            final_flips: vec![false; self.num_data],
        };
        for op in &self.ops[fault.op + 1..] {
            match *op {
                Op::Reset(q) => {
                    fx[q] = false;
                    fz[q] = false;
                }
                Op::H(q) => std::mem::swap(&mut fx[q], &mut fz[q]),
                Op::Cx(c, t) => {
                    fx[t] ^= fx[c];
                    fz[c] ^= fz[t];
                }
                Op::Measure { qubit, round } => {
                    let ord = qubit - self.num_data;
                    effect.ancilla_flips[(round - 1) * self.num_ancillas + ord] = fx[qubit];
                }
                Op::FinalMeasure(q) => effect.final_flips[q] = fx[q],
                Op::RoundStart(_) | Op::Depol1(_) | Op::Depol2(..) | Op::MeasFlip(_) => {}
            }
        }
        effect
    }
}

/// Outcome flips of every measurement, round-major for ancillas.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct FrameEffect {
    pub ancilla_flips: Vec<bool>,
    pub final_flips: Vec<bool>,
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::lattice::build_layout;

    #[test]
    fn op_counts() {
        let l = build_layout(3).unwrap();
        let c = MemoryCircuit::build(&l, 2, Basis::Z);
        let cx = c.ops.iter().filter(|o| matches!(o, Op::Cx(..))).count();
        assert_eq!(cx, 2 * l.tanner_edges().len());
        let meas = c
            .ops
            .iter()
            .filter(|o| matches!(o, Op::Measure { .. }))
            .count();
        assert_eq!(meas, 2 * l.num_ancillas());
        assert_eq!(c.ops[c.round_start(2)], Op::RoundStart(2));
    }

    #[test]
    fn data_x_before_round_flips_adjacent_z_ancillas() {
        let l = build_layout(3).unwrap();
        let c = MemoryCircuit::build(&l, 3, Basis::Z);
        let fault = Fault {
            op: c.round_start(2),
            paulis: vec![(4, Pauli::X)],
        };
        let eff = c.propagate(&fault);
        let na = l.num_ancillas();
        for round in 1..=3 {
            for o in 0..na {
                let flipped = eff.ancilla_flips[(round - 1) * na + o];
                let expect =
                    round >= 2 && l.ancilla_basis(o) == Basis::Z && l.support(o).contains(&4);
                assert_eq!(flipped, expect, "round {round} ancilla {o}");
            }
        }
        assert!(eff.final_flips[4]);
    }
}
