//! Dense state-vector oracle for small Clifford circuits with Pauli
//! channels and Z measurements. Outcome distributions are computed exactly
//! by branching over every channel outcome and measurement result.

use std::collections::BTreeMap;

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use qloss::stab_sim::{Channel, Gate, Pauli, Tableau};

#[derive(Clone, Copy, Debug)]
pub enum CircuitOp {
    Gate(Gate),
    /// Channel, probability, targets (second target unused for arity 1).
    Noise(Channel, f64, [usize; 2]),
    /// Recorded Z measurement.
    Measure(usize),
    Reset(usize),
}

#[derive(Clone, Debug)]
pub struct RandomCircuit {
    pub n: usize,
    pub ops: Vec<CircuitOp>,
    pub measurements: usize,
}

type C = (f64, f64);

fn cmul(a: C, b: C) -> C {
    (a.0 * b.0 - a.1 * b.1, a.0 * b.1 + a.1 * b.0)
}

fn cadd(a: C, b: C) -> C {
    (a.0 + b.0, a.1 + b.1)
}

const ZERO: C = (0.0, 0.0);
const ONE: C = (1.0, 0.0);
const I: C = (0.0, 1.0);

#[derive(Clone, Debug)]
pub struct DenseState {
    n: usize,
    amp: Vec<C>,
}

impl DenseState {
    pub fn zero(n: usize) -> Self {
        let mut amp = vec![ZERO; 1 << n];
        amp[0] = ONE;
        DenseState { n, amp }
    }

    /// Applies `[[a, b], [c, d]]` to qubit `q` (bit `q` of the index).
    fn single(&mut self, q: usize, m: [C; 4]) {
        let bit = 1 << q;
        for i in 0..self.amp.len() {
            if i & bit == 0 {
                let (a0, a1) = (self.amp[i], self.amp[i | bit]);
                self.amp[i] = cadd(cmul(m[0], a0), cmul(m[1], a1));
                self.amp[i | bit] = cadd(cmul(m[2], a0), cmul(m[3], a1));
            }
        }
    }

    pub fn pauli(&mut self, q: usize, p: Pauli) {
        match p {
            Pauli::I => {}
            Pauli::X => self.single(q, [ZERO, ONE, ONE, ZERO]),
            Pauli::Y => self.single(q, [ZERO, (0.0, -1.0), I, ZERO]),
            Pauli::Z => self.single(q, [ONE, ZERO, ZERO, (-1.0, 0.0)]),
        }
    }

    pub fn gate(&mut self, g: Gate) {
        let h = std::f64::consts::FRAC_1_SQRT_2;
        match g {
            Gate::H(q) => self.single(q, [(h, 0.0), (h, 0.0), (h, 0.0), (-h, 0.0)]),
            Gate::S(q) => self.single(q, [ONE, ZERO, ZERO, I]),
            Gate::X(q) => self.pauli(q, Pauli::X),
            Gate::Y(q) => self.pauli(q, Pauli::Y),
            Gate::Z(q) => self.pauli(q, Pauli::Z),
            Gate::Cx(c, t) => {
                let (cb, tb) = (1 << c, 1 << t);
                for i in 0..self.amp.len() {
                    if i & cb != 0 && i & tb == 0 {
                        self.amp.swap(i, i | tb);
                    }
                }
            }
        }
    }

    /// Probability of reading 1 on qubit `q`.
    pub fn prob_one(&self, q: usize) -> f64 {
        let bit = 1 << q;
        self.amp
            .iter()
            .enumerate()
            .filter(|(i, _)| i & bit != 0)
            .map(|(_, a)| a.0 * a.0 + a.1 * a.1)
            .sum()
    }

    /// Projects qubit `q` onto `outcome` and renormalizes.
    pub fn project(&mut self, q: usize, outcome: bool, prob: f64) {
        let bit = 1 << q;
        let s = 1.0 / prob.sqrt();
        for (i, a) in self.amp.iter_mut().enumerate() {
            if ((i & bit) != 0) == outcome {
                *a = (a.0 * s, a.1 * s);
            } else {
                *a = ZERO;
            }
        }
    }

    pub fn num_qubits(&self) -> usize {
        self.n
    }
}

fn channel_branches(ch: Channel, p: f64) -> Vec<(f64, [Pauli; 2])> {
    let all = [Pauli::I, Pauli::X, Pauli::Y, Pauli::Z];
    match ch {
        Channel::FlipX => vec![(1.0 - p, [Pauli::I; 2]), (p, [Pauli::X, Pauli::I])],
        Channel::Depolarize1 => {
            let mut v = vec![(1.0 - p, [Pauli::I; 2])];
            v.extend(all[1..].iter().map(|&a| (p / 3.0, [a, Pauli::I])));
            v
        }
        Channel::Depolarize2 => {
            let mut v = vec![(1.0 - p, [Pauli::I; 2])];
            for a in all {
                for b in all {
                    if (a, b) != (Pauli::I, Pauli::I) {
                        v.push((p / 15.0, [a, b]));
                    }
                }
            }
            v
        }
    }
}

/// Exact distribution over measurement records, bit `k` for measurement `k`.
pub fn exact_distribution(c: &RandomCircuit) -> Vec<f64> {
    let mut branches: Vec<(f64, DenseState, usize)> = vec![(1.0, DenseState::zero(c.n), 0)];
    let mut k = 0;
    let cut = 1e-14;
    for op in &c.ops {
        let mut next = Vec::with_capacity(branches.len());
        for (p, st, rec) in branches {
            match *op {
                CircuitOp::Gate(g) => {
                    let mut st = st;
                    st.gate(g);
                    next.push((p, st, rec));
                }
                CircuitOp::Noise(ch, q, t) => {
                    for (w, paulis) in channel_branches(ch, q) {
                        if w * p < cut {
                            continue;
                        }
                        let mut s = st.clone();
                        s.pauli(t[0], paulis[0]);
                        if ch == Channel::Depolarize2 {
                            s.pauli(t[1], paulis[1]);
                        }
                        next.push((p * w, s, rec));
                    }
                }
                CircuitOp::Measure(q) | CircuitOp::Reset(q) => {
                    let p1 = st.prob_one(q);
                    for (outcome, w) in [(false, 1.0 - p1), (true, p1)] {
                        if w * p < cut {
                            continue;
                        }
                        let mut s = st.clone();
                        s.project(q, outcome, w);
                        let mut r = rec;
                        if let CircuitOp::Measure(_) = op {
                            r |= (outcome as usize) << k;
                        } else if outcome {
                            s.pauli(q, Pauli::X);
                        }
                        next.push((p * w, s, r));
                    }
                }
            }
        }
        if let CircuitOp::Measure(_) = op {
            k += 1;
        }
        // Merge identical branches to bound the tree.
        branches = merge(next);
    }
    let mut dist = vec![0.0; 1 << c.measurements];
    for (p, _, rec) in branches {
        dist[rec] += p;
    }
    dist
}

fn merge(branches: Vec<(f64, DenseState, usize)>) -> Vec<(f64, DenseState, usize)> {
    if branches.len() < 64 {
        return branches;
    }
    let mut map: BTreeMap<(usize, Vec<i64>), (f64, DenseState, usize)> = BTreeMap::new();
    for (p, s, r) in branches {
        // States are pure and normalized; equal amplitudes up to 1e-9 merge.
        let key: Vec<i64> = s
            .amp
            .iter()
            .flat_map(|a| [(a.0 * 1e9).round() as i64, (a.1 * 1e9).round() as i64])
            .collect();
        map.entry((r, key)).and_modify(|e| e.0 += p).or_insert((p, s, r));
    }
    map.into_values().collect()
}

/// Runs the circuit once on the tableau simulator.
pub fn sample_tableau(c: &RandomCircuit, rng: &mut ChaCha8Rng) -> usize {
    let mut t = Tableau::new(c.n).unwrap();
    let mut rec = 0;
    let mut k = 0;
    for op in &c.ops {
        match *op {
            CircuitOp::Gate(g) => t.apply(g).unwrap(),
            CircuitOp::Noise(ch, p, q) => {
                let targets = if ch == Channel::Depolarize2 { &q[..] } else { &q[..1] };
                t.apply_pauli_channel(ch, p, targets, rng).unwrap();
            }
            CircuitOp::Measure(q) => {
                rec |= (t.measure_z(q, rng).unwrap().outcome as usize) << k;
                k += 1;
            }
            CircuitOp::Reset(q) => t.reset_z(q, rng).unwrap(),
        }
    }
    rec
}

/// Random circuit on up to 6 qubits: Clifford gates, at most two noisy
/// channels, a few mid-circuit measurements and resets, and a final
/// measurement of every qubit.
pub fn random_circuit(rng: &mut ChaCha8Rng) -> RandomCircuit {
    let n = rng.gen_range(1..=6);
    let len = rng.gen_range(6..=24);
    let mut ops = Vec::new();
    let (mut channels, mut mids) = (0, 0);
    for _ in 0..len {
        let q = rng.gen_range(0..n);
        let roll: f64 = rng.gen();
        if roll < 0.12 && channels < 2 {
            channels += 1;
            let p = rng.gen_range(0.05..0.5);
            let ch = match rng.gen_range(0..3) {
                0 => Channel::FlipX,
                1 => Channel::Depolarize1,
                _ if n >= 2 => Channel::Depolarize2,
                _ => Channel::Depolarize1,
            };
            let mut t = q;
            while n >= 2 && t == q {
                t = rng.gen_range(0..n);
            }
            ops.push(CircuitOp::Noise(ch, p, [q, t]));
        } else if roll < 0.22 && mids < 3 {
            mids += 1;
            ops.push(CircuitOp::Measure(q));
        } else if roll < 0.27 {
            ops.push(CircuitOp::Reset(q));
        } else {
            let g = match rng.gen_range(0..7) {
                0 | 1 => Gate::H(q),
                2 => Gate::S(q),
                3 => Gate::X(q),
                4 => Gate::Y(q),
                5 => Gate::Z(q),
                _ if n >= 2 => {
                    let mut t = rng.gen_range(0..n);
                    while t == q {
                        t = rng.gen_range(0..n);
                    }
                    Gate::Cx(q, t)
                }
                _ => Gate::H(q),
            };
            ops.push(CircuitOp::Gate(g));
        }
    }
    for q in 0..n {
        ops.push(CircuitOp::Measure(q));
    }
    RandomCircuit {
        n,
        ops,
        measurements: mids + n,
    }
}
