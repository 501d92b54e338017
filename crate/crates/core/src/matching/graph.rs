use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;

use crate::circuit::{Fault, FrameEffect, MemoryCircuit, Op};
use crate::error::{Error, Result};
use crate::experiment::NoiseParams;
use crate::lattice::{Basis, CodeLayout};
use crate::stab_sim::Pauli;

/// Weight given to edges touched by an erased qubit.
pub const DEFAULT_ERASURE_WEIGHT: f64 = 1e-3;

/// Fixed-point scale used when matching on integer weights.
pub const WEIGHT_SCALE: f64 = 10_000.0;

const MIN_PROBABILITY: f64 = 1e-15;

#[derive(Clone, Debug, PartialEq)]
pub struct GraphEdge {
    pub u: usize,
    /// `None` is the boundary.
    pub v: Option<usize>,
    pub probability: f64,
    pub weight: f64,
    /// Bit `i` set iff the edge flips observable `i`.
    pub flips: u64,
    /// Data qubits whose single-qubit faults were merged into this edge.
    pub provenance: BTreeSet<usize>,
    pub fault_count: usize,
}

impl GraphEdge {
    pub fn int_weight(&self) -> i64 {
        quantize(self.weight)
    }
}

pub fn quantize(weight: f64) -> i64 {
    (weight * WEIGHT_SCALE).round() as i64
}

fn weight_of(p: f64) -> f64 {
    let p = p.clamp(MIN_PROBABILITY, 0.5);
    ((1.0 - p) / p).ln()
}

/// Matching graph over the on-basis detectors of one experiment shape.
///
/// Vertex ids are detector indices `slice * ancillas + ordinal`; the boundary
/// is vertex [`DetectorGraph::boundary`].
#[derive(Clone, Debug, PartialEq)]
pub struct DetectorGraph {
    pub d: usize,
    pub rounds: usize,
    pub basis: Basis,
    pub num_ancillas: usize,
    /// Ordinals of ancillas measuring the memory basis; only their detectors
    /// are vertices.
    pub on_basis: Vec<bool>,
    pub edges: Vec<GraphEdge>,
    adjacency: Vec<Vec<(usize, usize)>>,
}

impl DetectorGraph {
    pub fn num_detectors(&self) -> usize {
        (self.rounds + 1) * self.num_ancillas
    }

    pub fn boundary(&self) -> usize {
        self.num_detectors()
    }

    pub fn num_observables(&self) -> usize {
        self.d
    }

    /// `(neighbour, edge index)` pairs; the boundary has no outgoing list.
    pub fn neighbors(&self, v: usize) -> &[(usize, usize)] {
        &self.adjacency[v]
    }

    pub fn int_weights(&self) -> Vec<i64> {
        self.edges.iter().map(GraphEdge::int_weight).collect()
    }

    pub fn find_edge(&self, u: usize, v: Option<usize>) -> Option<&GraphEdge> {
        let key = edge_key(u, v);
        self.edges.iter().find(|e| edge_key(e.u, e.v) == key)
    }

    fn rebuild_adjacency(&mut self) {
        let n = self.num_detectors();
        let mut adj = vec![Vec::new(); n + 1];
        for (k, e) in self.edges.iter().enumerate() {
            let v = e.v.unwrap_or(n);
            adj[e.u].push((v, k));
            if v != n {
                adj[v].push((e.u, k));
            }
        }
        self.adjacency = adj;
    }

    /// Structured text: one line per vertex with edges, then one per edge.
    pub fn dump(&self) -> String {
        let mut s = String::new();
        writeln!(
            s,
            "graph d={} rounds={} basis={} detectors={} edges={}",
            self.d,
            self.rounds,
            self.basis,
            self.num_detectors(),
            self.edges.len()
        )
        .unwrap();
        for (k, e) in self.edges.iter().enumerate() {
            let v = e.v.map_or("B".to_string(), |v| v.to_string());
            let prov: Vec<String> = e.provenance.iter().map(|q| q.to_string()).collect();
            writeln!(
                s,
                "edge {k} u={} v={v} p={:.6e} w={:.6} flips={:0width$b} faults={} data=[{}]",
                e.u,
                e.probability,
                e.weight,
                e.flips,
                e.fault_count,
                prov.join(","),
                width = self.d
            )
            .unwrap();
        }
        s
    }
}

fn edge_key(u: usize, v: Option<usize>) -> (usize, usize) {
    match v {
        None => (u, usize::MAX),
        Some(v) => (u.min(v), u.max(v)),
    }
}

/// Detector clicks and observable flips of a frame effect.
pub(crate) fn syndrome_of(
    layout: &CodeLayout,
    circuit: &MemoryCircuit,
    effect: &FrameEffect,
) -> (Vec<usize>, u64) {
    let na = layout.num_ancillas();
    let t = circuit.rounds;
    let f = |r: usize, o: usize| effect.ancilla_flips[r * na + o];
    let mut clicks = Vec::new();
    for o in layout.ancillas_of(circuit.basis) {
        if f(0, o) {
            clicks.push(o);
        }
        for s in 1..t {
            if f(s, o) ^ f(s - 1, o) {
                clicks.push(s * na + o);
            }
        }
        let parity = layout
            .support(o)
            .iter()
            .fold(false, |acc, &q| acc ^ effect.final_flips[q]);
        if parity ^ f(t - 1, o) {
            clicks.push(t * na + o);
        }
    }
    clicks.sort_unstable();
    let mut flips = 0u64;
    for (i, obs) in layout.observable_supports(circuit.basis).iter().enumerate() {
        if obs
            .iter()
            .fold(false, |acc, &q| acc ^ effect.final_flips[q])
        {
            flips |= 1 << i;
        }
    }
    (clicks, flips)
}

fn xor_effect(a: &mut FrameEffect, b: &FrameEffect) {
    a.ancilla_flips
        .iter_mut()
        .zip(&b.ancilla_flips)
        .for_each(|(x, y)| *x ^= y);
    a.final_flips
        .iter_mut()
        .zip(&b.final_flips)
        .for_each(|(x, y)| *x ^= y);
}

/// Every single fault of the circuit: `(fault, probability)`.
pub fn enumerate_faults(circuit: &MemoryCircuit, noise: &NoiseParams) -> Vec<(Fault, f64)> {
    let mut out = Vec::new();
    for (i, op) in circuit.ops.iter().enumerate() {
        match *op {
            Op::Depol1(q) => {
                for p in Pauli::NON_IDENTITY {
                    out.push((
                        Fault {
                            op: i,
                            paulis: vec![(q, p)],
                        },
                        noise.p_pauli / 3.0,
                    ));
                }
            }
            Op::Depol2(a, b) => {
                for k in 1..16 {
                    let (pa, pb) = (Pauli::from_index(k / 4), Pauli::from_index(k % 4));
                    let paulis = [(a, pa), (b, pb)]
                        .into_iter()
                        .filter(|x| x.1 != Pauli::I)
                        .collect();
                    out.push((Fault { op: i, paulis }, noise.p_pauli / 15.0));
                }
            }
            Op::MeasFlip(q) => out.push((
                Fault {
                    op: i,
                    paulis: vec![(q, Pauli::X)],
                },
                noise.p_meas,
            )),
            _ => {}
        }
    }
    out
}

/// Builds the matching graph by enumerating single faults.
pub fn build_detector_graph(
    layout: &CodeLayout,
    noise: &NoiseParams,
    rounds: usize,
    basis: Basis,
) -> Result<DetectorGraph> {
    noise.validate()?;
    if rounds == 0 {
        return Err(Error::InvalidParameter(
            "at least one round is required".into(),
        ));
    }
    if layout.distance() > 64 {
        return Err(Error::InvalidParameter(
            "at most 64 observables are supported".into(),
        ));
    }
    let circuit = MemoryCircuit::build(layout, rounds, basis);
    let nd = layout.num_data();

    // Effects are linear in the Pauli, so propagate X and Z parts once per
    // location and combine.
    let mut cache: BTreeMap<(usize, usize, bool), FrameEffect> = BTreeMap::new();
    let mut basis_effect = |op: usize, q: usize, z: bool| -> FrameEffect {
        cache
            .entry((op, q, z))
            .or_insert_with(|| {
                let p = if z { Pauli::Z } else { Pauli::X };
                circuit.propagate(&Fault {
                    op,
                    paulis: vec![(q, p)],
                })
            })
            .clone()
    };

    let mut merged: BTreeMap<(usize, usize), GraphEdge> = BTreeMap::new();
    for (fault, p) in enumerate_faults(&circuit, noise) {
        let mut effect = FrameEffect {
            ancilla_flips: vec![false; rounds * layout.num_ancillas()],
            final_flips: vec![false; nd],
        };
        for &(q, pauli) in &fault.paulis {
            let (x, z) = pauli.bits();
            if x {
                xor_effect(&mut effect, &basis_effect(fault.op, q, false));
            }
            if z {
                xor_effect(&mut effect, &basis_effect(fault.op, q, true));
            }
        }
        let (clicks, flips) = syndrome_of(layout, &circuit, &effect);
        let (u, v) = match clicks.as_slice() {
            [] => continue,
            [u] => (*u, None),
            [u, v] => (*u, Some(*v)),
            _ => {
                return Err(Error::NonGraphlikeFault {
                    op: fault.op,
                    clicks: clicks.len(),
                })
            }
        };
        // Only faults acting on a single data qubit alone are attributed to it.
        let provenance: BTreeSet<usize> = match fault.paulis.as_slice() {
            [(q, _)] if *q < nd => BTreeSet::from([*q]),
            _ => BTreeSet::new(),
        };
        match merged.entry(edge_key(u, v)) {
            std::collections::btree_map::Entry::Vacant(slot) => {
                slot.insert(GraphEdge {
                    u,
                    v,
                    probability: p,
                    weight: 0.0,
                    flips,
                    provenance,
                    fault_count: 1,
                });
            }
            std::collections::btree_map::Entry::Occupied(mut slot) => {
                let e = slot.get_mut();
                if e.flips != flips {
                    return Err(Error::InconsistentEdge(format!(
                        "({u}, {v:?}) flips {:b} vs {flips:b} from op {}",
                        e.flips, fault.op
                    )));
                }
                e.probability = e.probability * (1.0 - p) + p * (1.0 - e.probability);
                e.provenance.extend(provenance);
                e.fault_count += 1;
            }
        }
    }
    let mut edges: Vec<GraphEdge> = merged.into_values().collect();
    for e in &mut edges {
        e.weight = weight_of(e.probability);
    }
    let mut g = DetectorGraph {
        d: layout.distance(),
        rounds,
        basis,
        num_ancillas: layout.num_ancillas(),
        on_basis: (0..layout.num_ancillas()).map(|o| layout.ancilla_basis(o) == basis).collect(),
        edges,
        adjacency: Vec::new(),
    };
    g.rebuild_adjacency();
    Ok(g)
}

/// Copy of `graph` where every edge with a lost qubit in its provenance gets
/// weight `epsilon`.
pub fn erasure_reweight_with(
    graph: &DetectorGraph,
    lost: &[usize],
    epsilon: f64,
) -> Result<DetectorGraph> {
    let nd = graph.d * graph.d;
    if let Some(&q) = lost.iter().find(|&&q| q >= nd) {
        return Err(Error::UnknownQubit(q));
    }
    if !(epsilon >= 0.0) {
        return Err(Error::InvalidParameter(format!("erasure weight {epsilon}")));
    }
    let mut g = graph.clone();
    if lost.is_empty() {
        return Ok(g);
    }
    for e in &mut g.edges {
        if lost.iter().any(|q| e.provenance.contains(q)) {
            e.weight = e.weight.min(epsilon);
        }
    }
    Ok(g)
}

/// Integer weights of [`erasure_reweight_with`] without copying the graph.
pub fn erasure_weights(graph: &DetectorGraph, lost: &[usize], epsilon: f64) -> Result<Vec<i64>> {
    let nd = graph.d * graph.d;
    if let Some(&q) = lost.iter().find(|&&q| q >= nd) {
        return Err(Error::UnknownQubit(q));
    }
    Ok(graph
        .edges
        .iter()
        .map(|e| {
            if lost.iter().any(|q| e.provenance.contains(q)) {
                quantize(e.weight.min(epsilon))
            } else {
                e.int_weight()
            }
        })
        .collect())
}

pub fn erasure_reweight(graph: &DetectorGraph, lost: &[usize]) -> Result<DetectorGraph> {
    erasure_reweight_with(graph, lost, DEFAULT_ERASURE_WEIGHT)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::lattice::build_layout;

    fn graph(d: usize, t: usize, basis: Basis) -> (CodeLayout, DetectorGraph) {
        let l = build_layout(d).unwrap();
        let g = build_detector_graph(&l, &NoiseParams::uniform(0.005).unwrap(), t, basis).unwrap();
        (l, g)
    }

    #[test]
    fn builds_for_both_bases() {
        for basis in [Basis::Z, Basis::X] {
            for d in [3, 5] {
                let (_, g) = graph(d, 3, basis);
                assert!(!g.edges.is_empty());
                assert!(g
                    .edges
                    .iter()
                    .all(|e| e.weight > 0.0 && e.probability < 0.5));
            }
        }
    }

    #[test]
    fn measurement_flip_is_a_time_edge() {
        let (l, g) = graph(3, 4, Basis::Z);
        let na = l.num_ancillas();
        let z = l.ancillas_of(Basis::Z)[1];
        let e = g
            .find_edge(2 * na + z, Some(3 * na + z))
            .expect("time edge");
        assert_eq!(e.flips, 0);
    }

    #[test]
    fn data_error_is_a_space_edge() {
        let (l, g) = graph(5, 4, Basis::Z);
        let na = l.num_ancillas();
        let q = l.data_at(5, 5).unwrap();
        let zs: Vec<usize> = l
            .data_neighbors(q)
            .iter()
            .map(|&a| a - l.num_data())
            .filter(|&o| l.ancilla_basis(o) == Basis::Z)
            .collect();
        assert_eq!(zs.len(), 2);
        let e = g
            .find_edge(2 * na + zs[0], Some(2 * na + zs[1]))
            .expect("space edge");
        assert!(e.provenance.contains(&q));
        let row = l
            .observable_supports(Basis::Z)
            .iter()
            .position(|o| o.contains(&q))
            .unwrap();
        assert_eq!(e.flips, 1 << row);
    }

    /// Fewest edges in a boundary-to-boundary path flipping observable 0.
    fn graph_distance(g: &DetectorGraph) -> usize {
        use std::collections::VecDeque;
        let b = g.boundary();
        let mut seen = vec![[false; 2]; b + 1];
        let mut queue = VecDeque::new();
        let mut best = usize::MAX;
        for (v, e) in g.edges.iter().filter(|e| e.v.is_none()).map(|e| (e.u, e)) {
            let parity = (e.flips & 1) as usize;
            if !seen[v][parity] {
                seen[v][parity] = true;
                queue.push_back((v, parity, 1));
            }
        }
        while let Some((u, parity, len)) = queue.pop_front() {
            for &(v, e) in g.neighbors(u) {
                let np = parity ^ (g.edges[e].flips & 1) as usize;
                if v == b {
                    if np == 1 {
                        best = best.min(len + 1);
                    }
                } else if !seen[v][np] {
                    seen[v][np] = true;
                    queue.push_back((v, np, len + 1));
                }
            }
        }
        best
    }

    #[test]
    fn circuit_distance_equals_code_distance() {
        for d in [3, 5] {
            for basis in [Basis::Z, Basis::X] {
                let (_, g) = graph(d, 3, basis);
                assert_eq!(graph_distance(&g), d, "d={d} {basis}");
            }
        }
    }

    #[test]
    fn reweighting() {
        let (_, g) = graph(3, 3, Basis::Z);
        assert_eq!(erasure_reweight(&g, &[]).unwrap(), g);
        let r = erasure_reweight(&g, &[4]).unwrap();
        let mut touched = 0;
        for (a, b) in g.edges.iter().zip(&r.edges) {
            assert!(b.weight <= a.weight);
            if a.provenance.contains(&4) {
                assert_eq!(b.weight, DEFAULT_ERASURE_WEIGHT);
                touched += 1;
            } else {
                assert_eq!(a.weight, b.weight);
            }
        }
        assert!(touched > 0);
        assert!(matches!(
            erasure_reweight(&g, &[9]),
            Err(Error::UnknownQubit(9))
        ));
    }

    #[test]
    fn dump_lists_every_edge() {
        let (_, g) = graph(3, 2, Basis::X);
        let text = g.dump();
        assert_eq!(text.lines().count(), g.edges.len() + 1);
        assert!(text.starts_with("graph d=3 rounds=2 basis=X"));
    }
}
