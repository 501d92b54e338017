//! Rotated surface-code geometry.
//!
//! Data qubits sit at odd-odd lattice coordinates `(x, y)` with `x, y` in
//! `1..2d`, ancillas at even-even coordinates. `y` grows downwards, so "north"
//! is smaller `y`. X-type boundary stabilizers run along the top and bottom
//! edges, Z-type ones along the left and right edges. With this orientation the
//! Z logical observables are rows of data qubits and the X observables are
//! columns.
//!
//! Node indices: data qubits first (row-major), then ancillas ordered by
//! `(y, x)`. The ancilla *ordinal* is `index - d*d` and is the column index of
//! every per-ancilla volume (outcomes, detectors).

use std::collections::VecDeque;
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Memory-experiment basis. Also used for the Pauli type of an ancilla.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Basis {
    Z,
    X,
}

impl Basis {
    pub fn code(self) -> u8 {
        match self {
            Basis::Z => 0,
            Basis::X => 1,
        }
    }

    pub fn from_code(code: u8) -> Option<Basis> {
        match code {
            0 => Some(Basis::Z),
            1 => Some(Basis::X),
            _ => None,
        }
    }

    pub fn other(self) -> Basis {
        match self {
            Basis::Z => Basis::X,
            Basis::X => Basis::Z,
        }
    }
}

impl std::str::FromStr for Basis {
    type Err = Error;

    fn from_str(s: &str) -> Result<Basis> {
        match s.trim().to_ascii_uppercase().as_str() {
            "Z" => Ok(Basis::Z),
            "X" => Ok(Basis::X),
            other => Err(Error::Config(format!(
                "unknown basis {other:?} (expected X or Z)"
            ))),
        }
    }
}

impl std::fmt::Display for Basis {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Basis::Z => "Z",
            Basis::X => "X",
        })
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum NodeKind {
    Data,
    AncillaX,
    AncillaZ,
}

impl NodeKind {
    pub fn is_ancilla(self) -> bool {
        !matches!(self, NodeKind::Data)
    }

    /// Stabilizer type of an ancilla, `None` for data.
    pub fn ancilla_basis(self) -> Option<Basis> {
        match self {
            NodeKind::Data => None,
            NodeKind::AncillaX => Some(Basis::X),
            NodeKind::AncillaZ => Some(Basis::Z),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct NodeId {
    pub index: usize,
    pub kind: NodeKind,
    pub coord: (i32, i32),
}

/// Diagonal direction from an ancilla to one of its data neighbours.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Diagonal {
    NW,
    NE,
    SW,
    SE,
}

impl Diagonal {
    fn offset(self) -> (i32, i32) {
        match self {
            Diagonal::NW => (-1, -1),
            Diagonal::NE => (1, -1),
            Diagonal::SW => (-1, 1),
            Diagonal::SE => (1, 1),
        }
    }
}

/// Interaction order of X ancillas ("Z" shape).
pub const X_ORDER: [Diagonal; 4] = [Diagonal::NW, Diagonal::NE, Diagonal::SW, Diagonal::SE];
/// Interaction order of Z ancillas ("N" shape).
pub const Z_ORDER: [Diagonal; 4] = [Diagonal::NW, Diagonal::SW, Diagonal::NE, Diagonal::SE];

#[derive(Clone, Debug)]
pub struct CodeLayout {
    d: usize,
    nodes: Vec<NodeId>,
    /// `(ancilla index, data index)` pairs.
    tanner_edges: Vec<(usize, usize)>,
    /// Four CX layers of `(ancilla index, data index)` pairs.
    schedule: [Vec<(usize, usize)>; 4],
    observables_z: Vec<Vec<usize>>,
    observables_x: Vec<Vec<usize>>,
    /// Data support of every ancilla, by ancilla ordinal.
    supports: Vec<Vec<usize>>,
    /// Ancilla indices adjacent to every data qubit.
    data_neighbors: Vec<Vec<usize>>,
}

fn ancilla_kind(ax: i32, ay: i32) -> NodeKind {
    if ((ax + ay) / 2) % 2 == 1 {
        NodeKind::AncillaX
    } else {
        NodeKind::AncillaZ
    }
}

/// Builds the distance-`d` rotated surface code.
pub fn build_layout(d: usize) -> Result<CodeLayout> {
    if d < 3 || d % 2 == 0 {
        return Err(Error::InvalidDistance(d));
    }
    let di = d as i32;
    let max = 2 * di;
    let mut nodes = Vec::with_capacity(2 * d * d - 1);
    for j in 0..di {
        for i in 0..di {
            nodes.push(NodeId {
                index: nodes.len(),
                kind: NodeKind::Data,
                coord: (2 * i + 1, 2 * j + 1),
            });
        }
    }
    for ay in (0..=max).step_by(2) {
        for ax in (0..=max).step_by(2) {
            let kind = ancilla_kind(ax, ay);
            let x_inner = (2..=max - 2).contains(&ax);
            let y_inner = (2..=max - 2).contains(&ay);
            let keep = match (x_inner, y_inner) {
                (true, true) => true,
                (true, false) => kind == NodeKind::AncillaX,
                (false, true) => kind == NodeKind::AncillaZ,
                (false, false) => false,
            };
            if keep {
                nodes.push(NodeId {
                    index: nodes.len(),
                    kind,
                    coord: (ax, ay),
                });
            }
        }
    }

    let data_at = |x: i32, y: i32| -> Option<usize> {
        if x < 1 || y < 1 || x > max - 1 || y > max - 1 {
            return None;
        }
        Some(((y - 1) / 2 * di + (x - 1) / 2) as usize)
    };

    let n_data = d * d;
    let mut tanner_edges = Vec::new();
    let mut schedule: [Vec<(usize, usize)>; 4] = Default::default();
    let mut supports = Vec::with_capacity(n_data - 1);
    let mut data_neighbors = vec![Vec::new(); n_data];
    for node in &nodes[n_data..] {
        let order = match node.kind {
            NodeKind::AncillaX => &X_ORDER,
            _ => &Z_ORDER,
        };
        let mut support = Vec::new();
        for (layer, dir) in order.iter().enumerate() {
            let (dx, dy) = dir.offset();
            if let Some(q) = data_at(node.coord.0 + dx, node.coord.1 + dy) {
                tanner_edges.push((node.index, q));
                schedule[layer].push((node.index, q));
                support.push(q);
                data_neighbors[q].push(node.index);
            }
        }
        support.sort_unstable();
        supports.push(support);
    }
    tanner_edges.sort_unstable();

    let observables_z = (0..d)
        .map(|row| (0..d).map(|col| row * d + col).collect())
        .collect();
    let observables_x = (0..d)
        .map(|col| (0..d).map(|row| row * d + col).collect())
        .collect();

    Ok(CodeLayout {
        d,
        nodes,
        tanner_edges,
        schedule,
        observables_z,
        observables_x,
        supports,
        data_neighbors,
    })
}

impl CodeLayout {
    pub fn distance(&self) -> usize {
        self.d
    }

    pub fn nodes(&self) -> &[NodeId] {
        &self.nodes
    }

    pub fn num_nodes(&self) -> usize {
        self.nodes.len()
    }

    pub fn num_data(&self) -> usize {
        self.d * self.d
    }

    pub fn num_ancillas(&self) -> usize {
        self.nodes.len() - self.num_data()
    }

    pub fn tanner_edges(&self) -> &[(usize, usize)] {
        &self.tanner_edges
    }

    pub fn schedule(&self) -> &[Vec<(usize, usize)>; 4] {
        &self.schedule
    }

    /// Node index of the ancilla with the given ordinal.
    pub fn ancilla_index(&self, ordinal: usize) -> usize {
        self.num_data() + ordinal
    }

    pub fn ancilla_ordinal(&self, index: usize) -> Option<usize> {
        index
            .checked_sub(self.num_data())
            .filter(|&o| o < self.num_ancillas())
    }

    pub fn ancilla_basis(&self, ordinal: usize) -> Basis {
        self.nodes[self.ancilla_index(ordinal)]
            .kind
            .ancilla_basis()
            .expect("ancilla ordinal maps to an ancilla node")
    }

    /// Ancilla ordinals whose stabilizer type equals `basis`.
    pub fn ancillas_of(&self, basis: Basis) -> Vec<usize> {
        (0..self.num_ancillas())
            .filter(|&o| self.ancilla_basis(o) == basis)
            .collect()
    }

    /// Sorted data support of the stabilizer measured by ancilla `ordinal`.
    pub fn support(&self, ordinal: usize) -> &[usize] {
        &self.supports[ordinal]
    }

    /// Ancilla node indices whose stabilizers contain data qubit `q`.
    pub fn data_neighbors(&self, q: usize) -> &[usize] {
        &self.data_neighbors[q]
    }

    /// Data qubits with all four diagonal ancillas present.
    pub fn is_bulk_data(&self, q: usize) -> bool {
        q < self.num_data() && self.data_neighbors[q].len() == 4
    }

    /// Index of the data qubit at lattice position `(x, y)`, if any.
    pub fn data_at(&self, x: i32, y: i32) -> Option<usize> {
        let max = 2 * self.d as i32;
        if x < 1 || y < 1 || x > max - 1 || y > max - 1 || x % 2 == 0 || y % 2 == 0 {
            return None;
        }
        Some(((y - 1) / 2 * self.d as i32 + (x - 1) / 2) as usize)
    }

    /// Ancilla ordinal at lattice position `(x, y)`, if any.
    pub fn ancilla_at(&self, x: i32, y: i32) -> Option<usize> {
        self.nodes[self.num_data()..]
            .iter()
            .position(|n| n.coord == (x, y))
    }

    pub fn observable_supports(&self, basis: Basis) -> &[Vec<usize>] {
        match basis {
            Basis::Z => &self.observables_z,
            Basis::X => &self.observables_x,
        }
    }

    /// Flat detector index of `(ancilla ordinal, slice)`; slices are zero-based
    /// and run over `0..=rounds`.
    pub fn detector_index(&self, ordinal: usize, slice: usize) -> usize {
        slice * self.num_ancillas() + ordinal
    }

    pub fn num_detectors(&self, rounds: usize) -> usize {
        (rounds + 1) * self.num_ancillas()
    }

    /// Adjacency lists of the Tanner graph over all node indices.
    pub fn adjacency(&self) -> Vec<Vec<usize>> {
        let mut adj = vec![Vec::new(); self.num_nodes()];
        for &(a, q) in &self.tanner_edges {
            adj[a].push(q);
            adj[q].push(a);
        }
        for list in &mut adj {
            list.sort_unstable();
        }
        adj
    }

    /// Structured-text dump used for golden-file comparisons.
    pub fn dump(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "layout rotated_surface_code d={}", self.d);
        for n in &self.nodes {
            let kind = match n.kind {
                NodeKind::Data => "data",
                NodeKind::AncillaX => "ancilla_x",
                NodeKind::AncillaZ => "ancilla_z",
            };
            let _ = writeln!(out, "node {} {} {} {}", n.index, kind, n.coord.0, n.coord.1);
        }
        for &(a, q) in &self.tanner_edges {
            let _ = writeln!(out, "edge {a} {q}");
        }
        for (i, layer) in self.schedule.iter().enumerate() {
            let pairs: Vec<String> = layer.iter().map(|(a, q)| format!("{a}-{q}")).collect();
            let _ = writeln!(out, "layer {} {}", i, pairs.join(" "));
        }
        for basis in [Basis::Z, Basis::X] {
            for (i, obs) in self.observable_supports(basis).iter().enumerate() {
                let qs: Vec<String> = obs.iter().map(|q| q.to_string()).collect();
                let _ = writeln!(out, "observable {} {} {}", basis, i, qs.join(" "));
            }
        }
        out
    }
}

/// Shortest-path hop counts on the Tanner graph, clipped at `cap`.
#[derive(Clone, Debug, PartialEq)]
pub struct DistanceMatrix {
    n: usize,
    cap: u16,
    dist: Vec<u16>,
}

impl DistanceMatrix {
    /// Builds a matrix directly from hop counts (entries are clipped at `cap`).
    pub fn from_raw(n: usize, cap: u16, dist: Vec<u16>) -> Result<Self> {
        if dist.len() != n * n {
            return Err(Error::ShapeMismatch(format!(
                "distance matrix needs {} entries, got {}",
                n * n,
                dist.len()
            )));
        }
        let dist = dist.into_iter().map(|v| v.min(cap)).collect();
        Ok(DistanceMatrix { n, cap, dist })
    }

    pub fn len(&self) -> usize {
        self.n
    }

    pub fn is_empty(&self) -> bool {
        self.n == 0
    }

    pub fn cap(&self) -> u16 {
        self.cap
    }

    pub fn get(&self, u: usize, v: usize) -> u16 {
        self.dist[u * self.n + v]
    }
}

pub fn shortest_distances(layout: &CodeLayout, cap: u16) -> DistanceMatrix {
    let adj = layout.adjacency();
    let n = adj.len();
    let mut dist = vec![cap; n * n];
    let mut queue = VecDeque::new();
    for src in 0..n {
        let row = &mut dist[src * n..(src + 1) * n];
        let mut seen = vec![false; n];
        seen[src] = true;
        row[src] = 0;
        queue.clear();
        queue.push_back((src, 0u32));
        while let Some((u, du)) = queue.pop_front() {
            for &v in &adj[u] {
                if !seen[v] {
                    seen[v] = true;
                    row[v] = (du + 1).min(cap as u32) as u16;
                    queue.push_back((v, du + 1));
                }
            }
        }
    }
    DistanceMatrix { n, cap, dist }
}
