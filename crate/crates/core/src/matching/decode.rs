use std::cmp::Reverse;
use std::collections::BinaryHeap;

use super::blossom::max_weight_matching;
use super::graph::{erasure_weights, DetectorGraph, DEFAULT_ERASURE_WEIGHT};
use crate::bits::BitMatrix;
use crate::error::{Error, Result};

/// Shortest paths between clicked detectors and to the boundary, on integer
/// edge weights.
#[derive(Clone, Debug)]
pub struct PathTable {
    pub clicks: Vec<usize>,
    /// `dist[i][j]` for clicks `i, j`; column `k` is the boundary.
    pub dist: Vec<Vec<Option<i64>>>,
    /// Observable flips accumulated along each shortest path.
    pub flips: Vec<Vec<u64>>,
}

impl PathTable {
    pub fn new(graph: &DetectorGraph, clicks: &[usize]) -> Self {
        Self::with_weights(graph, &graph.int_weights(), clicks)
    }

    /// Same as [`PathTable::new`] with per-edge integer weights overridden.
    pub fn with_weights(graph: &DetectorGraph, weights: &[i64], clicks: &[usize]) -> Self {
        let k = clicks.len();
        let n = graph.num_detectors() + 1;
        let boundary = graph.boundary();
        let mut slot = vec![usize::MAX; n];
        for (i, &c) in clicks.iter().enumerate() {
            slot[c] = i;
        }
        slot[boundary] = k;
        let mut dist = vec![vec![None; k + 1]; k];
        let mut flips = vec![vec![0u64; k + 1]; k];
        let mut best = vec![i64::MAX; n];
        let mut mask = vec![0u64; n];
        let mut done = vec![false; n];
        let mut touched = Vec::new();
        for (i, &src) in clicks.iter().enumerate() {
            for &v in &touched {
                best[v] = i64::MAX;
                done[v] = false;
            }
            touched.clear();
            let mut heap = BinaryHeap::new();
            best[src] = 0;
            mask[src] = 0;
            touched.push(src);
            heap.push(Reverse((0i64, src)));
            let mut remaining = k + 1;
            while let Some(Reverse((du, u))) = heap.pop() {
                if done[u] {
                    continue;
                }
                done[u] = true;
                if slot[u] != usize::MAX {
                    dist[i][slot[u]] = Some(du);
                    flips[i][slot[u]] = mask[u];
                    remaining -= 1;
                    if remaining == 0 {
                        break;
                    }
                }
                if u == boundary {
                    continue;
                }
                for &(v, e) in graph.neighbors(u) {
                    let nd = du + weights[e];
                    if nd < best[v] {
                        if best[v] == i64::MAX {
                            touched.push(v);
                        }
                        best[v] = nd;
                        mask[v] = mask[u] ^ graph.edges[e].flips;
                        heap.push(Reverse((nd, v)));
                    }
                }
            }
        }
        PathTable {
            clicks: clicks.to_vec(),
            dist,
            flips,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Decoding {
    /// Predicted observable flips, bit `i` for observable `i`.
    pub flips: u64,
    /// Sum of integer path weights of the matching.
    pub weight: i64,
    /// Matched pairs as click indices; `None` is the boundary.
    pub pairs: Vec<(usize, Option<usize>)>,
}

/// Minimum-weight perfect matching of `clicks`, each of which may instead be
/// matched to the boundary.
pub fn match_clicks(graph: &DetectorGraph, clicks: &[usize]) -> Result<Decoding> {
    match_clicks_weighted(graph, &graph.int_weights(), clicks)
}

/// [`match_clicks`] with per-edge integer weights overridden.
pub fn match_clicks_weighted(
    graph: &DetectorGraph,
    weights: &[i64],
    clicks: &[usize],
) -> Result<Decoding> {
    if weights.len() != graph.edges.len() {
        return Err(Error::ShapeMismatch(format!(
            "{} weights for {} edges",
            weights.len(),
            graph.edges.len()
        )));
    }
    let k = clicks.len();
    if k == 0 {
        return Ok(Decoding {
            flips: 0,
            weight: 0,
            pairs: Vec::new(),
        });
    }
    if let Some(&c) = clicks.iter().find(|&&c| c >= graph.num_detectors()) {
        return Err(Error::ShapeMismatch(format!(
            "detector {c} outside the graph"
        )));
    }
    let table = PathTable::with_weights(graph, weights, clicks);
    // Vertices 0..k are clicks, k..2k their boundary copies.
    let mut edges = Vec::new();
    for i in 0..k {
        for j in i + 1..k {
            if let Some(w) = table.dist[i][j] {
                edges.push((i, j, w));
            }
        }
        if let Some(w) = table.dist[i][k] {
            edges.push((i, k + i, w));
        }
    }
    let top = edges.iter().map(|e| e.2).max().unwrap_or(0) + 1;
    let mut weighted: Vec<(usize, usize, i64)> =
        edges.iter().map(|&(i, j, w)| (i, j, top - w)).collect();
    for i in 0..k {
        for j in i + 1..k {
            weighted.push((k + i, k + j, top));
        }
    }
    let mate = max_weight_matching(2 * k, &weighted, true);
    let mut out = Decoding {
        flips: 0,
        weight: 0,
        pairs: Vec::new(),
    };
    for i in 0..k {
        match mate[i] {
            Some(j) if j < k => {
                if i < j {
                    out.flips ^= table.flips[i][j];
                    out.weight += table.dist[i][j].unwrap();
                    out.pairs.push((i, Some(j)));
                }
            }
            Some(_) => {
                out.flips ^= table.flips[i][k];
                out.weight += table.dist[i][k].unwrap();
                out.pairs.push((i, None));
            }
            None => {
                return Err(Error::Numerical(format!(
                    "click {} could not be matched",
                    clicks[i]
                )))
            }
        }
    }
    Ok(out)
}

/// Clicked on-basis detector ids of a detector volume.
pub fn clicked(graph: &DetectorGraph, detectors: &BitMatrix) -> Result<Vec<usize>> {
    if detectors.rows() != graph.rounds + 1 || detectors.cols() != graph.num_ancillas {
        return Err(Error::ShapeMismatch(format!(
            "detectors are {}x{}, graph expects {}x{}",
            detectors.rows(),
            detectors.cols(),
            graph.rounds + 1,
            graph.num_ancillas
        )));
    }
    Ok(detectors
        .ones()
        .filter(|&(_, o)| graph.on_basis[o])
        .map(|(s, o)| s * graph.num_ancillas + o)
        .collect())
}

/// Predicted flip of each observable.
pub fn mwpm_decode(graph: &DetectorGraph, detectors: &BitMatrix) -> Result<Vec<bool>> {
    let clicks = clicked(graph, detectors)?;
    let dec = match_clicks(graph, &clicks)?;
    Ok(flip_bits(dec.flips, graph.num_observables()))
}

/// Delayed-erasure decoding: edges touching `lost` data qubits are cheap.
pub fn erasure_decode(
    graph: &DetectorGraph,
    detectors: &BitMatrix,
    lost: &[usize],
) -> Result<Vec<bool>> {
    let clicks = clicked(graph, detectors)?;
    let weights = erasure_weights(graph, lost, DEFAULT_ERASURE_WEIGHT)?;
    let dec = match_clicks_weighted(graph, &weights, &clicks)?;
    Ok(flip_bits(dec.flips, graph.num_observables()))
}

pub fn flip_bits(mask: u64, n: usize) -> Vec<bool> {
    (0..n).map(|i| mask >> i & 1 == 1).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::experiment::NoiseParams;
    use crate::lattice::{build_layout, Basis};
    use crate::matching::build_detector_graph;

    fn g() -> DetectorGraph {
        let l = build_layout(3).unwrap();
        build_detector_graph(&l, &NoiseParams::uniform(0.01).unwrap(), 3, Basis::Z).unwrap()
    }

    #[test]
    fn no_clicks_no_flips() {
        let g = g();
        let det = BitMatrix::zeros(4, 8);
        assert_eq!(mwpm_decode(&g, &det).unwrap(), vec![false; 3]);
    }

    #[test]
    fn single_edge_pair_uses_that_edge() {
        let g = g();
        let e = g
            .edges
            .iter()
            .find(|e| e.v.is_some() && e.flips != 0)
            .unwrap();
        let dec = match_clicks(&g, &[e.u, e.v.unwrap()]).unwrap();
        assert_eq!(dec.flips, e.flips);
        assert_eq!(dec.weight, e.int_weight());
    }

    #[test]
    fn odd_clicks_use_boundary() {
        let g = g();
        let e = g.edges.iter().find(|e| e.v.is_none()).unwrap();
        let dec = match_clicks(&g, &[e.u]).unwrap();
        assert_eq!(dec.pairs, vec![(0, None)]);
        assert_eq!(dec.flips, e.flips);
    }

    #[test]
    fn shape_checked() {
        let g = g();
        assert!(mwpm_decode(&g, &BitMatrix::zeros(3, 8)).is_err());
    }
}
