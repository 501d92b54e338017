//! Exhaustive matching oracle: Floyd-Warshall over the whole detector graph,
//! then a subset dynamic program over every way of pairing the clicks with
//! each other or with the boundary.

use qloss::matching::DetectorGraph;

const INF: i64 = i64::MAX / 4;

/// All-pairs shortest integer distances; index `num_detectors` is the
/// boundary.
pub fn all_pairs(graph: &DetectorGraph, weights: &[i64]) -> Vec<Vec<i64>> {
    let n = graph.num_detectors() + 1;
    let mut d = vec![vec![INF; n]; n];
    for (i, row) in d.iter_mut().enumerate() {
        row[i] = 0;
    }
    for (e, w) in graph.edges.iter().zip(weights) {
        let v = e.v.unwrap_or(n - 1);
        d[e.u][v] = d[e.u][v].min(*w);
        d[v][e.u] = d[v][e.u].min(*w);
    }
    for k in 0..n {
        for i in 0..n {
            if d[i][k] == INF {
                continue;
            }
            for j in 0..n {
                let via = d[i][k] + d[k][j];
                if via < d[i][j] {
                    d[i][j] = via;
                }
            }
        }
    }
    d
}

/// Minimum total weight of a perfect matching of `clicks` in which any
/// click may pair with the boundary instead. `None` when infeasible.
pub fn optimum(dist: &[Vec<i64>], boundary: usize, clicks: &[usize]) -> Option<i64> {
    let k = clicks.len();
    assert!(k <= 16, "exhaustive oracle is exponential in the click count");
    let full = (1usize << k) - 1;
    let mut best = vec![INF; 1 << k];
    best[0] = 0;
    for mask in 1..=full {
        let i = mask.trailing_zeros() as usize;
        let rest = mask & !(1 << i);
        let mut b = INF;
        let to_boundary = dist[clicks[i]][boundary];
        if to_boundary < INF && best[rest] < INF {
            b = b.min(to_boundary + best[rest]);
        }
        let mut others = rest;
        while others != 0 {
            let j = others.trailing_zeros() as usize;
            others &= others - 1;
            let w = dist[clicks[i]][clicks[j]];
            let r = rest & !(1 << j);
            if w < INF && best[r] < INF {
                b = b.min(w + best[r]);
            }
        }
        best[mask] = b;
    }
    (best[full] < INF).then_some(best[full])
}
