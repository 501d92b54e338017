//! Minimum-weight perfect matching baselines.
//!
//! The detector graph is built by enumerating every single fault of the
//! circuit and recording which on-basis detectors it clicks. Decoding runs
//! Dijkstra between clicked detectors and an exact blossom matching on the
//! resulting complete graph, where every click may pair with the boundary.
//! The delayed-erasure variant lowers the weight of edges caused by faults on
//! qubits known to be lost at the end of the experiment.

pub mod blossom;
mod decode;
mod graph;

pub use decode::{
    clicked, erasure_decode, flip_bits, match_clicks, match_clicks_weighted, mwpm_decode, Decoding,
    PathTable,
};
pub use graph::{
    build_detector_graph, enumerate_faults, erasure_reweight, erasure_reweight_with,
    erasure_weights, quantize, DetectorGraph, GraphEdge, DEFAULT_ERASURE_WEIGHT, WEIGHT_SCALE,
};
