//! Criterion benchmarks for the hot paths: max-flow on a grid graph, GrabCut
//! on one scene, a single-record E-step and a short M-step.
//!
//! Run with `cargo bench -p affordem-bench`.
