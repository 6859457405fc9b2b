//! Criterion benchmarks for the simulator and learning kernels; see `benches/`.
