//! Criterion benchmarks for the tensor engine and the model; see `benches/`.
