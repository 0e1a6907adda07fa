//! Criterion benchmarks for the feature pipeline; see `benches/`.
