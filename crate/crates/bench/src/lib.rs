//! Criterion benchmarks for qkd-core live under `benches/`.
