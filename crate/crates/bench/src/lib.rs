//! Criterion benchmarks for the lab's hot kernels live in `benches/`.
