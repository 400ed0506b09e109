//! Criterion benchmarks for the simulator and network hot paths live in `benches/`.
