//! Criterion benchmarks for the correlation kernel, group convolutions, the
//! place heads and a full training step. See `benches/kernels.rs`.
