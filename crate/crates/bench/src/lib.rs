//! Criterion benchmarks for the simulator, adjoint, decoder and analysis kernels; see `benches/`.
