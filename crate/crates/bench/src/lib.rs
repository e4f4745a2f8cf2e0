//! Criterion benchmarks for the convolution kernels, label generation, the
//! metric suite and whole-model passes. Run with `cargo bench -p codlab-bench`.
