//! Criterion benchmarks for the solvers, far field and reconstruction; run
//! with `cargo bench -p impedance-bench`.
