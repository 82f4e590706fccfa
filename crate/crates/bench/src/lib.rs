//! Benchmarks live under `benches/`. Run them with `cargo bench -p bofex-bench`.
