//! Benchmarks of the nodal-core pipeline stages live in `benches/`.
