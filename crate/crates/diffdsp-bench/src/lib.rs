//! Criterion micro-benchmarks for the `diffdsp` kernels and model graphs.
//!
//! The package holds no library code; see `benches/filters.rs` for the raw
//! kernel timings (forward and backward passes of the filtering primitives)
//! and `benches/models.rs` for whole training steps of the compressor, phaser,
//! and synthesiser in both time-domain and frequency-sampling forms. The
//! `diffdsp bench` CLI subcommand reports the headline step-time ratios; these
//! benches break the cost down by kernel.
