//! Benchmark harness: BAL I/O, manifests, runs and performance profiles.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod bal;
pub mod bench;
pub mod manifest;
pub mod metrics;
