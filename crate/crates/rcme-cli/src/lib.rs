//! Library side of the `rcme` command-line harness: the end-to-end
//! estimation pipeline (consensus engine + refinement + failure metric) and
//! the deterministic benchmark runner with CSV/JSON reporting.

pub mod bench;
pub mod pipeline;
