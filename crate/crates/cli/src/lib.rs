//! Library surface of the CLI: the oracle check suite and the JSON
//! summary formats, shared by the binary and the integration tests.

pub mod checks;
pub mod summary;
