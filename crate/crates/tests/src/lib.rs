//! Holds the workspace acceptance target (`tests/acceptance.rs`).
