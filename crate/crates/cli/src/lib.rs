//! Library surface of the batch front-end, shared by the `pbr` binary and the
//! integration tests.

pub mod commands;
pub mod config;
pub mod iqfile;
pub mod manifest;
