//! Command implementations behind the `neonfilm` binary and the live
//! session gateway.

pub mod commands;
pub mod server;
