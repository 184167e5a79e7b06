//! Driver plumbing for the inversion pipeline: manifest loading, the four
//! subcommands, and the on-disk formats every stage reads and writes.

pub mod commands;
pub mod error;
pub mod iofmt;
pub mod manifest;
