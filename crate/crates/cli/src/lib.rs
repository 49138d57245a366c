//! File formats and subcommands of the `lidarcam-calib` tool.

pub mod commands;
pub mod formats;
