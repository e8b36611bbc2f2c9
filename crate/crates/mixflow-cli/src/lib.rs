//! Library side of the `mixflow` command-line tool: scenario files, the tiny
//! expression language for initial data, output writers and the subcommand
//! implementations.

pub mod commands;
pub mod expr;
pub mod output;
pub mod scenario;
