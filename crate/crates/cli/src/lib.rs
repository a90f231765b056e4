//! Command-line front end: configuration, CSV/JSON I/O and the
//! `simulate`, `identify`, `select`, `sindy` and `report` commands.

pub mod commands;
pub mod config;
pub mod io;
