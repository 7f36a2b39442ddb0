//! Service and command-line front end of the dispatcher.

pub mod api;
pub mod cli;
