//! Simulated grid, voltage-security assessment, tree surrogates and the
//! dispatcher state machine.

pub mod control;
pub mod dispatch;
pub mod experiment;
pub mod grid;
pub mod learner;
pub mod scenario;
pub mod stability;
