//! Network data model, admittance matrix and Newton–Raphson AC power flow.

mod case;
mod cdf;
mod perturb;
mod powerflow;
pub(crate) mod sparse;
mod ybus;

use std::path::Path;

use thiserror::Error;

pub use case::{Branch, Bus, BusGeneration, BusKind, ElementRef, Generator, NetworkCase};
pub use cdf::parse_cdf;
pub use perturb::{apply_perturbation, Perturbation};
pub use powerflow::{evaluate_mismatch, solve_power_flow, solve_power_flow_from, PowerFlowOptions, PowerFlowSolution};
pub(crate) use powerflow::{injections, solve_with as powerflow_with};
pub(crate) use ybus::branch_admittance;
pub use ybus::{build_ybus, AdmittanceMatrix};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum GridError {
    #[error("syntax error at line {line}: {message}")]
    Syntax { line: usize, message: String },
    #[error("no slack bus")]
    NoSlack,
    #[error("multiple slack buses: {0:?}")]
    MultipleSlack(Vec<u32>),
    #[error("{element}: {reason}")]
    Invalid { element: String, reason: String },
    #[error("{element} references unknown bus {bus}")]
    UnknownBus { element: String, bus: u32 },
    #[error("disconnected bus {bus}: not reachable from the slack bus")]
    Disconnected { bus: u32 },
    #[error("islanding: outage of {cut:?} disconnects buses {buses:?}")]
    Islanding { cut: Vec<ElementRef>, buses: Vec<u32> },
    #[error("unknown element {0}")]
    UnknownElement(ElementRef),
    #[error("unknown bus id {0}")]
    UnknownBusId(u32),
    #[error("cannot take the slack generator out of service ({0})")]
    SlackOutage(ElementRef),
    #[error("singular Jacobian at iteration {iteration}")]
    SingularJacobian { iteration: usize },
    #[error("unsupported case format {0:?}")]
    UnknownFormat(String),
}

/// Input format accepted by [`parse_case`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CaseFormat {
    IeeeCdf,
    CaseJson,
}

impl CaseFormat {
    /// Guesses the format from a file extension (`.json` → CaseJSON, otherwise CDF).
    pub fn from_path(path: &Path) -> Self {
        match path.extension().and_then(|e| e.to_str()) {
            Some(ext) if ext.eq_ignore_ascii_case("json") => CaseFormat::CaseJson,
            _ => CaseFormat::IeeeCdf,
        }
    }
}

pub fn parse_case(text: &str, format: CaseFormat) -> Result<NetworkCase, GridError> {
    match format {
        CaseFormat::IeeeCdf => parse_cdf(text),
        CaseFormat::CaseJson => NetworkCase::from_json(text),
    }
}

/// The IEEE test systems shipped with the crate, in CDF.
pub mod bundled {
    use super::{parse_cdf, NetworkCase};

    pub const IEEE14_CDF: &str = include_str!("../../cases/ieee14.cdf");
    pub const IEEE30_CDF: &str = include_str!("../../cases/ieee30.cdf");
    pub const IEEE118_CDF: &str = include_str!("../../cases/ieee118.cdf");

    pub fn ieee14() -> NetworkCase {
        parse_cdf(IEEE14_CDF).expect("bundled IEEE 14 case parses")
    }

    pub fn ieee30() -> NetworkCase {
        parse_cdf(IEEE30_CDF).expect("bundled IEEE 30 case parses")
    }

    pub fn ieee118() -> NetworkCase {
        parse_cdf(IEEE118_CDF).expect("bundled IEEE 118 case parses")
    }

    /// Looks a bundled case up by name (`ieee14`, `ieee30`, `ieee118`).
    pub fn by_name(name: &str) -> Option<NetworkCase> {
        match name.to_ascii_lowercase().as_str() {
            "ieee14" | "case14" => Some(ieee14()),
            "ieee30" | "case30" => Some(ieee30()),
            "ieee118" | "case118" => Some(ieee118()),
            _ => None,
        }
    }
}
