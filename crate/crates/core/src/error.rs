use thiserror::Error;

use crate::molcore::{FingerprintError, GraphError, ParseError};
use crate::route::RouteError;
use crate::rxn::RxnError;

#[derive(Debug, Error)]
pub enum Error {
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
    #[error("smiles: {0}")]
    Parse(#[from] ParseError),
    #[error("graph: {0}")]
    Graph(#[from] GraphError),
    #[error("fingerprint: {0}")]
    Fingerprint(#[from] FingerprintError),
    #[error("reaction: {0}")]
    Rxn(#[from] RxnError),
    #[error("route: {0}")]
    Route(#[from] RouteError),
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("validation failed: {0}")]
    Validation(String),
    #[error("infeasible: {0}")]
    Infeasible(String),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
