use thiserror::Error;

use crate::netmodel::NodeId;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("configuration error: {0}")]
    Config(String),
    #[error("topology error: {0}")]
    Topology(String),
    #[error("unknown node {0}")]
    UnknownNode(NodeId),
    #[error("constraint violated: {0}")]
    Constraint(String),
    #[error("contract violated: {0}")]
    Contract(String),
    #[error("environment error: {0}")]
    Environment(String),
    #[error("episode lifecycle error: {0}")]
    Lifecycle(String),
    #[error("checkpoint error: {0}")]
    Checkpoint(String),
    #[error("startup error: {0}")]
    Startup(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
    #[error(transparent)]
    Csv(#[from] csv::Error),
}
