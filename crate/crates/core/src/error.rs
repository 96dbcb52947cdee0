use std::path::PathBuf;

use thiserror::Error;

use crate::graph::NodeId;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    /// An edge or membership references a node outside the declared counts.
    #[error("{relation} edge ({src}, {dst}) out of range: {detail}")]
    EdgeOutOfRange {
        relation: &'static str,
        src: usize,
        dst: usize,
        detail: String,
    },

    #[error("group {0} has no members")]
    EmptyGroup(usize),

    #[error("{path}:{line}: {msg}")]
    Parse {
        path: PathBuf,
        line: usize,
        msg: String,
    },

    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    /// A caller passed arguments that violate an operation's preconditions
    /// (shape mismatch, wrong node kind, out-of-range scalar).
    #[error("invalid usage: {0}")]
    Usage(String),

    #[error("IRR undefined for group {0}: it has no group-item interactions")]
    IrrUndefinedGroup(usize),

    #[error("IRR undefined for dataset: no group has any item")]
    IrrUndefinedDataset,

    #[error("not enough candidate items for {group}: need {needed}, have {available}")]
    NotEnoughCandidates {
        group: NodeId,
        needed: usize,
        available: usize,
    },

    #[error("no group has at least two items; nothing can be held out")]
    NoEligibleGroups,

    #[error("infeasible generator spec: {0}")]
    InfeasibleSpec(String),

    #[error("non-finite value: {0}")]
    NonFinite(String),

    /// Rendered command-line parse error.
    #[error("{0}")]
    Cli(String),

    #[error("model file: {0}")]
    ModelFormat(String),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn usage(msg: impl Into<String>) -> Self {
        Error::Usage(msg.into())
    }
}
