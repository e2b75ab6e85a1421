use alloc::string::String;
use alloc::vec::Vec;
use core::fmt;

use crate::graph::{EdgeId, NodeId};

pub type Result<T, E = Error> = core::result::Result<T, E>;

#[derive(Debug, Clone, PartialEq)]
pub enum Error {
    /// Edges failing validation, with the reason.
    InvalidEdges { reason: &'static str, edges: Vec<EdgeId> },
    UnknownNode(NodeId),
    UnknownEdge(EdgeId),
    DuplicateNode(NodeId),
    DuplicateEdge(EdgeId),
    SelfLoopTarget(EdgeId),
    EmptyGraph,
    /// Synthetic fixture parameters that cannot produce a network.
    DegenerateSpec(&'static str),
    /// PCA request for more components than raw features.
    TooManyComponents { k: usize, features: usize },
    TooFewRows(usize),
    DimensionMismatch { expected: usize, found: usize },
    /// A pair endpoint carries no reduced feature vector.
    MissingFeatures(NodeId),
    NegativeVolume(EdgeId),
    MissingVolume(EdgeId),
    EmptyInput(&'static str),
    MissingRegions(Vec<EdgeId>),
    SingularSystem,
    ZeroMasses,
    NonFinite { what: &'static str, step: u64 },
    Invalid(String),
}

impl fmt::Display for Error {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Error::InvalidEdges { reason, edges } => {
                write!(f, "{reason} on edges {edges:?}")
            }
            Error::UnknownNode(n) => write!(f, "unknown node {n}"),
            Error::UnknownEdge(e) => write!(f, "unknown edge {e}"),
            Error::DuplicateNode(n) => write!(f, "duplicate node id {n}"),
            Error::DuplicateEdge(e) => write!(f, "duplicate edge id {e}"),
            Error::SelfLoopTarget(e) => write!(f, "target edge {e} is a self-loop"),
            Error::EmptyGraph => f.write_str("graph has no nodes"),
            Error::DegenerateSpec(why) => write!(f, "degenerate synthetic spec: {why}"),
            Error::TooManyComponents { k, features } => {
                write!(f, "requested {k} components but only {features} features")
            }
            Error::TooFewRows(n) => write!(f, "need at least 2 feature rows, got {n}"),
            Error::DimensionMismatch { expected, found } => {
                write!(f, "dimension mismatch: expected {expected}, found {found}")
            }
            Error::MissingFeatures(n) => write!(f, "node {n} has no feature vector"),
            Error::NegativeVolume(e) => write!(f, "edge {e} has a negative observed volume"),
            Error::MissingVolume(e) => write!(f, "edge {e} has no observed volume"),
            Error::EmptyInput(what) => write!(f, "empty input: {what}"),
            Error::MissingRegions(edges) => {
                write!(f, "spatial folds need region labels; missing on edges {edges:?}")
            }
            Error::SingularSystem => f.write_str(
                "normal equations are singular; use ridge regression (lambda > 0)",
            ),
            Error::ZeroMasses => f.write_str("all gravity masses are zero"),
            Error::NonFinite { what, step } => {
                write!(f, "non-finite {what} at training step {step}")
            }
            Error::Invalid(msg) => f.write_str(msg),
        }
    }
}

impl core::error::Error for Error {}
