use thiserror::Error;

use crate::config::Violation;
use crate::graph::{EdgeId, NodeId};

fn join(violations: &[Violation]) -> String {
    violations
        .iter()
        .map(|v| v.to_string())
        .collect::<Vec<_>>()
        .join("; ")
}

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("unknown preset `{0}` (expected one of threshnet79, threshnet95, densenet121)")]
    UnknownPreset(String),
    #[error("syntax error at line {line}, column {column}: {message}")]
    Syntax {
        line: usize,
        column: usize,
        message: String,
    },
    #[error("schema violation: {0}")]
    Schema(String),
    #[error("invalid network description: {}", join(.0))]
    Invalid(Vec<Violation>),
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum GraphError {
    #[error("layer index must be at least 1, got {0}")]
    LayerIndex(usize),
    #[error("invalid network description: {}", join(.0))]
    Invalid(Vec<Violation>),
    #[error("malformed graph: {0}")]
    Malformed(String),
    #[error("graph contains a cycle")]
    Cycle,
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum ShapeError {
    #[error("shape underflow{}: spatial size {size} with kernel {kernel}, stride {stride}, padding {padding}", node.map(|n| format!(" at node {n}")).unwrap_or_default())]
    Underflow {
        node: Option<NodeId>,
        size: u32,
        kernel: u32,
        stride: u32,
        padding: u32,
    },
    #[error("concat node {node}: edge {first} is {first_hw:?} but edge {second} is {second_hw:?}")]
    ConcatMismatch {
        node: NodeId,
        first: EdgeId,
        second: EdgeId,
        first_hw: (u32, u32),
        second_hw: (u32, u32),
    },
    #[error("shape underflow: input size {size} is below the network's total downsampling factor {min}")]
    TooSmall { size: u32, min: u32 },
    #[error("graph input must have 3 channels, got {0}")]
    InputChannels(u32),
    #[error("node {node} expects {expected} input(s), found {found}")]
    Arity {
        node: NodeId,
        expected: usize,
        found: usize,
    },
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum ExecError {
    #[error("input shape {found} does not match graph input {expected}")]
    InputShape { expected: String, found: String },
    #[error("node {node}: tensor produced by node {value} was read after being freed")]
    UseAfterFree { node: NodeId, value: NodeId },
    #[error("node {node}: tensor produced by node {value} is missing")]
    Missing { node: NodeId, value: NodeId },
    #[error("no weights for node {0}")]
    MissingWeights(NodeId),
    #[error(transparent)]
    Shape(#[from] ShapeError),
}

/// Top-level error for the analysis pipeline.
#[derive(Debug, Error)]
pub enum Error {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error(transparent)]
    Graph(#[from] GraphError),
    #[error(transparent)]
    Shape(#[from] ShapeError),
    #[error(transparent)]
    Exec(#[from] ExecError),
    #[error("{path}: {source}")]
    Io {
        path: String,
        source: std::io::Error,
    },
    #[error("invariant violated: {0}")]
    Invariant(String),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
