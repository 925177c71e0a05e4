use thiserror::Error;

use crate::graph::Diagnostic;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum GraphError {
    #[error("parse error at line {line}, column {column}: {message}")]
    Parse {
        line: usize,
        column: usize,
        message: String,
    },
    #[error("unknown mode `{0}`")]
    UnknownMode(String),
    #[error("parameter `{param}` of {actor} has no value in mode {mode}")]
    UnboundParameter {
        actor: String,
        mode: String,
        param: String,
    },
    #[error("`{param}` of {actor} binds to negative value {value} in mode {mode}")]
    NegativeValue {
        actor: String,
        mode: String,
        param: String,
        value: i64,
    },
    #[error("graph is invalid ({} diagnostics)", .0.len())]
    Invalid(Vec<Diagnostic>),
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum AnalysisError {
    #[error(transparent)]
    Graph(#[from] GraphError),
    #[error("mode {mode} is inconsistent: balance equation fails on edge {edge}")]
    Inconsistent { mode: String, edge: String },
    #[error("mode {mode} deadlocks; stuck actors: {}", .stuck.join(", "))]
    Deadlock { mode: String, stuck: Vec<String> },
    #[error("mode {mode}: {message}")]
    UnsupportedStructure { mode: String, message: String },
    #[error("mode {mode}: actor {actor} is active but has no positive WCET")]
    MissingWcet { mode: String, actor: String },
    #[error("mode {mode}: actor {actor} is not scheduled")]
    UnknownActor { mode: String, actor: String },
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum TransitionError {
    #[error("mode change request at {mcr} precedes the mode start at {start}")]
    McrBeforeStart { start: u64, mcr: u64 },
    #[error("mode {mode}: actor {actor} starts at {start}, after the sink at {sink}")]
    SinkNotLast {
        mode: String,
        actor: String,
        start: u64,
        sink: u64,
    },
    #[error("invalid allocation: {}", .0.join("; "))]
    InvalidAllocation(Vec<String>),
    #[error("{pe} is overloaded in mode {mode}: utilization {utilization} exceeds {bound}")]
    Overload {
        pe: String,
        mode: String,
        utilization: String,
        bound: String,
    },
    #[error("no analysis for mode `{0}`")]
    MissingMode(String),
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum SimError {
    #[error("invalid scenario: {0}")]
    InvalidScenario(String),
    #[error("unsupported configuration: {0}")]
    Unsupported(String),
    #[error(transparent)]
    Analysis(#[from] AnalysisError),
    #[error(transparent)]
    Transition(#[from] TransitionError),
}
