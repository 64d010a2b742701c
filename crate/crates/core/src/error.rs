use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("malformed graph json: {0}")]
    GraphJson(#[from] serde_json::Error),

    #[error("edge {index}: node id {node} out of range for {num_nodes} nodes")]
    NodeOutOfRange {
        index: usize,
        node: usize,
        num_nodes: usize,
    },

    #[error("edge {index}: self-loop on node {node} without allow_self_loops")]
    SelfLoop { index: usize, node: usize },

    #[error("dimension mismatch: {0}")]
    Dimension(String),

    #[error("{name} = {value} outside {range}")]
    OutOfRange {
        name: &'static str,
        value: f64,
        range: &'static str,
    },

    #[error("target {0} out of bounds")]
    TargetOutOfBounds(String),

    #[error("empty {0}")]
    Empty(&'static str),

    #[error("no separable head population: {0}")]
    Degenerate(String),

    #[error("unsupported input: {0}")]
    Unsupported(String),

    #[error("tensor format: {0}")]
    Format(String),

    #[error("objective failed on item {item}: {reason}")]
    Objective { item: usize, reason: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),
}
