use thiserror::Error;

use crate::ids::{ComponentId, InstanceId};

#[derive(Debug, Error)]
pub enum TopologyError {
    #[error("fat-tree arity must be even and positive, got {0}")]
    OddArity(usize),
    #[error("fat-tree with arity {arity} hosts at most {capacity} servers, {wanted} requested")]
    TooManyServers {
        arity: usize,
        capacity: usize,
        wanted: usize,
    },
    #[error("invalid jellyfish parameters: {0}")]
    InvalidJellyfish(String),
    #[error("no connected {degree}-regular graph on {switches} switches after {attempts} attempts")]
    JellyfishRetriesExhausted {
        switches: usize,
        degree: usize,
        attempts: usize,
    },
    #[error("servers {0} and {1} are not connected")]
    Unreachable(usize, usize),
    #[error("container {0} is not hosted on a known server")]
    UnknownContainer(usize),
    #[error("cycle detected through components {0:?}")]
    Cycle(Vec<ComponentId>),
    #[error("invalid application '{app}': {reason}")]
    InvalidApp { app: String, reason: String },
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum QueueError {
    #[error("cannot drain {amount} tuples from an output queue holding {total}")]
    DrainExceedsBacklog { amount: u64, total: u64 },
    #[error("served vector has length {got}, expected {expected}")]
    BadServedVector { got: usize, expected: usize },
    #[error("served {served} tuples from window cell {cell} holding {held}")]
    CellOverdrawn { cell: usize, served: u32, held: u32 },
    #[error("sent {sent} tuples but output backlog is {backlog}")]
    SendExceedsBacklog { sent: u64, backlog: u64 },
    #[error("instance {0} has no output queue towards component {1}")]
    NoSuchQueue(InstanceId, ComponentId),
    #[error("queue invariant broken: {0}")]
    Invariant(String),
}

#[derive(Debug, Error)]
pub enum SchedulerError {
    #[error("search space {size} for sender {sender} exceeds limit {limit}")]
    SearchSpaceTooLarge {
        sender: InstanceId,
        size: u64,
        limit: u64,
    },
    #[error("unknown scheduler '{0}' (expected \"potus\" or \"shuffle\")")]
    UnknownScheduler(String),
}

#[derive(Debug, Error)]
pub enum PlacementError {
    #[error("container capacity exhausted: {instances} instances, {slots} slots")]
    CapacityExhausted { instances: usize, slots: usize },
    #[error("explicit placement lists {got} instances, system has {expected}")]
    WrongLength { got: usize, expected: usize },
    #[error("container {0} does not exist")]
    UnknownContainer(usize),
}

#[derive(Debug, Error)]
pub enum WorkloadError {
    #[error("{path}:{line}: {reason}")]
    Parse {
        path: String,
        line: usize,
        reason: String,
    },
    #[error("{path}:{line}: timestamps are not sorted")]
    Unsorted { path: String, line: usize },
    #[error("no workload: arrival stream is empty")]
    NoWorkload,
    #[error("io error reading {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

#[derive(Debug, Error)]
pub enum EngineError {
    #[error("invariant violated in slot {slot}: {message}")]
    Invariant {
        slot: u64,
        message: String,
        /// Serialized queue state at the failing slot.
        dump: String,
    },
    #[error("invalid scenario: {0}")]
    Scenario(String),
}
