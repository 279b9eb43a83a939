use alloc::string::String;
use core::fmt;

use crate::model::{ObjectId, StateId, Time};

pub type Result<T> = core::result::Result<T, Error>;

#[derive(Debug, Clone, PartialEq)]
pub enum Error {
    /// Malformed state space (empty, ragged coordinates, duplicate points).
    InvalidStateSpace(String),
    /// A vector or matrix does not match the size of the state space.
    DimensionMismatch {
        expected: usize,
        found: usize,
    },
    /// A state index outside the state space.
    InvalidState {
        state: StateId,
        states: usize,
    },
    /// A matrix entry outside `[0, 1]` or not finite.
    InvalidProbability {
        row: StateId,
        col: StateId,
        value: f64,
    },
    /// Observation list empty or not strictly increasing in time.
    InvalidObservations {
        object: ObjectId,
        reason: &'static str,
    },
    /// A timestamp outside the span in which the object is defined.
    OutOfSpan {
        object: ObjectId,
        time: Time,
    },
    /// An inhomogeneous model has no matrix for this transition.
    MissingTransition {
        time: Time,
    },
    /// An observation has zero probability given the earlier ones.
    Inconsistent {
        object: ObjectId,
        time: Time,
    },
    /// The query reference has no position at this timestamp.
    ReferenceUndefined {
        time: Time,
    },
    UnknownObject(ObjectId),
    InvalidParameter(String),
    /// A brute-force or branching computation exceeded its work guard.
    InstanceTooLarge {
        limit: u64,
    },
}

impl fmt::Display for Error {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Error::InvalidStateSpace(msg) => write!(f, "invalid state space: {msg}"),
            Error::DimensionMismatch { expected, found } => {
                write!(f, "dimension mismatch: expected {expected}, found {found}")
            }
            Error::InvalidState { state, states } => {
                write!(
                    f,
                    "state {state} out of range (state space has {states} states)"
                )
            }
            Error::InvalidProbability { row, col, value } => {
                write!(
                    f,
                    "invalid transition probability {value} at ({row}, {col})"
                )
            }
            Error::InvalidObservations { object, reason } => {
                write!(f, "object {object}: {reason}")
            }
            Error::OutOfSpan { object, time } => {
                write!(f, "object {object} is undefined at time {time}")
            }
            Error::MissingTransition { time } => {
                write!(f, "no transition matrix for time {time}")
            }
            Error::Inconsistent { object, time } => {
                write!(
                    f,
                    "object {object}: observation at time {time} has zero probability"
                )
            }
            Error::ReferenceUndefined { time } => {
                write!(f, "query reference undefined at time {time}")
            }
            Error::UnknownObject(id) => write!(f, "unknown object {id}"),
            Error::InvalidParameter(msg) => write!(f, "invalid parameter: {msg}"),
            Error::InstanceTooLarge { limit } => {
                write!(f, "instance too large (work guard {limit} exceeded)")
            }
        }
    }
}

impl core::error::Error for Error {}
