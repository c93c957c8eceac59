use std::path::PathBuf;

use thiserror::Error;

use crate::model::{Namespace, Timestamp, ValidationError};
use crate::vector::VectorError;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("validation failed: {0}")]
    Validation(#[from] ValidationError),
    #[error(transparent)]
    Vector(#[from] VectorError),
    #[error("batch is empty")]
    EmptyBatch,
    #[error("no record at {0}")]
    NotFound(Timestamp),
    #[error("invalid window: start {start} is after end {end}")]
    InvalidWindow { start: i64, end: i64 },
    #[error("edge source {0} does not exist")]
    SourceNotFound(Timestamp),
    #[error("edge endpoint {0} cannot be resolved")]
    EndpointMissing(Timestamp),
    #[error("vertex {0} does not exist")]
    VertexNotFound(Timestamp),
    #[error("no fusion views given")]
    NoViews,
    #[error("storage quota exhausted")]
    StorageFull,
    #[error("checksum verification failed for segment {segment} at offset {offset}")]
    ChecksumFailure { segment: u64, offset: u64 },
    #[error("corrupt log in segment {segment} at offset {offset}: {reason}")]
    CorruptInterior { segment: u64, offset: u64, reason: String },
    #[error("segment {0} is still active")]
    SegmentActive(u64),
    #[error("segment {0} does not exist")]
    SegmentNotFound(u64),
    #[error("invalid query: {0}")]
    InvalidSpec(String),
    #[error("no embedder registered for namespace {0}")]
    EmbedderMissing(Namespace),
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
    #[error("data directory {0} is locked by another process")]
    DataDirLocked(PathBuf),
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
}

impl Error {
    /// Stable machine-readable code.
    pub fn code(&self) -> &'static str {
        match self {
            Error::Validation(ValidationError::DimensionMismatch { .. }) => "DimensionMismatch",
            Error::Validation(ValidationError::NotUnitNorm { .. }) => "NotUnitNorm",
            Error::Validation(ValidationError::EmptyKind) => "EmptyKind",
            Error::Validation(ValidationError::MissingHighView) => "MissingHighView",
            Error::Validation(_) => "ValidationError",
            Error::Vector(VectorError::ZeroVector) => "ZeroVector",
            Error::Vector(VectorError::DimensionMismatch { .. }) => "DimensionMismatch",
            Error::Vector(VectorError::InvalidK) => "InvalidK",
            Error::Vector(VectorError::Untrained) => "Untrained",
            Error::Vector(VectorError::ZeroPrefix(_)) => "ZeroPrefix",
            Error::Vector(_) => "VectorError",
            Error::EmptyBatch => "EmptyBatch",
            Error::NotFound(_) => "NotFound",
            Error::InvalidWindow { .. } => "InvalidWindow",
            Error::SourceNotFound(_) => "SourceNotFound",
            Error::EndpointMissing(_) => "EndpointMissing",
            Error::VertexNotFound(_) => "VertexNotFound",
            Error::NoViews => "NoViews",
            Error::StorageFull => "StorageFull",
            Error::ChecksumFailure { .. } => "ChecksumFailure",
            Error::CorruptInterior { .. } => "CorruptInterior",
            Error::SegmentActive(_) => "SegmentActive",
            Error::SegmentNotFound(_) => "SegmentNotFound",
            Error::InvalidSpec(_) => "InvalidSpec",
            Error::EmbedderMissing(_) => "EmbedderMissing",
            Error::InvalidConfig(_) => "InvalidConfig",
            Error::DataDirLocked(_) => "DataDirLocked",
            Error::Io(_) => "Io",
        }
    }
}
