//! Durable append-only storage: entry codec, segmented log, and replay.

pub mod codec;
pub mod log;
pub mod recovery;

pub use codec::{LogEntry, ScanStop, SegmentScan};
pub use log::{GroupWrite, LogWriter, Manifest, SegmentInfo, SparseIndex, StorageConfig};
pub use recovery::{recover, Recovered};
