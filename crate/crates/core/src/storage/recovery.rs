//! Rebuilds a namespace's state by replaying its log.

use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::path::Path;

use super::codec::{scan_segment, LogEntry, ScanStop};
use super::log::{ivf_path, list_segments, read_manifest, segment_path, SegmentInfo};
use crate::state::{Location, NamespaceState};
use crate::vector::IvfIndex;
use crate::{Error, Result};

/// Everything recovered from a namespace directory.
#[derive(Debug)]
pub struct Recovered {
    pub state: NamespaceState,
    pub segments: Vec<SegmentInfo>,
    /// Verified length of the last unsealed segment, when there is one.
    pub active_valid_len: Option<u64>,
    /// Record positions per segment, ascending by timestamp.
    pub record_offsets: BTreeMap<u64, Vec<(crate::model::Timestamp, u64)>>,
    /// IVF sidecars that decoded cleanly, by segment id.
    pub ivf: BTreeMap<u64, IvfIndex>,
}

/// Replays every complete commit group under `dir`.
///
/// Only the final bytes of the last unsealed segment may be torn; they are
/// reported through `active_valid_len` and otherwise ignored. Any other
/// checksum failure is [`Error::CorruptInterior`].
pub fn recover(dir: &Path) -> Result<Recovered> {
    let sealed: BTreeSet<u64> = read_manifest(dir)?
        .map(|m| m.segments.iter().map(|s| s.segment_id).collect())
        .unwrap_or_default();
    let ids = if dir.exists() { list_segments(dir)? } else { Vec::new() };

    let mut state = NamespaceState::new();
    let mut segments = Vec::with_capacity(ids.len());
    let mut record_offsets = BTreeMap::new();
    let mut active_valid_len = None;
    let mut ivf = BTreeMap::new();

    for (i, &id) in ids.iter().enumerate() {
        let is_last = i + 1 == ids.len();
        let is_sealed = sealed.contains(&id);
        let bytes = fs::read(segment_path(dir, id))?;
        let scan = scan_segment(&bytes);
        if let Some(stop) = &scan.stop {
            match stop {
                ScanStop::Torn { offset } if is_last && !is_sealed => {
                    tracing::warn!(segment = id, offset, "torn final commit group discarded");
                }
                ScanStop::Torn { offset } => {
                    return Err(Error::CorruptInterior {
                        segment: id,
                        offset: *offset,
                        reason: "truncated group in a non-final segment".into(),
                    })
                }
                ScanStop::Corrupt { offset, reason } => {
                    return Err(Error::CorruptInterior {
                        segment: id,
                        offset: *offset,
                        reason: reason.clone(),
                    })
                }
            }
        }
        if let Some(header_id) = scan.segment_id {
            if header_id != id {
                return Err(Error::CorruptInterior {
                    segment: id,
                    offset: 8,
                    reason: format!("header names segment {header_id}"),
                });
            }
        }

        let mut info = SegmentInfo {
            segment_id: id,
            min_time: None,
            max_time: None,
            record_count: 0,
            bytes: scan.valid_len,
            sealed: is_sealed,
        };
        let mut offsets = Vec::new();
        for group in scan.groups {
            for (offset, entry) in group.entries {
                if let LogEntry::Record(r) = &entry {
                    info.note_record(r.id_time);
                    offsets.push((r.id_time, offset));
                }
                state
                    .apply(entry, Location { segment: id, offset })
                    .map_err(|e| Error::CorruptInterior {
                        segment: id,
                        offset,
                        reason: e.0,
                    })?;
            }
        }
        if is_last && !is_sealed {
            active_valid_len = Some(scan.valid_len);
        }
        if is_sealed {
            match fs::read(ivf_path(dir, id)) {
                Ok(b) => match IvfIndex::decode(&b) {
                    Ok(index) => {
                        ivf.insert(id, index);
                    }
                    Err(e) => tracing::warn!(segment = id, error = %e, "ignoring unreadable IVF sidecar"),
                },
                Err(e) if e.kind() == std::io::ErrorKind::NotFound => {}
                Err(e) => return Err(e.into()),
            }
        }
        record_offsets.insert(id, offsets);
        segments.push(info);
    }

    Ok(Recovered {
        state,
        segments,
        active_valid_len,
        record_offsets,
        ivf,
    })
}
