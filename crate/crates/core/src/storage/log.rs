//! Segment files, the manifest, and the single writer of a namespace log.

use std::fs::{self, File, OpenOptions};
use std::io::{self, Write};
use std::os::unix::fs::FileExt;
use std::path::{Path, PathBuf};
use std::time::Duration;

use serde::{Deserialize, Serialize};

use super::codec::{
    crc32c, encode_group, encode_segment_header, scan_segment, ByteReader, ByteWriter, LogEntry, SEGMENT_HEADER_LEN,
};
use crate::model::{MemoryRecord, Meta, Timestamp};
use crate::{Error, Result};

pub const MANIFEST_FILE: &str = "MANIFEST.json";
pub const SPARSE_INDEX_STRIDE: usize = 64;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct StorageConfig {
    /// Seal the active segment once it would exceed this many bytes.
    pub segment_max_bytes: u64,
    /// Seal the active segment once its records span this long.
    #[serde(with = "crate::util::duration_micros")]
    pub segment_max_span: Duration,
    /// fsync after every commit group.
    pub sync: bool,
    /// Read each group back after writing and verify its checksum.
    pub verify_writes: bool,
    /// Optional cap on the namespace's total log size.
    pub quota_bytes: Option<u64>,
}

impl Default for StorageConfig {
    fn default() -> Self {
        StorageConfig {
            segment_max_bytes: 64 << 20,
            segment_max_span: Duration::from_secs(24 * 3600),
            sync: true,
            verify_writes: false,
            quota_bytes: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SegmentInfo {
    pub segment_id: u64,
    pub min_time: Option<Timestamp>,
    pub max_time: Option<Timestamp>,
    pub record_count: u64,
    pub bytes: u64,
    pub sealed: bool,
}

impl SegmentInfo {
    fn new(segment_id: u64) -> Self {
        SegmentInfo {
            segment_id,
            min_time: None,
            max_time: None,
            record_count: 0,
            bytes: SEGMENT_HEADER_LEN as u64,
            sealed: false,
        }
    }

    pub(crate) fn note_record(&mut self, t: Timestamp) {
        self.min_time = Some(self.min_time.map_or(t, |m| m.min(t)));
        self.max_time = Some(self.max_time.map_or(t, |m| m.max(t)));
        self.record_count += 1;
    }

    pub fn overlaps(&self, start: Timestamp, end: Timestamp) -> bool {
        match (self.min_time, self.max_time) {
            (Some(lo), Some(hi)) => lo <= end && start <= hi,
            _ => false,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub version: u32,
    pub segments: Vec<SegmentInfo>,
}

pub fn segment_path(dir: &Path, id: u64) -> PathBuf {
    dir.join(format!("seg-{id:010}.log"))
}

pub fn sparse_index_path(dir: &Path, id: u64) -> PathBuf {
    dir.join(format!("seg-{id:010}.idx"))
}

pub fn ivf_path(dir: &Path, id: u64) -> PathBuf {
    dir.join(format!("seg-{id:010}.ivf"))
}

/// Segment ids present in `dir`, ascending.
pub fn list_segments(dir: &Path) -> io::Result<Vec<u64>> {
    let mut ids = Vec::new();
    for entry in fs::read_dir(dir)? {
        let name = entry?.file_name();
        let name = name.to_string_lossy();
        if let Some(id) = name
            .strip_prefix("seg-")
            .and_then(|s| s.strip_suffix(".log"))
            .and_then(|s| s.parse::<u64>().ok())
        {
            ids.push(id);
        }
    }
    ids.sort_unstable();
    Ok(ids)
}

pub fn read_manifest(dir: &Path) -> Result<Option<Manifest>> {
    match fs::read(dir.join(MANIFEST_FILE)) {
        Ok(bytes) => serde_json::from_slice(&bytes)
            .map(Some)
            .map_err(|e| Error::CorruptInterior {
                segment: 0,
                offset: 0,
                reason: format!("manifest: {e}"),
            }),
        Err(e) if e.kind() == io::ErrorKind::NotFound => Ok(None),
        Err(e) => Err(e.into()),
    }
}

fn sync_dir(dir: &Path) -> io::Result<()> {
    File::open(dir)?.sync_all()
}

/// Writes `bytes` to `path` through a temp file and rename.
pub(crate) fn write_atomic(path: &Path, bytes: &[u8]) -> io::Result<()> {
    let tmp = path.with_extension(format!(
        "{}.tmp",
        path.extension().and_then(|e| e.to_str()).unwrap_or("")
    ));
    {
        let mut f = File::create(&tmp)?;
        f.write_all(bytes)?;
        f.sync_all()?;
    }
    fs::rename(&tmp, path)?;
    if let Some(parent) = path.parent() {
        sync_dir(parent)?;
    }
    Ok(())
}

/// Removes temp files left by an interrupted rewrite.
pub fn remove_temp_files(dir: &Path) -> io::Result<usize> {
    let mut n = 0;
    for entry in fs::read_dir(dir)? {
        let entry = entry?;
        if entry.file_name().to_string_lossy().ends_with(".tmp") {
            fs::remove_file(entry.path())?;
            n += 1;
        }
    }
    Ok(n)
}

fn write_manifest(dir: &Path, segments: &[SegmentInfo]) -> io::Result<()> {
    let manifest = Manifest {
        version: 1,
        segments: segments.iter().filter(|s| s.sealed).cloned().collect(),
    };
    let bytes = serde_json::to_vec_pretty(&manifest).map_err(io::Error::other)?;
    write_atomic(&dir.join(MANIFEST_FILE), &bytes)
}

/// Sparse `(timestamp, offset)` samples of a sealed segment's records.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SparseIndex {
    pub segment_id: u64,
    pub stride: u32,
    pub entries: Vec<(Timestamp, u64)>,
}

impl SparseIndex {
    /// Keeps every `stride`-th entry of the time-ordered `records`.
    pub fn build(segment_id: u64, records: &[(Timestamp, u64)]) -> Self {
        SparseIndex {
            segment_id,
            stride: SPARSE_INDEX_STRIDE as u32,
            entries: records.iter().step_by(SPARSE_INDEX_STRIDE).copied().collect(),
        }
    }

    pub fn encode(&self) -> Vec<u8> {
        let mut w = ByteWriter::new();
        w.bytes(b"MIDX");
        w.u64(self.segment_id);
        w.u32(self.stride);
        w.u32(self.entries.len() as u32);
        for (t, off) in &self.entries {
            w.i64(t.micros());
            w.u64(*off);
        }
        let crc = crc32c(w.as_slice());
        w.u32(crc);
        w.into_inner()
    }

    pub fn decode(bytes: &[u8]) -> Option<Self> {
        if bytes.len() < 24 {
            return None;
        }
        let (body, trailer) = bytes.split_at(bytes.len() - 4);
        if crc32c(body) != u32::from_le_bytes(trailer.try_into().ok()?) {
            return None;
        }
        let mut r = ByteReader::new(body);
        if r.take(4).ok()? != b"MIDX" {
            return None;
        }
        let segment_id = r.u64().ok()?;
        let stride = r.u32().ok()?;
        let n = r.u32().ok()? as usize;
        let mut entries = Vec::with_capacity(n.min(1 << 20));
        for _ in 0..n {
            let t = Timestamp::new(r.i64().ok()?).ok()?;
            entries.push((t, r.u64().ok()?));
        }
        r.is_empty().then_some(SparseIndex {
            segment_id,
            stride,
            entries,
        })
    }

    /// Entry offset of the last sampled record at or before `t`.
    pub fn seek(&self, t: Timestamp) -> Option<(Timestamp, u64)> {
        match self.entries.partition_point(|(k, _)| *k <= t) {
            0 => None,
            i => Some(self.entries[i - 1]),
        }
    }
}

/// Where a committed group landed.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct GroupWrite {
    pub segment: u64,
    pub offsets: Vec<u64>,
}

/// Exclusive appender for one namespace's log.
pub struct LogWriter {
    dir: PathBuf,
    config: StorageConfig,
    segments: Vec<SegmentInfo>,
    file: File,
}

impl LogWriter {
    /// Opens the log after recovery. `segments` is the recovered segment
    /// list; the torn tail of the last unsealed segment is cut at
    /// `active_valid_len`.
    pub fn open(
        dir: &Path,
        config: StorageConfig,
        mut segments: Vec<SegmentInfo>,
        active_valid_len: Option<u64>,
    ) -> Result<Self> {
        fs::create_dir_all(dir)?;
        let reuse_last = segments.last().is_some_and(|s| !s.sealed);
        let file = if reuse_last {
            let last = segments.last_mut().expect("checked");
            let path = segment_path(dir, last.segment_id);
            let file = OpenOptions::new().read(true).append(true).open(&path)?;
            let valid = active_valid_len.unwrap_or_else(|| file.metadata().map(|m| m.len()).unwrap_or(0));
            if valid < file.metadata()?.len() {
                tracing::warn!(segment = last.segment_id, valid, "discarding torn log tail");
                file.set_len(valid)?;
            }
            if valid < SEGMENT_HEADER_LEN as u64 {
                file.set_len(0)?;
                (&file).write_all(&encode_segment_header(last.segment_id))?;
                file.sync_all()?;
                last.bytes = SEGMENT_HEADER_LEN as u64;
            } else {
                last.bytes = valid;
            }
            file
        } else {
            let id = segments.last().map_or(1, |s| s.segment_id + 1);
            let file = create_segment(dir, id)?;
            segments.push(SegmentInfo::new(id));
            file
        };
        Ok(LogWriter {
            dir: dir.to_path_buf(),
            config,
            segments,
            file,
        })
    }

    pub fn dir(&self) -> &Path {
        &self.dir
    }

    pub fn config(&self) -> &StorageConfig {
        &self.config
    }

    pub fn segments(&self) -> &[SegmentInfo] {
        &self.segments
    }

    pub fn active(&self) -> &SegmentInfo {
        self.segments.last().expect("writer always has an active segment")
    }

    pub fn total_bytes(&self) -> u64 {
        self.segments.iter().map(|s| s.bytes).sum()
    }

    /// Whether a group of `group_len` bytes whose earliest record is
    /// `first_record` should start a new segment.
    pub fn needs_roll(&self, group_len: u64, first_record: Option<Timestamp>) -> bool {
        let active = self.active();
        if active.bytes <= SEGMENT_HEADER_LEN as u64 {
            return false;
        }
        if active.bytes + group_len > self.config.segment_max_bytes {
            return true;
        }
        match (active.min_time, first_record) {
            (Some(lo), Some(t)) => t.delta_from(lo) >= self.config.segment_max_span.as_micros() as i64,
            _ => false,
        }
    }

    /// Seals the active segment and starts the next one. `records` lists
    /// the `(timestamp, offset)` of every record in the active segment.
    pub fn seal_active(&mut self, records: &[(Timestamp, u64)]) -> Result<()> {
        self.file.sync_all()?;
        let id = self.active().segment_id;
        let index = SparseIndex::build(id, records);
        write_atomic(&sparse_index_path(&self.dir, id), &index.encode())?;
        self.segments.last_mut().expect("active").sealed = true;
        write_manifest(&self.dir, &self.segments)?;
        let next = id + 1;
        self.file = create_segment(&self.dir, next)?;
        self.segments.push(SegmentInfo::new(next));
        Ok(())
    }

    /// Appends `entries` as one atomic commit group.
    pub fn append(&mut self, entries: &[LogEntry]) -> Result<GroupWrite> {
        let (bytes, rel_offsets) = encode_group(entries);
        self.append_encoded(entries, &bytes, &rel_offsets)
    }

    /// Appends a group already produced by [`encode_group`] from `entries`.
    pub fn append_encoded(&mut self, entries: &[LogEntry], bytes: &[u8], rel_offsets: &[usize]) -> Result<GroupWrite> {
        if let Some(quota) = self.config.quota_bytes {
            if self.total_bytes() + bytes.len() as u64 > quota {
                return Err(Error::StorageFull);
            }
        }
        let start = self.active().bytes;
        if let Err(e) = self.write_group(bytes, start) {
            // Never leave a partial group in front of later appends.
            let _ = self.file.set_len(start);
            return Err(e);
        }
        let active = self.segments.last_mut().expect("active");
        active.bytes = start + bytes.len() as u64;
        for e in entries {
            if let LogEntry::Record(r) = e {
                active.note_record(r.id_time);
            }
        }
        Ok(GroupWrite {
            segment: active.segment_id,
            offsets: rel_offsets.iter().map(|&o| start + o as u64).collect(),
        })
    }

    fn write_group(&mut self, bytes: &[u8], start: u64) -> Result<()> {
        self.file.write_all(bytes).map_err(map_write_err)?;
        if self.config.sync {
            self.file.sync_data().map_err(map_write_err)?;
        }
        if self.config.verify_writes {
            let mut back = vec![0u8; bytes.len()];
            self.file.read_exact_at(&mut back, start)?;
            if crc32c(&back) != crc32c(bytes) {
                return Err(Error::ChecksumFailure {
                    segment: self.active().segment_id,
                    offset: start,
                });
            }
        }
        Ok(())
    }

    pub fn sync(&self) -> Result<()> {
        self.file.sync_all()?;
        Ok(())
    }

    pub(crate) fn replace_segment_info(&mut self, info: SegmentInfo) -> Result<()> {
        if let Some(s) = self.segments.iter_mut().find(|s| s.segment_id == info.segment_id) {
            *s = info;
        }
        write_manifest(&self.dir, &self.segments)?;
        Ok(())
    }
}

fn map_write_err(e: io::Error) -> Error {
    if e.kind() == io::ErrorKind::StorageFull {
        Error::StorageFull
    } else {
        Error::Io(e)
    }
}

fn create_segment(dir: &Path, id: u64) -> Result<File> {
    let path = segment_path(dir, id);
    let mut file = OpenOptions::new()
        .read(true)
        .append(true)
        .create_new(true)
        .open(&path)?;
    file.write_all(&encode_segment_header(id))?;
    file.sync_all()?;
    sync_dir(dir)?;
    Ok(file)
}

/// Result of rewriting a sealed segment.
#[derive(Debug, Clone)]
pub struct Rewrite {
    pub bytes: Vec<u8>,
    pub info: SegmentInfo,
    /// New offset of every record in the segment.
    pub relocations: Vec<(Timestamp, u64)>,
}

/// Builds the compacted image of a sealed segment: every record carries
/// `current_meta(id)` and the meta patches aimed at this segment's own
/// records are dropped. Other entries are kept in their original groups.
pub fn rewrite_segment<F>(segment_id: u64, original: &[u8], mut current_meta: F) -> Result<Rewrite>
where
    F: FnMut(Timestamp) -> Option<Meta>,
{
    let scan = scan_segment(original);
    if let Some(stop) = scan.stop {
        let offset = match stop {
            super::codec::ScanStop::Torn { offset } | super::codec::ScanStop::Corrupt { offset, .. } => offset,
        };
        return Err(Error::ChecksumFailure {
            segment: segment_id,
            offset,
        });
    }
    let own: std::collections::BTreeSet<Timestamp> = scan
        .groups
        .iter()
        .flat_map(|g| &g.entries)
        .filter_map(|(_, e)| match e {
            LogEntry::Record(r) => Some(r.id_time),
            _ => None,
        })
        .collect();

    let mut out = encode_segment_header(segment_id);
    let mut info = SegmentInfo::new(segment_id);
    info.sealed = true;
    let mut relocations = Vec::new();
    for group in scan.groups {
        let mut kept = Vec::with_capacity(group.entries.len());
        for (_, entry) in group.entries {
            match entry {
                LogEntry::MetaPatch { id_time, .. } if own.contains(&id_time) => {}
                LogEntry::Record(r) => {
                    let meta = current_meta(r.id_time).unwrap_or_else(|| r.meta.clone());
                    kept.push(LogEntry::Record(MemoryRecord { meta, ..r }));
                }
                other => kept.push(other),
            }
        }
        if kept.is_empty() {
            continue;
        }
        let (bytes, offsets) = encode_group(&kept);
        let base = out.len() as u64;
        for (entry, off) in kept.iter().zip(offsets) {
            if let LogEntry::Record(r) = entry {
                relocations.push((r.id_time, base + off as u64));
                info.note_record(r.id_time);
            }
        }
        out.extend(bytes);
    }
    info.bytes = out.len() as u64;
    Ok(Rewrite {
        bytes: out,
        info,
        relocations,
    })
}
