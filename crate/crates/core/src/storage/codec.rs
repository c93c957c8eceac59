//! Binary encoding of log entries and commit groups.
//!
//! Segment file layout:
//!
//! ```text
//! file header   "MEMDBSEG" (8 bytes) | segment_id u64
//! group*        header | body | group_crc u32
//!   header      "MGRP" | entry_count u32 | body_len u32 | header_crc u32
//!   body        entry*
//!   entry       payload_len u32 | tag u8 | payload | entry_crc u32
//! ```
//!
//! All integers are little-endian, strings are length-prefixed UTF-8 and
//! vector elements are IEEE-754 binary32. Checksums are CRC-32C; the
//! header checksum covers the first 12 header bytes, the entry checksum
//! covers tag and payload, the group checksum covers the whole body.

use std::collections::BTreeMap;

use crc::{Crc, CRC_32_ISCSI};
use thiserror::Error;

use crate::coherence::CoherenceSample;
use crate::maintenance::MaintenanceReport;
use crate::model::EmbeddingSet;
use crate::model::{Edge, EdgeId, Kind, MemoryRecord, Meta, Namespace, Timestamp, Vector, Weight};

static CASTAGNOLI: Crc<u32> = Crc::<u32>::new(&CRC_32_ISCSI);

pub fn crc32c(bytes: &[u8]) -> u32 {
    CASTAGNOLI.checksum(bytes)
}

pub const SEGMENT_MAGIC: &[u8; 8] = b"MEMDBSEG";
pub const SEGMENT_HEADER_LEN: usize = 16;
pub const GROUP_MAGIC: &[u8; 4] = b"MGRP";
pub const GROUP_HEADER_LEN: usize = 16;
pub const GROUP_TRAILER_LEN: usize = 4;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum CodecError {
    #[error("unexpected end of input")]
    Truncated,
    #[error("invalid utf-8 string")]
    Utf8,
    #[error("unknown entry tag {0}")]
    UnknownTag(u8),
    #[error("invalid value: {0}")]
    Invalid(String),
}

#[derive(Debug, Default)]
pub struct ByteWriter {
    buf: Vec<u8>,
}

impl ByteWriter {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn with_capacity(n: usize) -> Self {
        ByteWriter {
            buf: Vec::with_capacity(n),
        }
    }

    pub fn bytes(&mut self, b: &[u8]) {
        self.buf.extend_from_slice(b);
    }
    pub fn u8(&mut self, v: u8) {
        self.buf.push(v);
    }
    pub fn u16(&mut self, v: u16) {
        self.buf.extend_from_slice(&v.to_le_bytes());
    }
    pub fn u32(&mut self, v: u32) {
        self.buf.extend_from_slice(&v.to_le_bytes());
    }
    pub fn u64(&mut self, v: u64) {
        self.buf.extend_from_slice(&v.to_le_bytes());
    }
    pub fn i64(&mut self, v: i64) {
        self.buf.extend_from_slice(&v.to_le_bytes());
    }
    pub fn f64(&mut self, v: f64) {
        self.buf.extend_from_slice(&v.to_le_bytes());
    }
    pub fn str(&mut self, s: &str) {
        self.u32(s.len() as u32);
        self.buf.extend_from_slice(s.as_bytes());
    }
    pub fn f32s(&mut self, v: &[f32]) {
        self.buf.reserve(v.len() * 4);
        for x in v {
            self.buf.extend_from_slice(&x.to_le_bytes());
        }
    }
    pub fn len(&self) -> usize {
        self.buf.len()
    }
    pub fn is_empty(&self) -> bool {
        self.buf.is_empty()
    }
    pub fn as_slice(&self) -> &[u8] {
        &self.buf
    }
    pub fn into_inner(self) -> Vec<u8> {
        self.buf
    }
    fn patch_u32(&mut self, at: usize, v: u32) {
        self.buf[at..at + 4].copy_from_slice(&v.to_le_bytes());
    }
}

pub struct ByteReader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> ByteReader<'a> {
    pub fn new(buf: &'a [u8]) -> Self {
        ByteReader { buf, pos: 0 }
    }

    pub fn take(&mut self, n: usize) -> Result<&'a [u8], CodecError> {
        let end = self.pos.checked_add(n).ok_or(CodecError::Truncated)?;
        if end > self.buf.len() {
            return Err(CodecError::Truncated);
        }
        let out = &self.buf[self.pos..end];
        self.pos = end;
        Ok(out)
    }

    fn array<const N: usize>(&mut self) -> Result<[u8; N], CodecError> {
        Ok(self.take(N)?.try_into().expect("length checked"))
    }

    pub fn u8(&mut self) -> Result<u8, CodecError> {
        Ok(self.take(1)?[0])
    }
    pub fn u16(&mut self) -> Result<u16, CodecError> {
        Ok(u16::from_le_bytes(self.array()?))
    }
    pub fn u32(&mut self) -> Result<u32, CodecError> {
        Ok(u32::from_le_bytes(self.array()?))
    }
    pub fn u64(&mut self) -> Result<u64, CodecError> {
        Ok(u64::from_le_bytes(self.array()?))
    }
    pub fn i64(&mut self) -> Result<i64, CodecError> {
        Ok(i64::from_le_bytes(self.array()?))
    }
    pub fn f64(&mut self) -> Result<f64, CodecError> {
        Ok(f64::from_le_bytes(self.array()?))
    }
    pub fn str(&mut self) -> Result<String, CodecError> {
        let len = self.u32()? as usize;
        let raw = self.take(len)?;
        String::from_utf8(raw.to_vec()).map_err(|_| CodecError::Utf8)
    }
    pub fn f32s(&mut self, n: usize) -> Result<Vec<f32>, CodecError> {
        let raw = self.take(n.checked_mul(4).ok_or(CodecError::Truncated)?)?;
        Ok(raw
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().expect("chunk of 4")))
            .collect())
    }
    pub fn position(&self) -> usize {
        self.pos
    }
    pub fn remaining(&self) -> usize {
        self.buf.len() - self.pos
    }
    pub fn is_empty(&self) -> bool {
        self.remaining() == 0
    }
}

/// Entry type tags.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[repr(u8)]
pub enum Tag {
    Record = 1,
    Edge = 2,
    MetaPatch = 3,
    Prune = 4,
    ViewPatch = 5,
    CoherenceSample = 6,
    MaintenanceReport = 7,
}

impl TryFrom<u8> for Tag {
    type Error = CodecError;
    fn try_from(v: u8) -> Result<Self, CodecError> {
        Ok(match v {
            1 => Tag::Record,
            2 => Tag::Edge,
            3 => Tag::MetaPatch,
            4 => Tag::Prune,
            5 => Tag::ViewPatch,
            6 => Tag::CoherenceSample,
            7 => Tag::MaintenanceReport,
            other => return Err(CodecError::UnknownTag(other)),
        })
    }
}

/// One logged mutation.
#[derive(Debug, Clone, PartialEq)]
pub enum LogEntry {
    Record(MemoryRecord),
    Edge(Edge),
    /// Keys in `patch` overwrite or extend the record's meta map.
    MetaPatch {
        id_time: Timestamp,
        patch: Meta,
    },
    /// Logical removal of an edge from traversals as of `pruned_at`.
    Prune {
        edge_id: EdgeId,
        pruned_at: Timestamp,
    },
    /// Derived or re-normalized embedding view produced by maintenance.
    ViewPatch {
        id_time: Timestamp,
        view: String,
        vector: Vector,
    },
    CoherenceSample(CoherenceSample),
    MaintenanceReport(MaintenanceReport),
}

impl LogEntry {
    pub fn tag(&self) -> Tag {
        match self {
            LogEntry::Record(_) => Tag::Record,
            LogEntry::Edge(_) => Tag::Edge,
            LogEntry::MetaPatch { .. } => Tag::MetaPatch,
            LogEntry::Prune { .. } => Tag::Prune,
            LogEntry::ViewPatch { .. } => Tag::ViewPatch,
            LogEntry::CoherenceSample(_) => Tag::CoherenceSample,
            LogEntry::MaintenanceReport(_) => Tag::MaintenanceReport,
        }
    }

    fn encode_payload(&self, w: &mut ByteWriter) {
        match self {
            LogEntry::Record(r) => {
                w.i64(r.id_time.micros());
                w.str(r.kind.as_str());
                match &r.content {
                    Some(c) => {
                        w.u8(1);
                        w.str(c);
                    }
                    None => w.u8(0),
                }
                w.u16(r.embeddings.len() as u16);
                for (name, v) in r.embeddings.iter() {
                    w.str(name);
                    w.u32(v.len() as u32);
                    w.f32s(v);
                }
                w.str(&meta_json(&r.meta));
            }
            LogEntry::Edge(e) => {
                w.u64(e.edge_id.0);
                w.i64(e.source.micros());
                w.i64(e.destination.micros());
                match &e.destination_namespace {
                    Some(ns) => {
                        w.u8(1);
                        w.str(ns.as_str());
                    }
                    None => w.u8(0),
                }
                w.str(&e.relationship);
                w.f64(e.weight.strength());
                w.f64(e.weight.confidence());
                w.str(&meta_json(&e.meta));
                w.i64(e.created_at.micros());
            }
            LogEntry::MetaPatch { id_time, patch } => {
                w.i64(id_time.micros());
                w.str(&meta_json(patch));
            }
            LogEntry::Prune { edge_id, pruned_at } => {
                w.u64(edge_id.0);
                w.i64(pruned_at.micros());
            }
            LogEntry::ViewPatch { id_time, view, vector } => {
                w.i64(id_time.micros());
                w.str(view);
                w.u32(vector.len() as u32);
                w.f32s(vector);
            }
            LogEntry::CoherenceSample(s) => {
                w.i64(s.window_start.micros());
                w.i64(s.window_end.micros());
                w.u64(s.edge_count as u64);
                match s.c_local {
                    Some(c) => {
                        w.u8(1);
                        w.f64(c);
                    }
                    None => w.u8(0),
                }
                w.i64(s.computed_at.micros());
            }
            LogEntry::MaintenanceReport(r) => {
                w.str(&serde_json::to_string(r).expect("report serializes"));
            }
        }
    }

    fn decode_payload(tag: Tag, payload: &[u8]) -> Result<LogEntry, CodecError> {
        let mut r = ByteReader::new(payload);
        let entry = match tag {
            Tag::Record => {
                let id_time = ts(r.i64()?)?;
                let kind = Kind::new(r.str()?).map_err(invalid)?;
                let content = match r.u8()? {
                    0 => None,
                    _ => Some(r.str()?),
                };
                let n_views = r.u16()?;
                let mut embeddings = EmbeddingSet::new();
                for _ in 0..n_views {
                    let name = r.str()?;
                    let dim = r.u32()? as usize;
                    let v: Vector = r.f32s(dim)?.into();
                    embeddings.insert(name, v);
                }
                let meta = parse_meta(&r.str()?)?;
                LogEntry::Record(MemoryRecord {
                    id_time,
                    kind,
                    content,
                    embeddings,
                    meta,
                })
            }
            Tag::Edge => {
                let edge_id = EdgeId(r.u64()?);
                let source = ts(r.i64()?)?;
                let destination = ts(r.i64()?)?;
                let destination_namespace = match r.u8()? {
                    0 => None,
                    _ => Some(Namespace::new(r.str()?).map_err(invalid)?),
                };
                let relationship = r.str()?;
                let strength = r.f64()?;
                let confidence = r.f64()?;
                let weight = Weight::new(strength, confidence).map_err(invalid)?;
                let meta = parse_meta(&r.str()?)?;
                let created_at = ts(r.i64()?)?;
                LogEntry::Edge(Edge {
                    edge_id,
                    source,
                    destination,
                    destination_namespace,
                    relationship,
                    weight,
                    meta,
                    created_at,
                })
            }
            Tag::MetaPatch => LogEntry::MetaPatch {
                id_time: ts(r.i64()?)?,
                patch: parse_meta(&r.str()?)?,
            },
            Tag::Prune => LogEntry::Prune {
                edge_id: EdgeId(r.u64()?),
                pruned_at: ts(r.i64()?)?,
            },
            Tag::ViewPatch => {
                let id_time = ts(r.i64()?)?;
                let view = r.str()?;
                let dim = r.u32()? as usize;
                LogEntry::ViewPatch {
                    id_time,
                    view,
                    vector: r.f32s(dim)?.into(),
                }
            }
            Tag::CoherenceSample => {
                let window_start = ts(r.i64()?)?;
                let window_end = ts(r.i64()?)?;
                let edge_count = r.u64()? as usize;
                let c_local = match r.u8()? {
                    0 => None,
                    _ => Some(r.f64()?),
                };
                let computed_at = ts(r.i64()?)?;
                LogEntry::CoherenceSample(CoherenceSample {
                    window_start,
                    window_end,
                    edge_count,
                    c_local,
                    computed_at,
                })
            }
            Tag::MaintenanceReport => {
                let json = r.str()?;
                LogEntry::MaintenanceReport(
                    serde_json::from_str(&json).map_err(|e| CodecError::Invalid(e.to_string()))?,
                )
            }
        };
        if !r.is_empty() {
            return Err(CodecError::Invalid("trailing payload bytes".into()));
        }
        Ok(entry)
    }
}

fn ts(v: i64) -> Result<Timestamp, CodecError> {
    Timestamp::new(v).map_err(invalid)
}

fn invalid(e: impl std::fmt::Display) -> CodecError {
    CodecError::Invalid(e.to_string())
}

fn meta_json(meta: &Meta) -> String {
    serde_json::to_string(meta).expect("meta serializes")
}

fn parse_meta(s: &str) -> Result<Meta, CodecError> {
    serde_json::from_str::<BTreeMap<String, serde_json::Value>>(s).map_err(invalid)
}

/// Appends one framed entry to `w`.
pub fn encode_entry(entry: &LogEntry, w: &mut ByteWriter) {
    let len_at = w.len();
    w.u32(0);
    let start = w.len();
    w.u8(entry.tag() as u8);
    entry.encode_payload(w);
    let end = w.len();
    let crc = crc32c(&w.as_slice()[start..end]);
    w.patch_u32(len_at, (end - start - 1) as u32);
    w.u32(crc);
}

pub fn encode_segment_header(segment_id: u64) -> Vec<u8> {
    let mut w = ByteWriter::with_capacity(SEGMENT_HEADER_LEN);
    w.bytes(SEGMENT_MAGIC);
    w.u64(segment_id);
    w.into_inner()
}

/// Frames `entries` as one commit group. Also returns the offset of each
/// entry relative to the start of the group.
pub fn encode_group(entries: &[LogEntry]) -> (Vec<u8>, Vec<usize>) {
    let mut body = ByteWriter::new();
    let mut offsets = Vec::with_capacity(entries.len());
    for e in entries {
        offsets.push(GROUP_HEADER_LEN + body.len());
        encode_entry(e, &mut body);
    }
    let body = body.into_inner();
    let mut out = ByteWriter::with_capacity(GROUP_HEADER_LEN + body.len() + GROUP_TRAILER_LEN);
    out.bytes(GROUP_MAGIC);
    out.u32(entries.len() as u32);
    out.u32(body.len() as u32);
    let header_crc = crc32c(out.as_slice());
    out.u32(header_crc);
    out.bytes(&body);
    out.u32(crc32c(&body));
    (out.into_inner(), offsets)
}

/// A decoded commit group with the file offset of each entry.
#[derive(Debug, Clone, PartialEq)]
pub struct DecodedGroup {
    pub offset: u64,
    pub len: u64,
    pub entries: Vec<(u64, LogEntry)>,
}

/// Why scanning a segment stopped before its end.
#[derive(Debug, Clone, PartialEq)]
pub enum ScanStop {
    /// The remaining bytes are an incomplete group.
    Torn { offset: u64 },
    /// A complete frame failed verification.
    Corrupt { offset: u64, reason: String },
}

/// Result of scanning one segment file.
#[derive(Debug, Clone, PartialEq)]
pub struct SegmentScan {
    pub segment_id: Option<u64>,
    pub groups: Vec<DecodedGroup>,
    /// Length of the verified prefix.
    pub valid_len: u64,
    pub stop: Option<ScanStop>,
}

/// Decodes every verifiable commit group in `bytes`.
///
/// A group whose checksum fails is reported as [`ScanStop::Torn`] when it
/// is the final bytes of the file and as [`ScanStop::Corrupt`] otherwise.
/// A complete group header with a bad checksum is always corrupt.
pub fn scan_segment(bytes: &[u8]) -> SegmentScan {
    let mut scan = SegmentScan {
        segment_id: None,
        groups: Vec::new(),
        valid_len: 0,
        stop: None,
    };
    if bytes.len() < SEGMENT_HEADER_LEN {
        scan.stop = Some(ScanStop::Torn { offset: 0 });
        return scan;
    }
    if &bytes[..8] != SEGMENT_MAGIC {
        scan.stop = Some(ScanStop::Corrupt {
            offset: 0,
            reason: "bad segment magic".into(),
        });
        return scan;
    }
    scan.segment_id = Some(u64::from_le_bytes(bytes[8..16].try_into().expect("8 bytes")));
    let mut pos = SEGMENT_HEADER_LEN;
    scan.valid_len = pos as u64;

    while pos < bytes.len() {
        let rest = &bytes[pos..];
        if rest.len() < GROUP_HEADER_LEN {
            scan.stop = Some(ScanStop::Torn { offset: pos as u64 });
            break;
        }
        let header = &rest[..GROUP_HEADER_LEN];
        let stored_header_crc = u32::from_le_bytes(header[12..16].try_into().expect("4 bytes"));
        if &header[..4] != GROUP_MAGIC || crc32c(&header[..12]) != stored_header_crc {
            scan.stop = Some(ScanStop::Corrupt {
                offset: pos as u64,
                reason: "group header checksum mismatch".into(),
            });
            break;
        }
        let count = u32::from_le_bytes(header[4..8].try_into().expect("4 bytes")) as usize;
        let body_len = u32::from_le_bytes(header[8..12].try_into().expect("4 bytes")) as usize;
        let total = GROUP_HEADER_LEN + body_len + GROUP_TRAILER_LEN;
        if rest.len() < total {
            scan.stop = Some(ScanStop::Torn { offset: pos as u64 });
            break;
        }
        let body = &rest[GROUP_HEADER_LEN..GROUP_HEADER_LEN + body_len];
        let stored = u32::from_le_bytes(rest[GROUP_HEADER_LEN + body_len..total].try_into().expect("4 bytes"));
        let is_final = pos + total == bytes.len();
        if crc32c(body) != stored {
            scan.stop = Some(if is_final {
                ScanStop::Torn { offset: pos as u64 }
            } else {
                ScanStop::Corrupt {
                    offset: pos as u64,
                    reason: "group checksum mismatch".into(),
                }
            });
            break;
        }
        match decode_entries(body, count, (pos + GROUP_HEADER_LEN) as u64) {
            Ok(entries) => scan.groups.push(DecodedGroup {
                offset: pos as u64,
                len: total as u64,
                entries,
            }),
            Err(reason) => {
                scan.stop = Some(ScanStop::Corrupt {
                    offset: pos as u64,
                    reason,
                });
                break;
            }
        }
        pos += total;
        scan.valid_len = pos as u64;
    }
    scan
}

fn decode_entries(body: &[u8], count: usize, base: u64) -> Result<Vec<(u64, LogEntry)>, String> {
    let mut r = ByteReader::new(body);
    let mut out = Vec::with_capacity(count);
    for _ in 0..count {
        let at = base + r.position() as u64;
        let len = r.u32().map_err(|e| e.to_string())? as usize;
        let framed = r.take(len + 1).map_err(|e| e.to_string())?;
        let crc = r.u32().map_err(|e| e.to_string())?;
        if crc32c(framed) != crc {
            return Err("entry checksum mismatch".into());
        }
        let tag = Tag::try_from(framed[0]).map_err(|e| e.to_string())?;
        let entry = LogEntry::decode_payload(tag, &framed[1..]).map_err(|e| e.to_string())?;
        out.push((at, entry));
    }
    if !r.is_empty() {
        return Err("group body has trailing bytes".into());
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use serde_json::json;

    fn t(v: i64) -> Timestamp {
        Timestamp::new(v).unwrap()
    }

    fn sample_entries() -> Vec<LogEntry> {
        let mut emb = EmbeddingSet::with_high(vec![0.6f32, 0.8]);
        emb.insert("low", vec![1.0f32]);
        let mut meta = Meta::new();
        meta.insert("importance".into(), json!(0.9));
        vec![
            LogEntry::Record(MemoryRecord {
                id_time: t(10),
                kind: Kind::new("message").unwrap(),
                content: Some("héllo".into()),
                embeddings: emb,
                meta: meta.clone(),
            }),
            LogEntry::Edge(Edge {
                edge_id: EdgeId(3),
                source: t(10),
                destination: t(11),
                destination_namespace: Some(Namespace::new("other").unwrap()),
                relationship: "reply".into(),
                weight: Weight::new(-0.5, 0.25).unwrap(),
                meta: Meta::new(),
                created_at: t(12),
            }),
            LogEntry::MetaPatch {
                id_time: t(10),
                patch: meta,
            },
            LogEntry::Prune {
                edge_id: EdgeId(3),
                pruned_at: t(99),
            },
            LogEntry::ViewPatch {
                id_time: t(10),
                view: "low".into(),
                vector: vec![1.0f32].into(),
            },
            LogEntry::CoherenceSample(CoherenceSample {
                window_start: t(1),
                window_end: t(5),
                edge_count: 0,
                c_local: None,
                computed_at: t(6),
            }),
        ]
    }

    fn segment_with(groups: &[Vec<LogEntry>]) -> Vec<u8> {
        let mut bytes = encode_segment_header(7);
        for g in groups {
            bytes.extend(encode_group(g).0);
        }
        bytes
    }

    #[test]
    fn entries_roundtrip_through_a_group() {
        let entries = sample_entries();
        let bytes = segment_with(std::slice::from_ref(&entries));
        let scan = scan_segment(&bytes);
        assert_eq!(scan.stop, None);
        assert_eq!(scan.segment_id, Some(7));
        assert_eq!(scan.valid_len as usize, bytes.len());
        let decoded: Vec<LogEntry> = scan.groups[0].entries.iter().map(|e| e.1.clone()).collect();
        assert_eq!(decoded, entries);
    }

    #[test]
    fn entry_offsets_point_at_frames() {
        let entries = sample_entries();
        let (group, offsets) = encode_group(&entries);
        let mut r = ByteReader::new(&group[offsets[1]..]);
        let len = r.u32().unwrap() as usize;
        let framed = r.take(len + 1).unwrap();
        assert_eq!(framed[0], Tag::Edge as u8);
    }

    #[test]
    fn little_endian_layout() {
        let (group, _) = encode_group(&[LogEntry::Prune {
            edge_id: EdgeId(0x0102),
            pruned_at: t(0x0304),
        }]);
        assert_eq!(&group[..4], b"MGRP");
        assert_eq!(&group[4..8], &1u32.to_le_bytes());
        // payload_len(4) + tag(1) + edge_id(8) + pruned_at(8) + crc(4)
        assert_eq!(&group[8..12], &25u32.to_le_bytes());
        let entry = &group[16..];
        assert_eq!(&entry[..4], &16u32.to_le_bytes());
        assert_eq!(entry[4], Tag::Prune as u8);
        assert_eq!(&entry[5..13], &0x0102u64.to_le_bytes());
        assert_eq!(&entry[13..21], &0x0304i64.to_le_bytes());
    }

    #[test]
    fn crc32c_check_value() {
        // Standard CRC-32C check value for "123456789".
        assert_eq!(crc32c(b"123456789"), 0xE306_9283);
    }

    #[test]
    fn truncated_tail_is_torn() {
        let groups = vec![sample_entries(), sample_entries()];
        let bytes = segment_with(&groups);
        let first_end = SEGMENT_HEADER_LEN + encode_group(&groups[0]).0.len();
        for cut in first_end..bytes.len() {
            let scan = scan_segment(&bytes[..cut]);
            assert_eq!(scan.groups.len(), 1, "cut at {cut}");
            assert_eq!(scan.valid_len as usize, first_end);
            if cut > first_end {
                assert!(matches!(scan.stop, Some(ScanStop::Torn { .. })));
            }
        }
    }

    #[test]
    fn interior_flip_is_corrupt_final_flip_is_torn() {
        let groups = vec![sample_entries(), sample_entries()];
        let bytes = segment_with(&groups);
        let body_at = SEGMENT_HEADER_LEN + GROUP_HEADER_LEN + 10;
        let mut bad = bytes.clone();
        bad[body_at] ^= 0x01;
        assert!(matches!(scan_segment(&bad).stop, Some(ScanStop::Corrupt { .. })));

        let mut bad = bytes.clone();
        let last = bad.len() - 10;
        bad[last] ^= 0x01;
        let scan = scan_segment(&bad);
        assert!(matches!(scan.stop, Some(ScanStop::Torn { .. })));
        assert_eq!(scan.groups.len(), 1);

        let mut bad = bytes;
        bad[SEGMENT_HEADER_LEN + 5] ^= 0x80;
        assert!(matches!(scan_segment(&bad).stop, Some(ScanStop::Corrupt { .. })));
    }
}
