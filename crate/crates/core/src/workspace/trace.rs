//! Trace files: a header, one record per pipeline step and the final answer,
//! each framed and chained with SHA-256 so any altered byte is detected.
//!
//! Layout: magic `CUTRACE\0`, u16 version, then frames of
//! `u8 kind | u32 len | body | 32-byte digest` where
//! `digest = SHA256(previous digest | kind | len | body)` and the first
//! previous digest is all zeros. Frame kinds: 1 header, 2 step record,
//! 3 answer. Exactly one header first and one answer last.

use std::fmt;
use std::time::Duration;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::encoding::{ByteReader, ByteWriter, DecodeError};

use super::{hash_state, ContentHash, ContextItem, Workspace, WorkspaceError};

pub const TRACE_MAGIC: &[u8; 8] = b"CUTRACE\0";
pub const TRACE_FORMAT_VERSION: u16 = 1;

const FRAME_HEADER: u8 = 1;
const FRAME_STEP: u8 = 2;
const FRAME_ANSWER: u8 = 3;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum TraceLocation {
    Header,
    /// 1-based step number.
    Step(u32),
    Answer,
}

impl fmt::Display for TraceLocation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            TraceLocation::Header => f.write_str("header"),
            TraceLocation::Step(n) => write!(f, "step {n}"),
            TraceLocation::Answer => f.write_str("answer"),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Origin {
    Local,
    Remote,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub enum StepStatus {
    Applied,
    BudgetExceeded { needed: u64, available: u64 },
    Failed(String),
}

impl StepStatus {
    pub fn is_applied(&self) -> bool {
        matches!(self, StepStatus::Applied)
    }
}

/// Audit record of one primitive invocation. Items are stored in full so a
/// trace can be replayed without re-running anything.
#[derive(Debug, Clone, PartialEq)]
pub struct InvocationRecord {
    pub primitive_id: String,
    /// Canonical parameter string, e.g. `motion=up step=0.5`.
    pub params: String,
    pub step_index: u32,
    pub seed: u64,
    pub inputs_hash: ContentHash,
    pub items: Vec<ContextItem>,
    pub item_hashes: Vec<ContentHash>,
    pub result_hash: ContentHash,
    pub elapsed: Duration,
    pub status: StepStatus,
    pub origin: Origin,
}

impl InvocationRecord {
    fn encode(&self, w: &mut ByteWriter) {
        w.str(&self.primitive_id)
            .str(&self.params)
            .u32(self.step_index)
            .u64(self.seed)
            .bytes(&self.inputs_hash.0);
        match &self.status {
            StepStatus::Applied => {
                w.u8(0);
            }
            StepStatus::BudgetExceeded { needed, available } => {
                w.u8(1).u64(*needed).u64(*available);
            }
            StepStatus::Failed(cause) => {
                w.u8(2).str(cause);
            }
        }
        w.u8(match self.origin {
            Origin::Local => 0,
            Origin::Remote => 1,
        });
        w.u64(self.elapsed.as_nanos().min(u64::MAX as u128) as u64);
        w.u32(self.items.len() as u32);
        for (item, h) in self.items.iter().zip(&self.item_hashes) {
            w.blob(&item.to_bytes()).bytes(&h.0);
        }
        w.bytes(&self.result_hash.0);
    }

    fn decode(r: &mut ByteReader<'_>) -> Result<Self, WorkspaceError> {
        let primitive_id = r.str()?.to_string();
        let params = r.str()?.to_string();
        let step_index = r.u32()?;
        let seed = r.u64()?;
        let inputs_hash = ContentHash(r.array()?);
        let status = match r.u8()? {
            0 => StepStatus::Applied,
            1 => StepStatus::BudgetExceeded {
                needed: r.u64()?,
                available: r.u64()?,
            },
            2 => StepStatus::Failed(r.str()?.to_string()),
            s => return Err(DecodeError::Invalid(format!("step status {s}")).into()),
        };
        let origin = match r.u8()? {
            0 => Origin::Local,
            1 => Origin::Remote,
            o => return Err(DecodeError::Invalid(format!("origin {o}")).into()),
        };
        let elapsed = Duration::from_nanos(r.u64()?);
        let n = r.u32()?;
        let mut items = Vec::new();
        let mut item_hashes = Vec::new();
        for _ in 0..n {
            items.push(ContextItem::from_bytes(r.blob()?)?);
            item_hashes.push(ContentHash(r.array()?));
        }
        let result_hash = ContentHash(r.array()?);
        Ok(Self {
            primitive_id,
            params,
            step_index,
            seed,
            inputs_hash,
            items,
            item_hashes,
            result_hash,
            elapsed,
            status,
            origin,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceHeader {
    pub task_id: String,
    /// The task and its scene as JSON, so a trace is self-contained.
    pub task_json: String,
    pub scene_json: String,
    pub pipeline: String,
    pub budget: u64,
    pub policy_seed: u64,
    /// Effective run configuration as JSON.
    pub config_json: String,
}

impl TraceHeader {
    fn encode(&self, w: &mut ByteWriter) {
        w.str(&self.task_id)
            .str(&self.task_json)
            .str(&self.scene_json)
            .str(&self.pipeline)
            .u64(self.budget)
            .u64(self.policy_seed)
            .str(&self.config_json);
    }

    fn decode(r: &mut ByteReader<'_>) -> Result<Self, DecodeError> {
        Ok(Self {
            task_id: r.str()?.to_string(),
            task_json: r.str()?.to_string(),
            scene_json: r.str()?.to_string(),
            pipeline: r.str()?.to_string(),
            budget: r.u64()?,
            policy_seed: r.u64()?,
            config_json: r.str()?.to_string(),
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Trace {
    pub header: TraceHeader,
    pub records: Vec<InvocationRecord>,
    /// Decoded answer and evidence as JSON.
    pub answer_json: String,
}

fn chain(prev: &[u8; 32], kind: u8, body: &[u8]) -> [u8; 32] {
    let mut h = Sha256::new();
    h.update(prev);
    h.update([kind]);
    h.update((body.len() as u32).to_le_bytes());
    h.update(body);
    h.finalize().into()
}

fn corrupt(at: TraceLocation, why: impl fmt::Display) -> WorkspaceError {
    WorkspaceError::TraceCorrupt(at, why.to_string())
}

impl Trace {
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = ByteWriter::new();
        out.bytes(TRACE_MAGIC).u16(TRACE_FORMAT_VERSION);
        let mut prev = [0u8; 32];
        let mut frame = |out: &mut ByteWriter, kind: u8, body: Vec<u8>| {
            prev = chain(&prev, kind, &body);
            out.u8(kind).blob(&body).bytes(&prev);
        };
        let mut w = ByteWriter::new();
        self.header.encode(&mut w);
        frame(&mut out, FRAME_HEADER, w.finish());
        for rec in &self.records {
            let mut w = ByteWriter::new();
            rec.encode(&mut w);
            frame(&mut out, FRAME_STEP, w.finish());
        }
        let mut w = ByteWriter::new();
        w.str(&self.answer_json);
        frame(&mut out, FRAME_ANSWER, w.finish());
        out.finish()
    }

    /// Parses and verifies the frame chain. The first failing frame is
    /// reported; step frames are numbered from 1.
    pub fn from_bytes(bytes: &[u8]) -> Result<Self, WorkspaceError> {
        let mut r = ByteReader::new(bytes);
        let head = r
            .take(TRACE_MAGIC.len())
            .map_err(|e| corrupt(TraceLocation::Header, e))?;
        if head != TRACE_MAGIC {
            return Err(corrupt(TraceLocation::Header, "bad magic"));
        }
        let version = r.u16().map_err(|e| corrupt(TraceLocation::Header, e))?;
        if version != TRACE_FORMAT_VERSION {
            return Err(corrupt(TraceLocation::Header, DecodeError::Version(version)));
        }
        let mut prev = [0u8; 32];
        let mut header = None;
        let mut records = Vec::new();
        loop {
            let at = match (&header, bytes.get(r.position())) {
                (None, _) => TraceLocation::Header,
                (Some(_), Some(&FRAME_ANSWER)) => TraceLocation::Answer,
                (Some(_), _) => TraceLocation::Step(records.len() as u32 + 1),
            };
            let (kind, body) = read_frame(&mut r, &mut prev).map_err(|e| corrupt(at, e))?;
            match (kind, header.is_some()) {
                (FRAME_HEADER, false) => {
                    let mut br = ByteReader::new(body);
                    let h = TraceHeader::decode(&mut br)
                        .and_then(|h| br.expect_end().map(|_| h))
                        .map_err(|e| corrupt(at, e))?;
                    header = Some(h);
                }
                (FRAME_STEP, true) => {
                    let mut br = ByteReader::new(body);
                    let rec = InvocationRecord::decode(&mut br)
                        .and_then(|rec| br.expect_end().map(|_| rec).map_err(Into::into))
                        .map_err(|e| corrupt(at, e))?;
                    records.push(rec);
                }
                (FRAME_ANSWER, true) => {
                    let mut br = ByteReader::new(body);
                    let answer_json = br.str().map_err(|e| corrupt(at, e))?.to_string();
                    br.expect_end().map_err(|e| corrupt(at, e))?;
                    r.expect_end().map_err(|e| corrupt(at, e))?;
                    return Ok(Trace {
                        header: header.unwrap(),
                        records,
                        answer_json,
                    });
                }
                (k, _) => return Err(corrupt(at, format!("unexpected frame kind {k}"))),
            }
        }
    }

    /// Hash of the final workspace state recorded in the trace.
    pub fn final_hash(&self) -> ContentHash {
        match self.records.last() {
            Some(r) => r.result_hash,
            None => Workspace::new(self.header.budget.max(1))
                .map(|w| hash_state(&w))
                .unwrap_or_default(),
        }
    }

    /// Digest of everything except wall-clock timings; equal for reruns of
    /// the same configuration.
    pub fn fingerprint(&self) -> ContentHash {
        let mut t = self.clone();
        for r in &mut t.records {
            r.elapsed = Duration::ZERO;
        }
        ContentHash::of(&t.to_bytes())
    }
}

fn read_frame<'a>(r: &mut ByteReader<'a>, prev: &mut [u8; 32]) -> Result<(u8, &'a [u8]), DecodeError> {
    let kind = r.u8()?;
    let body = r.blob()?;
    let digest: [u8; 32] = r.array()?;
    let expect = chain(prev, kind, body);
    if digest != expect {
        return Err(DecodeError::Invalid("frame digest mismatch".into()));
    }
    *prev = expect;
    Ok((kind, body))
}

/// Rebuilds the final workspace from recorded items, checking every hash in
/// the chain. Nothing is re-executed.
pub fn replay(trace: &Trace) -> Result<Workspace, WorkspaceError> {
    let mut ws = Workspace::new(trace.header.budget)
        .map_err(|e| corrupt(TraceLocation::Header, e))?;
    for (i, rec) in trace.records.iter().enumerate() {
        let at = TraceLocation::Step(i as u32 + 1);
        let before = hash_state(&ws);
        if rec.inputs_hash != before {
            return Err(corrupt(at, "inputs hash does not match replayed state"));
        }
        if rec.items.len() != rec.item_hashes.len() {
            return Err(corrupt(at, "item hash count"));
        }
        if rec.step_index as usize != i + 1 {
            return Err(corrupt(at, "step index out of sequence"));
        }
        for (item, h) in rec.items.iter().zip(&rec.item_hashes) {
            if item.hash() != *h {
                return Err(corrupt(at, "item hash mismatch"));
            }
            let p = item.provenance();
            if p.parent_hash != before || p.step_index != rec.step_index {
                return Err(corrupt(at, "item provenance does not match step"));
            }
        }
        if !rec.status.is_applied() && !rec.items.is_empty() {
            return Err(corrupt(at, "skipped step carries items"));
        }
        ws = ws.compose(&rec.items).map_err(|e| corrupt(at, e))?;
        if hash_state(&ws) != rec.result_hash {
            return Err(corrupt(at, "result hash does not match replayed state"));
        }
    }
    Ok(ws)
}
