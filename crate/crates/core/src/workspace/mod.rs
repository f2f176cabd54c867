//! The context workspace: modality-tagged items composed by ordered append
//! under a token budget, with a canonical byte form and SHA-256 state hash.

mod payload;
mod task;
pub mod trace;

use std::fmt;
use std::str::FromStr;
use std::sync::Arc;

use serde::{Deserialize, Deserializer, Serialize, Serializer};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::encoding::{ByteReader, ByteWriter, DecodeError};

pub use payload::{
    cost_of, legend_for, Appearance, DepthPayload, Modality, Payload, PosePayload,
    RawViewPayload, SynthViewPayload, Token, TokenGrid, DEPTH_BUCKETS, POSE_COST,
};
pub use task::{RawView, TaskInput, TaskKind, TaskSpec};
pub use trace::{replay, InvocationRecord, Origin, StepStatus, Trace, TraceHeader, TraceLocation};

pub const WORKSPACE_FORMAT_VERSION: u16 = 1;
const WORKSPACE_MAGIC: &[u8; 4] = b"CUWS";

#[derive(Debug, Error, Clone, PartialEq)]
pub enum WorkspaceError {
    #[error("budget exceeded: needed {needed}, available {available}")]
    BudgetExceeded { needed: u64, available: u64 },
    #[error("malformed payload: {0}")]
    MalformedPayload(String),
    #[error("budget must be positive")]
    ZeroBudget,
    #[error("stored cost {stored} differs from recomputed {actual}")]
    CostMismatch { stored: u64, actual: u64 },
    #[error("trace corrupt at {0}: {1}")]
    TraceCorrupt(TraceLocation, String),
    #[error("decode: {0}")]
    Decode(#[from] DecodeError),
}

/// SHA-256 digest used for workspace states and items.
#[derive(Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Default)]
pub struct ContentHash(pub [u8; 32]);

impl ContentHash {
    pub fn of(bytes: &[u8]) -> Self {
        ContentHash(Sha256::digest(bytes).into())
    }

    pub fn to_hex(&self) -> String {
        hex::encode(self.0)
    }

    /// First 12 hex digits, for transcripts.
    pub fn short(&self) -> String {
        self.to_hex()[..12].to_string()
    }
}

impl fmt::Display for ContentHash {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.to_hex())
    }
}

impl fmt::Debug for ContentHash {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "ContentHash({})", self.short())
    }
}

impl FromStr for ContentHash {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        let bytes = hex::decode(s).map_err(|e| e.to_string())?;
        let arr: [u8; 32] = bytes
            .try_into()
            .map_err(|_| "content hash must be 32 bytes".to_string())?;
        Ok(ContentHash(arr))
    }
}

impl Serialize for ContentHash {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(&self.to_hex())
    }
}

impl<'de> Deserialize<'de> for ContentHash {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Provenance {
    pub step_index: u32,
    pub primitive_id: String,
    pub rng_seed: u64,
    /// Hash of the workspace the producing primitive saw.
    pub parent_hash: ContentHash,
}

impl Provenance {
    fn encode(&self, w: &mut ByteWriter) {
        w.u32(self.step_index)
            .str(&self.primitive_id)
            .u64(self.rng_seed)
            .bytes(&self.parent_hash.0);
    }

    fn decode(r: &mut ByteReader<'_>) -> Result<Self, DecodeError> {
        Ok(Provenance {
            step_index: r.u32()?,
            primitive_id: r.str()?.to_string(),
            rng_seed: r.u64()?,
            parent_hash: ContentHash(r.array()?),
        })
    }
}

/// One unit of workspace content. The cost is always `cost_of(payload)`.
#[derive(Debug, Clone, PartialEq)]
pub struct ContextItem {
    payload: Payload,
    cost: u64,
    provenance: Provenance,
}

impl ContextItem {
    pub fn new(payload: Payload, provenance: Provenance) -> Result<Self, WorkspaceError> {
        let cost = cost_of(&payload)?;
        Ok(Self {
            payload,
            cost,
            provenance,
        })
    }

    /// Like [`ContextItem::new`] but checks a cost claimed by an external source.
    pub fn with_claimed_cost(
        payload: Payload,
        claimed: u64,
        provenance: Provenance,
    ) -> Result<Self, WorkspaceError> {
        let item = Self::new(payload, provenance)?;
        if item.cost != claimed {
            return Err(WorkspaceError::CostMismatch {
                stored: claimed,
                actual: item.cost,
            });
        }
        Ok(item)
    }

    pub fn modality(&self) -> Modality {
        self.payload.modality()
    }

    pub fn payload(&self) -> &Payload {
        &self.payload
    }

    pub fn cost(&self) -> u64 {
        self.cost
    }

    pub fn provenance(&self) -> &Provenance {
        &self.provenance
    }

    pub fn encode(&self, w: &mut ByteWriter) {
        w.u8(self.modality().tag()).u64(self.cost);
        self.provenance.encode(w);
        self.payload.encode(w);
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut w = ByteWriter::new();
        self.encode(&mut w);
        w.finish()
    }

    /// Decodes and re-validates; a stored cost that does not recompute is rejected.
    pub fn decode(r: &mut ByteReader<'_>) -> Result<Self, WorkspaceError> {
        let tag = r.u8()?;
        let modality = Modality::from_tag(tag)
            .ok_or_else(|| DecodeError::Invalid(format!("modality tag {tag}")))?;
        let stored = r.u64()?;
        let provenance = Provenance::decode(r)?;
        let payload = Payload::decode(modality, r)?;
        Self::with_claimed_cost(payload, stored, provenance)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self, WorkspaceError> {
        let mut r = ByteReader::new(bytes);
        let item = Self::decode(&mut r)?;
        r.expect_end()?;
        Ok(item)
    }

    pub fn hash(&self) -> ContentHash {
        ContentHash::of(&self.to_bytes())
    }
}

/// Ordered, budget-bounded item sequence. Immutable: [`Workspace::compose`]
/// returns a new value and shares item storage with the original.
#[derive(Debug, Clone, PartialEq)]
pub struct Workspace {
    items: Vec<Arc<ContextItem>>,
    budget: u64,
    spent: u64,
}

impl Workspace {
    pub fn new(budget: u64) -> Result<Self, WorkspaceError> {
        if budget == 0 {
            return Err(WorkspaceError::ZeroBudget);
        }
        Ok(Self {
            items: Vec::new(),
            budget,
            spent: 0,
        })
    }

    pub fn items(&self) -> &[Arc<ContextItem>] {
        &self.items
    }

    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }

    pub fn budget(&self) -> u64 {
        self.budget
    }

    pub fn spent(&self) -> u64 {
        self.spent
    }

    pub fn remaining(&self) -> u64 {
        self.budget - self.spent
    }

    pub fn compose(&self, right: &[ContextItem]) -> Result<Workspace, WorkspaceError> {
        let shared: Vec<Arc<ContextItem>> = right.iter().cloned().map(Arc::new).collect();
        self.compose_shared(&shared)
    }

    pub fn compose_shared(&self, right: &[Arc<ContextItem>]) -> Result<Workspace, WorkspaceError> {
        let needed = right
            .iter()
            .try_fold(0u64, |acc, i| acc.checked_add(i.cost()))
            .unwrap_or(u64::MAX);
        let available = self.remaining();
        if needed > available {
            return Err(WorkspaceError::BudgetExceeded { needed, available });
        }
        let mut items = self.items.clone();
        items.extend(right.iter().cloned());
        let out = Workspace {
            items,
            budget: self.budget,
            spent: self.spent + needed,
        };
        assert!(out.spent <= out.budget, "budget invariant violated");
        Ok(out)
    }

    /// Workspace with every item matching `keep`, in order. Used by ablations.
    pub fn filtered(&self, mut keep: impl FnMut(usize, &ContextItem) -> bool) -> Workspace {
        let items: Vec<_> = self
            .items
            .iter()
            .enumerate()
            .filter(|(i, it)| keep(*i, it))
            .map(|(_, it)| it.clone())
            .collect();
        let spent = items.iter().map(|i| i.cost()).sum();
        Workspace {
            items,
            budget: self.budget,
            spent,
        }
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut w = ByteWriter::new();
        w.bytes(WORKSPACE_MAGIC)
            .u16(WORKSPACE_FORMAT_VERSION)
            .u64(self.budget)
            .u64(self.spent)
            .u32(self.items.len() as u32);
        for item in &self.items {
            item.encode(&mut w);
        }
        w.finish()
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self, WorkspaceError> {
        let mut r = ByteReader::new(bytes);
        if r.take(4)? != WORKSPACE_MAGIC {
            return Err(DecodeError::Magic.into());
        }
        let version = r.u16()?;
        if version != WORKSPACE_FORMAT_VERSION {
            return Err(DecodeError::Version(version).into());
        }
        let budget = r.u64()?;
        let spent = r.u64()?;
        let n = r.u32()?;
        let mut items = Vec::new();
        for _ in 0..n {
            items.push(ContextItem::decode(&mut r)?);
        }
        r.expect_end()?;
        let ws = Workspace::new(budget)?.compose(&items)?;
        if ws.spent != spent {
            return Err(DecodeError::Invalid("spent does not match items".into()).into());
        }
        Ok(ws)
    }
}

/// Free-function form of [`Workspace::compose`].
pub fn compose(left: &Workspace, right: &[ContextItem]) -> Result<Workspace, WorkspaceError> {
    left.compose(right)
}

/// SHA-256 of the canonical serialization: "CUWS", u16 version, u64 budget,
/// u64 spent, u32 item count, then per item u8 modality tag, u64 cost,
/// provenance (u32 step, str primitive id, u64 seed, 32-byte parent hash) and
/// the payload. Integers are little-endian, strings are u32-length-prefixed
/// UTF-8, grids are u32 width, u32 height, then row-major cells.
pub fn hash_state(w: &Workspace) -> ContentHash {
    ContentHash::of(&w.to_bytes())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn text(s: &str, step: u32) -> ContextItem {
        ContextItem::new(
            Payload::Text(s.into()),
            Provenance {
                step_index: step,
                primitive_id: "t".into(),
                rng_seed: 0,
                parent_hash: ContentHash::default(),
            },
        )
        .unwrap()
    }

    #[test]
    fn budget_exceeded_reports_needed_and_available() {
        let filler = "x ".repeat(90);
        let w = Workspace::new(100).unwrap().compose(&[text(&filler, 1)]).unwrap();
        assert_eq!(w.spent(), 90);
        let err = w.compose(&[text(&"y ".repeat(15), 2)]).unwrap_err();
        assert_eq!(
            err,
            WorkspaceError::BudgetExceeded {
                needed: 15,
                available: 10
            }
        );
        assert_eq!(w.spent(), 90);
    }

    #[test]
    fn empty_hash_is_fixed_per_budget() {
        let h = hash_state(&Workspace::new(4096).unwrap());
        let mut expected = Vec::new();
        expected.extend_from_slice(b"CUWS");
        expected.extend_from_slice(&1u16.to_le_bytes());
        expected.extend_from_slice(&4096u64.to_le_bytes());
        expected.extend_from_slice(&0u64.to_le_bytes());
        expected.extend_from_slice(&0u32.to_le_bytes());
        assert_eq!(h, ContentHash(Sha256::digest(&expected).into()));
        assert_ne!(h, hash_state(&Workspace::new(4095).unwrap()));
    }

    #[test]
    fn order_sensitive_hash() {
        let w = Workspace::new(50).unwrap();
        let (a, b) = (text("a b", 1), text("c", 1));
        let ab = w.compose(&[a.clone(), b.clone()]).unwrap();
        let ba = w.compose(&[b, a]).unwrap();
        assert_ne!(hash_state(&ab), hash_state(&ba));
    }

    #[test]
    fn bytes_round_trip() {
        let w = Workspace::new(50)
            .unwrap()
            .compose(&[text("a b c", 1), text("d", 2)])
            .unwrap();
        let back = Workspace::from_bytes(&w.to_bytes()).unwrap();
        assert_eq!(back, w);
        assert!(Workspace::new(0).is_err());
    }

    #[test]
    fn tampered_cost_rejected() {
        let item = text("a b c", 1);
        let mut bytes = item.to_bytes();
        bytes[1] = 9;
        assert!(matches!(
            ContextItem::from_bytes(&bytes),
            Err(WorkspaceError::CostMismatch { stored: 9, actual: 3 })
        ));
    }

    #[test]
    fn content_hash_hex_round_trip() {
        let h = ContentHash::of(b"abc");
        assert_eq!(
            h.to_hex(),
            "ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad"
        );
        assert_eq!(h.to_hex().parse::<ContentHash>().unwrap(), h);
        let json = serde_json::to_string(&h).unwrap();
        assert_eq!(serde_json::from_str::<ContentHash>(&json).unwrap(), h);
    }
}
