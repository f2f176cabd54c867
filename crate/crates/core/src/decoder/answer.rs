use serde::{Deserialize, Serialize};

use crate::microworld::render::DepthMap;
use crate::workspace::{ContentHash, TaskKind};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", content = "value", rename_all = "snake_case")]
pub enum AnswerPayload {
    Choice(String),
    Count(u64),
    Depth(DepthMap),
    /// One flag per prompt atom, in prompt order.
    Atoms(Vec<bool>),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Answer {
    pub kind: TaskKind,
    pub payload: AnswerPayload,
    pub confidence: f64,
}

impl Answer {
    pub fn choice(&self) -> Option<&str> {
        match &self.payload {
            AnswerPayload::Choice(c) => Some(c),
            _ => None,
        }
    }

    pub fn count(&self) -> Option<u64> {
        match self.payload {
            AnswerPayload::Count(n) => Some(n),
            _ => None,
        }
    }

    pub fn depth(&self) -> Option<&DepthMap> {
        match &self.payload {
            AnswerPayload::Depth(d) => Some(d),
            _ => None,
        }
    }

    pub fn atoms(&self) -> Option<&[bool]> {
        match &self.payload {
            AnswerPayload::Atoms(a) => Some(a),
            _ => None,
        }
    }

    pub fn payload_matches_kind(&self) -> bool {
        matches!(
            (self.kind, &self.payload),
            (TaskKind::SpatialQA, AnswerPayload::Choice(_))
                | (TaskKind::Counting, AnswerPayload::Count(_))
                | (TaskKind::DepthEstimation, AnswerPayload::Depth(_))
                | (TaskKind::GenerationSpec, AnswerPayload::Atoms(_))
        )
    }
}

/// One workspace item that contributed to an answer.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Citation {
    /// Position in the workspace item sequence.
    pub index: usize,
    pub item_hash: ContentHash,
    pub note: String,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Evidence {
    pub cited: Vec<Citation>,
    /// Decoder notes that are not tied to an item, e.g. an abstain.
    pub notes: Vec<String>,
}

impl Evidence {
    pub fn cite(&mut self, index: usize, item_hash: ContentHash, note: impl Into<String>) {
        if let Some(c) = self.cited.iter_mut().find(|c| c.index == index) {
            let note = note.into();
            if !c.note.split("; ").any(|n| n == note) {
                c.note.push_str("; ");
                c.note.push_str(&note);
            }
            return;
        }
        self.cited.push(Citation {
            index,
            item_hash,
            note: note.into(),
        });
        self.cited.sort_by_key(|c| c.index);
    }

    pub fn cited_indices(&self) -> Vec<usize> {
        self.cited.iter().map(|c| c.index).collect()
    }

    pub fn note(&mut self, note: impl Into<String>) {
        self.notes.push(note.into());
    }
}

/// Serialized answer record: task id, answer and the hashes of cited items.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnswerRecord {
    pub task_id: String,
    pub answer: Answer,
    pub evidence: Evidence,
}
