// SPDX-License-Identifier: Apache-2.0

//! Step-by-step protocol transcripts. Arguments are recorded as digests so a
//! transcript can be published without exposing key material.

use serde::{Deserialize, Serialize};

use crate::crypto::hash;

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct TranscriptEntry {
    pub seq: u64,
    pub actor: String,
    pub op: String,
    #[serde(rename = "args-digest")]
    pub args_digest: String,
    pub result: String,
}

/// Condensed per-step line used by the golden flow fixtures.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct FixtureLine {
    pub step: u64,
    pub actor: String,
    pub command: String,
    #[serde(rename = "summary-digest")]
    pub summary_digest: String,
}

#[derive(Clone, Debug, Default)]
pub struct Transcript {
    entries: Vec<TranscriptEntry>,
}

impl Transcript {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn record(&mut self, actor: &str, op: &str, args: &[u8], result: &str) {
        let seq = self.entries.len() as u64;
        self.entries.push(TranscriptEntry {
            seq,
            actor: actor.to_string(),
            op: op.to_string(),
            args_digest: hash(args).to_hex(),
            result: result.to_string(),
        });
    }

    pub fn entries(&self) -> &[TranscriptEntry] {
        &self.entries
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn clear(&mut self) {
        self.entries.clear();
    }

    pub fn to_jsonl(&self) -> String {
        let mut out = String::new();
        for e in &self.entries {
            out.push_str(&serde_json::to_string(e).expect("entry serializes"));
            out.push('\n');
        }
        out
    }

    pub fn fixture_lines(&self) -> Vec<FixtureLine> {
        self.entries
            .iter()
            .map(|e| FixtureLine {
                step: e.seq,
                actor: e.actor.clone(),
                command: e.op.clone(),
                summary_digest: hash(format!("{}|{}", e.args_digest, e.result).as_bytes()).to_hex(),
            })
            .collect()
    }

    pub fn fixture_jsonl(&self) -> String {
        let mut out = String::new();
        for line in self.fixture_lines() {
            out.push_str(&serde_json::to_string(&line).expect("line serializes"));
            out.push('\n');
        }
        out
    }
}
