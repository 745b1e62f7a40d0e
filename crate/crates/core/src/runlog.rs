//! Append-only audit log of a run, one JSON object per step.

use std::fs::File;
use std::io::Write;
use std::path::Path;
use std::sync::Mutex;

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Action {
    Verify,
    Precheck,
    Prompt,
    LlmCall,
    Candidate,
    Heuristic,
    Accept,
    Reject,
    Outcome,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Hashes {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub before: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub after: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Event {
    pub seq: u64,
    pub round: u32,
    pub action: Action,
    pub hashes: Hashes,
    pub summary: String,
    #[serde(default, skip_serializing_if = "serde_json::Value::is_null")]
    pub data: serde_json::Value,
}

#[derive(Debug, Default)]
struct Inner {
    events: Vec<Event>,
    sink: Option<File>,
}

/// Thread-safe; sequence numbers start at 1 and strictly increase.
#[derive(Debug, Default)]
pub struct RunLog {
    inner: Mutex<Inner>,
}

impl RunLog {
    pub fn new() -> Self {
        Self::default()
    }

    /// Also appends every event as a JSON line to `path`.
    pub fn with_file(path: &Path) -> std::io::Result<Self> {
        let sink = std::fs::OpenOptions::new().create(true).append(true).open(path)?;
        Ok(RunLog { inner: Mutex::new(Inner { events: Vec::new(), sink: Some(sink) }) })
    }

    pub fn record(
        &self,
        round: u32,
        action: Action,
        hashes: Hashes,
        summary: impl Into<String>,
        data: serde_json::Value,
    ) -> u64 {
        let mut inner = self.inner.lock().unwrap_or_else(|p| p.into_inner());
        let seq = inner.events.len() as u64 + 1;
        let event = Event { seq, round, action, hashes, summary: summary.into(), data };
        if let Some(sink) = inner.sink.as_mut() {
            let line = serde_json::to_string(&event).expect("events serialize");
            if let Err(e) = writeln!(sink, "{line}") {
                tracing::warn!(error = %e, "run log write failed");
            }
        }
        inner.events.push(event);
        seq
    }

    /// Events with `seq > since`, in order.
    pub fn since(&self, since: u64) -> Vec<Event> {
        let inner = self.inner.lock().unwrap_or_else(|p| p.into_inner());
        inner.events.iter().skip(since.min(inner.events.len() as u64) as usize).cloned().collect()
    }

    pub fn events(&self) -> Vec<Event> {
        self.since(0)
    }

    /// Highest round of any `action` event; 0 when there is none.
    pub fn max_round(&self, action: Action) -> u32 {
        let inner = self.inner.lock().unwrap_or_else(|p| p.into_inner());
        inner.events.iter().filter(|e| e.action == action).map(|e| e.round).max().unwrap_or(0)
    }

    pub fn count(&self, action: Action) -> usize {
        let inner = self.inner.lock().unwrap_or_else(|p| p.into_inner());
        inner.events.iter().filter(|e| e.action == action).count()
    }

    pub fn to_jsonl(&self) -> String {
        self.events().iter().map(|e| serde_json::to_string(e).expect("events serialize") + "\n").collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn since_returns_strictly_later_events() {
        let log = RunLog::new();
        for i in 0..4 {
            log.record(1, Action::Verify, Hashes::default(), format!("e{i}"), serde_json::Value::Null);
        }
        let later: Vec<u64> = log.since(2).iter().map(|e| e.seq).collect();
        assert_eq!(later, vec![3, 4]);
        assert!(log.since(10).is_empty());
        assert_eq!(log.count(Action::Verify), 4);
    }
}
