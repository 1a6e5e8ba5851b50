use std::collections::BTreeMap;
use std::sync::Mutex;

use serde::{Deserialize, Serialize};

use super::CallTag;

/// One metered model call; the JSON-lines export writes exactly these fields.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CallRecord {
    pub tag: CallTag,
    pub session_id: Option<String>,
    pub prompt_tokens: u64,
    pub completion_tokens: u64,
    pub latency_s: f64,
    pub ts: f64,
    pub estimated: bool,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct Totals {
    pub requests: u64,
    pub prompt_tokens: u64,
    pub completion_tokens: u64,
    pub total_latency: f64,
}

impl Totals {
    pub fn add(&mut self, record: &CallRecord) {
        self.requests += 1;
        self.prompt_tokens += record.prompt_tokens;
        self.completion_tokens += record.completion_tokens;
        self.total_latency += record.latency_s;
    }

    pub fn tokens(&self) -> u64 {
        self.prompt_tokens + self.completion_tokens
    }
}

#[derive(Debug, Default)]
struct Inner {
    records: Vec<CallRecord>,
    by_tag: BTreeMap<CallTag, Totals>,
    by_session: BTreeMap<String, Totals>,
    total: Totals,
}

/// Append-only record of every call plus running per-tag and per-session totals.
#[derive(Debug, Default)]
pub struct MeterLedger {
    inner: Mutex<Inner>,
}

impl MeterLedger {
    fn lock(&self) -> std::sync::MutexGuard<'_, Inner> {
        self.inner.lock().unwrap_or_else(|e| e.into_inner())
    }

    pub fn record(&self, record: CallRecord) {
        let mut inner = self.lock();
        inner.total.add(&record);
        inner.by_tag.entry(record.tag).or_default().add(&record);
        if let Some(s) = &record.session_id {
            inner.by_session.entry(s.clone()).or_default().add(&record);
        }
        inner.records.push(record);
    }

    pub fn records(&self) -> Vec<CallRecord> {
        self.lock().records.clone()
    }

    pub fn len(&self) -> usize {
        self.lock().records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn total(&self) -> Totals {
        self.lock().total
    }

    pub fn totals_for_tag(&self, tag: CallTag) -> Totals {
        self.lock().by_tag.get(&tag).copied().unwrap_or_default()
    }

    pub fn totals_for_session(&self, session_id: &str) -> Totals {
        self.lock().by_session.get(session_id).copied().unwrap_or_default()
    }

    pub fn by_tag(&self) -> BTreeMap<CallTag, Totals> {
        self.lock().by_tag.clone()
    }

    pub fn export_jsonl(&self) -> String {
        let inner = self.lock();
        let mut out = String::new();
        for r in &inner.records {
            out.push_str(&serde_json::to_string(r).expect("record serializes"));
            out.push('\n');
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn totals_track_tags_and_sessions() {
        let ledger = MeterLedger::default();
        for (tag, session, p, c) in [
            (CallTag::Extraction, Some("s1"), 10, 5),
            (CallTag::Extraction, Some("s2"), 7, 3),
            (CallTag::Clustering, None, 4, 4),
        ] {
            ledger.record(CallRecord {
                tag,
                session_id: session.map(str::to_string),
                prompt_tokens: p,
                completion_tokens: c,
                latency_s: 0.5,
                ts: 0.0,
                estimated: false,
            });
        }
        assert_eq!(ledger.total().prompt_tokens, 21);
        assert_eq!(ledger.totals_for_tag(CallTag::Extraction).completion_tokens, 8);
        assert_eq!(ledger.totals_for_session("s1").requests, 1);
        let lines: Vec<_> = ledger.export_jsonl().lines().map(str::to_string).collect();
        assert_eq!(lines.len(), 3);
        let first: serde_json::Value = serde_json::from_str(&lines[0]).unwrap();
        assert_eq!(first["tag"], "extraction");
        assert_eq!(first["session_id"], "s1");
        assert_eq!(first["latency_s"], 0.5);
    }
}
