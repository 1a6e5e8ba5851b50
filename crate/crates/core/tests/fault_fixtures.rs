//! Builds the fault-injection transcripts under tests/data/faults from a clean
//! scripted baseline run on form-3, one fault per file. Set
//! FAULT_FIXTURES_WRITE=1 to rewrite the files after changing a fault.

mod common;

use std::collections::BTreeMap;
use std::path::PathBuf;

use common::*;
use followup_core::eval::{map_utterance_to_items, ErrorCategory};
use followup_core::fixtures;
use followup_core::transcript::{Transcript, Turn, TurnKind};
use serde_json::json;

fn clean() -> Transcript {
    let (form, ledger) = fixtures::by_id("form-3").unwrap();
    let patient = scripted_patient(&form, &ledger);
    baseline(&form, &patient, &sim_gateway(), "fault").transcript()
}

/// Index of the system turn asking `id`.
fn asking(t: &Transcript, id: &str) -> usize {
    let form = fixtures::form3();
    t.turns
        .iter()
        .position(|turn| turn.kind == TurnKind::Question && map_utterance_to_items(&turn.text, &form) == [id])
        .unwrap_or_else(|| panic!("no turn asks {id}"))
}

fn remove_pair(t: &mut Transcript, id: &str) -> Vec<Turn> {
    let i = asking(t, id);
    t.turns.drain(i..i + 2).collect()
}

fn faults() -> Vec<(ErrorCategory, Transcript)> {
    let base = clean();
    let mut out = Vec::new();

    let mut t = base.clone();
    let first = remove_pair(&mut t, "age");
    let at = asking(&t, "height") + 2;
    t.turns.splice(at..at, first);
    out.push((ErrorCategory::StartingFromMiddle, t));

    // the last item is asked but the session closes without recording it
    let mut t = base.clone();
    let i = asking(&t, "notes");
    t.turns[i + 1].recorded.clear();
    out.push((ErrorCategory::EndingPrematurely, t));

    let mut t = base.clone();
    let i = asking(&t, "mood");
    t.turns[i].latency_s = 45.0;
    out.push((ErrorCategory::ExcessiveResponseTime, t));

    let mut t = base.clone();
    let i = asking(&t, "sleep_hours");
    t.turns[i].text = "How long do you sleep at night, in hours?".into();
    out.push((ErrorCategory::AlteringQuestions, t));

    let mut t = base.clone();
    let i = asking(&t, "exercise");
    let pair: Vec<Turn> = t.turns[i..i + 2].to_vec();
    t.turns.splice(i + 2..i + 2, pair);
    out.push((ErrorCategory::RepetitiveQuestioning, t));

    let mut t = base.clone();
    let i = asking(&t, "smoke") + 2;
    let q = fixtures::form3().question("cig_per_day").unwrap().text.clone();
    let ts = t.turns[i - 1].ts;
    t.turns.splice(i..i, [Turn::system(TurnKind::Question, q, ts), Turn::patient("I told you, I stopped.", ts)]);
    out.push((ErrorCategory::LogicalJumpError, t));

    let mut t = base;
    remove_pair(&mut t, "vaccination");
    out.push((ErrorCategory::SkippingMissing, t));

    out
}

fn dir() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("tests/data/faults")
}

#[test]
fn fault_fixtures_are_current() {
    let write = std::env::var_os("FAULT_FIXTURES_WRITE").is_some();
    if write {
        std::fs::create_dir_all(dir()).unwrap();
    }
    for (cat, transcript) in faults() {
        let expected: BTreeMap<ErrorCategory, usize> = ErrorCategory::ALL.iter().map(|c| (*c, usize::from(*c == cat))).collect();
        let doc = json!({ "fault": cat, "form_id": "form-3", "expected": expected, "transcript": transcript });
        let text = serde_json::to_string_pretty(&doc).unwrap() + "\n";
        let path = dir().join(format!("{cat}.json"));
        if write {
            std::fs::write(&path, text).unwrap();
        } else {
            let on_disk = std::fs::read_to_string(&path).unwrap_or_default();
            assert!(on_disk == text, "{} is stale; rerun with FAULT_FIXTURES_WRITE=1", path.display());
        }
    }
}
