//! Groups same-type questions into composite question groups: per trial an
//! abstraction prompt and a grouping prompt per type bucket, then a majority
//! vote over canonical signatures of the trial results.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use serde::{Deserialize, Serialize};

pub use crate::form::QuestionGroup;
use crate::form::{QuestionSpec, QuestionType};
use crate::gateway::{Gateway, GatewayError};
use crate::prompts;

pub const DEFAULT_GROUP_CAP: usize = 4;
pub const DEFAULT_TRIALS: usize = 5;
pub const DEFAULT_PROPOSE_RETRIES: usize = 2;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Grouping {
    pub source_form_id: String,
    pub groups: Vec<QuestionGroup>,
    /// How many trials produced the winning result; 0 for the singleton fallback.
    pub vote_count: usize,
    pub trials: usize,
    #[serde(default)]
    pub fallback: bool,
    /// Abstraction summaries from every trial, kept for audit.
    #[serde(default)]
    pub summaries: Vec<String>,
}

impl Grouping {
    pub fn member_count(&self) -> usize {
        self.groups.iter().map(|g| g.member_ids.len()).sum()
    }

    pub fn mean_group_size(&self) -> f64 {
        if self.groups.is_empty() {
            0.0
        } else {
            self.member_count() as f64 / self.groups.len() as f64
        }
    }
}

#[derive(Debug, Clone, Copy)]
pub struct ClusterConfig {
    pub cap: usize,
    pub trials: usize,
    pub retries: usize,
}

impl Default for ClusterConfig {
    fn default() -> Self {
        ClusterConfig { cap: DEFAULT_GROUP_CAP, trials: DEFAULT_TRIALS, retries: DEFAULT_PROPOSE_RETRIES }
    }
}

/// Canonical form of a candidate: members sorted, then groups sorted.
pub type Signature = Vec<Vec<String>>;

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum CandidateError {
    #[error("output is not a bracketed list of id lists")]
    Unparseable,
    #[error("unknown question id `{0}`")]
    UnknownId(String),
    #[error("question `{0}` appears more than once")]
    Duplicate(String),
    #[error("question `{0}` is missing")]
    Missing(String),
    #[error("group mixes question types")]
    MixedTypes,
    #[error("group of {size} exceeds the cap of {cap}")]
    TooLarge { size: usize, cap: usize },
    #[error("empty group")]
    EmptyGroup,
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum ClusterError {
    #[error(transparent)]
    Gateway(#[from] GatewayError),
    #[error("no valid grouping after {attempts} attempt(s): {last}")]
    Malformed { attempts: usize, last: CandidateError },
    #[error("cannot cluster an empty question set")]
    Empty,
}

/// Splits questions into single, multi and fill-in buckets, keeping authored order.
pub fn partition_by_type<'a>(questions: &[&'a QuestionSpec]) -> Vec<(QuestionType, Vec<&'a QuestionSpec>)> {
    QuestionType::ALL
        .iter()
        .map(|t| (*t, questions.iter().copied().filter(|q| q.qtype == *t).collect()))
        .collect()
}

pub fn abstract_summary(
    questions: &[&QuestionSpec],
    gateway: &Gateway,
    session_id: Option<&str>,
) -> Result<String, ClusterError> {
    if questions.is_empty() {
        return Err(ClusterError::Empty);
    }
    let items: Vec<QuestionSpec> = questions.iter().map(|q| (*q).clone()).collect();
    let response = gateway.complete(&prompts::abstract_request(&items).with_session(session_id))?;
    let text = response.text.trim().to_string();
    if text.is_empty() {
        return Err(ClusterError::Malformed { attempts: 1, last: CandidateError::Unparseable });
    }
    Ok(text)
}

/// Parses `[[a,b],[c]]`; ids may be quoted. Anything else is malformed.
pub fn parse_candidate(text: &str) -> Result<Vec<Vec<String>>, CandidateError> {
    let t = text.trim();
    let t = t
        .strip_prefix("```json")
        .or_else(|| t.strip_prefix("```"))
        .map(|s| s.trim_end_matches('`').trim())
        .unwrap_or(t);
    let inner = t
        .strip_prefix('[')
        .and_then(|s| s.strip_suffix(']'))
        .ok_or(CandidateError::Unparseable)?
        .trim();
    let mut groups = Vec::new();
    let mut rest = inner;
    while !rest.is_empty() {
        let open = rest.strip_prefix('[').ok_or(CandidateError::Unparseable)?;
        let close = open.find(']').ok_or(CandidateError::Unparseable)?;
        let body = &open[..close];
        if body.contains('[') {
            return Err(CandidateError::Unparseable);
        }
        let ids: Vec<String> = body
            .split(',')
            .map(|s| s.trim().trim_matches('"').trim_matches('\'').trim().to_string())
            .filter(|s| !s.is_empty())
            .collect();
        if ids.is_empty() {
            return Err(CandidateError::EmptyGroup);
        }
        groups.push(ids);
        rest = open[close + 1..].trim_start();
        if let Some(r) = rest.strip_prefix(',') {
            rest = r.trim_start();
            if rest.is_empty() {
                return Err(CandidateError::Unparseable);
            }
        } else if !rest.is_empty() {
            return Err(CandidateError::Unparseable);
        }
    }
    if groups.is_empty() {
        return Err(CandidateError::Unparseable);
    }
    Ok(groups)
}

/// Checks that a candidate partitions `questions` into capped, type-homogeneous groups.
pub fn check_candidate(
    candidate: &[Vec<String>],
    questions: &[&QuestionSpec],
    cap: usize,
) -> Result<(), CandidateError> {
    let by_id: BTreeMap<&str, &QuestionSpec> = questions.iter().map(|q| (q.id.as_str(), *q)).collect();
    let mut seen = BTreeSet::new();
    for group in candidate {
        if group.is_empty() {
            return Err(CandidateError::EmptyGroup);
        }
        if group.len() > cap {
            return Err(CandidateError::TooLarge { size: group.len(), cap });
        }
        let mut types = BTreeSet::new();
        for id in group {
            let q = by_id.get(id.as_str()).ok_or_else(|| CandidateError::UnknownId(id.clone()))?;
            if !seen.insert(id.as_str()) {
                return Err(CandidateError::Duplicate(id.clone()));
            }
            types.insert(q.qtype);
        }
        if types.len() > 1 {
            return Err(CandidateError::MixedTypes);
        }
    }
    if let Some(missing) = questions.iter().find(|q| !seen.contains(q.id.as_str())) {
        return Err(CandidateError::Missing(missing.id.clone()));
    }
    Ok(())
}

pub fn propose_grouping(
    summary: &str,
    questions: &[&QuestionSpec],
    gateway: &Gateway,
    config: &ClusterConfig,
    session_id: Option<&str>,
) -> Result<Vec<Vec<String>>, ClusterError> {
    let items: Vec<QuestionSpec> = questions.iter().map(|q| (*q).clone()).collect();
    let request = prompts::propose_request(summary, &items, config.cap).with_session(session_id);
    let mut last = CandidateError::Unparseable;
    for attempt in 0..=config.retries {
        let response = gateway.complete(&request)?;
        match parse_candidate(&response.text).and_then(|c| check_candidate(&c, questions, config.cap).map(|_| c)) {
            Ok(candidate) => return Ok(candidate),
            Err(e) => {
                log::debug!("grouping attempt {} rejected: {e}", attempt + 1);
                last = e;
            }
        }
    }
    Err(ClusterError::Malformed { attempts: config.retries + 1, last })
}

pub fn signature(groups: &[Vec<String>]) -> Signature {
    let mut sig: Signature = groups
        .iter()
        .map(|g| {
            let mut g = g.clone();
            g.sort();
            g
        })
        .collect();
    sig.sort();
    sig
}

pub fn signature_string(sig: &Signature) -> String {
    sig.iter().map(|g| g.join(",")).collect::<Vec<_>>().join("|")
}

/// Picks the modal signature; ties go to fewer groups, then the lexicographically
/// smaller signature. Returns the winner and its count, or None if no candidate.
pub fn vote_signatures(candidates: &[Signature]) -> Option<(Signature, usize)> {
    let mut counts: BTreeMap<&Signature, usize> = BTreeMap::new();
    for c in candidates {
        *counts.entry(c).or_insert(0) += 1;
    }
    counts
        .into_iter()
        .min_by(|(a, ca), (b, cb)| cb.cmp(ca).then(a.len().cmp(&b.len())).then(a.cmp(b)))
        .map(|(s, c)| (s.clone(), c))
}

/// Orders groups by their earliest member and members by authored position.
pub fn materialize(sig: &Signature, questions: &[&QuestionSpec], prefix: &str) -> Vec<QuestionGroup> {
    let position: BTreeMap<&str, (usize, QuestionType)> = questions
        .iter()
        .map(|q| (q.id.as_str(), (q.ordinal, q.qtype)))
        .collect();
    let mut groups: Vec<Vec<String>> = sig
        .iter()
        .map(|g| {
            let mut g = g.clone();
            g.sort_by_key(|id| position[id.as_str()].0);
            g
        })
        .collect();
    groups.sort_by_key(|g| position[g[0].as_str()].0);
    groups
        .into_iter()
        .enumerate()
        .map(|(i, member_ids)| QuestionGroup {
            group_id: format!("{prefix}{}", i + 1),
            qtype: position[member_ids[0].as_str()].1,
            member_ids,
        })
        .collect()
}

/// Pure aggregation step: invalid (`None`) trials are ignored; with no valid
/// trial the result is one singleton group per question in authored order.
pub fn vote(candidates: &[Option<Vec<Vec<String>>>], questions: &[&QuestionSpec], prefix: &str) -> (Vec<QuestionGroup>, usize) {
    let valid: Vec<Signature> = candidates.iter().flatten().map(|c| signature(c)).collect();
    match vote_signatures(&valid) {
        Some((sig, count)) => (materialize(&sig, questions, prefix), count),
        None => {
            let singletons: Signature = questions.iter().map(|q| vec![q.id.clone()]).collect();
            (materialize(&singletons, questions, prefix), 0)
        }
    }
}

/// Runs `trials` independent abstraction+grouping rounds and votes.
/// Failed trials (malformed output or gateway errors) count as malformed.
pub fn cluster_with_vote(
    form_id: &str,
    questions: &[&QuestionSpec],
    gateway: &Gateway,
    config: &ClusterConfig,
    prefix: &str,
    session_id: Option<&str>,
) -> Grouping {
    let trials = config.trials.max(1);
    let mut candidates = Vec::with_capacity(trials);
    let mut summaries = Vec::new();
    for trial in 0..trials {
        let mut combined = Vec::new();
        let mut ok = true;
        for (qtype, bucket) in partition_by_type(questions) {
            if bucket.is_empty() {
                continue;
            }
            let result = abstract_summary(&bucket, gateway, session_id).and_then(|summary| {
                summaries.push(summary.clone());
                propose_grouping(&summary, &bucket, gateway, config, session_id)
            });
            match result {
                Ok(groups) => combined.extend(groups),
                Err(e) => {
                    log::warn!("clustering trial {} failed for {qtype} bucket: {e}", trial + 1);
                    ok = false;
                    break;
                }
            }
        }
        let valid = ok && check_candidate(&combined, questions, config.cap).is_ok();
        candidates.push(valid.then_some(combined));
    }
    let (groups, vote_count) = vote(&candidates, questions, prefix);
    Grouping {
        source_form_id: form_id.to_string(),
        groups,
        vote_count,
        trials,
        fallback: vote_count == 0,
        summaries,
    }
}

impl fmt::Display for Grouping {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for (i, g) in self.groups.iter().enumerate() {
            writeln!(f, "group {}: [{}] ({})", i + 1, g.member_ids.join(", "), g.qtype)?;
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fixtures;
    use crate::form::FormSpec;
    use crate::gateway::{ScriptedBackend, ScriptedReply};
    use std::sync::Arc;

    fn ids(groups: &[&[&str]]) -> Vec<Vec<String>> {
        groups.iter().map(|g| g.iter().map(|s| s.to_string()).collect()).collect()
    }

    fn three() -> FormSpec {
        let f = fixtures::form1();
        FormSpec::new("t", "t", "1", f.questions[..3].to_vec())
    }

    #[test]
    fn partition_keeps_order_and_sizes() {
        let form = fixtures::form3();
        let refs: Vec<_> = form.questions.iter().collect();
        let buckets = partition_by_type(&refs);
        assert_eq!(buckets.len(), 3);
        assert!(buckets.iter().all(|(_, b)| !b.is_empty()));
        assert_eq!(buckets.iter().map(|(_, b)| b.len()).sum::<usize>(), 53);
        let empty = partition_by_type(&[]);
        assert!(empty.iter().all(|(_, b)| b.is_empty()));
        let f1 = fixtures::form1();
        let refs: Vec<_> = f1.questions.iter().collect();
        assert_eq!(partition_by_type(&refs)[0].1.len(), 10);
    }

    #[test]
    fn candidate_parsing_and_checks() {
        let form = three();
        let a = &form.questions[0].id;
        let b = &form.questions[1].id;
        let c = &form.questions[2].id;
        let refs: Vec<_> = form.questions.iter().collect();
        let good = parse_candidate(&format!("[[{a},{b}],[\"{c}\"]]")).unwrap();
        assert_eq!(good.len(), 2);
        assert!(check_candidate(&good, &refs, 4).is_ok());
        let missing = parse_candidate(&format!("[[{a},{b}]]")).unwrap();
        assert_eq!(check_candidate(&missing, &refs, 4), Err(CandidateError::Missing(c.clone())));
        assert!(parse_candidate("here you go: [[a]]").is_err());
        assert!(parse_candidate("[[a],]").is_err());
        assert!(parse_candidate("[[a,[b]]]").is_err());

        let f3 = fixtures::form3();
        let mixed: Vec<_> = ["smoke", "alcohol", "age"].iter().map(|i| f3.question(i).unwrap()).collect();
        let cand = ids(&[&["smoke", "age"], &["alcohol"]]);
        assert_eq!(check_candidate(&cand, &mixed, 4), Err(CandidateError::MixedTypes));
    }

    #[test]
    fn tie_break_table() {
        let a = signature(&ids(&[&["q1", "q2"], &["q3"]]));
        let b = signature(&ids(&[&["q1"], &["q2"], &["q3"]]));
        let c = signature(&ids(&[&["q1", "q3"], &["q2"]]));
        // strict majority
        assert_eq!(vote_signatures(&[a.clone(), a.clone(), b.clone()]), Some((a.clone(), 2)));
        // one each: fewer groups wins
        assert_eq!(vote_signatures(&[b.clone(), a.clone()]), Some((a.clone(), 1)));
        // same size: lexicographically smaller wins
        assert_eq!(vote_signatures(&[c.clone(), a.clone()]), Some((a.clone(), 1)));
        assert!(a < c);
        // majority beats fewer groups
        assert_eq!(vote_signatures(&[b.clone(), b.clone(), a.clone()]), Some((b, 2)));
        assert_eq!(vote_signatures(&[]), None);
    }

    #[test]
    fn signature_is_idempotent() {
        let s = signature(&ids(&[&["z", "b"], &["a"]]));
        assert_eq!(signature(&s), s);
        assert_eq!(signature_string(&s), "a|b,z");
    }

    #[test]
    fn all_malformed_falls_back_to_singletons() {
        let form = three();
        let refs: Vec<_> = form.questions.iter().collect();
        let mut script = Vec::new();
        for _ in 0..5 {
            script.push(ScriptedReply::text("shared theme"));
            for _ in 0..3 {
                script.push(ScriptedReply::text("I cannot group these"));
            }
        }
        let gw = Gateway::new(Arc::new(ScriptedBackend::queue(script)));
        let grouping = cluster_with_vote("t", &refs, &gw, &ClusterConfig::default(), "g", None);
        assert!(grouping.fallback);
        assert_eq!(grouping.groups.len(), 3);
        assert_eq!(grouping.groups[0].member_ids, vec![form.questions[0].id.clone()]);
    }

    #[test]
    fn scripted_trials_vote_with_retry() {
        let form = three();
        let refs: Vec<_> = form.questions.iter().collect();
        let (a, b, c) = (&form.questions[0].id, &form.questions[1].id, &form.questions[2].id);
        let pair = format!("[[{a},{b}],[{c}]]");
        let singles = format!("[[{a}],[{b}],[{c}]]");
        let mut script = vec![];
        // trial 1: first answer omits a question, retry succeeds
        script.extend([ScriptedReply::text("s"), ScriptedReply::text(format!("[[{a},{b}]]")), ScriptedReply::text(&pair)]);
        script.extend([ScriptedReply::text("s"), ScriptedReply::text(&singles)]);
        script.extend([ScriptedReply::text("s"), ScriptedReply::text(format!("[[{b},{a}],[{c}]]"))]);
        let gw = Gateway::new(Arc::new(ScriptedBackend::queue(script)));
        let config = ClusterConfig { trials: 3, ..ClusterConfig::default() };
        let grouping = cluster_with_vote("t", &refs, &gw, &config, "g", None);
        assert_eq!(grouping.vote_count, 2);
        assert_eq!(grouping.groups.len(), 2);
        assert_eq!(grouping.groups[0].member_ids, vec![a.clone(), b.clone()]);
        assert_eq!(grouping.groups[0].group_id, "g1");
        assert_eq!(grouping.to_string().lines().next().unwrap(), format!("group 1: [{a}, {b}] (single_choice)"));
    }
}
