//! Batch evaluation of recorded conversations.
//!
//! Input is JSON lines, one conversation per line:
//! `{"session_id": "...", "case_id": "3", "turns": [{"speaker": "vp", ...}, ...], ...}`.
//! Any other fields (cohort, condition, site...) are carried through to the
//! output so reports can group by them.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use serde_json::Value;
use vpsim_core::case::CaseCollection;
use vpsim_core::evaluation::{evaluate_utterance, score_turn, EvaluationError};
use vpsim_core::templates::PromptTemplates;
use vpsim_core::{AggregatedAssessment, CommunicationScore, Line, LlmGateway, PatientProfile, Speaker, StrategySet};

/// Default number of nurse turns evaluated per conversation.
pub const DEFAULT_TRUNCATION: usize = 5;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorpusRecord {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub session_id: Option<String>,
    pub case_id: String,
    pub turns: Vec<Line>,
    #[serde(flatten)]
    pub extra: BTreeMap<String, Value>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvaluatedTurn {
    pub session_id: String,
    pub case_id: String,
    /// 1-based nurse turn number.
    pub turn: usize,
    pub nurse_text: String,
    pub assessment: AggregatedAssessment,
    pub score: CommunicationScore,
    #[serde(flatten)]
    pub extra: BTreeMap<String, Value>,
}

#[derive(Debug, thiserror::Error)]
pub enum CorpusError {
    #[error("line {line}: {reason}")]
    Parse { line: usize, reason: String },
    #[error("line {line}: unknown case {case_id:?}")]
    UnknownCase { line: usize, case_id: String },
    #[error("line {line}, nurse turn {turn}: {source}")]
    Evaluation { line: usize, turn: usize, source: EvaluationError },
}

pub fn parse_corpus(text: &str) -> Result<Vec<CorpusRecord>, CorpusError> {
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| serde_json::from_str(l).map_err(|e| CorpusError::Parse { line: i + 1, reason: e.to_string() }))
        .collect()
}

/// Evaluates the first `truncation` nurse turns of every conversation, each
/// in the context of everything said before it.
pub fn evaluate_corpus<G: LlmGateway + ?Sized>(
    records: &[CorpusRecord],
    cases: &CaseCollection,
    gateway: &G,
    templates: &PromptTemplates,
    truncation: usize,
) -> Result<Vec<EvaluatedTurn>, CorpusError> {
    let mut out = Vec::new();
    for (i, rec) in records.iter().enumerate() {
        let line = i + 1;
        let case: &PatientProfile = cases
            .get(&rec.case_id)
            .ok_or_else(|| CorpusError::UnknownCase { line, case_id: rec.case_id.clone() })?;
        let session_id = rec.session_id.clone().unwrap_or_else(|| format!("line-{line}"));
        let mut strategies = StrategySet::EMPTY;
        let mut turn = 0;
        for (k, l) in rec.turns.iter().enumerate() {
            if l.speaker != Speaker::Nurse {
                continue;
            }
            turn += 1;
            if turn > truncation {
                break;
            }
            let assessment = evaluate_utterance(case, &rec.turns[..=k], gateway, templates)
                .map_err(|source| CorpusError::Evaluation { line, turn, source })?;
            let (score, sticky) = score_turn(&assessment.flags, strategies);
            strategies = sticky;
            out.push(EvaluatedTurn {
                session_id: session_id.clone(),
                case_id: rec.case_id.clone(),
                turn,
                nurse_text: l.text.clone(),
                assessment,
                score,
                extra: rec.extra.clone(),
            });
        }
    }
    Ok(out)
}

pub fn parse_evaluated(text: &str) -> Result<Vec<EvaluatedTurn>, CorpusError> {
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| serde_json::from_str(l).map_err(|e| CorpusError::Parse { line: i + 1, reason: e.to_string() }))
        .collect()
}

pub fn to_jsonl<T: Serialize>(rows: &[T]) -> String {
    let mut s = String::new();
    for r in rows {
        s.push_str(&serde_json::to_string(r).expect("serializable"));
        s.push('\n');
    }
    s
}
