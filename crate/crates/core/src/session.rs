//! Event-sourced session state and the per-turn engine.
//!
//! A session is nothing but its event list. [`run_turn`] computes the events
//! for one nurse utterance without touching the state; the caller persists
//! them and then applies them with [`SessionState::apply_events`], the same
//! function [`SessionState::replay`] uses when reloading a log. Per-turn
//! records (`scored`, `safety_attempt`) are staged and only take effect at
//! `turn_committed` / `turn_failed`, so a log cut anywhere reloads to the last
//! turn boundary.

use alloc::borrow::ToOwned;
use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::adjustment::{direction_text, Condition, Direction, DirectionTable};
use crate::case::PatientProfile;
use crate::evaluation::{
    evaluate_utterance, score_turn, AggregatedAssessment, CommunicationScore, EvaluationError,
    StrategySet,
};
use crate::llm::LlmGateway;
use crate::safety::{vet_and_deliver, SafetyAttempt, SafetyError, SafetyLoopPolicy};
use crate::templates::PromptTemplates;
use crate::transcript::{Line, Speaker};

/// Default cap on nurse turns per session.
pub const DEFAULT_TURN_CAP: u32 = 20;
/// Number of survey items.
pub const SURVEY_ITEMS: usize = 6;

/// Milliseconds since the Unix epoch, supplied by the caller.
pub type Millis = u64;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Turn {
    pub speaker: Speaker,
    pub text: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub non_verbal: Option<String>,
    /// Patient turns only.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub inner_monologue: Option<String>,
    /// Nurse turns in dynamic sessions only.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub score: Option<CommunicationScore>,
    /// Patient turns: the direction the reply was generated under.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub direction: Option<Direction>,
    /// Patient turns after the opener: judged attempts.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub safety_attempts: Option<u32>,
    #[serde(default, skip_serializing_if = "core::ops::Not::not")]
    pub fallback: bool,
    pub at: Millis,
}

impl Turn {
    pub fn line(&self) -> Line {
        Line {
            speaker: self.speaker,
            text: self.text.clone(),
            non_verbal: self.non_verbal.clone(),
        }
    }

    fn nurse(text: &str, score: Option<CommunicationScore>, at: Millis) -> Self {
        Turn {
            speaker: Speaker::Nurse,
            text: text.to_owned(),
            non_verbal: None,
            inner_monologue: None,
            score,
            direction: None,
            safety_attempts: None,
            fallback: false,
            at,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SessionStatus {
    Open,
    Closed,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CloseReason {
    Requested,
    TurnCap,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TrailOutcome {
    Delivered,
    Fallback,
    Failed,
}

/// Every safety attempt of one nurse turn.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TurnTrail {
    pub turn_index: u32,
    pub attempts: Vec<SafetyAttempt>,
    pub outcome: TrailOutcome,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FailedTurn {
    pub turn_index: u32,
    pub nurse_text: String,
    pub error: String,
    pub at: Millis,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SurveyResponse {
    /// Six items on a 1..=5 scale.
    pub items: Vec<u8>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub comment: Option<String>,
}

impl SurveyResponse {
    pub fn validate(&self) -> Result<(), TurnError> {
        if self.items.len() != SURVEY_ITEMS {
            return Err(TurnError::InvalidInput(format!(
                "survey needs {SURVEY_ITEMS} items, got {}",
                self.items.len()
            )));
        }
        if let Some(bad) = self.items.iter().find(|v| !(1..=5).contains(*v)) {
            return Err(TurnError::InvalidInput(format!("survey item {bad} outside 1..=5")));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum SessionEvent {
    Created {
        session_id: String,
        case: PatientProfile,
        condition: Condition,
        opening: Turn,
        at: Millis,
    },
    Scored {
        turn_index: u32,
        assessment: AggregatedAssessment,
        score: CommunicationScore,
        direction: Direction,
    },
    SafetyAttempt {
        turn_index: u32,
        attempt: SafetyAttempt,
    },
    TurnCommitted {
        turn_index: u32,
        nurse: Turn,
        vp: Turn,
        at: Millis,
    },
    TurnFailed {
        turn_index: u32,
        nurse_text: String,
        error: String,
        at: Millis,
    },
    Closed {
        reason: CloseReason,
        at: Millis,
    },
    Survey {
        survey: SurveyResponse,
        at: Millis,
    },
}

impl SessionEvent {
    pub fn kind(&self) -> &'static str {
        match self {
            Self::Created { .. } => "created",
            Self::Scored { .. } => "scored",
            Self::SafetyAttempt { .. } => "safety_attempt",
            Self::TurnCommitted { .. } => "turn_committed",
            Self::TurnFailed { .. } => "turn_failed",
            Self::Closed { .. } => "closed",
            Self::Survey { .. } => "survey",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SessionState {
    pub session_id: String,
    pub case: PatientProfile,
    pub condition: Condition,
    pub turns: Vec<Turn>,
    pub strategies_observed: StrategySet,
    /// One entry per committed nurse turn in dynamic sessions.
    pub score_history: Vec<CommunicationScore>,
    pub assessment_history: Vec<AggregatedAssessment>,
    /// One entry per committed nurse turn; always `None` in static sessions.
    pub direction_history: Vec<Option<Direction>>,
    pub safety_trails: Vec<TurnTrail>,
    pub failed_turns: Vec<FailedTurn>,
    pub surveys: Vec<SurveyResponse>,
    pub created_at: Millis,
    pub updated_at: Millis,
    pub status: SessionStatus,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub close_reason: Option<CloseReason>,
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum ReplayError {
    #[error("event log is empty")]
    Empty,
    #[error("event log must start with a created record, found {0}")]
    MissingCreated(&'static str),
    #[error("record {index} ({kind}) does not fit the session: {reason}")]
    Inconsistent {
        index: usize,
        kind: &'static str,
        reason: String,
    },
}

#[derive(Default)]
struct Staged {
    scored: Option<(u32, AggregatedAssessment, CommunicationScore)>,
    attempts: Vec<SafetyAttempt>,
    turn_index: Option<u32>,
}

impl Staged {
    fn is_empty(&self) -> bool {
        self.scored.is_none() && self.attempts.is_empty()
    }
}

/// Builds the opening patient turn from the case's first statement.
pub fn opening_turn(case: &PatientProfile, at: Millis) -> Turn {
    let (text, cue) = case.opening_line();
    Turn {
        speaker: Speaker::Vp,
        text,
        non_verbal: cue,
        inner_monologue: None,
        score: None,
        direction: None,
        safety_attempts: None,
        fallback: false,
        at,
    }
}

/// The `created` record for a new session.
pub fn create_session(
    session_id: impl Into<String>,
    case: &PatientProfile,
    condition: Condition,
    at: Millis,
) -> SessionEvent {
    SessionEvent::Created {
        session_id: session_id.into(),
        case: case.clone(),
        condition,
        opening: opening_turn(case, at),
        at,
    }
}

impl SessionState {
    /// State right after a `created` record.
    pub fn from_created(event: &SessionEvent) -> Result<Self, ReplayError> {
        let SessionEvent::Created { session_id, case, condition, opening, at } = event else {
            return Err(ReplayError::MissingCreated(event.kind()));
        };
        Ok(SessionState {
            session_id: session_id.clone(),
            case: case.clone(),
            condition: *condition,
            turns: alloc::vec![opening.clone()],
            strategies_observed: StrategySet::EMPTY,
            score_history: Vec::new(),
            assessment_history: Vec::new(),
            direction_history: Vec::new(),
            safety_trails: Vec::new(),
            failed_turns: Vec::new(),
            surveys: Vec::new(),
            created_at: *at,
            updated_at: *at,
            status: SessionStatus::Open,
            close_reason: None,
        })
    }

    /// Rebuilds a session from its log. Trailing staged records without a
    /// commit are ignored.
    pub fn replay<'a, I>(events: I) -> Result<Self, ReplayError>
    where
        I: IntoIterator<Item = &'a SessionEvent>,
    {
        let mut it = events.into_iter();
        let first = it.next().ok_or(ReplayError::Empty)?;
        let mut state = Self::from_created(first)?;
        let mut staged = Staged::default();
        for (i, ev) in it.enumerate() {
            state.apply(&mut staged, ev, i + 1)?;
        }
        Ok(state)
    }

    /// Applies a batch of records produced by [`run_turn`] or the close /
    /// survey helpers. All-or-nothing: on error the state is unchanged.
    pub fn apply_events(&mut self, events: &[SessionEvent]) -> Result<(), ReplayError> {
        let mut next = self.clone();
        let mut staged = Staged::default();
        for (i, ev) in events.iter().enumerate() {
            next.apply(&mut staged, ev, i)?;
        }
        if !staged.is_empty() {
            return Err(ReplayError::Inconsistent {
                index: events.len(),
                kind: "batch",
                reason: "turn records without a commit or failure".into(),
            });
        }
        *self = next;
        Ok(())
    }

    fn apply(&mut self, staged: &mut Staged, ev: &SessionEvent, index: usize) -> Result<(), ReplayError> {
        let bad = |reason: String| ReplayError::Inconsistent { index, kind: ev.kind(), reason };
        let expected = self.nurse_turns() + 1;
        let check_index = |turn_index: u32, staged: &Staged| -> Result<(), ReplayError> {
            if turn_index != expected {
                return Err(bad(format!("turn {turn_index}, expected {expected}")));
            }
            if staged.turn_index.is_some_and(|t| t != turn_index) {
                return Err(bad("records of two turns interleaved".into()));
            }
            Ok(())
        };
        match ev {
            SessionEvent::Created { .. } => return Err(bad("duplicate created record".into())),
            SessionEvent::Scored { turn_index, assessment, score, direction } => {
                check_index(*turn_index, staged)?;
                if self.condition == Condition::Static {
                    return Err(bad("static sessions are never scored".into()));
                }
                if direction.score != score.clamped_total {
                    return Err(bad("direction does not match score".into()));
                }
                staged.turn_index = Some(*turn_index);
                staged.scored = Some((*turn_index, assessment.clone(), *score));
            }
            SessionEvent::SafetyAttempt { turn_index, attempt } => {
                check_index(*turn_index, staged)?;
                staged.turn_index = Some(*turn_index);
                staged.attempts.push(attempt.clone());
            }
            SessionEvent::TurnCommitted { turn_index, nurse, vp, at } => {
                check_index(*turn_index, staged)?;
                if self.status == SessionStatus::Closed {
                    return Err(bad("session is closed".into()));
                }
                if nurse.speaker != Speaker::Nurse || vp.speaker != Speaker::Vp {
                    return Err(bad("speakers out of order".into()));
                }
                let scored = staged.scored.take();
                match (self.condition, &scored) {
                    (Condition::Dynamic, None) => return Err(bad("dynamic turn without a score".into())),
                    (Condition::Dynamic, Some((_, _, s))) if nurse.score != Some(*s) => {
                        return Err(bad("nurse turn score differs from scored record".into()))
                    }
                    _ => {}
                }
                if let Some((_, assessment, score)) = scored {
                    self.strategies_observed =
                        self.strategies_observed.union(assessment.flags.strategies());
                    self.score_history.push(score);
                    self.assessment_history.push(assessment);
                }
                self.direction_history.push(vp.direction.clone());
                let attempts = core::mem::take(&mut staged.attempts);
                if !attempts.is_empty() {
                    self.safety_trails.push(TurnTrail {
                        turn_index: *turn_index,
                        attempts,
                        outcome: if vp.fallback { TrailOutcome::Fallback } else { TrailOutcome::Delivered },
                    });
                }
                self.turns.push(nurse.clone());
                self.turns.push(vp.clone());
                self.updated_at = *at;
                staged.turn_index = None;
            }
            SessionEvent::TurnFailed { turn_index, nurse_text, error, at } => {
                check_index(*turn_index, staged)?;
                let attempts = core::mem::take(&mut staged.attempts);
                staged.scored = None;
                staged.turn_index = None;
                self.safety_trails.push(TurnTrail {
                    turn_index: *turn_index,
                    attempts,
                    outcome: TrailOutcome::Failed,
                });
                self.failed_turns.push(FailedTurn {
                    turn_index: *turn_index,
                    nurse_text: nurse_text.clone(),
                    error: error.clone(),
                    at: *at,
                });
                self.updated_at = *at;
            }
            SessionEvent::Closed { reason, at } => {
                if !staged.is_empty() {
                    return Err(bad("close in the middle of a turn".into()));
                }
                if self.status == SessionStatus::Closed {
                    return Err(bad("session already closed".into()));
                }
                self.status = SessionStatus::Closed;
                self.close_reason = Some(*reason);
                self.updated_at = *at;
            }
            SessionEvent::Survey { survey, at } => {
                self.surveys.push(survey.clone());
                self.updated_at = *at;
            }
        }
        Ok(())
    }

    pub fn nurse_turns(&self) -> u32 {
        self.turns.iter().filter(|t| t.speaker == Speaker::Nurse).count() as u32
    }

    pub fn lines(&self) -> Vec<Line> {
        self.turns.iter().map(Turn::line).collect()
    }

    pub fn is_open(&self) -> bool {
        self.status == SessionStatus::Open
    }

    /// The record that closes the session.
    pub fn close(&self, reason: CloseReason, at: Millis) -> Result<SessionEvent, TurnError> {
        if !self.is_open() {
            return Err(TurnError::SessionClosed);
        }
        Ok(SessionEvent::Closed { reason, at })
    }

    pub fn survey(&self, survey: SurveyResponse, at: Millis) -> Result<SessionEvent, TurnError> {
        survey.validate()?;
        Ok(SessionEvent::Survey { survey, at })
    }

    pub fn export(&self, view: View) -> TranscriptExport {
        TranscriptExport::build(self, view)
    }
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum TurnError {
    #[error("session is closed")]
    SessionClosed,
    #[error("another turn is already in flight for this session")]
    ConcurrentTurn,
    #[error("invalid input: {0}")]
    InvalidInput(String),
    #[error(transparent)]
    Evaluation(#[from] EvaluationError),
    #[error("direction lookup failed: {0}")]
    Direction(String),
    #[error(transparent)]
    Safety(#[from] SafetyError),
}

/// A turn that did not commit. `events` still has to be persisted: it holds
/// the attempt trail and the `turn_failed` record.
#[derive(Debug, Clone, PartialEq)]
pub struct TurnFailure {
    pub events: Vec<SessionEvent>,
    pub error: TurnError,
}

impl From<TurnError> for TurnFailure {
    fn from(error: TurnError) -> Self {
        TurnFailure { events: Vec::new(), error }
    }
}

/// Everything a turn needs besides the state and gateway.
#[derive(Debug, Clone, Copy)]
pub struct TurnContext<'a> {
    pub templates: &'a PromptTemplates,
    pub directions: &'a DirectionTable,
    pub policy: SafetyLoopPolicy,
    pub turn_cap: u32,
}

/// Computes the records of one nurse turn. The state is not modified.
pub fn run_turn<G: LlmGateway + ?Sized>(
    state: &SessionState,
    nurse_text: &str,
    ctx: &TurnContext<'_>,
    gateway: &G,
    now: Millis,
) -> Result<Vec<SessionEvent>, TurnFailure> {
    if !state.is_open() {
        return Err(TurnError::SessionClosed.into());
    }
    let nurse_text = nurse_text.trim();
    if nurse_text.is_empty() {
        return Err(TurnError::InvalidInput("empty message".into()).into());
    }
    let turn_index = state.nurse_turns() + 1;
    let mut events = Vec::new();
    let fail = |mut events: Vec<SessionEvent>, error: TurnError| {
        events.push(SessionEvent::TurnFailed {
            turn_index,
            nurse_text: nurse_text.to_owned(),
            error: error.to_string(),
            at: now,
        });
        TurnFailure { events, error }
    };

    let mut conversation = state.lines();
    conversation.push(Line::nurse(nurse_text));

    let mut nurse_score = None;
    let mut direction = None;
    if state.condition == Condition::Dynamic {
        let assessment = match evaluate_utterance(&state.case, &conversation, gateway, ctx.templates) {
            Ok(a) => a,
            Err(e) => return Err(fail(events, e.into())),
        };
        let (score, _) = score_turn(&assessment.flags, state.strategies_observed);
        let row = match ctx.directions.direct(score.clamped_total as i64) {
            Ok(d) => d.clone(),
            Err(e) => return Err(fail(events, TurnError::Direction(e.to_string()))),
        };
        events.push(SessionEvent::Scored {
            turn_index,
            assessment,
            score,
            direction: row.clone(),
        });
        nurse_score = Some(score);
        direction = Some(row);
    }

    let text = direction_text(direction.as_ref());
    let outcome = vet_and_deliver(&state.case, &conversation, &text, &ctx.policy, gateway, ctx.templates);
    let (delivered, trail) = match outcome {
        Ok(d) => {
            let trail = d.trail.clone();
            (Some(d), trail)
        }
        Err(f) => {
            events.extend(f.trail.into_iter().map(|attempt| SessionEvent::SafetyAttempt { turn_index, attempt }));
            return Err(fail(events, f.error.into()));
        }
    };
    events.extend(trail.into_iter().map(|attempt| SessionEvent::SafetyAttempt { turn_index, attempt }));
    let delivered = delivered.unwrap_or_else(|| unreachable!());
    let r = delivered.response;
    let vp = Turn {
        speaker: Speaker::Vp,
        text: r.verbal,
        non_verbal: (!r.non_verbal.is_empty()).then_some(r.non_verbal),
        inner_monologue: (!r.inner_monologue.is_empty()).then_some(r.inner_monologue),
        score: None,
        direction,
        safety_attempts: Some(delivered.attempts),
        fallback: delivered.fallback,
        at: now,
    };
    events.push(SessionEvent::TurnCommitted {
        turn_index,
        nurse: Turn::nurse(nurse_text, nurse_score, now),
        vp,
        at: now,
    });
    if turn_index >= ctx.turn_cap {
        events.push(SessionEvent::Closed { reason: CloseReason::TurnCap, at: now });
    }
    Ok(events)
}

// ---------------------------------------------------------------------------
// Exports
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum View {
    Trainee,
    Instructor,
}

impl View {
    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "trainee" => Some(Self::Trainee),
            "instructor" => Some(Self::Instructor),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ExportTurn {
    pub index: usize,
    pub speaker: Speaker,
    pub text: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub non_verbal: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub inner_monologue: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub score: Option<CommunicationScore>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub direction: Option<Direction>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub safety_attempts: Option<u32>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub fallback: Option<bool>,
}

/// A session transcript shaped for one audience. The trainee view carries
/// only what the patient visibly said and did.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TranscriptExport {
    pub view: View,
    pub session_id: String,
    pub case_id: String,
    pub patient_name: String,
    pub status: SessionStatus,
    pub turns: Vec<ExportTurn>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub condition: Option<Condition>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub strategies_observed: Option<StrategySet>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub assessments: Option<Vec<AggregatedAssessment>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub safety_trails: Option<Vec<TurnTrail>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub failed_turns: Option<Vec<FailedTurn>>,
}

impl TranscriptExport {
    fn build(s: &SessionState, view: View) -> Self {
        let instructor = view == View::Instructor;
        let turns = s
            .turns
            .iter()
            .enumerate()
            .map(|(index, t)| ExportTurn {
                index,
                speaker: t.speaker,
                text: t.text.clone(),
                non_verbal: t.non_verbal.clone(),
                inner_monologue: t.inner_monologue.clone().filter(|_| instructor),
                score: t.score.filter(|_| instructor),
                direction: t.direction.clone().filter(|_| instructor),
                safety_attempts: t.safety_attempts.filter(|_| instructor),
                fallback: (instructor && t.speaker == Speaker::Vp).then_some(t.fallback),
            })
            .collect();
        TranscriptExport {
            view,
            session_id: s.session_id.clone(),
            case_id: s.case.id.clone(),
            patient_name: s.case.name.clone(),
            status: s.status,
            turns,
            condition: instructor.then_some(s.condition),
            strategies_observed: instructor.then_some(s.strategies_observed),
            assessments: instructor.then(|| s.assessment_history.clone()),
            safety_trails: instructor.then(|| s.safety_trails.clone()),
            failed_turns: instructor.then(|| s.failed_turns.clone()),
        }
    }

    /// Plain-text rendering: `Patient: (cue) words` / `Nurse: words`, with
    /// instructor annotations in brackets.
    pub fn to_text(&self) -> String {
        let mut out = format!("Session {} — {} ({})\n", self.session_id, self.patient_name, self.case_id);
        for t in &self.turns {
            let who = match t.speaker {
                Speaker::Vp => "Patient",
                Speaker::Nurse => "Nurse",
            };
            out.push_str(who);
            out.push_str(": ");
            if let Some(cue) = &t.non_verbal {
                out.push_str(&format!("({cue}) "));
            }
            out.push_str(&t.text);
            out.push('\n');
            if let Some(s) = &t.score {
                out.push_str(&format!(
                    "  [score {} = tone {} + empathy {} + prohibited {} + de-escalation {}]\n",
                    s.clamped_total, s.tone_points, s.empathy_points, s.prohibited_points, s.deescalation_points
                ));
            }
            if let Some(m) = &t.inner_monologue {
                out.push_str(&format!("  [inner: {m}]\n"));
            }
            if let Some(d) = &t.direction {
                out.push_str(&format!("  [direction {}: {}]\n", d.score, d.communication_style));
            }
            if let Some(n) = t.safety_attempts {
                let tag = if t.fallback == Some(true) { ", fallback" } else { "" };
                out.push_str(&format!("  [safety attempts {n}{tag}]\n"));
            }
        }
        out
    }
}
