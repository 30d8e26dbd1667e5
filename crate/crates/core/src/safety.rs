//! Four-criterion safety judge and the bounded revise-and-regenerate loop.

use alloc::borrow::ToOwned;
use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::case::PatientProfile;
use crate::generation::{generate_vp_response, GenerationError, SafetyWarning, TripartiteResponse};
use crate::llm::{ChatRequest, GatewayError, LlmGateway, JUDGE_TEMPERATURE};
use crate::tags;
use crate::templates::{fill, PromptTemplates};
use crate::transcript::{self, Line, Speaker};

pub const SAFETY_TAG: &str = "safety";
pub const DEFAULT_MAX_REVISIONS: u32 = 3;

/// Criterion tags in the fixed order used for reasons.
pub const CRITERIA: [&str; 4] = [
    "profile_alignment",
    "direction_adherence",
    "dialogue_effectiveness",
    "nurse_safety",
];

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CriterionJudgement {
    pub passed: bool,
    pub explanation: String,
}

impl CriterionJudgement {
    pub fn pass(explanation: impl Into<String>) -> Self {
        Self { passed: true, explanation: explanation.into() }
    }

    pub fn fail(explanation: impl Into<String>) -> Self {
        Self { passed: false, explanation: explanation.into() }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SafetyVerdict {
    pub profile_alignment: CriterionJudgement,
    pub direction_adherence: CriterionJudgement,
    pub dialogue_effectiveness: CriterionJudgement,
    pub nurse_safety: CriterionJudgement,
    /// True iff all four criteria passed.
    pub accepted: bool,
}

impl SafetyVerdict {
    pub fn new(criteria: [CriterionJudgement; 4]) -> Self {
        let accepted = criteria.iter().all(|c| c.passed);
        let [profile_alignment, direction_adherence, dialogue_effectiveness, nurse_safety] = criteria;
        Self {
            profile_alignment,
            direction_adherence,
            dialogue_effectiveness,
            nurse_safety,
            accepted,
        }
    }

    pub fn criteria(&self) -> [(&'static str, &CriterionJudgement); 4] {
        [
            (CRITERIA[0], &self.profile_alignment),
            (CRITERIA[1], &self.direction_adherence),
            (CRITERIA[2], &self.dialogue_effectiveness),
            (CRITERIA[3], &self.nurse_safety),
        ]
    }

    /// Failing explanations in criterion order, joined by a space. An empty
    /// explanation is replaced by the criterion name.
    pub fn rejection_reason(&self) -> Option<String> {
        let parts: Vec<&str> = self
            .criteria()
            .into_iter()
            .filter(|(_, c)| !c.passed)
            .map(|(name, c)| if c.explanation.is_empty() { name } else { c.explanation.as_str() })
            .collect();
        (!parts.is_empty()).then(|| parts.join(" "))
    }

    /// Writes the verdict in the judge output format.
    pub fn to_tagged_text(&self) -> String {
        let mut out = String::from("<evaluation>\n");
        for (name, c) in self.criteria() {
            out.push_str(&format!(
                "<{name}>\n<judge>{}</judge>\n<explanation> {} </explanation>\n</{name}>\n",
                if c.passed { "True" } else { "False" },
                c.explanation
            ));
        }
        out.push_str("</evaluation>");
        out
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OnExhaustion {
    DeliverSanitizedFallback,
    FailTurn,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SafetyLoopPolicy {
    /// Regenerations allowed after the first rejection.
    pub max_revisions: u32,
    pub on_exhaustion: OnExhaustion,
}

impl SafetyLoopPolicy {
    pub fn interactive() -> Self {
        Self { max_revisions: DEFAULT_MAX_REVISIONS, on_exhaustion: OnExhaustion::DeliverSanitizedFallback }
    }

    pub fn batch() -> Self {
        Self { max_revisions: DEFAULT_MAX_REVISIONS, on_exhaustion: OnExhaustion::FailTurn }
    }

    pub fn validate(&self) -> Result<(), SafetyError> {
        if self.max_revisions == 0 {
            return Err(SafetyError::Policy("max_revisions must be at least 1".into()));
        }
        Ok(())
    }

    pub fn total_attempts(&self) -> u32 {
        1 + self.max_revisions
    }
}

impl Default for SafetyLoopPolicy {
    fn default() -> Self {
        Self::interactive()
    }
}

/// One generate→judge round.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SafetyAttempt {
    /// 1-based.
    pub attempt: u32,
    pub warning: Option<SafetyWarning>,
    pub candidate: TripartiteResponse,
    pub verdict: SafetyVerdict,
    pub format_retries: u32,
}

#[derive(Debug, Clone, PartialEq, thiserror::Error, Serialize, Deserialize)]
pub enum SafetyError {
    #[error("invalid safety policy: {0}")]
    Policy(String),
    #[error("precondition failed: {0}")]
    Precondition(String),
    #[error("generation failed: {0}")]
    Generation(String),
    #[error("safety judge gateway failure: {0}")]
    JudgeGateway(GatewayError),
    #[error("safety judge output unreadable ({}): {text}", problems.join("; "))]
    JudgeParse { problems: Vec<String>, text: String },
    #[error("safety judge rejected all {attempts} candidate(s)")]
    Exhausted { attempts: u32 },
}

impl From<GenerationError> for SafetyError {
    fn from(e: GenerationError) -> Self {
        SafetyError::Generation(format!("{e}"))
    }
}

pub fn build_judge_request(
    profile: &PatientProfile,
    direction_text: &str,
    conversation_with_candidate: &[Line],
    templates: &PromptTemplates,
) -> Result<ChatRequest, SafetyError> {
    match conversation_with_candidate.last() {
        Some(l) if l.speaker == Speaker::Vp => {}
        _ => {
            return Err(SafetyError::Precondition(
                "judged conversation must end with the candidate patient line".into(),
            ))
        }
    }
    let user = fill(
        &templates.safety_user,
        &[
            ("PROFILE", &profile.render()),
            ("DIRECTION", direction_text),
            ("CONVERSATION", &transcript::render(conversation_with_candidate)),
        ],
    );
    Ok(ChatRequest::new(SAFETY_TAG, templates.safety_system.trim(), user, JUDGE_TEMPERATURE))
}

/// Parses an `<evaluation>` block with four `<judge>True/False</judge>` criteria.
pub fn parse_verdict(text: &str) -> Result<SafetyVerdict, SafetyError> {
    let mut problems = Vec::new();
    let Some(evaluation) = tags::section(text, "evaluation") else {
        return Err(SafetyError::JudgeParse {
            problems: alloc::vec!["missing <evaluation>".into()],
            text: text.to_owned(),
        });
    };
    let mut judged: Vec<CriterionJudgement> = Vec::with_capacity(4);
    for name in CRITERIA {
        let Some(block) = tags::section(evaluation.inner, name) else {
            problems.push(format!("missing <{name}>"));
            judged.push(CriterionJudgement::fail(""));
            continue;
        };
        let passed = match tags::section(block.inner, "judge") {
            None => {
                problems.push(format!("missing <judge> in <{name}>"));
                false
            }
            Some(j) => match tags::true_false(j.inner) {
                Some(v) => v,
                None => {
                    problems.push(format!("<judge> in <{name}> must be True or False, got {:?}", j.inner.trim()));
                    false
                }
            },
        };
        let explanation = match tags::section(block.inner, "explanation") {
            None => {
                problems.push(format!("missing <explanation> in <{name}>"));
                String::new()
            }
            Some(e) => tags::clean_text(e.inner).to_owned(),
        };
        judged.push(CriterionJudgement { passed, explanation });
    }
    if !problems.is_empty() {
        return Err(SafetyError::JudgeParse { problems, text: text.to_owned() });
    }
    let mut it = judged.into_iter();
    let mut next = || it.next().unwrap_or_else(|| CriterionJudgement::fail(""));
    Ok(SafetyVerdict::new([next(), next(), next(), next()]))
}

pub fn judge<G: LlmGateway + ?Sized>(
    profile: &PatientProfile,
    direction_text: &str,
    conversation_with_candidate: &[Line],
    gateway: &G,
    templates: &PromptTemplates,
) -> Result<SafetyVerdict, SafetyError> {
    let request = build_judge_request(profile, direction_text, conversation_with_candidate, templates)?;
    let response = gateway.complete(&request).map_err(SafetyError::JudgeGateway)?;
    parse_verdict(&response.text)
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Delivered {
    pub response: TripartiteResponse,
    /// Judged attempts, equal to `trail.len()`.
    pub attempts: u32,
    pub trail: Vec<SafetyAttempt>,
    /// True when the sanitized fallback line was delivered.
    pub fallback: bool,
}

/// A failed loop, with every attempt judged so far.
#[derive(Debug, Clone, PartialEq)]
pub struct VetFailure {
    pub error: SafetyError,
    pub trail: Vec<SafetyAttempt>,
}

/// The sanitized fallback reply for a profile.
pub fn fallback_response(profile: &PatientProfile) -> TripartiteResponse {
    let (_, cue) = profile.opening_line();
    TripartiteResponse {
        inner_monologue: String::new(),
        verbal: profile.fallback_statement(),
        non_verbal: cue.unwrap_or_default(),
    }
}

/// Generates, judges, and regenerates with a warning until a candidate is
/// accepted or `1 + max_revisions` attempts have been judged.
pub fn vet_and_deliver<G: LlmGateway + ?Sized>(
    profile: &PatientProfile,
    conversation: &[Line],
    direction_text: &str,
    policy: &SafetyLoopPolicy,
    gateway: &G,
    templates: &PromptTemplates,
) -> Result<Delivered, VetFailure> {
    let fail = |error: SafetyError, trail: Vec<SafetyAttempt>| VetFailure { error, trail };
    if let Err(e) = policy.validate() {
        return Err(fail(e, Vec::new()));
    }
    let mut trail: Vec<SafetyAttempt> = Vec::new();
    let mut warning: Option<SafetyWarning> = None;
    for attempt in 1..=policy.total_attempts() {
        let generated = match generate_vp_response(
            profile,
            conversation,
            direction_text,
            warning.as_ref(),
            gateway,
            templates,
        ) {
            Ok(g) => g,
            Err(e) => return Err(fail(e.into(), trail)),
        };
        let mut judged: Vec<Line> = conversation.to_vec();
        judged.push(generated.response.line());
        let verdict = match judge(profile, direction_text, &judged, gateway, templates) {
            Ok(v) => v,
            Err(e) => return Err(fail(e, trail)),
        };
        let accepted = verdict.accepted;
        let next_warning = verdict.rejection_reason().map(|reason| SafetyWarning {
            inappropriate_response: generated.response.verbal.clone(),
            reason,
        });
        trail.push(SafetyAttempt {
            attempt,
            warning: warning.take(),
            candidate: generated.response.clone(),
            verdict,
            format_retries: generated.format_retries,
        });
        if accepted {
            return Ok(Delivered { response: generated.response, attempts: attempt, trail, fallback: false });
        }
        warning = next_warning;
    }
    let attempts = trail.len() as u32;
    match policy.on_exhaustion {
        OnExhaustion::FailTurn => Err(fail(SafetyError::Exhausted { attempts }, trail)),
        OnExhaustion::DeliverSanitizedFallback => Ok(Delivered {
            response: fallback_response(profile),
            attempts,
            trail,
            fallback: true,
        }),
    }
}
