//! Multi-persona utterance evaluation, unanimity aggregation and the per-turn
//! communication-efficiency score.
//!
//! Score components per nurse utterance:
//!
//! | item               | rule                                   | points |
//! |--------------------|----------------------------------------|--------|
//! | tone               | calm AND clear                         | +1     |
//! | empathy            | level >= 3                             | +1     |
//! | prohibited         | any of the three behaviours            | -1     |
//! | de-escalation      | distinct strategies used so far        | 0..=3  |
//!
//! The raw total spans `-1..=5`; the delivered score clamps it to `0..=5`.

use alloc::borrow::ToOwned;
use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;
use core::fmt;

use serde::{Deserialize, Serialize};

use crate::case::PatientProfile;
use crate::llm::{ChatRequest, GatewayError, LlmGateway, JUDGE_TEMPERATURE};
use crate::tags;
use crate::templates::{fill, PromptTemplates};
use crate::transcript::{self, Line, Speaker};

/// Highest empathy level on the scale.
pub const MAX_EMPATHY_LEVEL: u8 = 6;
/// Minimum empathy level that earns the empathy point.
pub const EMPATHY_THRESHOLD: u8 = 3;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EvaluatorRole {
    ClinicalPsychologist,
    NursingProfessor,
    CommunicationSkillsTrainer,
}

impl EvaluatorRole {
    /// Fixed merge order. Results are always combined in this order.
    pub const ALL: [EvaluatorRole; 3] = [
        EvaluatorRole::ClinicalPsychologist,
        EvaluatorRole::NursingProfessor,
        EvaluatorRole::CommunicationSkillsTrainer,
    ];

    pub fn slug(self) -> &'static str {
        match self {
            Self::ClinicalPsychologist => "clinical_psychologist",
            Self::NursingProfessor => "nursing_professor",
            Self::CommunicationSkillsTrainer => "communication_skills_trainer",
        }
    }

    /// Gateway request tag, `eval.<slug>`.
    pub fn tag(self) -> String {
        format!("eval.{}", self.slug())
    }

    pub fn system_prompt(self, templates: &PromptTemplates) -> &str {
        match self {
            Self::ClinicalPsychologist => &templates.eval_clinical_psychologist,
            Self::NursingProfessor => &templates.eval_nursing_professor,
            Self::CommunicationSkillsTrainer => &templates.eval_communication_trainer,
        }
    }
}

impl fmt::Display for EvaluatorRole {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.slug())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Strategy {
    Autonomy,
    LimitSetting,
    ProblemSolvingReframing,
}

impl Strategy {
    pub const ALL: [Strategy; 3] = [
        Strategy::Autonomy,
        Strategy::LimitSetting,
        Strategy::ProblemSolvingReframing,
    ];

    fn bit(self) -> u8 {
        match self {
            Self::Autonomy => 1,
            Self::LimitSetting => 2,
            Self::ProblemSolvingReframing => 4,
        }
    }
}

/// Set of de-escalation strategies; serialised as a sorted list.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(from = "Vec<Strategy>", into = "Vec<Strategy>")]
pub struct StrategySet(u8);

impl StrategySet {
    pub const EMPTY: StrategySet = StrategySet(0);
    pub const FULL: StrategySet = StrategySet(7);

    /// All eight subsets, smallest bit pattern first.
    pub fn all_subsets() -> impl Iterator<Item = StrategySet> {
        (0u8..8).map(StrategySet)
    }

    pub fn contains(self, s: Strategy) -> bool {
        self.0 & s.bit() != 0
    }

    pub fn insert(&mut self, s: Strategy) {
        self.0 |= s.bit();
    }

    pub fn with(mut self, s: Strategy) -> Self {
        self.insert(s);
        self
    }

    pub fn union(self, other: StrategySet) -> StrategySet {
        StrategySet(self.0 | other.0)
    }

    pub fn is_subset(self, other: StrategySet) -> bool {
        self.0 & !other.0 == 0
    }

    pub fn len(self) -> usize {
        self.0.count_ones() as usize
    }

    pub fn is_empty(self) -> bool {
        self.0 == 0
    }

    pub fn iter(self) -> impl Iterator<Item = Strategy> {
        Strategy::ALL.into_iter().filter(move |s| self.contains(*s))
    }
}

impl FromIterator<Strategy> for StrategySet {
    fn from_iter<I: IntoIterator<Item = Strategy>>(iter: I) -> Self {
        let mut set = StrategySet::EMPTY;
        for s in iter {
            set.insert(s);
        }
        set
    }
}

impl From<Vec<Strategy>> for StrategySet {
    fn from(v: Vec<Strategy>) -> Self {
        v.into_iter().collect()
    }
}

impl From<StrategySet> for Vec<Strategy> {
    fn from(s: StrategySet) -> Self {
        s.iter().collect()
    }
}

/// The scored items of one judgement, without explanations.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
pub struct AssessmentFlags {
    pub calm: bool,
    pub clear: bool,
    pub empathy_level: u8,
    pub autonomy_used: bool,
    pub limit_setting_used: bool,
    pub problem_solving_used: bool,
    pub premature_empathy: bool,
    pub invalidating_beliefs: bool,
    pub dismissive_commands: bool,
}

impl AssessmentFlags {
    /// Strategies used in this utterance.
    pub fn strategies(&self) -> StrategySet {
        let mut s = StrategySet::EMPTY;
        if self.autonomy_used {
            s.insert(Strategy::Autonomy);
        }
        if self.limit_setting_used {
            s.insert(Strategy::LimitSetting);
        }
        if self.problem_solving_used {
            s.insert(Strategy::ProblemSolvingReframing);
        }
        s
    }

    pub fn any_prohibited(&self) -> bool {
        self.premature_empathy || self.invalidating_beliefs || self.dismissive_commands
    }

    /// Unanimity merge: every boolean is the conjunction, empathy the minimum.
    pub fn unanimous(items: &[AssessmentFlags]) -> AssessmentFlags {
        let all = |f: fn(&AssessmentFlags) -> bool| items.iter().all(f);
        AssessmentFlags {
            calm: all(|a| a.calm),
            clear: all(|a| a.clear),
            empathy_level: items.iter().map(|a| a.empathy_level).min().unwrap_or(0),
            autonomy_used: all(|a| a.autonomy_used),
            limit_setting_used: all(|a| a.limit_setting_used),
            problem_solving_used: all(|a| a.problem_solving_used),
            premature_empathy: all(|a| a.premature_empathy),
            invalidating_beliefs: all(|a| a.invalidating_beliefs),
            dismissive_commands: all(|a| a.dismissive_commands),
        }
    }
}

/// One persona's judgement of one nurse utterance.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct UtteranceAssessment {
    pub role: EvaluatorRole,
    pub flags: AssessmentFlags,
    pub tone_explanation: String,
    pub empathy_explanation: String,
    pub autonomy_explanation: String,
    pub limit_setting_explanation: String,
    pub problem_solving_explanation: String,
    pub prohibited_explanation: String,
}

impl UtteranceAssessment {
    /// An assessment with empty explanations, mostly for fixtures.
    pub fn from_flags(role: EvaluatorRole, flags: AssessmentFlags) -> Self {
        Self {
            role,
            flags,
            tone_explanation: String::new(),
            empathy_explanation: String::new(),
            autonomy_explanation: String::new(),
            limit_setting_explanation: String::new(),
            problem_solving_explanation: String::new(),
            prohibited_explanation: String::new(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AggregatedAssessment {
    pub flags: AssessmentFlags,
    /// In [`EvaluatorRole::ALL`] order.
    pub per_role: Vec<UtteranceAssessment>,
    /// True when the personas disagreed on at least one item, so the
    /// unanimity rule decided the outcome.
    pub unanimity_applied: bool,
}

impl AggregatedAssessment {
    pub fn aggregate(per_role: Vec<UtteranceAssessment>) -> Self {
        let flags: Vec<AssessmentFlags> = per_role.iter().map(|a| a.flags).collect();
        let merged = AssessmentFlags::unanimous(&flags);
        let unanimity_applied = flags.iter().any(|f| *f != flags[0]);
        Self {
            flags: merged,
            per_role,
            unanimity_applied,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct CommunicationScore {
    pub tone_points: u8,
    pub empathy_points: u8,
    pub prohibited_points: i8,
    pub deescalation_points: u8,
    pub raw_total: i8,
    pub clamped_total: u8,
}

/// Scores one utterance. `strategies_so_far` is the session's sticky set
/// before this turn; the returned set is after the union.
pub fn score_turn(
    flags: &AssessmentFlags,
    strategies_so_far: StrategySet,
) -> (CommunicationScore, StrategySet) {
    let tone_points = u8::from(flags.calm && flags.clear);
    let empathy_points = u8::from(flags.empathy_level >= EMPATHY_THRESHOLD);
    let prohibited_points = if flags.any_prohibited() { -1 } else { 0 };
    let sticky = strategies_so_far.union(flags.strategies());
    let deescalation_points = sticky.len() as u8;
    let raw_total =
        tone_points as i8 + empathy_points as i8 + prohibited_points + deescalation_points as i8;
    let score = CommunicationScore {
        tone_points,
        empathy_points,
        prohibited_points,
        deescalation_points,
        raw_total,
        clamped_total: raw_total.max(0) as u8,
    };
    (score, sticky)
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum EvaluationError {
    #[error("precondition failed: {0}")]
    Precondition(String),
    #[error("evaluator {role} gateway failure: {error}")]
    Gateway {
        role: EvaluatorRole,
        error: GatewayError,
    },
    #[error("evaluator {} output unreadable ({}): {text}", role.map(|r| r.slug()).unwrap_or("?"), problems.join("; "))]
    Parse {
        role: Option<EvaluatorRole>,
        problems: Vec<String>,
        text: String,
    },
}

/// Requires a non-empty conversation ending with the nurse.
pub fn check_ends_with_nurse(conversation: &[Line]) -> Result<(), EvaluationError> {
    match conversation.last() {
        None => Err(EvaluationError::Precondition("conversation is empty".into())),
        Some(l) if l.speaker != Speaker::Nurse => Err(EvaluationError::Precondition(
            "conversation must end with a nurse utterance".into(),
        )),
        Some(_) => Ok(()),
    }
}

pub fn build_evaluation_prompt(
    profile: &PatientProfile,
    conversation: &[Line],
    role: EvaluatorRole,
    templates: &PromptTemplates,
) -> Result<ChatRequest, EvaluationError> {
    check_ends_with_nurse(conversation)?;
    let user = fill(
        &templates.eval_user,
        &[
            ("PATIENT_PROFILE", &profile.render()),
            ("CONVERSATION", &transcript::render(conversation)),
        ],
    );
    Ok(ChatRequest::new(
        role.tag(),
        role.system_prompt(templates).trim(),
        user,
        JUDGE_TEMPERATURE,
    ))
}

struct Collector {
    problems: Vec<String>,
}

impl Collector {
    fn scope<'a>(&mut self, text: &'a str, name: &str, parent: &str) -> Option<&'a str> {
        match tags::section(text, name) {
            Some(s) => Some(s.inner),
            None => {
                self.missing(name, parent);
                None
            }
        }
    }

    fn missing(&mut self, name: &str, parent: &str) {
        if parent.is_empty() {
            self.problems.push(format!("missing <{name}>"));
        } else {
            self.problems.push(format!("missing <{name}> in <{parent}>"));
        }
    }

    fn yes_no(&mut self, scope: Option<&str>, name: &str, parent: &str) -> bool {
        let Some(scope) = scope else { return false };
        match tags::section(scope, name) {
            None => {
                self.missing(name, parent);
                false
            }
            Some(s) => match tags::yes_no(s.inner) {
                Some(v) => v,
                None => {
                    self.problems
                        .push(format!("<{name}> must be Yes or No, got {:?}", s.inner.trim()));
                    false
                }
            },
        }
    }

    fn text(&mut self, scope: Option<&str>, name: &str, parent: &str) -> String {
        let Some(scope) = scope else { return String::new() };
        match tags::section(scope, name) {
            None => {
                self.missing(name, parent);
                String::new()
            }
            Some(s) => tags::clean_text(s.inner).to_owned(),
        }
    }
}

fn sub<'a>(c: &mut Collector, name: &str, parent: &str, within: Option<&'a str>) -> Option<&'a str> {
    within.and_then(|w| c.scope(w, name, parent))
}

fn parse_level(raw: &str) -> Result<u8, String> {
    let v = tags::clean_value(raw);
    let v = v
        .strip_prefix("Level")
        .or_else(|| v.strip_prefix("level"))
        .unwrap_or(v)
        .trim();
    match v.parse::<i64>() {
        Ok(n) if (0..=MAX_EMPATHY_LEVEL as i64).contains(&n) => Ok(n as u8),
        Ok(_) => Err("empathy level out of range".into()),
        Err(_) => Err(format!("empathy level is not an integer: {v:?}")),
    }
}

/// Parses one persona's `<analysis>` block. Every missing or malformed tag
/// is reported, not just the first.
pub fn parse_assessment(text: &str, role: EvaluatorRole) -> Result<UtteranceAssessment, EvaluationError> {
    let mut c = Collector { problems: Vec::new() };
    let analysis = c.scope(text, "analysis", "");

    let tone = sub(&mut c, "tone", "analysis", analysis);
    let calm = c.yes_no(tone, "calm", "tone");
    let clear = c.yes_no(tone, "clear", "tone");
    let tone_explanation = c.text(tone, "explanation", "tone");

    let empathy = sub(&mut c, "empathy", "analysis", analysis);
    let mut empathy_level = 0;
    if let Some(e) = empathy {
        match tags::section(e, "level") {
            None => c.missing("level", "empathy"),
            Some(s) => match parse_level(s.inner) {
                Ok(v) => empathy_level = v,
                Err(msg) => c.problems.push(msg),
            },
        }
    }
    let empathy_explanation = c.text(empathy, "explanation", "empathy");

    let de = sub(&mut c, "de_escalation", "analysis", analysis);
    let autonomy = sub(&mut c, "autonomy", "de_escalation", de);
    let autonomy_used = c.yes_no(autonomy, "used", "autonomy");
    let autonomy_explanation = c.text(autonomy, "explanation", "autonomy");
    let limit = sub(&mut c, "limit_setting", "de_escalation", de);
    let limit_setting_used = c.yes_no(limit, "used", "limit_setting");
    let limit_setting_explanation = c.text(limit, "explanation", "limit_setting");
    let ps = sub(&mut c, "problem_solving_and_reframing", "de_escalation", de);
    let problem_solving_used = c.yes_no(ps, "used", "problem_solving_and_reframing");
    let problem_solving_explanation = c.text(ps, "explanation", "problem_solving_and_reframing");

    let pb = sub(&mut c, "prohibited_behaviors", "analysis", analysis);
    let premature_empathy = c.yes_no(pb, "premature_empathy", "prohibited_behaviors");
    let invalidating_beliefs = c.yes_no(pb, "invalidating_beliefs", "prohibited_behaviors");
    let dismissive_commands = c.yes_no(pb, "dismissive_commands", "prohibited_behaviors");
    let prohibited_explanation = c.text(pb, "explanation", "prohibited_behaviors");

    if !c.problems.is_empty() {
        return Err(EvaluationError::Parse {
            role: Some(role),
            problems: c.problems,
            text: text.to_owned(),
        });
    }
    Ok(UtteranceAssessment {
        role,
        flags: AssessmentFlags {
            calm,
            clear,
            empathy_level,
            autonomy_used,
            limit_setting_used,
            problem_solving_used,
            premature_empathy,
            invalidating_beliefs,
            dismissive_commands,
        },
        tone_explanation,
        empathy_explanation,
        autonomy_explanation,
        limit_setting_explanation,
        problem_solving_explanation,
        prohibited_explanation,
    })
}

fn yn(b: bool) -> &'static str {
    if b {
        "Yes"
    } else {
        "No"
    }
}

/// Writes an assessment in the evaluator output format (inverse of
/// [`parse_assessment`]).
pub fn format_assessment(a: &UtteranceAssessment) -> String {
    let f = &a.flags;
    format!(
        "<analysis>\n<tone>\n<calm> {} </calm>\n<clear> {} </clear>\n<explanation> {} </explanation>\n</tone>\n\
<empathy>\n<level> {} </level>\n<explanation> {} </explanation>\n</empathy>\n\
<de_escalation>\n<autonomy>\n<used> {} </used>\n<explanation> {} </explanation>\n</autonomy>\n\
<limit_setting>\n<used> {} </used>\n<explanation> {} </explanation>\n</limit_setting>\n\
<problem_solving_and_reframing>\n<used> {} </used>\n<explanation> {} </explanation>\n</problem_solving_and_reframing>\n</de_escalation>\n\
<prohibited_behaviors>\n<premature_empathy> {} </premature_empathy>\n<invalidating_beliefs> {} </invalidating_beliefs>\n<dismissive_commands> {} </dismissive_commands>\n<explanation> {} </explanation>\n</prohibited_behaviors>\n</analysis>",
        yn(f.calm),
        yn(f.clear),
        a.tone_explanation,
        f.empathy_level,
        a.empathy_explanation,
        yn(f.autonomy_used),
        a.autonomy_explanation,
        yn(f.limit_setting_used),
        a.limit_setting_explanation,
        yn(f.problem_solving_used),
        a.problem_solving_explanation,
        yn(f.premature_empathy),
        yn(f.invalidating_beliefs),
        yn(f.dismissive_commands),
        a.prohibited_explanation,
    )
}

/// Runs the three personas and merges their verdicts by unanimity. Any
/// persona failure fails the whole evaluation.
pub fn evaluate_utterance<G: LlmGateway + ?Sized>(
    profile: &PatientProfile,
    conversation: &[Line],
    gateway: &G,
    templates: &PromptTemplates,
) -> Result<AggregatedAssessment, EvaluationError> {
    let requests = EvaluatorRole::ALL
        .iter()
        .map(|&role| build_evaluation_prompt(profile, conversation, role, templates))
        .collect::<Result<Vec<_>, _>>()?;
    let responses = gateway.complete_all(&requests);
    let mut per_role = Vec::with_capacity(3);
    for (role, response) in EvaluatorRole::ALL.into_iter().zip(responses) {
        let response = response.map_err(|error| EvaluationError::Gateway { role, error })?;
        per_role.push(parse_assessment(&response.text, role)?);
    }
    Ok(AggregatedAssessment::aggregate(per_role))
}
