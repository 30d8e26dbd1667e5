//! Virtual-patient reply generation: prompt assembly, the tripartite
//! (inner monologue / verbal / non-verbal) parser, and one format re-ask.

use alloc::borrow::ToOwned;
use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::case::PatientProfile;
use crate::llm::{ChatRequest, GatewayError, LlmGateway, PATIENT_TEMPERATURE};
use crate::tags;
use crate::templates::{fill, PromptTemplates};
use crate::transcript::{self, Line};

/// Request tag for patient generation.
pub const GENERATE_TAG: &str = "generate";
/// Request tag for the format re-ask.
pub const REASK_TAG: &str = "generate.reask";
/// Format re-asks allowed before a parse error surfaces.
pub const FORMAT_REASK_BUDGET: u32 = 1;

const WARNING_SLOT_LINE: &str = "{SAFETY_AGENT_WARNING}\n";

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TripartiteResponse {
    /// Patient reasoning. Instructor-only.
    pub inner_monologue: String,
    pub verbal: String,
    pub non_verbal: String,
}

impl TripartiteResponse {
    /// The delivered part as a transcript line.
    pub fn line(&self) -> Line {
        let cue = (!self.non_verbal.trim().is_empty()).then(|| self.non_verbal.clone());
        Line::vp(self.verbal.clone(), cue)
    }

    /// Writes the response in the generator output format.
    pub fn to_tagged_text(&self) -> String {
        format!(
            "<inner_monologue>{}</inner_monologue>\n<conversation>{}</conversation>\n<non_verbal>{}</non_verbal>",
            self.inner_monologue, self.verbal, self.non_verbal
        )
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SafetyWarning {
    pub inappropriate_response: String,
    pub reason: String,
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum GenerationError {
    #[error(transparent)]
    Gateway(#[from] GatewayError),
    #[error("patient reply unreadable ({}): {text}", problems.join("; "))]
    Parse { problems: Vec<String>, text: String },
}

pub fn build_generation_prompt(
    profile: &PatientProfile,
    conversation: &[Line],
    direction_text: &str,
    warning: Option<&SafetyWarning>,
    templates: &PromptTemplates,
) -> ChatRequest {
    let warning_block = warning.map(|w| {
        fill(
            &templates.generation_warning,
            &[
                ("INAPPROPRIATE_RESPONSE", &w.inappropriate_response),
                ("REASON_FOR_INAPPROPRIATENESS", &w.reason),
            ],
        )
    });
    let template = match &warning_block {
        Some(_) => templates.generation_user.clone(),
        None => templates
            .generation_user
            .replace(WARNING_SLOT_LINE, "")
            .replace("{SAFETY_AGENT_WARNING}", ""),
    };
    let user = fill(
        &template,
        &[
            ("PATIENT_PROFILE", &profile.render()),
            ("NURSE_RESPONSE", &transcript::render(conversation)),
            ("DIRECTION", direction_text),
            (
                "SAFETY_AGENT_WARNING",
                warning_block.as_deref().map(str::trim_end).unwrap_or(""),
            ),
        ],
    );
    ChatRequest::new(
        GENERATE_TAG,
        templates.generation_system.trim(),
        user,
        PATIENT_TEMPERATURE,
    )
}

/// Extracts the three sections in any order; surrounding prose is ignored.
pub fn parse_tripartite(text: &str) -> Result<TripartiteResponse, GenerationError> {
    let mut problems = Vec::new();
    let mut take = |name: &str| match tags::inner(text, name) {
        None => {
            problems.push(format!("missing <{name}>"));
            String::new()
        }
        Some("") => {
            problems.push(format!("empty <{name}>"));
            String::new()
        }
        Some(v) => v.to_owned(),
    };
    let inner_monologue = take("inner_monologue");
    let verbal = take("conversation");
    let non_verbal = take("non_verbal");
    if !problems.is_empty() {
        return Err(GenerationError::Parse {
            problems,
            text: text.to_owned(),
        });
    }
    Ok(TripartiteResponse {
        inner_monologue,
        verbal,
        non_verbal,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct Generated {
    pub response: TripartiteResponse,
    /// Format re-asks spent (0 or 1).
    pub format_retries: u32,
    /// Exactly what was sent on the first call.
    pub prompt: ChatRequest,
}

/// One generation call, plus one re-ask with a format reminder if the reply
/// cannot be parsed.
pub fn generate_vp_response<G: LlmGateway + ?Sized>(
    profile: &PatientProfile,
    conversation: &[Line],
    direction_text: &str,
    warning: Option<&SafetyWarning>,
    gateway: &G,
    templates: &PromptTemplates,
) -> Result<Generated, GenerationError> {
    let prompt = build_generation_prompt(profile, conversation, direction_text, warning, templates);
    let mut request = prompt.clone();
    let mut retries = 0;
    loop {
        let response = gateway.complete(&request)?;
        match parse_tripartite(&response.text) {
            Ok(parsed) => {
                return Ok(Generated {
                    response: parsed,
                    format_retries: retries,
                    prompt,
                })
            }
            Err(e) if retries >= FORMAT_REASK_BUDGET => return Err(e),
            Err(_) => {
                retries += 1;
                request = prompt.clone();
                request.tag = REASK_TAG.into();
                request.user_prompt = format!(
                    "{}\n\n{}",
                    prompt.user_prompt.trim_end(),
                    templates.generation_format_reminder.trim()
                );
            }
        }
    }
}
