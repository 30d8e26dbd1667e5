//! Conversation lines as they are shown to evaluators and generators.

use alloc::format;
use alloc::string::String;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Speaker {
    #[serde(alias = "VP", alias = "patient")]
    Vp,
    #[serde(alias = "Nurse")]
    Nurse,
}

/// One rendered utterance. Inner monologue never appears here.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Line {
    pub speaker: Speaker,
    pub text: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub non_verbal: Option<String>,
}

impl Line {
    pub fn nurse(text: impl Into<String>) -> Self {
        Self {
            speaker: Speaker::Nurse,
            text: text.into(),
            non_verbal: None,
        }
    }

    pub fn vp(text: impl Into<String>, non_verbal: Option<String>) -> Self {
        Self {
            speaker: Speaker::Vp,
            text: text.into(),
            non_verbal,
        }
    }
}

/// Renders lines as `Patient: (cue) words` / `Nurse: words`, one per line.
pub fn render(lines: &[Line]) -> String {
    let mut out = String::new();
    for (i, line) in lines.iter().enumerate() {
        if i > 0 {
            out.push('\n');
        }
        match line.speaker {
            Speaker::Nurse => out.push_str(&format!("Nurse: {}", line.text)),
            Speaker::Vp => match line.non_verbal.as_deref().filter(|c| !c.trim().is_empty()) {
                Some(cue) => out.push_str(&format!("Patient: ({}) {}", cue.trim(), line.text)),
                None => out.push_str(&format!("Patient: {}", line.text)),
            },
        }
    }
    out
}
