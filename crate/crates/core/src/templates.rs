//! Bundled prompt templates and slot substitution.
//!
//! Templates are plain text with `{SLOT}` placeholders. Defaults are compiled
//! in; deployments may override any file (see [`PromptTemplates::FILES`]).

use alloc::string::{String, ToString};

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PromptTemplates {
    pub draft_system: String,
    pub draft_profile: String,
    pub traits_system: String,
    pub traits_user: String,
    pub eval_clinical_psychologist: String,
    pub eval_nursing_professor: String,
    pub eval_communication_trainer: String,
    pub eval_user: String,
    pub generation_system: String,
    pub generation_user: String,
    pub generation_warning: String,
    pub generation_format_reminder: String,
    pub safety_system: String,
    pub safety_user: String,
}

impl Default for PromptTemplates {
    fn default() -> Self {
        Self {
            draft_system: include_str!("templates/draft_system.txt").to_string(),
            draft_profile: include_str!("templates/draft_profile.txt").to_string(),
            traits_system: include_str!("templates/communication_traits_system.txt").to_string(),
            traits_user: include_str!("templates/communication_traits.txt").to_string(),
            eval_clinical_psychologist: include_str!("templates/eval_clinical_psychologist.txt")
                .to_string(),
            eval_nursing_professor: include_str!("templates/eval_nursing_professor.txt").to_string(),
            eval_communication_trainer: include_str!("templates/eval_communication_trainer.txt")
                .to_string(),
            eval_user: include_str!("templates/eval_user.txt").to_string(),
            generation_system: include_str!("templates/generation_system.txt").to_string(),
            generation_user: include_str!("templates/generation_user.txt").to_string(),
            generation_warning: include_str!("templates/generation_warning.txt").to_string(),
            generation_format_reminder: include_str!("templates/generation_format_reminder.txt")
                .to_string(),
            safety_system: include_str!("templates/safety_system.txt").to_string(),
            safety_user: include_str!("templates/safety_user.txt").to_string(),
        }
    }
}

/// The default direction table, as shipped.
pub const DEFAULT_DIRECTIONS_JSON: &str = include_str!("templates/directions.json");

impl PromptTemplates {
    /// Override file names, in the same order as the struct fields.
    pub const FILES: [&'static str; 14] = [
        "draft_system.txt",
        "draft_profile.txt",
        "communication_traits_system.txt",
        "communication_traits.txt",
        "eval_clinical_psychologist.txt",
        "eval_nursing_professor.txt",
        "eval_communication_trainer.txt",
        "eval_user.txt",
        "generation_system.txt",
        "generation_user.txt",
        "generation_warning.txt",
        "generation_format_reminder.txt",
        "safety_system.txt",
        "safety_user.txt",
    ];

    /// Mutable access to the template stored under an override file name.
    pub fn by_file_mut(&mut self, file: &str) -> Option<&mut String> {
        Some(match file {
            "draft_system.txt" => &mut self.draft_system,
            "draft_profile.txt" => &mut self.draft_profile,
            "communication_traits_system.txt" => &mut self.traits_system,
            "communication_traits.txt" => &mut self.traits_user,
            "eval_clinical_psychologist.txt" => &mut self.eval_clinical_psychologist,
            "eval_nursing_professor.txt" => &mut self.eval_nursing_professor,
            "eval_communication_trainer.txt" => &mut self.eval_communication_trainer,
            "eval_user.txt" => &mut self.eval_user,
            "generation_system.txt" => &mut self.generation_system,
            "generation_user.txt" => &mut self.generation_user,
            "generation_warning.txt" => &mut self.generation_warning,
            "generation_format_reminder.txt" => &mut self.generation_format_reminder,
            "safety_system.txt" => &mut self.safety_system,
            "safety_user.txt" => &mut self.safety_user,
            _ => return None,
        })
    }
}

/// Replaces every `{NAME}` placeholder listed in `slots` in a single pass.
/// Substituted values are never rescanned, so values containing braces are safe.
pub fn fill(template: &str, slots: &[(&str, &str)]) -> String {
    let mut out = String::with_capacity(template.len() + 256);
    let mut rest = template;
    while let Some(open) = rest.find('{') {
        out.push_str(&rest[..open]);
        let tail = &rest[open + 1..];
        let hit = slots.iter().find(|(name, _)| {
            tail.starts_with(name) && tail[name.len()..].starts_with('}')
        });
        match hit {
            Some((name, value)) => {
                out.push_str(value);
                rest = &tail[name.len() + 1..];
            }
            None => {
                out.push('{');
                rest = tail;
            }
        }
    }
    out.push_str(rest);
    out
}
