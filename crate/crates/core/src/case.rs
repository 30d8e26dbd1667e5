//! Virtual-patient case model and the case development pipeline.
//!
//! A case collection is one JSON document `{"cases": [...]}`. Draft cases are
//! produced by prompting the model for profiles of one challenging-patient
//! type; communication traits (summary + two opening expressions) are
//! generated in a second pass. Expert review is tracked only through
//! [`ReviewStatus`].

use alloc::borrow::ToOwned;
use alloc::collections::{BTreeMap, BTreeSet};
use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec::Vec;
use core::fmt;

use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};

use crate::llm::{ChatRequest, GatewayError, LlmGateway, PATIENT_TEMPERATURE};
use crate::tags;
use crate::templates::{fill, PromptTemplates};

/// Bundled fixture collection (the published validated cases).
pub const BUNDLED_CASES_JSON: &str = include_str!("templates/cases.json");

/// Soft upper bound on the communication summary length.
pub const SUMMARY_MAX_CHARS: usize = 1200;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ChallengingPatientType {
    #[serde(alias = "overly_dependent", alias = "Overdependent")]
    Overdependent,
    #[serde(alias = "overly_authoritative", alias = "Authoritative")]
    Authoritative,
    #[serde(alias = "threatening", alias = "Aggressive")]
    Aggressive,
    #[serde(alias = "non_compliant", alias = "non_cooperative", alias = "Uncooperative")]
    Uncooperative,
}

impl ChallengingPatientType {
    pub const ALL: [ChallengingPatientType; 4] = [
        ChallengingPatientType::Overdependent,
        ChallengingPatientType::Authoritative,
        ChallengingPatientType::Aggressive,
        ChallengingPatientType::Uncooperative,
    ];

    pub fn slug(self) -> &'static str {
        match self {
            Self::Overdependent => "overdependent",
            Self::Authoritative => "authoritative",
            Self::Aggressive => "aggressive",
            Self::Uncooperative => "uncooperative",
        }
    }

    pub fn label(self) -> &'static str {
        match self {
            Self::Overdependent => "Overdependent",
            Self::Authoritative => "Authoritative",
            Self::Aggressive => "Aggressive",
            Self::Uncooperative => "Uncooperative",
        }
    }

    pub fn description(self) -> &'static str {
        match self {
            Self::Overdependent => {
                "Relies heavily on nurses to alleviate anxiety about illness. \
                 Frequently calls nurses or seeks reassurance for every concern."
            }
            Self::Authoritative => {
                "Attempts to exploit healthcare providers through intimidation or guilt. \
                 Believes excessive anger and unreasonable demands are justified as a defense mechanism."
            }
            Self::Aggressive => {
                "Openly displays anger and hostility. \
                 Threatens or resorts to violent behavior toward nurses."
            }
            Self::Uncooperative => {
                "Remains overly pessimistic about treatment or actively impedes care. \
                 Sometimes displays dependent behaviors while denying the possibility of recovery."
            }
        }
    }

    /// Parses a free-form label such as `"overly authoritative"` or `"Type 3"`.
    pub fn from_label(label: &str) -> Option<Self> {
        let l = label.trim().to_ascii_lowercase();
        let l = l.replace(['-', '_'], " ");
        Some(match l.as_str() {
            "overdependent" | "over dependent" | "overly dependent" | "1" | "type 1" => {
                Self::Overdependent
            }
            "authoritative" | "overly authoritative" | "overly authoriative" | "2" | "type 2" => {
                Self::Authoritative
            }
            "aggressive" | "threatening" | "threatening and violent" | "3" | "type 3" => {
                Self::Aggressive
            }
            "uncooperative" | "non compliant" | "non cooperative" | "noncompliant" | "4"
            | "type 4" => Self::Uncooperative,
            _ => return None,
        })
    }
}

impl fmt::Display for ChallengingPatientType {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.label())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ReviewStatus {
    #[default]
    Draft,
    ExpertValidated,
    Revised,
}

/// Inputs to the first three pipeline stages.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CaseSpec {
    pub training_goal: String,
    pub literature_notes: String,
    pub context_notes: String,
    pub patient_type: ChallengingPatientType,
    pub scenario_count: u32,
}

impl CaseSpec {
    pub fn validate(&self) -> Result<(), CaseError> {
        for (name, value) in [
            ("training_goal", &self.training_goal),
            ("literature_notes", &self.literature_notes),
            ("context_notes", &self.context_notes),
        ] {
            if value.trim().is_empty() {
                return Err(CaseError::InvalidSpec(format!("{name} must not be empty")));
            }
        }
        if self.scenario_count == 0 {
            return Err(CaseError::InvalidSpec("scenario_count must be at least 1".into()));
        }
        Ok(())
    }

    /// Text placed in the draft prompt's patient-type slot.
    pub fn patient_type_description(&self) -> String {
        format!(
            "{}: {}\nTraining goal: {}\nRelevant literature: {}\nTraining context: {}",
            self.patient_type.label(),
            self.patient_type.description(),
            self.training_goal.trim(),
            self.literature_notes.trim(),
            self.context_notes.trim(),
        )
    }
}

/// Full virtual-patient case record.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PatientProfile {
    pub id: String,
    pub patient_type: ChallengingPatientType,
    pub name: String,
    pub situation: String,
    pub chief_complaint: String,
    pub gender: String,
    /// Years.
    pub age: u32,
    pub religion: String,
    /// Centimetres.
    pub height: f64,
    /// Kilograms.
    pub weight: f64,
    #[serde(default)]
    pub main_symptom: String,
    pub history_present_illness: String,
    pub social_history: String,
    pub past_medical_history: String,
    pub past_surgical_history: String,
    pub family_medical_history: String,
    pub allergies: String,
    pub immunization: String,
    pub medication: String,
    pub primary_diagnosis: String,
    /// Raw communication style from draft generation; source for trait generation.
    #[serde(default)]
    pub communication_style: String,
    #[serde(default)]
    pub communication_summary: String,
    #[serde(default)]
    pub example_expressions: Vec<String>,
    pub first_statement: String,
    #[serde(default)]
    pub review_status: ReviewStatus,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub review_note: Option<String>,
    /// Fields this version does not model, kept verbatim.
    #[serde(flatten)]
    pub extra: BTreeMap<String, Value>,
}

impl PatientProfile {
    /// Opening VP line: `(cue) words` is split into words and cue, surrounding
    /// quotes removed.
    pub fn opening_line(&self) -> (String, Option<String>) {
        split_cue(&self.first_statement)
    }

    /// In-persona line delivered when the safety loop gives up.
    pub fn fallback_statement(&self) -> String {
        if let Some(Value::String(s)) = self.extra.get("fallback_statement") {
            if !s.trim().is_empty() {
                return s.trim().to_owned();
            }
        }
        let (text, _) = self.opening_line();
        deintensify(&text)
    }

    pub fn mark_reviewed(&mut self, status: ReviewStatus, note: Option<String>) {
        self.review_status = status;
        self.review_note = note;
    }

    /// Renders the profile as `Field: value` lines for prompt slots.
    pub fn render(&self) -> String {
        let mut rows: Vec<(&str, String)> = Vec::new();
        rows.push(("Type", self.patient_type.label().to_string()));
        rows.push(("Name", self.name.clone()));
        rows.push(("Situation", self.situation.clone()));
        rows.push(("Chief Complaint", self.chief_complaint.clone()));
        rows.push(("Gender", self.gender.clone()));
        rows.push(("Age", self.age.to_string()));
        rows.push(("Religion", self.religion.clone()));
        rows.push(("Height", format!("{}cm", fmt_num(self.height))));
        rows.push(("Weight", format!("{}kg", fmt_num(self.weight))));
        if !self.main_symptom.is_empty() {
            rows.push(("Main Symptom", self.main_symptom.clone()));
        }
        rows.push(("History of Present Illness", self.history_present_illness.clone()));
        rows.push(("Social History", self.social_history.clone()));
        rows.push(("Past Medical History", self.past_medical_history.clone()));
        rows.push(("Past Surgical History & Date", self.past_surgical_history.clone()));
        rows.push(("Family Medical History", self.family_medical_history.clone()));
        rows.push(("Allergies", self.allergies.clone()));
        rows.push(("Immunization", self.immunization.clone()));
        rows.push(("Medication", self.medication.clone()));
        rows.push(("Primary Diagnosis", self.primary_diagnosis.clone()));
        if !self.communication_style.is_empty() {
            rows.push(("Communication Style", self.communication_style.clone()));
        }
        if !self.communication_summary.is_empty() {
            rows.push(("Communication Summary", self.communication_summary.clone()));
        }
        if !self.example_expressions.is_empty() {
            rows.push(("Example Expressions", self.example_expressions.join(" / ")));
        }
        rows.push(("First Statement", self.first_statement.clone()));
        let mut out = String::new();
        for (i, (k, v)) in rows.iter().enumerate() {
            if i > 0 {
                out.push('\n');
            }
            out.push_str(k);
            out.push_str(": ");
            out.push_str(v);
        }
        out
    }

    /// Checks the record-level invariants.
    pub fn validate(&self) -> Result<(), CaseError> {
        let schema = |field: &str, reason: &str| CaseError::Schema {
            index: None,
            field: field.to_owned(),
            reason: reason.to_owned(),
        };
        if self.id.trim().is_empty() {
            return Err(schema("id", "must not be empty"));
        }
        if self.first_statement.trim().is_empty() {
            return Err(schema("first_statement", "must not be empty"));
        }
        if self.communication_summary.chars().count() > SUMMARY_MAX_CHARS {
            return Err(schema("communication_summary", "longer than 1200 characters"));
        }
        if self.review_status != ReviewStatus::Draft && self.communication_summary.trim().is_empty()
        {
            return Err(schema("communication_summary", "required once a case has been reviewed"));
        }
        if !self.example_expressions.is_empty() && self.example_expressions.len() != 2 {
            return Err(schema("example_expressions", "must hold exactly 2 entries when present"));
        }
        Ok(())
    }
}

fn fmt_num(v: f64) -> String {
    if v == libm::trunc(v) && v.abs() < 1e9 {
        format!("{}", v as i64)
    } else {
        format!("{v}")
    }
}

/// Strips surrounding straight or curly double quotes.
fn strip_quotes(s: &str) -> &str {
    let t = s.trim();
    for (open, close) in [('"', '"'), ('\u{201c}', '\u{201d}'), ('\'', '\'')] {
        if t.len() >= open.len_utf8() + close.len_utf8() && t.starts_with(open) && t.ends_with(close)
        {
            return t[open.len_utf8()..t.len() - close.len_utf8()].trim();
        }
    }
    t
}

/// Splits `"(cue) words"` into `("words", Some("cue"))`.
pub fn split_cue(statement: &str) -> (String, Option<String>) {
    let s = strip_quotes(statement);
    if let Some(rest) = s.strip_prefix('(') {
        if let Some(close) = rest.find(')') {
            let cue = rest[..close].trim();
            let words = rest[close + 1..].trim();
            if !words.is_empty() {
                let cue = (!cue.is_empty()).then(|| cue.to_owned());
                return (words.to_owned(), cue);
            }
        }
    }
    (s.to_owned(), None)
}

/// Removes escalation markers: exclamations become full stops, repeated
/// `?`/`.`/`!` collapse, parenthetical cues are dropped.
pub fn deintensify(text: &str) -> String {
    let mut out = String::with_capacity(text.len());
    let mut depth = 0usize;
    let mut prev_punct = false;
    for ch in text.chars() {
        match ch {
            '(' => depth += 1,
            ')' if depth > 0 => depth -= 1,
            _ if depth > 0 => {}
            '!' | '.' | '?' | '…' => {
                let c = if ch == '?' { '?' } else { '.' };
                if !prev_punct {
                    out.push(c);
                }
                prev_punct = true;
            }
            _ => {
                prev_punct = false;
                out.push(ch);
            }
        }
    }
    let mut collapsed = String::with_capacity(out.len());
    let mut prev_space = false;
    for ch in out.trim().chars() {
        if ch.is_whitespace() {
            if !prev_space {
                collapsed.push(' ');
            }
            prev_space = true;
        } else {
            collapsed.push(ch);
            prev_space = false;
        }
    }
    collapsed
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum CaseError {
    #[error("invalid case spec: {0}")]
    InvalidSpec(String),
    #[error("precondition failed: {0}")]
    Precondition(String),
    #[error(transparent)]
    Gateway(#[from] GatewayError),
    #[error("could not parse model output ({}): {text}", problems.join("; "))]
    Parse { problems: Vec<String>, text: String },
    #[error("schema error at {}{field}: {reason}", index.map(|i| format!("cases[{i}].")).unwrap_or_default())]
    Schema {
        index: Option<usize>,
        field: String,
        reason: String,
    },
}

impl CaseError {
    fn parse(problems: Vec<String>, text: &str) -> Self {
        CaseError::Parse {
            problems,
            text: text.to_owned(),
        }
    }
}

// ---------------------------------------------------------------------------
// Case collection documents
// ---------------------------------------------------------------------------

/// A case collection document, `{"cases": [...]}`.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct CaseCollection {
    pub cases: Vec<PatientProfile>,
    #[serde(flatten)]
    pub extra: BTreeMap<String, Value>,
}

#[derive(Clone, Copy, PartialEq, Eq)]
enum Kind {
    Str,
    UInt,
    Num,
    StrList,
    PatientType,
    Review,
}

/// Field schema, checked in this order.
const CASE_SCHEMA: &[(&str, Kind, bool)] = &[
    ("id", Kind::Str, true),
    ("patient_type", Kind::PatientType, true),
    ("name", Kind::Str, true),
    ("situation", Kind::Str, true),
    ("chief_complaint", Kind::Str, true),
    ("gender", Kind::Str, true),
    ("age", Kind::UInt, true),
    ("religion", Kind::Str, true),
    ("height", Kind::Num, true),
    ("weight", Kind::Num, true),
    ("main_symptom", Kind::Str, false),
    ("history_present_illness", Kind::Str, true),
    ("social_history", Kind::Str, true),
    ("past_medical_history", Kind::Str, true),
    ("past_surgical_history", Kind::Str, true),
    ("family_medical_history", Kind::Str, true),
    ("allergies", Kind::Str, true),
    ("immunization", Kind::Str, true),
    ("medication", Kind::Str, true),
    ("primary_diagnosis", Kind::Str, true),
    ("communication_style", Kind::Str, false),
    ("communication_summary", Kind::Str, false),
    ("example_expressions", Kind::StrList, false),
    ("first_statement", Kind::Str, true),
    ("review_status", Kind::Review, false),
];

fn check_kind(value: &Value, kind: Kind) -> Result<(), &'static str> {
    let ok = match kind {
        Kind::Str => value.is_string(),
        Kind::UInt => value.as_u64().is_some_and(|v| v <= u32::MAX as u64),
        Kind::Num => value.as_f64().is_some_and(|v| v.is_finite() && v >= 0.0),
        Kind::StrList => value
            .as_array()
            .is_some_and(|a| a.iter().all(Value::is_string)),
        Kind::PatientType => value
            .as_str()
            .is_some_and(|s| ChallengingPatientType::from_label(s).is_some()),
        Kind::Review => value.as_str().is_some_and(|s| {
            matches!(s, "draft" | "expert_validated" | "revised")
        }),
    };
    if ok {
        Ok(())
    } else {
        Err(match kind {
            Kind::Str => "expected a string",
            Kind::UInt => "expected a non-negative integer",
            Kind::Num => "expected a non-negative number",
            Kind::StrList => "expected a list of strings",
            Kind::PatientType => "expected one of overdependent/authoritative/aggressive/uncooperative",
            Kind::Review => "expected draft/expert_validated/revised",
        })
    }
}

/// Validates a raw document against the case-file schema, reporting the
/// first invalid field.
pub fn validate_document(doc: &Value) -> Result<(), CaseError> {
    let schema = |index: Option<usize>, field: &str, reason: &str| CaseError::Schema {
        index,
        field: field.to_owned(),
        reason: reason.to_owned(),
    };
    let cases = doc
        .get("cases")
        .ok_or_else(|| schema(None, "cases", "missing"))?
        .as_array()
        .ok_or_else(|| schema(None, "cases", "expected an array"))?;
    let mut seen = BTreeSet::new();
    for (i, case) in cases.iter().enumerate() {
        let obj = case
            .as_object()
            .ok_or_else(|| schema(Some(i), "case", "expected an object"))?;
        for &(field, kind, required) in CASE_SCHEMA {
            match obj.get(field) {
                None if required => return Err(schema(Some(i), field, "missing")),
                None => {}
                Some(v) => check_kind(v, kind).map_err(|r| schema(Some(i), field, r))?,
            }
        }
        let first = obj["first_statement"].as_str().unwrap_or_default();
        if first.trim().is_empty() {
            return Err(schema(Some(i), "first_statement", "must not be empty"));
        }
        let id = obj["id"].as_str().unwrap_or_default();
        if id.trim().is_empty() {
            return Err(schema(Some(i), "id", "must not be empty"));
        }
        if !seen.insert(id.to_owned()) {
            return Err(schema(Some(i), "id", "duplicate id"));
        }
    }
    Ok(())
}

impl CaseCollection {
    pub fn from_json_str(text: &str) -> Result<Self, CaseError> {
        let doc: Value = serde_json::from_str(text).map_err(|e| CaseError::Schema {
            index: None,
            field: "document".into(),
            reason: e.to_string(),
        })?;
        validate_document(&doc)?;
        let collection: CaseCollection =
            serde_json::from_value(doc).map_err(|e| CaseError::Schema {
                index: None,
                field: "document".into(),
                reason: e.to_string(),
            })?;
        // Patient types may be free-form labels in hand-written files.
        for (i, p) in collection.cases.iter().enumerate() {
            p.validate().map_err(|e| match e {
                CaseError::Schema { field, reason, .. } => CaseError::Schema {
                    index: Some(i),
                    field,
                    reason,
                },
                other => other,
            })?;
        }
        Ok(collection)
    }

    pub fn to_json_string(&self) -> Result<String, CaseError> {
        let mut ids = BTreeSet::new();
        for (i, p) in self.cases.iter().enumerate() {
            if !ids.insert(p.id.as_str()) {
                return Err(CaseError::Schema {
                    index: Some(i),
                    field: "id".into(),
                    reason: "duplicate id".into(),
                });
            }
        }
        serde_json::to_string_pretty(self).map_err(|e| CaseError::Schema {
            index: None,
            field: "document".into(),
            reason: e.to_string(),
        })
    }

    pub fn get(&self, id: &str) -> Option<&PatientProfile> {
        self.cases.iter().find(|c| c.id == id)
    }

    /// The bundled validated fixture cases.
    pub fn bundled() -> Self {
        Self::from_json_str(BUNDLED_CASES_JSON).expect("bundled case file is valid")
    }
}

// ---------------------------------------------------------------------------
// Draft generation
// ---------------------------------------------------------------------------

/// Profile fields the draft prompt asks for, with accepted key spellings
/// (after normalisation to lower snake case).
const DRAFT_FIELDS: &[(&str, &[&str])] = &[
    (
        "situation",
        &[
            "brief_description_of_client",
            "brief_description",
            "client_description",
            "description",
            "situation",
        ],
    ),
    ("name", &["name"]),
    ("gender", &["gender", "sex"]),
    ("age", &["age"]),
    ("religion", &["religion"]),
    ("height", &["height", "height_cm"]),
    ("weight", &["weight", "weight_kg"]),
    ("chief_complaint", &["chief_complaint", "chief_complaints"]),
    (
        "history_present_illness",
        &["history_of_present_illness", "history_present_illness", "present_illness"],
    ),
    ("social_history", &["social_history"]),
    ("past_medical_history", &["past_medical_history"]),
    (
        "past_surgical_history",
        &[
            "past_surgical_history_date",
            "past_surgical_history_and_date",
            "past_surgical_history",
        ],
    ),
    ("family_medical_history", &["family_medical_history", "family_history"]),
    ("allergies", &["allergies", "allergy"]),
    ("immunization", &["immunization", "immunizations"]),
    ("medication", &["medication", "medications"]),
    ("primary_diagnosis", &["primary_diagnosis", "diagnosis"]),
    ("communication_style", &["communication_style"]),
];

/// Names of the draft fields, in prompt order.
pub fn draft_field_names() -> impl Iterator<Item = &'static str> {
    DRAFT_FIELDS.iter().map(|(n, _)| *n)
}

fn normalize_key(k: &str) -> String {
    let mut out = String::with_capacity(k.len());
    let mut underscore = false;
    for ch in k.trim().chars() {
        if ch.is_alphanumeric() {
            out.extend(ch.to_lowercase());
            underscore = false;
        } else if !underscore && !out.is_empty() {
            out.push('_');
            underscore = true;
        }
    }
    while out.ends_with('_') {
        out.pop();
    }
    out
}

fn value_text(v: &Value) -> Option<String> {
    match v {
        Value::Null => None,
        Value::String(s) => Some(s.trim().to_owned()),
        Value::Number(n) => Some(n.to_string()),
        Value::Bool(b) => Some(b.to_string()),
        Value::Array(items) => {
            let parts: Vec<String> = items.iter().filter_map(value_text).collect();
            Some(parts.join(", "))
        }
        Value::Object(_) => Some(v.to_string()),
    }
}

/// Leading decimal number of a string like `"175cm"` or `"37세"`.
fn leading_number(s: &str) -> Option<f64> {
    let s = s.trim();
    let end = s
        .char_indices()
        .find(|(_, c)| !(c.is_ascii_digit() || *c == '.'))
        .map(|(i, _)| i)
        .unwrap_or(s.len());
    s[..end].parse::<f64>().ok().filter(|v| v.is_finite())
}

/// Slices out the JSON payload from model output (code fences, prose around it).
fn json_payload(text: &str) -> Option<Value> {
    if let Ok(v) = serde_json::from_str::<Value>(text.trim()) {
        return Some(v);
    }
    let start = text.find(['{', '['])?;
    let end = text.rfind(['}', ']'])?;
    if end <= start {
        return None;
    }
    serde_json::from_str(&text[start..=end]).ok()
}

fn looks_like_profile(obj: &Map<String, Value>) -> bool {
    obj.keys().any(|k| normalize_key(k) == "name")
}

fn profile_objects(v: &Value) -> Vec<&Map<String, Value>> {
    match v {
        Value::Array(items) => items.iter().filter_map(Value::as_object).collect(),
        Value::Object(obj) if looks_like_profile(obj) => alloc::vec![obj],
        Value::Object(obj) => {
            for wrapper in ["patients", "profiles", "patient_profiles", "cases"] {
                if let Some(Value::Array(items)) = obj
                    .iter()
                    .find(|(k, _)| normalize_key(k) == wrapper)
                    .map(|(_, v)| v)
                {
                    return items.iter().filter_map(Value::as_object).collect();
                }
            }
            obj.values()
                .filter_map(Value::as_object)
                .filter(|o| looks_like_profile(o))
                .collect()
        }
        _ => Vec::new(),
    }
}

fn profile_from_object(
    obj: &Map<String, Value>,
    patient_type: ChallengingPatientType,
    id: String,
) -> Result<PatientProfile, Vec<String>> {
    let normalized: BTreeMap<String, &Value> =
        obj.iter().map(|(k, v)| (normalize_key(k), v)).collect();
    let mut found: BTreeMap<&str, String> = BTreeMap::new();
    let mut problems = Vec::new();
    for (field, aliases) in DRAFT_FIELDS {
        let hit = aliases
            .iter()
            .find_map(|a| normalized.get(*a).and_then(|v| value_text(v)))
            .filter(|s| !s.is_empty());
        match hit {
            Some(v) => {
                found.insert(field, v);
            }
            None => problems.push(format!("missing field {field}")),
        }
    }
    let num = |field: &str, problems: &mut Vec<String>| -> f64 {
        match found.get(field).and_then(|s| leading_number(s)) {
            Some(v) => v,
            None => {
                if found.contains_key(field) {
                    problems.push(format!("malformed field {field}"));
                }
                0.0
            }
        }
    };
    let age = num("age", &mut problems);
    let height = num("height", &mut problems);
    let weight = num("weight", &mut problems);
    if !problems.is_empty() {
        return Err(problems);
    }
    let main_symptom = ["main_symptom", "main_symptoms"]
        .iter()
        .find_map(|a| normalized.get(*a).and_then(|v| value_text(v)))
        .unwrap_or_default();
    let mut take = |f: &str| found.remove(f).unwrap_or_default();
    let chief_complaint = take("chief_complaint");
    Ok(PatientProfile {
        id,
        patient_type,
        name: take("name"),
        situation: take("situation"),
        first_statement: chief_complaint.clone(),
        chief_complaint,
        gender: take("gender"),
        age: age as u32,
        religion: take("religion"),
        height,
        weight,
        main_symptom,
        history_present_illness: take("history_present_illness"),
        social_history: take("social_history"),
        past_medical_history: take("past_medical_history"),
        past_surgical_history: take("past_surgical_history"),
        family_medical_history: take("family_medical_history"),
        allergies: take("allergies"),
        immunization: take("immunization"),
        medication: take("medication"),
        primary_diagnosis: take("primary_diagnosis"),
        communication_style: take("communication_style"),
        communication_summary: String::new(),
        example_expressions: Vec::new(),
        review_status: ReviewStatus::Draft,
        review_note: None,
        extra: BTreeMap::new(),
    })
}

pub fn build_draft_request(spec: &CaseSpec, templates: &PromptTemplates) -> ChatRequest {
    let user = fill(
        &templates.draft_profile,
        &[("PATIENT_TYPE_DESCRIPTION", &spec.patient_type_description())],
    );
    ChatRequest::new("case.draft", templates.draft_system.trim(), user, PATIENT_TEMPERATURE)
}

/// Decodes draft profiles from model output; keeps the first `spec.scenario_count`.
pub fn parse_draft_profiles(text: &str, spec: &CaseSpec) -> Result<Vec<PatientProfile>, CaseError> {
    let payload = json_payload(text)
        .ok_or_else(|| CaseError::parse(alloc::vec!["no JSON document found".into()], text))?;
    let objects = profile_objects(&payload);
    let wanted = spec.scenario_count as usize;
    if objects.len() < wanted {
        return Err(CaseError::parse(
            alloc::vec![format!("expected {wanted} profile(s), found {}", objects.len())],
            text,
        ));
    }
    let mut out = Vec::with_capacity(wanted);
    for (i, obj) in objects.into_iter().take(wanted).enumerate() {
        let id = format!("{}-draft-{}", spec.patient_type.slug(), i + 1);
        let profile = profile_from_object(obj, spec.patient_type, id).map_err(|problems| {
            CaseError::parse(
                problems.into_iter().map(|p| format!("profile {}: {p}", i + 1)).collect(),
                text,
            )
        })?;
        out.push(profile);
    }
    Ok(out)
}

/// Pipeline stage 4: asks the model for draft profiles of `spec.patient_type`.
pub fn generate_draft_cases<G: LlmGateway + ?Sized>(
    spec: &CaseSpec,
    gateway: &G,
    templates: &PromptTemplates,
) -> Result<Vec<PatientProfile>, CaseError> {
    spec.validate()?;
    let request = build_draft_request(spec, templates);
    let response = gateway.complete(&request)?;
    parse_draft_profiles(&response.text, spec)
}

// ---------------------------------------------------------------------------
// Communication traits
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CommunicationTraits {
    pub summary: String,
    pub expressions: [String; 2],
}

impl CommunicationTraits {
    pub fn apply_to(&self, profile: &mut PatientProfile) {
        profile.communication_summary = self.summary.clone();
        profile.example_expressions = self.expressions.to_vec();
    }
}

pub fn build_traits_request(
    profile: &PatientProfile,
    templates: &PromptTemplates,
) -> ChatRequest {
    let user = fill(&templates.traits_user, &[("PATIENT_PROFILE", &profile.render())]);
    ChatRequest::new("case.traits", templates.traits_system.trim(), user, PATIENT_TEMPERATURE)
}

fn strip_list_marker(line: &str) -> &str {
    let t = line.trim();
    let t = t.trim_start_matches(['-', '*', '•']).trim_start();
    let digits = t.chars().take_while(char::is_ascii_digit).count();
    if digits > 0 {
        let rest = &t[digits..];
        if let Some(r) = rest.strip_prefix(['.', ')', ':']) {
            return r.trim();
        }
    }
    t
}

fn quoted_segments(s: &str) -> Vec<String> {
    let mut out = Vec::new();
    let mut current: Option<(char, String)> = None;
    for ch in s.chars() {
        match &mut current {
            None if ch == '"' => current = Some(('"', String::new())),
            None if ch == '\u{201c}' => current = Some(('\u{201d}', String::new())),
            None => {}
            Some((close, buf)) if ch == *close => {
                let seg = buf.trim().to_owned();
                if !seg.is_empty() {
                    out.push(seg);
                }
                current = None;
            }
            Some((_, buf)) => buf.push(ch),
        }
    }
    out
}

pub fn parse_traits(text: &str) -> Result<CommunicationTraits, CaseError> {
    let mut problems = Vec::new();
    let summary = tags::inner(text, "summary").filter(|s| !s.is_empty());
    if summary.is_none() {
        problems.push("missing <summary>".to_owned());
    }
    let mut expressions: Vec<String> = Vec::new();
    match tags::inner(text, "example_expressions") {
        None => problems.push("missing <example_expressions>".to_owned()),
        Some(block) => {
            expressions = block
                .lines()
                .map(strip_list_marker)
                .map(strip_quotes)
                .filter(|l| !l.is_empty())
                .map(ToOwned::to_owned)
                .collect();
            if expressions.len() < 2 {
                let quoted = quoted_segments(block);
                if quoted.len() > expressions.len() {
                    expressions = quoted;
                }
            }
            if expressions.len() < 2 {
                problems.push(format!(
                    "expected 2 example expressions, found {}",
                    expressions.len()
                ));
            }
        }
    }
    if !problems.is_empty() {
        return Err(CaseError::parse(problems, text));
    }
    let mut it = expressions.into_iter();
    Ok(CommunicationTraits {
        summary: summary.unwrap_or_default().to_owned(),
        expressions: [it.next().unwrap_or_default(), it.next().unwrap_or_default()],
    })
}

/// Generates the communication summary and two opening expressions.
pub fn generate_communication_traits<G: LlmGateway + ?Sized>(
    profile: &PatientProfile,
    gateway: &G,
    templates: &PromptTemplates,
) -> Result<CommunicationTraits, CaseError> {
    if profile.communication_style.trim().is_empty() {
        return Err(CaseError::Precondition(format!(
            "case {} has no communication_style to analyse",
            profile.id
        )));
    }
    let response = gateway.complete(&build_traits_request(profile, templates))?;
    parse_traits(&response.text)
}
