//! Score-to-direction mapping and the static-condition bypass.

use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::templates::DEFAULT_DIRECTIONS_JSON;

/// Direction text used when the adaptive loop is switched off.
pub const STATIC_BASELINE_DIRECTION: &str = "Remain fully in persona as described in the profile; do not modulate intensity in response to the nurse.";

/// Highest communication score (and number of direction rows minus one).
pub const MAX_SCORE: u8 = 5;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Condition {
    #[serde(alias = "Static")]
    Static,
    #[serde(alias = "Dynamic")]
    Dynamic,
}

impl Condition {
    pub fn parse(s: &str) -> Option<Self> {
        if s.eq_ignore_ascii_case("static") {
            Some(Self::Static)
        } else if s.eq_ignore_ascii_case("dynamic") {
            Some(Self::Dynamic)
        } else {
            None
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Self::Static => "static",
            Self::Dynamic => "dynamic",
        }
    }
}

/// One behavioural instruction triple. `intensity_rank` equals `score`
/// (0 = most intense).
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Direction {
    pub score: u8,
    pub communication_style: String,
    pub complaint_intensity: String,
    pub responsiveness: String,
    pub intensity_rank: u8,
}

impl Direction {
    /// The text placed in the `{DIRECTION}` prompt slots.
    pub fn render(&self) -> String {
        format!(
            "Communication Style: {}\nComplaint Intensity: {}\nResponsiveness: {}",
            self.communication_style, self.complaint_intensity, self.responsiveness
        )
    }
}

/// On-disk row of the direction table.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DirectionRow {
    pub score: i64,
    pub communication_style: String,
    pub complaint_intensity: String,
    pub responsiveness: String,
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum AdjustmentError {
    #[error("score {0} outside 0..=5")]
    Range(i64),
    #[error("dynamic sessions need a score to pick a direction")]
    Contract,
    #[error("invalid direction table: {0}")]
    Table(String),
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DirectionTable {
    rows: [Direction; 6],
}

impl Default for DirectionTable {
    fn default() -> Self {
        Self::from_json_str(DEFAULT_DIRECTIONS_JSON).expect("bundled direction table is valid")
    }
}

impl DirectionTable {
    /// Loads a table; every score 0..=5 must appear exactly once and every
    /// text must be non-empty.
    pub fn from_json_str(text: &str) -> Result<Self, AdjustmentError> {
        let rows: Vec<DirectionRow> =
            serde_json::from_str(text).map_err(|e| AdjustmentError::Table(format!("{e}")))?;
        Self::from_rows(rows)
    }

    pub fn from_rows(rows: Vec<DirectionRow>) -> Result<Self, AdjustmentError> {
        let mut slots: [Option<Direction>; 6] = Default::default();
        for row in rows {
            if !(0..=MAX_SCORE as i64).contains(&row.score) {
                return Err(AdjustmentError::Table(format!("score {} outside 0..=5", row.score)));
            }
            let score = row.score as u8;
            for (name, v) in [
                ("communication_style", &row.communication_style),
                ("complaint_intensity", &row.complaint_intensity),
                ("responsiveness", &row.responsiveness),
            ] {
                if v.trim().is_empty() {
                    return Err(AdjustmentError::Table(format!("score {score}: empty {name}")));
                }
            }
            let slot = &mut slots[score as usize];
            if slot.is_some() {
                return Err(AdjustmentError::Table(format!("score {score} appears twice")));
            }
            *slot = Some(Direction {
                score,
                communication_style: row.communication_style,
                complaint_intensity: row.complaint_intensity,
                responsiveness: row.responsiveness,
                intensity_rank: score,
            });
        }
        if let Some(missing) = slots.iter().position(Option::is_none) {
            return Err(AdjustmentError::Table(format!("score {missing} is missing")));
        }
        Ok(Self {
            rows: slots.map(|s| s.unwrap_or_else(|| unreachable!())),
        })
    }

    pub fn rows(&self) -> &[Direction; 6] {
        &self.rows
    }

    /// The table row for a clamped score.
    pub fn direct(&self, score: i64) -> Result<&Direction, AdjustmentError> {
        if (0..=MAX_SCORE as i64).contains(&score) {
            Ok(&self.rows[score as usize])
        } else {
            Err(AdjustmentError::Range(score))
        }
    }

    /// Dynamic sessions map the score through the table; static sessions get
    /// no direction at all.
    pub fn direction_for_turn(
        &self,
        condition: Condition,
        score: Option<u8>,
    ) -> Result<Option<&Direction>, AdjustmentError> {
        match (condition, score) {
            (Condition::Static, _) => Ok(None),
            (Condition::Dynamic, None) => Err(AdjustmentError::Contract),
            (Condition::Dynamic, Some(s)) => self.direct(s as i64).map(Some),
        }
    }
}

/// Direction text for a turn: the row rendering, or the static baseline.
pub fn direction_text(direction: Option<&Direction>) -> String {
    match direction {
        Some(d) => d.render(),
        None => String::from(STATIC_BASELINE_DIRECTION),
    }
}
