use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use serde::{Deserialize, Serialize};

/// One value captured for a fill-in-the-blank slot.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BlankValue {
    Text(String),
    Number {
        value: f64,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        unit: Option<String>,
    },
}

impl fmt::Display for BlankValue {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            BlankValue::Text(t) => f.write_str(t),
            BlankValue::Number { value, unit } => {
                write!(f, "{}", format_number(*value))?;
                if let Some(u) = unit {
                    write!(f, " {u}")?;
                }
                Ok(())
            }
        }
    }
}

/// Structured answer for a single question.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AnswerValue {
    Chosen(String),
    ChosenMany(BTreeSet<String>),
    Blanks(BTreeMap<String, BlankValue>),
    NoIntent,
    Refused,
}

impl AnswerValue {
    /// True for values that count as an answer (not a failure marker).
    pub fn is_answer(&self) -> bool {
        matches!(
            self,
            AnswerValue::Chosen(_) | AnswerValue::ChosenMany(_) | AnswerValue::Blanks(_)
        )
    }

    pub fn chosen(id: impl Into<String>) -> Self {
        AnswerValue::Chosen(id.into())
    }

    pub fn chosen_many<I, S>(ids: I) -> Self
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        AnswerValue::ChosenMany(ids.into_iter().map(Into::into).collect())
    }
}

/// Renders a number without a trailing `.0` for whole values.
pub fn format_number(value: f64) -> String {
    if value.fract() == 0.0 && value.abs() < 1e15 {
        format!("{}", value as i64)
    } else {
        format!("{value}")
    }
}
