use regex::Regex;
use serde::{Deserialize, Serialize};

use crate::adapters::ResponseEnvelope;
use crate::model::{EmotionLabel, PartLabel};

use super::SuiteError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Phase {
    Precheck,
    Identification,
    Guidance,
    Recommendations,
    Emotional,
    Verification,
}

impl Phase {
    pub const ALL: [Phase; 6] = [
        Phase::Precheck,
        Phase::Identification,
        Phase::Guidance,
        Phase::Recommendations,
        Phase::Emotional,
        Phase::Verification,
    ];

    /// Row label used in reports.
    pub fn label(self) -> &'static str {
        match self {
            Phase::Precheck => "1.1. Pre-check",
            Phase::Identification => "1.2. Identification",
            Phase::Guidance => "2. Instructional Guidance",
            Phase::Recommendations => "3. Recommendations/Solutions",
            Phase::Emotional => "4. Emotional support",
            Phase::Verification => "5. Assembly verification",
        }
    }

    pub fn key(self) -> &'static str {
        match self {
            Phase::Precheck => "precheck",
            Phase::Identification => "identification",
            Phase::Guidance => "guidance",
            Phase::Recommendations => "recommendations",
            Phase::Emotional => "emotional",
            Phase::Verification => "verification",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ObjectCondition {
    pub name: String,
    pub present: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub part_label: Option<PartLabel>,
}

/// Declarative correctness predicate; every listed condition must hold.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Oracle {
    /// Case-insensitive substrings of the reply text.
    #[serde(default)]
    pub contains: Vec<String>,
    /// Case-insensitive substrings that must not appear.
    #[serde(default)]
    pub excludes: Vec<String>,
    #[serde(default)]
    pub regex: Vec<String>,
    #[serde(default)]
    pub objects: Vec<ObjectCondition>,
    #[serde(default)]
    pub emotion: Option<String>,
}

impl Oracle {
    pub fn is_empty(&self) -> bool {
        self.contains.is_empty()
            && self.excludes.is_empty()
            && self.regex.is_empty()
            && self.objects.is_empty()
            && self.emotion.is_none()
    }

    pub fn compile(&self) -> Result<CompiledOracle, regex::Error> {
        Ok(CompiledOracle {
            contains: self.contains.iter().map(|s| s.to_lowercase()).collect(),
            excludes: self.excludes.iter().map(|s| s.to_lowercase()).collect(),
            regex: self.regex.iter().map(|r| Regex::new(r)).collect::<Result<_, _>>()?,
            objects: self.objects.clone(),
            emotion: self.emotion.as_deref().map(EmotionLabel::parse),
        })
    }
}

#[derive(Debug, Clone)]
pub struct CompiledOracle {
    contains: Vec<String>,
    excludes: Vec<String>,
    regex: Vec<Regex>,
    objects: Vec<ObjectCondition>,
    emotion: Option<EmotionLabel>,
}

impl CompiledOracle {
    pub fn passes(&self, envelope: &ResponseEnvelope) -> bool {
        let text = envelope.reply_text.to_lowercase();
        self.contains.iter().all(|s| text.contains(s.as_str()))
            && self.excludes.iter().all(|s| !text.contains(s.as_str()))
            && self.regex.iter().all(|r| r.is_match(&envelope.reply_text))
            && self.objects.iter().all(|cond| {
                envelope.objects.iter().any(|o| {
                    o.name.eq_ignore_ascii_case(&cond.name)
                        && o.present == cond.present
                        && cond.part_label.is_none_or(|l| o.part_label == Some(l))
                })
            })
            && self.emotion.as_ref().is_none_or(|want| envelope.emotion.as_ref().is_some_and(|e| &e.label == want))
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Scenario {
    pub id: String,
    pub phase: Phase,
    pub initial_user_text: String,
    /// Camera fixtures in role order: task view, then user view.
    #[serde(default)]
    pub fixtures: Vec<String>,
    pub oracle: Oracle,
    #[serde(default)]
    pub feedback_paragraphs: Vec<String>,
    /// Free-form provenance note, e.g. whether the stimulus is reconstructed.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub note: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ScenarioSuite {
    #[serde(default, rename = "scenario")]
    pub scenarios: Vec<Scenario>,
}

impl ScenarioSuite {
    /// Parses and validates a suite against the feedback attempt limit.
    pub fn parse(text: &str, feedback_attempt_limit: u32) -> Result<Self, SuiteError> {
        let suite: ScenarioSuite = toml::from_str(text).map_err(|e| SuiteError::Parse(e.to_string()))?;
        if suite.scenarios.is_empty() {
            return Err(SuiteError::Empty);
        }
        let mut seen = std::collections::HashSet::new();
        for s in &suite.scenarios {
            let invalid =
                |field: &'static str, message: String| SuiteError::Invalid { id: s.id.clone(), field, message };
            if !seen.insert(s.id.as_str()) {
                return Err(invalid("id", "duplicate scenario id".into()));
            }
            if s.initial_user_text.trim().is_empty() {
                return Err(invalid("initial_user_text", "must not be empty".into()));
            }
            if s.oracle.is_empty() {
                return Err(invalid("oracle", "needs at least one condition".into()));
            }
            if let Err(e) = s.oracle.compile() {
                return Err(invalid("oracle.regex", e.to_string()));
            }
            if s.feedback_paragraphs.len() > feedback_attempt_limit as usize {
                return Err(invalid(
                    "feedback_paragraphs",
                    format!("{} paragraphs exceed the limit of {feedback_attempt_limit}", s.feedback_paragraphs.len()),
                ));
            }
            if s.feedback_paragraphs.iter().any(|p| p.trim().is_empty()) {
                return Err(invalid("feedback_paragraphs", "paragraphs must not be empty".into()));
            }
        }
        Ok(suite)
    }
}
