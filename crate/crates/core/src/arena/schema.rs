//! Column mappings for preference datasets.
//!
//! A schema is explicit configuration: it names the two model columns, how the
//! outcome is encoded and which columns to keep as opaque metadata. Schemas can
//! be loaded from TOML or taken from one of the built-in presets.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Format {
    Csv,
    Tsv,
    Jsonl,
}

/// How the outcome of a row is recorded.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum OutcomeSpec {
    /// A single column holding one label per row.
    Label {
        column: String,
        a_wins: Vec<String>,
        b_wins: Vec<String>,
        /// Labels dropped as non-decisive (ties, "both bad", ...).
        ties: Vec<String>,
    },
    /// Three indicator columns, exactly one of which is set per row.
    OneHot { a_wins: String, b_wins: String, tie: String },
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Schema {
    pub format: Format,
    /// Overrides the delimiter implied by `format` for delimited input.
    #[serde(default)]
    pub delimiter: Option<char>,
    pub model_a: String,
    pub model_b: String,
    pub outcome: OutcomeSpec,
    /// Model placed at index 0 (score pinned to zero). Defaults to the first model seen.
    #[serde(default)]
    pub reference: Option<String>,
    /// Columns preserved verbatim as matchup metadata.
    #[serde(default)]
    pub metadata: Vec<String>,
    /// Skip and count malformed rows instead of failing on the first one.
    #[serde(default)]
    pub skip_malformed: bool,
}

pub const PRESETS: &[&str] =
    &["arena-human-preference-55k", "chatbot-arena-llm-judges", "mt-bench-human-judgments"];

impl Schema {
    /// A label-column schema with the common `model_a` / `model_b` / `tie` labels.
    pub fn labeled(format: Format, model_a: &str, model_b: &str, outcome_column: &str) -> Self {
        Self {
            format,
            delimiter: None,
            model_a: model_a.into(),
            model_b: model_b.into(),
            outcome: OutcomeSpec::Label {
                column: outcome_column.into(),
                a_wins: vec!["model_a".into()],
                b_wins: vec!["model_b".into()],
                ties: vec!["tie".into(), "tie (bothbad)".into()],
            },
            reference: None,
            metadata: Vec::new(),
            skip_malformed: false,
        }
    }

    /// Built-in schemas for the public arena exports.
    ///
    /// - `arena-human-preference-55k`: CSV with `winner_model_a`, `winner_model_b`,
    ///   `winner_tie` indicator columns.
    /// - `chatbot-arena-llm-judges`, `mt-bench-human-judgments`: JSON-lines with a
    ///   `winner` column taking `model_a`, `model_b`, `tie` or `tie (bothbad)`.
    pub fn preset(name: &str) -> Result<Self> {
        match name {
            "arena-human-preference-55k" => Ok(Self {
                format: Format::Csv,
                delimiter: None,
                model_a: "model_a".into(),
                model_b: "model_b".into(),
                outcome: OutcomeSpec::OneHot {
                    a_wins: "winner_model_a".into(),
                    b_wins: "winner_model_b".into(),
                    tie: "winner_tie".into(),
                },
                reference: None,
                metadata: vec![
                    "id".into(),
                    "prompt".into(),
                    "response_a".into(),
                    "response_b".into(),
                ],
                skip_malformed: false,
            }),
            "chatbot-arena-llm-judges" => {
                let mut s = Self::labeled(Format::Jsonl, "model_a", "model_b", "winner");
                s.metadata = vec![
                    "question_id".into(),
                    "judge".into(),
                    "conversation_a".into(),
                    "conversation_b".into(),
                ];
                Ok(s)
            }
            "mt-bench-human-judgments" => {
                let mut s = Self::labeled(Format::Jsonl, "model_a", "model_b", "winner");
                s.metadata = vec![
                    "question_id".into(),
                    "judge".into(),
                    "turn".into(),
                    "conversation_a".into(),
                    "conversation_b".into(),
                ];
                Ok(s)
            }
            other => Err(Error::Schema(format!(
                "unknown preset {other:?} (available: {})",
                PRESETS.join(", ")
            ))),
        }
    }

    pub fn from_toml(text: &str) -> Result<Self> {
        let schema: Self = toml::from_str(text)?;
        schema.validate()?;
        Ok(schema)
    }

    /// Preset name or path to a TOML schema file.
    pub fn load(spec: &str) -> Result<Self> {
        if PRESETS.contains(&spec) {
            return Self::preset(spec);
        }
        let text = std::fs::read_to_string(spec).map_err(|e| {
            Error::Schema(format!("{spec:?} is neither a preset nor a readable file: {e}"))
        })?;
        Self::from_toml(&text)
    }

    pub fn validate(&self) -> Result<()> {
        if self.model_a.is_empty() || self.model_b.is_empty() || self.model_a == self.model_b {
            return Err(Error::Schema(
                "model_a and model_b must be distinct non-empty columns".into(),
            ));
        }
        if let OutcomeSpec::Label { a_wins, b_wins, ties, .. } = &self.outcome {
            if a_wins.is_empty() || b_wins.is_empty() {
                return Err(Error::Schema(
                    "outcome needs at least one a_wins and one b_wins label".into(),
                ));
            }
            let mut seen = std::collections::HashSet::new();
            for label in a_wins.iter().chain(b_wins).chain(ties) {
                if !seen.insert(label) {
                    return Err(Error::Schema(format!("outcome label {label:?} listed twice")));
                }
            }
        }
        Ok(())
    }

    pub fn delimiter_byte(&self) -> Result<u8> {
        let c = match (self.delimiter, self.format) {
            (Some(c), _) => c,
            (None, Format::Tsv) => '\t',
            (None, _) => ',',
        };
        u8::try_from(c as u32)
            .map_err(|_| Error::Schema(format!("delimiter {c:?} is not a single byte")))
    }

    /// Same mapping without metadata columns.
    pub fn without_metadata(mut self) -> Self {
        self.metadata.clear();
        self
    }
}
