//! Dialogue data model, the corpus file format, synthetic corpus
//! generation, and the intent/slot association analysis.
//!
//! Corpus files are JSON:
//!
//! ```json
//! {"schema": {"intents": [...], "slots": [{"key": "hotel-price", "kind": "categorical", "values": [...]}]},
//!  "dialogues": [{"id": "d0", "turns": [{"sys": "", "usr": "...", "intent": "...",
//!                 "slots": {"hotel-name": {"gate": "value", "value": "the ivy", "span": [12, 19]}}}]}]}
//! ```
//!
//! Span offsets are zero-based, half-open character offsets into `usr`.

mod analysis;
mod generate;

use std::collections::{BTreeMap, HashSet};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tracker::{normalize_value, SlotOutcome, TurnPrediction};

pub use analysis::{
    classify_slot_kind, contingency_table, cramers_v, AnalysisReport, ContingencyTable,
    SlotMetadata, DEFAULT_CATEGORICAL_THRESHOLD,
};
pub use generate::{generate_synthetic, generate_with_config, GeneratorConfig};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SlotKind {
    Span,
    Categorical,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SlotSpec {
    pub key: String,
    pub kind: SlotKind,
    /// Ontology values; required (at least two) for categorical slots.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub values: Vec<String>,
}

impl SlotSpec {
    pub fn span(key: impl Into<String>) -> Self {
        SlotSpec {
            key: key.into(),
            kind: SlotKind::Span,
            values: Vec::new(),
        }
    }

    pub fn categorical(key: impl Into<String>, values: &[&str]) -> Self {
        SlotSpec {
            key: key.into(),
            kind: SlotKind::Categorical,
            values: values.iter().map(|v| v.to_string()).collect(),
        }
    }

    pub fn is_categorical(&self) -> bool {
        self.kind == SlotKind::Categorical
    }

    /// Index of `value` in the ontology after normalization.
    pub fn value_index(&self, value: &str) -> Option<usize> {
        let v = normalize_value(value);
        self.values.iter().position(|x| normalize_value(x) == v)
    }
}

/// Domain ontology: intents, slot keys, categorical value sets.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Schema {
    pub intents: Vec<String>,
    pub slots: Vec<SlotSpec>,
}

impl Schema {
    pub fn validate(&self) -> Result<()> {
        if self.intents.is_empty() {
            return Err(Error::Schema("no intents".into()));
        }
        let mut seen = HashSet::new();
        for i in &self.intents {
            if i.trim().is_empty() || !seen.insert(i.as_str()) {
                return Err(Error::Schema(format!("empty or duplicate intent {i:?}")));
            }
        }
        let mut keys = HashSet::new();
        for s in &self.slots {
            if s.key.is_empty() || s.key.chars().any(|c| c.is_whitespace() || c == ']') {
                return Err(Error::Schema(format!("invalid slot key {:?}", s.key)));
            }
            if !keys.insert(s.key.as_str()) {
                return Err(Error::Schema(format!("duplicate slot key {:?}", s.key)));
            }
            if s.is_categorical() {
                if s.values.len() < 2 {
                    return Err(Error::Schema(format!(
                        "categorical slot {:?} needs at least 2 values",
                        s.key
                    )));
                }
                let mut vals = HashSet::new();
                for v in &s.values {
                    let n = normalize_value(v);
                    if n.is_empty() || n == DONTCARE || n == "none" || !vals.insert(n) {
                        return Err(Error::Schema(format!(
                            "invalid or duplicate value {v:?} for slot {:?}",
                            s.key
                        )));
                    }
                }
            }
        }
        Ok(())
    }

    pub fn slot(&self, key: &str) -> Option<&SlotSpec> {
        self.slots.iter().find(|s| s.key == key)
    }

    pub fn intent_index(&self, intent: &str) -> Option<usize> {
        self.intents.iter().position(|i| i == intent)
    }

    pub fn categorical_slots(&self) -> impl Iterator<Item = &SlotSpec> {
        self.slots.iter().filter(|s| s.is_categorical())
    }

    pub fn span_slots(&self) -> impl Iterator<Item = &SlotSpec> {
        self.slots.iter().filter(|s| !s.is_categorical())
    }

    pub fn num_categorical(&self) -> usize {
        self.categorical_slots().count()
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let schema: Schema = serde_json::from_str(&std::fs::read_to_string(path)?)?;
        schema.validate()?;
        Ok(schema)
    }

    /// Two intents, two span slots and two categorical slots.
    pub fn toy() -> Self {
        Schema {
            intents: vec!["find_hotel".into(), "find_restaurant".into()],
            slots: vec![
                SlotSpec::span("hotel-name"),
                SlotSpec::span("restaurant-name"),
                SlotSpec::categorical("hotel-price", &["cheap", "moderate", "expensive"]),
                SlotSpec::categorical("restaurant-price", &["cheap", "moderate", "expensive"]),
            ],
        }
    }

    /// A slightly larger two-domain ontology with three intents.
    pub fn travel() -> Self {
        Schema {
            intents: vec!["none".into(), "find_hotel".into(), "find_restaurant".into()],
            slots: vec![
                SlotSpec::span("hotel-name"),
                SlotSpec::span("hotel-area"),
                SlotSpec::categorical("hotel-price", &["cheap", "moderate", "expensive"]),
                SlotSpec::categorical("hotel-stars", &["1", "2", "3", "4", "5"]),
                SlotSpec::span("restaurant-name"),
                SlotSpec::span("restaurant-area"),
                SlotSpec::categorical("restaurant-price", &["cheap", "moderate", "expensive"]),
            ],
        }
    }
}

pub const DONTCARE: &str = "dontcare";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Gate {
    None,
    Dontcare,
    Value,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SlotLabel {
    pub gate: Gate,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub value: Option<String>,
    /// Character span `[start, end)` of the value in the user utterance.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub span: Option<[usize; 2]>,
}

impl SlotLabel {
    pub fn value(value: impl Into<String>, span: Option<[usize; 2]>) -> Self {
        SlotLabel {
            gate: Gate::Value,
            value: Some(value.into()),
            span,
        }
    }

    pub fn dontcare() -> Self {
        SlotLabel {
            gate: Gate::Dontcare,
            value: None,
            span: None,
        }
    }

    pub fn mentioned(&self) -> bool {
        self.gate != Gate::None
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Turn {
    #[serde(rename = "sys", default)]
    pub system: String,
    #[serde(rename = "usr")]
    pub user: String,
    pub intent: String,
    /// Slots absent from the map are gated `none`.
    #[serde(default)]
    pub slots: BTreeMap<String, SlotLabel>,
}

impl Turn {
    pub fn label(&self, key: &str) -> Option<&SlotLabel> {
        self.slots.get(key).filter(|l| l.mentioned())
    }

    /// The turn's gold annotation as a tracker prediction.
    pub fn gold_prediction(&self) -> TurnPrediction {
        let slots = self
            .slots
            .iter()
            .map(|(k, l)| {
                let outcome = match l.gate {
                    Gate::None => SlotOutcome::None,
                    Gate::Dontcare => SlotOutcome::Dontcare,
                    Gate::Value => SlotOutcome::Value(l.value.clone().unwrap_or_default()),
                };
                (k.clone(), outcome)
            })
            .collect();
        TurnPrediction {
            intent: Some(self.intent.clone()),
            slots,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Dialogue {
    pub id: String,
    pub turns: Vec<Turn>,
}

impl Dialogue {
    pub fn validate(&self, schema: &Schema) -> Result<()> {
        for (t, turn) in self.turns.iter().enumerate() {
            validate_turn(schema, turn).map_err(|message| Error::Validation {
                dialogue: self.id.clone(),
                turn: t,
                message,
            })?;
        }
        Ok(())
    }
}

fn validate_turn(schema: &Schema, turn: &Turn) -> std::result::Result<(), String> {
    if turn.user.trim().is_empty() {
        return Err("empty user utterance".into());
    }
    if schema.intent_index(&turn.intent).is_none() {
        return Err(format!("unknown intent {:?}", turn.intent));
    }
    for (key, label) in &turn.slots {
        let slot = schema
            .slot(key)
            .ok_or_else(|| format!("unknown slot key {key:?}"))?;
        match label.gate {
            Gate::None | Gate::Dontcare => {
                if label.span.is_some() {
                    return Err(format!("slot {key:?}: span given without a value"));
                }
            }
            Gate::Value => {
                let value = label
                    .value
                    .as_deref()
                    .filter(|v| !v.trim().is_empty())
                    .ok_or_else(|| format!("slot {key:?}: gate value without a value"))?;
                if slot.is_categorical() && slot.value_index(value).is_none() {
                    return Err(format!(
                        "slot {key:?}: value {value:?} is not in the ontology"
                    ));
                }
                match label.span {
                    Some([start, end]) => {
                        let text = char_substring(&turn.user, start, end).ok_or_else(|| {
                            format!("slot {key:?}: span [{start}, {end}) out of range")
                        })?;
                        if text != value {
                            return Err(format!(
                                "slot {key:?}: span [{start}, {end}) is {text:?}, not {value:?}"
                            ));
                        }
                    }
                    None if !slot.is_categorical() => {
                        return Err(format!("span slot {key:?} has a value without a span"));
                    }
                    None => {}
                }
            }
        }
    }
    Ok(())
}

/// Substring by character offsets `[start, end)`.
pub fn char_substring(text: &str, start: usize, end: usize) -> Option<&str> {
    if start >= end {
        return None;
    }
    let mut indices = text
        .char_indices()
        .map(|(i, _)| i)
        .chain(std::iter::once(text.len()));
    let begin = indices.nth(start)?;
    let finish = indices.nth(end - start - 1)?;
    Some(&text[begin..finish])
}

/// On-disk corpus: a schema plus dialogues.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorpusFile {
    pub schema: Schema,
    pub dialogues: Vec<Dialogue>,
}

impl CorpusFile {
    pub fn validate(&self) -> Result<()> {
        self.schema.validate()?;
        let mut ids = HashSet::new();
        for d in &self.dialogues {
            if !ids.insert(d.id.as_str()) {
                return Err(Error::Corpus(format!("duplicate dialogue id {:?}", d.id)));
            }
            d.validate(&self.schema)?;
        }
        Ok(())
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let mut text = self.to_json()?;
        text.push('\n');
        std::fs::write(path, text)?;
        Ok(())
    }

    pub fn num_turns(&self) -> usize {
        self.dialogues.iter().map(|d| d.turns.len()).sum()
    }
}

/// Reads and validates a corpus file. When `expected` is given the file's
/// schema must equal it.
pub fn load_corpus(path: impl AsRef<Path>, expected: Option<&Schema>) -> Result<CorpusFile> {
    let text = std::fs::read_to_string(path.as_ref())?;
    parse_corpus(&text, expected)
}

pub fn parse_corpus(text: &str, expected: Option<&Schema>) -> Result<CorpusFile> {
    let corpus: CorpusFile = serde_json::from_str(text)?;
    if let Some(schema) = expected {
        if *schema != corpus.schema {
            return Err(Error::Configuration(
                "corpus schema differs from the expected schema".into(),
            ));
        }
    }
    corpus.validate()?;
    Ok(corpus)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn turn(user: &str, slots: Vec<(&str, SlotLabel)>) -> Turn {
        Turn {
            system: String::new(),
            user: user.into(),
            intent: "find_hotel".into(),
            slots: slots.into_iter().map(|(k, l)| (k.to_string(), l)).collect(),
        }
    }

    fn corpus(dialogues: Vec<Dialogue>) -> CorpusFile {
        CorpusFile {
            schema: Schema::toy(),
            dialogues,
        }
    }

    #[test]
    fn well_formed_file_loads() {
        let c = corpus(vec![
            Dialogue {
                id: "a".into(),
                turns: vec![turn(
                    "stay at the ivy",
                    vec![("hotel-name", SlotLabel::value("the ivy", Some([8, 15])))],
                )],
            },
            Dialogue {
                id: "b".into(),
                turns: vec![turn(
                    "something inexpensive",
                    vec![("hotel-price", SlotLabel::value("cheap", None))],
                )],
            },
        ]);
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("c.json");
        c.save(&path).unwrap();
        let loaded = load_corpus(&path, Some(&Schema::toy())).unwrap();
        assert_eq!(loaded.dialogues.len(), 2);
        assert_eq!(loaded, c);
    }

    #[test]
    fn mismatched_span_names_the_turn() {
        let c = corpus(vec![Dialogue {
            id: "d7".into(),
            turns: vec![
                turn("hello", vec![]),
                turn(
                    "stay at the ivy",
                    vec![("hotel-name", SlotLabel::value("the ivy", Some([7, 14])))],
                ),
            ],
        }]);
        match parse_corpus(&serde_json::to_string(&c).unwrap(), None) {
            Err(Error::Validation { dialogue, turn, .. }) => {
                assert_eq!(dialogue, "d7");
                assert_eq!(turn, 1);
            }
            other => panic!("expected validation error, got {other:?}"),
        }
    }

    #[test]
    fn out_of_ontology_value_is_rejected() {
        let c = corpus(vec![Dialogue {
            id: "x".into(),
            turns: vec![turn(
                "free please",
                vec![("hotel-price", SlotLabel::value("free", None))],
            )],
        }]);
        let err = c.validate().unwrap_err();
        assert!(matches!(err, Error::Validation { .. }), "{err}");
    }

    #[test]
    fn span_slot_values_need_spans() {
        let c = corpus(vec![Dialogue {
            id: "x".into(),
            turns: vec![turn(
                "the ivy",
                vec![("hotel-name", SlotLabel::value("the ivy", None))],
            )],
        }]);
        assert!(c.validate().is_err());
    }

    #[test]
    fn schema_rules() {
        let mut s = Schema::toy();
        assert!(s.validate().is_ok());
        s.slots.push(SlotSpec::categorical("bad", &["only"]));
        assert!(matches!(s.validate(), Err(Error::Schema(_))));
        let mut s = Schema::toy();
        s.slots.push(SlotSpec::span("hotel-name"));
        assert!(s.validate().is_err());
    }

    #[test]
    fn char_substring_handles_multibyte() {
        assert_eq!(char_substring("café au lait", 0, 4), Some("café"));
        assert_eq!(char_substring("café au lait", 5, 7), Some("au"));
        assert_eq!(char_substring("abc", 1, 4), None);
        assert_eq!(char_substring("abc", 2, 3), Some("c"));
    }
}
