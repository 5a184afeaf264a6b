//! Dialogue-state accumulation and the evaluation metrics: joint-goal
//! accuracy, micro slot F1 and intent accuracy.

use std::collections::{BTreeMap, HashMap};

use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::corpus::{Schema, DONTCARE};
use crate::error::{Error, Result};

/// Lowercase, trim and collapse internal whitespace.
pub fn normalize_value(value: &str) -> String {
    value
        .split_whitespace()
        .map(str::to_lowercase)
        .collect::<Vec<_>>()
        .join(" ")
}

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub enum SlotOutcome {
    None,
    Dontcare,
    Value(String),
}

impl Serialize for SlotOutcome {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        match self {
            SlotOutcome::None => s.serialize_none(),
            SlotOutcome::Dontcare => s.serialize_str(DONTCARE),
            SlotOutcome::Value(v) => s.serialize_str(v),
        }
    }
}

impl<'de> Deserialize<'de> for SlotOutcome {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        Ok(match Option::<String>::deserialize(d)? {
            None => SlotOutcome::None,
            Some(v) if normalize_value(&v) == DONTCARE => SlotOutcome::Dontcare,
            Some(v) => SlotOutcome::Value(v),
        })
    }
}

/// Everything the tracker asserts about one user turn. Slots missing from
/// `slots` are treated as `none`.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct TurnPrediction {
    #[serde(default)]
    pub intent: Option<String>,
    #[serde(default)]
    pub slots: BTreeMap<String, SlotOutcome>,
}

impl TurnPrediction {
    /// Normalized (key, value) pairs asserted by this turn, dontcare included.
    pub fn pairs(&self) -> Vec<(String, String)> {
        self.slots
            .iter()
            .filter_map(|(k, o)| match o {
                SlotOutcome::None => None,
                SlotOutcome::Dontcare => Some((k.clone(), DONTCARE.to_string())),
                SlotOutcome::Value(v) => Some((k.clone(), normalize_value(v))),
            })
            .collect()
    }
}

/// Accumulated slot key → normalized value map.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct DialogueState(pub BTreeMap<String, String>);

impl DialogueState {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn get(&self, key: &str) -> Option<&str> {
        self.0.get(key).map(String::as_str)
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }
}

/// `none` leaves a key untouched, `dontcare` and values overwrite it.
pub fn update_state(
    state: &DialogueState,
    turn: &TurnPrediction,
    schema: &Schema,
) -> Result<DialogueState> {
    let mut next = state.clone();
    apply_turn(&mut next, turn, schema)?;
    Ok(next)
}

pub(crate) fn apply_turn(
    state: &mut DialogueState,
    turn: &TurnPrediction,
    schema: &Schema,
) -> Result<()> {
    for key in turn.slots.keys() {
        if schema.slot(key).is_none() {
            return Err(Error::Schema(format!("unknown slot key {key:?}")));
        }
    }
    for (key, value) in turn.pairs() {
        state.0.insert(key, value);
    }
    Ok(())
}

/// A predicted and a gold turn sequence for one dialogue.
pub type DialoguePair = (Vec<TurnPrediction>, Vec<TurnPrediction>);

/// Per-turn joint-goal hits (1 when the accumulated states agree).
pub fn joint_goal_hits(
    pred: &[TurnPrediction],
    gold: &[TurnPrediction],
    schema: &Schema,
) -> Result<Vec<bool>> {
    if pred.len() != gold.len() {
        return Err(Error::Alignment(format!(
            "{} predicted turns against {} gold turns",
            pred.len(),
            gold.len()
        )));
    }
    let mut ps = DialogueState::new();
    let mut gs = DialogueState::new();
    pred.iter()
        .zip(gold)
        .map(|(p, g)| {
            apply_turn(&mut ps, p, schema)?;
            apply_turn(&mut gs, g, schema)?;
            Ok(ps == gs)
        })
        .collect()
}

/// Mean joint-goal score over every turn of every dialogue; `None` when
/// there are no turns.
pub fn joint_goal_accuracy(dialogues: &[DialoguePair], schema: &Schema) -> Result<Option<f64>> {
    let mut hits = 0usize;
    let mut turns = 0usize;
    for (pred, gold) in dialogues {
        let h = joint_goal_hits(pred, gold, schema)?;
        turns += h.len();
        hits += h.iter().filter(|&&x| x).count();
    }
    Ok((turns > 0).then(|| hits as f64 / turns as f64))
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct PairCounts {
    pub true_positives: usize,
    pub predicted: usize,
    pub gold: usize,
}

impl PairCounts {
    pub fn precision(&self) -> f64 {
        ratio_or_one(self.true_positives, self.predicted)
    }

    pub fn recall(&self) -> f64 {
        ratio_or_one(self.true_positives, self.gold)
    }

    /// Both sides empty counts as perfect agreement.
    pub fn f1(&self) -> f64 {
        if self.predicted + self.gold == 0 {
            return 1.0;
        }
        2.0 * self.true_positives as f64 / (self.predicted + self.gold) as f64
    }

    fn add(&mut self, tp: usize, predicted: usize, gold: usize) {
        self.true_positives += tp;
        self.predicted += predicted;
        self.gold += gold;
    }
}

fn ratio_or_one(num: usize, den: usize) -> f64 {
    if den == 0 {
        1.0
    } else {
        num as f64 / den as f64
    }
}

/// Micro-averaged F1 over per-turn (key, normalized value) pairs.
pub fn slot_f1(pred: &[TurnPrediction], gold: &[TurnPrediction]) -> Result<f64> {
    Ok(slot_pair_counts(pred, gold)?.f1())
}

pub fn slot_pair_counts(pred: &[TurnPrediction], gold: &[TurnPrediction]) -> Result<PairCounts> {
    if pred.len() != gold.len() {
        return Err(Error::Alignment(format!(
            "{} predicted turns against {} gold turns",
            pred.len(),
            gold.len()
        )));
    }
    let mut counts = PairCounts::default();
    for (p, g) in pred.iter().zip(gold) {
        let pp = p.pairs();
        let gp = g.pairs();
        let tp = pp.iter().filter(|x| gp.contains(x)).count();
        counts.add(tp, pp.len(), gp.len());
    }
    Ok(counts)
}

/// Fraction of turns whose predicted intent equals the gold intent.
pub fn intent_accuracy(pred: &[Option<String>], gold: &[String]) -> Result<Option<f64>> {
    if pred.len() != gold.len() {
        return Err(Error::Alignment(format!(
            "{} predicted intents against {} gold intents",
            pred.len(),
            gold.len()
        )));
    }
    let hits = pred
        .iter()
        .zip(gold)
        .filter(|(p, g)| p.as_deref() == Some(g.as_str()))
        .count();
    Ok((!gold.is_empty()).then(|| hits as f64 / gold.len() as f64))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SlotReport {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    /// Fraction of turns at which this slot's accumulated value is right.
    pub state_accuracy: Option<f64>,
}

/// Evaluation report. `intent_accuracy` is absent for variants without an
/// intent head and null when there are no turns.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub joint_goal: Option<f64>,
    pub slot_f1: Option<f64>,
    #[serde(
        default,
        skip_serializing_if = "Option::is_none",
        with = "double_option"
    )]
    pub intent_accuracy: Option<Option<f64>>,
    pub per_slot: BTreeMap<String, SlotReport>,
    pub turn_count: usize,
}

mod double_option {
    use serde::{Deserialize, Deserializer, Serialize, Serializer};

    pub fn serialize<S: Serializer>(v: &Option<Option<f64>>, s: S) -> Result<S::Ok, S::Error> {
        v.as_ref().expect("skipped when absent").serialize(s)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Option<Option<f64>>, D::Error> {
        Option::<f64>::deserialize(d).map(Some)
    }
}

/// Builds the full report from aligned predicted/gold turn sequences.
/// `with_intent` controls whether intent accuracy is reported.
pub fn evaluate_predictions(
    dialogues: &[DialoguePair],
    schema: &Schema,
    with_intent: bool,
) -> Result<EvalReport> {
    let mut jg_hits = 0usize;
    let mut turns = 0usize;
    let mut pair_counts = PairCounts::default();
    let mut per_slot: HashMap<&str, (PairCounts, usize)> = schema
        .slots
        .iter()
        .map(|s| (s.key.as_str(), Default::default()))
        .collect();
    let mut pred_intents = Vec::new();
    let mut gold_intents = Vec::new();

    for (pred, gold) in dialogues {
        if pred.len() != gold.len() {
            return Err(Error::Alignment(format!(
                "{} predicted turns against {} gold turns",
                pred.len(),
                gold.len()
            )));
        }
        let mut ps = DialogueState::new();
        let mut gs = DialogueState::new();
        for (p, g) in pred.iter().zip(gold) {
            apply_turn(&mut ps, p, schema)?;
            apply_turn(&mut gs, g, schema)?;
            turns += 1;
            jg_hits += usize::from(ps == gs);
            let pp = p.pairs();
            let gp = g.pairs();
            pair_counts.add(
                pp.iter().filter(|x| gp.contains(x)).count(),
                pp.len(),
                gp.len(),
            );
            for slot in &schema.slots {
                let key = slot.key.as_str();
                let pv = pp.iter().find(|(k, _)| k == key).map(|(_, v)| v);
                let gv = gp.iter().find(|(k, _)| k == key).map(|(_, v)| v);
                let entry = per_slot.get_mut(key).unwrap();
                let tp = usize::from(pv.is_some() && pv == gv);
                entry
                    .0
                    .add(tp, usize::from(pv.is_some()), usize::from(gv.is_some()));
                entry.1 += usize::from(ps.get(key) == gs.get(key));
            }
            pred_intents.push(p.intent.clone());
            gold_intents.push(g.intent.clone().unwrap_or_default());
        }
    }

    let rate = |n: usize| (turns > 0).then(|| n as f64 / turns as f64);
    let per_slot = per_slot
        .into_iter()
        .map(|(k, (c, hits))| {
            let report = SlotReport {
                precision: c.precision(),
                recall: c.recall(),
                f1: c.f1(),
                state_accuracy: rate(hits),
            };
            (k.to_string(), report)
        })
        .collect();
    let intent_accuracy = if with_intent {
        Some(intent_accuracy(&pred_intents, &gold_intents)?)
    } else {
        None
    };
    Ok(EvalReport {
        joint_goal: rate(jg_hits),
        slot_f1: (turns > 0).then(|| pair_counts.f1()),
        intent_accuracy,
        per_slot,
        turn_count: turns,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tp(slots: &[(&str, SlotOutcome)]) -> TurnPrediction {
        TurnPrediction {
            intent: None,
            slots: slots
                .iter()
                .map(|(k, o)| (k.to_string(), o.clone()))
                .collect(),
        }
    }

    fn v(s: &str) -> SlotOutcome {
        SlotOutcome::Value(s.into())
    }

    #[test]
    fn update_examples() {
        let schema = Schema::toy();
        let s = update_state(
            &DialogueState::new(),
            &tp(&[("hotel-price", v("cheap"))]),
            &schema,
        )
        .unwrap();
        assert_eq!(s.get("hotel-price"), Some("cheap"));
        let s2 = update_state(&s, &tp(&[("hotel-price", SlotOutcome::None)]), &schema).unwrap();
        assert_eq!(s2, s);
        let s3 = update_state(
            &s,
            &tp(&[
                ("hotel-price", v("Moderate")),
                ("hotel-name", v("  the   Ivy ")),
            ]),
            &schema,
        )
        .unwrap();
        assert_eq!(s3.get("hotel-price"), Some("moderate"));
        assert_eq!(s3.get("hotel-name"), Some("the ivy"));
        let s4 =
            update_state(&s3, &tp(&[("hotel-price", SlotOutcome::Dontcare)]), &schema).unwrap();
        assert_eq!(s4.get("hotel-price"), Some("dontcare"));
        assert!(matches!(
            update_state(&s, &tp(&[("nope", v("x"))]), &schema),
            Err(Error::Schema(_))
        ));
    }

    #[test]
    fn slot_f1_examples() {
        let gold = vec![tp(&[
            ("hotel-price", v("cheap")),
            ("hotel-name", v("the ivy")),
        ])];
        assert_eq!(slot_f1(&gold, &gold).unwrap(), 1.0);
        assert_eq!(slot_f1(&[tp(&[])], &gold).unwrap(), 0.0);
        let pred = vec![tp(&[
            ("hotel-price", v("CHEAP")),
            ("restaurant-name", v("x")),
        ])];
        let c = slot_pair_counts(&pred, &gold).unwrap();
        assert_eq!((c.precision(), c.recall(), c.f1()), (0.5, 0.5, 0.5));
    }

    #[test]
    fn intent_accuracy_examples() {
        let gold: Vec<String> = (0..10).map(|i| format!("i{i}")).collect();
        let mut pred: Vec<Option<String>> = gold.iter().cloned().map(Some).collect();
        assert_eq!(intent_accuracy(&pred, &gold).unwrap(), Some(1.0));
        pred[3] = Some("wrong".into());
        assert!((intent_accuracy(&pred, &gold).unwrap().unwrap() - 0.9).abs() < 1e-15);
        let none: Vec<Option<String>> = vec![None; 10];
        assert_eq!(intent_accuracy(&none, &gold).unwrap(), Some(0.0));
        assert!(matches!(
            intent_accuracy(&none[..2], &gold),
            Err(Error::Alignment(_))
        ));
        assert_eq!(intent_accuracy(&[], &[]).unwrap(), None);
    }

    #[test]
    fn report_json_shape() {
        let schema = Schema::toy();
        let empty = evaluate_predictions(&[], &schema, false).unwrap();
        let json = serde_json::to_value(&empty).unwrap();
        assert_eq!(json["turn_count"], 0);
        assert!(json["joint_goal"].is_null());
        assert!(json.get("intent_accuracy").is_none());
        let with = evaluate_predictions(&[], &schema, true).unwrap();
        let json = serde_json::to_value(&with).unwrap();
        assert!(json.get("intent_accuracy").unwrap().is_null());
        let back: EvalReport = serde_json::from_value(json).unwrap();
        assert_eq!(back, with);
    }

    #[test]
    fn outcome_serialization() {
        let p = tp(&[
            ("a", SlotOutcome::None),
            ("b", SlotOutcome::Dontcare),
            ("c", v("x")),
        ]);
        let text = serde_json::to_string(&p).unwrap();
        assert_eq!(
            text,
            r#"{"intent":null,"slots":{"a":null,"b":"dontcare","c":"x"}}"#
        );
        assert_eq!(serde_json::from_str::<TurnPrediction>(&text).unwrap(), p);
    }
}
