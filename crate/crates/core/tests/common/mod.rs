#![allow(dead_code)]

//! Independent reference implementations used as test oracles.

use std::collections::BTreeMap;

use rand::seq::IndexedRandom;
use rand::Rng;
use tcdst_core::corpus::Schema;
use tcdst_core::tracker::{SlotOutcome, TurnPrediction};

pub const VALUES: &[&str] = &[
    "cheap", "Cheap", " cheap  ", "moderate", "the ivy", "The  Ivy", "north", "4",
];

pub fn norm(v: &str) -> String {
    let lower = v.to_lowercase();
    let words: Vec<&str> = lower.split(' ').filter(|w| !w.is_empty()).collect();
    words.join(" ")
}

/// State after turn `t`, rebuilt from the first turn every time.
pub fn state_at(turns: &[TurnPrediction], t: usize) -> BTreeMap<String, String> {
    let mut state = BTreeMap::new();
    for turn in &turns[..=t] {
        for (k, o) in &turn.slots {
            match o {
                SlotOutcome::None => {}
                SlotOutcome::Dontcare => {
                    state.insert(k.clone(), "dontcare".to_string());
                }
                SlotOutcome::Value(v) => {
                    state.insert(k.clone(), norm(v));
                }
            }
        }
    }
    state
}

pub fn joint_goal(pairs: &[(Vec<TurnPrediction>, Vec<TurnPrediction>)]) -> Option<f64> {
    let mut hits = 0;
    let mut total = 0;
    for (p, g) in pairs {
        assert_eq!(p.len(), g.len());
        for t in 0..p.len() {
            total += 1;
            if state_at(p, t) == state_at(g, t) {
                hits += 1;
            }
        }
    }
    (total > 0).then(|| hits as f64 / total as f64)
}

pub fn random_outcome(rng: &mut impl Rng) -> SlotOutcome {
    match rng.random_range(0..6) {
        0 => SlotOutcome::None,
        1 => SlotOutcome::Dontcare,
        _ => SlotOutcome::Value(VALUES.choose(rng).unwrap().to_string()),
    }
}

pub fn random_turn(schema: &Schema, rng: &mut impl Rng) -> TurnPrediction {
    let mut slots = BTreeMap::new();
    for slot in &schema.slots {
        if rng.random_bool(0.4) {
            slots.insert(slot.key.clone(), random_outcome(rng));
        }
    }
    TurnPrediction {
        intent: Some(schema.intents.choose(rng).unwrap().clone()),
        slots,
    }
}

pub fn random_dialogue(schema: &Schema, turns: usize, rng: &mut impl Rng) -> Vec<TurnPrediction> {
    (0..turns).map(|_| random_turn(schema, rng)).collect()
}

/// Copies `gold` and rewrites a random subset of turns: outcomes are
/// replaced, dropped or added.
pub fn corrupt(
    schema: &Schema,
    gold: &[TurnPrediction],
    rng: &mut impl Rng,
) -> Vec<TurnPrediction> {
    let mut pred = gold.to_vec();
    for turn in &mut pred {
        if !rng.random_bool(0.3) {
            continue;
        }
        let key = &schema.slots.choose(rng).unwrap().key;
        match rng.random_range(0..3) {
            0 => {
                turn.slots.remove(key);
            }
            1 => {
                turn.slots.insert(key.clone(), random_outcome(rng));
            }
            _ => {
                turn.slots
                    .insert(key.clone(), SlotOutcome::Value("wrong".into()));
            }
        }
    }
    pred
}

pub fn value(v: &str) -> SlotOutcome {
    SlotOutcome::Value(v.to_string())
}

pub fn turn(slots: &[(&str, SlotOutcome)]) -> TurnPrediction {
    TurnPrediction {
        intent: None,
        slots: slots
            .iter()
            .map(|(k, o)| (k.to_string(), o.clone()))
            .collect(),
    }
}
