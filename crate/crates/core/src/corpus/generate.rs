//! Template-based synthetic dialogues with a tunable intent/slot association.

use std::collections::BTreeMap;

use rand::seq::{IndexedRandom, SliceRandom};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::corpus::{Dialogue, Schema, SlotLabel, SlotSpec, Turn};
use crate::error::{Error, Result};

const NAMES: &[&str] = &[
    "palo alto grill",
    "golden wok",
    "blue door",
    "the ivy",
    "sakura house",
    "casa luna",
    "red lion",
    "old mill",
    "green leaf",
    "silver moon",
    "royal oak",
    "little italy",
    "ocean view",
    "copper kettle",
    "bella vista",
    "jade garden",
    "white horse",
    "maple lodge",
    "riverside inn",
    "cedar house",
    "the grand",
    "star bistro",
    "sunset diner",
    "lotus court",
    "harbor house",
    "oak tree inn",
    "spice route",
    "city lodge",
    "park plaza",
    "blue lagoon",
    "rose garden",
    "the anchor",
    "hill view",
    "north star",
    "iron gate",
    "willow tree",
];
const AREAS: &[&str] = &[
    "north",
    "south",
    "east",
    "west",
    "centre",
    "downtown",
    "riverside",
    "old town",
    "uptown",
    "harbor",
    "city centre",
    "west end",
];
const DAYS: &[&str] = &[
    "monday",
    "tuesday",
    "wednesday",
    "thursday",
    "friday",
    "saturday",
    "sunday",
];
const TIMES: &[&str] = &[
    "7 pm", "8 pm", "noon", "6 30", "9 am", "midnight", "5 pm", "1 pm",
];
const FOODS: &[&str] = &[
    "italian", "chinese", "indian", "french", "thai", "mexican", "british", "korean", "greek",
    "turkish",
];
const GENERIC: &[&str] = &[
    "alpha", "bravo", "delta", "echo", "kilo", "lima", "oscar", "romeo", "sierra", "tango",
    "victor", "zulu",
];

const VALUE_TEMPLATES: &[&str] = &[
    "{s} {v}",
    "the {s} should be {v}",
    "with {s} {v}",
    "i need {s} {v}",
    "{v} for the {s}",
];
const DONTCARE_TEMPLATES: &[&str] = &[
    "any {s} is fine",
    "i do not care about the {s}",
    "the {s} does not matter",
];
const INTENT_TEMPLATES: &[&str] = &[
    "i want to {i}",
    "please help me {i}",
    "i would like to {i}",
    "can you {i}",
];
const NONE_INTENT_PHRASES: &[&str] = &["ok", "hmm", "well", "alright"];
const SYSTEM_PROMPTS: &[&str] = &[
    "anything else ?",
    "what else can i do for you ?",
    "sure . anything else ?",
    "ok . what else do you need ?",
];

fn default_paraphrases() -> BTreeMap<String, Vec<String>> {
    let pairs: &[(&str, &[&str])] = &[
        ("cheap", &["inexpensive", "budget"]),
        ("moderate", &["mid priced", "reasonably priced"]),
        ("expensive", &["pricey", "upscale"]),
        ("yes", &["sure"]),
        ("no", &["nope"]),
        ("1", &["one"]),
        ("2", &["two"]),
        ("3", &["three"]),
        ("4", &["four"]),
        ("5", &["five"]),
        ("6", &["six"]),
        ("7", &["seven"]),
        ("8", &["eight"]),
    ];
    pairs
        .iter()
        .map(|(k, v)| (k.to_string(), v.iter().map(|s| s.to_string()).collect()))
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GeneratorConfig {
    pub min_turns: usize,
    pub max_turns: usize,
    pub max_mentions: usize,
    pub dontcare_prob: f64,
    /// Chance that a categorical value with a known paraphrase is expressed
    /// through it instead of verbatim.
    pub paraphrase_prob: f64,
    pub intent_switch_prob: f64,
    /// Value pools for span slots, by slot key. Slots without an entry draw
    /// from a built-in pool chosen by the key's last word.
    pub span_values: BTreeMap<String, Vec<String>>,
    /// Fixed paraphrase lookup for categorical values.
    pub paraphrases: BTreeMap<String, Vec<String>>,
}

impl Default for GeneratorConfig {
    fn default() -> Self {
        GeneratorConfig {
            min_turns: 2,
            max_turns: 5,
            max_mentions: 2,
            dontcare_prob: 0.1,
            paraphrase_prob: 0.3,
            intent_switch_prob: 0.3,
            span_values: BTreeMap::new(),
            paraphrases: default_paraphrases(),
        }
    }
}

impl GeneratorConfig {
    fn validate(&self) -> Result<()> {
        let probs = [
            self.dontcare_prob,
            self.paraphrase_prob,
            self.intent_switch_prob,
        ];
        if probs.iter().any(|p| !(0.0..=1.0).contains(p)) {
            return Err(Error::Configuration(
                "generator probabilities must lie in [0, 1]".into(),
            ));
        }
        if self.min_turns == 0 || self.min_turns > self.max_turns || self.max_mentions == 0 {
            return Err(Error::Configuration("generator turn/mention bounds".into()));
        }
        if self.span_values.values().any(Vec::is_empty) {
            return Err(Error::Configuration("empty span value pool".into()));
        }
        Ok(())
    }

    fn span_pool(&self, slot: &SlotSpec) -> Vec<String> {
        if let Some(pool) = self.span_values.get(&slot.key) {
            return pool.clone();
        }
        let surface = surface_form(&slot.key);
        let last = surface.rsplit(' ').next().unwrap_or("");
        let pool = match last {
            "name" | "movie" | "title" => NAMES,
            "area" | "location" | "place" | "destination" | "departure" => AREAS,
            "day" | "date" => DAYS,
            "time" | "leaveat" | "arriveby" => TIMES,
            "food" | "cuisine" => FOODS,
            _ => GENERIC,
        };
        pool.iter().map(|s| s.to_string()).collect()
    }
}

/// Slot key as it is spoken: the part after the last domain separator,
/// with underscores as spaces (`hotel-book_day` -> `book day`).
fn surface_form(key: &str) -> String {
    key.rsplit('-').next().unwrap_or(key).replace('_', " ")
}

fn intent_words(intent: &str) -> String {
    intent.replace(['_', '-'], " ").to_lowercase()
}

/// Each intent's designated slots: slots whose domain prefix occurs in the
/// intent name; unmatched slots are dealt round-robin.
fn designated_slots(schema: &Schema) -> Vec<Vec<usize>> {
    let m = schema.intents.len();
    let mut subsets = vec![Vec::new(); m];
    let mut unmatched = Vec::new();
    for (j, slot) in schema.slots.iter().enumerate() {
        let owner = slot.key.split_once('-').and_then(|(domain, _)| {
            schema
                .intents
                .iter()
                .position(|i| i.to_lowercase().contains(&domain.to_lowercase()))
        });
        match owner {
            Some(i) => subsets[i].push(j),
            None => unmatched.push(j),
        }
    }
    for (n, j) in unmatched.into_iter().enumerate() {
        subsets[n % m].push(j);
    }
    subsets
}

pub fn generate_synthetic(
    schema: &Schema,
    num_dialogues: usize,
    rho: f64,
    seed: u64,
) -> Result<Vec<Dialogue>> {
    generate_with_config(
        schema,
        num_dialogues,
        rho,
        seed,
        &GeneratorConfig::default(),
    )
}

/// Dialogue `k` is drawn from its own RNG stream, so any index range can be
/// generated independently.
pub fn generate_with_config(
    schema: &Schema,
    num_dialogues: usize,
    rho: f64,
    seed: u64,
    config: &GeneratorConfig,
) -> Result<Vec<Dialogue>> {
    schema.validate()?;
    config.validate()?;
    if schema.intents.len() < 2 {
        return Err(Error::Schema(
            "the generator needs at least 2 intents".into(),
        ));
    }
    if schema.slots.is_empty() {
        return Err(Error::Schema("the generator needs at least 1 slot".into()));
    }
    if !(0.0..=1.0).contains(&rho) {
        return Err(Error::Configuration(format!(
            "correlation strength {rho} outside [0, 1]"
        )));
    }
    let subsets = designated_slots(schema);
    let pools: Vec<Vec<String>> = schema
        .slots
        .iter()
        .map(|s| {
            if s.is_categorical() {
                s.values.clone()
            } else {
                config.span_pool(s)
            }
        })
        .collect();

    (0..num_dialogues)
        .map(|k| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(k as u64);
            let gen = DialogueGen {
                schema,
                config,
                subsets: &subsets,
                pools: &pools,
                rho,
            };
            Ok(gen.dialogue(format!("d{k:05}"), &mut rng))
        })
        .collect()
}

struct DialogueGen<'a> {
    schema: &'a Schema,
    config: &'a GeneratorConfig,
    subsets: &'a [Vec<usize>],
    pools: &'a [Vec<String>],
    rho: f64,
}

impl DialogueGen<'_> {
    fn dialogue(&self, id: String, rng: &mut ChaCha8Rng) -> Dialogue {
        let n_turns = rng.random_range(self.config.min_turns..=self.config.max_turns);
        let m = self.schema.intents.len();
        let mut intent = rng.random_range(0..m);
        let turns = (0..n_turns)
            .map(|t| {
                if t > 0 && rng.random_bool(self.config.intent_switch_prob) {
                    intent = rng.random_range(0..m);
                }
                let system = if t == 0 {
                    String::new()
                } else {
                    SYSTEM_PROMPTS.choose(rng).unwrap().to_string()
                };
                self.turn(intent, system, rng)
            })
            .collect();
        Dialogue { id, turns }
    }

    fn mentioned_slots(&self, intent: usize, rng: &mut ChaCha8Rng) -> Vec<usize> {
        let subset = &self.subsets[intent];
        if !subset.is_empty() && rng.random_bool(self.rho) {
            let k = rng.random_range(1..=self.config.max_mentions.min(subset.len()));
            let mut chosen: Vec<usize> = subset.choose_multiple(rng, k).copied().collect();
            chosen.sort_unstable();
            chosen
        } else {
            vec![rng.random_range(0..self.schema.slots.len())]
        }
    }

    fn turn(&self, intent: usize, system: String, rng: &mut ChaCha8Rng) -> Turn {
        let intent_name = &self.schema.intents[intent];
        let mut user = if intent_name == "none" {
            NONE_INTENT_PHRASES.choose(rng).unwrap().to_string()
        } else {
            INTENT_TEMPLATES
                .choose(rng)
                .unwrap()
                .replace("{i}", &intent_words(intent_name))
        };

        let mut mentioned = self.mentioned_slots(intent, rng);
        mentioned.shuffle(rng);
        let mut slots = BTreeMap::new();
        for (n, &j) in mentioned.iter().enumerate() {
            user.push_str(if n == 0 { " " } else { " and " });
            let slot = &self.schema.slots[j];
            let surface = surface_form(&slot.key);
            if rng.random_bool(self.config.dontcare_prob) {
                let phrase = DONTCARE_TEMPLATES
                    .choose(rng)
                    .unwrap()
                    .replace("{s}", &surface);
                user.push_str(&phrase);
                slots.insert(slot.key.clone(), SlotLabel::dontcare());
                continue;
            }
            let value = self.pools[j].choose(rng).unwrap().clone();
            let paraphrase = slot
                .is_categorical()
                .then(|| self.config.paraphrases.get(&value))
                .flatten()
                .filter(|p| !p.is_empty())
                .filter(|_| rng.random_bool(self.config.paraphrase_prob))
                .map(|p| p.choose(rng).unwrap().clone());
            let template = VALUE_TEMPLATES
                .choose(rng)
                .unwrap()
                .replace("{s}", &surface);
            let (before, after) = template
                .split_once("{v}")
                .expect("template has a value slot");
            user.push_str(before);
            let label = match paraphrase {
                Some(text) => {
                    user.push_str(&text);
                    SlotLabel::value(value, None)
                }
                None => {
                    let start = user.chars().count();
                    user.push_str(&value);
                    let end = user.chars().count();
                    SlotLabel::value(value, Some([start, end]))
                }
            };
            user.push_str(after);
            slots.insert(slot.key.clone(), label);
        }
        Turn {
            system,
            user,
            intent: intent_name.clone(),
            slots,
        }
    }
}
