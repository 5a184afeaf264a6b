//! Word-level vocabulary, tokenization with character alignment, and the
//! conditioning-token input layout.
//!
//! Layout of a built sequence:
//!
//! ```text
//! [CLS] [INTENT]? [SLOT-k]* ([SYS]|[USR] history tokens)* [USR] user tokens [SEP]
//! ```
//!
//! `[INTENT]` is present for intent-conditioned variants and one `[SLOT-k]`
//! per categorical slot (schema order) for categorical-conditioned ones.

use std::collections::{BTreeMap, HashMap};
use std::fmt;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::corpus::{char_substring, Dialogue, Schema};
use crate::error::{Error, Result};

pub const PAD: &str = "[PAD]";
pub const UNK: &str = "[UNK]";
pub const CLS: &str = "[CLS]";
pub const SEP: &str = "[SEP]";
pub const USR: &str = "[USR]";
pub const SYS: &str = "[SYS]";
pub const INTENT: &str = "[INTENT]";

pub const PAD_ID: u32 = 0;
pub const UNK_ID: u32 = 1;
pub const CLS_ID: u32 = 2;
pub const SEP_ID: u32 = 3;
pub const USR_ID: u32 = 4;
pub const SYS_ID: u32 = 5;
pub const INTENT_ID: u32 = 6;

const FIXED_SPECIALS: [&str; 7] = [PAD, UNK, CLS, SEP, USR, SYS, INTENT];

pub fn slot_token(key: &str) -> String {
    format!("[SLOT-{key}]")
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Token {
    pub text: String,
    /// Half-open character offsets into the source text.
    pub start: usize,
    pub end: usize,
}

/// Lowercased tokens: runs of alphanumerics, and every other
/// non-whitespace character on its own.
pub fn tokenize(text: &str) -> Vec<Token> {
    let mut tokens = Vec::new();
    let mut current: Option<Token> = None;
    for (i, c) in text.chars().enumerate() {
        if c.is_alphanumeric() {
            let tok = current.get_or_insert_with(|| Token {
                text: String::new(),
                start: i,
                end: i,
            });
            tok.text.extend(c.to_lowercase());
            tok.end = i + 1;
            continue;
        }
        tokens.extend(current.take());
        if !c.is_whitespace() {
            tokens.push(Token {
                text: c.to_lowercase().collect(),
                start: i,
                end: i + 1,
            });
        }
    }
    tokens.extend(current);
    tokens
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Vocabulary {
    tokens: Vec<String>,
    index: HashMap<String, u32>,
    num_specials: usize,
    slot_keys: Vec<String>,
}

#[derive(Serialize, Deserialize)]
struct VocabFile {
    version: u32,
    specials: BTreeMap<String, u32>,
    tokens: Vec<String>,
}

impl Vocabulary {
    fn from_parts(slot_keys: Vec<String>, words: Vec<String>) -> Result<Self> {
        let mut tokens: Vec<String> = FIXED_SPECIALS.iter().map(|s| s.to_string()).collect();
        tokens.extend(slot_keys.iter().map(|k| slot_token(k)));
        let num_specials = tokens.len();
        tokens.extend(words);
        let mut index = HashMap::with_capacity(tokens.len());
        for (i, t) in tokens.iter().enumerate() {
            if index.insert(t.clone(), i as u32).is_some() {
                return Err(Error::Vocab(format!("duplicate token {t:?}")));
            }
        }
        Ok(Vocabulary {
            tokens,
            index,
            num_specials,
            slot_keys,
        })
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn num_specials(&self) -> usize {
        self.num_specials
    }

    pub fn id(&self, token: &str) -> Option<u32> {
        self.index.get(token).copied()
    }

    /// Id of an ordinary word, `[UNK]` when unknown.
    pub fn word_id(&self, word: &str) -> u32 {
        match self.index.get(word) {
            Some(&id) if id as usize >= self.num_specials => id,
            _ => UNK_ID,
        }
    }

    pub fn token(&self, id: u32) -> Option<&str> {
        self.tokens.get(id as usize).map(String::as_str)
    }

    pub fn slot_token_id(&self, key: &str) -> Option<u32> {
        self.id(&slot_token(key))
    }

    /// Categorical slot keys with a conditioning token, in id order.
    pub fn slot_keys(&self) -> &[String] {
        &self.slot_keys
    }

    pub fn to_json(&self) -> Result<String> {
        let file = VocabFile {
            version: 1,
            specials: self.tokens[..self.num_specials]
                .iter()
                .enumerate()
                .map(|(i, t)| (t.clone(), i as u32))
                .collect(),
            tokens: self.tokens.clone(),
        };
        Ok(serde_json::to_string(&file)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let file: VocabFile = serde_json::from_str(text)?;
        if file.version != 1 {
            return Err(Error::Vocab(format!(
                "unsupported vocabulary version {}",
                file.version
            )));
        }
        for (i, s) in FIXED_SPECIALS.iter().enumerate() {
            if file.specials.get(*s) != Some(&(i as u32))
                || file.tokens.get(i).map(String::as_str) != Some(*s)
            {
                return Err(Error::Vocab(format!("special token {s} missing or moved")));
            }
        }
        let num_specials = file.specials.len();
        let mut slot_keys = Vec::new();
        for (i, t) in file
            .tokens
            .iter()
            .enumerate()
            .take(num_specials)
            .skip(FIXED_SPECIALS.len())
        {
            let key = t
                .strip_prefix("[SLOT-")
                .and_then(|r| r.strip_suffix(']'))
                .filter(|_| file.specials.get(t) == Some(&(i as u32)))
                .ok_or_else(|| Error::Vocab(format!("unexpected special token {t:?}")))?;
            slot_keys.push(key.to_string());
        }
        let words = file.tokens[num_specials..].to_vec();
        Self::from_parts(slot_keys, words)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        std::fs::write(path, self.to_json()? + "\n")?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }
}

/// Vocabulary over all system and user utterances. Words rarer than
/// `min_frequency` are left out and tokenize to `[UNK]`.
pub fn build_vocab(
    dialogues: &[Dialogue],
    schema: &Schema,
    min_frequency: usize,
) -> Result<Vocabulary> {
    if dialogues.iter().all(|d| d.turns.is_empty()) {
        return Err(Error::Corpus(
            "cannot build a vocabulary from an empty corpus".into(),
        ));
    }
    if min_frequency == 0 {
        return Err(Error::Configuration(
            "min_frequency must be positive".into(),
        ));
    }
    let mut counts: BTreeMap<String, usize> = BTreeMap::new();
    for turn in dialogues.iter().flat_map(|d| &d.turns) {
        for tok in tokenize(&turn.system)
            .into_iter()
            .chain(tokenize(&turn.user))
        {
            *counts.entry(tok.text).or_default() += 1;
        }
    }
    let words = counts
        .into_iter()
        .filter(|(w, c)| *c >= min_frequency && !w.starts_with('['))
        .map(|(w, _)| w)
        .collect();
    let keys = schema.categorical_slots().map(|s| s.key.clone()).collect();
    Vocabulary::from_parts(keys, words)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Variant {
    #[serde(rename = "baseline")]
    Baseline,
    #[serde(rename = "bdst-i")]
    BdstI,
    #[serde(rename = "bdst-c")]
    BdstC,
    #[serde(rename = "bdst-j")]
    BdstJ,
}

impl Variant {
    pub const ALL: [Variant; 4] = [
        Variant::Baseline,
        Variant::BdstI,
        Variant::BdstC,
        Variant::BdstJ,
    ];

    pub fn conditions_on_intent(self) -> bool {
        matches!(self, Variant::BdstI | Variant::BdstJ)
    }

    pub fn conditions_on_categorical(self) -> bool {
        matches!(self, Variant::BdstC | Variant::BdstJ)
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Variant::Baseline => "baseline",
            Variant::BdstI => "bdst-i",
            Variant::BdstC => "bdst-c",
            Variant::BdstJ => "bdst-j",
        }
    }

    pub fn num_conditioning_tokens(self, schema: &Schema) -> usize {
        usize::from(self.conditions_on_intent())
            + if self.conditions_on_categorical() {
                schema.num_categorical()
            } else {
                0
            }
    }
}

impl fmt::Display for Variant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Variant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Variant::ALL
            .into_iter()
            .find(|v| v.as_str() == s.to_ascii_lowercase())
            .ok_or_else(|| Error::Configuration(format!("unknown variant {s:?}")))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModelVariant {
    pub kind: Variant,
    /// Number of prior utterances placed before the user utterance.
    pub history_window: usize,
}

impl ModelVariant {
    pub fn new(kind: Variant) -> Self {
        ModelVariant {
            kind,
            history_window: 1,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Speaker {
    System,
    User,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Utterance {
    pub speaker: Speaker,
    pub text: String,
}

impl Utterance {
    pub fn system(text: impl Into<String>) -> Self {
        Utterance {
            speaker: Speaker::System,
            text: text.into(),
        }
    }

    pub fn user(text: impl Into<String>) -> Self {
        Utterance {
            speaker: Speaker::User,
            text: text.into(),
        }
    }
}

/// Every utterance before the user utterance of turn `t`, oldest first.
pub fn dialogue_history(dialogue: &Dialogue, t: usize) -> Vec<Utterance> {
    let mut out = Vec::new();
    for (i, turn) in dialogue.turns[..=t].iter().enumerate() {
        out.push(Utterance::system(turn.system.clone()));
        if i < t {
            out.push(Utterance::user(turn.user.clone()));
        }
    }
    out
}

/// Where a content token came from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Alignment {
    /// Index into `history ++ [user]` as passed to [`build_input_sequence`].
    pub utterance: usize,
    pub start: usize,
    pub end: usize,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct InputSequence {
    pub variant: Variant,
    pub token_ids: Vec<u32>,
    pub segment_ids: Vec<u8>,
    pub cls_index: usize,
    pub intent_index: Option<usize>,
    /// (slot key, position) per categorical conditioning token.
    pub categorical_indices: Option<Vec<(String, usize)>>,
    pub span_mask: Vec<bool>,
    pub alignment: Vec<Option<Alignment>>,
    /// Index of the current user utterance in `history ++ [user]`.
    pub user_utterance: usize,
    /// Length before padding.
    pub length: usize,
}

impl InputSequence {
    pub fn len(&self) -> usize {
        self.token_ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.token_ids.is_empty()
    }

    /// True at every non-pad position.
    pub fn attention_mask(&self) -> Vec<bool> {
        (0..self.len()).map(|i| i < self.length).collect()
    }

    pub fn num_conditioning_tokens(&self) -> usize {
        usize::from(self.intent_index.is_some())
            + self.categorical_indices.as_ref().map_or(0, Vec::len)
    }

    /// The span mask restricted to the current user utterance.
    pub fn user_span_mask(&self) -> Vec<bool> {
        self.alignment
            .iter()
            .map(|a| a.is_some_and(|a| a.utterance == self.user_utterance))
            .collect()
    }

    pub fn pad_to(&mut self, len: usize) {
        while self.token_ids.len() < len {
            self.token_ids.push(PAD_ID);
            self.segment_ids.push(0);
            self.span_mask.push(false);
            self.alignment.push(None);
        }
    }

    /// Token positions covering the character range `[start, end)` of the
    /// given utterance, or `None` when it fell outside the sequence.
    pub fn token_span(&self, utterance: usize, start: usize, end: usize) -> Option<(usize, usize)> {
        let mut first = None;
        let mut last = None;
        for (i, a) in self.alignment.iter().enumerate() {
            let Some(a) = a.filter(|a| a.utterance == utterance) else {
                continue;
            };
            if a.end > start && a.start < end {
                first.get_or_insert(i);
                last = Some(i);
            }
        }
        let (first, last) = (first?, last?);
        let a = self.alignment[first].unwrap();
        let b = self.alignment[last].unwrap();
        (a.start <= start && b.end >= end).then_some((first, last))
    }
}

/// Assembles the conditioned input for one user turn.
///
/// The most recent `history_window` non-empty history utterances are
/// considered. When the result is longer than `max_len`, whole history
/// utterances are dropped oldest first, then the user utterance's tail is
/// cut. Conditioning tokens are never dropped.
pub fn build_input_sequence(
    vocab: &Vocabulary,
    variant: ModelVariant,
    schema: &Schema,
    history: &[Utterance],
    user: &str,
    max_len: usize,
) -> Result<InputSequence> {
    let user_tokens = tokenize(user);
    if user_tokens.is_empty() {
        return Err(Error::Corpus("empty user utterance".into()));
    }
    let kind = variant.kind;
    let mut token_ids = vec![CLS_ID];
    let intent_index = kind.conditions_on_intent().then(|| {
        token_ids.push(INTENT_ID);
        token_ids.len() - 1
    });
    let categorical_indices = if kind.conditions_on_categorical() {
        let mut indices = Vec::new();
        for slot in schema.categorical_slots() {
            let id = vocab.slot_token_id(&slot.key).ok_or_else(|| {
                Error::Vocab(format!("no conditioning token for slot {:?}", slot.key))
            })?;
            token_ids.push(id);
            indices.push((slot.key.clone(), token_ids.len() - 1));
        }
        Some(indices)
    } else {
        None
    };
    let prefix = token_ids.len();
    let budget = max_len.saturating_sub(prefix + 1);
    if budget < 2 {
        return Err(Error::Capacity(format!(
            "max_len {max_len} cannot hold {prefix} leading tokens, [SEP] and one content token"
        )));
    }

    let user_keep = user_tokens.len().min(budget - 1);
    let mut remaining = budget - 1 - user_keep;
    let mut included = Vec::new();
    let recent = history
        .iter()
        .enumerate()
        .filter(|(_, u)| !tokenize(&u.text).is_empty())
        .rev()
        .take(variant.history_window);
    for (i, utt) in recent {
        let n = tokenize(&utt.text).len() + 1;
        if n > remaining {
            break;
        }
        remaining -= n;
        included.push(i);
    }
    included.reverse();

    let mut segment_ids = vec![0u8; prefix];
    let mut span_mask = vec![false; prefix];
    let mut alignment = vec![None; prefix];
    let mut push_utterance = |speaker: Speaker, source: usize, tokens: &[Token], segment: u8| {
        token_ids.push(match speaker {
            Speaker::System => SYS_ID,
            Speaker::User => USR_ID,
        });
        segment_ids.push(segment);
        span_mask.push(false);
        alignment.push(None);
        for tok in tokens {
            token_ids.push(vocab.word_id(&tok.text));
            segment_ids.push(segment);
            span_mask.push(true);
            alignment.push(Some(Alignment {
                utterance: source,
                start: tok.start,
                end: tok.end,
            }));
        }
    };
    for &i in &included {
        push_utterance(history[i].speaker, i, &tokenize(&history[i].text), 0);
    }
    push_utterance(Speaker::User, history.len(), &user_tokens[..user_keep], 1);
    token_ids.push(SEP_ID);
    segment_ids.push(1);
    span_mask.push(false);
    alignment.push(None);

    let length = token_ids.len();
    Ok(InputSequence {
        variant: kind,
        token_ids,
        segment_ids,
        cls_index: 0,
        intent_index,
        categorical_indices,
        span_mask,
        alignment,
        user_utterance: history.len(),
        length,
    })
}

/// Original-casing text covered by token positions `start..=end`.
/// `sources` is `history ++ [user]` as passed when the sequence was built.
pub fn detokenize_span(
    seq: &InputSequence,
    start: usize,
    end: usize,
    sources: &[&str],
) -> Result<String> {
    if start > end || end >= seq.len() {
        return Err(Error::InvalidSpan(format!(
            "positions ({start}, {end}) are not a span"
        )));
    }
    if !seq.span_mask[start] || !seq.span_mask[end] {
        return Err(Error::InvalidSpan(format!(
            "span ({start}, {end}) starts or ends outside content tokens"
        )));
    }
    let (a, b) = match (seq.alignment[start], seq.alignment[end]) {
        (Some(a), Some(b)) => (a, b),
        _ => return Err(Error::InvalidSpan("unaligned span endpoint".into())),
    };
    if a.utterance != b.utterance {
        return Err(Error::InvalidSpan(format!(
            "span ({start}, {end}) crosses utterances"
        )));
    }
    let text = sources.get(a.utterance).ok_or_else(|| {
        Error::InvalidSpan(format!("no source text for utterance {}", a.utterance))
    })?;
    char_substring(text, a.start, b.end)
        .map(str::to_string)
        .ok_or_else(|| Error::InvalidSpan("alignment outside the source text".into()))
}
