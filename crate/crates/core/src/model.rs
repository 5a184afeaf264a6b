//! A full tracker: vocabulary, encoder, heads, training targets, batch
//! loss, per-turn prediction and checkpoint round trips.

use std::path::Path;

use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::corpus::{Dialogue, Gate, Schema};
use crate::encoder::{
    encoder_forward, init_conditioning_embeddings, init_encoder_params, EncoderConfig, Mode,
};
use crate::error::{Error, Result};
use crate::heads::{
    decode_span, gate_slots, heads_forward, init_head_params, ComponentLosses, HeadOutputs,
    LossCoefficients, SlotGold, CAT_VALUE_OFFSET, DEFAULT_MAX_SPAN_LEN, GATE_CLASSES,
    GATE_DONTCARE, GATE_NONE, GATE_SPAN,
};
use crate::numeric::{
    softmax, weighted_sum, AdamState, BoundParams, Checkpoint, Graph, ParamStore, Precision, Real,
    Var,
};
use crate::tokenizer::{
    build_input_sequence, detokenize_span, dialogue_history, InputSequence, ModelVariant,
    Utterance, Variant, Vocabulary,
};
use crate::tracker::{evaluate_predictions, DialoguePair, EvalReport, SlotOutcome, TurnPrediction};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub variant: ModelVariant,
    pub encoder: EncoderConfig,
    #[serde(default = "default_max_span_len")]
    pub max_span_len: usize,
}

fn default_max_span_len() -> usize {
    DEFAULT_MAX_SPAN_LEN
}

/// Everything about a model except its parameters.
#[derive(Debug, Clone)]
pub struct ModelSpec {
    pub config: ModelConfig,
    pub schema: Schema,
    pub vocab: Vocabulary,
}

/// Training targets for one user turn.
#[derive(Debug, Clone, PartialEq)]
pub struct TurnExample {
    pub seq: InputSequence,
    /// `history ++ [user]`, matching the sequence's alignment.
    pub sources: Vec<String>,
    pub intent: usize,
    /// One entry per gate slot.
    pub slots: Vec<SlotGold>,
    /// One class per categorical slot when the variant conditions on them.
    pub categorical: Vec<usize>,
}

/// The batch loss on the tape and the plain component means.
pub struct BatchLoss<'g, F: Real> {
    pub total: Var<'g, F>,
    pub components: ComponentLosses,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IntentDecision {
    pub label: String,
    pub probs: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DecodedSpan {
    pub start: usize,
    pub end: usize,
    pub text: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SlotDecision {
    pub key: String,
    /// Probabilities over none, dontcare, span.
    pub gate_probs: Vec<f64>,
    pub gate: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub span: Option<DecodedSpan>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CategoricalDecision {
    pub key: String,
    /// Probabilities over none, dontcare, then the ontology values.
    pub probs: Vec<f64>,
    pub value: String,
}

/// Everything the heads said about one user turn.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TurnOutput {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub intent: Option<IntentDecision>,
    pub slots: Vec<SlotDecision>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub categorical: Vec<CategoricalDecision>,
    pub prediction: TurnPrediction,
}

fn argmax(xs: &[f64]) -> usize {
    let mut best = 0;
    for (i, &x) in xs.iter().enumerate() {
        if x > xs[best] {
            best = i;
        }
    }
    best
}

fn probs_of<F: Real>(logits: Var<'_, F>) -> Result<Vec<f64>> {
    let v: Vec<F> = logits.to_vec();
    Ok(softmax(&v)?
        .into_iter()
        .map(|p| p.to_f64_lossless())
        .collect())
}

impl ModelSpec {
    pub fn new(config: ModelConfig, schema: Schema, vocab: Vocabulary) -> Result<Self> {
        schema.validate()?;
        config.encoder.validate()?;
        if config.encoder.vocab_size != vocab.len() {
            return Err(Error::Configuration(format!(
                "encoder vocab_size {} differs from the vocabulary size {}",
                config.encoder.vocab_size,
                vocab.len()
            )));
        }
        let cat_keys: Vec<&String> = schema.categorical_slots().map(|s| &s.key).collect();
        if !vocab.slot_keys().iter().eq(cat_keys.iter().copied()) {
            return Err(Error::Configuration(
                "vocabulary conditioning tokens do not match the schema's categorical slots".into(),
            ));
        }
        if config.max_span_len == 0 {
            return Err(Error::Configuration("max_span_len must be positive".into()));
        }
        Ok(ModelSpec {
            config,
            schema,
            vocab,
        })
    }

    pub fn variant(&self) -> Variant {
        self.config.variant.kind
    }

    /// Freshly initialized parameters, deterministic in the encoder seed.
    pub fn init_params<F: Real>(&self) -> Result<ParamStore<F>> {
        let seed = self.config.encoder.seed;
        let mut params = ParamStore::new();
        init_encoder_params(&self.config.encoder, &mut params)?;
        init_conditioning_embeddings(&mut params, &self.vocab, self.variant(), seed)?;
        init_head_params(
            &mut params,
            &self.schema,
            self.variant(),
            self.config.encoder.hidden_size,
            seed,
        )?;
        Ok(params)
    }

    pub fn build_sequence(&self, history: &[Utterance], user: &str) -> Result<InputSequence> {
        build_input_sequence(
            &self.vocab,
            self.config.variant,
            &self.schema,
            history,
            user,
            self.config.encoder.max_len,
        )
    }

    pub fn example(&self, dialogue: &Dialogue, t: usize) -> Result<TurnExample> {
        let turn = &dialogue.turns[t];
        let history = dialogue_history(dialogue, t);
        let seq = self.build_sequence(&history, &turn.user)?;
        let mut sources: Vec<String> = history.into_iter().map(|u| u.text).collect();
        sources.push(turn.user.clone());
        let intent = self
            .schema
            .intent_index(&turn.intent)
            .ok_or_else(|| Error::Corpus(format!("unknown intent {:?}", turn.intent)))?;
        let slots = gate_slots(&self.schema, self.variant())
            .into_iter()
            .map(|slot| match turn.label(&slot.key) {
                None => SlotGold {
                    gate: GATE_NONE,
                    span: None,
                },
                Some(l) if l.gate == Gate::Dontcare => SlotGold {
                    gate: GATE_DONTCARE,
                    span: None,
                },
                Some(l) => SlotGold {
                    gate: GATE_SPAN,
                    span: l
                        .span
                        .and_then(|[s, e]| seq.token_span(seq.user_utterance, s, e)),
                },
            })
            .collect();
        let categorical = if self.variant().conditions_on_categorical() {
            self.schema
                .categorical_slots()
                .map(|slot| match turn.label(&slot.key) {
                    None => Ok(GATE_NONE),
                    Some(l) if l.gate == Gate::Dontcare => Ok(GATE_DONTCARE),
                    Some(l) => {
                        let v = l.value.as_deref().unwrap_or_default();
                        slot.value_index(v)
                            .map(|i| i + CAT_VALUE_OFFSET)
                            .ok_or_else(|| {
                                Error::Corpus(format!(
                                    "value {v:?} outside the ontology of {}",
                                    slot.key
                                ))
                            })
                    }
                })
                .collect::<Result<Vec<_>>>()?
        } else {
            Vec::new()
        };
        Ok(TurnExample {
            seq,
            sources,
            intent,
            slots,
            categorical,
        })
    }

    pub fn examples(&self, dialogues: &[Dialogue]) -> Result<Vec<TurnExample>> {
        let mut out = Vec::new();
        for d in dialogues {
            for t in 0..d.turns.len() {
                out.push(self.example(d, t)?);
            }
        }
        Ok(out)
    }

    fn forward<'g, F: Real>(
        &self,
        params: &BoundParams<'g, '_, F>,
        seq: &InputSequence,
        mode: Mode<'_>,
    ) -> Result<HeadOutputs<'g, F>> {
        let out = encoder_forward(&self.config.encoder, params, seq, mode)?;
        heads_forward(self.variant(), &out, seq, &self.schema, params)
    }

    /// Mean component losses over a batch, combined with `coefficients`.
    /// Without a dropout generator the encoder runs deterministically.
    pub fn batch_loss<'g, F: Real>(
        &self,
        graph: &'g Graph<F>,
        params: &BoundParams<'g, '_, F>,
        examples: &[&TurnExample],
        coefficients: &LossCoefficients,
        mut dropout: Option<&mut ChaCha8Rng>,
    ) -> Result<BatchLoss<'g, F>> {
        let mut gate = Vec::new();
        let mut start = Vec::new();
        let mut end = Vec::new();
        let mut intent = Vec::new();
        let mut cat = Vec::new();
        for ex in examples {
            let mask = ex.seq.user_span_mask();
            let mode = match dropout.as_deref_mut() {
                Some(rng) => Mode::Train(rng),
                None => Mode::GradCheck,
            };
            let heads = self.forward(params, &ex.seq, mode)?;
            for (h, gold) in heads.slots.iter().zip(&ex.slots) {
                gate.push(h.gate_logits.softmax_cross_entropy(gold.gate, None)?);
                if let Some((s, e)) = gold.span {
                    start.push(h.start_logits.softmax_cross_entropy(s, Some(&mask))?);
                    end.push(h.end_logits.softmax_cross_entropy(e, Some(&mask))?);
                }
            }
            if let Some(logits) = heads.intent {
                intent.push(logits.softmax_cross_entropy(ex.intent, None)?);
            }
            for (h, &gold) in heads.categorical.iter().flatten().zip(&ex.categorical) {
                cat.push(h.logits.softmax_cross_entropy(gold, None)?);
            }
        }
        let mean = |terms: &[Var<'g, F>]| -> f64 {
            if terms.is_empty() {
                0.0
            } else {
                terms
                    .iter()
                    .map(|t| t.item().to_f64_lossless())
                    .sum::<f64>()
                    / terms.len() as f64
            }
        };
        let variant = self.variant();
        let components = ComponentLosses {
            gate: mean(&gate),
            start: mean(&start),
            end: mean(&end),
            intent: variant.conditions_on_intent().then(|| mean(&intent)),
            cat: variant.conditions_on_categorical().then(|| mean(&cat)),
        };
        let mut terms = Vec::new();
        for (group, coef) in [
            (&gate, coefficients.gate),
            (&start, coefficients.start),
            (&end, coefficients.end),
            (&intent, coefficients.intent),
            (&cat, coefficients.cat),
        ] {
            if group.is_empty() || coef == 0.0 {
                continue;
            }
            let w = F::from_f64_lossy(coef / group.len() as f64);
            terms.extend(group.iter().map(|&t| (t, w)));
        }
        let total = weighted_sum(graph, &terms)?;
        Ok(BatchLoss { total, components })
    }

    fn decide<F: Real>(
        &self,
        heads: &HeadOutputs<'_, F>,
        seq: &InputSequence,
        sources: &[&str],
    ) -> Result<TurnOutput> {
        let mut prediction = TurnPrediction::default();
        let intent = match heads.intent {
            Some(logits) => {
                let probs = probs_of(logits)?;
                let label = self.schema.intents[argmax(&probs)].clone();
                prediction.intent = Some(label.clone());
                Some(IntentDecision { label, probs })
            }
            None => None,
        };
        let mut slots = Vec::with_capacity(heads.slots.len());
        for h in &heads.slots {
            let gate_probs = probs_of(h.gate_logits)?;
            let g = argmax(&gate_probs);
            let mut span = None;
            let outcome = match g {
                GATE_NONE => SlotOutcome::None,
                GATE_DONTCARE => SlotOutcome::Dontcare,
                _ => {
                    let (s, e) = decode_span(
                        &h.start_logits.to_vec(),
                        &h.end_logits.to_vec(),
                        &seq.user_span_mask(),
                        self.config.max_span_len,
                    )?;
                    let text = detokenize_span(seq, s, e, sources)?;
                    let slot = self
                        .schema
                        .slot(&h.key)
                        .expect("gate slot is in the schema");
                    // Extracted text for a categorical slot maps onto its
                    // ontology spelling when it matches one.
                    let value = match slot.value_index(&text) {
                        Some(i) if slot.is_categorical() => slot.values[i].clone(),
                        _ => text.clone(),
                    };
                    span = Some(DecodedSpan {
                        start: s,
                        end: e,
                        text,
                    });
                    SlotOutcome::Value(value)
                }
            };
            prediction.slots.insert(h.key.clone(), outcome);
            slots.push(SlotDecision {
                key: h.key.clone(),
                gate_probs,
                gate: GATE_CLASSES[g].to_string(),
                span,
            });
        }
        let mut categorical = Vec::new();
        for h in heads.categorical.iter().flatten() {
            let probs = probs_of(h.logits)?;
            let c = argmax(&probs);
            let slot = self
                .schema
                .slot(&h.key)
                .expect("categorical slot is in the schema");
            let (outcome, value) = match c {
                GATE_NONE => (SlotOutcome::None, "none".to_string()),
                GATE_DONTCARE => (SlotOutcome::Dontcare, "dontcare".to_string()),
                _ => {
                    let v = slot.values[c - CAT_VALUE_OFFSET].clone();
                    (SlotOutcome::Value(v.clone()), v)
                }
            };
            prediction.slots.insert(h.key.clone(), outcome);
            categorical.push(CategoricalDecision {
                key: h.key.clone(),
                probs,
                value,
            });
        }
        Ok(TurnOutput {
            intent,
            slots,
            categorical,
            prediction,
        })
    }
}

pub struct Model<F: Real> {
    pub spec: ModelSpec,
    pub params: ParamStore<F>,
}

impl<F: Real> Model<F> {
    pub fn new(spec: ModelSpec) -> Result<Self> {
        let params = spec.init_params()?;
        Ok(Model { spec, params })
    }

    pub fn schema(&self) -> &Schema {
        &self.spec.schema
    }

    pub fn variant(&self) -> Variant {
        self.spec.variant()
    }

    /// Frozen inference on a single turn.
    pub fn predict(&self, history: &[Utterance], user: &str) -> Result<TurnOutput> {
        let seq = self.spec.build_sequence(history, user)?;
        let mut sources: Vec<&str> = history.iter().map(|u| u.text.as_str()).collect();
        sources.push(user);
        let graph = Graph::new();
        let bound = self.params.bind_frozen(&graph);
        let heads = self.spec.forward(&bound, &seq, Mode::Eval)?;
        self.spec.decide(&heads, &seq, &sources)
    }

    /// Per-turn outputs for every dialogue.
    pub fn predict_dialogues(&self, dialogues: &[Dialogue]) -> Result<Vec<Vec<TurnOutput>>> {
        let graph = Graph::new();
        let bound = self.params.bind_frozen(&graph);
        let base = graph.len();
        dialogues
            .iter()
            .map(|d| {
                (0..d.turns.len())
                    .map(|t| {
                        let history = dialogue_history(d, t);
                        let seq = self.spec.build_sequence(&history, &d.turns[t].user)?;
                        let mut sources: Vec<&str> =
                            history.iter().map(|u| u.text.as_str()).collect();
                        sources.push(&d.turns[t].user);
                        let heads = self.spec.forward(&bound, &seq, Mode::Eval)?;
                        let out = self.spec.decide(&heads, &seq, &sources);
                        graph.truncate(base);
                        out
                    })
                    .collect()
            })
            .collect()
    }

    pub fn evaluate(&self, dialogues: &[Dialogue]) -> Result<EvalReport> {
        let outputs = self.predict_dialogues(dialogues)?;
        let pairs: Vec<DialoguePair> = outputs
            .into_iter()
            .zip(dialogues)
            .map(|(pred, d)| {
                (
                    pred.into_iter().map(|o| o.prediction).collect(),
                    d.turns.iter().map(|t| t.gold_prediction()).collect(),
                )
            })
            .collect();
        evaluate_predictions(
            &pairs,
            &self.spec.schema,
            self.variant().conditions_on_intent(),
        )
    }

    /// Checkpoint with the model description under `metadata.model`,
    /// `metadata.schema` and `metadata.vocab`, plus any `extra` fields.
    pub fn to_checkpoint(
        &self,
        optimizer: Option<&AdamState>,
        seed: u64,
        extra: serde_json::Value,
    ) -> Result<Checkpoint> {
        let mut meta = serde_json::Map::new();
        meta.insert("model".into(), serde_json::to_value(&self.spec.config)?);
        meta.insert("schema".into(), serde_json::to_value(&self.spec.schema)?);
        meta.insert(
            "vocab".into(),
            serde_json::from_str(&self.spec.vocab.to_json()?)?,
        );
        if let serde_json::Value::Object(extra) = extra {
            meta.extend(extra);
        }
        Ok(Checkpoint::from_params(
            &self.params,
            optimizer,
            seed,
            serde_json::Value::Object(meta),
        ))
    }

    pub fn from_checkpoint(checkpoint: &Checkpoint) -> Result<Self> {
        let spec = spec_from_checkpoint(checkpoint)?;
        let params: ParamStore<F> = checkpoint.to_params()?;
        let expected: ParamStore<F> = spec.init_params()?;
        let same = params.len() == expected.len()
            && params
                .iter()
                .zip(expected.iter())
                .all(|((a, ta), (b, tb))| a == b && ta.shape() == tb.shape());
        if !same {
            return Err(Error::Checkpoint(
                "parameters do not match the model description".into(),
            ));
        }
        Ok(Model { spec, params })
    }
}

fn spec_from_checkpoint(checkpoint: &Checkpoint) -> Result<ModelSpec> {
    let meta = &checkpoint.metadata;
    let field = |k: &str| {
        meta.get(k)
            .cloned()
            .ok_or_else(|| Error::Checkpoint(format!("metadata has no {k:?} entry")))
    };
    let config: ModelConfig = serde_json::from_value(field("model")?)?;
    let schema: Schema = serde_json::from_value(field("schema")?)?;
    let vocab = Vocabulary::from_json(&field("vocab")?.to_string())?;
    ModelSpec::new(config, schema, vocab)
}

/// A model at whichever precision its checkpoint was written in.
pub enum AnyModel {
    F32(Model<f32>),
    F64(Model<f64>),
}

macro_rules! dispatch {
    ($self:expr, $m:ident => $body:expr) => {
        match $self {
            AnyModel::F32($m) => $body,
            AnyModel::F64($m) => $body,
        }
    };
}

impl AnyModel {
    pub fn from_checkpoint(checkpoint: &Checkpoint) -> Result<Self> {
        Ok(match checkpoint.precision {
            Precision::F32 => AnyModel::F32(Model::from_checkpoint(checkpoint)?),
            Precision::F64 => AnyModel::F64(Model::from_checkpoint(checkpoint)?),
        })
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_checkpoint(&Checkpoint::load(path)?)
    }

    pub fn spec(&self) -> &ModelSpec {
        dispatch!(self, m => &m.spec)
    }

    pub fn schema(&self) -> &Schema {
        &self.spec().schema
    }

    pub fn variant(&self) -> Variant {
        self.spec().variant()
    }

    pub fn predict(&self, history: &[Utterance], user: &str) -> Result<TurnOutput> {
        dispatch!(self, m => m.predict(history, user))
    }

    pub fn evaluate(&self, dialogues: &[Dialogue]) -> Result<EvalReport> {
        dispatch!(self, m => m.evaluate(dialogues))
    }
}
