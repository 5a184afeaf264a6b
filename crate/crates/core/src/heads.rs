//! Task heads on top of the encoder and the loss family that combines them.
//!
//! * slot gate (`gate.<slot>.{w,b}`), reading the `[CLS]` row, over
//!   {none, dontcare, span};
//! * span start/end (`span_start.<slot>.w`, `span_end.<slot>.w`), one logit
//!   per position;
//! * intent (`intent.{w,b}`), reading the `[INTENT]` row;
//! * categorical (`cat.<slot>.{w,b}`), reading the `[SLOT-<slot>]` row, over
//!   {none, dontcare} followed by the ontology values.
//!
//! Gate and span heads exist for every slot when the variant has no
//! categorical conditioning, and only for span slots when it does.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::corpus::{Schema, SlotSpec};
use crate::encoder::{normal_tensor, EncoderOutput, INIT_STD};
use crate::error::{Error, Result};
use crate::numeric::{cross_entropy, BoundParams, ParamStore, Real, Tensor, Var};
use crate::tokenizer::{InputSequence, Variant};

pub const GATE_CLASSES: [&str; 3] = ["none", "dontcare", "span"];
pub const GATE_NONE: usize = 0;
pub const GATE_DONTCARE: usize = 1;
pub const GATE_SPAN: usize = 2;
/// Categorical classes 0 and 1 are none and dontcare; values start here.
pub const CAT_VALUE_OFFSET: usize = 2;
pub const DEFAULT_MAX_SPAN_LEN: usize = 10;

/// Slots with a gate and span head under `variant`.
pub fn gate_slots(schema: &Schema, variant: Variant) -> Vec<&SlotSpec> {
    if variant.conditions_on_categorical() {
        schema.span_slots().collect()
    } else {
        schema.slots.iter().collect()
    }
}

/// Adds head parameters: normal(0, 0.02) weights, zero biases.
pub fn init_head_params<F: Real>(
    params: &mut ParamStore<F>,
    schema: &Schema,
    variant: Variant,
    hidden: usize,
    seed: u64,
) -> Result<()> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(2);
    for slot in gate_slots(schema, variant) {
        let k = &slot.key;
        params.insert(
            format!("gate.{k}.w"),
            normal_tensor(vec![hidden, 3], INIT_STD, &mut rng),
        )?;
        params.insert(format!("gate.{k}.b"), Tensor::zeros(vec![3]))?;
        params.insert(
            format!("span_start.{k}.w"),
            normal_tensor(vec![hidden, 1], INIT_STD, &mut rng),
        )?;
        params.insert(
            format!("span_end.{k}.w"),
            normal_tensor(vec![hidden, 1], INIT_STD, &mut rng),
        )?;
    }
    if variant.conditions_on_intent() {
        let m = schema.intents.len();
        params.insert(
            "intent.w",
            normal_tensor(vec![hidden, m], INIT_STD, &mut rng),
        )?;
        params.insert("intent.b", Tensor::zeros(vec![m]))?;
    }
    if variant.conditions_on_categorical() {
        for slot in schema.categorical_slots() {
            let c = slot.values.len() + CAT_VALUE_OFFSET;
            let k = &slot.key;
            params.insert(
                format!("cat.{k}.w"),
                normal_tensor(vec![hidden, c], INIT_STD, &mut rng),
            )?;
            params.insert(format!("cat.{k}.b"), Tensor::zeros(vec![c]))?;
        }
    }
    Ok(())
}

pub struct SlotHeadOutput<'g, F: Real> {
    pub key: String,
    /// `[1, 3]`.
    pub gate_logits: Var<'g, F>,
    /// `[n, 1]`.
    pub start_logits: Var<'g, F>,
    pub end_logits: Var<'g, F>,
}

pub struct CategoricalHeadOutput<'g, F: Real> {
    pub key: String,
    /// `[1, |values| + 2]`.
    pub logits: Var<'g, F>,
}

pub struct HeadOutputs<'g, F: Real> {
    pub slots: Vec<SlotHeadOutput<'g, F>>,
    pub intent: Option<Var<'g, F>>,
    pub categorical: Option<Vec<CategoricalHeadOutput<'g, F>>>,
}

pub fn heads_forward<'g, F: Real>(
    variant: Variant,
    output: &EncoderOutput<'g, F>,
    seq: &InputSequence,
    schema: &Schema,
    params: &BoundParams<'g, '_, F>,
) -> Result<HeadOutputs<'g, F>> {
    check_sequence(variant, seq, schema)?;
    let o = output.hidden;
    if o.shape()[0] != seq.len() {
        return Err(Error::Configuration(format!(
            "encoder output has {} rows for a sequence of {}",
            o.shape()[0],
            seq.len()
        )));
    }
    let cls = o.row(seq.cls_index)?;
    let slots = gate_slots(schema, variant)
        .into_iter()
        .map(|slot| {
            let k = &slot.key;
            Ok(SlotHeadOutput {
                key: k.clone(),
                gate_logits: cls.linear(
                    params.var(&format!("gate.{k}.w"))?,
                    Some(params.var(&format!("gate.{k}.b"))?),
                )?,
                start_logits: o.matmul(params.var(&format!("span_start.{k}.w"))?)?,
                end_logits: o.matmul(params.var(&format!("span_end.{k}.w"))?)?,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let intent = match seq.intent_index {
        Some(i) => Some(
            o.row(i)?
                .linear(params.var("intent.w")?, Some(params.var("intent.b")?))?,
        ),
        None => None,
    };
    let categorical = match &seq.categorical_indices {
        Some(indices) => Some(
            indices
                .iter()
                .map(|(k, pos)| {
                    Ok(CategoricalHeadOutput {
                        key: k.clone(),
                        logits: o.row(*pos)?.linear(
                            params.var(&format!("cat.{k}.w"))?,
                            Some(params.var(&format!("cat.{k}.b"))?),
                        )?,
                    })
                })
                .collect::<Result<Vec<_>>>()?,
        ),
        None => None,
    };
    Ok(HeadOutputs {
        slots,
        intent,
        categorical,
    })
}

fn check_sequence(variant: Variant, seq: &InputSequence, schema: &Schema) -> Result<()> {
    let mismatch = |what: &str| {
        Err(Error::Configuration(format!(
            "{} sequence fed to {variant} heads: {what}",
            seq.variant
        )))
    };
    if seq.variant != variant {
        return mismatch("variant differs");
    }
    if seq.intent_index.is_some() != variant.conditions_on_intent() {
        return mismatch("intent token");
    }
    match &seq.categorical_indices {
        Some(idx) => {
            if !variant.conditions_on_categorical()
                || !idx
                    .iter()
                    .map(|(k, _)| k)
                    .eq(schema.categorical_slots().map(|s| &s.key))
            {
                return mismatch("categorical tokens");
            }
        }
        None if variant.conditions_on_categorical() => return mismatch("categorical tokens"),
        None => {}
    }
    Ok(())
}

/// Best `(i, j)` maximizing `start[i] + end[j]` with `i <= j <= i +
/// max_span_len` and both positions inside the mask. Ties go to the
/// smallest `i`, then the smallest `j`.
pub fn decode_span<F: Real>(
    start: &[F],
    end: &[F],
    mask: &[bool],
    max_span_len: usize,
) -> Result<(usize, usize)> {
    if start.len() != mask.len() || end.len() != mask.len() {
        return Err(Error::Dimension(format!(
            "span logits {}/{} for a mask of {}",
            start.len(),
            end.len(),
            mask.len()
        )));
    }
    let mut best: Option<(F, usize, usize)> = None;
    for i in (0..mask.len()).filter(|&i| mask[i]) {
        for j in (i..mask.len().min(i + max_span_len + 1)).filter(|&j| mask[j]) {
            let s = start[i] + end[j];
            if best.is_none_or(|(b, _, _)| s > b) {
                best = Some((s, i, j));
            }
        }
    }
    best.map(|(_, i, j)| (i, j)).ok_or(Error::NoSpan)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LossWeights {
    /// Gate share of the slot loss.
    pub alpha: f64,
    /// Intent share of the intent-conditioned loss.
    pub beta_intent: f64,
    /// Categorical share of the categorical-conditioned loss; the schema's
    /// categorical fraction when unset.
    pub beta_cat: Option<f64>,
    /// Weight of the intent-conditioned loss inside the joint loss.
    pub alpha_joint: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        LossWeights {
            alpha: 0.5,
            beta_intent: 0.3,
            beta_cat: None,
            alpha_joint: 0.5,
        }
    }
}

impl LossWeights {
    pub fn validate(&self) -> Result<()> {
        let all = [
            Some(self.alpha),
            Some(self.beta_intent),
            self.beta_cat,
            Some(self.alpha_joint),
        ];
        if all.into_iter().flatten().all(|w| (0.0..=1.0).contains(&w)) {
            Ok(())
        } else {
            Err(Error::Configuration(
                "loss weights must lie in [0, 1]".into(),
            ))
        }
    }

    pub fn resolved_beta_cat(&self, schema: &Schema) -> Result<f64> {
        match self.beta_cat {
            Some(b) => Ok(b),
            None => fixed_beta_cat(schema),
        }
    }
}

/// `#categorical / #total` slots.
pub fn fixed_beta_cat(schema: &Schema) -> Result<f64> {
    if schema.slots.is_empty() {
        return Err(Error::Schema("schema has no slots".into()));
    }
    Ok(schema.num_categorical() as f64 / schema.slots.len() as f64)
}

/// Gold annotation of one slot for the gate/span loss.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SlotGold {
    pub gate: usize,
    /// Token positions of the gold span, when the value is extractable.
    pub span: Option<(usize, usize)>,
}

/// Probabilities from the gate and span heads for one (example, slot).
#[derive(Debug, Clone, PartialEq)]
pub struct SlotHeadProbs {
    pub gate: Vec<f64>,
    pub start: Vec<f64>,
    pub end: Vec<f64>,
    pub gold: SlotGold,
}

/// Mean gate, start and end cross-entropies. Span terms average only over
/// entries with a gold span and are 0 when there are none.
pub fn slot_loss_components(entries: &[SlotHeadProbs]) -> Result<(f64, f64, f64)> {
    if entries.is_empty() {
        return Ok((0.0, 0.0, 0.0));
    }
    let mut gate = 0.0;
    let (mut start, mut end, mut spans) = (0.0, 0.0, 0usize);
    for e in entries {
        gate += cross_entropy(&e.gate, e.gold.gate)?;
        if let Some((s, t)) = e.gold.span {
            start += cross_entropy(&e.start, s)?;
            end += cross_entropy(&e.end, t)?;
            spans += 1;
        }
    }
    let mean = |x: f64| if spans == 0 { 0.0 } else { x / spans as f64 };
    Ok((gate / entries.len() as f64, mean(start), mean(end)))
}

/// `alpha * gate + (1 - alpha) / 2 * (start + end)`.
pub fn combine_slot_loss(gate: f64, start: f64, end: f64, alpha: f64) -> f64 {
    alpha * gate + (1.0 - alpha) / 2.0 * (start + end)
}

pub fn loss_slot(entries: &[SlotHeadProbs], alpha: f64) -> Result<f64> {
    let (g, s, e) = slot_loss_components(entries)?;
    Ok(combine_slot_loss(g, s, e, alpha))
}

/// Mean component losses of a batch.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct ComponentLosses {
    pub gate: f64,
    pub start: f64,
    pub end: f64,
    pub intent: Option<f64>,
    pub cat: Option<f64>,
}

impl ComponentLosses {
    pub fn slot(&self, alpha: f64) -> f64 {
        combine_slot_loss(self.gate, self.start, self.end, alpha)
    }
}

/// Total loss of a variant, composed exactly as the nested convex
/// combinations are written: the joint loss mixes the full intent- and
/// categorical-conditioned losses, so the slot loss appears in both.
pub fn loss_variant(
    variant: Variant,
    c: &ComponentLosses,
    w: &LossWeights,
    beta_cat: f64,
) -> Result<f64> {
    let missing =
        |what: &str| Error::Configuration(format!("{variant} loss needs the {what} loss"));
    let slot = c.slot(w.alpha);
    let with_intent = || -> Result<f64> {
        let li = c.intent.ok_or_else(|| missing("intent"))?;
        Ok(w.beta_intent * li + (1.0 - w.beta_intent) * slot)
    };
    let with_cat = || -> Result<f64> {
        let lc = c.cat.ok_or_else(|| missing("categorical"))?;
        Ok(beta_cat * lc + (1.0 - beta_cat) * slot)
    };
    Ok(match variant {
        Variant::Baseline => slot,
        Variant::BdstI => with_intent()?,
        Variant::BdstC => with_cat()?,
        Variant::BdstJ => w.alpha_joint * with_intent()? + (1.0 - w.alpha_joint) * with_cat()?,
    })
}

/// The variant loss is linear in its components; these are the
/// coefficients, used to build the loss on the autodiff tape.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossCoefficients {
    pub gate: f64,
    pub start: f64,
    pub end: f64,
    pub intent: f64,
    pub cat: f64,
}

impl LossCoefficients {
    pub fn new(variant: Variant, w: &LossWeights, beta_cat: f64) -> Self {
        // weight carried by the slot loss, and by the two conditioning losses
        let (slot, intent, cat) = match variant {
            Variant::Baseline => (1.0, 0.0, 0.0),
            Variant::BdstI => (1.0 - w.beta_intent, w.beta_intent, 0.0),
            Variant::BdstC => (1.0 - beta_cat, 0.0, beta_cat),
            Variant::BdstJ => (
                w.alpha_joint * (1.0 - w.beta_intent) + (1.0 - w.alpha_joint) * (1.0 - beta_cat),
                w.alpha_joint * w.beta_intent,
                (1.0 - w.alpha_joint) * beta_cat,
            ),
        };
        LossCoefficients {
            gate: slot * w.alpha,
            start: slot * (1.0 - w.alpha) / 2.0,
            end: slot * (1.0 - w.alpha) / 2.0,
            intent,
            cat,
        }
    }

    pub fn apply(&self, c: &ComponentLosses) -> f64 {
        self.gate * c.gate
            + self.start * c.start
            + self.end * c.end
            + self.intent * c.intent.unwrap_or(0.0)
            + self.cat * c.cat.unwrap_or(0.0)
    }
}
