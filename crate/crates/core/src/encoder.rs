//! Pre-norm Transformer encoder with learned token, position and segment
//! embeddings.
//!
//! Parameter names:
//!
//! ```text
//! embed.token  embed.position  embed.segment
//! layer.<i>.ln1.{gain,bias}  layer.<i>.attn.{q,k,v,o}.{w,b}
//! layer.<i>.ln2.{gain,bias}  layer.<i>.ffn.{in,out}.{w,b}
//! final_ln.{gain,bias}
//! ```

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numeric::{BoundParams, ParamStore, Real, Tensor, Var};
use crate::tokenizer::{InputSequence, Variant, Vocabulary, CLS_ID, INTENT_ID};

pub const INIT_STD: f64 = 0.02;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EncoderConfig {
    pub num_layers: usize,
    pub hidden_size: usize,
    pub num_heads: usize,
    pub ffn_size: usize,
    pub max_len: usize,
    pub vocab_size: usize,
    pub dropout_rate: f64,
    pub layer_norm_eps: f64,
    pub seed: u64,
}

impl Default for EncoderConfig {
    fn default() -> Self {
        EncoderConfig {
            num_layers: 2,
            hidden_size: 64,
            num_heads: 4,
            ffn_size: 256,
            max_len: 128,
            vocab_size: 0,
            dropout_rate: 0.1,
            layer_norm_eps: 1e-6,
            seed: 0,
        }
    }
}

impl EncoderConfig {
    pub fn validate(&self) -> Result<()> {
        let fail = |m: String| Err(Error::Configuration(m));
        if self.num_layers == 0 || self.hidden_size == 0 || self.ffn_size == 0 {
            return fail("encoder sizes must be positive".into());
        }
        if self.num_heads == 0 || !self.hidden_size.is_multiple_of(self.num_heads) {
            return fail(format!(
                "{} heads do not divide hidden size {}",
                self.num_heads, self.hidden_size
            ));
        }
        if self.max_len < 8 {
            return fail(format!("max_len {} is below 8", self.max_len));
        }
        if self.vocab_size == 0 {
            return fail("vocab_size is 0".into());
        }
        if !(0.0..1.0).contains(&self.dropout_rate) {
            return fail(format!("dropout rate {} outside [0, 1)", self.dropout_rate));
        }
        if !(self.layer_norm_eps >= 0.0) {
            return fail("negative layer norm eps".into());
        }
        Ok(())
    }
}

/// Dropout is active only in `Train`.
pub enum Mode<'r> {
    Train(&'r mut ChaCha8Rng),
    Eval,
    GradCheck,
}

pub(crate) fn normal_tensor<F: Real>(
    shape: Vec<usize>,
    std: f64,
    rng: &mut ChaCha8Rng,
) -> Tensor<F> {
    let dist = Normal::new(0.0, std).expect("positive std");
    let n = shape.iter().product();
    let values = (0..n)
        .map(|_| F::from_f64_lossy(dist.sample(rng)))
        .collect();
    Tensor::new(shape, values).expect("shape matches")
}

/// Adds freshly initialized encoder parameters: normal(0, 0.02) weights and
/// embeddings, zero biases, unit layer-norm gains.
pub fn init_encoder_params<F: Real>(
    config: &EncoderConfig,
    params: &mut ParamStore<F>,
) -> Result<()> {
    config.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let h = config.hidden_size;
    let f = config.ffn_size;
    params.insert(
        "embed.token",
        normal_tensor(vec![config.vocab_size, h], INIT_STD, &mut rng),
    )?;
    params.insert(
        "embed.position",
        normal_tensor(vec![config.max_len, h], INIT_STD, &mut rng),
    )?;
    params.insert(
        "embed.segment",
        normal_tensor(vec![2, h], INIT_STD, &mut rng),
    )?;
    for i in 0..config.num_layers {
        let p = format!("layer.{i}");
        params.insert(format!("{p}.ln1.gain"), Tensor::filled(vec![h], F::one()))?;
        params.insert(format!("{p}.ln1.bias"), Tensor::zeros(vec![h]))?;
        for m in ["q", "k", "v", "o"] {
            params.insert(
                format!("{p}.attn.{m}.w"),
                normal_tensor(vec![h, h], INIT_STD, &mut rng),
            )?;
            params.insert(format!("{p}.attn.{m}.b"), Tensor::zeros(vec![h]))?;
        }
        params.insert(format!("{p}.ln2.gain"), Tensor::filled(vec![h], F::one()))?;
        params.insert(format!("{p}.ln2.bias"), Tensor::zeros(vec![h]))?;
        params.insert(
            format!("{p}.ffn.in.w"),
            normal_tensor(vec![h, f], INIT_STD, &mut rng),
        )?;
        params.insert(format!("{p}.ffn.in.b"), Tensor::zeros(vec![f]))?;
        params.insert(
            format!("{p}.ffn.out.w"),
            normal_tensor(vec![f, h], INIT_STD, &mut rng),
        )?;
        params.insert(format!("{p}.ffn.out.b"), Tensor::zeros(vec![h]))?;
    }
    params.insert("final_ln.gain", Tensor::filled(vec![h], F::one()))?;
    params.insert("final_ln.bias", Tensor::zeros(vec![h]))?;
    Ok(())
}

/// Sets up the conditioning-token embedding rows: `[INTENT]` becomes an
/// exact copy of `[CLS]`, and each `[SLOT-k]` row is redrawn from
/// normal(0, 0.02) with a generator seeded by `seed`.
pub fn init_conditioning_embeddings<F: Real>(
    params: &mut ParamStore<F>,
    vocab: &Vocabulary,
    variant: Variant,
    seed: u64,
) -> Result<()> {
    let table = params
        .get_mut("embed.token")
        .map_err(|_| Error::State("token embeddings must be initialized first".into()))?;
    if table.rows() != vocab.len() {
        return Err(Error::State(format!(
            "embedding table has {} rows for a vocabulary of {}",
            table.rows(),
            vocab.len()
        )));
    }
    if variant.conditions_on_intent() {
        let cls = table.row(CLS_ID as usize).to_vec();
        table.row_mut(INTENT_ID as usize).copy_from_slice(&cls);
    }
    if variant.conditions_on_categorical() {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(1);
        let dist = Normal::new(0.0, INIT_STD).expect("positive std");
        for key in vocab.slot_keys() {
            let id = vocab.slot_token_id(key).expect("slot key has a token") as usize;
            for x in table.row_mut(id) {
                *x = F::from_f64_lossy(dist.sample(&mut rng));
            }
        }
    }
    Ok(())
}

pub struct EncoderOutput<'g, F: Real> {
    /// `[n, h]` contextualized embeddings.
    pub hidden: Var<'g, F>,
    /// One attention node per layer; see [`EncoderOutput::attention_maps`].
    pub attention: Vec<Var<'g, F>>,
}

impl<F: Real> EncoderOutput<'_, F> {
    /// Per-layer attention probabilities, `(heads, [heads, n, n])`.
    pub fn attention_maps(&self) -> Vec<(usize, Vec<F>)> {
        self.attention
            .iter()
            .filter_map(|a| a.graph().attention_probs(*a))
            .collect()
    }
}

fn dropout<'g, F: Real>(x: Var<'g, F>, rate: f64, mode: &mut Mode<'_>) -> Result<Var<'g, F>> {
    let Mode::Train(rng) = mode else { return Ok(x) };
    if rate == 0.0 {
        return Ok(x);
    }
    let keep = F::from_f64_lossy(1.0 / (1.0 - rate));
    let n = x.shape().iter().product();
    let mask = (0..n)
        .map(|_| {
            if rng.random::<f64>() < rate {
                F::zero()
            } else {
                keep
            }
        })
        .collect();
    x.dropout(mask)
}

pub fn encoder_forward<'g, F: Real>(
    config: &EncoderConfig,
    params: &BoundParams<'g, '_, F>,
    seq: &InputSequence,
    mut mode: Mode<'_>,
) -> Result<EncoderOutput<'g, F>> {
    let n = seq.len();
    if n == 0 || n > config.max_len {
        return Err(Error::Capacity(format!(
            "sequence of length {n} for max_len {}",
            config.max_len
        )));
    }
    if let Some(&bad) = seq
        .token_ids
        .iter()
        .find(|&&id| id as usize >= config.vocab_size)
    {
        return Err(Error::Vocab(format!(
            "token id {bad} outside a vocabulary of {}",
            config.vocab_size
        )));
    }
    let ids: Vec<usize> = seq.token_ids.iter().map(|&i| i as usize).collect();
    let segments: Vec<usize> = seq
        .segment_ids
        .iter()
        .map(|&s| usize::from(s.min(1)))
        .collect();
    let positions: Vec<usize> = (0..n).collect();
    let eps = F::from_f64_lossy(config.layer_norm_eps);
    let key_mask = seq.attention_mask();

    let mut x = params
        .var("embed.token")?
        .gather(&ids)?
        .add(params.var("embed.position")?.gather(&positions)?)?
        .add(params.var("embed.segment")?.gather(&segments)?)?;
    x = dropout(x, config.dropout_rate, &mut mode)?;

    let mut attention = Vec::with_capacity(config.num_layers);
    for i in 0..config.num_layers {
        let p = |s: &str| params.var(&format!("layer.{i}.{s}"));
        let a = x.layer_norm(p("ln1.gain")?, p("ln1.bias")?, eps)?;
        let q = a.linear(p("attn.q.w")?, Some(p("attn.q.b")?))?;
        let k = a.linear(p("attn.k.w")?, Some(p("attn.k.b")?))?;
        let v = a.linear(p("attn.v.w")?, Some(p("attn.v.b")?))?;
        let att = q.attention(k, v, config.num_heads, &key_mask)?;
        attention.push(att);
        let o = att.linear(p("attn.o.w")?, Some(p("attn.o.b")?))?;
        x = x.add(dropout(o, config.dropout_rate, &mut mode)?)?;

        let b = x.layer_norm(p("ln2.gain")?, p("ln2.bias")?, eps)?;
        let hdn = b.linear(p("ffn.in.w")?, Some(p("ffn.in.b")?))?.gelu();
        let out = hdn.linear(p("ffn.out.w")?, Some(p("ffn.out.b")?))?;
        x = x.add(dropout(out, config.dropout_rate, &mut mode)?)?;
    }
    let hidden = x.layer_norm(
        params.var("final_ln.gain")?,
        params.var("final_ln.bias")?,
        eps,
    )?;
    Ok(EncoderOutput { hidden, attention })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::{generate_synthetic, Schema};
    use crate::numeric::Graph;
    use crate::tokenizer::{build_input_sequence, build_vocab, ModelVariant};

    fn setup(variant: Variant) -> (EncoderConfig, Vocabulary, InputSequence) {
        let schema = Schema::toy();
        let dialogues = generate_synthetic(&schema, 5, 1.0, 1).unwrap();
        let vocab = build_vocab(&dialogues, &schema, 1).unwrap();
        let turn = &dialogues[0].turns[0];
        let seq = build_input_sequence(
            &vocab,
            ModelVariant::new(variant),
            &schema,
            &[],
            &turn.user,
            32,
        )
        .unwrap();
        let config = EncoderConfig {
            hidden_size: 16,
            num_heads: 2,
            ffn_size: 32,
            max_len: 32,
            vocab_size: vocab.len(),
            ..Default::default()
        };
        (config, vocab, seq)
    }

    #[test]
    fn output_shape_and_determinism() {
        let (config, _, seq) = setup(Variant::BdstJ);
        let mut params = ParamStore::<f64>::new();
        init_encoder_params(&config, &mut params).unwrap();
        let g = Graph::new();
        let bound = params.bind_frozen(&g);
        let a = encoder_forward(&config, &bound, &seq, Mode::Eval).unwrap();
        assert_eq!(a.hidden.shape(), vec![seq.len(), 16]);
        assert!(a.hidden.value().all_finite());
        let b = encoder_forward(&config, &bound, &seq, Mode::Eval).unwrap();
        assert_eq!(a.hidden.to_vec(), b.hidden.to_vec());
        for (heads, probs) in a.attention_maps() {
            let n = seq.len();
            for r in 0..heads * n {
                let s: f64 = probs[r * n..(r + 1) * n].iter().sum();
                assert!((s - 1.0).abs() < 1e-6);
            }
        }
    }

    #[test]
    fn pad_tail_does_not_change_shared_rows() {
        let (config, _, seq) = setup(Variant::Baseline);
        let mut padded = seq.clone();
        padded.pad_to(seq.len() + 5);
        let mut params = ParamStore::<f64>::new();
        init_encoder_params(&config, &mut params).unwrap();
        let g = Graph::new();
        let bound = params.bind_frozen(&g);
        let a = encoder_forward(&config, &bound, &seq, Mode::Eval)
            .unwrap()
            .hidden
            .to_vec();
        let out = encoder_forward(&config, &bound, &padded, Mode::Eval).unwrap();
        let b = out.hidden.to_vec();
        for (x, y) in a.iter().zip(&b[..a.len()]) {
            assert!((x - y).abs() < 1e-12);
        }
        let n = padded.len();
        for (heads, probs) in out.attention_maps() {
            for r in 0..heads * n {
                assert!(probs[r * n + seq.len()..(r + 1) * n]
                    .iter()
                    .all(|&p| p == 0.0));
            }
        }
    }

    #[test]
    fn rejects_bad_inputs() {
        let (config, _, seq) = setup(Variant::Baseline);
        let mut params = ParamStore::<f64>::new();
        init_encoder_params(&config, &mut params).unwrap();
        let g = Graph::new();
        let bound = params.bind_frozen(&g);
        let mut bad = seq.clone();
        bad.token_ids[1] = config.vocab_size as u32;
        assert!(matches!(
            encoder_forward(&config, &bound, &bad, Mode::Eval),
            Err(Error::Vocab(_))
        ));
        let mut long = seq;
        long.pad_to(40);
        assert!(matches!(
            encoder_forward(&config, &bound, &long, Mode::Eval),
            Err(Error::Capacity(_))
        ));
        let bad_heads = EncoderConfig {
            num_heads: 3,
            ..config
        };
        assert!(bad_heads.validate().is_err());
    }

    #[test]
    fn conditioning_rows() {
        let (config, vocab, _) = setup(Variant::BdstJ);
        let mut params = ParamStore::<f32>::new();
        assert!(matches!(
            init_conditioning_embeddings(&mut params, &vocab, Variant::BdstJ, 3),
            Err(Error::State(_))
        ));
        init_encoder_params(&config, &mut params).unwrap();
        let mut again = params.clone();
        init_conditioning_embeddings(&mut params, &vocab, Variant::BdstJ, 3).unwrap();
        init_conditioning_embeddings(&mut again, &vocab, Variant::BdstJ, 3).unwrap();
        let table = params.get("embed.token").unwrap();
        assert_eq!(table.row(INTENT_ID as usize), table.row(CLS_ID as usize));
        let a = vocab.slot_token_id("hotel-price").unwrap() as usize;
        let b = vocab.slot_token_id("restaurant-price").unwrap() as usize;
        assert_ne!(table.row(a), table.row(b));
        assert_eq!(table.values(), again.get("embed.token").unwrap().values());
    }

    #[test]
    fn train_mode_dropout_is_seeded() {
        let (config, _, seq) = setup(Variant::Baseline);
        let mut params = ParamStore::<f64>::new();
        init_encoder_params(&config, &mut params).unwrap();
        let g = Graph::new();
        let bound = params.bind(&g);
        let mut r1 = ChaCha8Rng::seed_from_u64(9);
        let mut r2 = ChaCha8Rng::seed_from_u64(9);
        let a = encoder_forward(&config, &bound, &seq, Mode::Train(&mut r1)).unwrap();
        let b = encoder_forward(&config, &bound, &seq, Mode::Train(&mut r2)).unwrap();
        let e = encoder_forward(&config, &bound, &seq, Mode::Eval).unwrap();
        assert_eq!(a.hidden.to_vec(), b.hidden.to_vec());
        assert_ne!(a.hidden.to_vec(), e.hidden.to_vec());
    }
}
