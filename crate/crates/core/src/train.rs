//! Training runs, checkpoint evaluation and the model-level gradient check.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::corpus::{generate_synthetic, load_corpus, CorpusFile, Schema};
use crate::encoder::EncoderConfig;
use crate::error::{Error, Result};
use crate::heads::{LossCoefficients, LossWeights, DEFAULT_MAX_SPAN_LEN};
use crate::model::{AnyModel, Model, ModelConfig, ModelSpec, TurnExample};
use crate::numeric::{
    adam_step, grad_check, AdamState, Checkpoint, GradCheckOptions, GradCheckReport, Graph,
    Precision, Real, FINE_TUNE_LEARNING_RATE,
};
use crate::tokenizer::{build_vocab, ModelVariant, Variant};
use crate::tracker::{evaluate_predictions, EvalReport};

/// Learning rate for training from scratch.
pub const SCRATCH_LEARNING_RATE: f64 = 1e-4;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RunConfig {
    pub variant: Variant,
    pub history_window: usize,
    /// `vocab_size` and `seed` are filled in from the vocabulary and the
    /// run seed.
    pub encoder: EncoderConfig,
    pub loss_weights: LossWeights,
    pub batch_size: usize,
    pub epochs: usize,
    /// Defaults to 1e-4 from scratch and 2e-6 when resuming.
    pub learning_rate: Option<f64>,
    pub seed: u64,
    pub precision: Precision,
    pub min_frequency: usize,
    pub max_span_len: usize,
    pub train_corpus: PathBuf,
    /// Defaults to the training corpus.
    pub valid_corpus: Option<PathBuf>,
    pub checkpoint: PathBuf,
    /// JSON-lines epoch log; defaults to `<checkpoint>.log.jsonl`.
    pub log: Option<PathBuf>,
    pub resume: Option<PathBuf>,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            variant: Variant::BdstJ,
            history_window: 1,
            encoder: EncoderConfig::default(),
            loss_weights: LossWeights::default(),
            batch_size: 32,
            epochs: 100,
            learning_rate: None,
            seed: 0,
            precision: Precision::F32,
            min_frequency: 1,
            max_span_len: DEFAULT_MAX_SPAN_LEN,
            train_corpus: PathBuf::new(),
            valid_corpus: None,
            checkpoint: PathBuf::new(),
            log: None,
            resume: None,
        }
    }
}

impl RunConfig {
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        let config: RunConfig = serde_json::from_str(&text)?;
        Ok(config)
    }

    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 || self.epochs == 0 {
            return Err(Error::Configuration(
                "batch_size and epochs must be at least 1".into(),
            ));
        }
        if self.min_frequency == 0 || self.max_span_len == 0 {
            return Err(Error::Configuration(
                "min_frequency and max_span_len must be positive".into(),
            ));
        }
        if let Some(lr) = self.learning_rate {
            if !(lr > 0.0 && lr.is_finite()) {
                return Err(Error::Configuration(format!(
                    "learning rate {lr} is not positive"
                )));
            }
        }
        self.loss_weights.validate()
    }

    pub fn log_path(&self) -> PathBuf {
        self.log.clone().unwrap_or_else(|| {
            let mut p = self.checkpoint.clone().into_os_string();
            p.push(".log.jsonl");
            p.into()
        })
    }
}

/// One line of the epoch log.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochLog {
    pub epoch: usize,
    pub batches: usize,
    pub loss: f64,
    pub gate: f64,
    pub span_start: f64,
    pub span_end: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub intent: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub cat: Option<f64>,
    pub valid_joint_goal: Option<f64>,
    pub valid_slot_f1: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub valid_intent_accuracy: Option<f64>,
    /// Whether this epoch produced the saved checkpoint.
    pub best: bool,
}

pub struct TrainOutcome {
    pub variant: Variant,
    pub epochs: Vec<EpochLog>,
    pub best_epoch: usize,
    /// Checkpoint of the epoch with the highest validation joint goal.
    pub best: Checkpoint,
    pub best_report: EvalReport,
    pub warnings: Vec<String>,
}

/// Resolves the variant actually trained: joint conditioning on a schema
/// without categorical slots falls back to intent conditioning.
pub fn effective_variant(variant: Variant, schema: &Schema) -> (Variant, Option<String>) {
    if variant == Variant::BdstJ && schema.num_categorical() == 0 {
        let msg = "schema has no categorical slots; training bdst-j as bdst-i".to_string();
        (Variant::BdstI, Some(msg))
    } else {
        (variant, None)
    }
}

/// Trains on in-memory corpora. `on_epoch` sees every log line, and the
/// new best checkpoint whenever validation joint goal strictly improves
/// (the first epoch always counts as an improvement).
pub fn train_model<F: Real>(
    config: &RunConfig,
    train: &CorpusFile,
    valid: &CorpusFile,
    resume: Option<&Checkpoint>,
    mut on_epoch: impl FnMut(&EpochLog, Option<&Checkpoint>) -> Result<()>,
) -> Result<TrainOutcome> {
    config.validate()?;
    train.validate()?;
    valid.validate()?;
    if train.schema != valid.schema {
        return Err(Error::Configuration(
            "training and validation schemas differ".into(),
        ));
    }
    let schema = &train.schema;
    let mut warnings = Vec::new();
    let (variant, warning) = effective_variant(config.variant, schema);
    if let Some(w) = warning {
        tracing::warn!("{w}");
        warnings.push(w);
    }
    let beta_cat = config.loss_weights.resolved_beta_cat(schema)?;
    let coefficients = LossCoefficients::new(variant, &config.loss_weights, beta_cat);

    let (mut model, mut adam) = match resume {
        Some(ckpt) => {
            let model = Model::<F>::from_checkpoint(ckpt)?;
            if model.variant() != variant || model.spec.schema != *schema {
                return Err(Error::Configuration(
                    "resumed checkpoint does not match the run's variant or schema".into(),
                ));
            }
            let lr = config.learning_rate.unwrap_or(FINE_TUNE_LEARNING_RATE);
            let mut adam = ckpt.optimizer.clone().unwrap_or_else(|| AdamState::new(lr));
            adam.learning_rate = lr;
            (model, adam)
        }
        None => {
            let vocab = build_vocab(&train.dialogues, schema, config.min_frequency)?;
            let encoder = EncoderConfig {
                vocab_size: vocab.len(),
                seed: config.seed,
                ..config.encoder.clone()
            };
            let model_config = ModelConfig {
                variant: ModelVariant {
                    kind: variant,
                    history_window: config.history_window,
                },
                encoder,
                max_span_len: config.max_span_len,
            };
            let model = Model::<F>::new(ModelSpec::new(model_config, schema.clone(), vocab)?)?;
            let lr = config.learning_rate.unwrap_or(SCRATCH_LEARNING_RATE);
            (model, AdamState::new(lr))
        }
    };

    let examples: Vec<TurnExample> = model.spec.examples(&train.dialogues)?;
    if examples.is_empty() {
        return Err(Error::Corpus("training corpus has no turns".into()));
    }
    let mut shuffle_rng = ChaCha8Rng::seed_from_u64(config.seed);
    shuffle_rng.set_stream(3);
    let mut dropout_rng = ChaCha8Rng::seed_from_u64(config.seed);
    dropout_rng.set_stream(4);

    let mut order: Vec<usize> = (0..examples.len()).collect();
    let mut log = Vec::with_capacity(config.epochs);
    let mut best: Option<(usize, f64, Checkpoint, EvalReport)> = None;
    for epoch in 1..=config.epochs {
        order.shuffle(&mut shuffle_rng);
        let mut sums = [0.0f64; 6];
        let mut batches = 0;
        for chunk in order.chunks(config.batch_size) {
            let batch: Vec<&TurnExample> = chunk.iter().map(|&i| &examples[i]).collect();
            let grads = {
                let graph = Graph::new();
                let bound = model.params.bind(&graph);
                let loss = model.spec.batch_loss(
                    &graph,
                    &bound,
                    &batch,
                    &coefficients,
                    Some(&mut dropout_rng),
                )?;
                let c = loss.components;
                for (s, v) in sums.iter_mut().zip([
                    loss.total.item().to_f64_lossless(),
                    c.gate,
                    c.start,
                    c.end,
                    c.intent.unwrap_or(0.0),
                    c.cat.unwrap_or(0.0),
                ]) {
                    *s += v;
                }
                let mut grads = graph.backward(loss.total)?;
                bound
                    .vars()
                    .iter()
                    .map(|&v| grads.take(v))
                    .collect::<Vec<_>>()
            };
            adam_step(model.params.tensors_mut(), &grads, &mut adam)?;
            batches += 1;
        }
        let mean = |i: usize| sums[i] / batches as f64;
        let report = model.evaluate(&valid.dialogues)?;
        let score = report.joint_goal.unwrap_or(-1.0);
        let improved = best.as_ref().is_none_or(|b| score > b.1);
        let mut entry = EpochLog {
            epoch,
            batches,
            loss: mean(0),
            gate: mean(1),
            span_start: mean(2),
            span_end: mean(3),
            intent: variant.conditions_on_intent().then(|| mean(4)),
            cat: variant.conditions_on_categorical().then(|| mean(5)),
            valid_joint_goal: report.joint_goal,
            valid_slot_f1: report.slot_f1,
            valid_intent_accuracy: report.intent_accuracy.flatten(),
            best: improved,
        };
        if improved {
            let extra = serde_json::json!({
                "epoch": epoch,
                "loss_weights": config.loss_weights,
                "valid": report,
            });
            let ckpt = model.to_checkpoint(Some(&adam), config.seed, extra)?;
            on_epoch(&entry, Some(&ckpt))?;
            best = Some((epoch, score, ckpt, report));
        } else {
            entry.best = false;
            on_epoch(&entry, None)?;
        }
        tracing::info!(epoch, loss = entry.loss, joint_goal = ?entry.valid_joint_goal, "epoch done");
        log.push(entry);
    }
    let (best_epoch, _, best, best_report) = best.expect("at least one epoch ran");
    Ok(TrainOutcome {
        variant,
        epochs: log,
        best_epoch,
        best,
        best_report,
        warnings,
    })
}

/// Summary of a file-based training run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainSummary {
    pub variant: Variant,
    pub checkpoint: PathBuf,
    pub log: PathBuf,
    pub epochs: usize,
    pub best_epoch: usize,
    pub best: EvalReport,
    pub warnings: Vec<String>,
}

/// Loads the corpora named in `config`, trains, and writes the best
/// checkpoint and the epoch log. Both corpora are validated before the
/// first optimizer step.
pub fn run_training(config: &RunConfig) -> Result<TrainSummary> {
    config.validate()?;
    if config.train_corpus.as_os_str().is_empty() || config.checkpoint.as_os_str().is_empty() {
        return Err(Error::Configuration(
            "train_corpus and checkpoint paths are required".into(),
        ));
    }
    let train = load_corpus(&config.train_corpus, None)?;
    let valid = match &config.valid_corpus {
        Some(p) => load_corpus(p, Some(&train.schema))?,
        None => train.clone(),
    };
    let resume = config.resume.as_ref().map(Checkpoint::load).transpose()?;
    let precision = resume.as_ref().map_or(config.precision, |c| c.precision);
    let log_path = config.log_path();
    let mut log = BufWriter::new(File::create(&log_path)?);
    let mut on_epoch = |entry: &EpochLog, ckpt: Option<&Checkpoint>| -> Result<()> {
        serde_json::to_writer(&mut log, entry)?;
        log.write_all(b"\n")?;
        log.flush()?;
        if let Some(c) = ckpt {
            c.save(&config.checkpoint)?;
        }
        Ok(())
    };
    let outcome = match precision {
        Precision::F32 => {
            train_model::<f32>(config, &train, &valid, resume.as_ref(), &mut on_epoch)?
        }
        Precision::F64 => {
            train_model::<f64>(config, &train, &valid, resume.as_ref(), &mut on_epoch)?
        }
    };
    Ok(TrainSummary {
        variant: outcome.variant,
        checkpoint: config.checkpoint.clone(),
        log: log_path,
        epochs: outcome.epochs.len(),
        best_epoch: outcome.best_epoch,
        best: outcome.best_report,
        warnings: outcome.warnings,
    })
}

/// Evaluation of a loaded model on a corpus. With `oracle` the gold
/// annotations stand in for the predictions.
pub fn evaluate_corpus(model: &AnyModel, corpus: &CorpusFile, oracle: bool) -> Result<EvalReport> {
    if *model.schema() != corpus.schema {
        return Err(Error::Configuration(
            "checkpoint schema differs from the corpus schema".into(),
        ));
    }
    let with_intent = model.variant().conditions_on_intent();
    if oracle {
        let pairs: Vec<_> = corpus
            .dialogues
            .iter()
            .map(|d| {
                let gold: Vec<_> = d.turns.iter().map(|t| t.gold_prediction()).collect();
                (gold.clone(), gold)
            })
            .collect();
        return evaluate_predictions(&pairs, &corpus.schema, with_intent);
    }
    model.evaluate(&corpus.dialogues)
}

pub fn evaluate_checkpoint(
    checkpoint: impl AsRef<Path>,
    corpus: impl AsRef<Path>,
    oracle: bool,
) -> Result<EvalReport> {
    let model = AnyModel::load(checkpoint)?;
    let corpus = load_corpus(corpus, None)?;
    evaluate_corpus(&model, &corpus, oracle)
}

/// Settings for a gradient check of the full model loss.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GradCheckConfig {
    pub variant: Variant,
    pub num_layers: usize,
    pub hidden_size: usize,
    pub num_heads: usize,
    pub ffn_size: usize,
    pub max_len: usize,
    /// Synthetic toy-schema dialogues whose turns form the batch.
    pub dialogues: usize,
    /// Use at most this many turns.
    pub max_turns: usize,
    pub seed: u64,
    pub loss_weights: LossWeights,
    pub rel_tolerance: f64,
    pub max_coords_per_param: Option<usize>,
}

impl Default for GradCheckConfig {
    fn default() -> Self {
        GradCheckConfig {
            variant: Variant::BdstJ,
            num_layers: 2,
            hidden_size: 32,
            num_heads: 4,
            ffn_size: 64,
            max_len: 24,
            dialogues: 1,
            max_turns: 2,
            seed: 0,
            loss_weights: LossWeights::default(),
            rel_tolerance: 1e-4,
            max_coords_per_param: Some(24),
        }
    }
}

/// Central-difference check of the variant loss in 64-bit with dropout off.
pub fn run_grad_check(config: &GradCheckConfig) -> Result<GradCheckReport> {
    config.loss_weights.validate()?;
    let schema = Schema::toy();
    let dialogues = generate_synthetic(&schema, config.dialogues.max(1), 1.0, config.seed)?;
    let vocab = build_vocab(&dialogues, &schema, 1)?;
    let model_config = ModelConfig {
        variant: ModelVariant::new(config.variant),
        encoder: EncoderConfig {
            num_layers: config.num_layers,
            hidden_size: config.hidden_size,
            num_heads: config.num_heads,
            ffn_size: config.ffn_size,
            max_len: config.max_len,
            vocab_size: vocab.len(),
            dropout_rate: 0.0,
            seed: config.seed,
            ..Default::default()
        },
        max_span_len: DEFAULT_MAX_SPAN_LEN,
    };
    let Model { spec, mut params } =
        Model::<f64>::new(ModelSpec::new(model_config, schema, vocab)?)?;
    let mut examples = spec.examples(&dialogues)?;
    examples.truncate(config.max_turns.max(1));
    let batch: Vec<&TurnExample> = examples.iter().collect();
    let beta_cat = config.loss_weights.resolved_beta_cat(&spec.schema)?;
    let coefficients = LossCoefficients::new(config.variant, &config.loss_weights, beta_cat);
    let options = GradCheckOptions {
        max_coords_per_param: config.max_coords_per_param,
        seed: config.seed,
        ..Default::default()
    };
    grad_check(
        |graph, bound| {
            Ok(spec
                .batch_loss(graph, bound, &batch, &coefficients, None)?
                .total)
        },
        &mut params,
        config.rel_tolerance,
        options,
    )
}
