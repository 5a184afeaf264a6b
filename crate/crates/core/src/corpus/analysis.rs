use serde::{Deserialize, Serialize};

use crate::corpus::{Dialogue, Schema, SlotKind};
use crate::error::{Error, Result};

/// Cramér's V of a contingency table (rows = intents, columns = slot keys).
///
/// All-zero rows and columns are dropped before computing Pearson's χ².
pub fn cramers_v(counts: &[Vec<f64>]) -> Result<f64> {
    if counts.len() < 2 || counts.iter().any(|r| r.len() != counts[0].len()) || counts[0].len() < 2
    {
        return Err(Error::Dimension(
            "contingency table must be rectangular with at least 2 rows and 2 columns".into(),
        ));
    }
    if counts
        .iter()
        .flatten()
        .any(|&c| !(c >= 0.0) || !c.is_finite())
    {
        return Err(Error::Numeric(
            "contingency counts must be finite and non-negative".into(),
        ));
    }
    let cols = counts[0].len();
    let row_sums: Vec<f64> = counts.iter().map(|r| r.iter().sum()).collect();
    let col_sums: Vec<f64> = (0..cols)
        .map(|j| counts.iter().map(|r| r[j]).sum())
        .collect();
    let keep_rows: Vec<usize> = (0..counts.len()).filter(|&i| row_sums[i] > 0.0).collect();
    let keep_cols: Vec<usize> = (0..cols).filter(|&j| col_sums[j] > 0.0).collect();
    if keep_rows.len() < 2 || keep_cols.len() < 2 {
        return Err(Error::UndefinedValue(format!(
            "Cramér's V needs 2 non-empty rows and columns, have {} and {}",
            keep_rows.len(),
            keep_cols.len()
        )));
    }
    let total: f64 = row_sums.iter().sum();
    let mut chi2 = 0.0;
    for &i in &keep_rows {
        for &j in &keep_cols {
            let expected = row_sums[i] * col_sums[j] / total;
            let diff = counts[i][j] - expected;
            chi2 += diff * diff / expected;
        }
    }
    let k = keep_rows.len().min(keep_cols.len()) as f64 - 1.0;
    Ok((chi2 / (total * k)).sqrt().clamp(0.0, 1.0))
}

/// Intent-by-slot mention counts. A slot counts as mentioned in a user turn
/// when its gold gate is `dontcare` or `value`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ContingencyTable {
    pub intents: Vec<String>,
    pub slots: Vec<String>,
    pub counts: Vec<Vec<u64>>,
}

impl ContingencyTable {
    pub fn as_f64(&self) -> Vec<Vec<f64>> {
        self.counts
            .iter()
            .map(|r| r.iter().map(|&c| c as f64).collect())
            .collect()
    }

    pub fn cramers_v(&self) -> Result<f64> {
        cramers_v(&self.as_f64())
    }
}

pub fn contingency_table(schema: &Schema, dialogues: &[Dialogue]) -> ContingencyTable {
    let mut counts = vec![vec![0u64; schema.slots.len()]; schema.intents.len()];
    for turn in dialogues.iter().flat_map(|d| &d.turns) {
        let Some(i) = schema.intent_index(&turn.intent) else {
            continue;
        };
        for (j, slot) in schema.slots.iter().enumerate() {
            if turn.label(&slot.key).is_some() {
                counts[i][j] += 1;
            }
        }
    }
    ContingencyTable {
        intents: schema.intents.clone(),
        slots: schema.slots.iter().map(|s| s.key.clone()).collect(),
        counts,
    }
}

/// Output of `tcdst analyze`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnalysisReport {
    pub dialogues: usize,
    pub turns: usize,
    pub table: ContingencyTable,
    /// `None` when the table is degenerate.
    pub cramers_v: Option<f64>,
}

impl AnalysisReport {
    pub fn new(schema: &Schema, dialogues: &[Dialogue]) -> Self {
        let table = contingency_table(schema, dialogues);
        AnalysisReport {
            dialogues: dialogues.len(),
            turns: dialogues.iter().map(|d| d.turns.len()).sum(),
            cramers_v: table.cramers_v().ok(),
            table,
        }
    }
}

pub const DEFAULT_CATEGORICAL_THRESHOLD: usize = 12;

/// What is known about a slot's values when deciding its kind.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SlotMetadata {
    /// Number of distinct values, when the value set is closed.
    pub cardinality: Option<usize>,
    /// Whether the values form a small listable set (ranges, ratings,
    /// counts) rather than open-ended names.
    pub countable: bool,
}

/// Categorical iff the value set is finite and at most `threshold` large.
pub fn classify_slot_kind(meta: SlotMetadata, threshold: usize) -> SlotKind {
    match meta.cardinality {
        Some(n) if meta.countable && n <= threshold => SlotKind::Categorical,
        _ => SlotKind::Span,
    }
}
