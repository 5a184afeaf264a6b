use std::fmt::Write;

use tcdst_core::corpus::AnalysisReport;
use tcdst_core::model::TurnOutput;
use tcdst_core::tracker::DialogueState;

pub fn optional(v: Option<f64>) -> String {
    v.map_or_else(|| "null".to_string(), |v| format!("{v:.4}"))
}

fn max_prob(probs: &[f64]) -> f64 {
    probs.iter().copied().fold(0.0, f64::max)
}

pub fn analysis(report: &AnalysisReport) -> String {
    let t = &report.table;
    let mut out = String::new();
    writeln!(
        out,
        "dialogues {}  turns {}",
        report.dialogues, report.turns
    )
    .unwrap();
    let first = t
        .intents
        .iter()
        .map(String::len)
        .max()
        .unwrap_or(0)
        .max("intent".len());
    let widths: Vec<usize> = t.slots.iter().map(|s| s.len().max(6)).collect();
    write!(out, "{:first$}", "intent").unwrap();
    for (s, w) in t.slots.iter().zip(&widths) {
        write!(out, "  {s:>w$}").unwrap();
    }
    out.push('\n');
    for (intent, row) in t.intents.iter().zip(&t.counts) {
        write!(out, "{intent:first$}").unwrap();
        for (c, w) in row.iter().zip(&widths) {
            write!(out, "  {c:>w$}").unwrap();
        }
        out.push('\n');
    }
    writeln!(out, "cramers_v: {}", optional(report.cramers_v)).unwrap();
    out
}

pub fn state(state: &DialogueState) -> String {
    serde_json::to_string(state).expect("state serializes")
}

pub fn turn(output: &TurnOutput, current: &DialogueState) -> String {
    let mut out = String::new();
    if let Some(intent) = &output.intent {
        writeln!(
            out,
            "intent: {} ({:.2})",
            intent.label,
            max_prob(&intent.probs)
        )
        .unwrap();
    }
    for slot in &output.slots {
        write!(
            out,
            "  {}: {} ({:.2})",
            slot.key,
            slot.gate,
            max_prob(&slot.gate_probs)
        )
        .unwrap();
        if let Some(span) = &slot.span {
            write!(out, " \"{}\" [{}..{}]", span.text, span.start, span.end).unwrap();
        }
        out.push('\n');
    }
    for cat in &output.categorical {
        writeln!(
            out,
            "  {} = {} ({:.2})",
            cat.key,
            cat.value,
            max_prob(&cat.probs)
        )
        .unwrap();
    }
    writeln!(out, "state: {}", state(current)).unwrap();
    out
}
