use std::fmt::Write;

use super::{Bleu, CategoryMetrics, EvalReport, Ratio};

fn ratio(r: &Ratio) -> String {
    match r.value {
        Some(v) => format!("{v:.4}"),
        None => "n/a".into(),
    }
}

fn bleu(b: &Bleu) -> String {
    match b.score {
        Some(v) => format!("{v:.4}"),
        None => "n/a".into(),
    }
}

type Row = (&'static str, fn(&CategoryMetrics) -> String);

const ROWS: [Row; 11] = [
    ("Invoke Accuracy", |m| ratio(&m.invoke_acc)),
    ("Method Accuracy", |m| ratio(&m.method_acc)),
    ("Param Name Accuracy", |m| ratio(&m.param_name_acc)),
    ("Param Value Accuracy", |m| ratio(&m.param_value_acc)),
    ("Complete API Accuracy", |m| ratio(&m.complete_acc)),
    ("False Invoke Rate", |m| ratio(&m.false_invoke_rate)),
    ("BLEU-4 Overall", |m| bleu(&m.bleu4_overall)),
    ("BLEU-4 Inform", |m| bleu(&m.bleu4_inform)),
    ("BLEU-4 Request", |m| bleu(&m.bleu4_request)),
    ("External Semantic Score", |m| match m.external_semantic_score {
        Some(s) => format!("{:.4}", s.mean),
        None => "n/a".into(),
    }),
    ("API Turns Scored", |m| m.invoke_acc.denominator.to_string()),
];

/// Metrics as rows, `All / Seen / Mixed / Unseen` as columns, one section per model.
pub fn render_table(reports: &[EvalReport]) -> String {
    let mut out = String::new();
    for (i, report) in reports.iter().enumerate() {
        if i > 0 {
            out.push('\n');
        }
        let _ = writeln!(out, "Model: {}", report.model_id);
        let _ = writeln!(
            out,
            "  method match: {}; param accuracy: {:?}; complete needs exact param set: {}",
            report.flags.method_comparison,
            report.flags.param_accuracy_mode,
            report.flags.complete_requires_exact_param_set
        );
        let width = ROWS.iter().map(|(name, _)| name.len()).max().unwrap_or(0);
        let _ = write!(out, "{:<width$}", "Metric");
        for c in &report.categories {
            let _ = write!(out, " {:>8}", c.category.label());
        }
        out.push('\n');
        let _ = writeln!(out, "{}", "-".repeat(width + 9 * report.categories.len()));
        for (name, cell) in ROWS {
            let _ = write!(out, "{name:<width$}");
            for c in &report.categories {
                let _ = write!(out, " {:>8}", cell(c));
            }
            out.push('\n');
        }
        if !report.missing_predictions.is_empty() {
            let _ = writeln!(
                out,
                "  {} gold turns had no prediction",
                report.missing_predictions.len()
            );
        }
    }
    out
}
