//! Instruction prompts and `(prompt, target)` training pairs.
//!
//! A template is plain text with three placeholders, each appearing exactly once:
//! `{domains}`, `{schemas}` and `{dialog_history}`. Rendering is a single pass, so
//! placeholder-like text inside utterances is never expanded.
//!
//! Schemas render as
//!
//! ```text
//! Domain: Restaurants
//!   Intent: ReserveRestaurant
//!     required slots: party size, reservation time
//!     optional slots: none
//! ```
//!
//! and the history as `User:` / `System:` lines, oldest first. A turn's search
//! results precede its user line as `Search Results: ...`; the section always ends
//! with the current `User:` line.

use std::io::{BufRead, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::apicall::serialize_apicall;
use crate::dialog::{history_window, Dialog, OutputKind, TurnOutput};
use crate::error::{Error, Result};
use crate::schema::{DomainSchema, SchemaCatalog};

pub const DEFAULT_K: usize = 5;

pub const DEFAULT_TEMPLATE: &str = include_str!("../data/templates/default.txt");

const PLACEHOLDERS: [&str; 3] = ["{domains}", "{schemas}", "{dialog_history}"];

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PromptTemplate {
    text: String,
    version: String,
}

impl PromptTemplate {
    pub fn new(text: impl Into<String>, version: impl Into<String>) -> Result<Self> {
        let text = text.into();
        for p in PLACEHOLDERS {
            let n = text.matches(p).count();
            if n != 1 {
                return Err(Error::invalid(
                    "template",
                    format!("placeholder {p} appears {n} times, expected once"),
                ));
            }
        }
        Ok(PromptTemplate {
            text,
            version: version.into(),
        })
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let version = path
            .file_stem()
            .map(|s| s.to_string_lossy().into_owned())
            .unwrap_or_default();
        Self::new(text, version)
    }

    pub fn text(&self) -> &str {
        &self.text
    }

    pub fn version(&self) -> &str {
        &self.version
    }

    fn fill(&self, domains: &str, schemas: &str, history: &str) -> String {
        let mut out = String::with_capacity(self.text.len() + schemas.len() + history.len());
        let mut rest = self.text.as_str();
        loop {
            let next = PLACEHOLDERS
                .iter()
                .filter_map(|p| rest.find(p).map(|at| (at, *p)))
                .min_by_key(|(at, _)| *at);
            let Some((at, p)) = next else {
                out.push_str(rest);
                return out;
            };
            out.push_str(&rest[..at]);
            out.push_str(match p {
                "{domains}" => domains,
                "{schemas}" => schemas,
                _ => history,
            });
            rest = &rest[at + p.len()..];
        }
    }
}

impl Default for PromptTemplate {
    fn default() -> Self {
        PromptTemplate::new(DEFAULT_TEMPLATE, "default-v1").expect("bundled template is valid")
    }
}

pub fn render_schema(schema: &DomainSchema) -> String {
    let mut out = format!("Domain: {}\n", schema.domain_id);
    for intent in &schema.intents {
        out.push_str(&format!("  Intent: {}\n", intent.name));
        for (label, names) in [
            ("required slots", intent.required_slots().map(|s| s.name.as_str()).collect::<Vec<_>>()),
            ("optional slots", intent.optional_slots().map(|s| s.name.as_str()).collect()),
        ] {
            let list = if names.is_empty() {
                "none".to_string()
            } else {
                names.join(", ")
            };
            out.push_str(&format!("    {label}: {list}\n"));
        }
    }
    out
}

fn render_output(output: &TurnOutput) -> String {
    match output {
        TurnOutput::Text { text } => text.clone(),
        TurnOutput::ApiCall { call } => serialize_apicall(call),
    }
}

/// Renders the prompt for predicting the system output of turn `t`.
pub fn render_prompt(
    template: &PromptTemplate,
    catalog: &SchemaCatalog,
    dialog: &Dialog,
    t: usize,
    k: usize,
) -> Result<String> {
    let schemas = dialog
        .domains
        .iter()
        .map(|d| {
            catalog
                .get(d)
                .map(render_schema)
                .ok_or_else(|| Error::UnknownDomain(d.clone()))
        })
        .collect::<Result<Vec<_>>>()?;

    let mut history = Vec::new();
    for exchange in history_window(dialog, t, k)? {
        if let Some(results) = exchange.search_results {
            history.push(format!("Search Results: {results}"));
        }
        history.push(format!("User: {}", exchange.user));
        if let Some(system) = exchange.system {
            history.push(format!("System: {}", render_output(system)));
        }
    }

    Ok(template.fill(
        &dialog.domains.join(", "),
        schemas.join("").trim_end(),
        &history.join("\n"),
    ))
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TrainingPair {
    pub dialog_id: String,
    pub turn_index: usize,
    pub prompt: String,
    pub target: String,
    pub is_api_call: bool,
}

#[derive(Debug, Default)]
pub struct EmittedPairs {
    pub pairs: Vec<TrainingPair>,
    /// Dialogs that produced no pairs, with the reason.
    pub failures: Vec<(String, Error)>,
}

/// One pair per turn, in corpus then turn order. A dialog that cannot be rendered
/// is reported and skipped as a whole.
pub fn emit_training_pairs(
    corpus: &[Dialog],
    catalog: &SchemaCatalog,
    template: &PromptTemplate,
    k: usize,
) -> EmittedPairs {
    let mut out = EmittedPairs::default();
    for dialog in corpus {
        let rendered: Result<Vec<TrainingPair>> = dialog
            .turns
            .iter()
            .map(|turn| {
                Ok(TrainingPair {
                    dialog_id: dialog.dialog_id.clone(),
                    turn_index: turn.index,
                    prompt: render_prompt(template, catalog, dialog, turn.index, k)?,
                    target: render_output(&turn.output),
                    is_api_call: turn.output.kind() == OutputKind::ApiCall,
                })
            })
            .collect();
        match rendered {
            Ok(pairs) => out.pairs.extend(pairs),
            Err(e) => out.failures.push((dialog.dialog_id.clone(), e)),
        }
    }
    out
}

pub fn write_pairs_jsonl(pairs: &[TrainingPair], mut w: impl Write) -> std::io::Result<()> {
    for pair in pairs {
        serde_json::to_writer(&mut w, pair)?;
        w.write_all(b"\n")?;
    }
    Ok(())
}

pub fn read_pairs_jsonl(r: impl BufRead) -> Result<Vec<TrainingPair>> {
    let mut pairs = Vec::new();
    for (n, line) in r.lines().enumerate() {
        let line = line.map_err(|e| Error::io("<pairs>", e))?;
        if line.trim().is_empty() {
            continue;
        }
        pairs.push(
            serde_json::from_str(&line)
                .map_err(|e| Error::malformed("<pairs>", format!("line {}: {e}", n + 1)))?,
        );
    }
    Ok(pairs)
}
