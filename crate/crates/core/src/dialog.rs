//! Dialogs, turns, corpus ingestion and the k-turn history window.

use std::collections::HashSet;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::apicall::ApiCall;
use crate::error::{Error, Result};
use crate::schema::{SchemaCatalog, Warning};

/// What the system produced at a turn: a natural-language response or an API call.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "SCREAMING_SNAKE_CASE")]
pub enum TurnOutput {
    Text { text: String },
    ApiCall { call: ApiCall },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum OutputKind {
    Text,
    ApiCall,
}

impl TurnOutput {
    pub fn text(text: impl Into<String>) -> Self {
        TurnOutput::Text { text: text.into() }
    }

    pub fn call(call: ApiCall) -> Self {
        TurnOutput::ApiCall { call }
    }

    pub fn kind(&self) -> OutputKind {
        match self {
            TurnOutput::Text { .. } => OutputKind::Text,
            TurnOutput::ApiCall { .. } => OutputKind::ApiCall,
        }
    }

    pub fn as_call(&self) -> Option<&ApiCall> {
        match self {
            TurnOutput::ApiCall { call } => Some(call),
            TurnOutput::Text { .. } => None,
        }
    }

    pub fn as_text(&self) -> Option<&str> {
        match self {
            TurnOutput::Text { text } => Some(text),
            TurnOutput::ApiCall { .. } => None,
        }
    }

    /// Plain text, or the canonical serialization of the call.
    pub fn render(&self) -> String {
        match self {
            TurnOutput::Text { text } => text.clone(),
            TurnOutput::ApiCall { call } => crate::apicall::serialize_apicall(call),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Turn {
    /// 1-based position in the dialog.
    pub index: usize,
    #[serde(rename = "user")]
    pub user_utterance: String,
    pub output: TurnOutput,
    #[serde(default)]
    pub acts: Vec<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub search_results: Option<String>,
}

impl Turn {
    pub fn new(index: usize, user: impl Into<String>, output: TurnOutput) -> Self {
        Turn {
            index,
            user_utterance: user.into(),
            output,
            acts: Vec::new(),
            search_results: None,
        }
    }

    pub fn with_acts<S: Into<String>>(mut self, acts: impl IntoIterator<Item = S>) -> Self {
        self.acts = acts.into_iter().map(Into::into).collect();
        self
    }

    pub fn with_search_results(mut self, results: impl Into<String>) -> Self {
        self.search_results = Some(results.into());
        self
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Dialog {
    pub dialog_id: String,
    /// Domains in first-mention order, without repeats.
    pub domains: Vec<String>,
    pub turns: Vec<Turn>,
}

impl Dialog {
    pub fn validate(&self) -> Result<()> {
        if self.dialog_id.trim().is_empty() {
            return Err(Error::invalid("dialog", "empty dialog_id"));
        }
        if self.domains.is_empty() {
            return Err(Error::invalid(
                "dialog",
                format!("`{}` lists no domains", self.dialog_id),
            ));
        }
        let mut seen = HashSet::new();
        if let Some(d) = self.domains.iter().find(|d| !seen.insert(d.as_str())) {
            return Err(Error::invalid(
                "dialog",
                format!("`{}` repeats domain `{d}`", self.dialog_id),
            ));
        }
        for (pos, turn) in self.turns.iter().enumerate() {
            if turn.index != pos + 1 {
                return Err(Error::invalid(
                    "dialog",
                    format!(
                        "`{}` turn at position {} has index {}",
                        self.dialog_id,
                        pos + 1,
                        turn.index
                    ),
                ));
            }
        }
        Ok(())
    }

    pub fn turn(&self, index: usize) -> Option<&Turn> {
        index.checked_sub(1).and_then(|i| self.turns.get(i))
    }

    pub fn kind_sequence(&self) -> Vec<OutputKind> {
        self.turns.iter().map(|t| t.output.kind()).collect()
    }

    pub fn is_single_domain(&self) -> bool {
        self.domains.len() == 1
    }
}

/// One entry of a history window. The final entry carries no system output.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Exchange<'a> {
    pub index: usize,
    pub user: &'a str,
    pub system: Option<&'a TurnOutput>,
    pub search_results: Option<&'a str>,
}

/// The `min(k, t)` most recent exchanges ending at the user utterance of turn `t`.
pub fn history_window(dialog: &Dialog, t: usize, k: usize) -> Result<Vec<Exchange<'_>>> {
    if t == 0 || t > dialog.turns.len() {
        return Err(Error::OutOfRange {
            dialog_id: dialog.dialog_id.clone(),
            t,
            len: dialog.turns.len(),
        });
    }
    if k == 0 {
        return Err(Error::invalid("history window", "k must be at least 1"));
    }
    let first = t.saturating_sub(k);
    Ok(dialog.turns[first..t]
        .iter()
        .map(|turn| Exchange {
            index: turn.index,
            user: &turn.user_utterance,
            system: (turn.index != t).then_some(&turn.output),
            search_results: turn.search_results.as_deref(),
        })
        .collect())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DialogFormat {
    SgdJson,
    KetodJson,
    NativeJsonl,
}

#[derive(Debug, Clone, Default)]
pub struct DialogIngest {
    pub dialogs: Vec<Dialog>,
    pub warnings: Vec<Warning>,
}

/// Reads dialogs from a file or from every matching file of a directory
/// (sorted by name; `schema.json` is skipped).
pub fn ingest_dialogs(
    path: &Path,
    catalog: &SchemaCatalog,
    format: DialogFormat,
) -> Result<DialogIngest> {
    if catalog.is_empty() {
        return Err(Error::invalid("catalog", "schema catalog is empty"));
    }
    let mut out = DialogIngest::default();
    for file in corpus_files(path, format)? {
        let text = std::fs::read_to_string(&file).map_err(|e| Error::io(&file, e))?;
        let dialogs = parse_dialogs(&text, format).map_err(|e| match e {
            Error::MalformedFile { message, .. } => Error::malformed(&file, message),
            other => other,
        })?;
        out.dialogs.extend(dialogs);
    }
    out.warnings = unresolved_domains(&out.dialogs, catalog);
    Ok(out)
}

fn corpus_files(path: &Path, format: DialogFormat) -> Result<Vec<PathBuf>> {
    if !path.is_dir() {
        if !path.exists() {
            return Err(Error::io(
                path,
                std::io::Error::new(std::io::ErrorKind::NotFound, "no such file or directory"),
            ));
        }
        return Ok(vec![path.to_path_buf()]);
    }
    let ext = match format {
        DialogFormat::NativeJsonl => "jsonl",
        DialogFormat::SgdJson | DialogFormat::KetodJson => "json",
    };
    let mut files = Vec::new();
    for entry in std::fs::read_dir(path).map_err(|e| Error::io(path, e))? {
        let entry = entry.map_err(|e| Error::io(path, e))?;
        let p = entry.path();
        if p.is_file()
            && p.extension().is_some_and(|e| e == ext)
            && p.file_name().is_some_and(|n| n != "schema.json")
        {
            files.push(p);
        }
    }
    files.sort();
    Ok(files)
}

/// Parses dialog text in the given format; `MalformedFile` errors carry an empty path.
pub fn parse_dialogs(text: &str, format: DialogFormat) -> Result<Vec<Dialog>> {
    let dialogs = match format {
        DialogFormat::NativeJsonl => {
            let mut dialogs = Vec::new();
            for (n, line) in text.lines().enumerate() {
                if line.trim().is_empty() {
                    continue;
                }
                let dialog: Dialog = serde_json::from_str(line)
                    .map_err(|e| Error::malformed("", format!("line {}: {e}", n + 1)))?;
                dialogs.push(dialog);
            }
            dialogs
        }
        DialogFormat::SgdJson => crate::sgd::dialogs_from_sgd(text, false)?,
        DialogFormat::KetodJson => crate::sgd::dialogs_from_sgd(text, true)?,
    };
    for dialog in &dialogs {
        dialog
            .validate()
            .map_err(|e| Error::malformed("", e.to_string()))?;
    }
    Ok(dialogs)
}

pub fn unresolved_domains(dialogs: &[Dialog], catalog: &SchemaCatalog) -> Vec<Warning> {
    dialogs
        .iter()
        .flat_map(|d| {
            d.domains
                .iter()
                .filter(|dom| !catalog.contains(dom))
                .map(move |dom| Warning::new(&d.dialog_id, format!("unknown domain `{dom}`")))
        })
        .collect()
}

/// One dialog per line, compact JSON.
pub fn export_native_jsonl(dialogs: &[Dialog]) -> String {
    let mut out = String::new();
    for dialog in dialogs {
        out.push_str(&serde_json::to_string(dialog).expect("dialogs serialize"));
        out.push('\n');
    }
    out
}
