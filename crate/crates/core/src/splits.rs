//! Domain categories (seen / mixed / unseen) and inform/request turn selection.

use std::collections::BTreeSet;
use std::fmt;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::dialog::{Dialog, OutputKind};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum DomainCategory {
    All,
    Seen,
    Mixed,
    Unseen,
}

impl DomainCategory {
    /// Reporting order, `All` first.
    pub const REPORTED: [DomainCategory; 4] = [
        DomainCategory::All,
        DomainCategory::Seen,
        DomainCategory::Mixed,
        DomainCategory::Unseen,
    ];

    pub fn label(self) -> &'static str {
        match self {
            DomainCategory::All => "All",
            DomainCategory::Seen => "Seen",
            DomainCategory::Mixed => "Mixed",
            DomainCategory::Unseen => "Unseen",
        }
    }
}

impl fmt::Display for DomainCategory {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.label())
    }
}

/// The set of domains present in training data.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "Vec<String>", into = "Vec<String>")]
pub struct SplitConfig {
    seen: BTreeSet<String>,
}

impl SplitConfig {
    pub fn new<S: Into<String>>(seen: impl IntoIterator<Item = S>) -> Result<Self> {
        let seen: BTreeSet<String> = seen.into_iter().map(Into::into).collect();
        if seen.is_empty() {
            return Err(Error::invalid("split config", "no seen domains"));
        }
        Ok(SplitConfig { seen })
    }

    /// Unions the domains of a training corpus.
    pub fn from_training_corpus(dialogs: &[Dialog]) -> Result<Self> {
        Self::new(dialogs.iter().flat_map(|d| d.domains.iter().cloned()))
    }

    /// Reads a JSON list of seen domain ids.
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        serde_json::from_str(&text).map_err(|e| Error::malformed(path, e))
    }

    pub fn seen(&self) -> impl Iterator<Item = &str> {
        self.seen.iter().map(String::as_str)
    }

    pub fn is_seen(&self, domain: &str) -> bool {
        self.seen.contains(domain)
    }
}

impl TryFrom<Vec<String>> for SplitConfig {
    type Error = Error;

    fn try_from(v: Vec<String>) -> Result<Self> {
        SplitConfig::new(v)
    }
}

impl From<SplitConfig> for Vec<String> {
    fn from(c: SplitConfig) -> Self {
        c.seen.into_iter().collect()
    }
}

/// Never returns `All`; that bucket holds every dialog.
pub fn categorize(dialog: &Dialog, config: &SplitConfig) -> DomainCategory {
    let seen = dialog.domains.iter().filter(|d| config.is_seen(d)).count();
    if seen == dialog.domains.len() {
        DomainCategory::Seen
    } else if seen == 0 {
        DomainCategory::Unseen
    } else {
        DomainCategory::Mixed
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum Subtask {
    Inform,
    Request,
}

impl Subtask {
    pub fn act_prefix(self) -> &'static str {
        match self {
            Subtask::Inform => "INFORM",
            Subtask::Request => "REQUEST",
        }
    }

    pub fn matches(self, act: &str) -> bool {
        act.trim()
            .to_ascii_uppercase()
            .starts_with(self.act_prefix())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct SubtaskSelection {
    pub turns: Vec<usize>,
    /// No turn in the dialog carries any act annotation.
    pub missing_annotations: bool,
}

/// Indices of text turns whose acts belong to the subtask's act family.
/// A turn carrying both families is selected for both.
pub fn subtask_turns(dialog: &Dialog, subtask: Subtask) -> SubtaskSelection {
    let missing_annotations = dialog.turns.iter().all(|t| t.acts.is_empty());
    let turns = dialog
        .turns
        .iter()
        .filter(|t| t.output.kind() == OutputKind::Text)
        .filter(|t| t.acts.iter().any(|a| subtask.matches(a)))
        .map(|t| t.index)
        .collect();
    SubtaskSelection {
        turns,
        missing_annotations,
    }
}
