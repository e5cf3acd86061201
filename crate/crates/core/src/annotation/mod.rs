//! Blind human-evaluation studies.
//!
//! A study samples dialogs (stratified into single- and multi-domain), pairs each
//! with every model under comparison, and hides model identities behind per-study
//! aliases. Annotators open sessions, pull items one at a time, and submit 1-5
//! scores per criterion. All state changes go to an append-only JSONL log that is
//! replayed on startup; a repeated `(session, item, criterion)` rating replaces
//! the earlier one.

pub mod http;

use std::collections::{BTreeMap, HashMap, HashSet};
use std::fs::{File, OpenOptions};
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};

use chrono::{DateTime, Utc};
use parking_lot::{Mutex, RwLock};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::dialog::Dialog;
use crate::metrics::{PredictionSet, TurnKey};

pub const RUBRIC: &str = include_str!("../../data/rubric.md");

pub const LOG_FILE: &str = "annotation-log.jsonl";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum Criterion {
    Fluency,
    Informativeness,
    TaskCompletion,
}

impl Criterion {
    pub const ALL: [Criterion; 3] = [
        Criterion::Fluency,
        Criterion::Informativeness,
        Criterion::TaskCompletion,
    ];
}

fn default_criteria() -> Vec<Criterion> {
    Criterion::ALL.to_vec()
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct StudyConfig {
    /// Dialogs sampled from those touching exactly one domain.
    pub single_domain: usize,
    /// Dialogs sampled from those touching two or more domains.
    pub multi_domain: usize,
    pub models: Vec<String>,
    #[serde(default = "default_criteria")]
    pub criteria: Vec<Criterion>,
    #[serde(default)]
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum AnnotationError {
    #[error("unknown study `{0}`")]
    UnknownStudy(String),
    #[error("unknown session `{0}`")]
    UnknownSession(String),
    #[error("unknown item `{0}` for this session")]
    UnknownItem(String),
    #[error("score {0} is outside 1..=5")]
    InvalidScore(u8),
    #[error("{0}")]
    InvalidRecord(String),
    #[error("invalid study config: {0}")]
    InvalidConfig(String),
    #[error("corpus too small: {0}")]
    InsufficientCorpus(String),
    #[error("storage failure: {0}")]
    Storage(String),
}

impl AnnotationError {
    pub fn code(&self) -> &'static str {
        match self {
            AnnotationError::UnknownStudy(_) => "UNKNOWN_STUDY",
            AnnotationError::UnknownSession(_) => "UNKNOWN_SESSION",
            AnnotationError::UnknownItem(_) => "UNKNOWN_ITEM",
            AnnotationError::InvalidScore(_) => "INVALID_SCORE",
            AnnotationError::InvalidRecord(_) => "INVALID_RECORD",
            AnnotationError::InvalidConfig(_) => "INVALID_CONFIG",
            AnnotationError::InsufficientCorpus(_) => "INSUFFICIENT_CORPUS",
            AnnotationError::Storage(_) => "STORAGE",
        }
    }
}

type AResult<T> = Result<T, AnnotationError>;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TranscriptTurn {
    pub index: usize,
    pub user: String,
    pub response: String,
}

/// A `(dialog, model)` pair. Only the server ever sees `model_id`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct StudyItem {
    pub item_id: String,
    pub dialog_id: String,
    pub model_id: String,
    pub alias: String,
    pub transcript: Vec<TranscriptTurn>,
}

/// What an annotator receives.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct BlindedItem {
    pub item_id: String,
    pub alias: String,
    pub transcript: Vec<TranscriptTurn>,
    pub criteria: Vec<Criterion>,
    pub progress: Progress,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Progress {
    pub done: usize,
    pub total: usize,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "status", rename_all = "SCREAMING_SNAKE_CASE")]
pub enum NextItem {
    Item { item: BlindedItem },
    Done { progress: Progress },
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RatingRecord {
    pub session_id: String,
    pub item_id: String,
    pub blinded_alias: String,
    pub criterion: Criterion,
    pub score: u8,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub comment: Option<String>,
    /// Filled in by the server when absent.
    #[serde(default)]
    pub timestamp: Option<DateTime<Utc>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportCell {
    pub model_id: String,
    pub criterion: Criterion,
    pub count: usize,
    /// `None` when no ratings were collected.
    pub mean: Option<f64>,
    /// Population variance.
    pub variance: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StudyReport {
    pub study_id: String,
    pub total_ratings: usize,
    pub cells: Vec<ReportCell>,
}

impl StudyReport {
    pub fn cell(&self, model_id: &str, criterion: Criterion) -> Option<&ReportCell> {
        self.cells
            .iter()
            .find(|c| c.model_id == model_id && c.criterion == criterion)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
struct Study {
    study_id: String,
    config: StudyConfig,
    items: Vec<StudyItem>,
}

#[derive(Debug, Clone)]
struct Session {
    study_id: String,
    order: Vec<usize>,
    cursor: usize,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(tag = "event", rename_all = "snake_case")]
enum LogEvent {
    StudyCreated { study: Study },
    SessionCreated { study_id: String, session_id: String },
    ItemServed { session_id: String, cursor: usize },
    Rating { record: RatingRecord },
}

type RatingKey = (String, String, Criterion);

#[derive(Debug, Default)]
struct State {
    studies: BTreeMap<String, Study>,
    sessions: HashMap<String, Session>,
    ratings: BTreeMap<RatingKey, RatingRecord>,
}

impl State {
    fn apply(&mut self, event: LogEvent) {
        match event {
            LogEvent::StudyCreated { study } => {
                self.studies.insert(study.study_id.clone(), study);
            }
            LogEvent::SessionCreated {
                study_id,
                session_id,
            } => {
                let n = self.studies.get(&study_id).map_or(0, |s| s.items.len());
                let order = session_order(&session_id, n);
                self.sessions.insert(
                    session_id,
                    Session {
                        study_id,
                        order,
                        cursor: 0,
                    },
                );
            }
            LogEvent::ItemServed { session_id, cursor } => {
                if let Some(s) = self.sessions.get_mut(&session_id) {
                    s.cursor = cursor;
                }
            }
            LogEvent::Rating { record } => {
                let key = (
                    record.session_id.clone(),
                    record.item_id.clone(),
                    record.criterion,
                );
                self.ratings.insert(key, record);
            }
        }
    }
}

fn fnv1a(text: &str) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for b in text.bytes() {
        h ^= u64::from(b);
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    h
}

/// Per-session presentation order, a pure function of the session id.
fn session_order(session_id: &str, n: usize) -> Vec<usize> {
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(fnv1a(session_id)));
    order
}

fn alias_label(i: usize) -> String {
    let letter = (b'A' + (i % 26) as u8) as char;
    if i < 26 {
        format!("Model {letter}")
    } else {
        format!("Model {letter}{}", i / 26)
    }
}

/// Samples items for a study. Deterministic in `(config, corpus, predictions)`.
pub fn sample_items(
    config: &StudyConfig,
    corpus: &[Dialog],
    predictions: &[PredictionSet],
) -> AResult<Vec<StudyItem>> {
    if config.models.is_empty() {
        return Err(AnnotationError::InvalidConfig("no models".into()));
    }
    let mut unique = HashSet::new();
    if let Some(dup) = config.models.iter().find(|m| !unique.insert(m.as_str())) {
        return Err(AnnotationError::InvalidConfig(format!("model `{dup}` listed twice")));
    }
    let mut criteria = config.criteria.clone();
    criteria.sort();
    if criteria != Criterion::ALL {
        return Err(AnnotationError::InvalidConfig(
            "criteria must be FLUENCY, INFORMATIVENESS, TASK_COMPLETION".into(),
        ));
    }
    let sets: Vec<&PredictionSet> = config
        .models
        .iter()
        .map(|m| {
            predictions
                .iter()
                .find(|p| &p.model_id == m)
                .ok_or_else(|| AnnotationError::InvalidConfig(format!("no predictions for `{m}`")))
        })
        .collect::<AResult<_>>()?;

    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut aliases: Vec<String> = (0..config.models.len()).map(alias_label).collect();
    aliases.shuffle(&mut rng);
    if let Some(m) = config.models.iter().find(|m| aliases.contains(m)) {
        return Err(AnnotationError::InvalidConfig(format!(
            "model id `{m}` collides with an alias label"
        )));
    }

    let single: Vec<&Dialog> = corpus.iter().filter(|d| d.domains.len() == 1).collect();
    let multi: Vec<&Dialog> = corpus.iter().filter(|d| d.domains.len() > 1).collect();
    for (label, want, have) in [
        ("single-domain", config.single_domain, single.len()),
        ("multi-domain", config.multi_domain, multi.len()),
    ] {
        if want > have {
            return Err(AnnotationError::InsufficientCorpus(format!(
                "{want} {label} dialogs requested, {have} available"
            )));
        }
    }
    let mut chosen: Vec<&Dialog> = single
        .choose_multiple(&mut rng, config.single_domain)
        .copied()
        .collect();
    chosen.extend(multi.choose_multiple(&mut rng, config.multi_domain).copied());

    let mut items = Vec::with_capacity(chosen.len() * sets.len());
    for dialog in chosen {
        for (m, set) in sets.iter().enumerate() {
            let transcript = dialog
                .turns
                .iter()
                .map(|t| TranscriptTurn {
                    index: t.index,
                    user: t.user_utterance.clone(),
                    response: set
                        .entries
                        .get(&TurnKey::new(&dialog.dialog_id, t.index))
                        .cloned()
                        .unwrap_or_default(),
                })
                .collect();
            items.push(StudyItem {
                item_id: format!("item-{:05}", items.len() + 1),
                dialog_id: dialog.dialog_id.clone(),
                model_id: config.models[m].clone(),
                alias: aliases[m].clone(),
                transcript,
            });
        }
    }
    Ok(items)
}

fn moments(scores: &[u8]) -> (Option<f64>, Option<f64>) {
    if scores.is_empty() {
        return (None, None);
    }
    let n = scores.len() as f64;
    let mean = scores.iter().map(|&s| f64::from(s)).sum::<f64>() / n;
    let var = scores
        .iter()
        .map(|&s| (f64::from(s) - mean).powi(2))
        .sum::<f64>()
        / n;
    (Some(mean), Some(var))
}

/// Study state plus its append-only log.
pub struct AnnotationStore {
    state: RwLock<State>,
    log: Mutex<Option<File>>,
    log_path: Option<PathBuf>,
}

impl AnnotationStore {
    /// A store that keeps nothing on disk.
    pub fn in_memory() -> Self {
        AnnotationStore {
            state: RwLock::new(State::default()),
            log: Mutex::new(None),
            log_path: None,
        }
    }

    /// Opens (creating if needed) `dir/annotation-log.jsonl` and replays it.
    pub fn open(dir: &Path) -> AResult<Self> {
        std::fs::create_dir_all(dir).map_err(|e| AnnotationError::Storage(e.to_string()))?;
        let path = dir.join(LOG_FILE);
        let mut state = State::default();
        if path.exists() {
            let file = File::open(&path).map_err(|e| AnnotationError::Storage(e.to_string()))?;
            for (n, line) in BufReader::new(file).lines().enumerate() {
                let line = line.map_err(|e| AnnotationError::Storage(e.to_string()))?;
                if line.trim().is_empty() {
                    continue;
                }
                let event: LogEvent = serde_json::from_str(&line).map_err(|e| {
                    AnnotationError::Storage(format!("{}:{}: {e}", path.display(), n + 1))
                })?;
                state.apply(event);
            }
        }
        let file = OpenOptions::new()
            .create(true)
            .append(true)
            .open(&path)
            .map_err(|e| AnnotationError::Storage(e.to_string()))?;
        Ok(AnnotationStore {
            state: RwLock::new(state),
            log: Mutex::new(Some(file)),
            log_path: Some(path),
        })
    }

    pub fn log_path(&self) -> Option<&Path> {
        self.log_path.as_deref()
    }

    /// Appends the event, then applies it. The log lock serializes writers.
    fn commit(&self, event: LogEvent) -> AResult<()> {
        let mut log = self.log.lock();
        if let Some(file) = log.as_mut() {
            let mut line =
                serde_json::to_string(&event).map_err(|e| AnnotationError::Storage(e.to_string()))?;
            line.push('\n');
            file.write_all(line.as_bytes())
                .and_then(|()| file.flush())
                .and_then(|()| file.sync_data())
                .map_err(|e| AnnotationError::Storage(e.to_string()))?;
        }
        self.state.write().apply(event);
        Ok(())
    }

    pub fn flush(&self) -> AResult<()> {
        if let Some(file) = self.log.lock().as_mut() {
            file.sync_all()
                .map_err(|e| AnnotationError::Storage(e.to_string()))?;
        }
        Ok(())
    }

    pub fn create_study(
        &self,
        config: &StudyConfig,
        corpus: &[Dialog],
        predictions: &[PredictionSet],
    ) -> AResult<String> {
        let items = sample_items(config, corpus, predictions)?;
        let study = Study {
            study_id: uuid::Uuid::new_v4().to_string(),
            config: config.clone(),
            items,
        };
        let id = study.study_id.clone();
        self.commit(LogEvent::StudyCreated { study })?;
        Ok(id)
    }

    /// The id of an existing study created from an identical config, if any.
    pub fn find_study(&self, config: &StudyConfig) -> Option<String> {
        self.state
            .read()
            .studies
            .values()
            .find(|s| &s.config == config)
            .map(|s| s.study_id.clone())
    }

    pub fn study_ids(&self) -> Vec<String> {
        self.state.read().studies.keys().cloned().collect()
    }

    /// Server-side view of a study's items, in sampling order.
    pub fn study_items(&self, study_id: &str) -> AResult<Vec<StudyItem>> {
        self.state
            .read()
            .studies
            .get(study_id)
            .map(|s| s.items.clone())
            .ok_or_else(|| AnnotationError::UnknownStudy(study_id.into()))
    }

    pub fn create_session(&self, study_id: &str) -> AResult<String> {
        if !self.state.read().studies.contains_key(study_id) {
            return Err(AnnotationError::UnknownStudy(study_id.into()));
        }
        let session_id = uuid::Uuid::new_v4().to_string();
        self.commit(LogEvent::SessionCreated {
            study_id: study_id.into(),
            session_id: session_id.clone(),
        })?;
        Ok(session_id)
    }

    /// Serves the next item of the session's order and advances it.
    pub fn next_item(&self, study_id: &str, session_id: &str) -> AResult<NextItem> {
        let (item, progress) = {
            let state = self.state.read();
            let study = state
                .studies
                .get(study_id)
                .ok_or_else(|| AnnotationError::UnknownStudy(study_id.into()))?;
            let session = state
                .sessions
                .get(session_id)
                .filter(|s| s.study_id == study_id)
                .ok_or_else(|| AnnotationError::UnknownSession(session_id.into()))?;
            let total = session.order.len();
            let Some(&idx) = session.order.get(session.cursor) else {
                return Ok(NextItem::Done {
                    progress: Progress { done: total, total },
                });
            };
            let item = &study.items[idx];
            (
                BlindedItem {
                    item_id: item.item_id.clone(),
                    alias: item.alias.clone(),
                    transcript: item.transcript.clone(),
                    criteria: study.config.criteria.clone(),
                    progress: Progress {
                        done: session.cursor,
                        total,
                    },
                },
                session.cursor + 1,
            )
        };
        self.commit(LogEvent::ItemServed {
            session_id: session_id.into(),
            cursor: progress,
        })?;
        Ok(NextItem::Item { item })
    }

    pub fn submit_rating(&self, mut record: RatingRecord) -> AResult<()> {
        if !(1..=5).contains(&record.score) {
            return Err(AnnotationError::InvalidScore(record.score));
        }
        {
            let state = self.state.read();
            let session = state
                .sessions
                .get(&record.session_id)
                .ok_or_else(|| AnnotationError::UnknownSession(record.session_id.clone()))?;
            let study = &state.studies[&session.study_id];
            let item = study
                .items
                .iter()
                .find(|i| i.item_id == record.item_id)
                .ok_or_else(|| AnnotationError::UnknownItem(record.item_id.clone()))?;
            if item.alias != record.blinded_alias {
                return Err(AnnotationError::InvalidRecord(format!(
                    "alias `{}` does not match item `{}`",
                    record.blinded_alias, record.item_id
                )));
            }
            if !study.config.criteria.contains(&record.criterion) {
                return Err(AnnotationError::InvalidRecord(format!(
                    "criterion {:?} is not part of this study",
                    record.criterion
                )));
            }
        }
        record.timestamp.get_or_insert_with(Utc::now);
        self.commit(LogEvent::Rating { record })
    }

    /// Mean and population variance per model and criterion.
    pub fn study_report(&self, study_id: &str) -> AResult<StudyReport> {
        let state = self.state.read();
        let study = state
            .studies
            .get(study_id)
            .ok_or_else(|| AnnotationError::UnknownStudy(study_id.into()))?;
        let item_model: HashMap<&str, &str> = study
            .items
            .iter()
            .map(|i| (i.item_id.as_str(), i.model_id.as_str()))
            .collect();
        let mut scores: HashMap<(&str, Criterion), Vec<u8>> = HashMap::new();
        for ((session_id, item_id, criterion), record) in &state.ratings {
            let in_study = state
                .sessions
                .get(session_id)
                .is_some_and(|s| s.study_id == study_id);
            if !in_study {
                continue;
            }
            if let Some(model) = item_model.get(item_id.as_str()) {
                scores.entry((model, *criterion)).or_default().push(record.score);
            }
        }
        let mut cells = Vec::new();
        let mut total = 0;
        for model in &study.config.models {
            for &criterion in &study.config.criteria {
                let s = scores
                    .get(&(model.as_str(), criterion))
                    .map_or(&[][..], Vec::as_slice);
                let (mean, variance) = moments(s);
                total += s.len();
                cells.push(ReportCell {
                    model_id: model.clone(),
                    criterion,
                    count: s.len(),
                    mean,
                    variance,
                });
            }
        }
        Ok(StudyReport {
            study_id: study_id.into(),
            total_ratings: total,
            cells,
        })
    }
}
