//! Task-completion metrics for API calls, BLEU-4 for text responses, and their
//! aggregation over domain categories.

mod bleu;
mod report;

use std::collections::{BTreeMap, HashMap, HashSet};
use std::io::BufRead;
use std::path::Path;

use serde::{Deserialize, Serialize};

pub use bleu::{bleu4, tokenize, BleuStats, MAX_ORDER, SMOOTHING_EPSILON};
pub use report::render_table;

use crate::apicall::{normalize_name, parse_apicall, ApiCall};
use crate::dialog::{Dialog, TurnOutput};
use crate::error::{Error, Result};
use crate::splits::{categorize, subtask_turns, DomainCategory, SplitConfig, Subtask};

#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct TurnKey {
    pub dialog_id: String,
    pub turn_index: usize,
}

impl TurnKey {
    pub fn new(dialog_id: impl Into<String>, turn_index: usize) -> Self {
        TurnKey {
            dialog_id: dialog_id.into(),
            turn_index,
        }
    }
}

/// Model outputs keyed by gold turn.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct PredictionSet {
    pub model_id: String,
    pub entries: BTreeMap<TurnKey, String>,
}

#[derive(Serialize, Deserialize)]
struct PredictionLine {
    dialog_id: String,
    turn_index: usize,
    output: String,
}

impl PredictionSet {
    pub fn new(model_id: impl Into<String>) -> Self {
        PredictionSet {
            model_id: model_id.into(),
            entries: BTreeMap::new(),
        }
    }

    pub fn insert(&mut self, key: TurnKey, output: impl Into<String>) -> Result<()> {
        if self.entries.contains_key(&key) {
            return Err(Error::invalid(
                "predictions",
                format!("duplicate key ({}, {})", key.dialog_id, key.turn_index),
            ));
        }
        self.entries.insert(key, output.into());
        Ok(())
    }

    /// Gold outputs as predictions: text verbatim, calls in canonical form.
    pub fn from_gold(model_id: impl Into<String>, dialogs: &[Dialog]) -> Self {
        let mut set = PredictionSet::new(model_id);
        for d in dialogs {
            for t in &d.turns {
                set.entries
                    .insert(TurnKey::new(&d.dialog_id, t.index), t.output.render());
            }
        }
        set
    }

    pub fn parse_jsonl(model_id: impl Into<String>, r: impl BufRead) -> Result<Self> {
        let mut set = PredictionSet::new(model_id);
        for (n, line) in r.lines().enumerate() {
            let line = line.map_err(|e| Error::io("<predictions>", e))?;
            if line.trim().is_empty() {
                continue;
            }
            let p: PredictionLine = serde_json::from_str(&line)
                .map_err(|e| Error::malformed("<predictions>", format!("line {}: {e}", n + 1)))?;
            set.insert(TurnKey::new(p.dialog_id, p.turn_index), p.output)?;
        }
        Ok(set)
    }

    /// Reads a prediction file; the model id is the file stem.
    pub fn load(path: &Path) -> Result<Self> {
        let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
        let model_id = path
            .file_stem()
            .map(|s| s.to_string_lossy().into_owned())
            .unwrap_or_default();
        Self::parse_jsonl(model_id, std::io::BufReader::new(file)).map_err(|e| match e {
            Error::MalformedFile { message, .. } => Error::malformed(path, message),
            other => other,
        })
    }

    pub fn to_jsonl(&self) -> String {
        let mut out = String::new();
        for (key, output) in &self.entries {
            let line = PredictionLine {
                dialog_id: key.dialog_id.clone(),
                turn_index: key.turn_index,
                output: output.clone(),
            };
            out.push_str(&serde_json::to_string(&line).expect("prediction serializes"));
            out.push('\n');
        }
        out
    }
}

/// Per-turn numerators of the five API-call metrics.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct ApiTurnScore {
    pub invoked: bool,
    pub method_correct: bool,
    pub gold_param_count: usize,
    pub name_hits: usize,
    pub value_hits: usize,
    pub spurious_params: usize,
    pub complete: bool,
}

/// Case-fold, trim, and strip one layer of matching surrounding quotes.
pub fn normalize_value(value: &str) -> String {
    let v = value.trim();
    let mut chars = v.chars();
    let stripped = match (chars.next(), chars.next_back()) {
        (Some(a), Some(b)) if a == b && matches!(a, '\'' | '"' | '`') => &v[1..v.len() - 1],
        _ => v,
    };
    stripped.trim().to_lowercase()
}

pub fn score_api_turn(gold: &ApiCall, predicted_text: &str) -> ApiTurnScore {
    let mut score = ApiTurnScore {
        gold_param_count: gold.params().len(),
        ..Default::default()
    };
    let Some(pred) = parse_apicall(predicted_text).into_call() else {
        return score;
    };
    score.invoked = true;
    score.method_correct = normalize_name(pred.method()) == normalize_name(gold.method());

    let predicted: HashMap<String, &str> = pred
        .params()
        .iter()
        .map(|(n, v)| (normalize_name(n), v.as_str()))
        .collect();
    let gold_names: HashSet<String> = gold.params().iter().map(|(n, _)| normalize_name(n)).collect();
    for (name, value) in gold.params() {
        if let Some(pv) = predicted.get(&normalize_name(name)) {
            score.name_hits += 1;
            if normalize_value(pv) == normalize_value(value) {
                score.value_hits += 1;
            }
        }
    }
    score.spurious_params = predicted.keys().filter(|n| !gold_names.contains(*n)).count();
    score.complete = score.method_correct
        && score.name_hits == score.gold_param_count
        && score.value_hits == score.gold_param_count
        && score.spurious_params == 0;
    score
}

/// How parameter name/value accuracy is aggregated.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ParamAccuracyMode {
    /// Hits over gold parameters, pooled across calls.
    #[default]
    Micro,
    /// Fraction of calls whose names (values) are all right.
    PerCall,
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Ratio {
    pub numerator: usize,
    pub denominator: usize,
    /// `None` when the denominator is zero.
    pub value: Option<f64>,
}

impl Ratio {
    pub fn new(numerator: usize, denominator: usize) -> Self {
        Ratio {
            numerator,
            denominator,
            value: (denominator > 0).then(|| numerator as f64 / denominator as f64),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Bleu {
    pub turns: usize,
    pub score: Option<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct MeanScore {
    pub count: usize,
    pub mean: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CategoryMetrics {
    pub category: DomainCategory,
    pub dialogs: usize,
    pub invoke_acc: Ratio,
    pub method_acc: Ratio,
    pub param_name_acc: Ratio,
    pub param_value_acc: Ratio,
    pub complete_acc: Ratio,
    pub spurious_params: usize,
    pub false_invoke_rate: Ratio,
    pub bleu4_overall: Bleu,
    pub bleu4_inform: Bleu,
    pub bleu4_request: Bleu,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub external_semantic_score: Option<MeanScore>,
}

/// Choices the numbers depend on, printed with every report.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportFlags {
    pub method_comparison: String,
    pub value_comparison: String,
    pub param_accuracy_mode: ParamAccuracyMode,
    pub complete_requires_exact_param_set: bool,
    pub dual_act_turns_in_both_subtasks: bool,
    pub bleu: String,
}

impl ReportFlags {
    fn new(mode: ParamAccuracyMode) -> Self {
        ReportFlags {
            method_comparison: "case-insensitive, trimmed".into(),
            value_comparison: "case-insensitive, trimmed, symmetric quotes stripped".into(),
            param_accuracy_mode: mode,
            complete_requires_exact_param_set: true,
            dual_act_turns_in_both_subtasks: true,
            bleu: format!(
                "corpus BLEU-{MAX_ORDER}, uniform weights, brevity penalty, epsilon {SMOOTHING_EPSILON} on zero matches"
            ),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub model_id: String,
    pub flags: ReportFlags,
    /// In `All, Seen, Mixed, Unseen` order.
    pub categories: Vec<CategoryMetrics>,
    /// Gold turns with no prediction; not scored.
    pub missing_predictions: Vec<TurnKey>,
    /// Predictions whose key matches no gold turn; not scored.
    pub unresolved_predictions: Vec<TurnKey>,
    /// Dialogs without any act annotation (their turns never enter inform/request BLEU).
    pub dialogs_without_acts: usize,
    #[serde(skip)]
    turn_categories: HashMap<TurnKey, DomainCategory>,
}

impl EvalReport {
    pub fn category(&self, category: DomainCategory) -> &CategoryMetrics {
        self.categories
            .iter()
            .find(|c| c.category == category)
            .expect("every category is reported")
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct EvalOptions {
    pub param_accuracy_mode: ParamAccuracyMode,
}

#[derive(Default)]
struct Accumulator {
    dialogs: usize,
    api_turns: usize,
    invoked: usize,
    method: usize,
    complete: usize,
    gold_params: usize,
    name_hits: usize,
    value_hits: usize,
    calls_names_exact: usize,
    calls_values_exact: usize,
    spurious: usize,
    text_turns: usize,
    false_invokes: usize,
    bleu_all: (usize, BleuStats),
    bleu_inform: (usize, BleuStats),
    bleu_request: (usize, BleuStats),
}

impl Accumulator {
    fn add_api(&mut self, s: &ApiTurnScore) {
        self.api_turns += 1;
        self.invoked += s.invoked as usize;
        self.method += s.method_correct as usize;
        self.complete += s.complete as usize;
        self.gold_params += s.gold_param_count;
        self.name_hits += s.name_hits;
        self.value_hits += s.value_hits;
        self.spurious += s.spurious_params;
        let names_exact = s.invoked && s.name_hits == s.gold_param_count && s.spurious_params == 0;
        self.calls_names_exact += names_exact as usize;
        self.calls_values_exact += (names_exact && s.value_hits == s.gold_param_count) as usize;
    }

    fn finish(&self, category: DomainCategory, mode: ParamAccuracyMode) -> CategoryMetrics {
        let bleu = |(turns, stats): &(usize, BleuStats)| Bleu {
            turns: *turns,
            score: (*turns > 0).then(|| stats.score()),
        };
        let (param_name_acc, param_value_acc) = match mode {
            ParamAccuracyMode::Micro => (
                Ratio::new(self.name_hits, self.gold_params),
                Ratio::new(self.value_hits, self.gold_params),
            ),
            ParamAccuracyMode::PerCall => (
                Ratio::new(self.calls_names_exact, self.api_turns),
                Ratio::new(self.calls_values_exact, self.api_turns),
            ),
        };
        CategoryMetrics {
            category,
            dialogs: self.dialogs,
            invoke_acc: Ratio::new(self.invoked, self.api_turns),
            method_acc: Ratio::new(self.method, self.api_turns),
            param_name_acc,
            param_value_acc,
            complete_acc: Ratio::new(self.complete, self.api_turns),
            spurious_params: self.spurious,
            false_invoke_rate: Ratio::new(self.false_invokes, self.text_turns),
            bleu4_overall: bleu(&self.bleu_all),
            bleu4_inform: bleu(&self.bleu_inform),
            bleu4_request: bleu(&self.bleu_request),
            external_semantic_score: None,
        }
    }
}

fn add_bleu(slot: &mut (usize, BleuStats), stats: &BleuStats) {
    slot.0 += 1;
    slot.1.add(stats);
}

/// Scores a prediction set against gold dialogs, for every category bucket.
pub fn evaluate(
    gold: &[Dialog],
    predictions: &PredictionSet,
    config: &SplitConfig,
    options: EvalOptions,
) -> EvalReport {
    let mut buckets: BTreeMap<DomainCategory, Accumulator> = DomainCategory::REPORTED
        .iter()
        .map(|c| (*c, Accumulator::default()))
        .collect();
    let mut missing = Vec::new();
    let mut gold_keys = HashSet::new();
    let mut turn_categories = HashMap::new();
    let mut dialogs_without_acts = 0;

    for dialog in gold {
        let category = categorize(dialog, config);
        let targets = [DomainCategory::All, category];
        let inform = subtask_turns(dialog, Subtask::Inform);
        let request = subtask_turns(dialog, Subtask::Request);
        dialogs_without_acts += inform.missing_annotations as usize;
        for c in targets {
            buckets.get_mut(&c).expect("bucket").dialogs += 1;
        }

        for turn in &dialog.turns {
            let key = TurnKey::new(&dialog.dialog_id, turn.index);
            gold_keys.insert(key.clone());
            turn_categories.insert(key.clone(), category);
            let Some(predicted) = predictions.entries.get(&key) else {
                missing.push(key);
                continue;
            };
            match &turn.output {
                TurnOutput::ApiCall { call } => {
                    let score = score_api_turn(call, predicted);
                    for c in targets {
                        buckets.get_mut(&c).expect("bucket").add_api(&score);
                    }
                }
                TurnOutput::Text { text } => {
                    let false_invoke = parse_apicall(predicted).is_parsed();
                    let stats = BleuStats::from_pair(predicted, text);
                    let in_inform = inform.turns.contains(&turn.index);
                    let in_request = request.turns.contains(&turn.index);
                    for c in targets {
                        let acc = buckets.get_mut(&c).expect("bucket");
                        acc.text_turns += 1;
                        acc.false_invokes += false_invoke as usize;
                        add_bleu(&mut acc.bleu_all, &stats);
                        if in_inform {
                            add_bleu(&mut acc.bleu_inform, &stats);
                        }
                        if in_request {
                            add_bleu(&mut acc.bleu_request, &stats);
                        }
                    }
                }
            }
        }
    }

    let unresolved = predictions
        .entries
        .keys()
        .filter(|k| !gold_keys.contains(*k))
        .cloned()
        .collect();

    EvalReport {
        model_id: predictions.model_id.clone(),
        flags: ReportFlags::new(options.param_accuracy_mode),
        categories: buckets
            .iter()
            .map(|(c, acc)| acc.finish(*c, options.param_accuracy_mode))
            .collect(),
        missing_predictions: missing,
        unresolved_predictions: unresolved,
        dialogs_without_acts,
        turn_categories,
    }
}

/// Adds per-category means of externally computed per-turn scores (for example a
/// semantic similarity in `[-1, 1]`). Keys outside the gold corpus and values
/// outside `[-1, 1]` are ignored. An empty map leaves the report unchanged.
pub fn attach_external_scores(mut report: EvalReport, scores: &BTreeMap<TurnKey, f64>) -> EvalReport {
    let mut sums: BTreeMap<DomainCategory, (usize, f64)> = BTreeMap::new();
    for (key, &value) in scores {
        if !(-1.0..=1.0).contains(&value) {
            continue;
        }
        let Some(category) = report.turn_categories.get(key) else {
            continue;
        };
        for c in [DomainCategory::All, *category] {
            let e = sums.entry(c).or_default();
            e.0 += 1;
            e.1 += value;
        }
    }
    for metrics in &mut report.categories {
        if let Some((count, sum)) = sums.get(&metrics.category) {
            metrics.external_semantic_score = Some(MeanScore {
                count: *count,
                mean: sum / *count as f64,
            });
        }
    }
    report
}

#[derive(Deserialize)]
struct ExternalScoreLine {
    dialog_id: String,
    turn_index: usize,
    score: f64,
}

/// Reads `{"dialog_id", "turn_index", "score"}` lines.
pub fn load_external_scores(path: &Path) -> Result<BTreeMap<TurnKey, f64>> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut scores = BTreeMap::new();
    for (n, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let s: ExternalScoreLine = serde_json::from_str(line)
            .map_err(|e| Error::malformed(path, format!("line {}: {e}", n + 1)))?;
        scores.insert(TurnKey::new(s.dialog_id, s.turn_index), s.score);
    }
    Ok(scores)
}
