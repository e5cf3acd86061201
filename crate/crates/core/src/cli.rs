//! The `todkit` command line.
//!
//! Every flag can also come from a JSON file passed with `--config`. The file
//! holds one object per subcommand whose keys are the flag names with `-`
//! written as `_`; flags given on the command line win.
//!
//! ```json
//! { "evaluate": { "gold": "corpus/dialogs.jsonl", "seen": "seen.json" } }
//! ```
//!
//! Exit codes: 0 success, 1 usage, 2 data error, 3 internal error.

use std::ffi::OsString;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Deserialize;

use crate::annotation::http::{serve, AnnotationService};
use crate::annotation::{AnnotationError, AnnotationStore, StudyConfig};
use crate::augment::{augment_corpus, AugmentOptions, RenameMap};
use crate::dialog::{export_native_jsonl, ingest_dialogs, Dialog, DialogFormat};
use crate::metrics::{
    attach_external_scores, evaluate, load_external_scores, render_table, EvalOptions,
    ParamAccuracyMode, PredictionSet,
};
use crate::prompt::{emit_training_pairs, write_pairs_jsonl, PromptTemplate, DEFAULT_K};
use crate::schema::{export_native_schemas, ingest_schemas, SchemaCatalog, SchemaFormat};
use crate::splits::SplitConfig;

pub const EXIT_OK: i32 = 0;
pub const EXIT_USAGE: i32 = 1;
pub const EXIT_DATA: i32 = 2;
pub const EXIT_INTERNAL: i32 = 3;

#[derive(Debug, Parser)]
#[command(name = "todkit", version, about = "Schema-guided task-oriented dialog toolkit")]
pub struct Cli {
    /// JSON file with default flag values, one object per subcommand.
    #[arg(long, global = true, value_name = "FILE")]
    pub config: Option<PathBuf>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Convert SGD/KETOD or native files into the native corpus layout.
    Ingest(IngestArgs),
    /// Build schema variants from rename lexicons and rewrite dialogs against them.
    Augment(AugmentArgs),
    /// Emit one prompt/target training pair per turn as JSONL.
    Render(RenderArgs),
    /// Score prediction files against gold dialogs.
    Evaluate(EvaluateArgs),
    /// Run the blind human-evaluation HTTP service.
    Serve(ServeArgs),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CorpusFormat {
    Sgd,
    Ketod,
    Native,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ParamAccuracyArg {
    Micro,
    PerCall,
}

#[derive(Debug, Default, Args, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct IngestArgs {
    /// Input format of both the schema file and the dialogs.
    #[arg(long, value_enum)]
    pub format: Option<CorpusFormat>,
    /// Schema file.
    #[arg(long, value_name = "FILE")]
    pub schemas: Option<PathBuf>,
    /// Dialog file or directory.
    #[arg(long, value_name = "PATH")]
    pub dialogs: Option<PathBuf>,
    /// Output directory; receives schemas.json and dialogs.jsonl.
    #[arg(long, value_name = "DIR")]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Default, Args, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AugmentArgs {
    /// Native schema file.
    #[arg(long, value_name = "FILE")]
    pub schemas: Option<PathBuf>,
    /// Native dialog file (JSONL).
    #[arg(long, value_name = "FILE")]
    pub dialogs: Option<PathBuf>,
    /// Rename lexicon; repeat for several variants.
    #[arg(long = "lexicon", value_name = "FILE")]
    pub lexicons: Vec<PathBuf>,
    /// Output directory; receives variant_schemas.json, dialogs.jsonl and provenance.json.
    #[arg(long, value_name = "DIR")]
    pub out: Option<PathBuf>,
    /// Also substitute renamed names inside utterances.
    #[arg(long)]
    pub rewrite_text: bool,
    /// Copy dialogs that do not touch a lexicon's domain under that variant too.
    #[arg(long)]
    pub include_unmatched: bool,
}

#[derive(Debug, Default, Args, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RenderArgs {
    /// Native schema file; repeat to combine catalogs (e.g. source plus variants).
    #[arg(long = "schemas", value_name = "FILE")]
    pub schemas: Vec<PathBuf>,
    /// Native dialog file (JSONL).
    #[arg(long, value_name = "FILE")]
    pub dialogs: Option<PathBuf>,
    /// Prompt template file; the built-in template is used when absent.
    #[arg(long, value_name = "FILE")]
    pub template: Option<PathBuf>,
    /// Number of turns in the history window [default: 5].
    #[arg(long)]
    pub k: Option<usize>,
    /// Output JSONL file.
    #[arg(long, value_name = "FILE")]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Default, Args, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvaluateArgs {
    /// Gold native dialog file (JSONL).
    #[arg(long, value_name = "FILE")]
    pub gold: Option<PathBuf>,
    /// Prediction file; the file stem is the model id. Repeat for several models.
    #[arg(long = "predictions", value_name = "FILE")]
    pub predictions: Vec<PathBuf>,
    /// JSON list of domains seen in training.
    #[arg(long, value_name = "FILE")]
    pub seen: Option<PathBuf>,
    /// Per-turn external scores, matched to --predictions by position.
    #[arg(long = "external-scores", value_name = "FILE")]
    pub external_scores: Vec<PathBuf>,
    /// How parameter name/value accuracy is averaged.
    #[arg(long, value_enum)]
    pub param_accuracy: Option<ParamAccuracyArg>,
    /// Write the reports as JSON here in addition to printing the table.
    #[arg(long, value_name = "FILE")]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Default, Args, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ServeArgs {
    /// Native dialog file (JSONL) studies are sampled from.
    #[arg(long, value_name = "FILE")]
    pub dialogs: Option<PathBuf>,
    /// Prediction file; the file stem is the model id. Repeat for several models.
    #[arg(long = "predictions", value_name = "FILE")]
    pub predictions: Vec<PathBuf>,
    /// Directory holding the append-only annotation log.
    #[arg(long, value_name = "DIR")]
    pub data_dir: Option<PathBuf>,
    /// Bind address [default: 127.0.0.1].
    #[arg(long)]
    pub host: Option<String>,
    /// 0 picks a free port; the bound address is printed on startup [default: 8080].
    #[arg(long)]
    pub port: Option<u16>,
    /// Study to create (or reuse, if an identical one exists) at startup.
    #[arg(long, value_name = "FILE")]
    pub study_config: Option<PathBuf>,
    /// Sampling seed; overrides the seed in --study-config.
    #[arg(long)]
    pub seed: Option<u64>,
}

trait Layer {
    fn layer(self, under: Self) -> Self;
}

impl<T> Layer for Option<T> {
    fn layer(self, under: Self) -> Self {
        self.or(under)
    }
}

impl<T> Layer for Vec<T> {
    fn layer(self, under: Self) -> Self {
        if self.is_empty() {
            under
        } else {
            self
        }
    }
}

impl Layer for bool {
    fn layer(self, under: Self) -> Self {
        self || under
    }
}

macro_rules! layered {
    ($ty:ident { $($field:ident),* $(,)? }) => {
        impl Layer for $ty {
            fn layer(self, under: Self) -> Self {
                $ty { $($field: self.$field.layer(under.$field)),* }
            }
        }
    };
}

layered!(IngestArgs { format, schemas, dialogs, out });
layered!(AugmentArgs { schemas, dialogs, lexicons, out, rewrite_text, include_unmatched });
layered!(RenderArgs { schemas, dialogs, template, k, out });
layered!(EvaluateArgs { gold, predictions, seen, external_scores, param_accuracy, out });
layered!(ServeArgs { dialogs, predictions, data_dir, host, port, study_config, seed });

#[derive(Debug, Default, Deserialize)]
#[serde(default, deny_unknown_fields)]
struct ConfigFile {
    ingest: IngestArgs,
    augment: AugmentArgs,
    render: RenderArgs,
    evaluate: EvaluateArgs,
    serve: ServeArgs,
}

#[derive(Debug)]
pub enum CliError {
    Usage(String),
    Data(String),
    Internal(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) => EXIT_USAGE,
            CliError::Data(_) => EXIT_DATA,
            CliError::Internal(_) => EXIT_INTERNAL,
        }
    }
}

impl std::fmt::Display for CliError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            CliError::Usage(m) => write!(f, "usage error: {m}"),
            CliError::Data(m) => write!(f, "error: {m}"),
            CliError::Internal(m) => write!(f, "internal error: {m}"),
        }
    }
}

impl From<crate::Error> for CliError {
    fn from(e: crate::Error) -> Self {
        CliError::Data(e.to_string())
    }
}

impl From<AnnotationError> for CliError {
    fn from(e: AnnotationError) -> Self {
        match e {
            AnnotationError::Storage(_) => CliError::Internal(e.to_string()),
            _ => CliError::Data(e.to_string()),
        }
    }
}

type CliResult<T = ()> = Result<T, CliError>;

fn required<T>(value: Option<T>, flag: &str) -> CliResult<T> {
    value.ok_or_else(|| CliError::Usage(format!("--{flag} is required")))
}

fn write_file(path: &Path, contents: &str) -> CliResult {
    std::fs::write(path, contents)
        .map_err(|e| CliError::Data(format!("cannot write {}: {e}", path.display())))
}

fn create_dir(path: &Path) -> CliResult {
    std::fs::create_dir_all(path)
        .map_err(|e| CliError::Data(format!("cannot create {}: {e}", path.display())))
}

fn warn_all<W: std::fmt::Display>(warnings: &[W]) {
    for w in warnings {
        eprintln!("warning: {w}");
    }
}

fn load_native(schemas: &Path, dialogs: &Path) -> CliResult<(SchemaCatalog, Vec<Dialog>)> {
    let s = ingest_schemas(schemas, SchemaFormat::NativeJson)?;
    warn_all(&s.warnings);
    let d = ingest_dialogs(dialogs, &s.catalog, DialogFormat::NativeJsonl)?;
    warn_all(&d.warnings);
    Ok((s.catalog, d.dialogs))
}

/// Reads native dialogs without a catalog (evaluation and serving need none).
fn load_dialogs(path: &Path) -> CliResult<Vec<Dialog>> {
    let text = std::fs::read_to_string(path).map_err(|e| crate::Error::io(path, e))?;
    crate::dialog::parse_dialogs(&text, DialogFormat::NativeJsonl).map_err(|e| match e {
        crate::Error::MalformedFile { message, .. } => crate::Error::malformed(path, message).into(),
        other => other.into(),
    })
}

fn load_predictions(paths: &[PathBuf]) -> CliResult<Vec<PredictionSet>> {
    let sets = paths
        .iter()
        .map(|p| PredictionSet::load(p))
        .collect::<crate::Result<Vec<_>>>()?;
    let mut ids: Vec<&str> = sets.iter().map(|s| s.model_id.as_str()).collect();
    ids.sort_unstable();
    if let Some(w) = ids.windows(2).find(|w| w[0] == w[1]) {
        return Err(CliError::Usage(format!(
            "two prediction files share the model id `{}`",
            w[0]
        )));
    }
    Ok(sets)
}

pub fn cmd_ingest(args: IngestArgs) -> CliResult {
    let format = required(args.format, "format")?;
    let schemas = required(args.schemas, "schemas")?;
    let dialogs = required(args.dialogs, "dialogs")?;
    let out = required(args.out, "out")?;
    let (sf, df) = match format {
        CorpusFormat::Sgd => (SchemaFormat::SgdJson, DialogFormat::SgdJson),
        CorpusFormat::Ketod => (SchemaFormat::SgdJson, DialogFormat::KetodJson),
        CorpusFormat::Native => (SchemaFormat::NativeJson, DialogFormat::NativeJsonl),
    };
    let s = ingest_schemas(&schemas, sf)?;
    warn_all(&s.warnings);
    let d = ingest_dialogs(&dialogs, &s.catalog, df)?;
    warn_all(&d.warnings);
    create_dir(&out)?;
    write_file(&out.join("schemas.json"), &export_native_schemas(&s.catalog))?;
    write_file(&out.join("dialogs.jsonl"), &export_native_jsonl(&d.dialogs))?;
    println!(
        "ingested {} domains and {} dialogs into {}",
        s.catalog.len(),
        d.dialogs.len(),
        out.display()
    );
    Ok(())
}

pub fn cmd_augment(args: AugmentArgs) -> CliResult {
    let schemas = required(args.schemas, "schemas")?;
    let dialogs = required(args.dialogs, "dialogs")?;
    let out = required(args.out, "out")?;
    if args.lexicons.is_empty() {
        return Err(CliError::Usage("at least one --lexicon is required".into()));
    }
    let (catalog, dialogs) = load_native(&schemas, &dialogs)?;
    let maps = args
        .lexicons
        .iter()
        .map(|p| RenameMap::load(p))
        .collect::<crate::Result<Vec<_>>>()?;
    let options = AugmentOptions {
        rewrite_text: args.rewrite_text,
        include_unmatched: args.include_unmatched,
    };
    let corpus = augment_corpus(&dialogs, &catalog, &maps, options)?;
    warn_all(&corpus.warnings);
    create_dir(&out)?;
    write_file(
        &out.join("variant_schemas.json"),
        &export_native_schemas(&corpus.variant_schemas),
    )?;
    write_file(&out.join("dialogs.jsonl"), &export_native_jsonl(&corpus.dialogs))?;
    let mut provenance =
        serde_json::to_string_pretty(&corpus.provenance).expect("string map serializes");
    provenance.push('\n');
    write_file(&out.join("provenance.json"), &provenance)?;
    println!(
        "wrote {} variant schemas and {} dialogs to {}",
        corpus.variant_schemas.len(),
        corpus.dialogs.len(),
        out.display()
    );
    Ok(())
}

pub fn cmd_render(args: RenderArgs) -> CliResult {
    if args.schemas.is_empty() {
        return Err(CliError::Usage("--schemas is required".into()));
    }
    let dialogs_path = required(args.dialogs, "dialogs")?;
    let out = required(args.out, "out")?;
    let k = args.k.unwrap_or(DEFAULT_K);
    if k == 0 {
        return Err(CliError::Usage("--k must be at least 1".into()));
    }
    let mut catalog = SchemaCatalog::new();
    for path in &args.schemas {
        let s = ingest_schemas(path, SchemaFormat::NativeJson)?;
        warn_all(&s.warnings);
        catalog.merge(s.catalog)?;
    }
    let d = ingest_dialogs(&dialogs_path, &catalog, DialogFormat::NativeJsonl)?;
    warn_all(&d.warnings);
    let template = match &args.template {
        Some(path) => PromptTemplate::load(path)?,
        None => PromptTemplate::default(),
    };
    let emitted = emit_training_pairs(&d.dialogs, &catalog, &template, k);
    let mut buf = Vec::new();
    write_pairs_jsonl(&emitted.pairs, &mut buf)
        .map_err(|e| CliError::Internal(e.to_string()))?;
    let text = String::from_utf8(buf).map_err(|e| CliError::Internal(e.to_string()))?;
    write_file(&out, &text)?;
    println!(
        "wrote {} pairs ({} template) to {}",
        emitted.pairs.len(),
        template.version(),
        out.display()
    );
    if emitted.failures.is_empty() {
        return Ok(());
    }
    for (id, e) in &emitted.failures {
        eprintln!("error: dialog {id}: {e}");
    }
    Err(CliError::Data(format!(
        "{} dialogs could not be rendered",
        emitted.failures.len()
    )))
}

pub fn cmd_evaluate(args: EvaluateArgs) -> CliResult {
    let gold_path = required(args.gold, "gold")?;
    let seen = required(args.seen, "seen")?;
    if args.predictions.is_empty() {
        return Err(CliError::Usage("at least one --predictions is required".into()));
    }
    if !args.external_scores.is_empty() && args.external_scores.len() != args.predictions.len() {
        return Err(CliError::Usage(format!(
            "{} --external-scores files for {} --predictions files",
            args.external_scores.len(),
            args.predictions.len()
        )));
    }
    let gold = load_dialogs(&gold_path)?;
    let split = SplitConfig::load(&seen)?;
    let options = EvalOptions {
        param_accuracy_mode: match args.param_accuracy {
            Some(ParamAccuracyArg::PerCall) => ParamAccuracyMode::PerCall,
            Some(ParamAccuracyArg::Micro) | None => ParamAccuracyMode::Micro,
        },
    };
    let mut reports = Vec::new();
    for (i, set) in load_predictions(&args.predictions)?.iter().enumerate() {
        let mut report = evaluate(&gold, set, &split, options);
        if let Some(path) = args.external_scores.get(i) {
            report = attach_external_scores(report, &load_external_scores(path)?);
        }
        if !report.missing_predictions.is_empty() {
            eprintln!(
                "warning: {}: {} gold turns have no prediction",
                report.model_id,
                report.missing_predictions.len()
            );
        }
        reports.push(report);
    }
    print!("{}", render_table(&reports));
    if let Some(out) = args.out {
        let mut json = serde_json::to_string_pretty(&reports)
            .map_err(|e| CliError::Internal(e.to_string()))?;
        json.push('\n');
        write_file(&out, &json)?;
    }
    Ok(())
}

async fn shutdown_signal() {
    let ctrl_c = async {
        let _ = tokio::signal::ctrl_c().await;
    };
    #[cfg(unix)]
    let term = async {
        match tokio::signal::unix::signal(tokio::signal::unix::SignalKind::terminate()) {
            Ok(mut s) => {
                s.recv().await;
            }
            Err(_) => std::future::pending::<()>().await,
        }
    };
    #[cfg(not(unix))]
    let term = std::future::pending::<()>();
    tokio::select! {
        () = ctrl_c => {},
        () = term => {},
    }
}

pub fn cmd_serve(args: ServeArgs) -> CliResult {
    let dialogs_path = required(args.dialogs, "dialogs")?;
    let data_dir = required(args.data_dir, "data-dir")?;
    let host = args.host.unwrap_or_else(|| "127.0.0.1".into());
    let port = args.port.unwrap_or(8080);
    let corpus = load_dialogs(&dialogs_path)?;
    let predictions = load_predictions(&args.predictions)?;
    let store = AnnotationStore::open(&data_dir)?;

    if let Some(path) = &args.study_config {
        let text = std::fs::read_to_string(path).map_err(|e| crate::Error::io(path, e))?;
        let mut config: StudyConfig =
            serde_json::from_str(&text).map_err(|e| crate::Error::malformed(path, e))?;
        if let Some(seed) = args.seed {
            config.seed = seed;
        }
        let id = match store.find_study(&config) {
            Some(id) => id,
            None => store.create_study(&config, &corpus, &predictions)?,
        };
        println!("study {id}");
    }

    let runtime = tokio::runtime::Runtime::new().map_err(|e| CliError::Internal(e.to_string()))?;
    runtime.block_on(async move {
        let listener = tokio::net::TcpListener::bind((host.as_str(), port))
            .await
            .map_err(|e| CliError::Data(format!("cannot bind {host}:{port}: {e}")))?;
        let addr = listener
            .local_addr()
            .map_err(|e| CliError::Internal(e.to_string()))?;
        println!("listening on http://{addr}");
        let _ = std::io::stdout().flush();
        let service = Arc::new(AnnotationService::new(store, corpus, predictions));
        serve(listener, service, shutdown_signal())
            .await
            .map_err(|e| CliError::Internal(e.to_string()))
    })?;
    println!("shut down cleanly");
    Ok(())
}

fn load_config(path: &Path) -> CliResult<ConfigFile> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| CliError::Usage(format!("cannot read config {}: {e}", path.display())))?;
    serde_json::from_str(&text)
        .map_err(|e| CliError::Usage(format!("invalid config {}: {e}", path.display())))
}

/// Runs a parsed command line.
pub fn execute(cli: Cli) -> CliResult {
    let config = match &cli.config {
        Some(path) => load_config(path)?,
        None => ConfigFile::default(),
    };
    match cli.command {
        Command::Ingest(a) => cmd_ingest(a.layer(config.ingest)),
        Command::Augment(a) => cmd_augment(a.layer(config.augment)),
        Command::Render(a) => cmd_render(a.layer(config.render)),
        Command::Evaluate(a) => cmd_evaluate(a.layer(config.evaluate)),
        Command::Serve(a) => cmd_serve(a.layer(config.serve)),
    }
}

/// Parses `args` (including the program name), runs the command and returns the
/// process exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
        }
    };
    match execute(cli) {
        Ok(()) => EXIT_OK,
        Err(e) => {
            eprintln!("{e}");
            e.exit_code()
        }
    }
}
