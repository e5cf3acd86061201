//! Toolkit for schema-guided task-oriented dialog.
//!
//! * [`schema`] and [`dialog`] hold the corpus model and its SGD/KETOD/native readers.
//! * [`apicall`] parses and serializes the `ApiCall(...)` surface form.
//! * [`augment`] builds renamed schema variants and rewrites dialogs against them.
//! * [`prompt`] renders instruction prompts and emits `(prompt, target)` training pairs.
//! * [`splits`] buckets dialogs into seen/mixed/unseen and selects inform/request turns.
//! * [`metrics`] scores predictions: API-call accuracies, BLEU-4 and reports.
//! * [`annotation`] runs a blind 1-5 human rating study over HTTP.

pub mod annotation;
pub mod apicall;
pub mod augment;
pub mod cli;
pub mod dialog;
mod error;
pub mod metrics;
pub mod prompt;
pub mod schema;
mod sgd;
pub mod splits;

pub use apicall::{parse_apicall, serialize_apicall, ApiCall, ParseOutcome, ParseStatus};
pub use dialog::{history_window, Dialog, DialogFormat, OutputKind, Turn, TurnOutput};
pub use error::{Error, Result};
pub use schema::{DomainSchema, Intent, SchemaCatalog, SchemaFormat, SlotSpec, Warning};
