//! Read an SGD-style corpus and print a summary of what was loaded.
//!
//! cargo run --example ingest_sgd [schema.json] [dialogs-dir]

use std::path::PathBuf;

use todkit::dialog::ingest_dialogs;
use todkit::schema::ingest_schemas;
use todkit::{DialogFormat, OutputKind, SchemaFormat};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let fixtures = PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("data/fixtures/sgd");
    let mut args = std::env::args_os().skip(1).map(PathBuf::from);
    let schema_path = args.next().unwrap_or_else(|| fixtures.join("schema.json"));
    let dialog_path = args.next().unwrap_or(fixtures);

    let schemas = ingest_schemas(&schema_path, SchemaFormat::SgdJson)?;
    for w in &schemas.warnings {
        eprintln!("warning: {w}");
    }
    for s in schemas.catalog.iter() {
        let intents: Vec<&str> = s.intents.iter().map(|i| i.name.as_str()).collect();
        println!("{:<16} {}", s.domain_id, intents.join(", "));
    }

    let corpus = ingest_dialogs(&dialog_path, &schemas.catalog, DialogFormat::SgdJson)?;
    println!();
    for d in &corpus.dialogs {
        let calls = d.kind_sequence().iter().filter(|k| **k == OutputKind::ApiCall).count();
        println!(
            "{:<8} {:>2} turns {:>2} calls  {}",
            d.dialog_id,
            d.turns.len(),
            calls,
            d.domains.join(" + ")
        );
    }
    Ok(())
}
