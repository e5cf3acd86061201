//! Rename bus slots with a lexicon and show one rewritten dialog next to its source.
//!
//! cargo run --example augment_buses

use std::path::PathBuf;

use todkit::augment::{augment_corpus, AugmentOptions, RenameMap};
use todkit::dialog::ingest_dialogs;
use todkit::prompt::render_schema;
use todkit::schema::ingest_schemas;
use todkit::{DialogFormat, SchemaFormat};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let data = PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("data/fixtures");
    let catalog = ingest_schemas(&data.join("sgd/schema.json"), SchemaFormat::SgdJson)?.catalog;
    let dialogs = ingest_dialogs(&data.join("sgd"), &catalog, DialogFormat::SgdJson)?.dialogs;
    let lexicon = RenameMap::load(&data.join("lexicons/buses_11.json"))?;

    let options = AugmentOptions {
        rewrite_text: true,
        ..Default::default()
    };
    let out = augment_corpus(&dialogs, &catalog, &[lexicon], options)?;
    for w in &out.warnings {
        eprintln!("warning: {w}");
    }
    for schema in out.variant_schemas.iter() {
        print!("{}", render_schema(schema));
    }

    let augmented = &out.dialogs[0];
    let source = dialogs
        .iter()
        .find(|d| d.dialog_id == out.provenance[&augmented.dialog_id])
        .expect("provenance points at a source dialog");
    println!("\n{} -> {}", source.dialog_id, augmented.dialog_id);
    for (a, b) in source.turns.iter().zip(&augmented.turns) {
        let (a, b) = (a.output.render(), b.output.render());
        if a == b {
            println!("  = {a}");
        } else {
            println!("  - {a}\n  + {b}");
        }
    }
    println!("\n{} augmented dialogs", out.dialogs.len());
    Ok(())
}
