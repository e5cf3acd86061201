//! Render the instruction prompt for every turn of one dialog.
//!
//! cargo run --example render_prompts [dialog-id] [k]

use std::path::PathBuf;

use todkit::dialog::ingest_dialogs;
use todkit::prompt::{render_prompt, PromptTemplate, DEFAULT_K};
use todkit::schema::ingest_schemas;
use todkit::{DialogFormat, SchemaFormat};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let sgd = PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("data/fixtures/sgd");
    let catalog = ingest_schemas(&sgd.join("schema.json"), SchemaFormat::SgdJson)?.catalog;
    let dialogs = ingest_dialogs(&sgd, &catalog, DialogFormat::SgdJson)?.dialogs;

    let mut args = std::env::args().skip(1);
    let id = args.next().unwrap_or_else(|| "2_00001".into());
    let k = match args.next() {
        Some(k) => k.parse()?,
        None => DEFAULT_K,
    };
    let dialog = dialogs
        .iter()
        .find(|d| d.dialog_id == id)
        .ok_or_else(|| format!("no dialog `{id}`"))?;

    let template = PromptTemplate::default();
    for turn in &dialog.turns {
        println!("===== {} turn {} (template {}) =====", dialog.dialog_id, turn.index, template.version());
        println!("{}", render_prompt(&template, &catalog, dialog, turn.index, k)?);
        println!("----- target -----");
        println!("{}\n", turn.output.render());
    }
    Ok(())
}
