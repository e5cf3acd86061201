//! Score two synthetic prediction sets over the fixture corpus and print the report table.
//!
//! cargo run --example evaluate_predictions

use std::path::PathBuf;

use todkit::dialog::ingest_dialogs;
use todkit::metrics::{evaluate, render_table, EvalOptions, PredictionSet, TurnKey};
use todkit::schema::ingest_schemas;
use todkit::splits::SplitConfig;
use todkit::{serialize_apicall, ApiCall, DialogFormat, SchemaFormat, TurnOutput};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let data = PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("data/fixtures");
    let catalog = ingest_schemas(&data.join("sgd/schema.json"), SchemaFormat::SgdJson)?.catalog;
    let gold = ingest_dialogs(&data.join("sgd"), &catalog, DialogFormat::SgdJson)?.dialogs;
    let seen = SplitConfig::load(&data.join("seen.json"))?;

    let echo = PredictionSet::from_gold("gold-echo", &gold);

    // Drops the last parameter of every call and answers text turns generically.
    let mut sloppy = PredictionSet::new("sloppy");
    for d in &gold {
        for t in &d.turns {
            let text = match &t.output {
                TurnOutput::ApiCall { call } => {
                    let mut params = call.params().to_vec();
                    params.pop();
                    serialize_apicall(&ApiCall::new(call.method(), params)?)
                }
                TurnOutput::Text { .. } => "Is there anything else I can help with?".to_string(),
            };
            sloppy.insert(TurnKey::new(&d.dialog_id, t.index), text)?;
        }
    }

    let reports: Vec<_> = [echo, sloppy]
        .iter()
        .map(|p| evaluate(&gold, p, &seen, EvalOptions::default()))
        .collect();
    print!("{}", render_table(&reports));
    Ok(())
}
