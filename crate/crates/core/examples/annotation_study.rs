//! Run a small blind rating study against the HTTP service on a free local port.
//!
//! cargo run --example annotation_study

use std::path::PathBuf;
use std::sync::Arc;

use todkit::annotation::http::{serve, AnnotationService};
use todkit::annotation::{AnnotationStore, Criterion, NextItem, RatingRecord, StudyConfig};
use todkit::dialog::ingest_dialogs;
use todkit::metrics::PredictionSet;
use todkit::schema::ingest_schemas;
use todkit::{DialogFormat, SchemaFormat};

#[tokio::main]
async fn main() -> Result<(), Box<dyn std::error::Error>> {
    let sgd = PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("data/fixtures/sgd");
    let catalog = ingest_schemas(&sgd.join("schema.json"), SchemaFormat::SgdJson)?.catalog;
    let corpus = ingest_dialogs(&sgd, &catalog, DialogFormat::SgdJson)?.dialogs;
    let mut shouty = PredictionSet::from_gold("shouty", &corpus);
    shouty.entries.values_mut().for_each(|v| *v = v.to_uppercase());
    let predictions = vec![PredictionSet::from_gold("reference", &corpus), shouty];

    let store = AnnotationStore::in_memory();
    let config = StudyConfig {
        single_domain: 2,
        multi_domain: 1,
        models: vec!["reference".into(), "shouty".into()],
        criteria: Criterion::ALL.to_vec(),
        seed: 7,
    };
    let study = store.create_study(&config, &corpus, &predictions)?;
    let service = Arc::new(AnnotationService::new(store, corpus, predictions));

    let listener = tokio::net::TcpListener::bind("127.0.0.1:0").await?;
    let base = format!("http://{}", listener.local_addr()?);
    let (stop, stopped) = tokio::sync::oneshot::channel::<()>();
    let server = tokio::spawn(serve(listener, service, async {
        let _ = stopped.await;
    }));
    println!("study {study} at {base}");

    let client = reqwest::Client::new();
    let session: serde_json::Value = client
        .post(format!("{base}/studies/{study}/sessions"))
        .send()
        .await?
        .json()
        .await?;
    let session_id = session["session_id"].as_str().ok_or("no session id")?.to_string();

    loop {
        let next: NextItem = client
            .get(format!("{base}/studies/{study}/sessions/{session_id}/next"))
            .send()
            .await?
            .json()
            .await?;
        let NextItem::Item { item } = next else { break };
        // The stand-in annotator marks down anything written in capitals.
        let loud = item.transcript.iter().any(|t| t.response.len() > 3 && t.response == t.response.to_uppercase());
        for criterion in &item.criteria {
            let score = if loud { 2 } else { 5 };
            let record = RatingRecord {
                session_id: session_id.clone(),
                item_id: item.item_id.clone(),
                blinded_alias: item.alias.clone(),
                criterion: *criterion,
                score,
                comment: None,
                timestamp: None,
            };
            client.post(format!("{base}/ratings")).json(&record).send().await?.error_for_status()?;
        }
        println!("rated {} ({}) {}/{}", item.item_id, item.alias, item.progress.done + 1, item.progress.total);
    }

    let report: serde_json::Value = client
        .get(format!("{base}/studies/{study}/report"))
        .send()
        .await?
        .json()
        .await?;
    println!("{}", serde_json::to_string_pretty(&report)?);

    let _ = stop.send(());
    server.await??;
    Ok(())
}
