#![allow(dead_code)]

pub mod criteria;

use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use todkit::dialog::{ingest_dialogs, DialogFormat};
use todkit::schema::{ingest_schemas, SchemaFormat};
use todkit::{ApiCall, Dialog, SchemaCatalog, Turn, TurnOutput};

pub fn manifest_dir() -> &'static Path {
    Path::new(env!("CARGO_MANIFEST_DIR"))
}

pub fn fixtures() -> PathBuf {
    manifest_dir().join("data/fixtures")
}

pub fn golden_dir() -> PathBuf {
    manifest_dir().join("tests/golden")
}

pub fn fixture_catalog() -> SchemaCatalog {
    ingest_schemas(&fixtures().join("sgd/schema.json"), SchemaFormat::SgdJson)
        .unwrap()
        .catalog
}

pub fn fixture_dialogs() -> Vec<Dialog> {
    let catalog = fixture_catalog();
    let ingest = ingest_dialogs(&fixtures().join("sgd"), &catalog, DialogFormat::SgdJson).unwrap();
    assert!(ingest.warnings.is_empty(), "{:?}", ingest.warnings);
    ingest.dialogs
}

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub const WORDS: &[&str] = &[
    "table", "tonight", "please", "book", "seven", "city", "downtown", "cheap", "bus", "hotel",
    "friday", "two", "people", "morning", "thanks", "yes", "no", "maybe", "near", "station",
];

pub fn sentence(rng: &mut ChaCha8Rng, min: usize, max: usize) -> String {
    let n = rng.gen_range(min..=max);
    (0..n)
        .map(|_| *WORDS.choose(rng).unwrap())
        .collect::<Vec<_>>()
        .join(" ")
}

pub const METHODS: &[&str] = &["FindBus", "ReserveRestaurant", "SearchHotel", "GetWeather", "BuyTicket"];
pub const PARAM_NAMES: &[&str] = &[
    "date", "time", "location", "origin", "destination", "number_of_seats", "restaurant_name",
    "travelers", "city",
];

pub fn random_call(rng: &mut ChaCha8Rng) -> ApiCall {
    let n = rng.gen_range(0..=5);
    let names: Vec<&str> = PARAM_NAMES.choose_multiple(rng, n).copied().collect();
    let params = names
        .into_iter()
        .map(|name| (name.to_string(), sentence(rng, 1, 3)))
        .collect::<Vec<_>>();
    ApiCall::new(*METHODS.choose(rng).unwrap(), params).unwrap()
}

pub const ACTS: &[&str] = &["INFORM", "REQUEST", "INFORM_COUNT", "REQUEST_ALTS", "OFFER", "CONFIRM", "GOODBYE"];

pub fn random_dialog(rng: &mut ChaCha8Rng, id: String, domains: Vec<String>) -> Dialog {
    let n = rng.gen_range(1..=8);
    let turns = (1..=n)
        .map(|i| {
            let output = if rng.gen_bool(0.35) {
                TurnOutput::call(random_call(rng))
            } else {
                TurnOutput::text(sentence(rng, 2, 10))
            };
            let k = rng.gen_range(0..=2);
            let acts: Vec<&str> = ACTS.choose_multiple(rng, k).copied().collect();
            Turn::new(i, sentence(rng, 1, 8), output).with_acts(acts)
        })
        .collect();
    Dialog {
        dialog_id: id,
        domains,
        turns,
    }
}

pub const DOMAINS: &[&str] = &["Alarm_1", "Buses_1", "Hotels_2", "Movies_1", "Restaurants_1", "Weather_1"];

pub fn random_domains(rng: &mut ChaCha8Rng, max: usize) -> Vec<String> {
    let n = rng.gen_range(1..=max);
    DOMAINS
        .choose_multiple(rng, n)
        .map(|d| d.to_string())
        .collect()
}

pub fn random_seen(rng: &mut ChaCha8Rng) -> Vec<String> {
    let n = rng.gen_range(1..=DOMAINS.len() - 1);
    DOMAINS
        .choose_multiple(rng, n)
        .map(|d| d.to_string())
        .collect()
}
