//! One check per acceptance criterion. Each returns a short summary on success.

use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;
use std::process::Command;
use std::sync::Arc;

use proptest::prelude::*;
use proptest::test_runner::{Config, TestCaseError, TestRunner};
use rand::seq::SliceRandom;
use rand::Rng;
use serde_json::Value;
use todkit::annotation::http::{serve, AnnotationService};
use todkit::annotation::{AnnotationStore, Criterion, StudyConfig};
use todkit::augment::{rewrite_dialog, RenameMap, Variant};
use todkit::metrics::{bleu4, evaluate, EvalOptions, EvalReport, PredictionSet};
use todkit::prompt::{render_prompt, PromptTemplate, DEFAULT_K};
use todkit::splits::{categorize, DomainCategory, SplitConfig};
use todkit::{
    parse_apicall, serialize_apicall, ApiCall, Dialog, DomainSchema, Intent, ParseStatus, SlotSpec,
    Turn, TurnOutput,
};

use super::oracle::{check_report, planted_corpus};
use super::*;

pub type Outcome = Result<String, String>;

macro_rules! ensure {
    ($cond:expr, $($msg:tt)+) => {
        let ok: bool = $cond;
        if !ok {
            return Err(format!($($msg)+));
        }
    };
}

pub fn reservation_turn3() -> Vec<(&'static str, &'static str, ApiCall)> {
    let reserve = |restaurant: &str, order: &[&str]| {
        let all = [
            ("date", "2019-03-11"),
            ("location", "San Francisco"),
            ("number_of_seats", "2"),
            ("restaurant_name", restaurant),
            ("time", "11:30"),
        ];
        let pairs: Vec<(&str, &str)> = order
            .iter()
            .map(|n| *all.iter().find(|(k, _)| k == n).unwrap())
            .collect();
        ApiCall::from_pairs("ReserveRestaurant", &pairs)
    };
    let std_order = ["date", "location", "number_of_seats", "restaurant_name", "time"];
    vec![
        (
            "gold",
            "ApiCall(method=`ReserveRestaurant', parameters= `date': `2019-03-11', `location': `San Francisco', `number_of_seats': `2',`restaurant_name': `Butterfly Restaurant', `time': `11:30' )",
            reserve("Butterfly Restaurant", &std_order),
        ),
        (
            "soloist",
            "ApiCall(method='ReserveRestaurant', parameters={`city': 'San Francisco', `date': `2019-03-11', `party_size': `2',`restaurant_name': `The Butterfly Restaurant', `time': `11:30'})",
            ApiCall::from_pairs(
                "ReserveRestaurant",
                &[
                    ("city", "San Francisco"),
                    ("date", "2019-03-11"),
                    ("party_size", "2"),
                    ("restaurant_name", "The Butterfly Restaurant"),
                    ("time", "11:30"),
                ],
            ),
        ),
        (
            "autotod",
            "ApiCall(method=`FindRestaurants',parameters=`category': `Butterfly', `location': `San Francisco')",
            ApiCall::from_pairs(
                "FindRestaurants",
                &[("category", "Butterfly"), ("location", "San Francisco")],
            ),
        ),
        (
            "gpt2-medium",
            "ApiCall(method=`ReserveRestaurant', parameters=`date': `2019-03-11', `location': `San Francisco', `number_of_seats': `2',`restaurant_name': `The Butterfly Restaurant', `time': `11:30')",
            reserve("The Butterfly Restaurant", &std_order),
        ),
        (
            "llama-3.2",
            "ApiCall(method=`ReserveRestaurant', parameters=`date': `2019-03-11', `location': `San Francisco', `number_of_seats': `2',`restaurant_name': `Butterfly Restaurant', 'time': `11:30')",
            reserve("Butterfly Restaurant", &std_order),
        ),
        (
            "flan-t5-large",
            "ApiCall(method=`ReserveRestaurant', parameters= `date': `2019-03-11', `location': `San Francisco',`restaurant_name': `Butterfly Restaurant', `number_of_seats': `2', `time': `11:30' )",
            reserve(
                "Butterfly Restaurant",
                &["date", "location", "restaurant_name", "number_of_seats", "time"],
            ),
        ),
        (
            "buses",
            "APICall(method=FindBus, parameters=origin=LA, destination=SFO })",
            ApiCall::from_pairs("FindBus", &[("origin", "LA"), ("destination", "SFO")]),
        ),
    ]
}

pub fn parser_fixtures() -> Outcome {
    let cases = reservation_turn3();
    for (label, text, want) in &cases {
        let got = parse_apicall(text);
        ensure!(
            got.call() == Some(want),
            "{label}: parsed {got:?}, expected {want}"
        );
    }
    Ok(format!("{} fixture strings", cases.len()))
}

fn call_strategy() -> impl Strategy<Value = ApiCall> {
    let text = "\\PC{0,12}";
    (
        text,
        prop::collection::vec((text, text), 0..6),
    )
        .prop_filter_map("invalid call", |(method, params)| {
            ApiCall::new(method, params).ok()
        })
}

fn fragment_soup(rng: &mut ChaCha8Rng) -> Vec<u8> {
    const PIECES: &[&str] = &[
        "ApiCall", "apicall(", "method=", "parameters=", "{", "}", "(", ")", "'", "\"", "`", "\\",
        ":", "=", ",", " ", "\n", "x", "é", "\u{1F600}",
    ];
    let n = rng.gen_range(0..24);
    let mut out = Vec::new();
    for _ in 0..n {
        if rng.gen_bool(0.2) {
            out.push(rng.gen());
        } else {
            out.extend_from_slice(PIECES.choose(rng).unwrap().as_bytes());
        }
    }
    out
}

pub fn parser_round_trip() -> Outcome {
    let mut runner = TestRunner::new(Config {
        cases: 1000,
        failure_persistence: None,
        ..Config::default()
    });
    runner
        .run(&call_strategy(), |call| {
            let text = serialize_apicall(&call);
            let back = parse_apicall(&text);
            if back.call() != Some(&call) {
                return Err(TestCaseError::fail(format!("{text:?} parsed as {back:?}")));
            }
            Ok(())
        })
        .map_err(|e| e.to_string())?;

    let mut rng = rng(0xF022);
    for i in 0..100_000 {
        let bytes: Vec<u8> = if i % 2 == 0 {
            let n = rng.gen_range(0..64);
            (0..n).map(|_| rng.gen()).collect()
        } else {
            fragment_soup(&mut rng)
        };
        let text = String::from_utf8_lossy(&bytes).into_owned();
        let outcome = std::panic::catch_unwind(|| parse_apicall(&text))
            .map_err(|_| format!("parser panicked on {text:?}"))?;
        if outcome.status() == ParseStatus::Parsed {
            let call = outcome.call().unwrap();
            ensure!(
                parse_apicall(&serialize_apicall(call)).call() == Some(call),
                "re-serialized parse of {text:?} does not round-trip"
            );
        }
    }
    Ok("1000 generated calls round-trip; 100000 random inputs parsed without panic".into())
}

/// A schema and a lexicon that renames every intent and slot.
pub fn synthetic_schema_and_lexicon() -> (DomainSchema, RenameMap) {
    let schema = DomainSchema {
        domain_id: "Travel_1".into(),
        intents: vec![
            Intent {
                name: "FindTrip".into(),
                slots: vec![
                    SlotSpec::required("from_city"),
                    SlotSpec::required("to_city"),
                    SlotSpec::optional("travel_date"),
                ],
            },
            Intent {
                name: "BookTrip".into(),
                slots: vec![
                    SlotSpec::required("trip_id"),
                    SlotSpec::required("passengers"),
                    SlotSpec::optional("seat_class"),
                ],
            },
        ],
    };
    let map: RenameMap = serde_json::from_value(serde_json::json!({
        "domain_id": "Travel_1",
        "variant_id": "Travel_9",
        "intents": {"FindTrip": "SearchJourney", "BookTrip": "ReserveJourney"},
        "slots": {
            "FindTrip": {"from_city": "departure", "to_city": "arrival", "travel_date": "day"},
            "BookTrip": {"trip_id": "journey_ref", "passengers": "party", "seat_class": "cabin"}
        }
    }))
    .unwrap();
    (schema, map)
}

pub fn synthetic_travel_corpus(rng: &mut ChaCha8Rng, n: usize, schema: &DomainSchema) -> Vec<Dialog> {
    let mut out = Vec::with_capacity(n);
    for i in 0..n {
        let mut domains = vec![schema.domain_id.clone()];
        if rng.gen_bool(0.3) {
            domains.push("Weather_1".into());
        }
        let turns = (1..=rng.gen_range(1..=8))
            .map(|t| {
                let output = if rng.gen_bool(0.4) {
                    let intent = schema.intents.choose(rng).unwrap();
                    let k = rng.gen_range(0..=intent.slots.len());
                    let params = intent
                        .slots
                        .choose_multiple(rng, k)
                        .map(|s| (s.name.clone(), sentence(rng, 1, 2)))
                        .collect::<Vec<_>>();
                    TurnOutput::call(ApiCall::new(intent.name.clone(), params).unwrap())
                } else {
                    let slot = &schema.intents.choose(rng).unwrap().slots.choose(rng).unwrap().name;
                    TurnOutput::text(format!("{} {slot}?", sentence(rng, 1, 5)))
                };
                Turn::new(t, sentence(rng, 1, 6), output).with_acts(["REQUEST"])
            })
            .collect();
        out.push(Dialog {
            dialog_id: format!("s{i:03}"),
            domains,
            turns,
        });
    }
    out
}

pub fn augmentation_inverse() -> Outcome {
    let (schema, map) = synthetic_schema_and_lexicon();
    let variant = Variant::new(&schema, &map).map_err(|e| e.to_string())?;
    let inverse = variant.inverse();
    let corpus = synthetic_travel_corpus(&mut rng(200), 200, &schema);
    let mut renamed_calls = 0;
    for rewrite_text in [false, true] {
        for d in &corpus {
            let there = rewrite_dialog(d, &variant, rewrite_text).map_err(|e| e.to_string())?;
            ensure!(there.warnings.is_empty(), "{}: {:?}", d.dialog_id, there.warnings);
            let there = there.dialog;
            ensure!(
                there.kind_sequence() == d.kind_sequence(),
                "{}: turn kinds changed",
                d.dialog_id
            );
            for (a, b) in d.turns.iter().zip(&there.turns) {
                if let (Some(x), Some(y)) = (a.output.as_call(), b.output.as_call()) {
                    let intent = map.intent_renames[x.method()].as_str();
                    ensure!(y.method() == intent, "{}: method not renamed", d.dialog_id);
                    let values: Vec<&str> = x.params().iter().map(|(_, v)| v.as_str()).collect();
                    let values2: Vec<&str> = y.params().iter().map(|(_, v)| v.as_str()).collect();
                    ensure!(values == values2, "{}: values changed", d.dialog_id);
                    renamed_calls += 1;
                }
            }
            let back = rewrite_dialog(&there, &inverse, rewrite_text)
                .map_err(|e| e.to_string())?
                .dialog;
            ensure!(&back == d, "{}: inverse rewrite differs from source", d.dialog_id);
        }
    }
    ensure!(renamed_calls > 0, "corpus contained no calls");
    Ok(format!("200 dialogs, {renamed_calls} renamed calls, both text modes"))
}

pub fn metric_oracle() -> Outcome {
    let mut r = rng(0x0AC1E);
    let mut turns = 0;
    for i in 0..25 {
        let planted = planted_corpus(&mut r, 20);
        let cfg = SplitConfig::new(planted.seen.clone()).map_err(|e| e.to_string())?;
        let report = evaluate(&planted.gold, &planted.predictions, &cfg, EvalOptions::default());
        check_report(&report, &planted).map_err(|e| format!("corpus {i}: {e}"))?;
        turns += planted.gold.iter().map(|d| d.turns.len()).sum::<usize>();
    }
    Ok(format!("25 corpora, {turns} turns"))
}

pub fn ordering_holds(report: &EvalReport) -> Result<(), String> {
    for m in &report.categories {
        let le = |a: Option<f64>, b: Option<f64>| match (a, b) {
            (Some(a), Some(b)) => a <= b,
            (None, None) => true,
            _ => false,
        };
        ensure!(
            le(m.complete_acc.value, m.method_acc.value)
                && le(m.method_acc.value, m.invoke_acc.value),
            "{}: complete {:?}, method {:?}, invoke {:?}",
            m.category,
            m.complete_acc.value,
            m.method_acc.value,
            m.invoke_acc.value
        );
        ensure!(
            le(m.param_value_acc.value, m.param_name_acc.value),
            "{}: value {:?} > name {:?}",
            m.category,
            m.param_value_acc.value,
            m.param_name_acc.value
        );
    }
    Ok(())
}

pub fn metric_ordering() -> Outcome {
    let mut r = rng(0x0DE2);
    for i in 0..100 {
        let planted = planted_corpus(&mut r, 20);
        let cfg = SplitConfig::new(planted.seen.clone()).map_err(|e| e.to_string())?;
        for mode in [
            todkit::metrics::ParamAccuracyMode::Micro,
            todkit::metrics::ParamAccuracyMode::PerCall,
        ] {
            let options = EvalOptions {
                param_accuracy_mode: mode,
            };
            let report = evaluate(&planted.gold, &planted.predictions, &cfg, options);
            ordering_holds(&report).map_err(|e| format!("corpus {i} ({mode:?}): {e}"))?;
        }
    }
    Ok("100 corpora, both parameter-accuracy modes".into())
}

/// Hand computation, tokens split on whitespace (no punctuation present):
///
/// pair 1: "the cat sat on the mat" / "the cat is on the mat"
///   1-grams 5/6 (the x2, cat, on, mat), 2-grams 3/5 (the cat, on the, the mat),
///   3-grams 1/4 (on the mat), 4-grams 0/3
/// pair 2: "a dog runs" / "a dog runs fast"
///   1-grams 3/3, 2-grams 2/2, 3-grams 1/1, 4-grams 0/0
/// corpus: p1 = 8/9, p2 = 5/7, p3 = 2/5, p4 = 0/3 -> 0.1/3 after smoothing
/// c = 9, r = 10, brevity penalty exp(1 - 10/9)
pub fn bleu_hand_value() -> f64 {
    let p: f64 = (8.0 / 9.0) * (5.0 / 7.0) * (2.0 / 5.0) * (0.1 / 3.0);
    (-1.0f64 / 9.0).exp() * p.powf(0.25)
}

pub fn bleu() -> Outcome {
    let fixture: Vec<String> = fixture_dialogs()
        .iter()
        .flat_map(|d| d.turns.iter().filter_map(|t| t.output.as_text().map(str::to_string)))
        .collect();
    let identity = bleu4(&fixture, &fixture).map_err(|e| e.to_string())?;
    ensure!((identity - 1.0).abs() <= 1e-12, "identity scored {identity}");
    for s in &fixture {
        let one = bleu4(&[s], &[s]).map_err(|e| e.to_string())?;
        ensure!((one - 1.0).abs() <= 1e-12, "identity {s:?} scored {one}");
    }

    let got = bleu4(
        &["the cat sat on the mat", "a dog runs"],
        &["the cat is on the mat", "a dog runs fast"],
    )
    .map_err(|e| e.to_string())?;
    let want = bleu_hand_value();
    ensure!((got - want).abs() <= 1e-9, "hand example {got} vs {want}");

    let mut r = rng(0xD15);
    let left = ["alpha", "beta", "gamma", "delta", "epsilon", "zeta", "eta", "theta"];
    let right = ["one", "two", "three", "four", "five", "six", "seven", "eight"];
    let make = |r: &mut ChaCha8Rng, vocab: &[&str]| -> Vec<String> {
        (0..20)
            .map(|_| {
                (0..r.gen_range(6..=12))
                    .map(|_| *vocab.choose(r).unwrap())
                    .collect::<Vec<_>>()
                    .join(" ")
            })
            .collect()
    };
    let cands = make(&mut r, &left);
    let refs = make(&mut r, &right);
    let disjoint = bleu4(&cands, &refs).map_err(|e| e.to_string())?;
    ensure!(disjoint < 0.01, "disjoint corpus scored {disjoint}");
    Ok(format!(
        "identity 1.0, hand example {got:.12} (expected {want:.12}), disjoint corpus {disjoint:.6}"
    ))
}

fn dialog_with(domains: &[&str]) -> Dialog {
    Dialog {
        dialog_id: domains.join("+"),
        domains: domains.iter().map(|d| d.to_string()).collect(),
        turns: vec![],
    }
}

pub fn categorization() -> Outcome {
    let cfg = |s: &[&str]| SplitConfig::new(s.iter().copied()).unwrap();
    let cases = [
        (&["Restaurants"][..], &["Restaurants", "Buses"][..], DomainCategory::Seen),
        (&["Alarm"], &["Restaurants"], DomainCategory::Unseen),
        (&["Restaurants", "Alarm"], &["Restaurants"], DomainCategory::Mixed),
    ];
    for (domains, seen, want) in cases {
        let got = categorize(&dialog_with(domains), &cfg(seen));
        ensure!(got == want, "{domains:?} with seen {seen:?}: {got:?}");
    }

    let mut r = rng(1000);
    let dialogs: Vec<Dialog> = (0..1000)
        .map(|i| {
            let domains = random_domains(&mut r, 4);
            Dialog {
                dialog_id: format!("c{i}"),
                domains,
                turns: vec![],
            }
        })
        .collect();
    let mut seen: Vec<String> = random_seen(&mut r);
    seen.truncate(1);
    let mut remaining: Vec<String> = DOMAINS
        .iter()
        .map(|d| d.to_string())
        .filter(|d| !seen.contains(d))
        .collect();
    remaining.shuffle(&mut r);

    let mut previous: Option<Vec<DomainCategory>> = None;
    loop {
        let config = SplitConfig::new(seen.clone()).unwrap();
        let set: BTreeSet<&String> = seen.iter().collect();
        let cats: Vec<DomainCategory> = dialogs.iter().map(|d| categorize(d, &config)).collect();
        let mut tally: BTreeMap<DomainCategory, usize> = BTreeMap::new();
        for (d, c) in dialogs.iter().zip(&cats) {
            let inside = d.domains.iter().filter(|x| set.contains(x)).count();
            let want = if inside == d.domains.len() {
                DomainCategory::Seen
            } else if inside == 0 {
                DomainCategory::Unseen
            } else {
                DomainCategory::Mixed
            };
            ensure!(*c == want, "{}: {c:?}, expected {want:?}", d.dialog_id);
            *tally.entry(*c).or_default() += 1;
        }
        ensure!(
            !tally.contains_key(&DomainCategory::All) && tally.values().sum::<usize>() == 1000,
            "categories do not partition the corpus: {tally:?}"
        );
        if let Some(prev) = &previous {
            for (i, (before, after)) in prev.iter().zip(&cats).enumerate() {
                ensure!(
                    *before != DomainCategory::Seen || *after == DomainCategory::Seen,
                    "c{i} left SEEN when the seen set grew"
                );
            }
        }
        previous = Some(cats);
        match remaining.pop() {
            Some(d) => seen.push(d),
            None => break,
        }
    }
    Ok(format!(
        "3 fixed cases; 1000 dialogs partitioned under {} nested seen sets",
        DOMAINS.len()
    ))
}

pub fn golden_path(dialog_id: &str, turn: usize) -> std::path::PathBuf {
    golden_dir().join(format!("{dialog_id}.turn{turn}.txt"))
}

pub fn prompt_goldens() -> Outcome {
    let catalog = fixture_catalog();
    let dialogs = fixture_dialogs();
    let template = PromptTemplate::default();
    let restaurants = dialogs.iter().find(|d| d.dialog_id == "1_00001").unwrap();
    for t in &restaurants.turns {
        let prompt = render_prompt(&template, &catalog, restaurants, t.index, DEFAULT_K)
            .map_err(|e| e.to_string())?;
        let path = golden_path(&restaurants.dialog_id, t.index);
        let golden = std::fs::read_to_string(&path)
            .map_err(|e| format!("{}: {e}", path.display()))?;
        ensure!(prompt == golden, "turn {} differs from {}", t.index, path.display());
    }
    let mut checked = 0;
    for d in &dialogs {
        for t in &d.turns {
            let prompt = render_prompt(&template, &catalog, d, t.index, DEFAULT_K)
                .map_err(|e| e.to_string())?;
            let target = t.output.render();
            ensure!(
                !prompt.contains(&target),
                "{} turn {}: prompt contains its target",
                d.dialog_id,
                t.index
            );
            checked += 1;
        }
    }
    Ok(format!(
        "{} golden prompts match; {checked} prompts free of their targets",
        restaurants.turns.len()
    ))
}

fn todkit_cmd(args: &[&str]) -> Result<String, String> {
    let out = Command::new(env!("CARGO_BIN_EXE_todkit"))
        .args(args)
        .output()
        .map_err(|e| e.to_string())?;
    if !out.status.success() {
        return Err(format!(
            "todkit {}: {}\n{}",
            args.join(" "),
            out.status,
            String::from_utf8_lossy(&out.stderr)
        ));
    }
    Ok(String::from_utf8_lossy(&out.stdout).into_owned())
}

fn all_perfect(report: &Value) -> Result<(), String> {
    for cat in report["categories"].as_array().ok_or("no categories")? {
        let name = cat["category"].as_str().unwrap_or("?");
        for key in ["invoke_acc", "method_acc", "param_name_acc", "param_value_acc", "complete_acc"] {
            let v = &cat[key]["value"];
            ensure!(v.is_null() || v.as_f64() == Some(1.0), "{name} {key} = {v}");
        }
        let fi = &cat["false_invoke_rate"]["value"];
        ensure!(fi.is_null() || fi.as_f64() == Some(0.0), "{name} false invoke rate = {fi}");
        for key in ["bleu4_overall", "bleu4_inform", "bleu4_request"] {
            let v = &cat[key]["score"];
            ensure!(
                v.is_null() || (v.as_f64().unwrap() - 1.0).abs() < 1e-12,
                "{name} {key} = {v}"
            );
        }
    }
    let all = &report["categories"][0];
    ensure!(
        all["invoke_acc"]["denominator"].as_u64().unwrap_or(0) > 0
            && all["bleu4_overall"]["turns"].as_u64().unwrap_or(0) > 0,
        "nothing was scored"
    );
    Ok(())
}

pub fn end_to_end(work: &Path) -> Outcome {
    let f = fixtures();
    let p = |x: &Path| x.to_string_lossy().into_owned();
    let corpus = work.join("corpus");
    let aug = work.join("aug");
    todkit_cmd(&[
        "ingest", "--format", "sgd",
        "--schemas", &p(&f.join("sgd/schema.json")),
        "--dialogs", &p(&f.join("sgd")),
        "--out", &p(&corpus),
    ])?;
    todkit_cmd(&[
        "augment",
        "--schemas", &p(&corpus.join("schemas.json")),
        "--dialogs", &p(&corpus.join("dialogs.jsonl")),
        "--lexicon", &p(&f.join("lexicons/buses_11.json")),
        "--out", &p(&aug),
    ])?;

    let mut all_dialogs = std::fs::read_to_string(corpus.join("dialogs.jsonl")).unwrap();
    all_dialogs.push_str(&std::fs::read_to_string(aug.join("dialogs.jsonl")).unwrap());
    let combined = work.join("combined.jsonl");
    std::fs::write(&combined, &all_dialogs).unwrap();

    todkit_cmd(&[
        "render",
        "--schemas", &p(&corpus.join("schemas.json")),
        "--schemas", &p(&aug.join("variant_schemas.json")),
        "--dialogs", &p(&combined),
        "--out", &p(&work.join("pairs.jsonl")),
    ])?;
    let pairs = std::fs::read_to_string(work.join("pairs.jsonl")).unwrap();

    let gold = todkit::dialog::parse_dialogs(&all_dialogs, todkit::DialogFormat::NativeJsonl)
        .map_err(|e| e.to_string())?;
    let turns: usize = gold.iter().map(|d| d.turns.len()).sum();
    ensure!(pairs.lines().count() == turns, "{} pairs for {turns} turns", pairs.lines().count());
    let preds = work.join("gold-echo.jsonl");
    std::fs::write(&preds, PredictionSet::from_gold("gold-echo", &gold).to_jsonl()).unwrap();

    let seen = ["Buses_1", "Restaurants_1"];
    let seen_path = work.join("seen.json");
    std::fs::write(&seen_path, serde_json::to_string(&seen).unwrap()).unwrap();
    let report_path = work.join("report.json");
    let table = todkit_cmd(&[
        "evaluate",
        "--gold", &p(&combined),
        "--predictions", &p(&preds),
        "--seen", &p(&seen_path),
        "--out", &p(&report_path),
    ])?;
    ensure!(table.contains("Model: gold-echo"), "table missing model section");
    let reports: Value =
        serde_json::from_str(&std::fs::read_to_string(&report_path).unwrap()).unwrap();
    all_perfect(&reports[0])?;
    Ok(format!("{} dialogs ({} augmented), {turns} turns, all metrics 1.0", gold.len(), gold.len() - 10))
}

fn leak_check(body: &str, models: &[String]) -> Result<(), String> {
    for m in models {
        ensure!(!body.contains(m.as_str()), "model id `{m}` leaked in {body}");
    }
    Ok(())
}

fn population_moments(xs: &[u8]) -> (f64, f64) {
    let n = xs.len() as f64;
    let mean = xs.iter().map(|&x| x as f64).sum::<f64>() / n;
    let var = xs.iter().map(|&x| (x as f64 - mean) * (x as f64 - mean)).sum::<f64>() / n;
    (mean, var)
}

pub struct RunningServer {
    pub base: String,
    pub service: Arc<AnnotationService>,
    stop: tokio::sync::oneshot::Sender<()>,
    handle: tokio::task::JoinHandle<std::io::Result<()>>,
}

impl RunningServer {
    pub async fn start(service: AnnotationService) -> RunningServer {
        let listener = tokio::net::TcpListener::bind("127.0.0.1:0").await.unwrap();
        let base = format!("http://{}", listener.local_addr().unwrap());
        let service = Arc::new(service);
        let (stop, rx) = tokio::sync::oneshot::channel::<()>();
        let handle = tokio::spawn(serve(listener, service.clone(), async move {
            let _ = rx.await;
        }));
        RunningServer {
            base,
            service,
            stop,
            handle,
        }
    }

    pub async fn stop(self) {
        let _ = self.stop.send(());
        self.handle.await.unwrap().unwrap();
    }
}

/// Six-item study corpus: single-domain and multi-domain fixture dialogs, plus
/// two prediction sets derived from gold.
pub fn study_inputs() -> (Vec<Dialog>, Vec<PredictionSet>, Vec<String>) {
    let corpus = fixture_dialogs();
    let models = vec!["soloist".to_string(), "flan-t5-large".to_string()];
    let mut preds = Vec::new();
    for (i, m) in models.iter().enumerate() {
        let mut set = PredictionSet::from_gold(m.clone(), &corpus);
        for v in set.entries.values_mut() {
            if i == 1 {
                *v = v.to_lowercase();
            }
        }
        preds.push(set);
    }
    (corpus, preds, models)
}

pub async fn annotation_service_async(data_dir: &Path) -> Outcome {
    let (corpus, preds, models) = study_inputs();
    let client = reqwest::Client::new();
    let server = RunningServer::start(AnnotationService::new(
        AnnotationStore::open(data_dir).map_err(|e| e.to_string())?,
        corpus.clone(),
        preds.clone(),
    ))
    .await;
    let base = server.base.clone();
    let mut payloads: Vec<String> = Vec::new();

    let get = |url: String| {
        let client = client.clone();
        async move {
            let r = client.get(url).send().await.map_err(|e| e.to_string())?;
            let status = r.status();
            let body = r.text().await.map_err(|e| e.to_string())?;
            Ok::<_, String>((status.as_u16(), body))
        }
    };
    let post = |url: String, body: Value| {
        let client = client.clone();
        async move {
            let r = client.post(url).json(&body).send().await.map_err(|e| e.to_string())?;
            let status = r.status();
            let body = r.text().await.map_err(|e| e.to_string())?;
            Ok::<_, String>((status.as_u16(), body))
        }
    };

    let (status, body) = get(format!("{base}/health")).await?;
    ensure!(status == 200 && body.contains(env!("CARGO_PKG_VERSION")), "health: {body}");
    payloads.push(body);
    let (status, body) = get(format!("{base}/instructions")).await?;
    ensure!(status == 200 && body.contains("TASK_COMPLETION"), "instructions: {status}");
    payloads.push(body);

    let config = StudyConfig {
        single_domain: 2,
        multi_domain: 1,
        models: models.clone(),
        criteria: Criterion::ALL.to_vec(),
        seed: 11,
    };
    let (status, body) = post(format!("{base}/studies"), serde_json::to_value(&config).unwrap()).await?;
    ensure!(status == 200, "create study: {status} {body}");
    let study_id = serde_json::from_str::<Value>(&body).unwrap()["study_id"]
        .as_str()
        .unwrap()
        .to_string();
    payloads.push(body);

    let (status, body) = post(format!("{base}/studies/{study_id}/sessions"), Value::Null).await?;
    ensure!(status == 200, "create session: {status} {body}");
    let session_id = serde_json::from_str::<Value>(&body).unwrap()["session_id"]
        .as_str()
        .unwrap()
        .to_string();
    payloads.push(body);

    let mut items = Vec::new();
    loop {
        let (status, body) = get(format!("{base}/studies/{study_id}/sessions/{session_id}/next")).await?;
        ensure!(status == 200, "next: {status} {body}");
        let v: Value = serde_json::from_str(&body).unwrap();
        payloads.push(body);
        match v["status"].as_str() {
            Some("ITEM") => items.push(v["item"].clone()),
            Some("DONE") => break,
            other => return Err(format!("unexpected status {other:?}")),
        }
        ensure!(items.len() <= 6, "more than 6 items served");
    }
    ensure!(items.len() == 6, "{} items served", items.len());
    let distinct: BTreeSet<&str> = items.iter().map(|i| i["item_id"].as_str().unwrap()).collect();
    ensure!(distinct.len() == 6, "items repeated");

    // Known ratings; the last submission per (item, criterion) is the one that counts.
    let item_model: BTreeMap<String, String> = server
        .service
        .store
        .study_items(&study_id)
        .map_err(|e| e.to_string())?
        .into_iter()
        .map(|i| (i.item_id, i.model_id))
        .collect();
    let mut expected: BTreeMap<(String, Criterion), Vec<u8>> = BTreeMap::new();
    for (n, item) in items.iter().enumerate() {
        let item_id = item["item_id"].as_str().unwrap();
        for (c, criterion) in Criterion::ALL.iter().enumerate() {
            let score = ((n * 3 + c * 2) % 5 + 1) as u8;
            for s in [6 - score, score] {
                let record = serde_json::json!({
                    "session_id": session_id,
                    "item_id": item_id,
                    "blinded_alias": item["alias"],
                    "criterion": criterion,
                    "score": s,
                });
                let (status, body) = post(format!("{base}/ratings"), record).await?;
                ensure!(status == 200, "rating: {status} {body}");
                payloads.push(body);
            }
            expected
                .entry((item_model[item_id].clone(), *criterion))
                .or_default()
                .push(score);
        }
    }
    let bad = serde_json::json!({
        "session_id": session_id, "item_id": items[0]["item_id"],
        "blinded_alias": items[0]["alias"], "criterion": "FLUENCY", "score": 6,
    });
    let (status, body) = post(format!("{base}/ratings"), bad).await?;
    ensure!(status == 422 && body.contains("INVALID_SCORE"), "score 6: {status} {body}");
    payloads.push(body);
    let (status, body) = get(format!("{base}/studies/nope/report")).await?;
    ensure!(status == 404 && body.contains("UNKNOWN_STUDY"), "unknown study: {status} {body}");
    payloads.push(body);

    for body in &payloads {
        leak_check(body, &models)?;
    }

    let (status, report_body) = get(format!("{base}/studies/{study_id}/report")).await?;
    ensure!(status == 200, "report: {status}");
    let report: Value = serde_json::from_str(&report_body).unwrap();
    ensure!(report["total_ratings"] == 18, "total ratings {}", report["total_ratings"]);
    for cell in report["cells"].as_array().unwrap() {
        let model = cell["model_id"].as_str().unwrap().to_string();
        let criterion: Criterion = serde_json::from_value(cell["criterion"].clone()).unwrap();
        let scores = &expected[&(model.clone(), criterion)];
        let (mean, var) = population_moments(scores);
        let got_mean = cell["mean"].as_f64().unwrap();
        let got_var = cell["variance"].as_f64().unwrap();
        ensure!(
            cell["count"] == scores.len() && (got_mean - mean).abs() <= 1e-12 && (got_var - var).abs() <= 1e-12,
            "{model}/{criterion:?}: got ({got_mean}, {got_var}), oracle ({mean}, {var})"
        );
    }
    server.stop().await;

    let restarted = RunningServer::start(AnnotationService::new(
        AnnotationStore::open(data_dir).map_err(|e| e.to_string())?,
        corpus,
        preds,
    ))
    .await;
    let (status, after) = get(format!("{}/studies/{study_id}/report", restarted.base)).await?;
    ensure!(status == 200 && after == report_body, "report changed across restart");
    let (_, body) = get(format!(
        "{}/studies/{study_id}/sessions/{session_id}/next",
        restarted.base
    ))
    .await?;
    ensure!(body.contains("\"DONE\""), "session cursor lost across restart: {body}");
    restarted.stop().await;
    Ok(format!("6 items, {} payloads leak-free, 18 ratings, report stable across restart", payloads.len()))
}

pub fn annotation_service(data_dir: &Path) -> Outcome {
    tokio::runtime::Runtime::new()
        .map_err(|e| e.to_string())?
        .block_on(annotation_service_async(data_dir))
}
