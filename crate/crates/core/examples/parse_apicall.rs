//! Parse model outputs in the `ApiCall(...)` surface form and score one against gold.
//!
//! cargo run --example parse_apicall

use todkit::metrics::score_api_turn;
use todkit::{parse_apicall, serialize_apicall, ApiCall};

fn main() {
    let gold = ApiCall::from_pairs(
        "ReserveRestaurant",
        &[("restaurant_name", "Tamarind"), ("location", "San Jose"), ("time", "6 pm")],
    );
    println!("gold:      {}", serialize_apicall(&gold));

    let outputs = [
        "ApiCall(method='reserverestaurant', parameters={'restaurant_name': 'tamarind', 'location': 'San Jose', 'time': '6 pm'})",
        "Sure! APICall(method=ReserveRestaurant, parameters=restaurant_name=Tamarind, city=San Jose })",
        "ApiCall(method='ReserveRestaurant', parameters={'time': '6 pm'",
        "Which city are you in?",
    ];
    for text in outputs {
        let parsed = parse_apicall(text);
        println!("\n{text}");
        println!("  status:  {:?}", parsed.status());
        if let Some(d) = parsed.diagnostic() {
            println!("  why:     {d}");
        }
        let s = score_api_turn(&gold, text);
        println!(
            "  score:   invoked={} method={} names={}/{} values={}/{} spurious={} complete={}",
            s.invoked, s.method_correct, s.name_hits, s.gold_param_count, s.value_hits,
            s.gold_param_count, s.spurious_params, s.complete
        );
    }
}
