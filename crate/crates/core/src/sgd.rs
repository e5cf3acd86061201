//! Readers for SGD-style schema and dialog files (KETOD shares the dialog layout
//! and adds enriched system responses).

use std::collections::HashSet;

use serde::Deserialize;
use serde_json::{Map, Value};

use crate::apicall::ApiCall;
use crate::dialog::{Dialog, Turn, TurnOutput};
use crate::error::{Error, Result};
use crate::schema::{DomainSchema, Intent, SlotSpec, Warning};

#[derive(Deserialize)]
struct SgdService {
    service_name: String,
    #[serde(default)]
    slots: Vec<SgdSlot>,
    #[serde(default)]
    intents: Vec<SgdIntent>,
}

#[derive(Deserialize)]
struct SgdSlot {
    name: String,
}

#[derive(Deserialize)]
struct SgdIntent {
    name: String,
    #[serde(default)]
    required_slots: Vec<String>,
    #[serde(default)]
    optional_slots: OptionalSlots,
}

/// SGD stores optional slots as `{name: default}`; some exports use a plain list.
#[derive(Deserialize)]
#[serde(untagged)]
enum OptionalSlots {
    Map(Map<String, Value>),
    List(Vec<String>),
}

impl Default for OptionalSlots {
    fn default() -> Self {
        OptionalSlots::List(Vec::new())
    }
}

impl OptionalSlots {
    fn names(&self) -> Vec<String> {
        match self {
            OptionalSlots::Map(m) => m.keys().cloned().collect(),
            OptionalSlots::List(l) => l.clone(),
        }
    }
}

pub(crate) fn schemas_from_sgd(text: &str) -> Result<(Vec<DomainSchema>, Vec<Warning>)> {
    let services: Vec<SgdService> =
        serde_json::from_str(text).map_err(|e| Error::malformed("", e))?;
    let mut warnings = Vec::new();
    let mut schemas = Vec::with_capacity(services.len());
    for service in services {
        let mut used = HashSet::new();
        let intents = service
            .intents
            .into_iter()
            .map(|intent| {
                let mut slots: Vec<SlotSpec> = Vec::new();
                for name in &intent.required_slots {
                    if !slots.iter().any(|s| &s.name == name) {
                        slots.push(SlotSpec::required(name.clone()));
                    }
                }
                for name in intent.optional_slots.names() {
                    if !slots.iter().any(|s| s.name == name) {
                        slots.push(SlotSpec::optional(name));
                    }
                }
                used.extend(slots.iter().map(|s| s.name.clone()));
                Intent {
                    name: intent.name,
                    slots,
                }
            })
            .collect();
        for slot in &service.slots {
            if !used.contains(&slot.name) {
                warnings.push(Warning::new(
                    &service.service_name,
                    format!("slot `{}` belongs to no intent; dropped", slot.name),
                ));
            }
        }
        schemas.push(DomainSchema {
            domain_id: service.service_name,
            intents,
        });
    }
    Ok((schemas, warnings))
}

#[derive(Deserialize)]
struct SgdDialog {
    dialogue_id: String,
    #[serde(default)]
    services: Vec<String>,
    #[serde(default)]
    turns: Vec<SgdTurn>,
}

#[derive(Deserialize)]
struct SgdTurn {
    speaker: String,
    #[serde(default)]
    utterance: String,
    #[serde(default)]
    frames: Vec<SgdFrame>,
    #[serde(default)]
    enrich: Option<bool>,
    #[serde(default)]
    enriched_response: Option<String>,
}

#[derive(Deserialize)]
struct SgdFrame {
    #[serde(default)]
    service: Option<String>,
    #[serde(default)]
    actions: Vec<SgdAction>,
    #[serde(default)]
    service_call: Option<SgdServiceCall>,
    #[serde(default)]
    service_results: Option<Value>,
}

#[derive(Deserialize)]
struct SgdAction {
    act: String,
}

#[derive(Deserialize)]
struct SgdServiceCall {
    method: String,
    #[serde(default)]
    parameters: Map<String, Value>,
}

fn add_domain(d: &str, domains: &mut Vec<String>) {
    if !domains.iter().any(|x| x == d) {
        domains.push(d.to_string());
    }
}

fn value_to_string(v: Value) -> String {
    match v {
        Value::String(s) => s,
        other => other.to_string(),
    }
}

pub(crate) fn dialogs_from_sgd(text: &str, ketod: bool) -> Result<Vec<Dialog>> {
    let raw: Vec<SgdDialog> = serde_json::from_str(text).map_err(|e| Error::malformed("", e))?;
    raw.into_iter().map(|d| convert_dialog(d, ketod)).collect()
}

fn convert_dialog(raw: SgdDialog, ketod: bool) -> Result<Dialog> {
    let mut domains: Vec<String> = Vec::new();
    for s in &raw.services {
        add_domain(s, &mut domains);
    }

    let mut turns: Vec<Turn> = Vec::new();
    let mut pending_user: Option<String> = None;
    for turn in raw.turns {
        for frame in &turn.frames {
            if let Some(service) = &frame.service {
                add_domain(service, &mut domains);
            }
        }
        if turn.speaker.eq_ignore_ascii_case("USER") {
            pending_user = Some(match pending_user.take() {
                Some(prev) => format!("{prev} {}", turn.utterance),
                None => turn.utterance,
            });
            continue;
        }
        if !turn.speaker.eq_ignore_ascii_case("SYSTEM") {
            return Err(Error::malformed(
                "",
                format!("{}: unknown speaker `{}`", raw.dialogue_id, turn.speaker),
            ));
        }

        let mut user = pending_user.take().unwrap_or_default();
        let mut acts: Vec<String> = Vec::new();
        let mut results: Vec<Value> = Vec::new();
        for frame in turn.frames {
            for action in frame.actions {
                if !acts.contains(&action.act) {
                    acts.push(action.act);
                }
            }
            if let Some(call) = frame.service_call {
                let call = ApiCall::new(
                    call.method,
                    call.parameters
                        .into_iter()
                        .map(|(k, v)| (k, value_to_string(v))),
                )
                .map_err(|e| Error::malformed("", format!("{}: {e}", raw.dialogue_id)))?;
                turns.push(Turn::new(
                    turns.len() + 1,
                    std::mem::take(&mut user),
                    TurnOutput::call(call),
                ));
            }
            if let Some(r) = frame.service_results {
                results.push(r);
            }
        }

        let text = match (ketod, turn.enriched_response, turn.enrich) {
            (true, Some(enriched), enrich) if !enriched.trim().is_empty() && enrich != Some(false) => {
                enriched
            }
            _ => turn.utterance,
        };
        let mut out = Turn::new(turns.len() + 1, user, TurnOutput::text(text)).with_acts(acts);
        if !results.is_empty() {
            let payload = if results.len() == 1 {
                results.pop().expect("one result")
            } else {
                Value::Array(results)
            };
            out.search_results = Some(payload.to_string());
        }
        turns.push(out);
    }

    Ok(Dialog {
        dialog_id: raw.dialogue_id,
        domains,
        turns,
    })
}
