//! Schema variants built from rename lexicons, and dialog rewriting against them.
//!
//! A [`RenameMap`] renames intents and slots of one domain and gives the renamed
//! schema a new domain id (`variant_id`). Rewriting a dialog substitutes names in
//! its API calls (and optionally in utterance text); values, acts and the turn
//! structure are left alone.

use std::collections::{BTreeMap, HashMap, HashSet};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::apicall::ApiCall;
use crate::dialog::{Dialog, TurnOutput};
use crate::error::{Error, Result};
use crate::schema::{DomainSchema, Intent, SchemaCatalog, SlotSpec, Warning};

#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct RenameMap {
    pub domain_id: String,
    pub variant_id: String,
    /// Old intent name to new intent name.
    #[serde(rename = "intents", default)]
    pub intent_renames: BTreeMap<String, String>,
    /// Old intent name to (old slot name to new slot name).
    #[serde(rename = "slots", default)]
    pub slot_renames: BTreeMap<String, BTreeMap<String, String>>,
}

impl RenameMap {
    pub fn identity(domain_id: impl Into<String>) -> Self {
        let domain_id = domain_id.into();
        RenameMap {
            variant_id: domain_id.clone(),
            domain_id,
            ..Default::default()
        }
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        serde_json::from_str(&text).map_err(|e| Error::malformed(path, e))
    }

    pub fn is_empty(&self) -> bool {
        self.intent_renames.is_empty() && self.slot_renames.values().all(BTreeMap::is_empty)
    }

    fn new_intent_name<'a>(&'a self, old: &'a str) -> &'a str {
        self.intent_renames.get(old).map_or(old, String::as_str)
    }

    fn new_slot_name<'a>(&'a self, intent: &str, old: &'a str) -> &'a str {
        self.slot_renames
            .get(intent)
            .and_then(|m| m.get(old))
            .map_or(old, String::as_str)
    }

    /// Splits off rename keys that do not resolve in `schema`.
    pub fn prune_unknown(&self, schema: &DomainSchema) -> (RenameMap, Vec<Warning>) {
        let scope = format!("lexicon {}", self.variant_id);
        let mut warnings = Vec::new();
        let mut pruned = self.clone();
        pruned.intent_renames.retain(|old, _| {
            let known = schema.intent(old).is_some();
            if !known {
                warnings.push(Warning::new(&scope, format!("unknown intent `{old}`")));
            }
            known
        });
        pruned.slot_renames.retain(|intent, slots| {
            let Some(def) = schema.intent(intent) else {
                warnings.push(Warning::new(&scope, format!("unknown intent `{intent}`")));
                return false;
            };
            slots.retain(|old, _| {
                let known = def.slot(old).is_some();
                if !known {
                    warnings.push(Warning::new(
                        &scope,
                        format!("unknown slot `{old}` of `{intent}`"),
                    ));
                }
                known
            });
            true
        });
        (pruned, warnings)
    }
}

/// Applies a rename map to a schema. Unmentioned names pass through; the result is
/// keyed by the map's `variant_id`.
pub fn make_variant(schema: &DomainSchema, renames: &RenameMap) -> Result<DomainSchema> {
    if renames.domain_id != schema.domain_id {
        return Err(Error::UnknownName {
            scope: "lexicon".into(),
            name: renames.domain_id.clone(),
        });
    }
    for old in renames.intent_renames.keys() {
        if schema.intent(old).is_none() {
            return Err(Error::UnknownName {
                scope: format!("intents of {}", schema.domain_id),
                name: old.clone(),
            });
        }
    }
    for (intent, slots) in &renames.slot_renames {
        let def = schema.intent(intent).ok_or_else(|| Error::UnknownName {
            scope: format!("intents of {}", schema.domain_id),
            name: intent.clone(),
        })?;
        for old in slots.keys() {
            if def.slot(old).is_none() {
                return Err(Error::UnknownName {
                    scope: format!("slots of {intent}"),
                    name: old.clone(),
                });
            }
        }
    }

    let mut intent_names = HashSet::new();
    let mut intents = Vec::with_capacity(schema.intents.len());
    for intent in &schema.intents {
        let name = renames.new_intent_name(&intent.name).to_string();
        if !intent_names.insert(name.clone()) {
            return Err(Error::Collision {
                scope: format!("intents of {}", renames.variant_id),
                name,
            });
        }
        let mut slot_names = HashSet::new();
        let mut slots = Vec::with_capacity(intent.slots.len());
        for slot in &intent.slots {
            let slot_name = renames.new_slot_name(&intent.name, &slot.name).to_string();
            if !slot_names.insert(slot_name.clone()) {
                return Err(Error::Collision {
                    scope: format!("slots of {name}"),
                    name: slot_name,
                });
            }
            slots.push(SlotSpec {
                name: slot_name,
                is_required: slot.is_required,
            });
        }
        intents.push(Intent { name, slots });
    }
    let variant = DomainSchema {
        domain_id: renames.variant_id.clone(),
        intents,
    };
    variant.validate()?;
    Ok(variant)
}

/// A validated rename map together with its source and renamed schemas.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Variant {
    source: DomainSchema,
    renamed: DomainSchema,
    renames: RenameMap,
}

impl Variant {
    pub fn new(source: &DomainSchema, renames: &RenameMap) -> Result<Self> {
        Ok(Variant {
            renamed: make_variant(source, renames)?,
            source: source.clone(),
            renames: renames.clone(),
        })
    }

    pub fn source(&self) -> &DomainSchema {
        &self.source
    }

    pub fn schema(&self) -> &DomainSchema {
        &self.renamed
    }

    pub fn renames(&self) -> &RenameMap {
        &self.renames
    }

    /// The map that undoes this one. Exists because [`make_variant`] rejects
    /// non-injective maps.
    pub fn inverse(&self) -> Variant {
        let r = &self.renames;
        let intent_renames = r
            .intent_renames
            .iter()
            .map(|(old, new)| (new.clone(), old.clone()))
            .collect();
        let slot_renames = r
            .slot_renames
            .iter()
            .map(|(intent, slots)| {
                let inverted = slots
                    .iter()
                    .map(|(old, new)| (new.clone(), old.clone()))
                    .collect();
                (r.new_intent_name(intent).to_string(), inverted)
            })
            .collect();
        Variant {
            source: self.renamed.clone(),
            renamed: self.source.clone(),
            renames: RenameMap {
                domain_id: r.variant_id.clone(),
                variant_id: r.domain_id.clone(),
                intent_renames,
                slot_renames,
            },
        }
    }
}

#[derive(Debug, Clone)]
pub struct Rewritten {
    pub dialog: Dialog,
    pub warnings: Vec<Warning>,
}

/// Rewrites every reference to the variant's source domain.
pub fn rewrite_dialog(dialog: &Dialog, variant: &Variant, rewrite_text: bool) -> Result<Rewritten> {
    let renames = &variant.renames;
    if !dialog.domains.contains(&renames.domain_id) {
        return Err(Error::invalid(
            "rewrite",
            format!(
                "dialog `{}` does not involve domain `{}`",
                dialog.dialog_id, renames.domain_id
            ),
        ));
    }
    let mut out = dialog.clone();
    let mut warnings = Vec::new();
    for d in &mut out.domains {
        if *d == renames.domain_id {
            d.clone_from(&renames.variant_id);
        }
    }

    let substitutions = rewrite_text.then(|| TextSubstitutions::new(variant));
    for turn in &mut out.turns {
        let context = format!("{} turn {}", dialog.dialog_id, turn.index);
        if let TurnOutput::ApiCall { call } = &turn.output {
            let rewritten = rewrite_call(call, variant, dialog.domains.len() == 1, &context, &mut warnings)?;
            turn.output = TurnOutput::call(rewritten);
        }
        if let Some(subs) = &substitutions {
            turn.user_utterance = subs.apply(&turn.user_utterance);
            if let TurnOutput::Text { text } = &mut turn.output {
                *text = subs.apply(text);
            }
        }
    }
    Ok(Rewritten {
        dialog: out,
        warnings,
    })
}

fn rewrite_call(
    call: &ApiCall,
    variant: &Variant,
    single_domain: bool,
    context: &str,
    warnings: &mut Vec<Warning>,
) -> Result<ApiCall> {
    let Some(intent) = variant.source.intent(call.method()) else {
        if single_domain {
            warnings.push(Warning::new(
                context,
                format!(
                    "unknown name: method `{}` is not an intent of {}",
                    call.method(),
                    variant.source.domain_id
                ),
            ));
        }
        return Ok(call.clone());
    };
    let renames = &variant.renames;
    let params = call.params().iter().map(|(name, value)| {
        if intent.slot(name).is_none() {
            warnings.push(Warning::new(
                context,
                format!("unknown name: `{name}` is not a slot of `{}`", intent.name),
            ));
        }
        (renames.new_slot_name(&intent.name, name).to_string(), value.clone())
    });
    ApiCall::new(renames.new_intent_name(&intent.name), params.collect::<Vec<_>>()).map_err(|e| {
        Error::Collision {
            scope: context.to_string(),
            name: e.to_string(),
        }
    })
}

/// Whole-word, longest-match-first replacement of schema surface names.
struct TextSubstitutions {
    /// Sorted by descending length of the old form.
    pairs: Vec<(String, String)>,
}

impl TextSubstitutions {
    fn new(variant: &Variant) -> Self {
        let r = &variant.renames;
        let mut map: HashMap<String, String> = HashMap::new();
        let mut conflicted: HashSet<String> = HashSet::new();
        let mut add = |old: &str, new: &str| {
            let mut forms = vec![(old.to_string(), new.to_string())];
            if old.contains('_') {
                forms.push((old.replace('_', " "), new.replace('_', " ")));
            }
            for (o, n) in forms {
                if o.trim().is_empty() || o == n {
                    continue;
                }
                match map.get(&o) {
                    Some(existing) if *existing != n => {
                        conflicted.insert(o);
                    }
                    _ => {
                        map.insert(o, n);
                    }
                }
            }
        };
        for (old, new) in &r.intent_renames {
            add(old, new);
        }
        for slots in r.slot_renames.values() {
            for (old, new) in slots {
                add(old, new);
            }
        }
        let mut pairs: Vec<_> = map
            .into_iter()
            .filter(|(o, _)| !conflicted.contains(o))
            .collect();
        pairs.sort_by(|a, b| b.0.len().cmp(&a.0.len()).then_with(|| a.0.cmp(&b.0)));
        TextSubstitutions { pairs }
    }

    fn apply(&self, text: &str) -> String {
        if self.pairs.is_empty() {
            return text.to_string();
        }
        let is_word = |c: char| c.is_alphanumeric() || c == '_';
        let mut out = String::with_capacity(text.len());
        let mut i = 0;
        let mut prev: Option<char> = None;
        'outer: while i < text.len() {
            let rest = &text[i..];
            if !prev.is_some_and(is_word) {
                for (old, new) in &self.pairs {
                    if rest.starts_with(old.as_str())
                        && !rest[old.len()..].chars().next().is_some_and(is_word)
                    {
                        out.push_str(new);
                        i += old.len();
                        prev = old.chars().last();
                        continue 'outer;
                    }
                }
            }
            let c = rest.chars().next().expect("in bounds");
            out.push(c);
            i += c.len_utf8();
            prev = Some(c);
        }
        out
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct AugmentOptions {
    pub rewrite_text: bool,
    /// Copy dialogs that do not touch a variant's domain under that variant too.
    pub include_unmatched: bool,
}

#[derive(Debug, Clone, Default)]
pub struct AugmentedCorpus {
    pub variant_schemas: SchemaCatalog,
    pub dialogs: Vec<Dialog>,
    /// Augmented dialog id to source dialog id.
    pub provenance: BTreeMap<String, String>,
    pub warnings: Vec<Warning>,
}

pub fn variant_dialog_id(source_id: &str, variant_id: &str) -> String {
    format!("{source_id}/{variant_id}")
}

/// Output order is source order, then rename-map order within each source dialog.
pub fn augment_corpus(
    dialogs: &[Dialog],
    catalog: &SchemaCatalog,
    rename_maps: &[RenameMap],
    options: AugmentOptions,
) -> Result<AugmentedCorpus> {
    let mut corpus = AugmentedCorpus::default();
    let mut variants = Vec::with_capacity(rename_maps.len());
    for map in rename_maps {
        let Some(schema) = catalog.get(&map.domain_id) else {
            corpus.warnings.push(Warning::new(
                format!("lexicon {}", map.variant_id),
                format!("unknown domain `{}`; lexicon skipped", map.domain_id),
            ));
            continue;
        };
        let (pruned, warnings) = map.prune_unknown(schema);
        corpus.warnings.extend(warnings);
        let variant = Variant::new(schema, &pruned)?;
        corpus.variant_schemas.insert(variant.schema().clone())?;
        variants.push(variant);
    }

    for dialog in dialogs {
        for variant in &variants {
            let r = variant.renames();
            let new_id = variant_dialog_id(&dialog.dialog_id, &r.variant_id);
            let mut rewritten = if dialog.domains.contains(&r.domain_id) {
                let Rewritten { dialog, warnings } =
                    rewrite_dialog(dialog, variant, options.rewrite_text)?;
                corpus.warnings.extend(warnings);
                dialog
            } else if options.include_unmatched {
                dialog.clone()
            } else {
                continue;
            };
            rewritten.dialog_id.clone_from(&new_id);
            corpus.provenance.insert(new_id, dialog.dialog_id.clone());
            corpus.dialogs.push(rewritten);
        }
    }
    Ok(corpus)
}

/// Reports every API call whose method or parameter names are not declared by a
/// schema of one of the dialog's domains.
pub fn check_schema_consistency(dialogs: &[Dialog], catalog: &SchemaCatalog) -> Vec<Warning> {
    let mut problems = Vec::new();
    for dialog in dialogs {
        let schemas: Vec<&DomainSchema> =
            dialog.domains.iter().filter_map(|d| catalog.get(d)).collect();
        for turn in &dialog.turns {
            let Some(call) = turn.output.as_call() else {
                continue;
            };
            let context = format!("{} turn {}", dialog.dialog_id, turn.index);
            let Some(intent) = schemas.iter().find_map(|s| s.intent(call.method())) else {
                problems.push(Warning::new(&context, format!("unknown method `{}`", call.method())));
                continue;
            };
            for (name, _) in call.params() {
                if intent.slot(name).is_none() {
                    problems.push(Warning::new(&context, format!("unknown slot `{name}`")));
                }
            }
        }
    }
    problems
}

/// Diffs two sibling schemas with the same shape (intents and slots matched by
/// position) into a lexicon mapping `source` onto `target`.
pub fn lexicon_from_siblings(source: &DomainSchema, target: &DomainSchema) -> Result<RenameMap> {
    if source.intents.len() != target.intents.len() {
        return Err(Error::ShapeMismatch(format!(
            "{} has {} intents, {} has {}",
            source.domain_id,
            source.intents.len(),
            target.domain_id,
            target.intents.len()
        )));
    }
    let mut map = RenameMap {
        domain_id: source.domain_id.clone(),
        variant_id: target.domain_id.clone(),
        ..Default::default()
    };
    for (a, b) in source.intents.iter().zip(&target.intents) {
        if a.slots.len() != b.slots.len() {
            return Err(Error::ShapeMismatch(format!(
                "intent {} has {} slots, {} has {}",
                a.name,
                a.slots.len(),
                b.name,
                b.slots.len()
            )));
        }
        if a.name != b.name {
            map.intent_renames.insert(a.name.clone(), b.name.clone());
        }
        let slots: BTreeMap<String, String> = a
            .slots
            .iter()
            .zip(&b.slots)
            .filter(|(x, y)| x.name != y.name)
            .map(|(x, y)| (x.name.clone(), y.name.clone()))
            .collect();
        if !slots.is_empty() {
            map.slot_renames.insert(a.name.clone(), slots);
        }
    }
    Ok(map)
}
