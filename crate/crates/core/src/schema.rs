//! Domain schemas: a domain, its intents, and each intent's slots.

use std::collections::{BTreeMap, HashSet};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SlotSpec {
    pub name: String,
    pub is_required: bool,
}

impl SlotSpec {
    pub fn required(name: impl Into<String>) -> Self {
        SlotSpec {
            name: name.into(),
            is_required: true,
        }
    }

    pub fn optional(name: impl Into<String>) -> Self {
        SlotSpec {
            name: name.into(),
            is_required: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Intent {
    pub name: String,
    pub slots: Vec<SlotSpec>,
}

impl Intent {
    pub fn slot(&self, name: &str) -> Option<&SlotSpec> {
        self.slots.iter().find(|s| s.name == name)
    }

    pub fn required_slots(&self) -> impl Iterator<Item = &SlotSpec> {
        self.slots.iter().filter(|s| s.is_required)
    }

    pub fn optional_slots(&self) -> impl Iterator<Item = &SlotSpec> {
        self.slots.iter().filter(|s| !s.is_required)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DomainSchema {
    pub domain_id: String,
    pub intents: Vec<Intent>,
}

impl DomainSchema {
    pub fn intent(&self, name: &str) -> Option<&Intent> {
        self.intents.iter().find(|i| i.name == name)
    }

    /// Checks the structural invariants: non-empty names, at least one intent,
    /// unique intent names, unique newline-free slot names per intent.
    pub fn validate(&self) -> Result<()> {
        if self.domain_id.trim().is_empty() {
            return Err(Error::invalid("schema", "empty domain_id"));
        }
        if self.intents.is_empty() {
            return Err(Error::EmptySchema(format!(
                "domain `{}` has no intents",
                self.domain_id
            )));
        }
        let mut intents = HashSet::new();
        for intent in &self.intents {
            if intent.name.trim().is_empty() {
                return Err(Error::invalid(
                    "schema",
                    format!("empty intent name in `{}`", self.domain_id),
                ));
            }
            if !intents.insert(intent.name.as_str()) {
                return Err(Error::invalid(
                    "schema",
                    format!("duplicate intent `{}` in `{}`", intent.name, self.domain_id),
                ));
            }
            let mut slots = HashSet::new();
            for slot in &intent.slots {
                if slot.name.is_empty() || slot.name.contains(['\n', '\r']) {
                    return Err(Error::invalid(
                        "schema",
                        format!("bad slot name {:?} in `{}`", slot.name, intent.name),
                    ));
                }
                if !slots.insert(slot.name.as_str()) {
                    return Err(Error::invalid(
                        "schema",
                        format!("duplicate slot `{}` in `{}`", slot.name, intent.name),
                    ));
                }
            }
        }
        Ok(())
    }
}

/// Schemas keyed by domain id. Iteration follows insertion (ingestion) order.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct SchemaCatalog {
    order: Vec<String>,
    schemas: BTreeMap<String, DomainSchema>,
}

impl SchemaCatalog {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn from_schemas(schemas: impl IntoIterator<Item = DomainSchema>) -> Result<Self> {
        let mut catalog = Self::new();
        for schema in schemas {
            catalog.insert(schema)?;
        }
        Ok(catalog)
    }

    pub fn insert(&mut self, schema: DomainSchema) -> Result<()> {
        schema.validate()?;
        if self.schemas.contains_key(&schema.domain_id) {
            return Err(Error::DuplicateDomain(schema.domain_id));
        }
        self.order.push(schema.domain_id.clone());
        self.schemas.insert(schema.domain_id.clone(), schema);
        Ok(())
    }

    pub fn get(&self, domain_id: &str) -> Option<&DomainSchema> {
        self.schemas.get(domain_id)
    }

    pub fn contains(&self, domain_id: &str) -> bool {
        self.schemas.contains_key(domain_id)
    }

    pub fn len(&self) -> usize {
        self.order.len()
    }

    pub fn is_empty(&self) -> bool {
        self.order.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = &DomainSchema> {
        self.order.iter().map(|id| &self.schemas[id])
    }

    pub fn domain_ids(&self) -> impl Iterator<Item = &str> {
        self.order.iter().map(String::as_str)
    }

    /// Adds every schema of `other`; fails on the first shared domain id.
    pub fn merge(&mut self, other: SchemaCatalog) -> Result<()> {
        for schema in other.into_schemas() {
            self.insert(schema)?;
        }
        Ok(())
    }

    pub fn into_schemas(mut self) -> Vec<DomainSchema> {
        self.order
            .iter()
            .map(|id| self.schemas.remove(id).expect("order and map agree"))
            .collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SchemaFormat {
    SgdJson,
    NativeJson,
}

#[derive(Serialize, Deserialize)]
struct NativeSchemaFile {
    domains: Vec<DomainSchema>,
}

/// A non-fatal observation made while reading a corpus file.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct Warning {
    pub context: String,
    pub message: String,
}

impl Warning {
    pub fn new(context: impl Into<String>, message: impl Into<String>) -> Self {
        Warning {
            context: context.into(),
            message: message.into(),
        }
    }
}

impl std::fmt::Display for Warning {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{}: {}", self.context, self.message)
    }
}

#[derive(Debug, Clone)]
pub struct SchemaIngest {
    pub catalog: SchemaCatalog,
    pub warnings: Vec<Warning>,
}

pub fn ingest_schemas(path: &Path, format: SchemaFormat) -> Result<SchemaIngest> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_schemas(&text, format).map_err(|e| match e {
        Error::MalformedFile { message, .. } => Error::malformed(path, message),
        other => other,
    })
}

/// Parses schema text; `MalformedFile` errors carry an empty path.
pub fn parse_schemas(text: &str, format: SchemaFormat) -> Result<SchemaIngest> {
    if text.trim().is_empty() {
        return Err(Error::EmptySchema("file is empty".into()));
    }
    let (schemas, warnings) = match format {
        SchemaFormat::NativeJson => {
            let file: NativeSchemaFile =
                serde_json::from_str(text).map_err(|e| Error::malformed("", e))?;
            (file.domains, Vec::new())
        }
        SchemaFormat::SgdJson => crate::sgd::schemas_from_sgd(text)?,
    };
    if schemas.is_empty() {
        return Err(Error::EmptySchema("no domains in file".into()));
    }
    Ok(SchemaIngest {
        catalog: SchemaCatalog::from_schemas(schemas)?,
        warnings,
    })
}

/// Serializes a catalog in the native schema format (pretty JSON, trailing newline).
pub fn export_native_schemas(catalog: &SchemaCatalog) -> String {
    let file = NativeSchemaFile {
        domains: catalog.iter().cloned().collect(),
    };
    let mut text = serde_json::to_string_pretty(&file).expect("schemas serialize");
    text.push('\n');
    text
}
