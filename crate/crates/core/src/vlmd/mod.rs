//! Variable-level metadata: data dictionaries extracted from datasets,
//! dictionary spreadsheets or REDCap exports, plus validation.

mod dictionary;
mod infer;
mod redcap;

use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;
use std::sync::OnceLock;

use serde::{Deserialize, Serialize};
use serde_json::Value;
use thiserror::Error;

pub use dictionary::{extract_dictionary_bytes, identity_column_map, write_dictionary_csv, VlmdField};
pub use infer::{classify, infer_from_csv_bytes, parses_as, InferOptions};
pub use redcap::extract_redcap_bytes;

use crate::tree::sha256_hex;

pub const SCHEMA_VERSION: &str = "1.0";
pub const SCHEMA_JSON: &str = include_str!("../../../../schemas/vlmd.schema.json");
const CDE_LIST_JSON: &str = include_str!("../../../../schemas/cde_list.json");

#[derive(Debug, Error)]
pub enum VlmdError {
    #[error("cannot read {path}: {message}")]
    Io { path: String, message: String },
    #[error("input has no header row")]
    EmptyFile,
    #[error("duplicate column header {0:?}")]
    DuplicateHeader(String),
    #[error("line {line}: expected {expected} fields, found {found}")]
    RaggedRows { line: u64, expected: usize, found: usize },
    #[error("malformed CSV: {0}")]
    Csv(String),
    #[error("column map does not name a column for `name`, or that column is absent")]
    MissingNameColumn,
    #[error("variable {name:?} defined on rows {first} and {second}")]
    DuplicateVariable { name: String, first: u64, second: u64 },
    #[error("row {row}, column {column:?}: {message}")]
    InvalidCell { row: u64, column: String, message: String },
    #[error("not a REDCap dictionary; missing columns: {}", .0.join(", "))]
    UnrecognizedHeader(Vec<String>),
    #[error("invalid dictionary document: {0}")]
    Parse(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum VlmdType {
    Boolean,
    Integer,
    Number,
    Date,
    Datetime,
    String,
}

impl VlmdType {
    /// Inference precedence, most specific first.
    pub const PRECEDENCE: [VlmdType; 6] = [
        VlmdType::Boolean,
        VlmdType::Integer,
        VlmdType::Number,
        VlmdType::Date,
        VlmdType::Datetime,
        VlmdType::String,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            VlmdType::Boolean => "boolean",
            VlmdType::Integer => "integer",
            VlmdType::Number => "number",
            VlmdType::Date => "date",
            VlmdType::Datetime => "datetime",
            VlmdType::String => "string",
        }
    }

    pub fn parse_loose(s: &str) -> Option<VlmdType> {
        Some(match s.trim().to_ascii_lowercase().as_str() {
            "boolean" | "bool" => VlmdType::Boolean,
            "integer" | "int" => VlmdType::Integer,
            "number" | "numeric" | "float" | "decimal" | "double" => VlmdType::Number,
            "date" => VlmdType::Date,
            "datetime" | "timestamp" => VlmdType::Datetime,
            "string" | "text" | "char" | "character" => VlmdType::String,
            _ => return None,
        })
    }

    fn is_numeric(self) -> bool {
        matches!(self, VlmdType::Integer | VlmdType::Number)
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Constraints {
    #[serde(rename = "enum", default, skip_serializing_if = "Option::is_none")]
    pub enum_values: Option<Vec<String>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub required: Option<bool>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub min: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub max: Option<f64>,
}

impl Constraints {
    pub fn is_empty(&self) -> bool {
        *self == Constraints::default()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct VariableDescriptor {
    pub name: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub title: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub description: Option<String>,
    #[serde(rename = "type")]
    pub ty: VlmdType,
    #[serde(default, skip_serializing_if = "Constraints::is_empty")]
    pub constraints: Constraints,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub missing_values: Vec<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub cde_ref: Option<String>,
    /// Dictionary columns with no VLMD counterpart, kept verbatim.
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub custom: BTreeMap<String, Value>,
}

impl VariableDescriptor {
    pub fn new(name: impl Into<String>, ty: VlmdType) -> Self {
        Self {
            name: name.into(),
            title: None,
            description: None,
            ty,
            constraints: Constraints::default(),
            missing_values: Vec::new(),
            cde_ref: None,
            custom: BTreeMap::new(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum VlmdSourceKind {
    CsvInferred,
    DictionaryCsv,
    Redcap,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Provenance {
    /// SHA-256 of the input file bytes.
    pub sha256: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DataDictionary {
    pub schema_version: String,
    pub source_kind: VlmdSourceKind,
    pub provenance: Provenance,
    pub variables: Vec<VariableDescriptor>,
}

impl DataDictionary {
    pub fn new(source_kind: VlmdSourceKind, input: &[u8], variables: Vec<VariableDescriptor>) -> Self {
        Self {
            schema_version: SCHEMA_VERSION.to_string(),
            source_kind,
            provenance: Provenance { sha256: sha256_hex(input) },
            variables,
        }
    }

    /// Pretty JSON with a trailing newline; stable for identical input.
    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("dictionary serializes");
        s.push('\n');
        s
    }

    pub fn from_json(text: &str) -> Result<Self, VlmdError> {
        serde_json::from_str(text).map_err(|e| VlmdError::Parse(e.to_string()))
    }

    /// The block stored on a study document when the dictionary is attached.
    pub fn study_block(&self) -> Value {
        let names: Vec<&str> = self.variables.iter().map(|v| v.name.as_str()).collect();
        let titles: Vec<&str> = self.variables.iter().filter_map(|v| v.title.as_deref()).collect();
        let cdes: BTreeSet<&str> = self.variables.iter().filter_map(|v| v.cde_ref.as_deref()).collect();
        serde_json::json!({
            "schema_version": self.schema_version,
            "source_kind": self.source_kind,
            "dictionary_sha256": self.provenance.sha256,
            "variable_count": self.variables.len(),
            "variables": names,
            "variable_titles": titles,
            "cde_refs": cdes,
            "dictionary": self,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Violation {
    /// Variable name, or `None` for document-level problems.
    pub variable: Option<String>,
    pub message: String,
}

impl Violation {
    fn doc(message: impl Into<String>) -> Self {
        Self { variable: None, message: message.into() }
    }
    fn var(name: &str, message: impl Into<String>) -> Self {
        Self { variable: Some(name.to_string()), message: message.into() }
    }
}

impl std::fmt::Display for Violation {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match &self.variable {
            Some(v) => write!(f, "{v}: {}", self.message),
            None => f.write_str(&self.message),
        }
    }
}

pub fn is_valid_variable_name(name: &str) -> bool {
    regex!(r"^[A-Za-z_][A-Za-z0-9_]*$").is_match(name)
}

/// Maps a raw header to the variable-name grammar: runs of disallowed
/// characters become `_`, and a leading digit gets a `_` prefix.
pub fn normalize_name(raw: &str) -> String {
    let mut out = String::new();
    let mut pending = false;
    for c in raw.trim().chars() {
        if c.is_ascii_alphanumeric() || c == '_' {
            if pending && !out.is_empty() {
                out.push('_');
            }
            pending = false;
            out.push(c);
        } else {
            pending = true;
        }
    }
    if out.is_empty() {
        return "_".to_string();
    }
    if out.as_bytes()[0].is_ascii_digit() {
        out.insert(0, '_');
    }
    out
}

/// Semantic checks over a typed dictionary.
pub fn validate_vlmd(dict: &DataDictionary) -> Vec<Violation> {
    let mut out = Vec::new();
    if dict.schema_version != SCHEMA_VERSION {
        out.push(Violation::doc(format!(
            "schema_version {:?} is not {SCHEMA_VERSION}",
            dict.schema_version
        )));
    }
    if dict.variables.is_empty() {
        out.push(Violation::doc("dictionary has no variables"));
    }
    let mut seen = BTreeSet::new();
    for v in &dict.variables {
        let n = v.name.as_str();
        if !seen.insert(n) {
            out.push(Violation::var(n, "duplicate variable name"));
        }
        if !is_valid_variable_name(n) {
            out.push(Violation::var(n, "name must match ^[A-Za-z_][A-Za-z0-9_]*$"));
        }
        let c = &v.constraints;
        if let Some(values) = &c.enum_values {
            if values.is_empty() {
                out.push(Violation::var(n, "enum is empty"));
            }
            if values.iter().collect::<BTreeSet<_>>().len() != values.len() {
                out.push(Violation::var(n, "enum values are not distinct"));
            }
        }
        if let (Some(lo), Some(hi)) = (c.min, c.max) {
            if lo > hi {
                out.push(Violation::var(n, format!("min {lo} exceeds max {hi}")));
            }
        }
        if (c.min.is_some() || c.max.is_some()) && !v.ty.is_numeric() {
            out.push(Violation::var(n, format!("min/max on a {} variable", v.ty.as_str())));
        }
        for bound in [c.min, c.max].into_iter().flatten() {
            if !bound.is_finite() {
                out.push(Violation::var(n, "bounds must be finite"));
            }
        }
        if v.missing_values.iter().collect::<BTreeSet<_>>().len() != v.missing_values.len() {
            out.push(Violation::var(n, "missing_values are not distinct"));
        }
        if v.cde_ref.as_deref() == Some("") {
            out.push(Violation::var(n, "cde_ref is empty"));
        }
    }
    out
}

fn schema_validator() -> &'static jsonschema::Validator {
    static V: OnceLock<jsonschema::Validator> = OnceLock::new();
    V.get_or_init(|| {
        let schema: Value = serde_json::from_str(SCHEMA_JSON).expect("bundled schema is JSON");
        jsonschema::validator_for(&schema).expect("bundled schema compiles")
    })
}

/// Structural (JSON Schema) then semantic validation of a raw document.
pub fn validate_document(doc: &Value) -> Vec<Violation> {
    let structural: Vec<Violation> = schema_validator()
        .iter_errors(doc)
        .map(|e| {
            let at = e.instance_path().to_string();
            let variable = variable_at(doc, &at);
            Violation { variable, message: format!("{}: {e}", if at.is_empty() { "/" } else { &at }) }
        })
        .collect();
    if !structural.is_empty() {
        return structural;
    }
    match serde_json::from_value::<DataDictionary>(doc.clone()) {
        Ok(dict) => validate_vlmd(&dict),
        Err(e) => vec![Violation::doc(e.to_string())],
    }
}

fn variable_at(doc: &Value, pointer: &str) -> Option<String> {
    let rest = pointer.strip_prefix("/variables/")?;
    let idx: usize = rest.split('/').next()?.parse().ok()?;
    doc["variables"].get(idx)?.get("name")?.as_str().map(String::from)
}

/// Case-insensitive exact match against the bundled common-data-element list.
pub fn cde_for(name: &str) -> Option<&'static str> {
    static LIST: OnceLock<BTreeMap<String, String>> = OnceLock::new();
    let list = LIST.get_or_init(|| {
        #[derive(Deserialize)]
        struct Cde {
            id: String,
            name: String,
        }
        let items: Vec<Cde> = serde_json::from_str(CDE_LIST_JSON).expect("bundled CDE list");
        items.into_iter().map(|c| (c.name.to_lowercase(), c.id)).collect()
    });
    list.get(&name.to_lowercase()).map(String::as_str)
}

fn read_file(path: &Path) -> Result<Vec<u8>, VlmdError> {
    std::fs::read(path).map_err(|e| VlmdError::Io {
        path: path.display().to_string(),
        message: e.to_string(),
    })
}

pub fn extract_from_csv(path: impl AsRef<Path>, options: &InferOptions) -> Result<DataDictionary, VlmdError> {
    infer_from_csv_bytes(&read_file(path.as_ref())?, options)
}

pub fn extract_from_dictionary(
    path: impl AsRef<Path>,
    column_map: &BTreeMap<String, VlmdField>,
) -> Result<DataDictionary, VlmdError> {
    extract_dictionary_bytes(&read_file(path.as_ref())?, column_map)
}

pub fn extract_from_redcap(path: impl AsRef<Path>) -> Result<DataDictionary, VlmdError> {
    extract_redcap_bytes(&read_file(path.as_ref())?)
}

/// A CSV table with its header and 1-based source line numbers.
struct Table {
    header: Vec<String>,
    rows: Vec<(u64, Vec<String>)>,
}

fn read_table(bytes: &[u8]) -> Result<Table, VlmdError> {
    let bytes = bytes.strip_prefix(b"\xEF\xBB\xBF").unwrap_or(bytes);
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(false)
        .flexible(true)
        .from_reader(bytes);
    let mut records = reader.records();
    let header: Vec<String> = match records.next() {
        None => return Err(VlmdError::EmptyFile),
        Some(r) => r.map_err(|e| VlmdError::Csv(e.to_string()))?.iter().map(|s| s.trim().to_string()).collect(),
    };
    if header.iter().all(|h| h.is_empty()) {
        return Err(VlmdError::EmptyFile);
    }
    let mut seen = BTreeSet::new();
    if let Some(dup) = header.iter().find(|h| !seen.insert(h.as_str())) {
        return Err(VlmdError::DuplicateHeader(dup.clone()));
    }
    let mut rows = Vec::new();
    for r in records {
        let r = r.map_err(|e| VlmdError::Csv(e.to_string()))?;
        let line = r.position().map(|p| p.line()).unwrap_or(0);
        if r.len() == 1 && r[0].is_empty() {
            continue;
        }
        if r.len() != header.len() {
            return Err(VlmdError::RaggedRows { line, expected: header.len(), found: r.len() });
        }
        rows.push((line, r.iter().map(String::from).collect()));
    }
    Ok(Table { header, rows })
}

#[cfg(test)]
mod tests;
