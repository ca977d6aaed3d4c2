use std::collections::BTreeSet;

use chrono::{DateTime, NaiveDate, NaiveDateTime};

use super::{cde_for, normalize_name, read_table, DataDictionary, VariableDescriptor, VlmdError, VlmdSourceKind, VlmdType};

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct InferOptions {
    pub enum_threshold: usize,
    pub missing_tokens: Vec<String>,
    pub sample_limit: usize,
}

impl Default for InferOptions {
    fn default() -> Self {
        Self {
            enum_threshold: 10,
            missing_tokens: ["", "NA", "N/A", "."].map(String::from).to_vec(),
            sample_limit: 10_000,
        }
    }
}

const BOOLEAN_TOKENS: [&str; 8] = ["true", "True", "TRUE", "false", "False", "FALSE", "0", "1"];

pub fn parses_as(value: &str, ty: VlmdType) -> bool {
    match ty {
        VlmdType::Boolean => BOOLEAN_TOKENS.contains(&value),
        VlmdType::Integer => regex!(r"^[+-]?[0-9]+$").is_match(value) && value.parse::<i64>().is_ok(),
        VlmdType::Number => {
            regex!(r"^[+-]?([0-9]+(\.[0-9]*)?|\.[0-9]+)([eE][+-]?[0-9]+)?$").is_match(value)
                && value.parse::<f64>().is_ok_and(f64::is_finite)
        }
        VlmdType::Date => {
            regex!(r"^[0-9]{4}-[0-9]{2}-[0-9]{2}$").is_match(value)
                && NaiveDate::parse_from_str(value, "%Y-%m-%d").is_ok()
        }
        VlmdType::Datetime => is_datetime(value),
        VlmdType::String => true,
    }
}

fn is_datetime(value: &str) -> bool {
    if !regex!(r"^[0-9]{4}-[0-9]{2}-[0-9]{2}[T ][0-9]{2}:[0-9]{2}").is_match(value) {
        return false;
    }
    if DateTime::parse_from_rfc3339(&value.replacen(' ', "T", 1)).is_ok() {
        return true;
    }
    ["%Y-%m-%dT%H:%M:%S%.f", "%Y-%m-%d %H:%M:%S%.f", "%Y-%m-%dT%H:%M", "%Y-%m-%d %H:%M"]
        .iter()
        .any(|f| NaiveDateTime::parse_from_str(value, f).is_ok())
}

/// Every type a single value parses as.
pub fn classify(value: &str) -> BTreeSet<VlmdType> {
    VlmdType::PRECEDENCE.into_iter().filter(|t| parses_as(value, *t)).collect()
}

pub fn infer_from_csv_bytes(bytes: &[u8], options: &InferOptions) -> Result<DataDictionary, VlmdError> {
    let table = read_table(bytes)?;
    let mut names = BTreeSet::new();
    let mut variables = Vec::with_capacity(table.header.len());
    for (col, raw) in table.header.iter().enumerate() {
        let name = normalize_name(raw);
        if !names.insert(name.clone()) {
            return Err(VlmdError::DuplicateHeader(raw.clone()));
        }
        let mut present = BTreeSet::new();
        let mut missing = BTreeSet::new();
        for (_, row) in table.rows.iter().take(options.sample_limit) {
            let v = row[col].trim();
            if options.missing_tokens.iter().any(|m| m == v) {
                missing.insert(v.to_string());
            } else {
                present.insert(v.to_string());
            }
        }
        let ty = VlmdType::PRECEDENCE
            .into_iter()
            .find(|t| present.iter().all(|v| parses_as(v, *t)))
            .filter(|_| !present.is_empty())
            .unwrap_or(VlmdType::String);
        let mut var = VariableDescriptor::new(name.clone(), ty);
        if name != *raw {
            var.title = Some(raw.clone());
        }
        if ty == VlmdType::String && !present.is_empty() && present.len() <= options.enum_threshold {
            var.constraints.enum_values = Some(present.into_iter().collect());
        }
        var.missing_values = missing.into_iter().collect();
        var.cde_ref = cde_for(&name).map(String::from);
        variables.push(var);
    }
    Ok(DataDictionary::new(VlmdSourceKind::CsvInferred, bytes, variables))
}
