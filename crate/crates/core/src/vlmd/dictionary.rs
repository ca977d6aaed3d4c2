use std::collections::{BTreeMap, BTreeSet};
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use serde_json::Value;

use super::{cde_for, normalize_name, read_table, DataDictionary, VariableDescriptor, VlmdError, VlmdSourceKind, VlmdType};

/// The VLMD field a dictionary column feeds.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum VlmdField {
    Name,
    Title,
    Description,
    Type,
    Enum,
    Required,
    Min,
    Max,
    MissingValues,
    CdeRef,
}

impl VlmdField {
    pub const ALL: [VlmdField; 10] = [
        VlmdField::Name,
        VlmdField::Title,
        VlmdField::Description,
        VlmdField::Type,
        VlmdField::Enum,
        VlmdField::Required,
        VlmdField::Min,
        VlmdField::Max,
        VlmdField::MissingValues,
        VlmdField::CdeRef,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            VlmdField::Name => "name",
            VlmdField::Title => "title",
            VlmdField::Description => "description",
            VlmdField::Type => "type",
            VlmdField::Enum => "enum",
            VlmdField::Required => "required",
            VlmdField::Min => "min",
            VlmdField::Max => "max",
            VlmdField::MissingValues => "missing_values",
            VlmdField::CdeRef => "cde_ref",
        }
    }
}

impl FromStr for VlmdField {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        VlmdField::ALL
            .into_iter()
            .find(|f| f.as_str() == s)
            .ok_or_else(|| format!("unknown VLMD field {s:?}"))
    }
}

/// Maps each column named after a VLMD field to that field.
pub fn identity_column_map() -> BTreeMap<String, VlmdField> {
    VlmdField::ALL.into_iter().map(|f| (f.as_str().to_string(), f)).collect()
}

fn split_list(cell: &str) -> Vec<String> {
    cell.split('|').map(str::trim).filter(|s| !s.is_empty()).map(String::from).collect()
}

fn non_empty(cell: &str) -> Option<String> {
    let t = cell.trim();
    (!t.is_empty()).then(|| t.to_string())
}

pub fn extract_dictionary_bytes(
    bytes: &[u8],
    column_map: &BTreeMap<String, VlmdField>,
) -> Result<DataDictionary, VlmdError> {
    let table = read_table(bytes)?;
    let mut columns: BTreeMap<VlmdField, usize> = BTreeMap::new();
    let mut unmapped = Vec::new();
    for (i, h) in table.header.iter().enumerate() {
        match column_map.get(h) {
            Some(f) => {
                columns.entry(*f).or_insert(i);
            }
            None => unmapped.push((i, h.clone())),
        }
    }
    if !columns.contains_key(&VlmdField::Name) {
        return Err(VlmdError::MissingNameColumn);
    }

    let mut first_row: BTreeMap<String, u64> = BTreeMap::new();
    let mut variables = Vec::with_capacity(table.rows.len());
    for (line, row) in &table.rows {
        let cell = |f: VlmdField| columns.get(&f).map(|&i| row[i].as_str()).unwrap_or("");
        let invalid = |f: VlmdField, message: String| VlmdError::InvalidCell {
            row: *line,
            column: table.header[columns[&f]].clone(),
            message,
        };
        let raw_name = cell(VlmdField::Name).trim();
        if raw_name.is_empty() {
            return Err(invalid(VlmdField::Name, "empty variable name".into()));
        }
        let name = normalize_name(raw_name);
        if let Some(first) = first_row.insert(name.clone(), *line) {
            return Err(VlmdError::DuplicateVariable { name, first, second: *line });
        }

        let ty = match non_empty(cell(VlmdField::Type)) {
            None => VlmdType::String,
            Some(t) => VlmdType::parse_loose(&t)
                .ok_or_else(|| invalid(VlmdField::Type, format!("unknown type {t:?}")))?,
        };
        let mut var = VariableDescriptor::new(name.clone(), ty);
        var.title = non_empty(cell(VlmdField::Title));
        var.description = non_empty(cell(VlmdField::Description));
        let values = split_list(cell(VlmdField::Enum));
        if !values.is_empty() {
            var.constraints.enum_values = Some(values);
        }
        var.constraints.required = match cell(VlmdField::Required).trim().to_ascii_lowercase().as_str() {
            "" => None,
            "true" | "yes" | "y" | "1" => Some(true),
            "false" | "no" | "n" | "0" => Some(false),
            other => return Err(invalid(VlmdField::Required, format!("not a boolean: {other:?}"))),
        };
        for (field, slot) in [
            (VlmdField::Min, &mut var.constraints.min),
            (VlmdField::Max, &mut var.constraints.max),
        ] {
            if let Some(t) = non_empty(cell(field)) {
                let n: f64 = t.parse().map_err(|_| invalid(field, format!("not a number: {t:?}")))?;
                *slot = Some(n);
            }
        }
        var.missing_values = split_list(cell(VlmdField::MissingValues));
        var.cde_ref = if columns.contains_key(&VlmdField::CdeRef) {
            non_empty(cell(VlmdField::CdeRef))
        } else {
            cde_for(&name).map(String::from)
        };
        for (i, h) in &unmapped {
            if !row[*i].trim().is_empty() {
                var.custom.insert(h.clone(), Value::String(row[*i].trim().to_string()));
            }
        }
        variables.push(var);
    }
    Ok(DataDictionary::new(VlmdSourceKind::DictionaryCsv, bytes, variables))
}

/// Writes a dictionary CSV readable with `identity_column_map`. Custom
/// entries become extra columns.
pub fn write_dictionary_csv(dict: &DataDictionary) -> String {
    let custom: BTreeSet<&str> = dict
        .variables
        .iter()
        .flat_map(|v| v.custom.keys().map(String::as_str))
        .collect();
    let mut w = csv::Writer::from_writer(Vec::new());
    let mut header: Vec<&str> = VlmdField::ALL.iter().map(|f| f.as_str()).collect();
    header.extend(custom.iter().copied());
    w.write_record(&header).expect("in-memory write");
    for v in &dict.variables {
        let c = &v.constraints;
        let num = |n: Option<f64>| n.map(|n| n.to_string()).unwrap_or_default();
        let mut row = vec![
            v.name.clone(),
            v.title.clone().unwrap_or_default(),
            v.description.clone().unwrap_or_default(),
            v.ty.as_str().to_string(),
            c.enum_values.as_ref().map(|e| e.join("|")).unwrap_or_default(),
            c.required.map(|b| b.to_string()).unwrap_or_default(),
            num(c.min),
            num(c.max),
            v.missing_values.join("|"),
            v.cde_ref.clone().unwrap_or_default(),
        ];
        for k in &custom {
            row.push(match v.custom.get(*k) {
                Some(Value::String(s)) => s.clone(),
                Some(other) => other.to_string(),
                None => String::new(),
            });
        }
        w.write_record(&row).expect("in-memory write");
    }
    String::from_utf8(w.into_inner().expect("flush")).expect("utf-8")
}
