use std::collections::BTreeMap;

use serde_json::Value;

use super::{cde_for, normalize_name, read_table, DataDictionary, VariableDescriptor, VlmdError, VlmdSourceKind, VlmdType};

const REQUIRED: [(&str, &[&str]); 6] = [
    ("field_name", &["field_name", "Variable / Field Name"]),
    ("form_name", &["form_name", "Form Name"]),
    ("field_type", &["field_type", "Field Type"]),
    ("field_label", &["field_label", "Field Label"]),
    (
        "choices",
        &["choices", "select_choices_or_calculations", "Choices, Calculations, OR Slider Labels"],
    ),
    (
        "text_validation",
        &[
            "text_validation",
            "text_validation_type_or_show_slider_number",
            "Text Validation Type OR Show Slider Number",
        ],
    ),
];

const OPTIONAL: [(&str, &[&str]); 4] = [
    ("min", &["text_validation_min", "Text Validation Min"]),
    ("max", &["text_validation_max", "Text Validation Max"]),
    ("required", &["required_field", "Required Field?"]),
    ("note", &["field_note", "Field Note"]),
];

/// `"1, Male | 2, Female"` to `[("1", "Male"), ("2", "Female")]`.
fn parse_choices(s: &str) -> Vec<(String, String)> {
    let mut out: Vec<(String, String)> = Vec::new();
    for part in s.split('|') {
        let part = part.trim();
        if part.is_empty() {
            continue;
        }
        let (code, label) = match part.split_once(',') {
            Some((c, l)) => (c.trim(), l.trim()),
            None => (part, part),
        };
        if !out.iter().any(|(c, _)| c == code) {
            out.push((code.to_string(), label.to_string()));
        }
    }
    out
}

fn text_type(validation: &str) -> VlmdType {
    let v = validation.trim().to_ascii_lowercase();
    if v == "integer" {
        VlmdType::Integer
    } else if v == "number" || v.starts_with("number_") {
        VlmdType::Number
    } else if v.starts_with("datetime_") {
        VlmdType::Datetime
    } else if v.starts_with("date_") {
        VlmdType::Date
    } else {
        VlmdType::String
    }
}

pub fn extract_redcap_bytes(bytes: &[u8]) -> Result<DataDictionary, VlmdError> {
    let table = read_table(bytes)?;
    let find = |aliases: &[&str]| table.header.iter().position(|h| aliases.contains(&h.as_str()));
    let mut cols: BTreeMap<&str, usize> = BTreeMap::new();
    let mut missing = Vec::new();
    for (key, aliases) in REQUIRED {
        match find(aliases) {
            Some(i) => {
                cols.insert(key, i);
            }
            None => missing.push(key.to_string()),
        }
    }
    if !missing.is_empty() {
        return Err(VlmdError::UnrecognizedHeader(missing));
    }
    for (key, aliases) in OPTIONAL {
        if let Some(i) = find(aliases) {
            cols.insert(key, i);
        }
    }

    let mut first_row: BTreeMap<String, u64> = BTreeMap::new();
    let mut variables = Vec::new();
    for (line, row) in &table.rows {
        let cell = |k: &str| cols.get(k).map(|&i| row[i].trim()).unwrap_or("");
        let field_type = cell("field_type").to_ascii_lowercase();
        if field_type == "descriptive" {
            continue;
        }
        let raw_name = cell("field_name");
        if raw_name.is_empty() {
            return Err(VlmdError::InvalidCell {
                row: *line,
                column: table.header[cols["field_name"]].clone(),
                message: "empty field name".into(),
            });
        }
        let name = normalize_name(raw_name);
        if let Some(first) = first_row.insert(name.clone(), *line) {
            return Err(VlmdError::DuplicateVariable { name, first, second: *line });
        }

        let choices = parse_choices(cell("choices"));
        let ty = match field_type.as_str() {
            "radio" | "dropdown" | "checkbox" => VlmdType::String,
            "yesno" | "truefalse" => VlmdType::Boolean,
            "text" => text_type(cell("text_validation")),
            "calc" => VlmdType::Number,
            "slider" => VlmdType::Integer,
            _ => VlmdType::String,
        };
        let mut var = VariableDescriptor::new(name.clone(), ty);
        let label = cell("field_label");
        if !label.is_empty() {
            var.title = Some(label.to_string());
        }
        let note = cell("note");
        if matches!(field_type.as_str(), "radio" | "dropdown" | "checkbox") && !choices.is_empty() {
            var.constraints.enum_values = Some(choices.iter().map(|(c, _)| c.clone()).collect());
            let labels: Vec<String> = choices.iter().map(|(c, l)| format!("{c}={l}")).collect();
            var.description = Some(labels.join("; "));
        } else if !note.is_empty() {
            var.description = Some(note.to_string());
        }
        if matches!(ty, VlmdType::Integer | VlmdType::Number) {
            var.constraints.min = cell("min").parse().ok();
            var.constraints.max = cell("max").parse().ok();
            if field_type == "slider" {
                var.constraints.min.get_or_insert(0.0);
                var.constraints.max.get_or_insert(100.0);
            }
        }
        if cell("required").eq_ignore_ascii_case("y") {
            var.constraints.required = Some(true);
        }
        var.cde_ref = cde_for(&name).map(String::from);
        var.custom.insert("form_name".into(), Value::String(cell("form_name").to_string()));
        var.custom.insert("field_type".into(), Value::String(field_type));
        variables.push(var);
    }
    Ok(DataDictionary::new(VlmdSourceKind::Redcap, bytes, variables))
}
