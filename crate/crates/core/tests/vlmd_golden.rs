use std::collections::BTreeMap;
use std::path::PathBuf;

use meshhub_core::vlmd::{
    extract_from_dictionary, extract_from_redcap, validate_vlmd, VlmdField, VlmdSourceKind,
};
use serde_json::Value;

fn fixture(name: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures").join(name)
}

#[test]
fn redcap_export_matches_golden_dictionary() {
    let dict = extract_from_redcap(fixture("redcap_20.csv")).unwrap();
    assert_eq!(dict.variables.len(), 20);
    assert!(validate_vlmd(&dict).is_empty());

    let golden = std::fs::read_to_string(fixture("redcap_20.golden.json")).unwrap();
    let got: Value = serde_json::from_str(&dict.to_json()).unwrap();
    let want: Value = serde_json::from_str(&golden).unwrap();
    for (g, w) in got["variables"].as_array().unwrap().iter().zip(want["variables"].as_array().unwrap()) {
        assert_eq!(g, w, "variable {}", w["name"]);
    }
    assert_eq!(dict.to_json(), golden, "byte-exact");
}

#[test]
fn three_row_dictionary() {
    let map: BTreeMap<String, VlmdField> = [
        ("name".to_string(), VlmdField::Name),
        ("label".to_string(), VlmdField::Title),
        ("type".to_string(), VlmdField::Type),
    ]
    .into();
    let dict = extract_from_dictionary(fixture("dictionary_3.csv"), &map).unwrap();
    assert_eq!(dict.source_kind, VlmdSourceKind::DictionaryCsv);
    let names: Vec<_> = dict.variables.iter().map(|v| v.name.as_str()).collect();
    assert_eq!(names, ["age", "sex", "bmi"]);
    assert_eq!(dict.variables[2].custom["units"], "kg/m2");
}
