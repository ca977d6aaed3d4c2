use std::collections::BTreeMap;

use chrono::{NaiveDate, NaiveDateTime};
use proptest::prelude::*;
use serde_json::json;

use super::*;

fn infer(csv: &str) -> DataDictionary {
    infer_from_csv_bytes(csv.as_bytes(), &InferOptions::default()).unwrap()
}

fn var<'a>(d: &'a DataDictionary, name: &str) -> &'a VariableDescriptor {
    d.variables.iter().find(|v| v.name == name).unwrap()
}

#[test]
fn precedence_examples() {
    let d = infer("flag,mixed,n,x,when,at\n0,1,1,1.5,2024-01-02,2024-01-02T03:04:05Z\n1,2,2,2,2024-02-29,2024-01-02T03:04:05\n1,x,-3,1e3,2023-12-31,2024-01-02 03:04\n");
    assert_eq!(var(&d, "flag").ty, VlmdType::Boolean);
    assert_eq!(var(&d, "mixed").ty, VlmdType::String);
    assert_eq!(var(&d, "mixed").constraints.enum_values.as_deref().unwrap(), ["1", "2", "x"]);
    assert_eq!(var(&d, "n").ty, VlmdType::Integer);
    assert_eq!(var(&d, "x").ty, VlmdType::Number);
    assert_eq!(var(&d, "when").ty, VlmdType::Date);
    assert_eq!(var(&d, "at").ty, VlmdType::Datetime);
    assert_eq!(d.source_kind, VlmdSourceKind::CsvInferred);
    assert!(validate_vlmd(&d).is_empty());
}

#[test]
fn missing_tokens_and_enum_threshold() {
    let mut csv = String::from("score,site\n");
    for i in 0..12 {
        csv.push_str(&format!("{},site{}\n", if i % 4 == 0 { "NA" } else { "7" }, i));
    }
    csv.push_str(".,\n");
    let d = infer(&csv);
    let score = var(&d, "score");
    assert_eq!(score.ty, VlmdType::Integer);
    assert_eq!(score.missing_values, [".", "NA"]);
    let site = var(&d, "site");
    assert_eq!(site.ty, VlmdType::String);
    assert_eq!(site.constraints.enum_values, None, "12 distinct values exceed the threshold");
    assert_eq!(site.missing_values, [""]);

    let opts = InferOptions { enum_threshold: 12, ..InferOptions::default() };
    let d = infer_from_csv_bytes(csv.as_bytes(), &opts).unwrap();
    assert_eq!(var(&d, "site").constraints.enum_values.as_ref().unwrap().len(), 12);
}

#[test]
fn all_missing_column_is_string() {
    let d = infer("a,b\nNA,1\n,2\n");
    assert_eq!(var(&d, "a").ty, VlmdType::String);
    assert_eq!(var(&d, "a").constraints.enum_values, None);
}

#[test]
fn header_normalization_and_cde_match() {
    let d = infer("Pain Intensity,AGE,1st visit\n3,40,2024-01-01\n");
    let names: Vec<_> = d.variables.iter().map(|v| v.name.as_str()).collect();
    assert_eq!(names, ["Pain_Intensity", "AGE", "_1st_visit"]);
    assert_eq!(var(&d, "Pain_Intensity").title.as_deref(), Some("Pain Intensity"));
    assert_eq!(var(&d, "Pain_Intensity").cde_ref.as_deref(), Some("HEAL-CDE-PEG-PAIN"));
    assert_eq!(var(&d, "AGE").cde_ref.as_deref(), Some("HEAL-CDE-DEMO-AGE"));
    assert_eq!(var(&d, "AGE").title, None);
    assert!(matches!(
        infer_from_csv_bytes(b"a b,a-b\n1,2\n", &InferOptions::default()),
        Err(VlmdError::DuplicateHeader(_))
    ));
}

#[test]
fn csv_errors() {
    let opts = InferOptions::default();
    assert!(matches!(infer_from_csv_bytes(b"", &opts), Err(VlmdError::EmptyFile)));
    assert!(matches!(
        infer_from_csv_bytes(b"a,b,a\n1,2,3\n", &opts),
        Err(VlmdError::DuplicateHeader(h)) if h == "a"
    ));
    assert!(matches!(
        infer_from_csv_bytes(b"a,b\n1,2\n3\n4,5\n", &opts),
        Err(VlmdError::RaggedRows { line: 3, expected: 2, found: 1 })
    ));
}

#[test]
fn output_is_deterministic() {
    let csv = "z,a,m\n1,x,2024-01-01\n0,y,\n";
    assert_eq!(infer(csv).to_json(), infer(csv).to_json());
    let d = infer(csv);
    assert_eq!(DataDictionary::from_json(&d.to_json()).unwrap(), d);
    assert_eq!(d.provenance.sha256, crate::tree::sha256_hex(csv));
}

#[test]
fn dictionary_extraction() {
    let csv = "name,label,type,units,notes\nage,Age in years,integer,years,\nsex,Sex at birth,string,,self-reported\nbmi,BMI,number,kg/m2,\n";
    let map: BTreeMap<String, VlmdField> = [
        ("name".to_string(), VlmdField::Name),
        ("label".to_string(), VlmdField::Title),
        ("type".to_string(), VlmdField::Type),
    ]
    .into();
    let d = extract_dictionary_bytes(csv.as_bytes(), &map).unwrap();
    assert_eq!(d.variables.len(), 3);
    assert_eq!(d.variables[0].ty, VlmdType::Integer);
    assert_eq!(d.variables[0].title.as_deref(), Some("Age in years"));
    assert_eq!(d.variables[0].custom.len(), 1);
    assert_eq!(d.variables[0].custom["units"], "years");
    assert_eq!(d.variables[1].custom["notes"], "self-reported");
    assert_eq!(d.variables[1].cde_ref.as_deref(), Some("HEAL-CDE-DEMO-SEX"));
    assert!(validate_vlmd(&d).is_empty());

    let dup = "name,type\nx,integer\ny,string\nx,number\n";
    assert!(matches!(
        extract_dictionary_bytes(dup.as_bytes(), &map),
        Err(VlmdError::DuplicateVariable { name, first: 2, second: 4 }) if name == "x"
    ));
    let no_name: BTreeMap<String, VlmdField> = [("label".to_string(), VlmdField::Title)].into();
    assert!(matches!(
        extract_dictionary_bytes(csv.as_bytes(), &no_name),
        Err(VlmdError::MissingNameColumn)
    ));
    let renamed: BTreeMap<String, VlmdField> = [("variable".to_string(), VlmdField::Name)].into();
    assert!(matches!(
        extract_dictionary_bytes(csv.as_bytes(), &renamed),
        Err(VlmdError::MissingNameColumn)
    ));
    let bad_type = "name,type\nx,complex\n";
    assert!(matches!(
        extract_dictionary_bytes(bad_type.as_bytes(), &identity_column_map()),
        Err(VlmdError::InvalidCell { row: 2, .. })
    ));
}

#[test]
fn redcap_mapping_rules() {
    let csv = "field_name,form_name,field_type,field_label,choices,text_validation\n\
               sex,demo,radio,Sex,\"1, Male | 2, Female\",\n\
               smoker,demo,yesno,Smokes?,,\n\
               intro,demo,descriptive,Welcome,,\n\
               visit,demo,text,Visit date,,date_ymd\n";
    let d = extract_redcap_bytes(csv.as_bytes()).unwrap();
    assert_eq!(d.variables.len(), 3, "descriptive fields carry no data");
    let sex = var(&d, "sex");
    assert_eq!(sex.ty, VlmdType::String);
    assert_eq!(sex.constraints.enum_values.as_deref().unwrap(), ["1", "2"]);
    assert_eq!(sex.description.as_deref(), Some("1=Male; 2=Female"));
    assert_eq!(var(&d, "smoker").ty, VlmdType::Boolean);
    assert_eq!(var(&d, "visit").ty, VlmdType::Date);

    match extract_redcap_bytes(b"name,type\nx,text\n") {
        Err(VlmdError::UnrecognizedHeader(missing)) => assert_eq!(missing.len(), 6),
        other => panic!("{other:?}"),
    }
}

#[test]
fn validation_violations() {
    let d = infer("a,b\n5,x\n");
    assert!(validate_vlmd(&d).is_empty());

    let mut bad = d.clone();
    bad.variables[0].constraints.min = Some(5.0);
    bad.variables[0].constraints.max = Some(1.0);
    let v = validate_vlmd(&bad);
    assert_eq!(v.len(), 1);
    assert_eq!(v[0].variable.as_deref(), Some("a"));

    let mut bad = d.clone();
    bad.variables[1].name = "a".into();
    bad.variables[1].constraints.enum_values = Some(vec!["x".into(), "x".into()]);
    assert_eq!(validate_vlmd(&bad).len(), 2);

    let mut bad = d.clone();
    bad.variables.clear();
    assert_eq!(validate_vlmd(&bad).len(), 1);

    let mut doc = serde_json::to_value(&d).unwrap();
    assert!(validate_document(&doc).is_empty());
    doc["variables"][1]["type"] = json!("blob");
    doc["variables"][0]["name"] = json!("9lives");
    let v = validate_document(&doc);
    assert_eq!(v.len(), 2, "{v:?}");
    assert!(v.iter().any(|x| x.variable.as_deref() == Some("b")));
    assert!(!validate_document(&json!({"schema_version": "2.0"})).is_empty());
}

#[test]
fn attached_block_lists_names() {
    let d = infer("age,sex\n40,1\n");
    let block = d.study_block();
    assert_eq!(block["variables"], json!(["age", "sex"]));
    assert_eq!(block["cde_refs"], json!(["HEAL-CDE-DEMO-AGE", "HEAL-CDE-DEMO-SEX"]));
    assert_eq!(block["variable_count"], 2);
}

// Oracle classifier written without the production regexes.
fn oracle_types(v: &str) -> Vec<VlmdType> {
    let mut out = Vec::new();
    if ["0", "1"].contains(&v) || ["true", "false"].contains(&v.to_lowercase().as_str()) && (v == v.to_lowercase() || v == v.to_uppercase() || v == capitalized(v)) {
        out.push(VlmdType::Boolean);
    }
    let digits = v.strip_prefix(['+', '-']).unwrap_or(v);
    if !digits.is_empty() && digits.chars().all(|c| c.is_ascii_digit()) && v.parse::<i64>().is_ok() {
        out.push(VlmdType::Integer);
    }
    let mantissa = digits.split(['e', 'E']).next().unwrap_or("");
    if v.parse::<f64>().is_ok_and(f64::is_finite)
        && mantissa.chars().any(|c| c.is_ascii_digit())
        && digits.chars().all(|c| c.is_ascii_digit() || ".eE+-".contains(c))
    {
        out.push(VlmdType::Number);
    }
    if v.len() == 10 && NaiveDate::parse_from_str(v, "%Y-%m-%d").is_ok() {
        out.push(VlmdType::Date);
    }
    if v.len() >= 16 && v.as_bytes()[10] == b'T' && (NaiveDateTime::parse_from_str(v.trim_end_matches('Z'), "%Y-%m-%dT%H:%M:%S").is_ok()) {
        out.push(VlmdType::Datetime);
    }
    out.push(VlmdType::String);
    out
}

fn capitalized(v: &str) -> String {
    let lower = v.to_lowercase();
    let mut c = lower.chars();
    c.next().map(|f| f.to_uppercase().collect::<String>() + c.as_str()).unwrap_or_default()
}

fn cell() -> impl Strategy<Value = String> {
    prop_oneof![
        prop::sample::select(vec!["0", "1", "true", "False", "TRUE"]).prop_map(String::from),
        (-100_000i64..100_000).prop_map(|n| n.to_string()),
        (-1e6f64..1e6).prop_map(|x| format!("{x:.3}")),
        (1990i32..2030, 1u32..13, 1u32..29).prop_map(|(y, m, d)| format!("{y:04}-{m:02}-{d:02}")),
        (1990i32..2030, 1u32..13, 1u32..29, 0u32..24, 0u32..60)
            .prop_map(|(y, m, d, h, mi)| format!("{y:04}-{m:02}-{d:02}T{h:02}:{mi:02}:00Z")),
        "[a-z]{1,6}",
        prop::sample::select(vec!["", "NA", "N/A", "."]).prop_map(String::from),
    ]
}

/// A column drawn mostly from one family so non-string types occur.
fn column() -> impl Strategy<Value = Vec<String>> {
    (0usize..7, prop::collection::vec(cell(), 1..25), prop::collection::vec(any::<bool>(), 25)).prop_flat_map(
        |(family, mixed, use_mixed)| {
            let pure: BoxedStrategy<String> = match family {
                0 => prop::sample::select(vec!["0", "1"]).prop_map(String::from).boxed(),
                1 => (-500i64..500).prop_map(|n| n.to_string()).boxed(),
                2 => (-50f64..50.0).prop_map(|x| format!("{x:.2}")).boxed(),
                3 => (2000i32..2025, 1u32..13, 1u32..29).prop_map(|(y, m, d)| format!("{y}-{m:02}-{d:02}")).boxed(),
                4 => (0u32..24).prop_map(|h| format!("2024-03-05T{h:02}:00:00")).boxed(),
                5 => prop::sample::select(vec!["NA", "", "."]).prop_map(String::from).boxed(),
                _ => "[a-c]{1,2}".boxed(),
            };
            prop::collection::vec(pure, mixed.len()).prop_map(move |p| {
                p.into_iter()
                    .zip(mixed.iter())
                    .zip(use_mixed.iter())
                    .map(|((p, m), u)| if *u && family == 6 { m.clone() } else { p })
                    .collect()
            })
        },
    )
}

fn to_csv(cols: &[Vec<String>]) -> String {
    let rows = cols.iter().map(Vec::len).max().unwrap_or(0);
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record((0..cols.len()).map(|i| format!("c{i}"))).unwrap();
    for r in 0..rows {
        w.write_record(cols.iter().map(|c| c.get(r).cloned().unwrap_or_else(|| "NA".into()))).unwrap();
    }
    String::from_utf8(w.into_inner().unwrap()).unwrap()
}

fn field_text() -> impl Strategy<Value = Option<String>> {
    prop::option::of("[A-Za-z][A-Za-z0-9 ,]{0,10}[A-Za-z0-9]")
}

fn descriptor() -> impl Strategy<Value = VariableDescriptor> {
    (
        "[a-z_][a-z0-9_]{0,8}",
        field_text(),
        field_text(),
        prop::sample::select(VlmdType::PRECEDENCE.to_vec()),
        prop::option::of(prop::collection::btree_set("[a-z0-9]{1,4}", 1..4)),
        prop::option::of(any::<bool>()),
        prop::option::of(-1000i32..1000),
        prop::collection::btree_set("[A-Z]{1,3}", 0..3),
        prop::option::of("[A-Z]{3}-[0-9]{2}"),
        prop::collection::btree_map("[a-z]{3,5}", "[a-z0-9]{1,5}", 0..3),
    )
        .prop_map(|(name, title, description, ty, en, req, min, missing, cde, custom)| {
            let mut v = VariableDescriptor::new(name, ty);
            v.title = title;
            v.description = description;
            v.constraints.enum_values = en.map(|s| s.into_iter().collect());
            v.constraints.required = req;
            if ty.is_numeric() {
                v.constraints.min = min.map(|m| m as f64 / 4.0);
                v.constraints.max = min.map(|m| m as f64 / 4.0 + 10.5);
            }
            v.missing_values = missing.into_iter().collect();
            v.cde_ref = cde;
            v.custom = custom
                .into_iter()
                .filter(|(k, _)| k.parse::<VlmdField>().is_err())
                .map(|(k, s)| (k, Value::String(s)))
                .collect();
            v
        })
}

fn dictionary() -> impl Strategy<Value = DataDictionary> {
    prop::collection::vec(descriptor(), 1..8).prop_map(|vars| {
        let mut seen = std::collections::BTreeSet::new();
        let vars = vars.into_iter().filter(|v| seen.insert(v.name.clone())).collect();
        DataDictionary::new(VlmdSourceKind::DictionaryCsv, b"", vars)
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(128))]

    #[test]
    fn single_cells_match_oracle(v in cell()) {
        prop_assert_eq!(classify(&v).into_iter().collect::<Vec<_>>(), oracle_types(&v), "{:?}", v);
    }

    #[test]
    fn inference_matches_per_cell_oracle(cols in prop::collection::vec(column(), 1..5)) {
        let csv = to_csv(&cols);
        let d = infer(&csv);
        let rows = cols.iter().map(Vec::len).max().unwrap();
        let missing = ["", "NA", "N/A", "."];
        for (i, col) in cols.iter().enumerate() {
            let values: Vec<String> = (0..rows)
                .map(|r| col.get(r).cloned().unwrap_or_else(|| "NA".into()))
                .filter(|v| !missing.contains(&v.as_str()))
                .collect();
            let expected = if values.is_empty() {
                VlmdType::String
            } else {
                *VlmdType::PRECEDENCE
                    .iter()
                    .find(|t| values.iter().all(|v| oracle_types(v).contains(t)))
                    .unwrap()
            };
            let got = &d.variables[i];
            prop_assert_eq!(got.ty, expected, "column {} = {:?}", i, col);
            // soundness
            for v in &values {
                prop_assert!(parses_as(v, got.ty));
            }
            let distinct: std::collections::BTreeSet<&String> = values.iter().collect();
            let wants_enum = expected == VlmdType::String && !distinct.is_empty() && distinct.len() <= 10;
            prop_assert_eq!(got.constraints.enum_values.is_some(), wants_enum);
        }
        prop_assert_eq!(d.to_json(), infer(&csv).to_json());
    }

    #[test]
    fn json_round_trip_is_identity(d in dictionary()) {
        prop_assert_eq!(DataDictionary::from_json(&d.to_json()).unwrap(), d.clone());
        prop_assert!(validate_vlmd(&d).is_empty(), "{:?}", validate_vlmd(&d));
        prop_assert!(validate_document(&serde_json::to_value(&d).unwrap()).is_empty());
    }

    #[test]
    fn dictionary_csv_round_trip(d in dictionary()) {
        let csv = write_dictionary_csv(&d);
        let once = extract_dictionary_bytes(csv.as_bytes(), &identity_column_map()).unwrap();
        prop_assert_eq!(&once.variables, &d.variables);
        let twice = extract_dictionary_bytes(write_dictionary_csv(&once).as_bytes(), &identity_column_map()).unwrap();
        prop_assert_eq!(once, twice);
    }
}
