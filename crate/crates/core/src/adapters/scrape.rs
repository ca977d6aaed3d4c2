use std::collections::BTreeMap;

use scraper::{ElementRef, Html, Selector};
use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};

/// Turns an HTML page into flat records. Field specs are CSS selectors
/// evaluated inside each record element; `selector@attr` reads an
/// attribute instead of the text, and a bare `@attr` reads it from the
/// record element itself.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ScrapeRules {
    pub record_selector: String,
    pub fields: BTreeMap<String, String>,
}

enum Field {
    Text(Selector),
    Attr(Option<Selector>, String),
}

type Compiled<'a> = (Selector, Vec<(&'a str, Field)>);

impl ScrapeRules {
    pub fn validate(&self) -> Result<(), String> {
        self.compile().map(|_| ())
    }

    fn compile(&self) -> Result<Compiled<'_>, String> {
        let parse = |s: &str| Selector::parse(s).map_err(|e| format!("bad selector {s:?}: {e}"));
        let record = parse(&self.record_selector)?;
        if self.fields.is_empty() {
            return Err("scrape rules need at least one field".into());
        }
        let mut fields = Vec::new();
        for (name, spec) in &self.fields {
            let field = match spec.rsplit_once('@') {
                Some(("", attr)) => Field::Attr(None, attr.to_string()),
                Some((sel, attr)) => Field::Attr(Some(parse(sel.trim())?), attr.to_string()),
                None => Field::Text(parse(spec)?),
            };
            fields.push((name.as_str(), field));
        }
        Ok((record, fields))
    }

    pub fn extract(&self, html: &str) -> Result<Vec<Value>, String> {
        let (record, fields) = self.compile()?;
        let doc = Html::parse_document(html);
        Ok(doc
            .select(&record)
            .map(|el| {
                let mut out = Map::new();
                for (name, field) in &fields {
                    if let Some(v) = read(el, field) {
                        out.insert(name.to_string(), Value::String(v));
                    }
                }
                Value::Object(out)
            })
            .collect())
    }
}

fn read(el: ElementRef<'_>, field: &Field) -> Option<String> {
    match field {
        Field::Text(sel) => {
            let inner = el.select(sel).next()?;
            let text = inner.text().collect::<Vec<_>>().join(" ");
            Some(text.split_whitespace().collect::<Vec<_>>().join(" "))
        }
        Field::Attr(None, attr) => el.value().attr(attr).map(str::to_string),
        Field::Attr(Some(sel), attr) => el.select(sel).next()?.value().attr(attr).map(str::to_string),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use serde_json::json;

    const PAGE: &str = r#"
        <html><body><table>
          <tr class="study" data-id="s-1"><td class="t">Pain  after
             surgery</td><td><a href="/s/1">more</a></td></tr>
          <tr class="study" data-id="s-2"><td class="t">Sleep</td></tr>
          <tr class="other"><td class="t">ignored</td></tr>
        </table></body></html>"#;

    fn rules() -> ScrapeRules {
        ScrapeRules {
            record_selector: "tr.study".into(),
            fields: BTreeMap::from([
                ("id".into(), "@data-id".into()),
                ("title".into(), "td.t".into()),
                ("link".into(), "a@href".into()),
            ]),
        }
    }

    #[test]
    fn extracts_records() {
        let got = rules().extract(PAGE).unwrap();
        assert_eq!(
            got,
            vec![
                json!({"id": "s-1", "title": "Pain after surgery", "link": "/s/1"}),
                json!({"id": "s-2", "title": "Sleep"}),
            ]
        );
    }

    #[test]
    fn bad_selectors_are_rejected() {
        let mut r = rules();
        r.record_selector = "tr[".into();
        assert!(r.validate().is_err());
    }
}
