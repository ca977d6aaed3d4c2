use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Duration;

use clap::{Parser, Subcommand, ValueEnum};
use meshhub_core::vlmd::{
    extract_from_csv, extract_from_dictionary, extract_from_redcap, identity_column_map, validate_document,
    validate_vlmd, InferOptions, Violation, VlmdField,
};
use serde_json::Value;

#[derive(Parser)]
#[command(name = "vlmd", about = "Variable-level metadata dictionaries")]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Clone, Copy, ValueEnum)]
enum Source {
    /// A dataset; types are inferred from its values.
    Csv,
    /// An existing data-dictionary CSV, one variable per row.
    Dict,
    /// A REDCap data dictionary export.
    Redcap,
}

#[derive(Subcommand)]
enum Cmd {
    /// Build a dictionary from a CSV file.
    Extract {
        #[arg(long, value_enum)]
        from: Source,
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        output: PathBuf,
        #[arg(long, default_value_t = 10)]
        enum_threshold: usize,
        /// Replaces the default missing tokens ("", NA, N/A, ".").
        #[arg(long = "missing")]
        missing: Vec<String>,
        /// `COLUMN=FIELD` for `--from dict`; columns named after a field
        /// map to it by default.
        #[arg(long = "map")]
        map: Vec<String>,
    },
    /// Check a dictionary document against the schema.
    Validate {
        #[arg(long)]
        input: PathBuf,
    },
    /// Attach a dictionary to a study through the hub API.
    Attach {
        #[arg(long)]
        study: String,
        #[arg(long)]
        api: String,
        #[arg(long)]
        token_file: PathBuf,
        #[arg(long)]
        input: PathBuf,
    },
}

enum Failure {
    Violations(Vec<String>),
    Io(String),
}

fn io(e: impl std::fmt::Display) -> Failure {
    Failure::Io(e.to_string())
}

fn violations(v: &[Violation]) -> Result<(), Failure> {
    if v.is_empty() {
        Ok(())
    } else {
        Err(Failure::Violations(v.iter().map(ToString::to_string).collect()))
    }
}

fn column_map(pairs: &[String]) -> Result<BTreeMap<String, VlmdField>, Failure> {
    if pairs.is_empty() {
        return Ok(identity_column_map());
    }
    pairs
        .iter()
        .map(|p| {
            let (col, field) = p.split_once('=').ok_or_else(|| io(format!("--map {p:?}: expected COLUMN=FIELD")))?;
            Ok((col.to_string(), field.parse().map_err(io)?))
        })
        .collect()
}

fn extract(from: Source, input: &Path, output: &Path, options: InferOptions, map: &[String]) -> Result<(), Failure> {
    let dict = match from {
        Source::Csv => extract_from_csv(input, &options),
        Source::Dict => extract_from_dictionary(input, &column_map(map)?),
        Source::Redcap => extract_from_redcap(input),
    }
    .map_err(io)?;
    std::fs::write(output, dict.to_json()).map_err(|e| io(format!("{}: {e}", output.display())))?;
    violations(&validate_vlmd(&dict))
}

fn read(path: &Path) -> Result<String, Failure> {
    std::fs::read_to_string(path).map_err(|e| io(format!("{}: {e}", path.display())))
}

fn document(input: &Path) -> Result<Value, Failure> {
    serde_json::from_str(&read(input)?).map_err(|e| io(format!("{}: {e}", input.display())))
}

fn validate(input: &Path) -> Result<(), Failure> {
    violations(&validate_document(&document(input)?))
}

fn attach(study: &str, api: &str, token_file: &Path, input: &Path) -> Result<(), Failure> {
    let token = read(token_file)?.trim().to_string();
    let doc = document(input)?;
    violations(&validate_document(&doc))?;

    let agent: ureq::Agent = ureq::Agent::config_builder()
        .http_status_as_error(false)
        .timeout_global(Some(Duration::from_secs(30)))
        .build()
        .into();
    let url = format!("{}/studies/{study}/vlmd", api.trim_end_matches('/'));
    let mut resp = agent
        .post(&url)
        .header("Authorization", format!("Bearer {token}"))
        .send_json(&doc)
        .map_err(|e| io(format!("{url}: {e}")))?;
    let status = resp.status().as_u16();
    let body: Value = resp.body_mut().read_json().unwrap_or(Value::Null);
    if (200..300).contains(&status) {
        println!("{} is {}", study, body["state"].as_str().unwrap_or("updated"));
        return Ok(());
    }
    let code = body["error"].as_str().unwrap_or("error");
    let mut lines = vec![format!("hub refused ({status} {code}): {}", body["message"].as_str().unwrap_or(""))];
    if let Some(detail) = body["detail"].as_array() {
        lines.extend(detail.iter().map(|d| d.as_str().map(String::from).unwrap_or_else(|| d.to_string())));
    }
    match status {
        400..500 => Err(Failure::Violations(lines)),
        _ => Err(Failure::Io(lines.join("\n"))),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.cmd {
        Cmd::Extract { from, input, output, enum_threshold, missing, map } => {
            let mut options = InferOptions { enum_threshold, ..InferOptions::default() };
            if !missing.is_empty() {
                options.missing_tokens = missing;
            }
            extract(from, &input, &output, options, &map)
        }
        Cmd::Validate { input } => validate(&input),
        Cmd::Attach { study, api, token_file, input } => attach(&study, &api, &token_file, &input),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Violations(v)) => {
            for line in v {
                eprintln!("{line}");
            }
            ExitCode::from(1)
        }
        Err(Failure::Io(e)) => {
            eprintln!("error: {e}");
            ExitCode::from(2)
        }
    }
}
