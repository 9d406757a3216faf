//! Canonical JSONL interchange: one process per line,
//! `{"id", "sentences": [[token]], "entities": [name], "grid": [[state]]}`
//! with states `-` (nowhere), `?` (somewhere) or `text@s:e` (inclusive span).

use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{CorpusError, LocationGrid, LocationState, ProcessInstance, Result};

#[derive(Serialize, Deserialize)]
struct Record {
    id: String,
    sentences: Vec<Vec<String>>,
    entities: Vec<String>,
    grid: Vec<Vec<String>>,
}

fn parse_state(s: &str) -> std::result::Result<LocationState, String> {
    match s.trim() {
        "-" => Ok(LocationState::Nowhere),
        "?" => Ok(LocationState::Somewhere),
        other => {
            let (_, offsets) = other
                .rsplit_once('@')
                .ok_or_else(|| format!("bad state `{other}`"))?;
            let (a, b) = offsets
                .split_once(':')
                .ok_or_else(|| format!("bad span offsets `{offsets}`"))?;
            let start = a.parse().map_err(|_| format!("bad span start `{a}`"))?;
            let end = b.parse().map_err(|_| format!("bad span end `{b}`"))?;
            Ok(LocationState::Span { start, end })
        }
    }
}

fn format_state(inst: &ProcessInstance, s: &LocationState) -> String {
    match *s {
        LocationState::Nowhere => "-".into(),
        LocationState::Somewhere => "?".into(),
        LocationState::Span { start, end } => {
            format!("{}@{start}:{end}", inst.span_text(start, end))
        }
    }
}

/// Parses one JSONL record; `line` is 1-based and only used in errors.
pub fn parse_record(text: &str, line: usize) -> Result<ProcessInstance> {
    let rec: Record = serde_json::from_str(text).map_err(|e| CorpusError::Parse {
        line,
        id: None,
        msg: e.to_string(),
    })?;
    let err = |msg: String| CorpusError::Parse {
        line,
        id: Some(rec.id.clone()),
        msg,
    };
    let rows = rec
        .grid
        .iter()
        .map(|row| row.iter().map(|s| parse_state(s)).collect::<std::result::Result<Vec<_>, _>>())
        .collect::<std::result::Result<Vec<_>, _>>()
        .map_err(err)?;
    ProcessInstance::new(
        rec.id.clone(),
        rec.sentences.clone(),
        &rec.entities,
        LocationGrid::new(rows),
    )
}

pub fn parse_corpus_str(text: &str) -> Result<Vec<ProcessInstance>> {
    let mut out = text
        .lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(k, l)| parse_record(l, k + 1))
        .collect::<Result<Vec<_>>>()?;
    out.sort_by(|a, b| a.id.cmp(&b.id));
    Ok(out)
}

/// Reads a JSONL corpus, ordered by id.
pub fn parse_corpus(path: impl AsRef<Path>) -> Result<Vec<ProcessInstance>> {
    parse_corpus_str(&std::fs::read_to_string(path)?)
}

pub fn serialize_instance(inst: &ProcessInstance) -> String {
    let rec = Record {
        id: inst.id.clone(),
        sentences: inst
            .sentences
            .iter()
            .map(|r| inst.tokens[r.clone()].to_vec())
            .collect(),
        entities: inst.entities.iter().map(|e| e.name.clone()).collect(),
        grid: inst
            .gold
            .rows
            .iter()
            .map(|row| row.iter().map(|s| format_state(inst, s)).collect())
            .collect(),
    };
    serde_json::to_string(&rec).expect("records always serialize")
}

pub fn serialize_corpus(instances: &[ProcessInstance]) -> String {
    let mut out = String::new();
    for inst in instances {
        out.push_str(&serialize_instance(inst));
        out.push('\n');
    }
    out
}

pub fn write_corpus(path: impl AsRef<Path>, instances: &[ProcessInstance]) -> Result<()> {
    let mut f = std::io::BufWriter::new(std::fs::File::create(path)?);
    f.write_all(serialize_corpus(instances).as_bytes())?;
    f.flush()?;
    Ok(())
}
