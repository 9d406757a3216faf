//! Ingestion of ProPara state-change grids.
//!
//! Accepts the grid JSON used by the public ProPara releases: one object per
//! paragraph (JSON lines or a JSON array) with `para_id`, `sentence_texts`,
//! `participants` and `states`, where each participant has `T + 1` location
//! strings (`-` nonexistent, `?` unknown, otherwise location text). Location
//! text is mapped back to paragraph offsets by string matching.

use std::path::Path;

use serde::Deserialize;

use super::{tokenize, CorpusError, LocationGrid, LocationState, ProcessInstance, Result};

#[derive(Deserialize)]
struct GridRecord {
    #[serde(alias = "id")]
    para_id: serde_json::Value,
    sentence_texts: Vec<String>,
    participants: Vec<String>,
    states: Vec<Vec<String>>,
}

/// Counts from an import.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct ImportStats {
    pub instances: usize,
    pub located_spans: usize,
    /// Location strings not found in the paragraph; stored as `Somewhere`.
    pub unresolved_spans: usize,
}

fn find_all(tokens: &[String], needle: &[String]) -> Vec<(usize, usize)> {
    if needle.is_empty() || needle.len() > tokens.len() {
        return Vec::new();
    }
    (0..=tokens.len() - needle.len())
        .filter(|&i| tokens[i..i + needle.len()] == *needle)
        .map(|i| (i, i + needle.len() - 1))
        .collect()
}

/// Picks the last occurrence inside the step-`t` prefix, else the first
/// occurrence anywhere.
fn locate(tokens: &[String], prefix_end: usize, text: &str) -> Option<(usize, usize)> {
    let hits = find_all(tokens, &tokenize(text));
    hits.iter()
        .rev()
        .find(|&&(_, e)| e < prefix_end)
        .or(hits.first())
        .copied()
}

pub fn parse_propara_str(text: &str) -> Result<(Vec<ProcessInstance>, ImportStats)> {
    let records: Vec<(usize, GridRecord)> = if text.trim_start().starts_with('[') {
        serde_json::from_str::<Vec<GridRecord>>(text)
            .map_err(|e| CorpusError::Parse {
                line: e.line(),
                id: None,
                msg: e.to_string(),
            })?
            .into_iter()
            .enumerate()
            .map(|(k, r)| (k + 1, r))
            .collect()
    } else {
        text.lines()
            .enumerate()
            .filter(|(_, l)| !l.trim().is_empty())
            .map(|(k, l)| {
                serde_json::from_str(l)
                    .map(|r| (k + 1, r))
                    .map_err(|e| CorpusError::Parse {
                        line: k + 1,
                        id: None,
                        msg: e.to_string(),
                    })
            })
            .collect::<Result<_>>()?
    };

    let mut stats = ImportStats::default();
    let mut out = Vec::with_capacity(records.len());
    for (line, rec) in records {
        let id = match &rec.para_id {
            serde_json::Value::String(s) => s.clone(),
            other => other.to_string(),
        };
        let sentences: Vec<Vec<String>> = rec.sentence_texts.iter().map(|s| tokenize(s)).collect();
        let tokens: Vec<String> = sentences.iter().flatten().cloned().collect();
        let mut ends = Vec::new();
        let mut acc = 0;
        for s in &sentences {
            acc += s.len();
            ends.push(acc);
        }
        let mut rows = Vec::with_capacity(rec.states.len());
        for row in &rec.states {
            let mut states = Vec::with_capacity(row.len());
            for (t, s) in row.iter().enumerate() {
                let state = match s.trim() {
                    "-" => LocationState::Nowhere,
                    "?" | "" => LocationState::Somewhere,
                    loc => {
                        let prefix_end = if t == 0 { 0 } else { ends.get(t - 1).copied().unwrap_or(acc) };
                        match locate(&tokens, prefix_end, loc) {
                            Some((start, end)) => {
                                stats.located_spans += 1;
                                LocationState::Span { start, end }
                            }
                            None => {
                                stats.unresolved_spans += 1;
                                LocationState::Somewhere
                            }
                        }
                    }
                };
                states.push(state);
            }
            rows.push(states);
        }
        let inst = ProcessInstance::new(id.clone(), sentences, &rec.participants, LocationGrid::new(rows))
            .map_err(|e| match e {
                CorpusError::Validation { msg, .. } => CorpusError::Parse {
                    line,
                    id: Some(id.clone()),
                    msg,
                },
                other => other,
            })?;
        out.push(inst);
    }
    if stats.unresolved_spans > 0 {
        log::warn!(
            "{} location strings were not found in their paragraph and were read as unknown locations",
            stats.unresolved_spans
        );
    }
    out.sort_by(|a, b| a.id.cmp(&b.id));
    stats.instances = out.len();
    Ok((out, stats))
}

pub fn parse_propara(path: impl AsRef<Path>) -> Result<(Vec<ProcessInstance>, ImportStats)> {
    parse_propara_str(&std::fs::read_to_string(path)?)
}
