//! Procedural-text instances, their gold location grids, and I/O.

mod embeddings;
mod jsonl;
pub mod propara;
mod synth;
mod tokenize;

use std::ops::Range;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use embeddings::{load_embeddings, oov_rate, EmbeddingTable, Vocab};
pub use jsonl::{parse_corpus, parse_corpus_str, parse_record, serialize_corpus, serialize_instance, write_corpus};
pub use synth::synth_corpus;
pub use tokenize::{find_entity_mentions, tokenize};

#[derive(Debug, Error)]
pub enum CorpusError {
    #[error("line {line}{}: {msg}", id.as_ref().map(|i| format!(" (record `{i}`)")).unwrap_or_default())]
    Parse {
        line: usize,
        id: Option<String>,
        msg: String,
    },
    #[error("invalid instance `{id}`: {msg}")]
    Validation { id: String, msg: String },
    #[error("embeddings line {line}: {msg}")]
    Embedding { line: usize, msg: String },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T, E = CorpusError> = std::result::Result<T, E>;

/// Where an entity is after a given step.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum LocationState {
    /// The entity does not exist.
    Nowhere,
    /// The entity exists but its location is not stated.
    Somewhere,
    /// Location is the paragraph tokens `start..=end`.
    Span { start: usize, end: usize },
}

impl LocationState {
    pub fn exists(&self) -> bool {
        !matches!(self, Self::Nowhere)
    }
}

/// `N` entities by `T + 1` states; column 0 is the state before the first sentence.
#[derive(Clone, Debug, PartialEq, Eq, Default)]
pub struct LocationGrid {
    pub rows: Vec<Vec<LocationState>>,
}

impl LocationGrid {
    pub fn new(rows: Vec<Vec<LocationState>>) -> Self {
        Self { rows }
    }

    pub fn num_entities(&self) -> usize {
        self.rows.len()
    }

    pub fn get(&self, entity: usize, step: usize) -> LocationState {
        self.rows[entity][step]
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Entity {
    /// Name as given in the data.
    pub name: String,
    pub tokens: Vec<String>,
    /// Inclusive token offsets of every string match in the paragraph.
    pub mentions: Vec<(usize, usize)>,
}

impl Entity {
    /// Tokenizes `name` and locates its mentions. Names of the form
    /// `"a; b"` list alternative surface forms; mentions of all are kept.
    pub fn locate(name: &str, paragraph: &[String]) -> Self {
        let alternatives: Vec<&str> = name
            .split(';')
            .map(str::trim)
            .filter(|s| !s.is_empty())
            .collect();
        let mut mentions: Vec<(usize, usize)> = alternatives
            .iter()
            .flat_map(|alt| find_entity_mentions(paragraph, alt))
            .collect();
        mentions.sort_unstable();
        let mut kept: Vec<(usize, usize)> = Vec::with_capacity(mentions.len());
        for m in mentions {
            if kept.last().is_none_or(|last| m.0 > last.1) {
                kept.push(m);
            }
        }
        let tokens = alternatives.first().map(|a| tokenize(a)).unwrap_or_default();
        Self {
            name: name.to_string(),
            tokens,
            mentions: kept,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ProcessInstance {
    pub id: String,
    /// Lowercased paragraph tokens.
    pub tokens: Vec<String>,
    /// Half-open token range of each sentence, in order.
    pub sentences: Vec<Range<usize>>,
    pub entities: Vec<Entity>,
    pub gold: LocationGrid,
}

impl ProcessInstance {
    /// Builds an instance from tokenized sentences, entity names and a grid,
    /// locating mentions by string matching, and validates it.
    pub fn new(
        id: impl Into<String>,
        sentences: Vec<Vec<String>>,
        entity_names: &[String],
        gold: LocationGrid,
    ) -> Result<Self> {
        let mut tokens = Vec::new();
        let mut ranges = Vec::with_capacity(sentences.len());
        for s in sentences {
            let start = tokens.len();
            tokens.extend(s.into_iter().map(|t| t.to_lowercase()));
            ranges.push(start..tokens.len());
        }
        let entities = entity_names
            .iter()
            .map(|n| Entity::locate(n, &tokens))
            .collect();
        let inst = Self {
            id: id.into(),
            tokens,
            sentences: ranges,
            entities,
            gold,
        };
        inst.validate()?;
        Ok(inst)
    }

    fn invalid(&self, msg: impl Into<String>) -> CorpusError {
        CorpusError::Validation {
            id: self.id.clone(),
            msg: msg.into(),
        }
    }

    /// Checks every structural invariant of the instance and its grid.
    pub fn validate(&self) -> Result<()> {
        if self.sentences.is_empty() {
            return Err(self.invalid("no sentences"));
        }
        let mut expect = 0;
        for (k, s) in self.sentences.iter().enumerate() {
            if s.start != expect || s.end <= s.start {
                return Err(self.invalid(format!("sentence {} is empty or out of order", k + 1)));
            }
            expect = s.end;
        }
        if expect != self.tokens.len() {
            return Err(self.invalid("sentences do not cover the paragraph"));
        }
        if self.entities.is_empty() {
            return Err(self.invalid("no entities"));
        }
        if self.entities.iter().any(|e| e.tokens.is_empty()) {
            return Err(self.invalid("empty entity name"));
        }
        for e in &self.entities {
            if e.mentions.iter().any(|&(s, t)| s > t || t >= self.tokens.len()) {
                return Err(self.invalid(format!("mention of `{}` outside paragraph", e.name)));
            }
        }
        validate_grid(self, &self.gold)
    }

    pub fn num_steps(&self) -> usize {
        self.sentences.len()
    }

    pub fn num_entities(&self) -> usize {
        self.entities.len()
    }

    /// Number of tokens in sentences `1..=t`.
    pub fn prefix_len(&self, t: usize) -> usize {
        match t {
            0 => 0,
            t => self.sentences[t.min(self.sentences.len()) - 1].end,
        }
    }

    /// 1-based sentence containing `token`.
    pub fn sentence_of(&self, token: usize) -> Option<usize> {
        self.sentences
            .iter()
            .position(|s| s.contains(&token))
            .map(|k| k + 1)
    }

    /// 1-based sentence of the entity's first mention.
    pub fn first_mention_step(&self, entity: usize) -> Option<usize> {
        self.entities[entity]
            .mentions
            .first()
            .and_then(|&(s, _)| self.sentence_of(s))
    }

    pub fn span_text(&self, start: usize, end: usize) -> String {
        self.tokens[start..=end].join(" ")
    }

    pub fn sentence_text(&self, t: usize) -> String {
        self.tokens[self.sentences[t - 1].clone()].join(" ")
    }
}

/// Grid shape and span offsets must agree with the instance.
pub fn validate_grid(inst: &ProcessInstance, grid: &LocationGrid) -> Result<()> {
    if grid.rows.len() != inst.entities.len() {
        return Err(inst.invalid(format!(
            "grid has {} rows for {} entities",
            grid.rows.len(),
            inst.entities.len()
        )));
    }
    let cols = inst.sentences.len() + 1;
    for (i, row) in grid.rows.iter().enumerate() {
        if row.len() != cols {
            return Err(inst.invalid(format!(
                "grid row {i} has {} states, expected {cols}",
                row.len()
            )));
        }
        for state in row {
            if let LocationState::Span { start, end } = *state {
                if start > end || end >= inst.tokens.len() {
                    return Err(inst.invalid(format!("span {start}:{end} outside paragraph")));
                }
            }
        }
    }
    Ok(())
}
