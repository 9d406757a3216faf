//! Location states resolved to comparable text, and the create, destroy and
//! move events they imply.

use serde::{Deserialize, Serialize};

use crate::corpus::{LocationGrid, LocationState, ProcessInstance};

/// A grid cell with spans replaced by their normalized text, so that
/// different mentions of the same location compare equal.
#[derive(Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum ResolvedState {
    Nowhere,
    Somewhere,
    Location(String),
}

impl ResolvedState {
    pub fn exists(&self) -> bool {
        !matches!(self, Self::Nowhere)
    }

    pub fn location(text: &str) -> Self {
        Self::Location(normalize_location(text))
    }
}

/// Lowercases, collapses whitespace, and drops one leading article.
pub fn normalize_location(text: &str) -> String {
    let words: Vec<String> = text.split_whitespace().map(str::to_lowercase).collect();
    let skip = match words.first().map(String::as_str) {
        Some("the" | "a" | "an") if words.len() > 1 => 1,
        _ => 0,
    };
    words[skip..].join(" ")
}

/// One process's grid in resolved form, keyed by entity name.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ResolvedGrid {
    pub id: String,
    pub entities: Vec<String>,
    /// `N x (T + 1)`.
    pub rows: Vec<Vec<ResolvedState>>,
}

impl ResolvedGrid {
    pub fn from_grid(inst: &ProcessInstance, grid: &LocationGrid) -> Self {
        let rows = grid
            .rows
            .iter()
            .map(|row| {
                row.iter()
                    .map(|s| match *s {
                        LocationState::Nowhere => ResolvedState::Nowhere,
                        LocationState::Somewhere => ResolvedState::Somewhere,
                        LocationState::Span { start, end } => ResolvedState::location(&inst.span_text(start, end)),
                    })
                    .collect()
            })
            .collect();
        Self {
            id: inst.id.clone(),
            entities: inst.entities.iter().map(|e| e.name.clone()).collect(),
            rows,
        }
    }

    /// The instance's gold grid.
    pub fn gold(inst: &ProcessInstance) -> Self {
        Self::from_grid(inst, &inst.gold)
    }

    pub fn num_steps(&self) -> usize {
        self.rows.first().map_or(0, |r| r.len().saturating_sub(1))
    }

    pub fn events(&self) -> EventSet {
        derive_events(&self.rows)
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Move {
    pub step: usize,
    pub from: ResolvedState,
    pub to: ResolvedState,
}

/// Events of one entity, each list ordered by step.
#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct EntityEvents {
    pub creations: Vec<usize>,
    pub destructions: Vec<usize>,
    pub moves: Vec<Move>,
}

impl EntityEvents {
    pub fn is_empty(&self) -> bool {
        self.creations.is_empty() && self.destructions.is_empty() && self.moves.is_empty()
    }

    /// Every event as `(step, kind)`, by step.
    pub fn all(&self) -> Vec<(usize, EventKind)> {
        let mut out: Vec<(usize, EventKind)> = self
            .creations
            .iter()
            .map(|&s| (s, EventKind::Create))
            .chain(self.destructions.iter().map(|&s| (s, EventKind::Destroy)))
            .chain(self.moves.iter().map(|m| (m.step, EventKind::Move)))
            .collect();
        out.sort();
        out
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum EventKind {
    Create,
    Destroy,
    Move,
}

#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct EventSet {
    pub entities: Vec<EntityEvents>,
}

pub fn derive_row_events(row: &[ResolvedState]) -> EntityEvents {
    let mut ev = EntityEvents::default();
    for t in 1..row.len() {
        let (before, after) = (&row[t - 1], &row[t]);
        match (before.exists(), after.exists()) {
            (false, true) => ev.creations.push(t),
            (true, false) => ev.destructions.push(t),
            (true, true) if before != after => ev.moves.push(Move {
                step: t,
                from: before.clone(),
                to: after.clone(),
            }),
            _ => {}
        }
    }
    ev
}

/// Creation at `t` when `t-1` is nowhere and `t` is not, destruction for the
/// reverse, and a move when both exist and differ.
pub fn derive_events(rows: &[Vec<ResolvedState>]) -> EventSet {
    EventSet {
        entities: rows.iter().map(|r| derive_row_events(r)).collect(),
    }
}
