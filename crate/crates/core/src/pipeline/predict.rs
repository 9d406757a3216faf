use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::io::Write;

use serde::{Deserialize, Serialize};

use super::events::{ResolvedGrid, ResolvedState};
use super::{run_process, Mode, Model};
use crate::corpus::{LocationGrid, LocationState, ProcessInstance};
use crate::mrc::StateClass;
use crate::tensor::Tape;
use crate::{Error, Result};

pub const TSV_HEADER: &str = "process_id\tstep\tentity\tclass\tspan_text";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PredCell {
    pub class: StateClass,
    pub probs: [f64; 3],
    pub span: Option<(usize, usize)>,
    pub text: Option<String>,
}

impl PredCell {
    pub fn state(&self) -> LocationState {
        match (self.class, self.span) {
            (StateClass::Nowhere, _) => LocationState::Nowhere,
            (StateClass::Span, Some((start, end))) => LocationState::Span { start, end },
            _ => LocationState::Somewhere,
        }
    }
}

/// Model output for one process, `N x (T + 1)`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PredictionGrid {
    pub id: String,
    pub entities: Vec<String>,
    pub cells: Vec<Vec<PredCell>>,
}

impl PredictionGrid {
    pub fn location_grid(&self) -> LocationGrid {
        LocationGrid::new(
            self.cells
                .iter()
                .map(|row| row.iter().map(PredCell::state).collect())
                .collect(),
        )
    }

    pub fn resolved(&self) -> ResolvedGrid {
        ResolvedGrid {
            id: self.id.clone(),
            entities: self.entities.clone(),
            rows: self
                .cells
                .iter()
                .map(|row| {
                    row.iter()
                        .map(|c| match (c.class, &c.text) {
                            (StateClass::Nowhere, _) => ResolvedState::Nowhere,
                            (StateClass::Span, Some(t)) => ResolvedState::location(t),
                            _ => ResolvedState::Somewhere,
                        })
                        .collect()
                })
                .collect(),
        }
    }
}

/// One entity's decision at one step.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Decision {
    pub entity: String,
    pub class: StateClass,
    pub span: Option<(usize, usize)>,
    pub text: Option<String>,
    pub probs: [f64; 3],
}

/// Graph internals and decisions after one sentence.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StepRecord {
    pub t: usize,
    pub sentence: String,
    pub decisions: Vec<Decision>,
    /// `N x N` row-major attention over the previous locations.
    pub attention: Option<Vec<f64>>,
    /// One gate value per entity.
    pub gate: Option<Vec<f64>>,
    /// `N x N` row-major within-step coreference.
    pub adjacency: Option<Vec<f64>>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Trace {
    pub id: String,
    pub entities: Vec<String>,
    /// Column 0.
    pub initial: Vec<Decision>,
    pub steps: Vec<StepRecord>,
}

fn cell_text(d: &Decision) -> String {
    match d.class {
        StateClass::Nowhere => "-".into(),
        StateClass::Somewhere => "?".into(),
        StateClass::Span => d.text.clone().unwrap_or_else(|| "?".into()),
    }
}

impl Trace {
    /// One row per sentence with each entity's location after it.
    pub fn render_table(&self) -> String {
        let mut header = vec!["sentence".to_string()];
        header.extend(self.entities.iter().cloned());
        let mut rows = vec![header];
        let mut first = vec!["(before)".to_string()];
        first.extend(self.initial.iter().map(cell_text));
        rows.push(first);
        for s in &self.steps {
            let mut r = vec![format!("{}. {}", s.t, s.sentence)];
            r.extend(s.decisions.iter().map(cell_text));
            rows.push(r);
        }
        let widths: Vec<usize> = (0..rows[0].len())
            .map(|k| rows.iter().map(|r| r[k].chars().count()).max().unwrap_or(0))
            .collect();
        let mut out = String::new();
        for (n, r) in rows.iter().enumerate() {
            let line: Vec<String> = r
                .iter()
                .zip(&widths)
                .map(|(c, w)| format!("{c:<w$}"))
                .collect();
            let _ = writeln!(out, "{}", line.join(" | ").trim_end());
            if n == 0 {
                let rule: Vec<String> = widths.iter().map(|w| "-".repeat(*w)).collect();
                let _ = writeln!(out, "{}", rule.join("-+-"));
            }
        }
        out
    }
}

/// Free-running prediction with dropout off.
pub fn predict_process(model: &Model, inst: &ProcessInstance) -> Result<(PredictionGrid, Trace)> {
    let tape = Tape::new();
    let fw = model.forward(&tape);
    let run = run_process(&fw, inst, Mode::Free)?;
    let names: Vec<String> = inst.entities.iter().map(|e| e.name.clone()).collect();
    let cells: Vec<Vec<PredCell>> = run
        .predictions
        .iter()
        .map(|row| {
            row.iter()
                .map(|p| PredCell {
                    class: p.class,
                    probs: p.probs,
                    span: p.span,
                    text: p.span.map(|(s, e)| inst.span_text(s, e)),
                })
                .collect()
        })
        .collect();
    let decisions = |t: usize| -> Vec<Decision> {
        cells
            .iter()
            .zip(&names)
            .map(|(row, name)| Decision {
                entity: name.clone(),
                class: row[t].class,
                span: row[t].span,
                text: row[t].text.clone(),
                probs: row[t].probs,
            })
            .collect()
    };
    let steps = (1..=inst.num_steps())
        .map(|t| {
            let nodes = run.steps.iter().find(|s| s.t == t);
            StepRecord {
                t,
                sentence: inst.sentence_text(t),
                decisions: decisions(t),
                attention: nodes.and_then(|s| s.attention.clone()),
                gate: nodes.and_then(|s| s.gate.clone()),
                adjacency: nodes.map(|s| s.adjacency.clone()),
            }
        })
        .collect();
    let trace = Trace {
        id: inst.id.clone(),
        entities: names.clone(),
        initial: decisions(0),
        steps,
    };
    Ok((
        PredictionGrid {
            id: inst.id.clone(),
            entities: names,
            cells,
        },
        trace,
    ))
}

pub fn predict_corpus(model: &Model, corpus: &[ProcessInstance]) -> Result<Vec<PredictionGrid>> {
    corpus.iter().map(|inst| Ok(predict_process(model, inst)?.0)).collect()
}

/// Writes the TSV dump, header first.
pub fn write_predictions<W: Write>(w: &mut W, grids: &[ResolvedGrid]) -> Result<()> {
    writeln!(w, "{TSV_HEADER}")?;
    for g in grids {
        for (name, row) in g.entities.iter().zip(&g.rows) {
            for (t, s) in row.iter().enumerate() {
                let (class, text) = match s {
                    ResolvedState::Nowhere => ("nowhere", "-"),
                    ResolvedState::Somewhere => ("somewhere", "?"),
                    ResolvedState::Location(l) => ("span", l.as_str()),
                };
                writeln!(w, "{}\t{t}\t{name}\t{class}\t{text}", g.id)?;
            }
        }
    }
    Ok(())
}

/// Parses a TSV dump into grids ordered by id.
pub fn read_predictions_str(text: &str) -> Result<Vec<ResolvedGrid>> {
    // id -> entity order, entity -> step -> state
    let mut by_id: BTreeMap<String, (Vec<String>, BTreeMap<String, BTreeMap<usize, ResolvedState>>)> = BTreeMap::new();
    for (k, line) in text.lines().enumerate() {
        if line.trim().is_empty() || (k == 0 && line.starts_with("process_id")) {
            continue;
        }
        let bad = |msg: String| Error::Eval(format!("prediction line {}: {msg}", k + 1));
        let f: Vec<&str> = line.split('\t').collect();
        if f.len() != 5 {
            return Err(bad(format!("expected 5 tab-separated fields, got {}", f.len())));
        }
        let step: usize = f[1].trim().parse().map_err(|_| bad(format!("bad step `{}`", f[1])))?;
        let class = StateClass::parse(f[3]).ok_or_else(|| bad(format!("bad class `{}`", f[3])))?;
        let state = match class {
            StateClass::Nowhere => ResolvedState::Nowhere,
            StateClass::Somewhere => ResolvedState::Somewhere,
            StateClass::Span => ResolvedState::location(f[4]),
        };
        let (order, cells) = by_id.entry(f[0].to_string()).or_default();
        let entity = f[2].to_string();
        if !cells.contains_key(&entity) {
            order.push(entity.clone());
        }
        if cells.entry(entity).or_default().insert(step, state).is_some() {
            return Err(bad(format!("duplicate cell for `{}` step {step}", f[2])));
        }
    }
    by_id
        .into_iter()
        .map(|(id, (order, mut cells))| {
            let mut rows = Vec::with_capacity(order.len());
            let mut width = None;
            for name in &order {
                let steps = cells.remove(name).unwrap_or_default();
                let n = steps.len();
                if steps.keys().copied().ne(0..n) {
                    return Err(Error::Eval(format!("`{id}`/`{name}`: steps are not 0..{}", n.saturating_sub(1))));
                }
                if *width.get_or_insert(n) != n {
                    return Err(Error::Eval(format!("`{id}`: entities have different step counts")));
                }
                rows.push(steps.into_values().collect());
            }
            Ok(ResolvedGrid {
                id,
                entities: order,
                rows,
            })
        })
        .collect()
}

pub fn read_predictions(path: impl AsRef<std::path::Path>) -> Result<Vec<ResolvedGrid>> {
    read_predictions_str(&std::fs::read_to_string(path)?)
}
