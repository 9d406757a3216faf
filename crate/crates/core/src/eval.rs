//! Sentence-level (Task 1) and document-level (Task 2) scorers and the
//! commonsense-violation counter.

use std::collections::{BTreeMap, HashSet};
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::corpus::ProcessInstance;
use crate::pipeline::{EntityEvents, EventKind, ResolvedGrid, ResolvedState};
use crate::{Error, Result};

/// Pairs each gold grid with the prediction of the same id, and each gold
/// entity with the predicted row of the same name.
fn align<'a>(preds: &'a [ResolvedGrid], golds: &'a [ResolvedGrid]) -> Result<Vec<(&'a ResolvedGrid, &'a ResolvedGrid, Vec<usize>)>> {
    let by_id: BTreeMap<&str, &ResolvedGrid> = preds.iter().map(|p| (p.id.as_str(), p)).collect();
    if by_id.len() != preds.len() {
        return Err(Error::Eval("duplicate process ids in predictions".into()));
    }
    let gold_ids: HashSet<&str> = golds.iter().map(|g| g.id.as_str()).collect();
    if let Some(extra) = preds.iter().find(|p| !gold_ids.contains(p.id.as_str())) {
        return Err(Error::Eval(format!("prediction for unknown process `{}`", extra.id)));
    }
    golds
        .iter()
        .map(|g| {
            let p = by_id
                .get(g.id.as_str())
                .ok_or_else(|| Error::Eval(format!("no prediction for process `{}`", g.id)))?;
            if p.entities.len() != g.entities.len() {
                return Err(Error::Eval(format!("`{}`: entity sets differ", g.id)));
            }
            let map = g
                .entities
                .iter()
                .map(|name| {
                    p.entities
                        .iter()
                        .position(|n| n == name)
                        .ok_or_else(|| Error::Eval(format!("`{}`: no prediction for entity `{name}`", g.id)))
                })
                .collect::<Result<Vec<_>>>()?;
            if p.num_steps() != g.num_steps() {
                return Err(Error::Eval(format!(
                    "`{}`: {} predicted steps for {} gold steps",
                    g.id,
                    p.num_steps(),
                    g.num_steps()
                )));
            }
            Ok((*p, g, map))
        })
        .collect()
}

fn pct(correct: usize, asked: usize) -> f64 {
    if asked == 0 {
        100.0
    } else {
        100.0 * correct as f64 / asked as f64
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct QuestionScore {
    pub question: String,
    pub category: u8,
    pub correct: usize,
    pub asked: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Task1Report {
    pub cat1: f64,
    pub cat2: f64,
    pub cat3: f64,
    pub macro_avg: f64,
    pub micro: f64,
    pub questions: Vec<QuestionScore>,
}

pub const TASK1_QUESTIONS: [(&str, u8); 10] = [
    ("is created", 1),
    ("is destroyed", 1),
    ("is moved", 1),
    ("when created", 2),
    ("when destroyed", 2),
    ("when moved", 2),
    ("where created", 3),
    ("where destroyed", 3),
    ("moved from", 3),
    ("moved to", 3),
];

/// Per-question outcome for one entity: `None` when not asked.
fn entity_answers(
    pred_row: &[ResolvedState],
    pred: &EntityEvents,
    gold_row: &[ResolvedState],
    gold: &EntityEvents,
) -> [Option<bool>; 10] {
    let created_at = |row: &[ResolvedState], ev: &EntityEvents| -> Vec<ResolvedState> {
        ev.creations.iter().map(|&t| row[t].clone()).collect()
    };
    let destroyed_from = |row: &[ResolvedState], ev: &EntityEvents| -> Vec<ResolvedState> {
        ev.destructions.iter().map(|&t| row[t - 1].clone()).collect()
    };
    let steps = |ev: &EntityEvents| -> Vec<usize> { ev.moves.iter().map(|m| m.step).collect() };
    let froms = |ev: &EntityEvents| -> Vec<ResolvedState> { ev.moves.iter().map(|m| m.from.clone()).collect() };
    let tos = |ev: &EntityEvents| -> Vec<ResolvedState> { ev.moves.iter().map(|m| m.to.clone()).collect() };
    let (gc, gd, gm) = (!gold.creations.is_empty(), !gold.destructions.is_empty(), !gold.moves.is_empty());
    [
        Some(gc == !pred.creations.is_empty()),
        Some(gd == !pred.destructions.is_empty()),
        Some(gm == !pred.moves.is_empty()),
        gc.then(|| gold.creations == pred.creations),
        gd.then(|| gold.destructions == pred.destructions),
        gm.then(|| steps(gold) == steps(pred)),
        gc.then(|| created_at(gold_row, gold) == created_at(pred_row, pred)),
        gd.then(|| destroyed_from(gold_row, gold) == destroyed_from(pred_row, pred)),
        gm.then(|| froms(gold) == froms(pred)),
        gm.then(|| tos(gold) == tos(pred)),
    ]
}

/// Ten questions per entity: three yes/no questions always, then the
/// step and location questions for each event kind the gold grid has.
/// Answers must match exactly; a category with no questions scores 100.
pub fn score_task1(preds: &[ResolvedGrid], golds: &[ResolvedGrid]) -> Result<Task1Report> {
    let mut correct = [0usize; 10];
    let mut asked = [0usize; 10];
    for (p, g, map) in align(preds, golds)? {
        let pe = p.events();
        let ge = g.events();
        for (gi, &pi) in map.iter().enumerate() {
            let answers = entity_answers(&p.rows[pi], &pe.entities[pi], &g.rows[gi], &ge.entities[gi]);
            for (k, a) in answers.iter().enumerate() {
                if let Some(ok) = a {
                    asked[k] += 1;
                    correct[k] += *ok as usize;
                }
            }
        }
    }
    let cat = |c: u8| {
        let idx: Vec<usize> = (0..10).filter(|&k| TASK1_QUESTIONS[k].1 == c).collect();
        pct(idx.iter().map(|&k| correct[k]).sum(), idx.iter().map(|&k| asked[k]).sum())
    };
    let (cat1, cat2, cat3) = (cat(1), cat(2), cat(3));
    Ok(Task1Report {
        cat1,
        cat2,
        cat3,
        macro_avg: (cat1 + cat2 + cat3) / 3.0,
        micro: pct(correct.iter().sum(), asked.iter().sum()),
        questions: TASK1_QUESTIONS
            .iter()
            .enumerate()
            .map(|(k, (q, c))| QuestionScore {
                question: q.to_string(),
                category: *c,
                correct: correct[k],
                asked: asked[k],
            })
            .collect(),
    })
}

impl fmt::Display for Task1Report {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "{:<18} {:>4} {:>8} {:>6} {:>8}", "question", "cat", "correct", "asked", "acc")?;
        for q in &self.questions {
            writeln!(
                f,
                "{:<18} {:>4} {:>8} {:>6} {:>8.2}",
                q.question,
                q.category,
                q.correct,
                q.asked,
                pct(q.correct, q.asked)
            )?;
        }
        writeln!(f)?;
        writeln!(f, "Cat1   {:>7.2}", self.cat1)?;
        writeln!(f, "Cat2   {:>7.2}", self.cat2)?;
        writeln!(f, "Cat3   {:>7.2}", self.cat3)?;
        writeln!(f, "macro  {:>7.2}", self.macro_avg)?;
        write!(f, "micro  {:>7.2}", self.micro)
    }
}

/// Document-level answer tuples, keyed by process id.
#[derive(Clone, Debug, PartialEq, Eq, Hash)]
enum Tuple {
    Input(String, String),
    Output(String, String),
    Conversion(String, Vec<String>, Vec<String>, usize),
    Move(String, String, usize, ResolvedState, ResolvedState),
}

const FAMILIES: [&str; 4] = ["inputs", "outputs", "conversions", "moves"];

fn family(t: &Tuple) -> usize {
    match t {
        Tuple::Input(..) => 0,
        Tuple::Output(..) => 1,
        Tuple::Conversion(..) => 2,
        Tuple::Move(..) => 3,
    }
}

fn tuples(g: &ResolvedGrid) -> HashSet<Tuple> {
    let ev = g.events();
    let last = g.num_steps();
    let mut out = HashSet::new();
    let mut created: BTreeMap<usize, Vec<String>> = BTreeMap::new();
    let mut destroyed: BTreeMap<usize, Vec<String>> = BTreeMap::new();
    for ((name, row), e) in g.entities.iter().zip(&g.rows).zip(&ev.entities) {
        if row[0].exists() && !row[last].exists() {
            out.insert(Tuple::Input(g.id.clone(), name.clone()));
        }
        if row[last].exists() && !e.creations.is_empty() {
            out.insert(Tuple::Output(g.id.clone(), name.clone()));
        }
        for &t in &e.creations {
            created.entry(t).or_default().push(name.clone());
        }
        for &t in &e.destructions {
            destroyed.entry(t).or_default().push(name.clone());
        }
        for m in &e.moves {
            out.insert(Tuple::Move(g.id.clone(), name.clone(), m.step, m.from.clone(), m.to.clone()));
        }
    }
    for (t, mut c) in created {
        if let Some(d) = destroyed.get_mut(&t) {
            c.sort();
            d.sort();
            out.insert(Tuple::Conversion(g.id.clone(), c, d.clone(), t));
        }
    }
    out
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct FamilyCounts {
    pub family: String,
    pub predicted: usize,
    pub gold: usize,
    pub matched: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Task2Report {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub families: Vec<FamilyCounts>,
}

/// Precision, recall and F1 of exact tuple matches over the corpus. With no
/// predicted tuples precision is 0, unless gold is empty too, in which case
/// every score is 100.
pub fn prf(matched: usize, predicted: usize, gold: usize) -> (f64, f64, f64) {
    if predicted == 0 && gold == 0 {
        return (100.0, 100.0, 100.0);
    }
    let p = if predicted == 0 { 0.0 } else { 100.0 * matched as f64 / predicted as f64 };
    let r = if gold == 0 { 100.0 } else { 100.0 * matched as f64 / gold as f64 };
    let f = if p + r == 0.0 { 0.0 } else { 2.0 * p * r / (p + r) };
    (p, r, f)
}

pub fn score_task2(preds: &[ResolvedGrid], golds: &[ResolvedGrid]) -> Result<Task2Report> {
    let mut counts = [(0usize, 0usize, 0usize); 4];
    for (p, g, _) in align(preds, golds)? {
        let pt = tuples(p);
        let gt = tuples(g);
        for t in &pt {
            counts[family(t)].0 += 1;
            if gt.contains(t) {
                counts[family(t)].2 += 1;
            }
        }
        for t in &gt {
            counts[family(t)].1 += 1;
        }
    }
    let (pr, go, ma) = counts
        .iter()
        .fold((0, 0, 0), |acc, c| (acc.0 + c.0, acc.1 + c.1, acc.2 + c.2));
    let (precision, recall, f1) = prf(ma, pr, go);
    Ok(Task2Report {
        precision,
        recall,
        f1,
        families: FAMILIES
            .iter()
            .zip(counts)
            .map(|(name, (predicted, gold, matched))| FamilyCounts {
                family: name.to_string(),
                predicted,
                gold,
                matched,
            })
            .collect(),
    })
}

impl fmt::Display for Task2Report {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "{:<12} {:>9} {:>6} {:>8} {:>8} {:>8}", "family", "predicted", "gold", "matched", "P", "R")?;
        for c in &self.families {
            let (p, r, _) = prf(c.matched, c.predicted, c.gold);
            writeln!(
                f,
                "{:<12} {:>9} {:>6} {:>8} {:>8.2} {:>8.2}",
                c.family, c.predicted, c.gold, c.matched, p, r
            )?;
        }
        writeln!(f)?;
        writeln!(f, "precision {:>7.2}", self.precision)?;
        writeln!(f, "recall    {:>7.2}", self.recall)?;
        write!(f, "F1        {:>7.2}", self.f1)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ViolationReport {
    /// Predicted create, destroy and move events.
    pub predictions: usize,
    /// Events breaking at least one rule.
    pub violations: usize,
    pub proportion: f64,
    /// Events breaking rule 1 (exists before moved or destroyed), rule 2 (not
    /// created while existing) and rule 3 (mentioned before changing).
    pub by_rule: [usize; 3],
}

/// Percentage of violating predictions, 0 when nothing was predicted.
pub fn violation_proportion(violations: usize, predictions: usize) -> f64 {
    if predictions == 0 {
        0.0
    } else {
        100.0 * violations as f64 / predictions as f64
    }
}

/// Checks every predicted event at step `t` against the gold existence of
/// the entity at `t - 1` (rules 1 and 2) and against its first mention
/// (rule 3: the first mention must be in sentences `1..=t`).
pub fn count_violations(preds: &[ResolvedGrid], golds: &[ProcessInstance]) -> Result<ViolationReport> {
    let gold_grids: Vec<ResolvedGrid> = golds.iter().map(ResolvedGrid::gold).collect();
    let aligned = align(preds, &gold_grids)?;
    let mut report = ViolationReport {
        predictions: 0,
        violations: 0,
        proportion: 0.0,
        by_rule: [0; 3],
    };
    for ((p, g, map), inst) in aligned.into_iter().zip(golds) {
        let pe = p.events();
        for (gi, &pi) in map.iter().enumerate() {
            let first_mention = inst.first_mention_step(gi);
            for (t, kind) in pe.entities[pi].all() {
                report.predictions += 1;
                let existed = g.rows[gi][t - 1].exists();
                let rules = [
                    matches!(kind, EventKind::Move | EventKind::Destroy) && !existed,
                    kind == EventKind::Create && existed,
                    first_mention.is_none_or(|m| m > t),
                ];
                for (k, broken) in rules.iter().enumerate() {
                    report.by_rule[k] += *broken as usize;
                }
                report.violations += rules.iter().any(|b| *b) as usize;
            }
        }
    }
    report.proportion = violation_proportion(report.violations, report.predictions);
    Ok(report)
}

impl fmt::Display for ViolationReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "state change predictions {:>6}", self.predictions)?;
        writeln!(f, "violations               {:>6}", self.violations)?;
        writeln!(f, "violation proportion     {:>6.2}%", self.proportion)?;
        write!(
            f,
            "by rule (exist / create / mention): {} / {} / {}",
            self.by_rule[0], self.by_rule[1], self.by_rule[2]
        )
    }
}
