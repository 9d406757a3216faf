//! Model assembly, the per-process read/update loop, training and
//! prediction.

mod checkpoint;
mod events;
mod predict;
mod train;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::config::ModelConfig;
use crate::corpus::{EmbeddingTable, LocationState, ProcessInstance, Vocab};
use crate::encoder::{self, Step};
use crate::forward::Forward;
use crate::graph::{self, GraphWeights};
use crate::mrc::{self, StateClass, StatePrediction};
use crate::tensor::{ParamSet, Tape, Var};
use crate::{Error, Result};

pub use checkpoint::{sidecar_path, Sidecar, EMBEDDINGS_TENSOR};
pub use events::{
    derive_events, derive_row_events, normalize_location, EntityEvents, EventKind, EventSet, Move, ResolvedGrid,
    ResolvedState,
};
pub use predict::{
    predict_corpus, predict_process, read_predictions, read_predictions_str, write_predictions, PredCell,
    PredictionGrid, StepRecord, Trace, TSV_HEADER,
};
pub use train::{
    evaluate_dev, teacher_forced_step, train, EpochMetrics, TrainConfig, TrainOutcome, METRICS_HEADER,
};

/// Parameters plus everything needed to run them.
#[derive(Clone, Debug)]
pub struct Model {
    pub config: ModelConfig,
    pub params: ParamSet,
    pub vocab: Vocab,
    pub embeddings: EmbeddingTable,
}

/// Registers every parameter the configuration uses, drawn from `seed`.
pub fn init_params(config: &ModelConfig, seed: u64) -> Result<ParamSet> {
    config.validate().map_err(Error::Config)?;
    let mut params = ParamSet::new();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    encoder::init_params(&mut params, config, &mut rng)?;
    mrc::init_params(&mut params, config, &mut rng)?;
    graph::init_params(&mut params, config, &mut rng)?;
    Ok(params)
}

impl Model {
    pub fn new(config: ModelConfig, vocab: Vocab, embeddings: EmbeddingTable, seed: u64) -> Result<Self> {
        if embeddings.dim() != config.embed_dim {
            return Err(Error::Config(format!(
                "embeddings are {}-dimensional but embed_dim is {}",
                embeddings.dim(),
                config.embed_dim
            )));
        }
        Ok(Self {
            params: init_params(&config, seed)?,
            config,
            vocab,
            embeddings,
        })
    }

    /// A model over a corpus with seeded random word vectors.
    pub fn for_corpus(config: ModelConfig, corpus: &[ProcessInstance], seed: u64) -> Result<Self> {
        let vocab = Vocab::from_corpus(corpus);
        let embeddings = EmbeddingTable::random(&vocab, config.embed_dim, seed ^ 0x5eed);
        Self::new(config, vocab, embeddings, seed)
    }

    pub fn forward<'a>(&'a self, tape: &'a Tape) -> Forward<'a> {
        Forward::eval(tape, &self.params, &self.config, &self.embeddings)
    }
}

/// How the loop feeds the graph.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Mode {
    /// Gold location vectors update the graph and the loss is recorded.
    TeacherForced,
    /// Predicted location vectors update the graph.
    Free,
}

/// Graph quantities of one step, copied off the tape.
#[derive(Clone, Debug, PartialEq)]
pub struct StepNodesData {
    pub t: usize,
    pub attention: Option<Vec<f64>>,
    pub gate: Option<Vec<f64>>,
    pub adjacency: Vec<f64>,
}

/// Output of [`run_process`].
#[derive(Debug)]
pub struct ProcessRun {
    /// `N x (T + 1)` reader outputs.
    pub predictions: Vec<Vec<StatePrediction>>,
    /// Location vector that entered the graph, per step `1..=T` and entity.
    pub psi: Vec<Vec<Var>>,
    pub steps: Vec<StepNodesData>,
    /// Summed loss over all cells (teacher-forced mode only).
    pub loss: Option<Var>,
}

fn view_for(config: &ModelConfig, col: usize) -> Step {
    match col {
        0 => Step::Initial,
        t if config.ablation.mrc_only_paragraph => Step::Paragraph(t),
        t => Step::Prefix(t),
    }
}

/// Reads every entity at every column, updating the graph after each
/// sentence. Column 0 only queries; it never updates the graph.
pub fn run_process(fw: &Forward, inst: &ProcessInstance, mode: Mode) -> Result<ProcessRun> {
    let tape = fw.tape;
    let n = inst.num_entities();
    let steps = inst.num_steps();
    let all: Vec<usize> = (0..n).collect();
    let questions = inst
        .entities
        .iter()
        .map(|e| Ok(mrc::encode_question(fw, &mrc::make_question(&e.name))?.vector))
        .collect::<Result<Vec<_>>>()?;

    let full = encoder::encode(fw, inst, Step::Prefix(steps), &all)?;
    let nu = encoder::initial_entities(fw, inst, &full)?;
    let weights = if fw.config.ablation.has_graph() {
        Some(GraphWeights::bind(fw)?)
    } else {
        None
    };
    let mut state = match &weights {
        Some(w) => Some(graph::init_graph(tape, nu, w.specials.somewhere, graph::carry_layers(fw.config))?),
        None => None,
    };
    let (span_w, span_b) = (fw.p("enc.span.w")?, fw.p("enc.span.b")?);

    let mut predictions: Vec<Vec<StatePrediction>> = vec![Vec::with_capacity(steps + 1); n];
    let mut psi_log = Vec::with_capacity(steps);
    let mut trace = Vec::with_capacity(steps);
    let mut loss_terms: Vec<Var> = Vec::new();

    for col in 0..=steps {
        let view = view_for(fw.config, col);
        let enc = if col == steps { full.clone() } else { encoder::encode(fw, inst, view, &all)? };
        let entities = match &state {
            Some(g) => g.entities,
            None => nu,
        };
        let mut psis = Vec::with_capacity(n);
        for i in 0..n {
            let ctx = enc.per_entity[i];
            let e_prev = tape.row(entities, i)?;
            let free_specials = match (&weights, mode, col) {
                (Some(w), Mode::Free, c) if c > 0 => Some(w.specials),
                _ => None,
            };
            let out = mrc::read(fw, ctx, questions[i], e_prev, free_specials)?;
            if mode == Mode::TeacherForced {
                let gold = inst.gold.get(i, col);
                let class = StateClass::of(&gold);
                loss_terms.push(tape.pick(out.class_log_probs, 0, class.index())?);
                if let LocationState::Span { start, end } = gold {
                    if end < enc.prefix_len {
                        loss_terms.push(tape.pick(out.start_log_probs, 0, start)?);
                        loss_terms.push(tape.pick(out.end_log_probs, 0, end)?);
                    }
                }
                if let (Some(w), true) = (&weights, col > 0) {
                    psis.push(match gold {
                        LocationState::Nowhere => w.specials.nowhere,
                        LocationState::Span { start, end } if end < enc.prefix_len => {
                            encoder::span_projection(tape, ctx, start, end, span_w, span_b)?
                        }
                        _ => w.specials.somewhere,
                    });
                }
            } else if let Some(p) = out.psi {
                psis.push(p);
            }
            predictions[i].push(out.prediction);
        }
        if let (Some(w), Some(g), true) = (&weights, &state, col > 0) {
            let psi = tape.concat_rows(&psis)?;
            let (next, nodes) = graph::graph_step(fw, g, psi, w)?;
            trace.push(StepNodesData {
                t: col,
                attention: nodes.attention.map(|v| tape.data(v)),
                gate: nodes.gate.map(|v| tape.data(v)),
                adjacency: tape.data(nodes.adjacency),
            });
            state = Some(next);
            psi_log.push(psis);
        }
    }

    let loss = if loss_terms.is_empty() {
        None
    } else {
        let stacked = tape.concat_rows(&loss_terms)?;
        Some(tape.scale(tape.sum(stacked), -1.0))
    };
    Ok(ProcessRun {
        predictions,
        psi: psi_log,
        steps: trace,
        loss,
    })
}
