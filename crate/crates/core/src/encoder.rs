//! Contextual encoding of paragraph prefixes and span projections.

use std::ops::Range;

use rand::Rng;

use crate::config::ModelConfig;
use crate::corpus::ProcessInstance;
use crate::forward::Forward;
use crate::mrc::make_question;
use crate::tensor::{bilstm_encode, BiLstmLayer, ParamSet, Tape, Var};
use crate::{Error, Result};

/// Which view of the paragraph the reader sees.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Step {
    /// Column 0: sentence 1 with the initial-step marker set and no
    /// current sentence.
    Initial,
    /// Sentences `1..=t`, sentence `t` flagged as current.
    Prefix(usize),
    /// Every sentence, sentence `t` flagged as current.
    Paragraph(usize),
}

impl Step {
    /// Grid column this view answers for.
    pub fn column(self) -> usize {
        match self {
            Step::Initial => 0,
            Step::Prefix(t) | Step::Paragraph(t) => t,
        }
    }
}

/// Context vectors of one prefix, one `P x 2H` matrix per queried entity.
/// Rows differ between entities only through the exact-match feature.
#[derive(Clone, Debug)]
pub struct ContextEncoding {
    pub per_entity: Vec<Var>,
    pub prefix_len: usize,
    pub t: usize,
}

struct View {
    len: usize,
    current: Option<Range<usize>>,
    initial: bool,
}

fn view(inst: &ProcessInstance, step: Step) -> Result<View> {
    let max = inst.num_steps();
    let check = |t: usize| {
        if t == 0 || t > max {
            Err(Error::StepOutOfRange { t, max })
        } else {
            Ok(())
        }
    };
    Ok(match step {
        Step::Initial => View {
            len: inst.prefix_len(1),
            current: None,
            initial: true,
        },
        Step::Prefix(t) => {
            check(t)?;
            View {
                len: inst.prefix_len(t),
                current: Some(inst.sentences[t - 1].clone()),
                initial: false,
            }
        }
        Step::Paragraph(t) => {
            check(t)?;
            View {
                len: inst.tokens.len(),
                current: Some(inst.sentences[t - 1].clone()),
                initial: false,
            }
        }
    })
}

pub fn init_params<R: Rng + ?Sized>(params: &mut ParamSet, config: &ModelConfig, rng: &mut R) -> Result<()> {
    let mut input = config.token_input_dim();
    for l in 0..config.encoder_layers {
        BiLstmLayer::init(params, &format!("enc.lstm.{l}"), input, config.hidden, rng)?;
        input = config.context_dim();
    }
    let span_in = 2 * config.context_dim();
    params.insert_uniform("enc.span.w", vec![span_in, config.node_dim], span_in, rng)?;
    params.insert_zeros("enc.span.b", vec![1, config.node_dim])?;
    params.insert_uniform("enc.fallback.w", vec![config.embed_dim, config.node_dim], config.embed_dim, rng)?;
    params.insert_zeros("enc.fallback.b", vec![1, config.node_dim])?;
    Ok(())
}

/// Builds the token inputs for the queried entities, `entities[b]` giving
/// row `b`, and runs the paragraph encoder over them.
pub fn encode(fw: &Forward, inst: &ProcessInstance, step: Step, entities: &[usize]) -> Result<ContextEncoding> {
    let v = view(inst, step)?;
    if entities.is_empty() {
        return Err(Error::Config("no entities to encode for".into()));
    }
    let questions: Vec<Vec<String>> = entities
        .iter()
        .map(|&i| make_question(&inst.entities[i].name))
        .collect();
    let dim = fw.config.token_input_dim();
    let emb = fw.embeddings.dim();
    if emb != fw.config.embed_dim {
        return Err(Error::Config(format!(
            "embedding width {emb} differs from configured {}",
            fw.config.embed_dim
        )));
    }
    let batch = entities.len();
    let mut inputs = Vec::with_capacity(v.len);
    for j in 0..v.len {
        let word = &inst.tokens[j];
        let vector = fw.embeddings.lookup(word);
        let current = v.current.as_ref().is_some_and(|r| r.contains(&j));
        let mut data = Vec::with_capacity(batch * dim);
        for q in &questions {
            data.extend_from_slice(vector);
            data.push(if q.contains(word) { 1.0 } else { 0.0 });
            data.push(if current { 1.0 } else { 0.0 });
            data.push(if v.initial { 1.0 } else { 0.0 });
        }
        inputs.push(fw.tape.constant(batch, dim, data)?);
    }
    let layers = (0..fw.config.encoder_layers)
        .map(|l| BiLstmLayer::bind(fw.tape, fw.params, &format!("enc.lstm.{l}")))
        .collect::<std::result::Result<Vec<_>, _>>()?;
    let p = fw.config.dropout_recurrent;
    let outputs = fw.with_rng(|rng| match rng {
        Some(rng) => bilstm_encode(fw.tape, &inputs, &layers, Some((p, rng))),
        None => bilstm_encode(fw.tape, &inputs, &layers, None),
    })?;
    let per_entity = (0..batch)
        .map(|b| fw.tape.gather_row(&outputs, b))
        .collect::<std::result::Result<Vec<_>, _>>()?;
    Ok(ContextEncoding {
        per_entity,
        prefix_len: v.len,
        t: step.column(),
    })
}

/// Encodes sentences `1..=t` for the given entities.
pub fn encode_prefix(fw: &Forward, inst: &ProcessInstance, t: usize, entities: &[usize]) -> Result<ContextEncoding> {
    encode(fw, inst, Step::Prefix(t), entities)
}

/// `[c_start; c_end] W + b` for a `P x 2H` context matrix.
pub fn span_projection(tape: &Tape, context: Var, start: usize, end: usize, w: Var, b: Var) -> Result<Var> {
    let prefix_len = tape.dims(context).0;
    if start > end || end >= prefix_len {
        return Err(Error::SpanOutsidePrefix { start, end, prefix_len });
    }
    let pair = tape.concat_cols(&[tape.row(context, start)?, tape.row(context, end)?])?;
    Ok(tape.add_row(tape.matmul(pair, w)?, b)?)
}

/// Sum of the projections of every mention that ends inside the prefix;
/// `None` when no mention does.
pub fn entity_init(tape: &Tape, context: Var, mentions: &[(usize, usize)], w: Var, b: Var) -> Result<Option<Var>> {
    let prefix_len = tape.dims(context).0;
    let mut acc: Option<Var> = None;
    for &(s, e) in mentions.iter().filter(|&&(_, e)| e < prefix_len) {
        let p = span_projection(tape, context, s, e, w, b)?;
        acc = Some(match acc {
            Some(a) => tape.add(a, p)?,
            None => p,
        });
    }
    Ok(acc)
}

/// Learned stand-in for entities never mentioned: a projection of the mean
/// word vector of the entity name.
pub fn fallback_init(fw: &Forward, name_tokens: &[String]) -> Result<Var> {
    let dim = fw.embeddings.dim();
    let mut mean = vec![0.0; dim];
    for t in name_tokens {
        for (m, x) in mean.iter_mut().zip(fw.embeddings.lookup(t)) {
            *m += x / name_tokens.len().max(1) as f64;
        }
    }
    let x = fw.tape.constant(1, dim, mean)?;
    fw.linear(x, "enc.fallback.w", "enc.fallback.b")
}

/// Initial entity vectors `N x d` from a full-paragraph encoding whose rows
/// follow entity order.
pub fn initial_entities(fw: &Forward, inst: &ProcessInstance, enc: &ContextEncoding) -> Result<Var> {
    let w = fw.p("enc.span.w")?;
    let b = fw.p("enc.span.b")?;
    let mut rows = Vec::with_capacity(inst.num_entities());
    for (i, entity) in inst.entities.iter().enumerate() {
        let nu = match entity_init(fw.tape, enc.per_entity[i], &entity.mentions, w, b)? {
            Some(v) => v,
            None => {
                log::debug!(
                    "entity `{}` of `{}` is never mentioned; using the name embedding",
                    entity.name,
                    inst.id
                );
                fallback_init(fw, &entity.tokens)?
            }
        };
        rows.push(nu);
    }
    Ok(fw.tape.concat_rows(&rows)?)
}
